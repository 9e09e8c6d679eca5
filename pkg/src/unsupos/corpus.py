"""Corpus ingestion: word normalization, vocabulary building, vertical and
CoNLL-U readers.

Sentences keep both the raw surface form (capitalization checks need it) and
the digit-normalized form used everywhere else.  The vocabulary is built over
the training split only; words of other splits that are missing from it map
to a reserved out-of-vocabulary id equal to the vocabulary size.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_DIGIT_RUN = re.compile(r"[0-9]+")


class CorpusError(ValueError):
    """Raised for malformed corpus files."""


class EmptyCorpusError(CorpusError):
    """Raised when a corpus file contains no sentences."""


def normalize_word(word: str) -> str:
    """Collapse every maximal run of ASCII digits to a single "0".

    "75th" -> "0th", "12,345" -> "0,0".  Idempotent, and a no-op on words
    without digits.
    """
    if not word:
        raise CorpusError("empty word")
    return _DIGIT_RUN.sub("0", word)


@dataclass
class Vocabulary:
    """Dense word-type ids in first-occurrence order, with token counts."""

    types: list[str] = field(default_factory=list)
    type_to_id: dict[str, int] = field(default_factory=dict)
    counts: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.types)

    @property
    def oov_id(self) -> int:
        """Reserved id for word types absent from the vocabulary."""
        return len(self.types)

    def add(self, norm_word: str) -> int:
        wid = self.type_to_id.get(norm_word)
        if wid is None:
            wid = len(self.types)
            self.type_to_id[norm_word] = wid
            self.types.append(norm_word)
            self.counts.append(0)
        self.counts[wid] += 1
        return wid

    def lookup(self, norm_word: str) -> int:
        """Id of a normalized word type, or the reserved OOV id."""
        return self.type_to_id.get(norm_word, self.oov_id)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word, count in zip(self.types, self.counts):
                fh.write(f"{word}\t{count}\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise CorpusError(f"{path}:{lineno}: expected 'type<TAB>count'")
                word, count = parts
                vocab.type_to_id[word] = len(vocab.types)
                vocab.types.append(word)
                vocab.counts.append(int(count))
        return vocab


@dataclass
class TagSet:
    """Either a gold tag inventory (named) or an induced one (indexes only)."""

    size: int
    names: list[str] | None = None


@dataclass
class Sentence:
    words: list[str]
    norm_words: list[str]
    word_ids: list[int]
    gold_tags: list[int] | None = None

    def __post_init__(self) -> None:
        n = len(self.words)
        if n < 1:
            raise CorpusError("sentence must contain at least one token")
        if len(self.norm_words) != n or len(self.word_ids) != n:
            raise CorpusError("sentence field lengths differ")
        if self.gold_tags is not None and len(self.gold_tags) != n:
            raise CorpusError("gold tag count differs from token count")

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class Corpus:
    sentences: list[Sentence]
    vocab: Vocabulary
    gold_tagset: TagSet | None = None

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def __len__(self) -> int:
        return len(self.sentences)


def _finish_corpus(
    raw_sentences: list[tuple[list[str], list[str] | None]],
    path: str,
    vocab: Vocabulary | None,
    tag_ids: dict[str, int] | None,
) -> Corpus:
    if not raw_sentences:
        raise EmptyCorpusError(f"{path}: no sentences found")
    build_vocab = vocab is None
    if build_vocab:
        vocab = Vocabulary()
    has_tags = raw_sentences[0][1] is not None
    sentences = []
    for words, tags in raw_sentences:
        norm = [normalize_word(w) for w in words]
        if build_vocab:
            ids = [vocab.add(w) for w in norm]
        else:
            ids = [vocab.lookup(w) for w in norm]
        gold = None
        if has_tags:
            gold = []
            for t in tags:
                if t not in tag_ids:
                    tag_ids[t] = len(tag_ids)
                gold.append(tag_ids[t])
        sentences.append(Sentence(words, norm, ids, gold))
    tagset = None
    if has_tags:
        names = [None] * len(tag_ids)
        for name, tid in tag_ids.items():
            names[tid] = name
        tagset = TagSet(len(names), names)
    return Corpus(sentences, vocab, tagset)


def load_vertical(
    path: str,
    has_tags: bool = False,
    vocab: Vocabulary | None = None,
    tag_ids: dict[str, int] | None = None,
) -> Corpus:
    """Read a vertical-format corpus: one token per line, optionally followed
    by a tab and a tag; a blank line ends a sentence.

    With ``has_tags=False`` any extra columns are ignored.  ``vocab`` maps
    word types when given (other-split loading); otherwise a fresh vocabulary
    is built.  ``tag_ids`` lets several files share one tag id space; it is
    extended in place.
    """
    if has_tags and tag_ids is None:
        tag_ids = {}
    raw_sentences: list[tuple[list[str], list[str] | None]] = []
    words: list[str] = []
    tags: list[str] | None = [] if has_tags else None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if words:
                    raw_sentences.append((words, tags))
                    words = []
                    tags = [] if has_tags else None
                continue
            cols = line.split("\t")
            if not cols[0]:
                raise CorpusError(f"{path}:{lineno}: empty word field")
            if has_tags:
                if len(cols) < 2:
                    raise CorpusError(
                        f"{path}:{lineno}: expected 'word<TAB>tag', got {len(cols)} column(s)"
                    )
                tags.append(cols[1])
            words.append(cols[0])
    if words:
        raw_sentences.append((words, tags))
    return _finish_corpus(raw_sentences, path, vocab, tag_ids)


def load_conllu(
    path: str,
    vocab: Vocabulary | None = None,
    tag_ids: dict[str, int] | None = None,
) -> Corpus:
    """Read a CoNLL-U file keeping only FORM and UPOS columns.

    Comment lines, multiword-token ranges (``3-4``) and empty nodes
    (``8.1``) are skipped.
    """
    if tag_ids is None:
        tag_ids = {}
    raw_sentences: list[tuple[list[str], list[str]]] = []
    words: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if words:
                    raw_sentences.append((words, tags))
                    words, tags = [], []
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise CorpusError(
                    f"{path}:{lineno}: expected 10 tab-separated columns, got {len(cols)}"
                )
            token_id = cols[0]
            if "-" in token_id or "." in token_id:
                continue
            if not token_id.isdigit():
                raise CorpusError(f"{path}:{lineno}: bad token id {token_id!r}")
            if not cols[1]:
                raise CorpusError(f"{path}:{lineno}: empty FORM field")
            words.append(cols[1])
            tags.append(cols[3])
    if words:
        raw_sentences.append((words, tags))
    return _finish_corpus(raw_sentences, path, vocab, tag_ids)


def load_corpus(
    path: str,
    has_tags: bool = False,
    vocab: Vocabulary | None = None,
    tag_ids: dict[str, int] | None = None,
) -> Corpus:
    """Dispatch on extension: ``.conllu`` files go through the CoNLL-U
    reader, everything else through the vertical reader."""
    if path.endswith(".conllu"):
        return load_conllu(path, vocab=vocab, tag_ids=tag_ids)
    return load_vertical(path, has_tags=has_tags, vocab=vocab, tag_ids=tag_ids)


def write_vertical(
    path: str,
    sentences: list[Sentence],
    tags: list[list[int]] | None = None,
    tag_names: list[str] | None = None,
) -> None:
    """Write sentences in vertical format.  ``tags`` supplies one tag id per
    token (induced indexes are written as-is; ``tag_names`` maps ids to
    strings when given).  Without ``tags``, gold tags are written if present.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for si, sent in enumerate(sentences):
            sent_tags = tags[si] if tags is not None else sent.gold_tags
            for ti, word in enumerate(sent.words):
                if sent_tags is None:
                    fh.write(f"{word}\n")
                else:
                    tag = sent_tags[ti]
                    label = tag_names[tag] if tag_names is not None else str(tag)
                    fh.write(f"{word}\t{label}\n")
            fh.write("\n")
