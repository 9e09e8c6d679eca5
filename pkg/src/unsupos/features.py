"""Hand-crafted word features for the reconstruction side of the models.

Each word emits at most one feature per template: its (digit-normalized)
form, its character suffixes of length 1..3, and boolean indicators for
digits, hyphens and capitalization.  Feature strings are namespaced by
template ("Suf2=ed" and "Word=ed" stay distinct).  Features seen fewer than
``cutoff`` times in the training corpus (counted per token) collapse into a
per-template unknown id, which also absorbs unseen features at test time.

Two corpus modes exist.  "wsj" uses the capitalization template.  "ud" drops
it, maps punctuation-only word forms to Word=PUNCT plus an isPunct flag, and
optionally strips language-specific inflection endings before suffix
extraction.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .corpus import Corpus, Vocabulary

WSJ_TEMPLATES = ("Word", "Suf1", "Suf2", "Suf3", "HasDigit", "HasHyphen", "Cap")
UD_TEMPLATES = ("Word", "Suf1", "Suf2", "Suf3", "HasDigit", "HasHyphen", "isPunct")

LANGUAGES = ("de", "en", "es", "fr", "id", "it", "ja", "ko", "pt-br", "sv", "none")
# Only these languages have inflection-stripping rules; for the rest the
# stripper is the identity.
STRIP_LANGUAGES = frozenset({"de", "en", "es", "fr", "it", "pt-br"})

_UNK_PREFIX = "UNK:"


class FeatureError(ValueError):
    """Raised for invalid feature configurations or malformed index files."""


@dataclass(frozen=True)
class FeatureConfig:
    mode: str = "wsj"
    language: str = "none"
    cutoff: int = 50
    apply_language_suffix_rules: bool = True

    def __post_init__(self) -> None:
        if self.mode not in ("wsj", "ud"):
            raise FeatureError(f"unknown mode {self.mode!r}")
        if self.language not in LANGUAGES:
            raise FeatureError(f"unknown language {self.language!r}")
        if self.cutoff < 0:
            raise FeatureError("cutoff must be >= 0")

    @property
    def templates(self) -> tuple[str, ...]:
        return WSJ_TEMPLATES if self.mode == "wsj" else UD_TEMPLATES

    def fingerprint(self) -> str:
        return (
            f"mode={self.mode};language={self.language};cutoff={self.cutoff};"
            f"suffix_rules={int(self.apply_language_suffix_rules)}"
        )


def strip_inflection(word: str, language: str) -> str:
    """Strip a language-specific inflection ending before suffix extraction.

    it: drop the last character; de: drop the last two; fr/es/pt-br: drop two
    if the word ends in "s", else one; en: drop a trailing "s" only.  Never
    returns an empty string: if stripping would consume the whole word, the
    word is returned unchanged.  Languages without rules pass through.
    """
    if language == "it":
        k = 1
    elif language == "de":
        k = 2
    elif language in ("fr", "es", "pt-br"):
        k = 2 if word.endswith("s") else 1
    elif language == "en":
        k = 1 if word.endswith("s") else 0
    else:
        return word
    if k == 0 or k >= len(word):
        return word
    return word[:-k]


def _is_punct_only(word: str) -> bool:
    return all(unicodedata.category(ch).startswith("P") for ch in word)


def _flag(value: bool) -> str:
    return "yes" if value else "no"


def extract_features(raw_word: str, norm_word: str, config: FeatureConfig) -> list[str]:
    """Feature strings for one word, at most one per template.

    Suffix templates come from the (optionally inflection-stripped)
    normalized form; Suf_n is omitted when the form is shorter than n
    characters.  Capitalization inspects the raw form's first character.
    """
    punct = config.mode == "ud" and _is_punct_only(norm_word)
    feats = ["Word=" + ("PUNCT" if punct else norm_word)]
    suffix_form = norm_word
    if config.apply_language_suffix_rules and config.language in STRIP_LANGUAGES:
        suffix_form = strip_inflection(norm_word, config.language)
    for n in (1, 2, 3):
        if len(suffix_form) >= n:
            feats.append(f"Suf{n}={suffix_form[-n:]}")
    feats.append("HasDigit=" + _flag(any(ch.isdigit() for ch in norm_word)))
    feats.append("HasHyphen=" + _flag("-" in norm_word))
    if config.mode == "wsj":
        feats.append("Cap=" + _flag(raw_word[:1].isupper()))
    elif punct:
        feats.append("isPunct=yes")
    return feats


def template_of(feature_string: str) -> str:
    name, sep, _ = feature_string.partition("=")
    if not sep:
        raise FeatureError(f"feature string without template: {feature_string!r}")
    return name


@dataclass(frozen=True)
class FeatureVector:
    """Sorted distinct feature ids of one word type."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if list(self.ids) != sorted(set(self.ids)):
            raise FeatureError("feature ids must be sorted and distinct")


@dataclass
class FeatureIndex:
    """Dense feature ids: one reserved unknown id per template first, then
    every kept feature string in first-occurrence order."""

    config: FeatureConfig
    feat_to_id: dict[str, int] = field(default_factory=dict)
    unk_ids: dict[str, int] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    unk_counts: dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.unk_ids) + len(self.feat_to_id)

    def lookup(self, feature_string: str) -> int:
        fid = self.feat_to_id.get(feature_string)
        if fid is not None:
            return fid
        return self.unk_ids[template_of(feature_string)]


def build_feature_index(corpus: Corpus, config: FeatureConfig) -> FeatureIndex:
    """Count features per token over a training corpus and assign ids.

    Features occurring fewer than ``config.cutoff`` times map to their
    template's unknown id (with cutoff 0 nothing is collapsed).
    """
    counts: dict[str, int] = {}
    for sent in corpus.sentences:
        for raw, norm in zip(sent.words, sent.norm_words):
            for fs in extract_features(raw, norm, config):
                counts[fs] = counts.get(fs, 0) + 1
    index = FeatureIndex(config)
    for tmpl in config.templates:
        index.unk_ids[tmpl] = len(index.unk_ids)
        index.unk_counts[tmpl] = 0
    next_id = len(index.unk_ids)
    for fs, count in counts.items():
        if count >= config.cutoff:
            index.feat_to_id[fs] = next_id
            index.counts[fs] = count
            next_id += 1
        else:
            index.unk_counts[template_of(fs)] += count
    return index


def featurize_word(norm_word: str, index: FeatureIndex) -> FeatureVector:
    """Feature ids of one (normalized) word type; unseen features fall back
    to their template's unknown id."""
    feats = extract_features(norm_word, norm_word, index.config)
    return FeatureVector(tuple(sorted({index.lookup(fs) for fs in feats})))


def featurize_vocabulary(vocab: Vocabulary, index: FeatureIndex) -> list[FeatureVector]:
    """One FeatureVector per vocabulary type, aligned with type ids.

    Digit normalization preserves the case of the first character, so the
    normalized type stands in for the raw form here.
    """
    return [featurize_word(tp, index) for tp in vocab.types]


def vocabulary_feature_matrix(vocab: Vocabulary, index: FeatureIndex) -> sparse.csr_matrix:
    """Binary |V| x |F| indicator matrix over the training vocabulary."""
    vectors = featurize_vocabulary(vocab, index)
    indptr = [0]
    indices: list[int] = []
    for vec in vectors:
        indices.extend(vec.ids)
        indptr.append(len(indices))
    data = np.ones(len(indices), dtype=np.float64)
    return sparse.csr_matrix(
        (data, np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(vocab.size, index.size),
    )


def scaled_cutoff(num_tokens: int, base_cutoff: int = 50, reference_tokens: int = 1_000_000) -> int:
    """Cutoff proportional to corpus size: a 293k-token corpus against the
    1M-token reference yields 14."""
    if num_tokens <= 0:
        raise FeatureError("num_tokens must be positive")
    return math.floor(base_cutoff * num_tokens / reference_tokens)


def save_feature_index(index: FeatureIndex, path: str) -> None:
    """Serialize as one ``feature<TAB>id<TAB>count`` line per entry under a
    fingerprint header; unknown ids use a reserved ``UNK:`` prefix and carry
    the total count they absorbed."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"featureindex 1 {index.config.fingerprint()}\n")
        for tmpl, fid in index.unk_ids.items():
            fh.write(f"{_UNK_PREFIX}{tmpl}\t{fid}\t{index.unk_counts[tmpl]}\n")
        for fs, fid in index.feat_to_id.items():
            fh.write(f"{fs}\t{fid}\t{index.counts[fs]}\n")


def load_feature_index(path: str) -> FeatureIndex:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(" ", 2)
        if len(header) != 3 or header[0] != "featureindex" or header[1] != "1":
            raise FeatureError(f"{path}: not a feature index file")
        cfg: dict[str, str] = {}
        for pair in header[2].split(";"):
            key, _, value = pair.partition("=")
            cfg[key] = value
        config = FeatureConfig(
            mode=cfg["mode"],
            language=cfg["language"],
            cutoff=int(cfg["cutoff"]),
            apply_language_suffix_rules=bool(int(cfg["suffix_rules"])),
        )
        index = FeatureIndex(config)
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FeatureError(f"{path}:{lineno}: expected 3 tab-separated fields")
            fs, fid, count = parts
            if fs.startswith(_UNK_PREFIX):
                index.unk_ids[fs[len(_UNK_PREFIX):]] = int(fid)
                index.unk_counts[fs[len(_UNK_PREFIX):]] = int(count)
            else:
                index.feat_to_id[fs] = int(fid)
                index.counts[fs] = int(count)
    return index
