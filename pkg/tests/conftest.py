"""Shared fixtures: tiny corpora on disk and a seeded synthetic language.

The synthetic language has five tags whose words carry characteristic
suffixes, Zipf-distributed within-tag word choice (so rare words and OOV
dev/test tokens reward feature sharing), and sticky Markov transitions.
It is small enough for end-to-end runs in seconds but structured enough
that the induction models can recover the tags.
"""

from __future__ import annotations

import numpy as np
import pytest

from unsupos.corpus import Corpus, Sentence, Vocabulary, load_corpus

TAG_NAMES = ("DET", "NOUN", "VERB", "ADJ", "ADV")

# per-tag word stems; suffixes make tags morphologically recoverable
_SUFFIXES = {
    "DET": "a",
    "NOUN": "tion",
    "VERB": "ize",
    "ADJ": "ful",
    "ADV": "ly",
}
_STEMS = (
    "bor", "cal", "dun", "fen", "gor",
    "hin", "jal", "kem", "lom", "mur",
)

# row = previous tag, column = next tag; DET strongly precedes NOUN/ADJ,
# NOUN precedes VERB, sentences cycle DET NOUN VERB ADV ...
_TRANS = np.array(
    [
        # DET   NOUN  VERB  ADJ   ADV
        [0.02, 0.68, 0.02, 0.26, 0.02],  # DET
        [0.05, 0.10, 0.60, 0.05, 0.20],  # NOUN
        [0.45, 0.15, 0.05, 0.15, 0.20],  # VERB
        [0.02, 0.76, 0.10, 0.10, 0.02],  # ADJ
        [0.30, 0.10, 0.30, 0.15, 0.15],  # ADV
    ]
)
_START = np.array([0.55, 0.15, 0.05, 0.15, 0.10])


def tag_vocabulary() -> dict[str, list[str]]:
    return {
        tag: [stem + _SUFFIXES[tag] for stem in _STEMS] for tag in TAG_NAMES
    }


def sample_sentences(
    num_sentences: int, rng: np.random.Generator
) -> list[tuple[list[str], list[str]]]:
    """Draw (words, tags) pairs; word choice within a tag is Zipfian."""
    words_by_tag = tag_vocabulary()
    ranks = np.arange(1, len(_STEMS) + 1, dtype=float)
    zipf = (1.0 / ranks) / (1.0 / ranks).sum()
    out = []
    for _ in range(num_sentences):
        length = int(rng.integers(5, 13))
        tags = []
        tag = int(rng.choice(len(TAG_NAMES), p=_START))
        for _ in range(length):
            tags.append(tag)
            tag = int(rng.choice(len(TAG_NAMES), p=_TRANS[tag]))
        words = [
            words_by_tag[TAG_NAMES[t]][int(rng.choice(len(_STEMS), p=zipf))]
            for t in tags
        ]
        out.append((words, [TAG_NAMES[t] for t in tags]))
    return out


def write_vertical_file(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for words, tags in sentences:
            for word, tag in zip(words, tags):
                fh.write(f"{word}\t{tag}\n")
            fh.write("\n")


@pytest.fixture
def tiny_corpus(tmp_path) -> Corpus:
    path = tmp_path / "tiny.txt"
    write_vertical_file(
        path,
        [
            (["The", "dog", "barks"], ["DET", "NOUN", "VERB"]),
            (["A", "cat", "sleeps", "now"], ["DET", "NOUN", "VERB", "ADV"]),
        ],
    )
    return load_corpus(str(path), has_tags=True)


@pytest.fixture
def synthetic_splits(tmp_path):
    """(train, dev, test) Corpus triple sharing one vocabulary, written to
    disk so CLI tests can reuse the files."""
    rng = np.random.default_rng(7)
    train_path = tmp_path / "train.txt"
    dev_path = tmp_path / "dev.txt"
    test_path = tmp_path / "test.txt"
    write_vertical_file(train_path, sample_sentences(160, rng))
    write_vertical_file(dev_path, sample_sentences(20, rng))
    write_vertical_file(test_path, sample_sentences(20, rng))
    tag_ids: dict[str, int] = {}
    train = load_corpus(str(train_path), has_tags=True, tag_ids=tag_ids)
    dev = load_corpus(str(dev_path), has_tags=True, vocab=train.vocab, tag_ids=tag_ids)
    test = load_corpus(str(test_path), has_tags=True, vocab=train.vocab, tag_ids=tag_ids)
    return train, dev, test
