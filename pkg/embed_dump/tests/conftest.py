"""Fixtures: a tiny randomly initialized BERT saved to disk, so tests
exercise the real tokenizer/model loading path without any downloads."""

from __future__ import annotations

import pytest

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "dog", "cat", "bird", "bark", "jump", "run",
    "##s", "##ing", "##ed", "un", "##break", "##able",
    "quick", "slow", "very", "now",
]

# ten sentences over the vocabulary above; "barks"/"jumping"/"unbreakable"
# exercise multi-subtoken words, "zzz" the unknown-token path
SENTENCES = [
    ["the", "dog", "barks"],
    ["a", "cat", "jumps", "now"],
    ["the", "quick", "bird", "runs"],
    ["a", "slow", "dog", "jumped"],
    ["the", "unbreakable", "cat", "runs", "very", "slow"],
    ["barking", "dogs", "run"],
    ["the", "bird", "jumps"],
    ["a", "very", "quick", "cat"],
    ["zzz", "barks", "now"],
    ["the", "dog", "runs", "now"],
]


def write_vertical(path, sentences) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for words in sentences:
            fh.write("\n".join(words) + "\n\n")


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory) -> str:
    import torch
    from tokenizers import Tokenizer, models, normalizers, pre_tokenizers
    from tokenizers.processors import TemplateProcessing
    from transformers import BertConfig, BertModel, PreTrainedTokenizerFast

    wordpiece = models.WordPiece(
        {t: i for i, t in enumerate(VOCAB)}, unk_token="[UNK]",
        max_input_chars_per_word=100,
    )
    tok = Tokenizer(wordpiece)
    tok.normalizer = normalizers.Lowercase()
    tok.pre_tokenizer = pre_tokenizers.WhitespaceSplit()
    tok.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        special_tokens=[("[CLS]", VOCAB.index("[CLS]")), ("[SEP]", VOCAB.index("[SEP]"))],
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, unk_token="[UNK]", pad_token="[PAD]",
        cls_token="[CLS]", sep_token="[SEP]", mask_token="[MASK]",
    )

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=8, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=16,
        max_position_embeddings=24,
    )
    model = BertModel(config)
    out = tmp_path_factory.mktemp("tiny-bert")
    model.save_pretrained(out)
    fast.save_pretrained(out)
    return str(out)


@pytest.fixture
def corpus_file(tmp_path) -> str:
    path = tmp_path / "corpus.txt"
    write_vertical(path, SENTENCES)
    return str(path)
