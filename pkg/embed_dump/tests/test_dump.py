from __future__ import annotations

import struct

import numpy as np
import pytest

from embed_dump import DumpError, DumpSpec, dump, main, read_sentences, write_cwe1
from conftest import SENTENCES, write_vertical

# the primary toolkit's reader is the authority on the CWE1 format
from unsupos.embeddings import read_embeddings


# ---------------------------------------------------------------------------
# corpus reading


def test_read_vertical_first_column(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("the\tDET\ndog\tNOUN\n\nruns\n\n", encoding="utf-8")
    assert read_sentences(str(path)) == [["the", "dog"], ["runs"]]


def test_read_conllu_skips_metadata(tmp_path):
    path = tmp_path / "c.conllu"
    path.write_text(
        "# sent_id = 1\n"
        "1\tthe\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "2-3\tdoesn't\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "2\tdoes\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "3\tnot\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "3.1\tghost\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "\n",
        encoding="utf-8",
    )
    assert read_sentences(str(path)) == [["the", "does", "not"]]


def test_read_empty_corpus_rejected(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(DumpError):
        read_sentences(str(path))


# ---------------------------------------------------------------------------
# writer contract


def test_write_cwe1_layout(tmp_path):
    block = np.arange(2 * 3 * 4, dtype="<f4").reshape(2, 3, 4)
    path = tmp_path / "x.cwe"
    write_cwe1(str(path), [block])
    raw = path.read_bytes()
    magic, version, k, d, count = struct.unpack_from("<4sIIII", raw)
    assert (magic, version, k, d, count) == (b"CWE1", 1, 2, 4, 1)
    (n,) = struct.unpack_from("<I", raw, 20)
    assert n == 3
    np.testing.assert_array_equal(
        np.frombuffer(raw[24:], dtype="<f4").reshape(2, 3, 4), block
    )


def test_write_cwe1_rejects_odd_dim(tmp_path):
    with pytest.raises(DumpError, match="even"):
        write_cwe1(str(tmp_path / "x.cwe"), [np.zeros((1, 2, 5), dtype="<f4")])


def test_write_cwe1_rejects_non_finite(tmp_path):
    block = np.zeros((1, 2, 4), dtype="<f4")
    block[0, 1, 0] = np.nan
    with pytest.raises(DumpError, match="sentence 0"):
        write_cwe1(str(tmp_path / "x.cwe"), [block])


# ---------------------------------------------------------------------------
# dumping with a real (tiny) encoder


def test_dump_aligns_with_corpus(tiny_model_dir, corpus_file, tmp_path):
    out = tmp_path / "emb.cwe"
    dump(DumpSpec(model=tiny_model_dir, corpus=corpus_file, out=str(out)))
    reader = read_embeddings(str(out))
    assert reader.num_layers == 3  # embeddings + 2 encoder layers
    assert reader.dim == 8
    assert reader.num_sentences == len(SENTENCES)
    for block, words in zip(reader, SENTENCES):
        assert block.shape == (3, len(words), 8)


def test_dump_is_byte_identical_across_runs(tiny_model_dir, corpus_file, tmp_path):
    spec_a = DumpSpec(model=tiny_model_dir, corpus=corpus_file, out=str(tmp_path / "a.cwe"))
    spec_b = DumpSpec(model=tiny_model_dir, corpus=corpus_file, out=str(tmp_path / "b.cwe"))
    dump(spec_a)
    dump(spec_b)
    assert (tmp_path / "a.cwe").read_bytes() == (tmp_path / "b.cwe").read_bytes()


def test_dump_layer_subset(tiny_model_dir, tmp_path):
    corpus = tmp_path / "two.txt"
    write_vertical(corpus, [["the", "dog"], ["a", "cat", "runs"]])
    out = tmp_path / "emb.cwe"
    dump(DumpSpec(model=tiny_model_dir, corpus=str(corpus), out=str(out),
                  layers=(1, 2)))
    reader = read_embeddings(str(out))
    assert reader.num_layers == 2
    assert reader.num_sentences == 2
    assert [b.shape[1] for b in reader] == [2, 3]


def test_multi_subtoken_word_uses_first_subtoken(tiny_model_dir, tmp_path):
    import torch
    from transformers import AutoModel, AutoTokenizer

    corpus = tmp_path / "one.txt"
    write_vertical(corpus, [["the", "unbreakable", "dog"]])
    out = tmp_path / "emb.cwe"
    dump(DumpSpec(model=tiny_model_dir, corpus=str(corpus), out=str(out)))

    tokenizer = AutoTokenizer.from_pretrained(tiny_model_dir)
    model = AutoModel.from_pretrained(tiny_model_dir)
    model.eval()
    enc = tokenizer(["the", "unbreakable", "dog"], is_split_into_words=True,
                    return_tensors="pt")
    # positions: [CLS] the un ##break ##able dog [SEP]
    assert enc.word_ids() == [None, 0, 1, 1, 1, 2, None]
    with torch.no_grad():
        hidden = model(**enc, output_hidden_states=True).hidden_states
    block = next(iter(read_embeddings(str(out))))
    for layer in range(3):
        expected = hidden[layer][0, [1, 2, 5], :].numpy().astype("<f4")
        np.testing.assert_array_equal(block[layer], expected)


def test_unknown_word_still_aligns(tiny_model_dir, tmp_path):
    corpus = tmp_path / "unk.txt"
    write_vertical(corpus, [["zzz", "dog"]])
    out = tmp_path / "emb.cwe"
    dump(DumpSpec(model=tiny_model_dir, corpus=str(corpus), out=str(out)))
    assert next(iter(read_embeddings(str(out)))).shape == (3, 2, 8)


def test_invalid_layer_index_rejected(tiny_model_dir, corpus_file, tmp_path):
    spec = DumpSpec(model=tiny_model_dir, corpus=corpus_file,
                    out=str(tmp_path / "x.cwe"), layers=(0, 9))
    with pytest.raises(DumpError, match=r"\[9\]"):
        dump(spec)


def test_too_long_sentence_names_its_index(tiny_model_dir, tmp_path):
    corpus = tmp_path / "long.txt"
    write_vertical(corpus, [["dog"], ["the"] * 40])
    spec = DumpSpec(model=tiny_model_dir, corpus=str(corpus),
                    out=str(tmp_path / "x.cwe"))
    with pytest.raises(DumpError, match="sentence 1"):
        dump(spec)


def test_spec_validation():
    with pytest.raises(DumpError):
        DumpSpec(model="m", corpus="c", out="o", batch_size=0)
    with pytest.raises(DumpError):
        DumpSpec(model="m", corpus="c", out="o", layers=())
    with pytest.raises(DumpError):
        DumpSpec(model="m", corpus="c", out="o", layers=(1, 1))
    with pytest.raises(DumpError):
        DumpSpec(model="m", corpus="c", out="o", pooling="mean")


# ---------------------------------------------------------------------------
# command line


def test_cli_writes_file(tiny_model_dir, corpus_file, tmp_path):
    out = tmp_path / "emb.cwe"
    rc = main(["--model", tiny_model_dir, "--corpus", corpus_file,
               "--out", str(out), "--layers", "1,2", "--batch-size", "4"])
    assert rc == 0
    assert read_embeddings(str(out)).num_layers == 2


def test_cli_rejects_bad_layer_list(tiny_model_dir, corpus_file, tmp_path, capsys):
    rc = main(["--model", tiny_model_dir, "--corpus", corpus_file,
               "--out", str(tmp_path / "x.cwe"), "--layers", "one,two"])
    assert rc == 2
    assert "layer list" in capsys.readouterr().err


def test_cli_missing_corpus_exit_2(tiny_model_dir, tmp_path, capsys):
    rc = main(["--model", tiny_model_dir, "--corpus", str(tmp_path / "nope.txt"),
               "--out", str(tmp_path / "x.cwe")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err
