from __future__ import annotations

import struct

import numpy as np
import pytest

from unsupos.corpus import load_vertical
from unsupos.embeddings import (
    EmbeddingError,
    ScalarMixParams,
    minus_op,
    read_embeddings,
    scalar_mix,
    synth_embed,
    write_embeddings,
)
from tests.conftest import write_vertical_file


def random_blocks(rng, num_sentences=4, k=2, d=6):
    return [
        rng.normal(size=(k, int(rng.integers(1, 8)), d)).astype(np.float32)
        for _ in range(num_sentences)
    ]


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    blocks = random_blocks(rng)
    path = tmp_path / "e.cwe"
    write_embeddings(str(path), blocks)
    reader = read_embeddings(str(path))
    assert reader.num_layers == 2
    assert reader.dim == 6
    assert reader.num_sentences == 4
    for orig, got in zip(blocks, reader):
        assert got.dtype == np.float32
        np.testing.assert_array_equal(orig, got)
    reader.close()


def test_random_access_matches_streaming(tmp_path):
    rng = np.random.default_rng(1)
    blocks = random_blocks(rng, num_sentences=6)
    path = tmp_path / "e.cwe"
    write_embeddings(str(path), blocks)
    with read_embeddings(str(path)) as reader:
        np.testing.assert_array_equal(reader.read_at(4), blocks[4])
        np.testing.assert_array_equal(reader.read_at(0), blocks[0])
        assert reader.sentence_lengths() == [b.shape[1] for b in blocks]


def test_write_validation(tmp_path):
    path = str(tmp_path / "e.cwe")
    with pytest.raises(EmbeddingError):
        write_embeddings(path, [])
    with pytest.raises(EmbeddingError):
        write_embeddings(path, [np.zeros((1, 3, 5), dtype=np.float32)])  # odd d
    with pytest.raises(EmbeddingError):
        write_embeddings(path, [np.zeros((2, 3, 4)), np.zeros((1, 3, 4))])
    block = np.zeros((1, 2, 4), dtype=np.float32)
    block[0, 0, 0] = np.inf
    with pytest.raises(EmbeddingError):
        write_embeddings(path, [block])


def test_reader_rejects_bad_headers(tmp_path):
    path = tmp_path / "e.cwe"
    path.write_bytes(b"NOPE" + struct.pack("<IIII", 1, 2, 4, 1))
    with pytest.raises(EmbeddingError) as exc:
        read_embeddings(str(path))
    assert "magic" in str(exc.value)
    path.write_bytes(b"CWE1" + struct.pack("<IIII", 9, 2, 4, 1))
    with pytest.raises(EmbeddingError) as exc:
        read_embeddings(str(path))
    assert "version" in str(exc.value)
    path.write_bytes(b"CWE1" + struct.pack("<IIII", 1, 2, 5, 1))
    with pytest.raises(EmbeddingError) as exc:
        read_embeddings(str(path))
    assert "even" in str(exc.value)
    path.write_bytes(b"CW")
    with pytest.raises(EmbeddingError):
        read_embeddings(str(path))


def test_reader_reports_truncation_with_sentence_index(tmp_path):
    rng = np.random.default_rng(2)
    blocks = random_blocks(rng, num_sentences=3)
    path = tmp_path / "e.cwe"
    write_embeddings(str(path), blocks)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(EmbeddingError) as exc:
        list(read_embeddings(str(path)))
    assert "sentence 2" in str(exc.value)


def test_layout_is_little_endian_layer_major(tmp_path):
    # one sentence, K=1, n=1, d=2: payload is exactly the two f32 values
    block = np.array([[[1.5, -2.0]]], dtype=np.float32)
    path = tmp_path / "e.cwe"
    write_embeddings(str(path), [block])
    data = path.read_bytes()
    assert data[:4] == b"CWE1"
    assert struct.unpack("<IIII", data[4:20]) == (1, 1, 2, 1)
    assert struct.unpack("<I", data[20:24]) == (1,)
    assert struct.unpack("<2f", data[24:32]) == (1.5, -2.0)


def test_scalar_mix_uniform_weights():
    layers = np.stack([np.full((3, 4), 1.0), np.full((3, 4), 3.0)])
    params = ScalarMixParams(layer_logits=np.zeros(2), gamma=2.0)
    np.testing.assert_allclose(scalar_mix(layers, params), np.full((3, 4), 4.0),
                               atol=1e-12)


def test_scalar_mix_softmax_weighting():
    layers = np.stack([np.ones((2, 2)), np.zeros((2, 2))])
    params = ScalarMixParams(layer_logits=np.array([np.log(3.0), 0.0]), gamma=1.0)
    np.testing.assert_allclose(scalar_mix(layers, params),
                               np.full((2, 2), 0.75), atol=1e-12)
    with pytest.raises(EmbeddingError):
        scalar_mix(layers, ScalarMixParams(layer_logits=np.zeros(3)))


def test_minus_op_hand_example():
    r = np.array([
        [1.0, 2.0, 3.0, 4.0],
        [10.0, 20.0, 30.0, 40.0],
        [100.0, 200.0, 300.0, 400.0],
    ])
    expected = np.array([
        [1.0, 2.0, -27.0, -36.0],
        [9.0, 18.0, -270.0, -360.0],
        [90.0, 180.0, 300.0, 400.0],
    ])
    np.testing.assert_allclose(minus_op(r), expected, atol=1e-12)


def test_minus_op_single_token_is_identity():
    r = np.array([[1.0, -2.0, 3.0, -4.0]])
    np.testing.assert_allclose(minus_op(r), r, atol=1e-12)


def test_minus_op_requires_even_dim():
    with pytest.raises(EmbeddingError):
        minus_op(np.zeros((3, 5)))


def _corpus(tmp_path, sentences):
    path = tmp_path / "c.txt"
    write_vertical_file(path, [(s, ["X"] * len(s)) for s in sentences])
    return load_vertical(str(path))


def test_synth_embed_shapes_and_determinism(tmp_path):
    corpus = _corpus(tmp_path, [["a", "b", "c"], ["b", "c"]])
    blocks1 = synth_embed(corpus, d=8, seed=0)
    blocks2 = synth_embed(corpus, d=8, seed=0)
    assert [b.shape for b in blocks1] == [(2, 3, 8), (2, 2, 8)]
    for b1, b2 in zip(blocks1, blocks2):
        np.testing.assert_array_equal(b1, b2)
    blocks3 = synth_embed(corpus, d=8, seed=1)
    assert any(not np.array_equal(a, b) for a, b in zip(blocks1, blocks3))


def test_synth_embed_context_sensitivity(tmp_path):
    # same word in the same one-word context reuses the vector; a different
    # neighbor changes it
    corpus = _corpus(tmp_path, [["a", "b", "c"], ["a", "b", "c"], ["a", "b", "d"]])
    blocks = synth_embed(corpus, d=8, seed=0)
    np.testing.assert_array_equal(blocks[0], blocks[1])
    np.testing.assert_array_equal(blocks[0][:, 0], blocks[2][:, 0])  # a|<s>_b
    assert not np.array_equal(blocks[0][:, 1], blocks[2][:, 1])  # b|a_c vs b|a_d


def test_synth_embed_second_layer_is_bounded_noise(tmp_path):
    corpus = _corpus(tmp_path, [["a", "b", "c", "d", "e"]])
    (block,) = synth_embed(corpus, d=16, seed=3)
    diff = block[1] - block[0]
    assert np.abs(diff).max() <= 0.25 + 1e-6
    assert np.abs(diff).max() > 0.0
    assert np.abs(block[0]).max() <= 1.0


def test_synth_embed_round_trips_through_file(tmp_path):
    corpus = _corpus(tmp_path, [["a", "b"], ["c"]])
    blocks = synth_embed(corpus, d=6, seed=5)
    path = tmp_path / "e.cwe"
    write_embeddings(str(path), blocks)
    with read_embeddings(str(path)) as reader:
        got = list(reader)
    for a, b in zip(blocks, got):
        np.testing.assert_array_equal(a, b)


def test_synth_embed_rejects_odd_dim(tmp_path):
    corpus = _corpus(tmp_path, [["a"]])
    with pytest.raises(EmbeddingError):
        synth_embed(corpus, d=7, seed=0)
