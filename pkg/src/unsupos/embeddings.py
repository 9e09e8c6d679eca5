"""Contextual word embeddings: binary file I/O and the encoder-side
representation ops that consume them.

File format (CWE1, little-endian): magic ``CWE1``, u32 version (1), u32 K
(layers), u32 d (dimensions, even), u32 number of sentences; then per
sentence a u32 token count n followed by K*n*d IEEE-754 binary32 values in
layer-major, then token-major order.  Files are read as a stream of
per-sentence blocks; an offset index gives random access without holding the
whole file in memory.

Vectors are laid out as [forward half; backward half] of d/2 each, which the
minus op relies on.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus

MAGIC = b"CWE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_LEN = struct.Struct("<I")


class EmbeddingError(ValueError):
    """Raised for malformed embedding files or shape mismatches."""


def write_embeddings(path: str, blocks) -> None:
    """Write per-sentence blocks, each an array of shape (K, n, d), to a
    CWE1 file.  All blocks must agree on K and d; d must be even."""
    blocks = [np.asarray(b, dtype=np.float32) for b in blocks]
    if not blocks:
        raise EmbeddingError("no sentence blocks to write")
    k, _, d = blocks[0].shape
    if k < 1:
        raise EmbeddingError("layer count must be >= 1")
    if d < 2 or d % 2 != 0:
        raise EmbeddingError(f"dimension must be even and positive, got {d}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, k, d, len(blocks)))
        for i, block in enumerate(blocks):
            if block.ndim != 3 or block.shape[0] != k or block.shape[2] != d:
                raise EmbeddingError(f"sentence {i}: block shape {block.shape} != (K, n, d)")
            n = block.shape[1]
            if n < 1:
                raise EmbeddingError(f"sentence {i}: empty block")
            if not np.all(np.isfinite(block)):
                raise EmbeddingError(f"sentence {i}: non-finite values")
            fh.write(_LEN.pack(n))
            fh.write(block.tobytes(order="C"))


class EmbeddingReader:
    """Streaming access to a CWE1 file.

    Iteration yields (K, n, d) float32 blocks one sentence at a time.
    ``load_index()`` records block offsets so ``read_at(i)`` can fetch single
    sentences on demand.
    """

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "rb")
        header = self._fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise EmbeddingError(f"{path}: truncated header")
        magic, version, k, d, num_sentences = _HEADER.unpack(header)
        if magic != MAGIC:
            raise EmbeddingError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise EmbeddingError(f"{path}: unsupported version {version}")
        if k < 1:
            raise EmbeddingError(f"{path}: layer count must be >= 1, got {k}")
        if d < 2 or d % 2 != 0:
            raise EmbeddingError(f"{path}: dimension must be even and positive, got {d}")
        self.num_layers = k
        self.dim = d
        self.num_sentences = num_sentences
        self._offsets: list[int] | None = None

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "EmbeddingReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _read_block_at(self, offset: int, index: int) -> tuple[np.ndarray, int]:
        self._fh.seek(offset)
        raw_n = self._fh.read(_LEN.size)
        if len(raw_n) < _LEN.size:
            raise EmbeddingError(f"{self.path}: sentence {index}: truncated length field")
        (n,) = _LEN.unpack(raw_n)
        if n < 1:
            raise EmbeddingError(f"{self.path}: sentence {index}: empty sentence block")
        nbytes = self.num_layers * n * self.dim * 4
        payload = self._fh.read(nbytes)
        if len(payload) < nbytes:
            raise EmbeddingError(f"{self.path}: sentence {index}: truncated block")
        block = np.frombuffer(payload, dtype="<f4").reshape(self.num_layers, n, self.dim)
        if not np.all(np.isfinite(block)):
            raise EmbeddingError(f"{self.path}: sentence {index}: non-finite values")
        return block, offset + _LEN.size + nbytes

    def __iter__(self):
        offset = _HEADER.size
        for i in range(self.num_sentences):
            block, offset = self._read_block_at(offset, i)
            yield block

    def load_index(self) -> None:
        """Scan block offsets once; required before ``read_at``."""
        offsets = []
        offset = _HEADER.size
        for i in range(self.num_sentences):
            offsets.append(offset)
            self._fh.seek(offset)
            raw_n = self._fh.read(_LEN.size)
            if len(raw_n) < _LEN.size:
                raise EmbeddingError(f"{self.path}: sentence {i}: truncated length field")
            (n,) = _LEN.unpack(raw_n)
            offset += _LEN.size + self.num_layers * n * self.dim * 4
        self._offsets = offsets

    def read_at(self, index: int) -> np.ndarray:
        if self._offsets is None:
            self.load_index()
        block, _ = self._read_block_at(self._offsets[index], index)
        return block

    def sentence_lengths(self) -> list[int]:
        return [block.shape[1] for block in self]


def read_embeddings(path: str) -> EmbeddingReader:
    """Open a CWE1 file for streaming; the header is validated eagerly."""
    return EmbeddingReader(path)


@dataclass
class ScalarMixParams:
    layer_logits: np.ndarray  # (K',)
    gamma: float = 1.0

    def weights(self) -> np.ndarray:
        z = np.asarray(self.layer_logits, dtype=np.float64)
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()


def scalar_mix(layers: np.ndarray, params: ScalarMixParams) -> np.ndarray:
    """Softmax-weighted sum of layers scaled by gamma: (K', n, d) -> (n, d)."""
    layers = np.asarray(layers, dtype=np.float64)
    if layers.ndim != 3:
        raise EmbeddingError(f"expected (K, n, d) layers, got shape {layers.shape}")
    w = params.weights()
    if w.shape[0] != layers.shape[0]:
        raise EmbeddingError(
            f"{w.shape[0]} mixing weights for {layers.shape[0]} layers"
        )
    return params.gamma * np.tensordot(w, layers, axes=1)


def minus_op(r: np.ndarray) -> np.ndarray:
    """Difference a token's forward half against its left neighbor and its
    backward half against its right neighbor:

        m_i = [r_fwd_i; r_bwd_i] - [r_fwd_{i-1}; r_bwd_{i+1}]

    Out-of-range neighbors are zero vectors, so m_1 keeps its forward half
    and m_n its backward half unchanged.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2:
        raise EmbeddingError(f"expected (n, d) input, got shape {r.shape}")
    n, d = r.shape
    if d % 2 != 0:
        raise EmbeddingError(f"dimension must be even, got {d}")
    h = d // 2
    m = r.copy()
    m[1:, :h] -= r[:-1, :h]
    m[:-1, h:] -= r[1:, h:]
    return m


def _token_rng(seed: int, salt: str, context: tuple[str, str, str]) -> np.random.Generator:
    key = "\x1f".join((str(seed), salt) + context).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def synth_embed(corpus: Corpus, d: int, seed: int) -> list[np.ndarray]:
    """Deterministic pseudo-contextual embeddings for smoke tests.

    Each token's vector is a seeded hash of its word type and its immediate
    neighbor types, drawn uniformly in [-1, 1]; two tokens in identical
    one-word contexts get identical vectors.  K=2 layers, the second being
    the first plus seeded noise.
    """
    if d < 2 or d % 2 != 0:
        raise EmbeddingError(f"dimension must be even and positive, got {d}")
    blocks = []
    for sent in corpus.sentences:
        n = len(sent)
        words = ["<s>"] + list(sent.norm_words) + ["</s>"]
        block = np.empty((2, n, d), dtype=np.float32)
        for i in range(n):
            ctx = (words[i], words[i + 1], words[i + 2])
            base = _token_rng(seed, "base", ctx).uniform(-1.0, 1.0, size=d)
            noise = _token_rng(seed, "noise", ctx).uniform(-1.0, 1.0, size=d)
            block[0, i] = base
            block[1, i] = base + 0.25 * noise
        blocks.append(block)
    return blocks
