"""Dump per-layer contextual word representations to a CWE1 file.

The exporter runs a pretrained bidirectional encoder (any Hugging Face
model directory or identifier) over a tokenized corpus in inference mode
and writes one block of shape (K, n, d) per sentence, where K is the
number of dumped layers and n the corpus token count.  Words that the
model's tokenizer splits into several subtokens are represented by their
first subtoken.  Nothing is trained or fine-tuned.

CWE1 layout (little-endian): magic ``CWE1``, u32 version (1), u32 K,
u32 d (even), u32 sentence count; then per sentence a u32 token count n
followed by K*n*d binary32 values in layer-major, token-major order.
"""

from __future__ import annotations

import argparse
import logging
import os
import struct
import sys
from dataclasses import dataclass, field

import numpy as np

LOG = logging.getLogger("embed_dump")

MAGIC = b"CWE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_LEN = struct.Struct("<I")


class DumpError(ValueError):
    """Bad inputs: unreadable corpus, invalid layers, misaligned tokens."""


@dataclass
class DumpSpec:
    model: str
    corpus: str
    out: str
    # None dumps every hidden state the encoder exposes (embeddings + layers)
    layers: tuple[int, ...] | None = None
    batch_size: int = 8
    pooling: str = "first"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise DumpError(f"batch size must be >= 1, got {self.batch_size}")
        if self.pooling != "first":
            raise DumpError(f"unsupported pooling rule {self.pooling!r}")
        if self.layers is not None:
            if len(self.layers) == 0:
                raise DumpError("empty layer selection")
            if len(set(self.layers)) != len(self.layers):
                raise DumpError(f"duplicate layer indexes in {self.layers}")


def read_sentences(path: str) -> list[list[str]]:
    """Corpus tokens, one sentence per blank-line-separated block.

    Vertical files carry one token per line in the first tab-separated
    column; ``.conllu`` files additionally have comment lines and
    multiword-range / empty-node ids to skip.
    """
    conllu = path.endswith(".conllu")
    sentences: list[list[str]] = []
    current: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                if current:
                    sentences.append(current)
                    current = []
                continue
            if conllu:
                if line.startswith("#"):
                    continue
                cols = line.split("\t")
                if len(cols) < 2 or "-" in cols[0] or "." in cols[0]:
                    continue
                current.append(cols[1])
            else:
                current.append(line.split("\t")[0].strip())
    if current:
        sentences.append(current)
    if not sentences:
        raise DumpError(f"{path}: no sentences found")
    return sentences


def write_cwe1(path: str, blocks: list[np.ndarray]) -> None:
    if not blocks:
        raise DumpError("no blocks to write")
    k, _, d = blocks[0].shape
    if d % 2 != 0:
        raise DumpError(f"embedding dimension must be even, got {d}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, k, d, len(blocks)))
        for i, block in enumerate(blocks):
            if block.shape[0] != k or block.shape[2] != d:
                raise DumpError(f"sentence {i}: block shape {block.shape} varies")
            if not np.all(np.isfinite(block)):
                raise DumpError(f"sentence {i}: non-finite model output")
            fh.write(_LEN.pack(block.shape[1]))
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def _first_subtoken_positions(word_ids: list[int | None], num_words: int,
                              sent_index: int) -> list[int]:
    positions: list[int] = []
    seen = -1
    for pos, wid in enumerate(word_ids):
        if wid is None:
            continue
        if wid == seen + 1:
            positions.append(pos)
            seen = wid
        elif wid != seen:
            raise DumpError(
                f"sentence {sent_index}: token alignment failed at word {wid}"
            )
    if len(positions) != num_words:
        raise DumpError(
            f"sentence {sent_index}: {num_words} words but only "
            f"{len(positions)} aligned to subtokens"
        )
    return positions


def dump(spec: DumpSpec) -> None:
    """Run the encoder over the corpus and write one CWE1 block per
    sentence; deterministic for a fixed model, corpus, and spec."""
    import torch
    from transformers import AutoModel, AutoTokenizer

    sentences = read_sentences(spec.corpus)
    tokenizer = AutoTokenizer.from_pretrained(spec.model)
    model = AutoModel.from_pretrained(spec.model)
    model.eval()
    max_positions = getattr(model.config, "max_position_embeddings", None)

    blocks: list[np.ndarray] = []
    with torch.no_grad():
        for begin in range(0, len(sentences), spec.batch_size):
            batch = sentences[begin : begin + spec.batch_size]
            enc = tokenizer(batch, is_split_into_words=True, padding=True,
                            return_tensors="pt")
            if max_positions is not None and enc["input_ids"].shape[1] > max_positions:
                longest = max(range(len(batch)), key=lambda b: len(batch[b]))
                raise DumpError(
                    f"sentence {begin + longest}: exceeds the model's "
                    f"{max_positions}-position limit"
                )
            hidden = model(**enc, output_hidden_states=True).hidden_states
            layers = spec.layers if spec.layers is not None else tuple(range(len(hidden)))
            bad = [i for i in layers if i < 0 or i >= len(hidden)]
            if bad:
                raise DumpError(
                    f"layer indexes {bad} outside the model's 0..{len(hidden) - 1}"
                )
            stacked = torch.stack([hidden[i] for i in layers])  # (K, B, T, d)
            for b, words in enumerate(batch):
                positions = _first_subtoken_positions(
                    enc.word_ids(b), len(words), begin + b
                )
                block = stacked[:, b, positions, :].numpy().astype("<f4")
                blocks.append(block)

    write_cwe1(spec.out, blocks)
    LOG.info("wrote %d sentence blocks (K=%d, d=%d) -> %s",
             len(blocks), blocks[0].shape[0], blocks[0].shape[2], spec.out)


def _parse_layers(raw: str) -> tuple[int, ...] | None:
    if raw == "all":
        return None
    try:
        return tuple(int(x) for x in raw.split(","))
    except ValueError:
        raise DumpError(f"bad layer list {raw!r}, expected 'all' or e.g. '0,1,2'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-dump",
        description="Dump per-layer contextual embeddings to a CWE1 file.",
    )
    parser.add_argument("--model", required=True,
                        help="pretrained model directory or identifier")
    parser.add_argument("--corpus", required=True,
                        help="tokenized corpus (vertical or .conllu)")
    parser.add_argument("--out", required=True, help="output CWE1 path")
    parser.add_argument("--layers", default="all",
                        help="comma-separated hidden-state indexes, or 'all'")
    parser.add_argument("--batch-size", type=int, default=8)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if not os.path.exists(args.corpus):
            raise DumpError(f"corpus not found: {args.corpus}")
        spec = DumpSpec(model=args.model, corpus=args.corpus, out=args.out,
                        layers=_parse_layers(args.layers),
                        batch_size=args.batch_size)
        dump(spec)
        return 0
    except (DumpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        LOG.exception("internal error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
