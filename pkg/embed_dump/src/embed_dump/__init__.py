"""Export per-layer contextual word embeddings to the CWE1 binary format."""

from .dump import DumpError, DumpSpec, dump, main, read_sentences, write_cwe1

__version__ = "0.1.0"

__all__ = [
    "DumpError",
    "DumpSpec",
    "dump",
    "main",
    "read_sentences",
    "write_cwe1",
]
