"""Unsupervised part-of-speech induction toolkit.

A conditional random field autoencoder over contextual word embeddings
with feature-rich log-linear emissions, HMM and feature-rich HMM
baselines, and a matched evaluation suite (many-to-one, one-to-one,
V-measure).
"""

from .corpus import Corpus, Sentence, Vocabulary, load_corpus
from .embeddings import read_embeddings, synth_embed, write_embeddings
from .features import FeatureConfig, FeatureIndex, build_feature_index
from .metrics import evaluate_run, m1_score, one_to_one, v_measure
from .models import CrfAeParams, EncoderConfig, FhmmParams, HmmParams
from .training import TrainConfig, load_checkpoint, run_pipeline, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CrfAeParams",
    "EncoderConfig",
    "FeatureConfig",
    "FeatureIndex",
    "FhmmParams",
    "HmmParams",
    "Sentence",
    "TrainConfig",
    "Vocabulary",
    "build_feature_index",
    "evaluate_run",
    "load_checkpoint",
    "load_corpus",
    "m1_score",
    "one_to_one",
    "read_embeddings",
    "run_pipeline",
    "save_checkpoint",
    "synth_embed",
    "v_measure",
    "write_embeddings",
    "__version__",
]
