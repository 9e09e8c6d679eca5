"""Command-line interface.

Commands: ``train`` (a single stage or the full three-stage pipeline),
``tag`` (decode a corpus with a trained checkpoint), ``evaluate`` (score
predicted against gold tags, optionally reusing a dev-built mapping), and
``synth-embed`` (write deterministic pseudo-embeddings for smoke tests).

Options can come from a flat ``key=value`` config file; command-line flags
override file values, unknown keys are rejected, and every input path is
validated before any work starts.  Exit code 0 on success, 2 for usage and
input errors, 1 for internal failures.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import report as report_mod
from .corpus import Corpus, CorpusError, EmptyCorpusError, Vocabulary, load_corpus, write_vertical
from .embeddings import EmbeddingError, EmbeddingReader, read_embeddings, synth_embed, write_embeddings
from .features import (
    FeatureConfig,
    FeatureError,
    FeatureIndex,
    build_feature_index,
    featurize_word,
    load_feature_index,
    save_feature_index,
    vocabulary_feature_matrix,
)
from .metrics import MetricError, build_contingency, evaluate_run, m1_mapping
from .models import EncoderConfig, ModelError, fhmm_emission_table, fhmm_lattice, hmm_lattice, joint_decode
from .lattice import viterbi
from .training import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    crfae_fingerprint,
    fhmm_fingerprint,
    fhmm_to_checkpoint,
    hmm_fingerprint,
    hmm_to_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    run_pipeline,
    save_checkpoint,
    train_fhmm,
    train_hmm,
)

LOG = logging.getLogger("unsupos")

_INPUT_ERRORS = (
    CorpusError,
    FeatureError,
    EmbeddingError,
    MetricError,
    CheckpointError,
    ModelError,
)


class UserError(Exception):
    """Bad flags, config values, or input files; exits with code 2."""


_BOOL_KEYS = {"suffix_rules", "use_minus", "copy_decoder_weights"}
_INT_KEYS = {
    "tags", "cutoff", "seed", "jobs", "batch_words", "max_epochs",
    "pretrain_epochs", "d_prime", "dim",
}
_FLOAT_KEYS = {
    "beta1", "beta2", "adam_eps", "lr_fhmm", "lr_pretrain", "lr_encoder",
    "lr_decoder", "lr_decay", "lr_decay_epochs", "grad_clip", "weight_decay",
    "dropout", "leaky_slope",
}
_STR_KEYS = {"mode", "language", "mix_layers", "stage", "corpus", "dev", "emb", "dev_emb", "out"}
_KNOWN_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def load_run_config(path: str) -> dict:
    """Flat UTF-8 ``key=value`` file; blank lines and ``#`` comments are
    skipped, unknown keys are rejected."""
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            key = key.strip()
            raw = raw.strip()
            if not sep or not key:
                raise UserError(f"{path}:{lineno}: expected key=value")
            if key not in _KNOWN_KEYS:
                raise UserError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _BOOL_KEYS:
                    if raw not in ("0", "1", "true", "false"):
                        raise ValueError(raw)
                    values[key] = raw in ("1", "true")
                elif key in _INT_KEYS:
                    values[key] = int(raw)
                elif key in _FLOAT_KEYS:
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError:
                raise UserError(f"{path}:{lineno}: bad value {raw!r} for {key!r}") from None
    return values


def _merged_options(args: argparse.Namespace) -> dict:
    """Config-file values overridden by explicitly given flags."""
    options: dict = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise UserError(f"config file not found: {args.config}")
        options.update(load_run_config(args.config))
    for key in _KNOWN_KEYS:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            options[key] = flag_val
    return options


def _require_input(path: str | None, what: str) -> str:
    if not path:
        raise UserError(f"missing required {what}")
    if not os.path.exists(path):
        raise UserError(f"{what} not found: {path}")
    return path


def _out_path(options: dict) -> str:
    out = options.get("out")
    if not out:
        raise UserError("missing required output path (--out)")
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent):
        raise UserError(f"output directory does not exist: {parent}")
    return out


def _feature_config(options: dict) -> FeatureConfig:
    return FeatureConfig(
        mode=options.get("mode", "wsj"),
        language=options.get("language", "none"),
        cutoff=options.get("cutoff", 50),
        apply_language_suffix_rules=options.get("suffix_rules", True),
    )


def _train_config(options: dict) -> TrainConfig:
    cfg = TrainConfig()
    for key in (
        "batch_words", "max_epochs", "pretrain_epochs", "beta1", "beta2",
        "adam_eps", "lr_fhmm", "lr_pretrain", "lr_encoder", "lr_decoder",
        "lr_decay", "lr_decay_epochs", "grad_clip", "weight_decay", "seed",
        "copy_decoder_weights", "jobs",
    ):
        if key in options:
            setattr(cfg, key, options[key])
    return cfg


def _check_alignment(corpus: Corpus, emb: EmbeddingReader, label: str) -> None:
    if emb.num_sentences != len(corpus.sentences):
        raise UserError(
            f"{label}: corpus has {len(corpus.sentences)} sentences but the "
            f"embedding file has {emb.num_sentences}"
        )
    for i, (sent, n) in enumerate(zip(corpus.sentences, emb.sentence_lengths())):
        if len(sent) != n:
            raise UserError(
                f"{label}: sentence {i}: corpus has {len(sent)} tokens but the "
                f"embedding block has {n}"
            )


def _sidecar(path: str, kind: str) -> str:
    return f"{path}.{kind}.tsv"


def _encoder_config(options: dict, emb: EmbeddingReader) -> EncoderConfig:
    tags = options.get("tags")
    if not tags:
        raise UserError("missing required tag count (--tags)")
    mix_raw = options.get("mix_layers", "all")
    if mix_raw == "all":
        mix_layers = None
        num_layers = emb.num_layers
    else:
        try:
            mix_layers = tuple(int(x) for x in mix_raw.split(","))
        except ValueError:
            raise UserError(f"bad mix_layers value {mix_raw!r}") from None
        if any(i < 0 or i >= emb.num_layers for i in mix_layers):
            raise UserError(
                f"mix_layers {mix_raw!r} outside the file's {emb.num_layers} layers"
            )
        num_layers = len(mix_layers)
    return EncoderConfig(
        num_tags=tags,
        dim=emb.dim,
        num_layers=num_layers,
        d_prime=options.get("d_prime", 5),
        dropout=options.get("dropout", 0.33),
        leaky_slope=options.get("leaky_slope", 0.01),
        use_minus=options.get("use_minus", True),
        mix_layers=mix_layers,
    )


def cmd_train(args: argparse.Namespace) -> int:
    options = _merged_options(args)
    stage = options.get("stage")
    if stage not in (None, "hmm", "fhmm", "pretrain", "crfae"):
        raise UserError(f"unknown stage {stage!r}")
    corpus_path = _require_input(options.get("corpus"), "training corpus (--corpus)")
    out = _out_path(options)
    cfg = _train_config(options)
    train = load_corpus(corpus_path)
    dev = None
    if options.get("dev"):
        dev_path = _require_input(options.get("dev"), "dev corpus (--dev)")
        dev = load_corpus(dev_path, vocab=train.vocab)

    if stage == "hmm":
        tags = options.get("tags")
        if not tags:
            raise UserError("missing required tag count (--tags)")
        result = train_hmm(train, tags, cfg, dev)
        ck = hmm_to_checkpoint(result.params, hmm_fingerprint(tags, train, cfg),
                               result.best_epoch, result.best_ll)
        history = result.history
    elif stage == "fhmm":
        tags = options.get("tags")
        if not tags:
            raise UserError("missing required tag count (--tags)")
        feat_cfg = _feature_config(options)
        index = build_feature_index(train, feat_cfg)
        feat_matrix = vocabulary_feature_matrix(train.vocab, index)
        oov = (lambda w: featurize_word(w, index).ids) if dev is not None else None
        result = train_fhmm(train, feat_matrix, tags, cfg, dev, oov)
        ck = fhmm_to_checkpoint(result.params, fhmm_fingerprint(tags, train, index, cfg),
                                result.best_epoch, result.best_ll)
        history = result.history
        save_feature_index(index, _sidecar(out, "features"))
    else:
        emb_path = _require_input(options.get("emb"), "embedding file (--emb)")
        emb = read_embeddings(emb_path)
        _check_alignment(train, emb, "training split")
        dev_emb = None
        if dev is not None:
            dev_emb_path = _require_input(options.get("dev_emb"), "dev embedding file (--dev-emb)")
            dev_emb = read_embeddings(dev_emb_path)
            _check_alignment(dev, dev_emb, "dev split")
        feat_cfg = _feature_config(options)
        index = build_feature_index(train, feat_cfg)
        enc_cfg = _encoder_config(options, emb)
        if stage == "pretrain":
            # warm-up stages only: skip the joint training epochs but keep
            # the full budget for the pseudo-label model
            cfg.fhmm_epochs = cfg.max_epochs
            cfg.max_epochs = 0
        elif stage == "crfae":
            # joint stage from random initialization
            cfg.pretrain_epochs = 0
            cfg.copy_decoder_weights = False
        result = run_pipeline(train, index, emb, enc_cfg, cfg, dev, dev_emb)
        ck = result.checkpoint
        history = result.history
        save_feature_index(index, _sidecar(out, "features"))

    save_checkpoint(ck, out)
    train.vocab.save(_sidecar(out, "vocab"))
    report_mod.write_ll_log(history, f"{out}.ll.tsv")
    report_mod.save_ll_figure(history, f"{out}.ll.png")
    LOG.info("wrote checkpoint %s (epoch %d, ll %.4f)", out, ck.epoch, ck.ll)
    return 0


def _load_tagging_model(ck_path: str):
    ck = load_checkpoint(ck_path)
    kind, params = model_from_checkpoint(ck)
    vocab_path = _sidecar(ck_path, "vocab")
    if not os.path.exists(vocab_path):
        raise UserError(f"vocabulary sidecar not found: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    index = None
    if kind in ("fhmm", "crfae"):
        index_path = _sidecar(ck_path, "features")
        if not os.path.exists(index_path):
            raise UserError(f"feature index sidecar not found: {index_path}")
        index = load_feature_index(index_path)
    return kind, params, vocab, index


def cmd_tag(args: argparse.Namespace) -> int:
    options = _merged_options(args)
    ck_path = _require_input(args.checkpoint, "checkpoint")
    corpus_path = _require_input(options.get("corpus"), "corpus (--corpus)")
    out = _out_path(options)
    kind, params, vocab, index = _load_tagging_model(ck_path)
    try:
        corpus = load_corpus(corpus_path, vocab=vocab)
    except EmptyCorpusError:
        with open(out, "w", encoding="utf-8"):
            pass
        return 0
    oov = (lambda w: featurize_word(w, index).ids) if index is not None else None
    predictions = []
    if kind == "hmm":
        for sent in corpus.sentences:
            tags, _ = viterbi(hmm_lattice(params, sent))
            predictions.append(tags)
    elif kind == "fhmm":
        feat_matrix = vocabulary_feature_matrix(vocab, index)
        table = fhmm_emission_table(params.theta, feat_matrix)
        for sent in corpus.sentences:
            tags, _ = viterbi(fhmm_lattice(params, table, sent, oov))
            predictions.append(tags)
    else:
        emb_path = _require_input(options.get("emb"), "embedding file (--emb)")
        emb = read_embeddings(emb_path)
        _check_alignment(corpus, emb, "corpus")
        feat_matrix = vocabulary_feature_matrix(vocab, index)
        table = fhmm_emission_table(params.theta, feat_matrix)
        for sent, block in zip(corpus.sentences, emb):
            predictions.append(joint_decode(sent, block, params, table, oov))
    write_vertical(out, corpus.sentences, [list(map(int, p)) for p in predictions])
    LOG.info("tagged %d sentences -> %s", len(corpus.sentences), out)
    return 0


def _read_predictions(path: str) -> list[list[int]]:
    pred = load_corpus(path, has_tags=True)
    names = pred.gold_tagset.names
    try:
        as_int = [int(n) for n in names]
    except ValueError:
        raise UserError(f"{path}: predicted tags must be integer indexes") from None
    return [[as_int[t] for t in s.gold_tags] for s in pred.sentences]


def cmd_evaluate(args: argparse.Namespace) -> int:
    options = _merged_options(args)
    gold_path = _require_input(args.gold, "gold corpus")
    pred_path = _require_input(args.pred, "predicted corpus")
    tag_ids: dict[str, int] = {}
    mapping_pair = None
    if args.mapping_from:
        map_pred_path, map_gold_path = args.mapping_from
        _require_input(map_pred_path, "mapping predictions")
        _require_input(map_gold_path, "mapping gold corpus")
        map_gold = load_corpus(map_gold_path, has_tags=True, tag_ids=tag_ids)
        map_pred = _read_predictions(map_pred_path)
        mapping_pair = (map_gold, map_pred)
    gold = load_corpus(gold_path, has_tags=True, tag_ids=tag_ids)
    pred = _read_predictions(pred_path)
    gold_seqs = [s.gold_tags for s in gold.sentences]
    num_gold = len(tag_ids)
    if mapping_pair is not None:
        map_gold_seqs = [s.gold_tags for s in mapping_pair[0].sentences]
        num_pred = 1 + max(
            max((max(s) for s in seqs if s), default=0)
            for seqs in (pred, mapping_pair[1])
        )
        rep = evaluate_run(map_gold_seqs, mapping_pair[1], gold_seqs, pred,
                           num_gold=num_gold, num_pred=num_pred)
        # the positional pair is the split of interest; drop the mapping split
        rep["splits"] = {"test": rep["splits"]["test"]}
        cm = build_contingency(gold_seqs, pred, num_gold, num_pred)
        figures = {"test": cm.counts}
    else:
        rep = evaluate_run(gold_seqs, pred, num_gold=num_gold, num_pred=None)
        cm = build_contingency(gold_seqs, pred, num_gold, None)
        figures = {"dev": cm.counts}
    sys.stdout.write(report_mod.format_report_table(rep))
    sys.stdout.write(report_mod.format_report_kv(rep))
    if options.get("out"):
        out = _out_path(options)
        report_mod.write_report(rep, out)
        stem = os.path.splitext(out)[0]
        for split, counts in figures.items():
            report_mod.save_contingency_figure(
                counts, f"{stem}.contingency.{split}.png", title=f"{split} contingency"
            )
        report_mod.save_metric_figure(rep, f"{stem}.metrics.png")
    return 0


def cmd_synth_embed(args: argparse.Namespace) -> int:
    options = _merged_options(args)
    corpus_path = _require_input(options.get("corpus"), "corpus (--corpus)")
    out = _out_path(options)
    corpus = load_corpus(corpus_path)
    dim = options.get("dim", 32)
    seed = options.get("seed", 0)
    blocks = synth_embed(corpus, dim, seed)
    write_embeddings(out, blocks)
    LOG.info("wrote %d sentence blocks (K=2, d=%d) -> %s", len(blocks), dim, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unsupos",
        description="Unsupervised part-of-speech induction toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--corpus", help="input corpus (vertical or .conllu)")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, help="run seed (default 0)")
        p.add_argument("--jobs", type=int, help="worker threads for per-sentence work")

    p_train = sub.add_parser("train", help="train a model stage or the full pipeline")
    add_common(p_train)
    p_train.add_argument("--dev", help="dev corpus for log-likelihood tracking")
    p_train.add_argument("--emb", help="training embedding file")
    p_train.add_argument("--dev-emb", dest="dev_emb", help="dev embedding file")
    p_train.add_argument("--stage", choices=["hmm", "fhmm", "pretrain", "crfae"],
                         help="single stage to run (default: full pipeline)")
    p_train.add_argument("--tags", type=int, help="number of induced tags")
    p_train.add_argument("--mode", choices=["wsj", "ud"], help="feature template mode")
    p_train.add_argument("--language", help="language code for suffix rules")
    p_train.add_argument("--cutoff", type=int, help="feature count cutoff")
    p_train.set_defaults(func=cmd_train)

    p_tag = sub.add_parser("tag", help="decode a corpus with a trained checkpoint")
    p_tag.add_argument("checkpoint", help="checkpoint written by train")
    add_common(p_tag)
    p_tag.add_argument("--emb", help="embedding file (required for crfae checkpoints)")
    p_tag.set_defaults(func=cmd_tag)

    p_eval = sub.add_parser("evaluate", help="score predictions against gold tags")
    p_eval.add_argument("gold", help="gold corpus (vertical with tags or .conllu)")
    p_eval.add_argument("pred", help="predicted corpus (vertical with integer indexes)")
    p_eval.add_argument("--mapping-from", nargs=2, metavar=("PRED", "GOLD"),
                        help="build the many-to-one mapping from this dev pair")
    p_eval.add_argument("--config", help="flat key=value config file")
    p_eval.add_argument("--out", help="write the report (plus figures) here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = sub.add_parser("synth-embed", help="write deterministic pseudo-embeddings")
    add_common(p_synth)
    p_synth.add_argument("--dim", type=int, help="embedding dimension (even, default 32)")
    p_synth.set_defaults(func=cmd_synth_embed)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        LOG.exception("internal error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
