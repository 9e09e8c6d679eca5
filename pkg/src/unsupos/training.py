"""Training loops: Adam with bias correction, word-count batching, the
continuous learning-rate decay schedule, text checkpoints, and the
three-stage pipeline (feature-rich HMM warm-up, supervised pretraining of
the encoder on its pseudo-labels, full autoencoder training).

Every random draw comes from one generator seeded by the run seed and
consumed in a fixed order, so identical inputs and seed reproduce the run
bit for bit.  Weight decay enters the losses as an L2 term; the optimizer
never applies it a second time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Corpus
from .embeddings import EmbeddingReader
from .features import FeatureIndex, featurize_word, vocabulary_feature_matrix
from .lattice import SequenceLattice, log_partition, viterbi
from .models import (
    CrfAeParams,
    ModelError,
    EncoderConfig,
    FhmmParams,
    HmmParams,
    MIX_PARAMS,
    crf_supervised_nll,
    crfae_loss,
    emission_scores_for_sentence,
    encoder_unary_scores,
    fhmm_emission_table,
    fhmm_lattice,
    fhmm_neg_loglik,
    hmm_lattice,
    hmm_neg_loglik,
    log_softmax,
)

LOG = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "CRFAE-CKPT"


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files or fingerprint mismatches."""


@dataclass
class TrainConfig:
    batch_words: int = 5000
    max_epochs: int = 50
    pretrain_epochs: int = 5
    beta1: float = 0.9
    beta2: float = 0.9
    adam_eps: float = 1e-8
    lr_fhmm: float = 0.5
    lr_pretrain: float = 2e-3
    lr_encoder: float = 1e-2
    lr_decoder: float = 2e-1
    lr_decay: float = 0.75
    lr_decay_epochs: float = 45.0
    grad_clip: float = 5.0
    weight_decay: float = 1e-5
    seed: int = 0
    copy_decoder_weights: bool = True
    jobs: int = 1
    # None: the warm-up stage runs for max_epochs like the joint stage
    fhmm_epochs: int | None = None


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First and second moment estimates plus a shared step counter."""

    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.9, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``;
    returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm is not None and total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr,
    grad_clip: float | None = None,
) -> None:
    """One bias-corrected Adam update, in place.  ``lr`` is a float or a
    per-parameter-name dict (parameter groups share the step counter).
    Gradients are clipped to a global L2 norm first.  Weight decay is part
    of the loss, so none is applied here."""
    clip_gradients(grads, grad_clip)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step_lr = lr[name] if isinstance(lr, dict) else lr
        params[name] -= step_lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_at_epoch(base_lr: float, epoch: int, decay: float = 0.75, every: float = 45.0) -> float:
    """Continuously decayed learning rate: base * decay ** (epoch / every)."""
    return base_lr * decay ** (epoch / every)


def make_batches(corpus, batch_words: int, seed: int) -> list[list[int]]:
    """Shuffle sentence indexes with the given seed and pack them greedily
    into batches of at most ``batch_words`` tokens; a sentence longer than
    the budget forms its own batch."""
    if hasattr(corpus, "sentences"):
        lengths = [len(s) for s in corpus.sentences]
    else:
        lengths = [int(x) for x in corpus]
    order = np.random.default_rng(seed).permutation(len(lengths))
    batches: list[list[int]] = []
    current: list[int] = []
    current_words = 0
    for idx in order:
        n = lengths[idx]
        if current and current_words + n > batch_words:
            batches.append(current)
            current = []
            current_words = 0
        current.append(int(idx))
        current_words += n
    if current:
        batches.append(current)
    return batches


def add_weight_decay(params: dict[str, np.ndarray], lam: float,
                     grads: dict[str, np.ndarray]) -> float:
    """L2 term lam * sum ||p||^2 over the parameters present in ``grads``;
    adds 2*lam*p to each gradient and returns the loss contribution."""
    loss = 0.0
    for name in grads:
        arr = params[name]
        loss += lam * float((arr * arr).sum())
        grads[name] += 2.0 * lam * arr
    return loss


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    fingerprint: str
    epoch: int
    ll: float
    tensors: dict[str, np.ndarray]
    version: int = 1


def make_fingerprint(entries: dict) -> str:
    parts = []
    for key in sorted(entries):
        value = str(entries[key])
        if any(ch in value for ch in " ;=\t\n"):
            raise CheckpointError(f"fingerprint value for {key!r} contains a reserved character")
        parts.append(f"{key}={value}")
    return ";".join(parts)


def parse_fingerprint(fingerprint: str) -> dict[str, str]:
    entries = {}
    for pair in fingerprint.split(";"):
        key, sep, value = pair.partition("=")
        if not sep:
            raise CheckpointError(f"malformed fingerprint entry {pair!r}")
        entries[key] = value
    return entries


def _format_values(arr: np.ndarray) -> str:
    return " ".join(f"{x:.17g}" for x in arr.reshape(-1))


def save_checkpoint(ck: Checkpoint, path: str) -> None:
    """Text format: a header line ``CRFAE-CKPT 1 <fingerprint> <epoch> <LL>``
    followed by one line per tensor: name, shape (``d1`` or ``d1,d2``), then
    the row-major values with 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {ck.version} {ck.fingerprint} {ck.epoch} {ck.ll:.17g}\n")
        for name, arr in ck.tensors.items():
            if arr.ndim not in (1, 2):
                raise CheckpointError(f"tensor {name!r} must be 1-D or 2-D, got {arr.ndim}-D")
            shape = ",".join(str(d) for d in arr.shape)
            fh.write(f"{name} {shape} {_format_values(arr)}\n")


def load_checkpoint(path: str, expected_fingerprint: str | None = None,
                    override: bool = False) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(" ")
        if len(header) != 5 or header[0] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if header[1] != "1":
            raise CheckpointError(f"{path}: unsupported checkpoint version {header[1]}")
        fingerprint = header[2]
        epoch = int(header[3])
        ll = float(header[4])
        tensors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 3:
                raise CheckpointError(f"{path}:{lineno}: truncated tensor line")
            name, shape_str = parts[0], parts[1]
            shape = tuple(int(d) for d in shape_str.split(","))
            expected = int(np.prod(shape))
            if len(parts) - 2 != expected:
                raise CheckpointError(
                    f"{path}:{lineno}: tensor {name!r} expects {expected} values, got {len(parts) - 2}"
                )
            tensors[name] = np.array([float(x) for x in parts[2:]], dtype=np.float64).reshape(shape)
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        ours = parse_fingerprint(expected_fingerprint)
        theirs = parse_fingerprint(fingerprint)
        keys = sorted(
            k for k in set(ours) | set(theirs) if ours.get(k) != theirs.get(k)
        )
        message = f"{path}: fingerprint mismatch on keys: {', '.join(keys)}"
        if not override:
            raise CheckpointError(message)
        LOG.warning("%s (override requested, loading anyway)", message)
    return Checkpoint(fingerprint, epoch, ll, tensors)


def hmm_to_checkpoint(params: HmmParams, fingerprint: str, epoch: int, ll: float) -> Checkpoint:
    return Checkpoint(fingerprint, epoch, ll, dict(params.param_items()))


def fhmm_to_checkpoint(params: FhmmParams, fingerprint: str, epoch: int, ll: float) -> Checkpoint:
    return Checkpoint(fingerprint, epoch, ll, dict(params.param_items()))


def crfae_to_checkpoint(params: CrfAeParams, fingerprint: str, epoch: int, ll: float) -> Checkpoint:
    return Checkpoint(fingerprint, epoch, ll, dict(params.param_items()))


def model_from_checkpoint(ck: Checkpoint):
    """Rebuild (kind, params) from a checkpoint; ``kind`` is one of "hmm",
    "fhmm", "crfae"."""
    keys = parse_fingerprint(ck.fingerprint)
    kind = keys.get("model")
    t = ck.tensors
    if kind == "hmm":
        return kind, HmmParams(t["init_logits"], t["trans_logits"], t["emit_logits"])
    if kind == "fhmm":
        return kind, FhmmParams(t["init_logits"], t["trans_logits"], t["theta"])
    if kind == "crfae":
        mix = keys.get("mix", "all")
        config = EncoderConfig(
            num_tags=int(keys["tags"]),
            dim=int(keys["dim"]),
            num_layers=int(keys["layers"]),
            d_prime=int(keys["d_prime"]),
            use_minus=bool(int(keys["use_minus"])),
            mix_layers=None if mix == "all" else tuple(int(x) for x in mix.split("+")),
        )
        return kind, CrfAeParams(
            config=config,
            w_bottleneck=t["w_bottleneck"],
            b_bottleneck=t["b_bottleneck"],
            ln_in_gain=t["ln_in_gain"],
            ln_in_bias=t["ln_in_bias"],
            w_score=t["w_score"],
            b_score=t["b_score"],
            ln_score_gain=t["ln_score_gain"],
            ln_score_bias=t["ln_score_bias"],
            trans=t["trans"],
            start=t["start"],
            mix_logits=t["mix_logits"],
            gamma=t["gamma"],
            theta=t["theta"],
        )
    raise CheckpointError(f"unknown model kind {kind!r} in fingerprint")


# ---------------------------------------------------------------------------
# log-likelihood evaluation (no dropout, no regularizer)


def hmm_loglik(params: HmmParams, sentences) -> float:
    return sum(log_partition(hmm_lattice(params, s)) for s in sentences)


def fhmm_loglik(params: FhmmParams, sentences, feat_matrix, oov_features=None) -> float:
    table = fhmm_emission_table(params.theta, feat_matrix)
    total = 0.0
    log_trans = log_softmax(params.trans_logits, axis=1)
    log_init = log_softmax(params.init_logits)
    for sent in sentences:
        unary = emission_scores_for_sentence(params.theta, table, sent, oov_features)
        total += log_partition(SequenceLattice(unary, log_trans, log_init))
    return total


def crfae_loglik(params: CrfAeParams, pairs, feat_matrix, oov_features=None) -> float:
    """Data log-likelihood of the autoencoder: per sentence the log of the
    expected reconstruction probability, log M - log Z."""
    table = fhmm_emission_table(params.theta, feat_matrix)
    total = 0.0
    for sent, block in pairs:
        scores = encoder_unary_scores(block, params)
        dcol = emission_scores_for_sentence(params.theta, table, sent, oov_features)
        log_z = log_partition(SequenceLattice(scores, params.trans, params.start))
        log_m = log_partition(SequenceLattice(scores + dcol, params.trans, params.start))
        total += log_m - log_z
    return total


# ---------------------------------------------------------------------------
# stage training loops


@dataclass
class StageResult:
    params: object
    best_epoch: int
    best_ll: float
    history: list[tuple[str, int, float]] = field(default_factory=list)


def _copy_params(params) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in params.param_items().items()}


def _restore_params(params, saved: dict[str, np.ndarray]) -> None:
    for name, arr in params.param_items().items():
        arr[:] = saved[name]


def train_hmm(corpus: Corpus, num_tags: int, cfg: TrainConfig,
              dev_corpus: Corpus | None = None) -> StageResult:
    """Gradient-trained HMM baseline; returns the best-LL epoch parameters."""
    rng = np.random.default_rng(cfg.seed)
    params = HmmParams.init_random(num_tags, corpus.vocab.size, rng)
    state = AdamState(params.param_items(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    eval_corpus = dev_corpus if dev_corpus is not None else corpus
    eval_tokens = eval_corpus.n_tokens

    def data_ll() -> float:
        return hmm_loglik(params, eval_corpus.sentences) / eval_tokens

    history = [("hmm", 0, data_ll())]
    best = None
    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_at_epoch(cfg.lr_fhmm, epoch - 1, cfg.lr_decay, cfg.lr_decay_epochs)
        for batch_idx in make_batches(corpus, cfg.batch_words, int(rng.integers(2 ** 63 - 1))):
            batch = [corpus.sentences[i] for i in batch_idx]
            _, grads = hmm_neg_loglik(params, batch, cfg.jobs)
            add_weight_decay(params.param_items(), cfg.weight_decay, grads)
            adam_step(params.param_items(), grads, state, lr, cfg.grad_clip)
        ll = data_ll()
        history.append(("hmm", epoch, ll))
        if best is None or ll > best[1]:
            best = (epoch, ll, _copy_params(params))
    if best is None:  # max_epochs == 0: keep the random initialization
        return StageResult(params, 0, history[0][2], history)
    _restore_params(params, best[2])
    return StageResult(params, best[0], best[1], history)


def train_fhmm(corpus: Corpus, feat_matrix, num_tags: int, cfg: TrainConfig,
               dev_corpus: Corpus | None = None, oov_features=None) -> StageResult:
    rng = np.random.default_rng(cfg.seed)
    params = FhmmParams.init_random(num_tags, feat_matrix.shape[1], rng)
    state = AdamState(params.param_items(), cfg.beta1, cfg.beta2, cfg.adam_eps)
    eval_corpus = dev_corpus if dev_corpus is not None else corpus
    eval_tokens = eval_corpus.n_tokens

    def data_ll() -> float:
        return fhmm_loglik(params, eval_corpus.sentences, feat_matrix, oov_features) / eval_tokens

    history = [("fhmm", 0, data_ll())]
    best = None
    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_at_epoch(cfg.lr_fhmm, epoch - 1, cfg.lr_decay, cfg.lr_decay_epochs)
        for batch_idx in make_batches(corpus, cfg.batch_words, int(rng.integers(2 ** 63 - 1))):
            batch = [corpus.sentences[i] for i in batch_idx]
            _, grads = fhmm_neg_loglik(params, batch, feat_matrix, oov_features, cfg.jobs)
            add_weight_decay(params.param_items(), cfg.weight_decay, grads)
            adam_step(params.param_items(), grads, state, lr, cfg.grad_clip)
        ll = data_ll()
        history.append(("fhmm", epoch, ll))
        if best is None or ll > best[1]:
            best = (epoch, ll, _copy_params(params))
    if best is None:
        return StageResult(params, 0, history[0][2], history)
    _restore_params(params, best[2])
    return StageResult(params, best[0], best[1], history)


@dataclass
class PipelineResult:
    checkpoint: Checkpoint
    params: CrfAeParams
    history: list[tuple[str, int, float]]
    fhmm: FhmmParams | None
    best_epoch: int
    best_ll: float


def fhmm_pseudo_labels(params: FhmmParams, corpus: Corpus, feat_matrix,
                       oov_features=None) -> list[np.ndarray]:
    """1-best Viterbi predictions used as supervision for pretraining."""
    table = fhmm_emission_table(params.theta, feat_matrix)
    labels = []
    for sent in corpus.sentences:
        tags, _ = viterbi(fhmm_lattice(params, table, sent, oov_features))
        labels.append(tags)
    return labels


def run_pipeline(
    corpus: Corpus,
    feature_index: FeatureIndex,
    emb: EmbeddingReader,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    dev_corpus: Corpus | None = None,
    dev_emb: EmbeddingReader | None = None,
    fingerprint_extra: dict | None = None,
) -> PipelineResult:
    """Three-stage training.

    Stage 1 trains the feature-rich HMM from random initialization and emits
    Viterbi pseudo-labels.  Stage 2 copies its emission weights into the
    decoder and trains the encoder on the pseudo-labels for exactly
    ``pretrain_epochs`` epochs (the only stage where the scalar-mix weights
    move).  Stage 3 trains encoder and decoder jointly on the autoencoder
    loss with per-group learning rates, records data log-likelihood after
    every epoch on the dev split (the train split when absent), and returns
    the parameters of the best epoch.

    With ``pretrain_epochs=0`` and ``copy_decoder_weights=False`` the first
    two stages are skipped entirely and stage 3 starts from random
    initialization.
    """
    rng = np.random.default_rng(cfg.seed)
    feat_matrix = vocabulary_feature_matrix(corpus.vocab, feature_index)

    def oov_features(norm_word: str):
        return featurize_word(norm_word, feature_index).ids

    emb.load_index()
    if dev_corpus is not None and dev_emb is None:
        raise ModelError("dev corpus given without dev embeddings")
    eval_corpus = dev_corpus if dev_corpus is not None else corpus
    eval_emb = dev_emb if dev_corpus is not None else emb
    eval_tokens = eval_corpus.n_tokens

    def eval_pairs():
        if eval_emb is emb:
            return ((s, emb.read_at(i)) for i, s in enumerate(eval_corpus.sentences))
        return zip(eval_corpus.sentences, eval_emb)

    history: list[tuple[str, int, float]] = []
    need_fhmm = cfg.pretrain_epochs > 0 or cfg.copy_decoder_weights
    fhmm_result = None
    pseudo_labels = None
    if need_fhmm:
        stage_cfg = cfg
        if cfg.fhmm_epochs is not None:
            stage_cfg = replace(cfg, max_epochs=cfg.fhmm_epochs)
        fhmm_result = train_fhmm(corpus, feat_matrix, enc_cfg.num_tags, stage_cfg,
                                 dev_corpus, oov_features)
        history.extend(fhmm_result.history)
        pseudo_labels = fhmm_pseudo_labels(fhmm_result.params, corpus, feat_matrix,
                                           oov_features)

    params = CrfAeParams.init(enc_cfg, feat_matrix.shape[1], rng)
    if cfg.copy_decoder_weights:
        params.theta[:] = fhmm_result.params.theta

    def data_ll() -> float:
        return crfae_loglik(params, eval_pairs(), feat_matrix, oov_features) / eval_tokens

    history.append(("crfae", 0, data_ll()))

    # stage 2: supervised pretraining on pseudo-labels, scalar mix trainable
    if cfg.pretrain_epochs > 0:
        items = params.param_items()
        encoder_names = params.encoder_param_names()
        state = AdamState({n: items[n] for n in encoder_names}, cfg.beta1, cfg.beta2, cfg.adam_eps)
        for epoch in range(1, cfg.pretrain_epochs + 1):
            lr = lr_at_epoch(cfg.lr_pretrain, epoch - 1, cfg.lr_decay, cfg.lr_decay_epochs)
            for batch_idx in make_batches(corpus, cfg.batch_words, int(rng.integers(2 ** 63 - 1))):
                batch = [
                    (corpus.sentences[i], emb.read_at(i), pseudo_labels[i]) for i in batch_idx
                ]
                _, grads = crf_supervised_nll(batch, params, cfg.weight_decay,
                                              train_mode=True, dropout_rng=rng, jobs=cfg.jobs)
                adam_step(items, grads, state, lr, cfg.grad_clip)
            history.append(("pretrain", epoch, data_ll()))

    # stage 3: full autoencoder training, scalar mix frozen
    items = params.param_items()
    trainable = [n for n in items if n not in MIX_PARAMS]
    lr_groups_base = {
        n: (cfg.lr_decoder if n == "theta" else cfg.lr_encoder) for n in trainable
    }
    state = AdamState({n: items[n] for n in trainable}, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best = None
    for epoch in range(1, cfg.max_epochs + 1):
        decay = cfg.lr_decay ** ((epoch - 1) / cfg.lr_decay_epochs)
        lr = {n: base * decay for n, base in lr_groups_base.items()}
        for batch_idx in make_batches(corpus, cfg.batch_words, int(rng.integers(2 ** 63 - 1))):
            batch = [(corpus.sentences[i], emb.read_at(i)) for i in batch_idx]
            _, grads = crfae_loss(batch, params, feat_matrix, cfg.weight_decay,
                                  train_mode=True, dropout_rng=rng,
                                  oov_features=oov_features, jobs=cfg.jobs)
            for name in MIX_PARAMS:
                grads.pop(name, None)
            adam_step(items, grads, state, lr, cfg.grad_clip)
        ll = data_ll()
        history.append(("crfae", epoch, ll))
        if best is None or ll > best[1]:
            best = (epoch, ll, _copy_params(params))
    if best is not None:
        _restore_params(params, best[2])
        best_epoch, best_ll = best[0], best[1]
    else:  # max_epochs == 0: keep the pretrained parameters
        best_epoch, best_ll = 0, history[-1][2]

    fingerprint = crfae_fingerprint(params, corpus, feature_index, cfg, fingerprint_extra)
    ck = crfae_to_checkpoint(params, fingerprint, best_epoch, best_ll)
    return PipelineResult(ck, params, history,
                          fhmm_result.params if fhmm_result else None,
                          best_epoch, best_ll)


def crfae_fingerprint(params: CrfAeParams, corpus: Corpus, feature_index: FeatureIndex,
                      cfg: TrainConfig, extra: dict | None = None) -> str:
    enc = params.config
    entries = {
        "model": "crfae",
        "tags": enc.num_tags,
        "dim": enc.dim,
        "layers": enc.num_layers,
        "d_prime": enc.d_prime,
        "use_minus": int(enc.use_minus),
        "mix": "all" if enc.mix_layers is None else "+".join(str(i) for i in enc.mix_layers),
        "vocab": corpus.vocab.size,
        "features": feature_index.size,
        "mode": feature_index.config.mode,
        "language": feature_index.config.language,
        "cutoff": feature_index.config.cutoff,
        "suffix_rules": int(feature_index.config.apply_language_suffix_rules),
        "seed": cfg.seed,
    }
    entries.update(extra or {})
    return make_fingerprint(entries)


def hmm_fingerprint(num_tags: int, corpus: Corpus, cfg: TrainConfig) -> str:
    return make_fingerprint({
        "model": "hmm", "tags": num_tags, "vocab": corpus.vocab.size, "seed": cfg.seed,
    })


def fhmm_fingerprint(num_tags: int, corpus: Corpus, feature_index: FeatureIndex,
                     cfg: TrainConfig) -> str:
    return make_fingerprint({
        "model": "fhmm",
        "tags": num_tags,
        "vocab": corpus.vocab.size,
        "features": feature_index.size,
        "mode": feature_index.config.mode,
        "language": feature_index.config.language,
        "cutoff": feature_index.config.cutoff,
        "suffix_rules": int(feature_index.config.apply_language_suffix_rules),
        "seed": cfg.seed,
    })
