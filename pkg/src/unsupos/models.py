"""Sequence models for tag induction.

Three model families share the lattice machinery:

* ``HmmParams``: a first-order HMM with unconstrained logits that are
  softmax-normalized on use, trained by direct gradient descent on the
  marginal likelihood.
* ``FhmmParams``: the same chain but emissions come from a log-linear model
  over hand-crafted word features, normalized across the training
  vocabulary.
* ``CrfAeParams``: a CRF autoencoder.  The encoder scores tags from
  contextual embeddings (scalar mix -> neighbor differences -> layer norm ->
  bottleneck MLP -> normalized tag scores, with transition and start
  parameters); the decoder reconstructs each word independently from its tag
  with the feature-rich emission model.  The loss of a sentence is

      log Z(x) - log sum_y exp(S(x, y)) * prod_i p(x_i | y_i)

  i.e. the negative log of the expected reconstruction probability under the
  encoder posterior, computed as the difference of two Forward passes over
  the encoder lattice and the joint lattice.

All gradients are exact and hand-written: lattice score gradients are
posterior expectations, and the chain rule is applied explicitly through the
encoder and the emission softmax.  Words outside the trained vocabulary are
reconstructed by scoring their features against the training normalizer
without extending the vocabulary.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .corpus import Sentence
from .lattice import SequenceLattice, forward_backward, sequence_score, viterbi


class ModelError(ValueError):
    """Raised for shape mismatches and unusable model inputs."""


# ---------------------------------------------------------------------------
# softmax helpers


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def log_softmax_backward(logits: np.ndarray, grad: np.ndarray, axis: int = -1) -> np.ndarray:
    """Chain rule through s = log_softmax(z): dz = g - softmax(z) * sum(g)."""
    p = softmax(logits, axis=axis)
    return grad - p * grad.sum(axis=axis, keepdims=True)


def _map_jobs(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(item) for item in items]


# ---------------------------------------------------------------------------
# emission model shared by the FHMM and the autoencoder decoder


@dataclass
class EmissionTable:
    """log p(word | tag) over the training vocabulary, rows normalized."""

    log_probs: np.ndarray  # (Y, V)
    log_norm: np.ndarray  # (Y,)


def fhmm_emission_table(theta: np.ndarray, feat_matrix: sparse.csr_matrix) -> EmissionTable:
    """Normalize per-tag feature scores over the vocabulary:
    log p(v | y) = theta_y . f(v) - logsumexp_v' theta_y . f(v')."""
    if theta.shape[1] != feat_matrix.shape[1]:
        raise ModelError(
            f"theta has {theta.shape[1]} features, matrix has {feat_matrix.shape[1]}"
        )
    scores = feat_matrix.dot(theta.T).T  # (Y, V)
    m = scores.max(axis=1)
    log_norm = m + np.log(np.exp(scores - m[:, None]).sum(axis=1))
    return EmissionTable(scores - log_norm[:, None], log_norm)


def emission_scores_for_sentence(
    theta: np.ndarray,
    table: EmissionTable,
    sent: Sentence,
    oov_features=None,
) -> np.ndarray:
    """(n, Y) matrix of log p(x_i | y).  Out-of-vocabulary tokens are scored
    through ``oov_features`` (a callable mapping a normalized word to feature
    ids) against the training normalizer."""
    vocab_size = table.log_probs.shape[1]
    ids = np.asarray(sent.word_ids, dtype=np.int64)
    in_vocab = ids < vocab_size
    out = np.empty((len(ids), theta.shape[0]))
    if in_vocab.any():
        out[in_vocab] = table.log_probs[:, ids[in_vocab]].T
    for i in np.nonzero(~in_vocab)[0]:
        if oov_features is None:
            raise ModelError(f"out-of-vocabulary token {sent.norm_words[i]!r} without a featurizer")
        fids = list(oov_features(sent.norm_words[i]))
        out[i] = theta[:, fids].sum(axis=1) - table.log_norm
    return out


class _DecoderGrad:
    """Accumulates upstream gradients w.r.t. log p(x_i | y) columns and turns
    them into a gradient for theta at the end (kept-word scatter plus the
    normalizer's expected-feature term)."""

    def __init__(self, num_tags: int, vocab_size: int):
        self.vocab_size = vocab_size
        self.g_vocab = np.zeros((num_tags, vocab_size))
        self.g_sum = np.zeros(num_tags)
        self.oov: list[tuple[np.ndarray, tuple[int, ...]]] = []

    def add_sentence(self, sent: Sentence, grad: np.ndarray, oov_features=None) -> None:
        for i, wid in enumerate(sent.word_ids):
            if wid < self.vocab_size:
                self.g_vocab[:, wid] += grad[i]
            else:
                self.oov.append((grad[i].copy(), tuple(oov_features(sent.norm_words[i]))))
        self.g_sum += grad.sum(axis=0)

    def finish(self, table: EmissionTable, feat_matrix: sparse.csr_matrix) -> np.ndarray:
        grad_theta = feat_matrix.T.dot(self.g_vocab.T).T  # (Y, F)
        for gvec, fids in self.oov:
            grad_theta[:, list(fids)] += gvec[:, None]
        expected = feat_matrix.T.dot(np.exp(table.log_probs).T).T  # (Y, F)
        grad_theta -= self.g_sum[:, None] * expected
        return grad_theta


# ---------------------------------------------------------------------------
# HMM


@dataclass
class HmmParams:
    init_logits: np.ndarray  # (Y,)
    trans_logits: np.ndarray  # (Y, Y)
    emit_logits: np.ndarray  # (Y, V)

    @classmethod
    def init_random(cls, num_tags: int, vocab_size: int, rng: np.random.Generator) -> "HmmParams":
        return cls(
            init_logits=rng.uniform(-0.1, 0.1, size=num_tags),
            trans_logits=rng.uniform(-0.1, 0.1, size=(num_tags, num_tags)),
            emit_logits=rng.uniform(-0.1, 0.1, size=(num_tags, vocab_size)),
        )

    @property
    def num_tags(self) -> int:
        return self.init_logits.shape[0]

    def param_items(self) -> dict[str, np.ndarray]:
        return {
            "init_logits": self.init_logits,
            "trans_logits": self.trans_logits,
            "emit_logits": self.emit_logits,
        }


def hmm_lattice(params: HmmParams, sent: Sentence) -> SequenceLattice:
    """Lattice whose partition function is the HMM marginal p(x).  Tokens
    outside the trained vocabulary get a flat 1/V emission score."""
    log_emit = log_softmax(params.emit_logits, axis=1)
    return SequenceLattice(
        _hmm_unary(params, log_emit, sent),
        log_softmax(params.trans_logits, axis=1),
        log_softmax(params.init_logits),
    )


def _hmm_unary(params: HmmParams, log_emit: np.ndarray, sent: Sentence) -> np.ndarray:
    vocab_size = params.emit_logits.shape[1]
    ids = np.asarray(sent.word_ids, dtype=np.int64)
    unary = np.empty((len(ids), params.num_tags))
    in_vocab = ids < vocab_size
    if in_vocab.any():
        unary[in_vocab] = log_emit[:, ids[in_vocab]].T
    unary[~in_vocab] = -np.log(vocab_size)
    return unary


def hmm_neg_loglik(params: HmmParams, batch: list[Sentence], jobs: int = 1):
    """Negative marginal log-likelihood of a batch and its exact gradient
    (posterior expectations pushed back through the row softmaxes)."""
    log_init = log_softmax(params.init_logits)
    log_trans = log_softmax(params.trans_logits, axis=1)
    log_emit = log_softmax(params.emit_logits, axis=1)
    vocab_size = params.emit_logits.shape[1]

    def work(sent: Sentence):
        lat = SequenceLattice(_hmm_unary(params, log_emit, sent), log_trans, log_init)
        return (sent, *forward_backward(lat))

    loss = 0.0
    g_init = np.zeros_like(log_init)
    g_trans = np.zeros_like(log_trans)
    g_emit = np.zeros_like(log_emit)
    for sent, log_z, unary_post, pair_post in _map_jobs(work, batch, jobs):
        loss -= log_z
        g_init -= unary_post[0]
        if len(sent) > 1:
            g_trans -= pair_post.sum(axis=0)
        for i, wid in enumerate(sent.word_ids):
            if wid < vocab_size:
                g_emit[:, wid] -= unary_post[i]
    grads = {
        "init_logits": log_softmax_backward(params.init_logits, g_init),
        "trans_logits": log_softmax_backward(params.trans_logits, g_trans, axis=1),
        "emit_logits": log_softmax_backward(params.emit_logits, g_emit, axis=1),
    }
    return loss, grads


# ---------------------------------------------------------------------------
# feature-rich HMM


@dataclass
class FhmmParams:
    init_logits: np.ndarray  # (Y,)
    trans_logits: np.ndarray  # (Y, Y)
    theta: np.ndarray  # (Y, F)

    @classmethod
    def init_random(cls, num_tags: int, num_features: int, rng: np.random.Generator) -> "FhmmParams":
        return cls(
            init_logits=rng.uniform(-0.1, 0.1, size=num_tags),
            trans_logits=rng.uniform(-0.1, 0.1, size=(num_tags, num_tags)),
            theta=rng.uniform(-0.1, 0.1, size=(num_tags, num_features)),
        )

    @property
    def num_tags(self) -> int:
        return self.init_logits.shape[0]

    def param_items(self) -> dict[str, np.ndarray]:
        return {
            "init_logits": self.init_logits,
            "trans_logits": self.trans_logits,
            "theta": self.theta,
        }


def fhmm_lattice(
    params: FhmmParams,
    table: EmissionTable,
    sent: Sentence,
    oov_features=None,
) -> SequenceLattice:
    return SequenceLattice(
        emission_scores_for_sentence(params.theta, table, sent, oov_features),
        log_softmax(params.trans_logits, axis=1),
        log_softmax(params.init_logits),
    )


def fhmm_neg_loglik(
    params: FhmmParams,
    batch: list[Sentence],
    feat_matrix: sparse.csr_matrix,
    oov_features=None,
    jobs: int = 1,
):
    """Negative marginal log-likelihood of the feature-rich HMM.  The
    emission normalizer is computed once per call from the current theta."""
    table = fhmm_emission_table(params.theta, feat_matrix)
    log_init = log_softmax(params.init_logits)
    log_trans = log_softmax(params.trans_logits, axis=1)

    def work(sent: Sentence):
        unary = emission_scores_for_sentence(params.theta, table, sent, oov_features)
        lat = SequenceLattice(unary, log_trans, log_init)
        return (sent, *forward_backward(lat))

    loss = 0.0
    g_init = np.zeros_like(log_init)
    g_trans = np.zeros_like(log_trans)
    dec = _DecoderGrad(params.num_tags, table.log_probs.shape[1])
    for sent, log_z, unary_post, pair_post in _map_jobs(work, batch, jobs):
        loss -= log_z
        g_init -= unary_post[0]
        if len(sent) > 1:
            g_trans -= pair_post.sum(axis=0)
        dec.add_sentence(sent, -unary_post, oov_features)
    grads = {
        "init_logits": log_softmax_backward(params.init_logits, g_init),
        "trans_logits": log_softmax_backward(params.trans_logits, g_trans, axis=1),
        "theta": dec.finish(table, feat_matrix),
    }
    return loss, grads


# ---------------------------------------------------------------------------
# CRF autoencoder


@dataclass(frozen=True)
class EncoderConfig:
    num_tags: int
    dim: int  # embedding dimension d (even)
    num_layers: int  # layers entering the scalar mix (K')
    d_prime: int = 5
    dropout: float = 0.33
    leaky_slope: float = 0.01
    use_minus: bool = True
    mix_layers: tuple[int, ...] | None = None  # indexes into the file's layers

    def __post_init__(self) -> None:
        if self.dim % 2 != 0 or self.dim < 2:
            raise ModelError(f"dim must be even and positive, got {self.dim}")
        if self.mix_layers is not None and len(self.mix_layers) != self.num_layers:
            raise ModelError("mix_layers length must equal num_layers")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must be in [0, 1)")


_LN_EPS = 1e-5

# parameter names excluded from L2 regularization
L2_EXCLUDED = ("ln_in_gain", "ln_in_bias", "ln_score_gain", "ln_score_bias")
# parameters trainable only during supervised pretraining
MIX_PARAMS = ("mix_logits", "gamma")
DECODER_PARAMS = ("theta",)


@dataclass
class CrfAeParams:
    config: EncoderConfig
    w_bottleneck: np.ndarray  # (d, d')
    b_bottleneck: np.ndarray  # (d',)
    ln_in_gain: np.ndarray  # (d,)
    ln_in_bias: np.ndarray  # (d,)
    w_score: np.ndarray  # (d', Y)
    b_score: np.ndarray  # (Y,)
    ln_score_gain: np.ndarray  # (Y,)
    ln_score_bias: np.ndarray  # (Y,)
    trans: np.ndarray  # (Y, Y)
    start: np.ndarray  # (Y,)
    mix_logits: np.ndarray  # (K',)
    gamma: np.ndarray  # (1,)
    theta: np.ndarray  # (Y, F)

    @classmethod
    def init(cls, config: EncoderConfig, num_features: int, rng: np.random.Generator) -> "CrfAeParams":
        """Weight matrices ~ U(-0.1, 0.1); biases, transitions and theta
        start at zero; layer-norm gains at one; gamma at one."""
        y, d, dp = config.num_tags, config.dim, config.d_prime
        return cls(
            config=config,
            w_bottleneck=rng.uniform(-0.1, 0.1, size=(d, dp)),
            b_bottleneck=np.zeros(dp),
            ln_in_gain=np.ones(d),
            ln_in_bias=np.zeros(d),
            w_score=rng.uniform(-0.1, 0.1, size=(dp, y)),
            b_score=np.zeros(y),
            ln_score_gain=np.ones(y),
            ln_score_bias=np.zeros(y),
            trans=np.zeros((y, y)),
            start=np.zeros(y),
            mix_logits=np.zeros(config.num_layers),
            gamma=np.ones(1),
            theta=np.zeros((y, num_features)),
        )

    @property
    def num_tags(self) -> int:
        return self.config.num_tags

    def param_items(self) -> dict[str, np.ndarray]:
        return {
            "w_bottleneck": self.w_bottleneck,
            "b_bottleneck": self.b_bottleneck,
            "ln_in_gain": self.ln_in_gain,
            "ln_in_bias": self.ln_in_bias,
            "w_score": self.w_score,
            "b_score": self.b_score,
            "ln_score_gain": self.ln_score_gain,
            "ln_score_bias": self.ln_score_bias,
            "trans": self.trans,
            "start": self.start,
            "mix_logits": self.mix_logits,
            "gamma": self.gamma,
            "theta": self.theta,
        }

    def encoder_param_names(self) -> tuple[str, ...]:
        return tuple(name for name in self.param_items() if name not in DECODER_PARAMS)


def _zero_grads(params: CrfAeParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.param_items().items()}


def _zero_encoder_grads(params: CrfAeParams) -> dict[str, np.ndarray]:
    items = params.param_items()
    return {name: np.zeros_like(items[name]) for name in params.encoder_param_names()}


def _layernorm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def _layernorm_backward(dout: np.ndarray, cache):
    xhat, inv, gain = cache
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    dxhat = dout * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _minus_forward(r: np.ndarray) -> np.ndarray:
    h = r.shape[1] // 2
    m = r.copy()
    m[1:, :h] -= r[:-1, :h]
    m[:-1, h:] -= r[1:, h:]
    return m


def _minus_backward(dm: np.ndarray) -> np.ndarray:
    h = dm.shape[1] // 2
    dr = dm.copy()
    dr[:-1, :h] -= dm[1:, :h]
    dr[1:, h:] -= dm[:-1, h:]
    return dr


def _dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(shape) >= rate).astype(np.float64) / (1.0 - rate)


def _encoder_forward(
    block: np.ndarray,
    params: CrfAeParams,
    train_mode: bool,
    rng: np.random.Generator | None,
):
    cfg = params.config
    layers = np.asarray(block, dtype=np.float64)
    if layers.ndim != 3:
        raise ModelError(f"expected a (K, n, d) embedding block, got shape {block.shape}")
    if cfg.mix_layers is not None:
        layers = layers[list(cfg.mix_layers)]
    if layers.shape[0] != cfg.num_layers:
        raise ModelError(f"{layers.shape[0]} embedding layers, config expects {cfg.num_layers}")
    if layers.shape[2] != cfg.dim:
        raise ModelError(f"embedding dim {layers.shape[2]}, config expects {cfg.dim}")
    if train_mode and rng is None:
        raise ModelError("train mode requires a dropout generator")

    w = softmax(params.mix_logits)
    mixed = np.tensordot(w, layers, axes=1)  # (n, d)
    gamma = float(params.gamma[0])
    r = gamma * mixed
    m = _minus_forward(r) if cfg.use_minus else r
    mask_m = _dropout_mask(m.shape, cfg.dropout, rng) if train_mode and cfg.dropout > 0 else None
    m_d = m * mask_m if mask_m is not None else m
    ln1, ln1_cache = _layernorm_forward(m_d, params.ln_in_gain, params.ln_in_bias)
    z1 = ln1 @ params.w_bottleneck + params.b_bottleneck  # (n, d')
    c = np.where(z1 > 0, z1, cfg.leaky_slope * z1)
    mask_c = _dropout_mask(c.shape, cfg.dropout, rng) if train_mode and cfg.dropout > 0 else None
    c_d = c * mask_c if mask_c is not None else c
    z2 = c_d @ params.w_score + params.b_score  # (n, Y)
    scores, ln2_cache = _layernorm_forward(z2, params.ln_score_gain, params.ln_score_bias)
    cache = (layers, w, mixed, gamma, mask_m, ln1_cache, ln1, z1, mask_c, c_d, ln2_cache)
    return scores, cache


def _encoder_backward(dscores: np.ndarray, cache, params: CrfAeParams, grads: dict) -> None:
    cfg = params.config
    layers, w, mixed, gamma, mask_m, ln1_cache, ln1, z1, mask_c, c_d, ln2_cache = cache
    dz2, dgain2, dbias2 = _layernorm_backward(dscores, ln2_cache)
    grads["ln_score_gain"] += dgain2
    grads["ln_score_bias"] += dbias2
    grads["w_score"] += c_d.T @ dz2
    grads["b_score"] += dz2.sum(axis=0)
    dc = dz2 @ params.w_score.T
    if mask_c is not None:
        dc = dc * mask_c
    dz1 = dc * np.where(z1 > 0, 1.0, cfg.leaky_slope)
    grads["w_bottleneck"] += ln1.T @ dz1
    grads["b_bottleneck"] += dz1.sum(axis=0)
    dln1 = dz1 @ params.w_bottleneck.T
    dm, dgain1, dbias1 = _layernorm_backward(dln1, ln1_cache)
    grads["ln_in_gain"] += dgain1
    grads["ln_in_bias"] += dbias1
    if mask_m is not None:
        dm = dm * mask_m
    dr = _minus_backward(dm) if cfg.use_minus else dm
    grads["gamma"][0] += (dr * mixed).sum()
    dmixed = gamma * dr
    dw = np.tensordot(layers, dmixed, axes=([1, 2], [0, 1]))  # (K',)
    grads["mix_logits"] += w * (dw - (w * dw).sum())


def encoder_unary_scores(
    block: np.ndarray,
    params: CrfAeParams,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Per-position tag scores (n, Y) of the encoder.  Dropout (on the
    differenced representation and on the bottleneck output) is applied only
    in train mode."""
    scores, _ = _encoder_forward(block, params, train_mode, rng)
    return scores


def _l2_term(params: CrfAeParams, names, lam: float, grads: dict) -> float:
    loss = 0.0
    items = params.param_items()
    for name in names:
        if name in L2_EXCLUDED:
            continue
        arr = items[name]
        loss += lam * float((arr * arr).sum())
        grads[name] += 2.0 * lam * arr
    return loss


def _draw_seeds(rng: np.random.Generator | None, count: int):
    if rng is None:
        return [None] * count
    return [int(s) for s in rng.integers(0, 2 ** 63 - 1, size=count)]


def crfae_loss(
    batch: list[tuple[Sentence, np.ndarray]],
    params: CrfAeParams,
    feat_matrix: sparse.csr_matrix,
    lam: float,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
    oov_features=None,
    jobs: int = 1,
):
    """Autoencoder loss of a batch plus exact gradients for all parameters.

    Per sentence the loss is log Z (encoder lattice) minus the log partition
    of the joint lattice whose unary scores add log p(x_i | y); the upstream
    gradient of the encoder scores is the difference of the two lattices'
    posteriors.  An L2 penalty ``lam * ||params||^2`` (layer-norm parameters
    excluded) is added once per call.
    """
    table = fhmm_emission_table(params.theta, feat_matrix)
    seeds = _draw_seeds(dropout_rng if train_mode else None, len(batch))

    def work(item):
        (sent, block), seed = item
        rng = np.random.default_rng(seed) if seed is not None else None
        scores, cache = _encoder_forward(block, params, train_mode, rng)
        dcol = emission_scores_for_sentence(params.theta, table, sent, oov_features)
        log_z, up_e, pp_e = forward_backward(SequenceLattice(scores, params.trans, params.start))
        log_m, up_j, pp_j = forward_backward(
            SequenceLattice(scores + dcol, params.trans, params.start)
        )
        local = _zero_encoder_grads(params)
        _encoder_backward(up_e - up_j, cache, params, local)
        if len(sent) > 1:
            local["trans"] += pp_e.sum(axis=0) - pp_j.sum(axis=0)
        local["start"] += up_e[0] - up_j[0]
        return sent, log_z - log_m, local, -up_j

    loss = 0.0
    grads = _zero_grads(params)
    dec = _DecoderGrad(params.num_tags, table.log_probs.shape[1])
    for sent, sent_loss, local, g_dcol in _map_jobs(work, list(zip(batch, seeds)), jobs):
        loss += sent_loss
        for name in params.encoder_param_names():
            grads[name] += local[name]
        dec.add_sentence(sent, g_dcol, oov_features)
    grads["theta"] = dec.finish(table, feat_matrix)
    loss += _l2_term(params, list(params.param_items()), lam, grads)
    return loss, grads


def crf_supervised_nll(
    batch: list[tuple[Sentence, np.ndarray, np.ndarray]],
    params: CrfAeParams,
    lam: float,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
    jobs: int = 1,
):
    """Supervised CRF negative log-likelihood against given label sequences
    (used for pretraining on pseudo-labels), plus ``lam * ||phi||^2`` over
    the encoder parameters only."""
    seeds = _draw_seeds(dropout_rng if train_mode else None, len(batch))

    def work(item):
        (sent, block, labels), seed = item
        labels = np.asarray(labels, dtype=np.int64)
        rng = np.random.default_rng(seed) if seed is not None else None
        scores, cache = _encoder_forward(block, params, train_mode, rng)
        lat = SequenceLattice(scores, params.trans, params.start)
        log_z, up, pp = forward_backward(lat)
        gold = sequence_score(lat, labels)
        d_unary = up.copy()
        d_unary[np.arange(len(labels)), labels] -= 1.0
        local = _zero_encoder_grads(params)
        _encoder_backward(d_unary, cache, params, local)
        if len(labels) > 1:
            d_trans = pp.sum(axis=0)
            np.add.at(d_trans, (labels[:-1], labels[1:]), -1.0)
            local["trans"] += d_trans
        local["start"] += up[0]
        local["start"][labels[0]] -= 1.0
        return log_z - gold, local

    loss = 0.0
    grads = _zero_encoder_grads(params)
    encoder_names = params.encoder_param_names()
    for sent_loss, local in _map_jobs(work, list(zip(batch, seeds)), jobs):
        loss += sent_loss
        for name in encoder_names:
            grads[name] += local[name]
    loss += _l2_term(params, encoder_names, lam, grads)
    return loss, grads


def joint_decode(
    sent: Sentence,
    block: np.ndarray,
    params: CrfAeParams,
    table: EmissionTable,
    oov_features=None,
) -> np.ndarray:
    """Most probable tag sequence under encoder and decoder jointly:
    Viterbi over unary scores s(x, y_i) + log p(x_i | y_i)."""
    scores = encoder_unary_scores(block, params)
    dcol = emission_scores_for_sentence(params.theta, table, sent, oov_features)
    tags, _ = viterbi(SequenceLattice(scores + dcol, params.trans, params.start))
    return tags


def encoder_decode(sent_block: np.ndarray, params: CrfAeParams) -> np.ndarray:
    """Viterbi over the encoder lattice alone."""
    scores = encoder_unary_scores(sent_block, params)
    tags, _ = viterbi(SequenceLattice(scores, params.trans, params.start))
    return tags
