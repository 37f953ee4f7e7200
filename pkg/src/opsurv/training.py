"""Likelihood and ranking losses, their exact gradients, and Adam training.

Gradients are reverse-mode by hand through the full graph
MLP -> coefficients/weights -> densities and quadrature CDFs -> loss.
A CDF at time ``s`` is the quadratic form ``a^T G(s) a / |a|^2`` with the
quadrature Gram matrix ``G(s)``, which keeps both loss terms and their
vector-Jacobian products in closed form.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import SplitDataset
from .errors import ConfigError, NaNGradientError
from .kernels import gram_matrices, hermite_table, ranking_loss_and_vjp
from .model import (W_EPS, ModelConfig, NetworkParams, backward_batch, check_coefficients,
                    forward_batch, init_params)
from .quadrature import QuadratureRule

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
GRAD_CHECK_TOL = 1e-4


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 200
    learning_rate: float = 1e-3
    ll_weight: float = 1.0
    rank_weight: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.ll_weight < 0 or self.rank_weight < 0 or self.ll_weight + self.rank_weight <= 0:
            raise ConfigError("loss weights must be nonnegative with a positive sum")
        if self.batch_size < (2 if self.rank_weight > 0 else 1):
            raise ConfigError("batch_size must be >= 2 when the ranking loss is active")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")


@dataclass
class Batch:
    x: np.ndarray        # standardized covariates (B, F)
    s: np.ndarray        # scaled times (B,)
    events: np.ndarray   # (B,) 0 = censored

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.s = np.asarray(self.s, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.int64)

    def __len__(self):
        return len(self.s)


@dataclass
class LossResult:
    total: float
    likelihood: float
    ranking: float
    n_clamped: int = 0


def likelihood_from_outputs(coeffs, alphas, s, events, gram):
    """Negative log-likelihood of one batch given the network outputs.

    Returns ``(loss, d/d coeffs, d/d alphas, n_clamped)``. Log arguments
    below 1e-12 are clamped; clamped terms contribute no gradient.
    """
    d_c = np.zeros_like(coeffs)
    d_a = np.zeros_like(alphas)
    w = np.maximum(np.sum(coeffs * coeffs, axis=-1), W_EPS)   # (B, E)
    loss = 0.0
    n_clamped = 0

    i_ev = np.flatnonzero(events > 0)
    if i_ev.size:
        e = events[i_ev] - 1
        a = coeffs[i_ev, e]
        phi = hermite_table(s[i_ev], coeffs.shape[-1] - 1, weighted=True)
        p = np.sum(a * phi, axis=1)
        f = p * p / w[i_ev, e]
        arg = alphas[i_ev, e] * f
        ok = arg >= LOG_CLAMP
        n_clamped += int(np.count_nonzero(~ok))
        loss -= float(np.sum(np.log(np.where(ok, arg, LOG_CLAMP))))
        j, e_ok = i_ev[ok], e[ok]
        d_a[j, e_ok] -= 1.0 / alphas[j, e_ok]
        df = -1.0 / f[ok]
        d_c[j, e_ok] += (df / w[j, e_ok])[:, None] * (
            2.0 * p[ok, None] * phi[ok] - 2.0 * f[ok, None] * a[ok])

    i_c = np.flatnonzero(events == 0)
    if i_c.size:
        a = coeffs[i_c]                                    # (C, E, K)
        ga = np.einsum("ikl,iel->iek", gram[i_c], a)
        big_f = np.sum(a * ga, axis=-1) / w[i_c]          # (C, E)
        surv = 1.0 - np.sum(alphas[i_c] * big_f, axis=1)
        ok = surv >= LOG_CLAMP
        n_clamped += int(np.count_nonzero(~ok))
        loss -= float(np.sum(np.log(np.where(ok, surv, LOG_CLAMP))))
        j = i_c[ok]
        inv = 1.0 / surv[ok]
        d_a[j] += big_f[ok] * inv[:, None]
        d_f = alphas[j] * inv[:, None]
        d_c[j] += (d_f / w[j])[..., None] * (2.0 * ga[ok] - 2.0 * big_f[ok, :, None] * a[ok])
    return loss, d_c, d_a, n_clamped


def loss_and_gradients(params: NetworkParams, batch: Batch, cfg: TrainConfig,
                       rule: QuadratureRule, need_grad: bool = True):
    coeffs, alphas, cache = forward_batch(params, batch.x)
    check_coefficients(coeffs)
    gram = gram_matrices(batch.s, rule.nodes, rule.weights, params.config.max_degree)
    ll, dc_ll, da_ll, n_clamped = likelihood_from_outputs(coeffs, alphas, batch.s, batch.events, gram)
    rank, dc_rk, da_rk = ranking_loss_and_vjp(gram, coeffs, alphas, batch.s, batch.events, W_EPS)
    total = cfg.ll_weight * ll + cfg.rank_weight * rank
    result = LossResult(total, ll, rank, n_clamped)
    if not need_grad:
        return result, None
    d_c = cfg.ll_weight * dc_ll + cfg.rank_weight * dc_rk
    d_a = cfg.ll_weight * da_ll + cfg.rank_weight * da_rk
    grads = backward_batch(params, cache, d_c, d_a)
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NaNGradientError(name)
    return result, grads


def likelihood_loss(params, batch, rule) -> float:
    return loss_and_gradients(params, batch, TrainConfig(), rule, need_grad=False)[0].likelihood


def ranking_loss(params, batch, rule) -> float:
    return loss_and_gradients(params, batch, TrainConfig(), rule, need_grad=False)[0].ranking


def total_loss(params, batch, cfg, rule) -> float:
    return loss_and_gradients(params, batch, cfg, rule, need_grad=False)[0].total


def gradients(params, batch, cfg, rule) -> dict:
    return loss_and_gradients(params, batch, cfg, rule)[1]


# -- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(tensors: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new ``(tensors, state)``."""
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_t, new_m, new_v = {}, {}, {}
    for k in sorted(tensors):
        g = grads[k]
        m = b1 * state.m.get(k, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(k, 0.0) + (1.0 - b2) * (g * g)
        new_t[k] = tensors[k] - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        new_m[k], new_v[k] = m, v
    return new_t, AdamState(t, new_m, new_v)


# -- training loop ----------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_total: float
    train_ll: float
    train_rank: float
    val_total: float


@dataclass
class TrainResult:
    params: NetworkParams
    history: list
    best_epoch: int
    n_clamped: int = 0


def _batches(n, batch_size, order=None):
    idx = np.arange(n) if order is None else order
    for lo in range(0, n, batch_size):
        yield idx[lo:lo + batch_size]


def evaluate_loss(params, x, s, events, cfg, rule) -> LossResult:
    """Summed loss over consecutive minibatches (ranking pairs stay within a batch)."""
    acc = LossResult(0.0, 0.0, 0.0, 0)
    for b in _batches(len(s), cfg.batch_size):
        r, _ = loss_and_gradients(params, Batch(x[b], s[b], events[b]), cfg, rule, need_grad=False)
        acc = LossResult(acc.total + r.total, acc.likelihood + r.likelihood,
                         acc.ranking + r.ranking, acc.n_clamped + r.n_clamped)
    return acc


def train(dataset: SplitDataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
          progress=None) -> TrainResult:
    """Minibatch Adam; returns the parameters with the best validation loss."""
    train_cfg.validate()
    x, s, ev = dataset.prepared("train")
    if len(s) == 0:
        raise ConfigError("training split is empty")
    if not np.any(ev > 0):
        raise ConfigError("training split has no observed events")
    if int(ev.max()) > model_cfg.n_events:
        raise ConfigError(f"event label {int(ev.max())} exceeds n_events={model_cfg.n_events}")
    xv, sv, evv = dataset.prepared("validation")
    rule = model_cfg.rule

    init_seq, shuffle_seq = np.random.SeedSequence(train_cfg.seed).spawn(2)
    params = init_params(model_cfg, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    state = AdamState()
    best, best_loss, best_epoch = params.copy(), np.inf, 0
    history = []
    n_clamped = 0

    for epoch in range(1, train_cfg.epochs + 1):
        tot = ll = rk = 0.0
        for b in _batches(len(s), train_cfg.batch_size, shuffle_rng.permutation(len(s))):
            res, grads = loss_and_gradients(params, Batch(x[b], s[b], ev[b]), train_cfg, rule)
            tot += res.total
            ll += res.likelihood
            rk += res.ranking
            n_clamped += res.n_clamped
            tensors, state = adam_step(params.tensors, grads, state, train_cfg)
            params = NetworkParams(model_cfg, tensors)
        if len(sv):
            val = evaluate_loss(params, xv, sv, evv, train_cfg, rule).total
        else:
            val = evaluate_loss(params, x, s, ev, train_cfg, rule).total
        history.append(EpochLog(epoch, tot, ll, rk, val))
        if val < best_loss:
            best, best_loss, best_epoch = params.copy(), val, epoch
        if progress is not None:
            progress(history[-1])
    if n_clamped:
        log.info("log clamp engaged %d times during training", n_clamped)
    return TrainResult(best, history, best_epoch, n_clamped)


LOSS_LOG_COLUMNS = ("epoch", "train_total", "train_ll", "train_rank", "val_total")


def loss_log_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_LOG_COLUMNS)
    for h in history:
        w.writerow([h.epoch, repr(h.train_total), repr(h.train_ll), repr(h.train_rank), repr(h.val_total)])
    return buf.getvalue()


# -- gradient verification --------------------------------------------------

@dataclass
class GradCheckReport:
    seed: int
    max_rel_error: float
    worst: str
    n_checked: int
    passed: bool


def tiny_instance(seed: int, model_cfg: ModelConfig = None):
    """Small random network and batch used by :func:`grad_check`."""
    cfg = model_cfg or ModelConfig(n_features=3, n_events=2, max_degree=3, quad_order=8,
                                   hidden_sizes=(2, 2))
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    # spread the coefficients away from the initial Gaussian
    for k in params.tensors:
        if k.startswith("coeff.") and k.endswith(".bias") and params.tensors[k].size == cfg.n_events * cfg.n_coeffs:
            params.tensors[k] = params.tensors[k] + rng.uniform(-0.5, 0.5, params.tensors[k].shape)
    n = 4
    x = rng.standard_normal((n, cfg.n_features))
    s = np.sort(rng.uniform(0.3, 3.0, n))
    events = np.array([1, cfg.n_events, 0, int(rng.integers(0, cfg.n_events + 1))])
    events = events[rng.permutation(n)]
    events[0] = max(events[0], 1)     # earliest record has an event: admissible pairs exist
    return params, Batch(x, s, events)


def grad_check(model_cfg: ModelConfig = None, seed: int = 0, h: float = 1e-5,
               corrupt: bool = False) -> GradCheckReport:
    """Compare the analytic gradient with central differences at step ``h``.

    Relative error is ``|g - g_fd| / max(|g|, |g_fd|)`` over entries whose
    magnitude exceeds 1e-8. ``corrupt`` perturbs the analytic gradient as a
    negative control.
    """
    params, batch = tiny_instance(seed, model_cfg)
    cfg = TrainConfig()
    rule = params.config.rule
    _, grads = loss_and_gradients(params, batch, cfg, rule)
    if corrupt:
        k = sorted(grads)[0]
        grads[k] = grads[k] * 1.01 + 1e-3
    worst, worst_name, n_checked = 0.0, "", 0
    for name in sorted(params.tensors):
        base = params.tensors[name]
        for idx in np.ndindex(base.shape):
            vals = []
            for step in (h, -h):
                probe = params.copy()
                probe.tensors[name][idx] += step
                vals.append(total_loss(probe, batch, cfg, rule))
            fd = (vals[0] - vals[1]) / (2 * h)
            g = grads[name][idx]
            mag = max(abs(g), abs(fd))
            if mag <= 1e-8:
                continue
            n_checked += 1
            rel = abs(g - fd) / mag
            if rel > worst:
                worst, worst_name = rel, f"{name}{list(idx)}"
    return GradCheckReport(seed, float(worst), worst_name, n_checked, bool(worst < GRAD_CHECK_TOL))
