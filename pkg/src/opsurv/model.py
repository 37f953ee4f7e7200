"""The coefficient network and the time-continuous functions it defines.

Two MLP heads map covariates ``x`` to a coefficient matrix ``a`` of shape
``(E, J + 1)`` and to event weights ``alpha`` (softmax over ``E`` logits).
For cause ``e`` the density on the scaled time axis is

    f_e(t) = (sum_j a_je h_j(t))^2 exp(-t^2) / sum_j a_je^2

and ``F_e(t)`` is its Gauss-Legendre antiderivative from 0. Every time
argument in this module is on the scaled axis (see :class:`data.TimeScale`).
"""

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Standardizer, TimeScale
from .errors import (ConfigError, DataError, DegenerateDensityError, DomainError,
                     HazardUndefinedError, ShapeError)
from .hermite import MAX_DEGREE, BasisSpec
from .kernels import gram_matrices, hermite_table
from .quadrature import QuadratureRule, build_rule

# floor on W = |a|^2; rows reaching it are rejected first, so it never rescales
W_EPS = 1e-12
MIN_COEFF_NORM = 1e-6
HAZARD_FLOOR = 1e-9
FORMAT_NAME = "opsurv-model"
FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    n_features: int
    n_events: int = 1
    max_degree: int = 8
    quad_order: int = 20
    hidden_sizes: tuple = (32, 32)

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.n_features < 1:
            raise ConfigError("n_features must be positive")
        if self.n_events < 1:
            raise ConfigError("n_events must be positive")
        if not 0 <= self.max_degree <= MAX_DEGREE:
            raise ConfigError(f"max_degree must lie in [0, {MAX_DEGREE}]")
        if self.quad_order < 1:
            raise ConfigError("quad_order must be positive")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be positive")

    @property
    def n_coeffs(self) -> int:
        return self.max_degree + 1

    @property
    def basis(self) -> BasisSpec:
        return BasisSpec(self.max_degree)

    @property
    def rule(self) -> QuadratureRule:
        return build_rule(self.quad_order)

    def head_sizes(self, head: str):
        out = self.n_events * self.n_coeffs if head == "coeff" else self.n_events
        return [self.n_features, *self.hidden_sizes, out]


HEADS = ("coeff", "alpha")


@dataclass
class NetworkParams:
    """All trainable state, keyed ``"<head>.<layer>.weight|bias"``.

    Weights have shape ``(fan_in, fan_out)``; a layer computes ``x @ W + b``.
    """

    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def check(self):
        for head in HEADS:
            sizes = self.config.head_sizes(head)
            for i in range(len(sizes) - 1):
                w = self.tensors[f"{head}.{i}.weight"]
                b = self.tensors[f"{head}.{i}.bias"]
                if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                    raise ShapeError(f"layer {head}.{i} does not match the model config")
        for k, v in self.tensors.items():
            if not np.all(np.isfinite(v)):
                raise ShapeError(f"non-finite entries in {k}")


def init_params(config: ModelConfig, rng) -> NetworkParams:
    """Uniform(+-1/sqrt(fan_in)) layers; the coefficient head's output bias
    is 1 for every degree-0 coefficient and 0 elsewhere, so each density
    starts close to the unit Gaussian."""
    rng = np.random.default_rng(rng)
    tensors = {}
    for head in HEADS:
        sizes = config.head_sizes(head)
        last = len(sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            tensors[f"{head}.{i}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            if i < last:
                tensors[f"{head}.{i}.bias"] = rng.uniform(-bound, bound, size=fan_out)
            else:
                bias = np.zeros(fan_out)
                if head == "coeff":
                    bias[::config.n_coeffs] = 1.0
                tensors[f"{head}.{i}.bias"] = bias
    return NetworkParams(config, tensors)


# -- forward / backward through the heads -----------------------------------

def _mlp_forward(tensors, head, n_layers, x):
    acts = [x]
    h = x
    for i in range(n_layers):
        z = h @ tensors[f"{head}.{i}.weight"] + tensors[f"{head}.{i}.bias"]
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return h, acts


def _mlp_backward(tensors, head, n_layers, acts, d_out, grads):
    d = d_out
    for i in reversed(range(n_layers)):
        grads[f"{head}.{i}.weight"] = acts[i].T @ d
        grads[f"{head}.{i}.bias"] = d.sum(axis=0)
        if i > 0:
            d = (d @ tensors[f"{head}.{i}.weight"].T) * (acts[i] > 0)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    coeff_acts: list
    alpha_acts: list
    alphas: np.ndarray


def forward_batch(params: NetworkParams, x):
    """Coefficients ``(B, E, J+1)`` and weights ``(B, E)`` for rows of ``x``,
    plus the cache needed by :func:`backward_batch`."""
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.n_features:
        raise ShapeError(f"expected covariates of shape (n, {cfg.n_features}), got {x.shape}")
    n_layers = len(cfg.hidden_sizes) + 1
    out, c_acts = _mlp_forward(params.tensors, "coeff", n_layers, x)
    logits, a_acts = _mlp_forward(params.tensors, "alpha", n_layers, x)
    alphas = softmax(logits)
    coeffs = out.reshape(x.shape[0], cfg.n_events, cfg.n_coeffs)
    return coeffs, alphas, ForwardCache(c_acts, a_acts, alphas)


def backward_batch(params: NetworkParams, cache: ForwardCache, d_coeffs, d_alphas):
    """Pull gradients w.r.t. coefficients and weights back to every layer."""
    n_layers = len(params.config.hidden_sizes) + 1
    grads = {}
    d_out = d_coeffs.reshape(d_coeffs.shape[0], -1)
    _mlp_backward(params.tensors, "coeff", n_layers, cache.coeff_acts, d_out, grads)
    a = cache.alphas
    d_logits = a * (d_alphas - np.sum(a * d_alphas, axis=1, keepdims=True))
    _mlp_backward(params.tensors, "alpha", n_layers, cache.alpha_acts, d_logits, grads)
    return grads


@dataclass(frozen=True)
class CoefficientOutput:
    coeffs: np.ndarray          # (E, J+1)
    alphas: np.ndarray          # (E,)

    @property
    def n_events(self) -> int:
        return self.coeffs.shape[0]


def check_coefficients(coeffs):
    norms = np.sqrt(np.sum(np.asarray(coeffs) ** 2, axis=-1))
    if np.any(norms <= MIN_COEFF_NORM):
        raise DegenerateDensityError("coefficient row with norm <= 1e-6; density undefined")


def forward(params: NetworkParams, x) -> CoefficientOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("forward takes one feature vector; use forward_batch for many")
    coeffs, alphas, _ = forward_batch(params, x[None, :])
    check_coefficients(coeffs[0])
    return CoefficientOutput(coeffs[0], alphas[0])


# -- function-valued outputs ------------------------------------------------

def _times(t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("times must be finite and >= 0")
    return arr


def _row(coeffs):
    a = np.asarray(coeffs, dtype=np.float64)
    if a.ndim != 1 or a.size - 1 > MAX_DEGREE:
        raise ShapeError("expected one coefficient row of length <= 21")
    if np.sqrt(a @ a) <= MIN_COEFF_NORM:
        raise DegenerateDensityError("all-zero coefficient row")
    return a


def density(coeffs, t):
    """``f(t)`` for one coefficient row; vectorised over ``t``."""
    a = _row(coeffs)
    t = np.asarray(t, dtype=np.float64)
    phi = hermite_table(t.ravel(), a.size - 1, weighted=True)
    p = phi @ a
    out = (p * p / max(a @ a, W_EPS)).reshape(t.shape)
    return out if out.ndim else float(out)


def cdf(coeffs, t, rule: QuadratureRule):
    """Quadrature antiderivative of :func:`density` from 0 to ``t >= 0``."""
    a = _row(coeffs)
    t = _times(t)
    g = gram_matrices(t.ravel(), rule.nodes, rule.weights, a.size - 1)
    out = (np.einsum("k,mkl,l->m", a, g, a) / max(a @ a, W_EPS)).reshape(t.shape)
    return out if out.ndim else float(out)


def _event_index(out: CoefficientOutput, e: int) -> int:
    if not 1 <= e <= out.n_events:
        raise DomainError(f"event index {e} outside 1..{out.n_events}")
    return e - 1


def cif(out: CoefficientOutput, e: int, t, rule: QuadratureRule):
    i = _event_index(out, e)
    return out.alphas[i] * cdf(out.coeffs[i], t, rule)


def survival(out: CoefficientOutput, t, rule: QuadratureRule):
    return 1.0 - sum(cif(out, e, t, rule) for e in range(1, out.n_events + 1))


def hazard(out: CoefficientOutput, t, rule: QuadratureRule):
    """``-d/dt log S(t)`` in closed form: mixture density over survival."""
    s = np.asarray(survival(out, t, rule))
    if np.any(s <= HAZARD_FLOOR):
        raise HazardUndefinedError("survival below 1e-9; hazard undefined")
    num = sum(out.alphas[e] * np.asarray(density(out.coeffs[e], t))
              for e in range(out.n_events))
    val = num / s
    return val if val.ndim else float(val)


def cdf_matrix(coeffs, times, rule: QuadratureRule, chunk: int = 256):
    """``F`` for rows of ``coeffs`` (N, K) at ``times`` (T,): shape (N, T)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    times = _times(times).ravel()
    w = np.maximum(np.sum(coeffs * coeffs, axis=1), W_EPS)
    out = np.empty((coeffs.shape[0], times.size))
    for lo in range(0, times.size, chunk):
        g = gram_matrices(times[lo:lo + chunk], rule.nodes, rule.weights, coeffs.shape[1] - 1)
        out[:, lo:lo + chunk] = np.einsum("nk,tkl,nl->nt", coeffs, g, coeffs, optimize=True)
    return out / w[:, None]


def density_matrix(coeffs, times):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    phi = hermite_table(np.asarray(times, dtype=np.float64).ravel(), coeffs.shape[1] - 1, weighted=True)
    p = coeffs @ phi.T
    return p * p / np.maximum(np.sum(coeffs * coeffs, axis=1), W_EPS)[:, None]


# -- fitted model bundle and persistence ------------------------------------

@dataclass
class FittedModel:
    """Network parameters plus the frozen input transforms they were fitted with.

    Methods here take raw covariates and raw times.
    """

    params: NetworkParams
    scale: TimeScale
    standardizer: Standardizer
    feature_names: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    def outputs(self, x_raw):
        x_raw = np.asarray(x_raw, dtype=np.float64)
        if x_raw.ndim != 2 or x_raw.shape[1] != self.config.n_features:
            raise DataError(f"model expects {self.config.n_features} features, "
                            f"data has {x_raw.shape[-1] if x_raw.ndim else 0}")
        coeffs, alphas, _ = forward_batch(self.params, self.standardizer.transform(x_raw))
        check_coefficients(coeffs)
        return coeffs, alphas

    def cif(self, x_raw, t_raw, e: int):
        """CIF of cause ``e`` (1-based), shape ``(n_rows, n_times)``."""
        coeffs, alphas = self.outputs(x_raw)
        s = self.scale.scale(np.atleast_1d(t_raw))
        return alphas[:, [e - 1]] * cdf_matrix(coeffs[:, e - 1], s, self.config.rule)

    def curves(self, x_raw, t_raw):
        """Survival, per-cause CIFs (E, N, T) and hazard (NaN where undefined).

        The hazard is per raw time unit.
        """
        coeffs, alphas = self.outputs(x_raw)
        s = self.scale.scale(np.atleast_1d(t_raw))
        rule = self.config.rule
        cifs = np.stack([alphas[:, [e]] * cdf_matrix(coeffs[:, e], s, rule)
                         for e in range(self.config.n_events)])
        surv = 1.0 - cifs.sum(axis=0)
        mix = sum(alphas[:, [e]] * density_matrix(coeffs[:, e], s)
                  for e in range(self.config.n_events))
        with np.errstate(divide="ignore", invalid="ignore"):
            haz = np.where(surv > HAZARD_FLOOR, mix / surv, np.nan) * self.scale.factor
        return surv, cifs, haz

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": {**asdict(self.config), "hidden_sizes": list(self.config.hidden_sizes)},
            "time_scale": {"t_max": self.scale.t_max, "quad_order": self.scale.quad_order,
                           "top_node": self.scale.top_node},
            "standardizer": {"mean": self.standardizer.mean.tolist(),
                             "std": self.standardizer.std.tolist()},
            "feature_names": list(self.feature_names),
            "meta": dict(self.meta),
            "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                        for k, v in sorted(self.params.tensors.items())},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_NAME:
            raise DataError("not an opsurv model file")
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported model format version {d.get('version')!r}")
        cfg = ModelConfig(**d["config"])
        tensors = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                   for k, v in d["tensors"].items()}
        params = NetworkParams(cfg, tensors)
        params.check()
        ts = d["time_scale"]
        scale = TimeScale(float(ts["t_max"]), int(ts["quad_order"]), float(ts["top_node"]))
        st = d["standardizer"]
        std = Standardizer(np.array(st["mean"], dtype=np.float64), np.array(st["std"], dtype=np.float64))
        return cls(params, scale, std, list(d.get("feature_names", [])), dict(d.get("meta", {})))

    def dumps(self) -> str:
        # json writes floats with repr(), the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def save(self, path):
        atomic_write_text(path, self.dumps())

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read model file {path}: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed model file ({exc})") from exc
        return cls.from_dict(d)


def atomic_write_text(path, text: str):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
