"""Survival datasets: CSV ingestion, time scaling, splitting, synthetic data."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .quadrature import build_rule

log = logging.getLogger(__name__)

TRAIN_FRACTION = 0.64
VALIDATION_FRACTION = 0.16
# every scaled quadrature node of the largest observed time lands on this value
SCALED_HORIZON = 5.0


@dataclass(frozen=True)
class SurvivalRecord:
    covariates: np.ndarray
    time: float
    event: int          # 0 = censored, 1..E = cause


@dataclass
class SurvivalData:
    """Column-oriented collection of survival records."""

    x: np.ndarray               # (n, n_features)
    time: np.ndarray            # (n,)
    event: np.ndarray           # (n,) int, 0 = censored
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            self.x = self.x.reshape(len(self.time), -1)
        self.time = np.asarray(self.time, dtype=np.float64)
        self.event = np.asarray(self.event, dtype=np.int64)
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.x.shape[1])]

    def __len__(self):
        return len(self.time)

    def __getitem__(self, i):
        return SurvivalRecord(self.x[i], float(self.time[i]), int(self.event[i]))

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "SurvivalData":
        return SurvivalData(self.x[idx], self.time[idx], self.event[idx], list(self.feature_names))


def load_csv(path, n_events=None) -> SurvivalData:
    """Read ``duration``, ``event`` and numeric feature columns.

    Errors carry the 1-based line number of the offending row.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        if "duration" not in header or "event" not in header:
            raise DataError(f"{path}: header must contain 'duration' and 'event' columns")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        i_dur, i_ev = header.index("duration"), header.index("event")
        feat_idx = [i for i, h in enumerate(header) if h not in ("duration", "event")]
        if not feat_idx:
            raise DataError(f"{path}: no feature columns")

        xs, ts, es = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = float(row[i_dur])
                ev_f = float(row[i_ev])
                x = [float(row[i]) for i in feat_idx]
            except ValueError as exc:
                raise DataError(f"{path}, line {lineno}: non-numeric or missing value ({exc})") from None
            if not all(map(math.isfinite, [t, *x])):
                raise DataError(f"{path}, line {lineno}: non-finite value")
            if t < 0:
                raise DataError(f"{path}, line {lineno}: negative duration {t}")
            if ev_f != int(ev_f) or ev_f < 0 or (n_events is not None and ev_f > n_events):
                limit = f"0..{n_events}" if n_events is not None else "a nonnegative integer"
                raise DataError(f"{path}, line {lineno}: event label {row[i_ev]!r} is not {limit}")
            xs.append(x)
            ts.append(t)
            es.append(int(ev_f))
    x = np.array(xs, dtype=np.float64).reshape(len(ts), len(feat_idx))
    return SurvivalData(x, np.array(ts), np.array(es, dtype=np.int64), [header[i] for i in feat_idx])


def write_csv(fh, data: SurvivalData):
    """Write ``data`` in the loader's schema to an open text stream."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["duration", "event", *data.feature_names])
    for t, e, x in zip(data.time, data.event, data.x):
        w.writerow([repr(float(t)), int(e), *(repr(float(v)) for v in x)])


@dataclass(frozen=True)
class TimeScale:
    """Linear map of raw times so the largest time's quadrature nodes end at 5."""

    t_max: float
    quad_order: int
    top_node: float

    @property
    def factor(self) -> float:
        return (1.0 / self.t_max) * (2.0 * SCALED_HORIZON / (self.top_node + 1.0))

    def scale(self, t):
        return np.asarray(t, dtype=np.float64) * self.factor

    def unscale(self, s):
        return np.asarray(s, dtype=np.float64) / self.factor

    def n_beyond(self, t) -> int:
        return int(np.count_nonzero(np.asarray(t) > self.t_max))


def fit_time_scale(times, quad_order: int) -> TimeScale:
    times = np.asarray(times, dtype=np.float64)
    t_max = float(times.max()) if times.size else 0.0
    if not t_max > 0:
        raise DataError("cannot fit a time scale: all observed times are zero")
    return TimeScale(t_max, int(quad_order), build_rule(int(quad_order)).top_node)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x):
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


@dataclass
class SplitDataset:
    train: SurvivalData
    validation: SurvivalData
    test: SurvivalData
    scale: TimeScale
    standardizer: Standardizer

    def prepared(self, part: str):
        """Standardized covariates, scaled times and labels of one split."""
        data = getattr(self, part)
        if part == "test" and (n := self.scale.n_beyond(data.time)):
            log.warning("%d test records exceed the training horizon %.6g", n, self.scale.t_max)
        return self.standardizer.transform(data.x), self.scale.scale(data.time), data.event


def split_indices(n: int, seed: int):
    if n < 10:
        raise DataError(f"need at least 10 records to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(TRAIN_FRACTION * n))
    n_val = int(math.floor(VALIDATION_FRACTION * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split(data: SurvivalData, seed: int, quad_order: int = 20) -> SplitDataset:
    """Seeded 64/16/20 partition; the rounding remainder goes to test.

    Time scale and feature standardization are fitted on train only.
    """
    tr, va, te = split_indices(len(data), seed)
    train = data.take(tr)
    return SplitDataset(train, data.take(va), data.take(te),
                        fit_time_scale(train.time, quad_order),
                        Standardizer.fit(train.x))


# -- synthetic competing risks ----------------------------------------------

# cause-specific log-hazard coefficients; features past the table width get 0
SYNTHETIC_BETAS = np.array([
    [1.6, -1.2, 0.8, 0.0, 0.5, -0.3],
    [-0.9, 0.3, 1.4, 1.2, 0.0, 0.6],
])


@dataclass(frozen=True)
class GroundTruth:
    """Closed-form cause-specific exponential model behind a synthetic set."""

    betas: np.ndarray           # (E, n_features)
    censor_max: float           # uniform censoring on [0, censor_max]; inf = none

    def rates(self, x):
        return np.exp(np.atleast_2d(x) @ self.betas.T)

    def cif(self, x, t, event: int):
        """``P(T <= t, cause = event | x)`` for rows of ``x`` and times ``t``;
        returns shape ``(n_rows, n_times)``."""
        lam = self.rates(x)
        total = lam.sum(axis=1, keepdims=True)
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))[None, :]
        return lam[:, [event - 1]] / total * -np.expm1(-total * t)

    def to_dict(self):
        return {"betas": self.betas.tolist(),
                "censor_max": None if math.isinf(self.censor_max) else self.censor_max,
                "hazard": "exponential, rate_e = exp(beta_e . x)",
                "censoring": "uniform(0, censor_max), independent"}


def _calibrate_censoring(latent, rate):
    """Bound ``c`` with ``mean(min(latent / c, 1)) == rate``, by bisection."""
    lo, hi = 0.0, float(latent.max()) / max(rate, 1e-12) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(latent / mid, 1.0).mean() > rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic(n: int, n_features: int = 6, n_events: int = 2, seed: int = 0,
                       censor_rate: float = 0.3):
    """Seeded synthetic competing-risks data with known CIFs."""
    if n_events not in (1, 2):
        raise DataError("synthetic generator supports 1 or 2 causes")
    if not 0.0 <= censor_rate <= 0.9:
        raise DataError("censor_rate must lie in [0, 0.9]")
    if n < 1 or n_features < 1:
        raise DataError("need n >= 1 and n_features >= 1")
    betas = np.zeros((n_events, n_features))
    width = min(n_features, SYNTHETIC_BETAS.shape[1])
    betas[:, :width] = SYNTHETIC_BETAS[:n_events, :width]

    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, n_features))
    rates = np.exp(x @ betas.T)
    latent = rng.exponential(1.0, size=(n, n_events)) / rates
    t_event = latent.min(axis=1)
    cause = latent.argmin(axis=1) + 1

    u = rng.uniform(0.0, 1.0, size=n)
    if censor_rate > 0:
        c_max = _calibrate_censoring(t_event, censor_rate)
        c = u * c_max
        censored = c < t_event
    else:
        c_max = math.inf
        c = np.full(n, np.inf)
        censored = np.zeros(n, dtype=bool)
    time = np.where(censored, c, t_event)
    event = np.where(censored, 0, cause)
    return SurvivalData(x, time, event), GroundTruth(betas, c_max)
