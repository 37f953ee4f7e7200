"""Censoring-aware evaluation: concordance, IPCW Brier scores, Kaplan-Meier.

Functions here work on plain arrays. Predictions come in as CIF values;
``cif_matrix[i, k]`` denotes subject ``i``'s CIF at subject ``k``'s observed
time, which is what the time-dependent concordance compares.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MetricUndefinedError
from .kernels import concordance_counts

QUANTILES = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class KaplanMeierCurve:
    event_times: np.ndarray
    survival_values: np.ndarray

    def _steps(self):
        return np.concatenate([[1.0], self.survival_values])

    def __call__(self, t):
        """Right-continuous value ``S(t)``."""
        return self._steps()[np.searchsorted(self.event_times, t, side="right")]

    def left(self, t):
        """Left limit ``S(t-)``."""
        return self._steps()[np.searchsorted(self.event_times, t, side="left")]


def km_estimate(times, flags) -> KaplanMeierCurve:
    """Product-limit estimate; ``flags`` marks which times count as events."""
    times = np.asarray(times, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if times.size == 0:
        raise DataError("Kaplan-Meier estimate needs at least one observation")
    if times.shape != flags.shape:
        raise DataError("times and flags differ in length")
    uniq, deaths = np.unique(times[flags], return_counts=True)
    at_risk = times.size - np.searchsorted(np.sort(times), uniq, side="left")
    return KaplanMeierCurve(uniq, np.cumprod(1.0 - deaths / at_risk))


def _ratio(concordant, comparable):
    if comparable == 0:
        raise MetricUndefinedError("no comparable pairs")
    return float(concordant) / comparable


def harrell_c_index(risk_scores, times, event_flags) -> float:
    """Pairs ``(m, n)`` with an event at ``m`` and ``t_m < t_n``; ties in risk count 1/2."""
    risk = np.asarray(risk_scores, dtype=np.float64)
    n = risk.size
    return _ratio(*concordance_counts(np.broadcast_to(risk[:, None], (n, n)), times,
                                      np.asarray(event_flags, dtype=bool)))


def td_c_index(cif_matrix, times, events, event: int, horizon: float = math.inf) -> float:
    """Time-dependent concordance for ``event`` among cases with ``t_m <= horizon``.

    Subject ``m`` (cause ``event`` at ``t_m``) and any ``n`` with ``t_n > t_m``
    are concordant when ``CIF(t_m | x_m) > CIF(t_m | x_n)``.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    case = (events == event) & (times <= horizon)
    return _ratio(*concordance_counts(cif_matrix, times, case))


def ipcw_weights(times, events, t, censor_km: KaplanMeierCurve):
    """Weights ``1/G(t_i-)`` for events by ``t``, ``1/G(t)`` for subjects
    still at risk after ``t``, and 0 for subjects censored by ``t``."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    past = (times <= t) & (events > 0)
    future = times > t
    g_past = censor_km.left(times)
    g_t = float(censor_km(t))
    if np.any(past & (g_past <= 0)) or (np.any(future) and g_t <= 0):
        raise MetricUndefinedError(f"censoring survival is zero where a weight is needed (t={t})")
    w = np.zeros(times.shape)
    w[past] = 1.0 / g_past[past]
    w[future] = 1.0 / g_t if np.any(future) else 0.0
    return w


def brier_at(cif_at_t, times, events, event: int, t: float, censor_km: KaplanMeierCurve) -> float:
    """IPCW Brier score of cause ``event`` at time ``t``, averaged over all subjects."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    outcome = ((times <= t) & (events == event)).astype(np.float64)
    w = ipcw_weights(times, events, t, censor_km)
    return float(np.mean(w * (outcome - np.asarray(cif_at_t, dtype=np.float64)) ** 2))


def integrate_normalized(values, grid) -> float:
    """Trapezoid integral of ``values`` over ``grid`` divided by its span."""
    grid = np.asarray(grid, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise MetricUndefinedError("integration grid needs >= 2 increasing points")
    area = np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(grid))
    return float(area / (grid[-1] - grid[0]))


def integrated_brier(cif_grid, times, events, event: int, grid, censor_km) -> float:
    """``cif_grid[i, g]`` is subject ``i``'s CIF at ``grid[g]``."""
    scores = [brier_at(cif_grid[:, g], times, events, event, t, censor_km)
              for g, t in enumerate(grid)]
    return integrate_normalized(scores, grid)


def event_time_quantiles(times, events, q: float) -> float:
    """Nearest-rank quantile of the uncensored times."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    obs = np.sort(np.asarray(times, dtype=np.float64)[np.asarray(events) > 0])
    if obs.size == 0:
        raise DataError("no uncensored records to take quantiles of")
    return float(obs[math.ceil(q * obs.size) - 1])


def default_brier_grid(times, n_points: int = 100):
    lo, hi = np.percentile(np.asarray(times, dtype=np.float64), [1, 99])
    return np.linspace(lo, hi, n_points)


# -- report -----------------------------------------------------------------

@dataclass
class EventMetrics:
    event: int
    td_c_index: float
    td_c_q: tuple           # at the 25/50/75% event-time quantiles
    brier_q: tuple
    integrated_brier: float


@dataclass
class MetricsReport:
    quantile_times: tuple
    events: list = field(default_factory=list)

    COLUMNS = ("event", "td_c_index", "integrated_brier",
               "td_c_q25", "td_c_q50", "td_c_q75",
               "brier_q25", "brier_q50", "brier_q75")

    def rows(self):
        for m in self.events:
            yield (m.event, m.td_c_index, m.integrated_brier, *m.td_c_q, *m.brier_q)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows():
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return buf.getvalue()

    def format_table(self) -> str:
        head = ("Event", "td-C Index", "Integrated Brier Score",
                "td-C Index 25th", "td-C Index 50th", "td-C Index 75th",
                "Brier Score 25th", "Brier Score 50th", "Brier Score 75th")
        widths = [max(len(h), 6) for h in head]
        lines = [" | ".join(h.rjust(wd) for h, wd in zip(head, widths))]
        lines.append("-+-".join("-" * wd for wd in widths))
        for row in self.rows():
            cells = [str(row[0])] + [f"{v:.3f}" for v in row[1:]]
            lines.append(" | ".join(c.rjust(wd) for c, wd in zip(cells, widths)))
        q = ", ".join(f"{t:.6g}" for t in self.quantile_times)
        lines.append(f"event-time quantiles (25/50/75%): {q}")
        return "\n".join(lines)


def _or_nan(fn, *args):
    try:
        return fn(*args)
    except MetricUndefinedError:
        return math.nan


def evaluate_predictions(cif_fn, times, events, n_events: int, grid=None) -> MetricsReport:
    """Full metric suite.

    ``cif_fn(e, t)`` returns the ``(n_subjects, len(t))`` CIF matrix of cause
    ``e`` at times ``t``, in the same units as ``times``.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=np.int64)
    if times.size == 0:
        raise DataError("cannot evaluate on an empty dataset")
    qt = tuple(event_time_quantiles(times, events, q) for q in QUANTILES)
    censor_km = km_estimate(times, events == 0)
    grid = default_brier_grid(times) if grid is None else np.asarray(grid, dtype=np.float64)
    report = MetricsReport(qt)
    for e in range(1, n_events + 1):
        at_obs = cif_fn(e, times)
        at_q = cif_fn(e, np.array(qt))
        report.events.append(EventMetrics(
            event=e,
            td_c_index=_or_nan(td_c_index, at_obs, times, events, e),
            td_c_q=tuple(_or_nan(td_c_index, at_obs, times, events, e, t) for t in qt),
            brier_q=tuple(_or_nan(brier_at, at_q[:, i], times, events, e, t, censor_km)
                          for i, t in enumerate(qt)),
            integrated_brier=_or_nan(integrated_brier, cif_fn(e, grid), times, events, e,
                                     grid, censor_km),
        ))
    return report
