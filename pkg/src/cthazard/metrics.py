"""Censoring-aware evaluation metrics.

Provides the product-limit estimate of the censoring survival function
G(t), the time-dependent concordance index and Brier score with inverse
probability of censoring weights, their unweighted variants, and the
event-time percentiles used as evaluation horizons.  All estimators treat
tied times by letting events happen just before censorings.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, MetricUndefinedError

HORIZON_FRACTIONS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class CensoringEstimate:
    """Right-continuous step function G(t): KM estimate of censoring survival.

    ``times`` are the distinct observed times, ``values`` the estimate just
    after each time; G(0) = 1.
    """

    times: np.ndarray
    values: np.ndarray

    def evaluate(self, t) -> np.ndarray:
        """G(t), right-continuous (the step at t has already happened)."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")
        padded = np.concatenate([[1.0], self.values])
        return padded[idx]

    def evaluate_before(self, t) -> np.ndarray:
        """G(t-): the left limit, excluding any step exactly at t."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="left")
        padded = np.concatenate([[1.0], self.values])
        return padded[idx]


def _check_times_indicators(times, indicators):
    times = np.asarray(times, dtype=np.float64)
    indicators = np.asarray(indicators)
    if times.size == 0:
        raise InputError("empty input")
    if times.shape != indicators.shape:
        raise InputError(f"times shape {times.shape} != indicators shape {indicators.shape}")
    if np.any(times < 0) or np.any(~np.isfinite(times)):
        raise InputError("times must be finite and nonnegative")
    if not np.all(np.isin(indicators, (0, 1))):
        raise InputError("indicators must be 0 or 1")
    return times, indicators.astype(np.int64)


def km_censoring(times, indicators) -> CensoringEstimate:
    """Product-limit estimator of the censoring survival function.

    ``indicators`` are the usual event flags (1 = event); censorings are
    the "events" of G.  At tied times events are processed first, so a
    censoring at t competes against the at-risk set minus the deaths at t.
    """
    times, indicators = _check_times_indicators(times, indicators)
    order = np.argsort(times, kind="stable")
    t_sorted = times[order]
    d_sorted = indicators[order]
    unique_times, start = np.unique(t_sorted, return_index=True)
    n = times.size
    factors = np.ones(unique_times.size)
    for j, t0 in enumerate(unique_times):
        stop = start[j + 1] if j + 1 < unique_times.size else n
        deaths = int(d_sorted[start[j] : stop].sum())
        censored = int(stop - start[j] - deaths)
        at_risk = n - start[j] - deaths  # deaths at t leave before censorings compete
        if censored > 0:
            factors[j] = 0.0 if at_risk <= 0 else 1.0 - censored / at_risk
    return CensoringEstimate(times=unique_times, values=np.cumprod(factors))


def survival_km(times, indicators) -> CensoringEstimate:
    """Standard KM of the event distribution (flip indicators to reuse G's core)."""
    times, indicators = _check_times_indicators(times, indicators)
    return km_censoring(times, 1 - indicators)


def event_time_percentiles(times, indicators, fractions=HORIZON_FRACTIONS) -> np.ndarray:
    """Empirical quantiles of the uncensored event times (linear interpolation)."""
    times, indicators = _check_times_indicators(times, indicators)
    event_times = times[indicators == 1]
    if event_times.size == 0:
        raise InputError("no events: percentiles are undefined")
    return np.quantile(event_times, np.asarray(fractions, dtype=np.float64))


def ctd_ipcw(risk_scores, times, indicators, censoring: CensoringEstimate | None, horizon: float) -> float:
    """Time-dependent concordance at a horizon with IPCW pair weights.

    Comparable pairs are (i, j) with T_i < T_j, an event at i, T_i <= the
    horizon.  Each pair counts 1 if sample i has the larger risk score,
    0.5 on ties, and is weighted by G(T_i-)^-2 (weight 1 when
    ``censoring`` is None).
    """
    times, indicators = _check_times_indicators(times, indicators)
    risk_scores = np.asarray(risk_scores, dtype=np.float64)
    if risk_scores.shape != times.shape:
        raise InputError(f"risk scores shape {risk_scores.shape} != times shape {times.shape}")
    if np.any(~np.isfinite(risk_scores)):
        raise InputError("risk scores must be finite")
    numer = 0.0
    denom = 0.0
    for i in np.flatnonzero((indicators == 1) & (times <= horizon)):
        later = times > times[i]
        count = int(later.sum())
        if count == 0:
            continue
        if censoring is None:
            w = 1.0
        else:
            g = float(censoring.evaluate_before(times[i]))
            if g <= 0.0:
                continue  # no mass: pair is unobservable under censoring
            w = 1.0 / (g * g)
        higher = risk_scores[i] > risk_scores[later]
        tied = risk_scores[i] == risk_scores[later]
        numer += w * (higher.sum() + 0.5 * tied.sum())
        denom += w * count
    if denom == 0.0:
        raise MetricUndefinedError(f"no comparable pairs with positive weight at horizon {horizon!r}")
    return numer / denom


def brier_ipcw(predicted_survival, times, indicators, censoring: CensoringEstimate | None, horizon: float) -> float:
    """Weighted mean squared residual of S(horizon) against observed status.

    Samples with an event by the horizon contribute S^2 weighted by
    1/G(T-); samples past the horizon contribute (1-S)^2 weighted by
    1/G(horizon); samples censored before the horizon contribute 0.
    """
    times, indicators = _check_times_indicators(times, indicators)
    predicted_survival = np.asarray(predicted_survival, dtype=np.float64)
    if predicted_survival.shape != times.shape:
        raise InputError(
            f"predictions shape {predicted_survival.shape} != times shape {times.shape}"
        )
    if np.any(predicted_survival < 0) or np.any(predicted_survival > 1):
        raise InputError("predictions must lie in [0, 1]")
    total = 0.0
    for i in range(times.size):
        if times[i] <= horizon and indicators[i] == 1:
            if censoring is None:
                w = 1.0
            else:
                g = float(censoring.evaluate_before(times[i]))
                if g <= 0.0:
                    raise MetricUndefinedError(
                        f"censoring survival vanishes before event at t={times[i]!r} (horizon {horizon!r})"
                    )
                w = 1.0 / g
            total += w * predicted_survival[i] ** 2
        elif times[i] > horizon:
            if censoring is None:
                w = 1.0
            else:
                g = float(censoring.evaluate(horizon))
                if g <= 0.0:
                    raise MetricUndefinedError(f"censoring survival vanishes at horizon {horizon!r}")
                w = 1.0 / g
            total += w * (1.0 - predicted_survival[i]) ** 2
    return total / times.size


def plain_cindex(risk_scores, times, indicators, horizon: float) -> float:
    """Concordance with every pair weight set to 1."""
    return ctd_ipcw(risk_scores, times, indicators, None, horizon)


def plain_brier(predicted_scores, times, indicators, horizon: float) -> float:
    """Brier score with every weight set to 1."""
    return brier_ipcw(predicted_scores, times, indicators, None, horizon)


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    """Concordance and Brier per risk at each horizon fraction."""

    rows: list[dict] = field(default_factory=list)

    def add(self, risk: int, horizon_fraction: float, horizon_time: float, ctd: float, brier: float):
        self.rows.append(
            {
                "risk": int(risk),
                "horizon_fraction": float(horizon_fraction),
                "horizon_time": float(horizon_time),
                "ctd": float(ctd),
                "brier": float(brier),
            }
        )

    def value(self, risk: int, horizon_fraction: float, key: str) -> float:
        for row in self.rows:
            if row["risk"] == risk and row["horizon_fraction"] == horizon_fraction:
                return row[key]
        raise KeyError(f"no row for risk={risk}, horizon_fraction={horizon_fraction}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, fieldnames=["risk", "horizon_fraction", "horizon_time", "ctd", "brier"]
        )
        writer.writeheader()
        for row in self.rows:
            writer.writerow(
                {
                    "risk": row["risk"],
                    "horizon_fraction": repr(row["horizon_fraction"]),
                    "horizon_time": repr(row["horizon_time"]),
                    "ctd": repr(row["ctd"]),
                    "brier": repr(row["brier"]),
                }
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        report = cls()
        for row in csv.DictReader(io.StringIO(text)):
            report.add(
                risk=int(row["risk"]),
                horizon_fraction=float(row["horizon_fraction"]),
                horizon_time=float(row["horizon_time"]),
                ctd=float(row["ctd"]),
                brier=float(row["brier"]),
            )
        return report
