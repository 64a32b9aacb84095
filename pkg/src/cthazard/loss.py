"""Continuous-time negative log-likelihood of censored event data.

For each sample the likelihood pairs the hazard at the observed time
(events only) with the trapezoid-approximated integral of the hazard from
0 to the observed time.  The batch is flattened so that every grid point of
every sample is one row of a single forward pass; the loss is then a
masked sum over the flattened hazard matrix, which keeps the whole thing
differentiable through the graph engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .discretization import MIN_EVENT_TIME, TimeGrid, trapezoid_weights
from .exceptions import InputError, NumericalError
from .model import HazardNetwork, hazard_graph

__all__ = [
    "LikelihoodBatch",
    "make_batch",
    "uniform_batch",
    "attach_hazards",
    "single_risk_nll",
    "multi_risk_nll",
    "model_loss",
]


@dataclass
class LikelihoodBatch:
    """Per-sample likelihood inputs plus their flattened row layout.

    ``hazards`` holds the (rows, risks) hazard evaluations at every grid
    point of every sample: either a graph node (differentiable) or a plain
    positive array (fixed values, e.g. in tests).
    """

    covariates: np.ndarray
    event_times: np.ndarray
    labels: np.ndarray
    grids: list[TimeGrid] | None  # None for the vectorized uniform layout
    risks: int
    flat_covariates: np.ndarray
    flat_times: np.ndarray
    offsets: np.ndarray
    anchor_rows: np.ndarray
    integral_weights: np.ndarray
    hazards: object | None = None

    @property
    def n(self) -> int:
        return self.event_times.size

    @property
    def event_indicator(self) -> np.ndarray:
        return (self.labels > 0).astype(np.int64)


def make_batch(covariates, event_times, labels, grids, risks: int) -> LikelihoodBatch:
    """Assemble the flattened likelihood layout for a batch of samples."""
    covariates = np.asarray(covariates, dtype=np.float64)
    event_times = np.asarray(event_times, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = event_times.size
    if covariates.ndim != 2 or covariates.shape[0] != n or labels.shape != (n,) or len(grids) != n:
        raise InputError("covariates, event_times, labels and grids must agree on the sample count")
    if risks < 1:
        raise InputError(f"risks must be >= 1, got {risks}")
    if np.any(labels < 0) or np.any(labels > risks):
        bad = int(labels[(labels < 0) | (labels > risks)][0])
        raise InputError(f"label {bad} outside {{0..{risks}}}")

    lengths = np.array([len(g) for g in grids])
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    flat_covariates = np.repeat(covariates, lengths, axis=0)
    flat_times = np.concatenate([g.points for g in grids])
    anchor_rows = np.array([offsets[i] + grids[i].anchor for i in range(n)])
    integral_weights = np.concatenate([trapezoid_weights(g, upto=g.anchor) for g in grids])
    for i, g in enumerate(grids):
        anchor_value = g.points[g.anchor]
        target = max(event_times[i], MIN_EVENT_TIME)
        if not np.isclose(anchor_value, target, rtol=1e-9, atol=MIN_EVENT_TIME):
            raise InputError(
                f"sample {i}: grid anchor {anchor_value!r} does not match observed time {event_times[i]!r}"
            )
    return LikelihoodBatch(
        covariates=covariates,
        event_times=event_times,
        labels=labels,
        grids=list(grids),
        risks=int(risks),
        flat_covariates=flat_covariates,
        flat_times=flat_times,
        offsets=offsets,
        anchor_rows=anchor_rows,
        integral_weights=integral_weights,
    )


def uniform_batch(covariates, event_times, labels, m: int, risks: int) -> LikelihoodBatch:
    """Vectorized equivalent of :func:`make_batch` over equal-spaced per-sample grids.

    Produces the same flattened layout as building one per-sample grid per
    row (up to float roundoff in the interior points) without the
    per-sample Python loop; the training hot path uses this for the
    per-sample scheme.  ``grids`` is left as None.
    """
    covariates = np.asarray(covariates, dtype=np.float64)
    event_times = np.asarray(event_times, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = event_times.size
    if covariates.ndim != 2 or covariates.shape[0] != n or labels.shape != (n,):
        raise InputError("covariates, event_times and labels must agree on the sample count")
    if m < 2:
        raise InputError(f"need at least 2 grid points, got m={m}")
    if risks < 1:
        raise InputError(f"risks must be >= 1, got {risks}")
    if np.any(labels < 0) or np.any(labels > risks):
        bad = int(labels[(labels < 0) | (labels > risks)][0])
        raise InputError(f"label {bad} outside {{0..{risks}}}")
    if np.any(event_times < 0) or np.any(~np.isfinite(event_times)):
        raise InputError("event times must be finite and nonnegative")
    clamped = np.maximum(event_times, MIN_EVENT_TIME)
    delta = clamped / (m - 1)
    points = np.arange(m)[None, :] * delta[:, None]
    points[:, -1] = clamped  # exact endpoint, as linspace assigns it
    offsets = np.arange(n + 1) * m
    w = np.full(m, 1.0)
    w[0] = w[-1] = 0.5
    return LikelihoodBatch(
        covariates=covariates,
        event_times=event_times,
        labels=labels,
        grids=None,
        risks=int(risks),
        flat_covariates=np.repeat(covariates, m, axis=0),
        flat_times=points.ravel(),
        offsets=offsets,
        anchor_rows=offsets[:-1] + (m - 1),
        integral_weights=(delta[:, None] * w[None, :]).ravel(),
    )


def attach_hazards(batch: LikelihoodBatch, hazards) -> LikelihoodBatch:
    """Bind hazard evaluations (graph node or positive array) to the batch."""
    value = hazards.value if isinstance(hazards, ad.Node) else np.asarray(hazards, dtype=np.float64)
    expected = (batch.flat_times.size, batch.risks)
    if value.ndim == 1:
        value = value.reshape(-1, 1)
        if not isinstance(hazards, ad.Node):
            hazards = value
    if value.shape != expected:
        raise InputError(f"hazards shape {value.shape} != {expected}")
    if not isinstance(hazards, ad.Node) and np.any(value <= 0.0):
        raise NumericalError("hazard evaluations must be strictly positive")
    batch.hazards = hazards
    return batch


def _nll_node(batch: LikelihoodBatch) -> ad.Node:
    if batch.hazards is None:
        raise InputError("batch has no hazard evaluations attached")
    h = batch.hazards if isinstance(batch.hazards, ad.Node) else ad.Constant(batch.hazards)
    n, k = batch.n, batch.risks
    mask = np.zeros((batch.flat_times.size, k))
    uncensored = batch.labels > 0
    mask[batch.anchor_rows[uncensored], batch.labels[uncensored] - 1] = 1.0
    integral = ad.mul(h, ad.Constant(batch.integral_weights[:, None])).sum()
    log_term = ad.mul(ad.log(h), ad.Constant(mask)).sum()
    return ad.mul(integral - log_term, ad.Constant(1.0 / (n * k)))


def single_risk_nll(batch: LikelihoodBatch) -> ad.Node:
    """Mean negative log-likelihood for a single-risk batch (differentiable scalar)."""
    if batch.risks != 1:
        raise InputError(f"single-risk loss requires risks == 1, got {batch.risks}")
    return _nll_node(batch)


def multi_risk_nll(batch: LikelihoodBatch, risks: int) -> ad.Node:
    """Mean cause-specific negative log-likelihood, averaged over risks.

    Each risk contributes its own log-hazard (only for samples whose label
    matches) and its own integral term for every sample; applying this
    with ``risks == 1`` reproduces :func:`single_risk_nll` exactly.
    """
    if risks != batch.risks:
        raise InputError(f"batch was built for {batch.risks} risks, got {risks}")
    return _nll_node(batch)


def model_loss(net: HazardNetwork, batch: LikelihoodBatch, training: bool) -> ad.Node:
    """Forward the network over the flattened batch and return the loss node."""
    node = hazard_graph(net, batch.flat_covariates, batch.flat_times, training)
    attach_hazards(batch, node)
    return _nll_node(batch)
