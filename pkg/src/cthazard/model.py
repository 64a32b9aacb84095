"""The continuous-time hazard network and its curve predictions.

The network maps (covariates, time) to one strictly positive hazard per
risk: time is encoded (raw value, fixed sinusoidal features, or a
learnable linear-plus-sine embedding), concatenated with the covariates,
pushed through two fully connected layers with batch normalization and
ReLU, with the full input vector concatenated back in before the second
layer, and finished by a Softplus head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .discretization import TimeGrid, cumulative_trapezoid
from .exceptions import InputError, NumericalError, ShapeError

ENCODERS = ("raw", "pe", "t2v")


def encode_time(t: float, mode: str, omega=None, phi=None, embed_dim: int | None = None) -> np.ndarray:
    """Time features for one nonnegative time value.

    raw   -> [t]
    t2v   -> [omega[0]*t + phi[0], sin(omega[i]*t + phi[i]) for i >= 1]
    pe    -> interleaved sin/cos of t scaled by geometric frequencies,
             element 2i = sin(t / 10000^(2i/b)), element 2i+1 the cosine.
    """
    if not np.isfinite(t) or t < 0:
        raise InputError(f"time must be finite and nonnegative, got {t!r}")
    if mode == "raw":
        return np.array([t], dtype=np.float64)
    if mode == "t2v":
        omega = np.asarray(omega, dtype=np.float64)
        phi = np.asarray(phi, dtype=np.float64)
        if omega.shape != phi.shape or omega.ndim != 1:
            raise ShapeError(f"time2vec parameters disagree: {omega.shape} vs {phi.shape}")
        theta = omega * t + phi
        out = np.sin(theta)
        out[0] = theta[0]
        return out
    if mode == "pe":
        if embed_dim is None or embed_dim < 2 or embed_dim % 2:
            raise InputError(f"positional encoding needs an even embed_dim >= 2, got {embed_dim!r}")
        return _positional_rows(np.array([t]), embed_dim)[0]
    raise InputError(f"unknown time encoder {mode!r}, expected one of {ENCODERS}")


def _positional_rows(times: np.ndarray, embed_dim: int) -> np.ndarray:
    half = embed_dim // 2
    freqs = 1.0 / np.power(10000.0, 2.0 * np.arange(half) / embed_dim)
    angles = times[:, None] * freqs[None, :]
    out = np.empty((times.size, embed_dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


class HazardNetwork:
    """All learnable state of the hazard model plus architecture metadata.

    In inference mode the network is a pure function of (parameters, x, t)
    and may be shared across threads; training mode mutates batch-norm
    running statistics and needs exclusive access.
    """

    def __init__(
        self,
        covariate_dim: int,
        risks: int = 1,
        hidden: tuple[int, int] = (64, 64),
        encoder: str = "t2v",
        embed_dim: int = 16,
        rng: np.random.Generator | None = None,
    ):
        if covariate_dim < 1:
            raise InputError(f"covariate_dim must be >= 1, got {covariate_dim}")
        if risks < 1:
            raise InputError(f"risks must be >= 1, got {risks}")
        if encoder not in ENCODERS:
            raise InputError(f"unknown time encoder {encoder!r}, expected one of {ENCODERS}")
        if encoder == "pe" and (embed_dim < 2 or embed_dim % 2):
            raise InputError(f"positional encoding needs an even embed_dim >= 2, got {embed_dim}")
        if len(hidden) != 2:
            raise InputError(f"expected two hidden widths, got {hidden!r}")
        self.covariate_dim = int(covariate_dim)
        self.risks = int(risks)
        self.hidden = (int(hidden[0]), int(hidden[1]))
        self.encoder = encoder
        self.embed_dim = int(embed_dim)

        rng = rng or np.random.default_rng()
        params = ad.ParamSet()
        a, e = self.covariate_dim, self.encoded_width
        h1, h2 = self.hidden
        k = self.risks

        def linear(name, fan_in, fan_out, bias):
            bound = 1.0 / np.sqrt(fan_in)
            params.add(f"{name}.weight", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            if bias:
                params.add(f"{name}.bias", rng.uniform(-bound, bound, size=fan_out))

        if encoder == "t2v":
            params.add("time2vec.omega", rng.uniform(0.0, 1.0, size=self.embed_dim))
            params.add("time2vec.phi", np.zeros(self.embed_dim))
        # hidden layers feed batch norm, whose mean subtraction makes a linear
        # bias an exact no-op (beta provides the offset), so they carry none
        linear("layer1", a + e, h1, bias=False)
        params.add("bn1.gamma", np.ones(h1))
        params.add("bn1.beta", np.zeros(h1))
        linear("layer2", h1 + a + e, h2, bias=False)
        params.add("bn2.gamma", np.ones(h2))
        params.add("bn2.beta", np.zeros(h2))
        linear("head", h2, k, bias=True)
        self.params = params
        self.bn1 = ad.BatchNormState(h1)
        self.bn2 = ad.BatchNormState(h2)

    @property
    def encoded_width(self) -> int:
        return 1 if self.encoder == "raw" else self.embed_dim

    def snapshot(self) -> dict:
        return {
            "params": self.params.values_copy(),
            "bn1": self.bn1.snapshot(),
            "bn2": self.bn2.snapshot(),
        }

    def restore(self, snap: dict) -> None:
        self.params.load_values(snap["params"])
        self.bn1.restore(snap["bn1"])
        self.bn2.restore(snap["bn2"])


def encode_time_node(net: HazardNetwork, times: np.ndarray) -> ad.Node:
    """Graph block of per-row time features; learnable only for time2vec."""
    if net.encoder == "t2v":
        p = net.params
        tcol = ad.Constant(times.reshape(-1, 1))
        b = net.embed_dim
        lin = tcol * ad.slice1d(p["time2vec.omega"], 0, 1) + ad.slice1d(p["time2vec.phi"], 0, 1)
        if b == 1:
            return lin
        per = ad.sin(tcol * ad.slice1d(p["time2vec.omega"], 1, b) + ad.slice1d(p["time2vec.phi"], 1, b))
        return ad.concat([lin, per], axis=1)
    if net.encoder == "pe":
        return ad.Constant(_positional_rows(times, net.embed_dim))
    return ad.Constant(times.reshape(-1, 1))


def hazard_graph(net: HazardNetwork, X: np.ndarray, times: np.ndarray, training: bool) -> ad.Node:
    """Differentiable forward pass over rows of (covariates, time) pairs.

    Returns the (n, K) node of strictly positive hazards.  Batch-norm
    statistics are taken over all rows, so callers flatten every grid
    point of every sample into one batch.
    """
    X = np.asarray(X, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.covariate_dim:
        raise ShapeError(f"covariates shape {X.shape} does not match covariate_dim={net.covariate_dim}")
    if times.shape != (X.shape[0],):
        raise ShapeError(f"times shape {times.shape} does not match {X.shape[0]} rows")
    if np.any(times < 0) or not np.all(np.isfinite(times)):
        raise InputError("times must be finite and nonnegative")

    inp = ad.concat([ad.Constant(X), encode_time_node(net, times)], axis=1)
    p = net.params
    z1 = ad.batchnorm(inp @ p["layer1.weight"], p["bn1.gamma"], p["bn1.beta"], net.bn1, training)
    h1 = ad.relu(z1)
    z2 = ad.batchnorm(
        ad.concat([h1, inp], axis=1) @ p["layer2.weight"], p["bn2.gamma"], p["bn2.beta"], net.bn2, training
    )
    h2 = ad.relu(z2)
    return ad.softplus(h2 @ p["head.weight"] + p["head.bias"])


def forward_hazard(net: HazardNetwork, x: np.ndarray, t: float, training: bool = False) -> np.ndarray:
    """Hazard per risk for one covariate vector at one time."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    node = hazard_graph(net, x, np.array([t]), training)
    return node.value[0].copy()


def hazard_matrix(net: HazardNetwork, X: np.ndarray, mesh: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Inference-mode hazards of every sample at every mesh point, shape (n, m, K)."""
    X = np.asarray(X, dtype=np.float64)
    mesh = np.asarray(mesh, dtype=np.float64)
    n, m = X.shape[0], mesh.size
    out = np.empty((n, m, net.risks))
    for lo in range(0, n, chunk):
        rows = X[lo : lo + chunk]
        flat_x = np.repeat(rows, m, axis=0)
        flat_t = np.tile(mesh, rows.shape[0])
        node = hazard_graph(net, flat_x, flat_t, training=False)
        out[lo : lo + chunk] = node.value.reshape(rows.shape[0], m, net.risks)
    return out


@dataclass(frozen=True)
class SurvivalCurve:
    """Survival probability and cumulative hazard over an ascending time mesh."""

    times: np.ndarray
    survival: np.ndarray
    cumulative_hazard: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.survival)
        if s[0] != 1.0:
            raise NumericalError(f"survival must start at 1, got {s[0]!r}")
        if np.any(np.diff(s) > 0):
            raise NumericalError("survival curve must be non-increasing")
        if np.any(s <= 0) or np.any(s > 1):
            raise NumericalError("survival values must lie in (0, 1]")


@dataclass(frozen=True)
class CifCurve:
    """Cumulative incidence per risk over an ascending time mesh, shape (m, K)."""

    times: np.ndarray
    incidence: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.incidence)
        if f.ndim != 2:
            raise ShapeError(f"incidence must be (mesh, risks), got shape {f.shape}")
        if np.any(f[0] != 0.0):
            raise NumericalError("cumulative incidence must start at 0")
        if np.any(np.diff(f, axis=0) < 0):
            raise NumericalError("cumulative incidence must be non-decreasing")
        if np.any(f < 0) or np.any(f >= 1):
            raise NumericalError("cumulative incidence values must lie in [0, 1)")


def _check_mesh(mesh) -> np.ndarray:
    pts = mesh.points if isinstance(mesh, TimeGrid) else np.asarray(mesh, dtype=np.float64)
    if pts.ndim != 1 or pts.size < 1:
        raise InputError(f"mesh must be a 1-D array, got shape {np.shape(pts)}")
    if pts[0] != 0.0:
        raise InputError(f"mesh must start at 0, got {pts[0]!r}")
    if np.any(np.diff(pts) <= 0):
        raise InputError("mesh must be strictly increasing")
    return pts


def predict_survival_curve(net: HazardNetwork, x: np.ndarray, mesh) -> SurvivalCurve:
    """Survival curve for one covariate vector: S = exp(-cumulative trapezoid of total hazard)."""
    pts = _check_mesh(mesh)
    hazards = hazard_matrix(net, np.asarray(x, dtype=np.float64).reshape(1, -1), pts)[0]
    total = hazards.sum(axis=1)
    cum = cumulative_trapezoid(total, pts)
    return SurvivalCurve(times=pts, survival=np.exp(-cum), cumulative_hazard=cum)


def _allocate_incidence(hazards: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Cumulative incidence per risk from hazards sampled on a mesh.

    Each interval's survival mass S(t_{j-1}) - S(t_j) is split between the
    risks proportionally to their trapezoidal hazard integrals over that
    interval.  Summed over risks this reproduces 1 - S exactly at every
    mesh point, so the per-risk curves and the survival curve are always
    mutually consistent regardless of mesh resolution.
    """
    total = hazards.sum(axis=1)
    cum = cumulative_trapezoid(total, pts)
    survival = np.exp(-cum)
    deltas = np.diff(pts)
    per_risk = (hazards[1:] + hazards[:-1]) * 0.5 * deltas[:, None]
    denom = per_risk.sum(axis=1, keepdims=True)
    frac = per_risk / denom
    mass = survival[:-1] - survival[1:]
    out = np.zeros_like(hazards)
    out[1:] = np.cumsum(frac * mass[:, None], axis=0)
    return out


def predict_cif(net: HazardNetwork, x: np.ndarray, mesh) -> CifCurve:
    """Cumulative incidence curves for one covariate vector."""
    pts = _check_mesh(mesh)
    if pts.size < 2:
        return CifCurve(times=pts, incidence=np.zeros((pts.size, net.risks)))
    hazards = hazard_matrix(net, np.asarray(x, dtype=np.float64).reshape(1, -1), pts)[0]
    return CifCurve(times=pts, incidence=_allocate_incidence(hazards, pts))


def survival_at(net: HazardNetwork, X: np.ndarray, horizon: float, m: int) -> np.ndarray:
    """S(horizon | x) for every row of X, integrating on an m-point mesh."""
    if horizon <= 0:
        raise InputError(f"horizon must be positive, got {horizon!r}")
    mesh = np.linspace(0.0, horizon, max(int(m), 2))
    hazards = hazard_matrix(net, X, mesh)
    total = hazards.sum(axis=2)
    deltas = np.diff(mesh)
    integral = ((total[:, 1:] + total[:, :-1]) * 0.5 * deltas).sum(axis=1)
    return np.exp(-integral)


def cif_at(net: HazardNetwork, X: np.ndarray, horizon: float, m: int) -> np.ndarray:
    """Cumulative incidence per risk at the horizon for every row of X, shape (n, K)."""
    if horizon <= 0:
        raise InputError(f"horizon must be positive, got {horizon!r}")
    mesh = np.linspace(0.0, horizon, max(int(m), 2))
    hazards = hazard_matrix(net, X, mesh)
    out = np.empty((X.shape[0], net.risks))
    for i in range(X.shape[0]):
        out[i] = _allocate_incidence(hazards[i], mesh)[-1]
    return out
