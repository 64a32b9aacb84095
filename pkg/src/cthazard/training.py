"""Optimization and the experiment protocol.

Training iterates shuffled mini-batches with Adam on the continuous-time
likelihood, evaluates the holdout loss in inference mode after every
epoch, and keeps the parameter snapshot with the lowest holdout loss.
The cross-validation harness first splits off a stratified holdout used
only for model selection, then partitions the rest into folds; every
preprocessing statistic is fitted on the per-fold training partition.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields
from dataclasses import replace as dataclasses_replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, apply_preprocess, fit_preprocess
from .discretization import TimeGrid, global_grid, per_sample_grid
from .exceptions import InputError, NumericalError
from .loss import LikelihoodBatch, make_batch, model_loss, uniform_batch
from .metrics import (
    HORIZON_FRACTIONS,
    MetricReport,
    brier_ipcw,
    ctd_ipcw,
    event_time_percentiles,
    km_censoring,
)
from .model import HazardNetwork, cif_at, survival_at


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent generator derived from the run seed and a named purpose."""
    entropy = [int(seed)] + [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    learning_rate: float = 2e-4
    batch_size: int = 256
    grid_points: int = 50
    scheme: str = "A"
    max_epochs: int = 500
    patience: int = 10
    hidden: tuple[int, int] = (64, 64)
    embed_dim: int = 16
    encoder: str = "t2v"
    risks: int | None = None
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    holdout_fraction: float = 0.15
    folds: int = 5

    def validate(self) -> list[str]:
        problems = []
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size!r}")
        if self.grid_points < 2:
            problems.append(f"grid_points must be >= 2, got {self.grid_points!r}")
        if self.scheme not in ("A", "B"):
            problems.append(f"scheme must be 'A' or 'B', got {self.scheme!r}")
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1, got {self.max_epochs!r}")
        if self.patience < 1:
            problems.append(f"patience must be >= 1, got {self.patience!r}")
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            problems.append(f"hidden must be two positive widths, got {self.hidden!r}")
        if self.embed_dim < 1:
            problems.append(f"embed_dim must be >= 1, got {self.embed_dim!r}")
        if self.encoder not in ("raw", "pe", "t2v"):
            problems.append(f"encoder must be raw, pe or t2v, got {self.encoder!r}")
        if self.encoder == "pe" and self.embed_dim % 2:
            problems.append(f"positional encoding needs an even embed_dim, got {self.embed_dim!r}")
        if self.risks is not None and self.risks < 1:
            problems.append(f"risks must be >= 1, got {self.risks!r}")
        if not 0 < self.holdout_fraction < 1:
            problems.append(f"holdout_fraction must be in (0, 1), got {self.holdout_fraction!r}")
        if self.folds < 2:
            problems.append(f"folds must be >= 2, got {self.folds!r}")
        return problems

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InputError(f"unknown config keys: {unknown}; known keys: {sorted(known)}")
        cfg = cls(**d)
        if isinstance(cfg.hidden, list):
            cfg.hidden = tuple(cfg.hidden)
        problems = cfg.validate()
        if problems:
            raise InputError("invalid config: " + "; ".join(problems))
        return cfg

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "grid_points": self.grid_points,
            "scheme": self.scheme,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "hidden": list(self.hidden),
            "embed_dim": self.embed_dim,
            "encoder": self.encoder,
            "risks": self.risks,
            "seed": self.seed,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "holdout_fraction": self.holdout_fraction,
            "folds": self.folds,
        }


class AdamState:
    """First/second moment buffers and step counter, one pair per parameter."""

    def __init__(self, params: ad.ParamSet):
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}
        self.step_count = 0


def adam_step(params: ad.ParamSet, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update from the accumulated gradients."""
    state.step_count += 1
    t = state.step_count
    lr, b1, b2, eps = config.learning_rate, config.beta1, config.beta2, config.eps
    for p in params:
        g = p.grad
        if np.any(~np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {p.name!r} at step {t}")
        m = state.m[p.name]
        v = state.v[p.name]
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.value[...] = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)


def build_grid(event_time: float, config: TrainConfig, t_max: float | None) -> TimeGrid:
    if config.scheme == "A":
        return per_sample_grid(event_time, config.grid_points)
    if t_max is None:
        raise InputError("scheme B needs the training-set maximum time")
    return global_grid(event_time, t_max, config.grid_points)


def batch_for(dataset: Dataset, idx: np.ndarray, config: TrainConfig, risks: int, t_max: float | None) -> LikelihoodBatch:
    if dataset.matrix is None:
        raise InputError("dataset must be preprocessed before batching")
    idx = np.asarray(idx)
    if config.scheme == "A":
        return uniform_batch(
            dataset.matrix[idx], dataset.times[idx], dataset.labels[idx], config.grid_points, risks
        )
    grids = [build_grid(t, config, t_max) for t in dataset.times[idx]]
    return make_batch(dataset.matrix[idx], dataset.times[idx], dataset.labels[idx], grids, risks)


def dataset_loss(net: HazardNetwork, dataset: Dataset, config: TrainConfig, risks: int, t_max: float | None) -> float:
    """Inference-mode mean loss over a dataset, evaluated in chunks."""
    total, n = 0.0, dataset.n
    for lo in range(0, n, config.batch_size):
        idx = np.arange(lo, min(lo + config.batch_size, n))
        batch = batch_for(dataset, idx, config, risks, t_max)
        total += float(model_loss(net, batch, training=False).value) * idx.size
    return total / n


@dataclass
class TrainResult:
    network: HazardNetwork
    log: list[dict]
    best_epoch: int
    best_holdout_loss: float
    t_max: float | None
    risks: int


def train(
    dataset: Dataset,
    holdout: Dataset,
    config: TrainConfig,
    init_rng: np.random.Generator | None = None,
    shuffle_rng: np.random.Generator | None = None,
) -> TrainResult:
    """Mini-batch Adam training with holdout-minimum model selection.

    Both datasets must already be preprocessed with shared statistics.
    Returns the snapshot with the lowest holdout loss along with the
    per-epoch loss log.
    """
    problems = config.validate()
    if problems:
        raise InputError("invalid config: " + "; ".join(problems))
    if dataset.n == 0:
        raise InputError("training dataset is empty")
    if dataset.matrix is None or holdout.matrix is None:
        raise InputError("datasets must be preprocessed before training")
    risks = config.risks or max(dataset.risks, holdout.risks)
    t_max = float(dataset.times.max()) if config.scheme == "B" else None

    init_rng = init_rng or substream(config.seed, "init")
    shuffle_rng = shuffle_rng or substream(config.seed, "shuffle")
    net = HazardNetwork(
        covariate_dim=dataset.matrix.shape[1],
        risks=risks,
        hidden=config.hidden,
        encoder=config.encoder,
        embed_dim=config.embed_dim,
        rng=init_rng,
    )
    state = AdamState(net.params)

    log: list[dict] = []
    best = np.inf
    best_epoch = -1
    best_snap = net.snapshot()
    stale = 0
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(dataset.n)
        train_total = 0.0
        for bi, lo in enumerate(range(0, dataset.n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            batch = batch_for(dataset, idx, config, risks, t_max)
            loss = model_loss(net, batch, training=True)
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {bi}")
            net.params.zero_grad()
            ad.backward(loss)
            adam_step(net.params, state, config)
            train_total += value * idx.size
        holdout_loss = dataset_loss(net, holdout, config, risks, t_max)
        log.append(
            {
                "epoch": epoch,
                "train_loss": train_total / dataset.n,
                "holdout_loss": holdout_loss,
            }
        )
        if holdout_loss < best:
            best = holdout_loss
            best_epoch = epoch
            best_snap = net.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    net.restore(best_snap)
    return TrainResult(
        network=net, log=log, best_epoch=best_epoch, best_holdout_loss=best, t_max=t_max, risks=risks
    )


def write_training_log(log: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,holdout_loss\n")
        for row in log:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['holdout_loss']!r}\n")


# ---------------------------------------------------------------------------
# evaluation


def evaluate_model(
    net: HazardNetwork,
    dataset: Dataset,
    grid_points: int,
    ipcw: bool = True,
    time_scale: float = 1.0,
) -> MetricReport:
    """Concordance and Brier per risk at the three event-time percentile horizons.

    ``dataset`` must be preprocessed (times scaled).  Risk scores are
    1 - S(horizon) for single-risk models and the per-risk cumulative
    incidence at the horizon for competing risks.  Concordance pairs for
    risk k anchor on events of cause k (other causes act as censoring for
    comparability); the Brier residual for risk k compares 1 - F_k against
    the overall event status.  The censoring estimate always comes from
    the any-event indicator.  ``time_scale`` converts the recorded horizon
    times back to original units.
    """
    if dataset.matrix is None:
        raise InputError("dataset must be preprocessed before evaluation")
    times = dataset.times
    indicators = dataset.event_indicator
    horizons = event_time_percentiles(times, indicators, HORIZON_FRACTIONS)
    report = MetricReport()
    censoring = km_censoring(times, indicators) if ipcw else None
    if net.risks == 1:
        for frac, h in zip(HORIZON_FRACTIONS, horizons):
            surv = survival_at(net, dataset.matrix, h, grid_points)
            risk = 1.0 - surv
            ctd = ctd_ipcw(risk, times, indicators, censoring, h)
            brier = brier_ipcw(surv, times, indicators, censoring, h)
            report.add(1, frac, h * time_scale, ctd, brier)
        return report
    for frac, h in zip(HORIZON_FRACTIONS, horizons):
        incidence = cif_at(net, dataset.matrix, h, grid_points)
        for k in range(1, net.risks + 1):
            ind_k = (dataset.labels == k).astype(np.int64)
            score = incidence[:, k - 1]
            ctd = ctd_ipcw(score, times, ind_k, censoring, h)
            brier = brier_ipcw(1.0 - score, times, indicators, censoring, h)
            report.add(k, frac, h * time_scale, ctd, brier)
    return report


# ---------------------------------------------------------------------------
# cross-validation protocol


@dataclass
class CVResult:
    """Per-fold reports plus the index bookkeeping that proves disjointness."""

    fold_reports: list[MetricReport]
    fold_reports_plain: list[MetricReport] | None
    holdout_indices: np.ndarray
    fold_test_indices: list[np.ndarray]
    fold_train_indices: list[np.ndarray]
    fold_logs: list[list[dict]]

    def aggregate(self, plain: bool = False) -> list[dict]:
        """Mean and standard error of each metric across folds."""
        reports = self.fold_reports_plain if plain else self.fold_reports
        if reports is None:
            raise InputError("no plain-variant reports were computed")
        out = []
        base = reports[0].rows
        k = len(reports)
        for i, row in enumerate(base):
            ctds = np.array([r.rows[i]["ctd"] for r in reports])
            briers = np.array([r.rows[i]["brier"] for r in reports])
            h_times = np.array([r.rows[i]["horizon_time"] for r in reports])
            out.append(
                {
                    "risk": row["risk"],
                    "horizon_fraction": row["horizon_fraction"],
                    "horizon_time_mean": float(h_times.mean()),
                    "ctd_mean": float(ctds.mean()),
                    "ctd_se": float(ctds.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0,
                    "brier_mean": float(briers.mean()),
                    "brier_se": float(briers.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0,
                }
            )
        return out


def stratified_holdout_split(labels: np.ndarray, fraction: float, rng: np.random.Generator):
    """Split off floor(fraction * n) indices, stratified by event indicator."""
    n = labels.size
    k = int(np.floor(fraction * n))
    if k == 0:
        raise InputError(f"holdout split is empty: floor({fraction} * {n}) = 0 samples")
    events = np.flatnonzero(labels > 0)
    censored = np.flatnonzero(labels == 0)
    k_events = min(int(round(k * events.size / n)), events.size) if n else 0
    k_censored = min(k - k_events, censored.size)
    k_events = k - k_censored  # rebalance if the censored stratum ran short
    chosen = np.concatenate(
        [
            rng.choice(events, size=k_events, replace=False) if k_events else np.empty(0, dtype=np.int64),
            rng.choice(censored, size=k_censored, replace=False) if k_censored else np.empty(0, dtype=np.int64),
        ]
    ).astype(np.int64)
    chosen.sort()
    rest = np.setdiff1d(np.arange(n), chosen)
    return chosen, rest


def cross_validate(dataset: Dataset, config: TrainConfig, plain_variants: bool | None = None) -> CVResult:
    """Holdout-then-k-fold protocol on a raw dataset.

    15% (by default) of the data is split off, stratified by event
    indicator, and used exclusively for model selection inside every
    fold's training run.  The remainder is partitioned into folds of
    near-equal size; each fold is scored by a model trained on the other
    folds.  Per-fold preprocessing statistics come from that fold's
    training partition, except the time scale, which is the holdout's mean
    observed time.
    """
    problems = config.validate()
    if problems:
        raise InputError("invalid config: " + "; ".join(problems))
    risks = config.risks or dataset.risks
    config = dataclasses_replace(config, risks=risks)  # pin K across folds
    if plain_variants is None:
        plain_variants = risks > 1

    split_rng = substream(config.seed, "split")
    holdout_idx, rest = stratified_holdout_split(dataset.labels, config.holdout_fraction, split_rng)
    if rest.size < config.folds:
        raise InputError(f"only {rest.size} samples left for {config.folds} folds")
    fold_rng = substream(config.seed, "folds")
    shuffled = fold_rng.permutation(rest)
    fold_parts = [np.sort(part) for part in np.array_split(shuffled, config.folds)]

    raw_holdout = dataset.subset(holdout_idx)
    time_scale = float(raw_holdout.times.mean())
    fold_reports: list[MetricReport] = []
    fold_reports_plain: list[MetricReport] = []
    fold_train_indices: list[np.ndarray] = []
    fold_logs: list[list[dict]] = []
    for f, test_idx in enumerate(fold_parts):
        train_idx = np.sort(np.concatenate([part for g, part in enumerate(fold_parts) if g != f]))
        fold_train_indices.append(train_idx)
        raw_train = dataset.subset(train_idx)
        stats = fit_preprocess(raw_train, time_scale=time_scale)
        train_ds = apply_preprocess(raw_train, stats)
        holdout_ds = apply_preprocess(raw_holdout, stats)
        test_ds = apply_preprocess(dataset.subset(test_idx), stats)
        result = train(
            train_ds,
            holdout_ds,
            config,
            init_rng=substream(config.seed, "init", f),
            shuffle_rng=substream(config.seed, "shuffle", f),
        )
        fold_logs.append(result.log)
        fold_reports.append(
            evaluate_model(result.network, test_ds, config.grid_points, ipcw=True, time_scale=stats.time_scale)
        )
        if plain_variants:
            fold_reports_plain.append(
                evaluate_model(result.network, test_ds, config.grid_points, ipcw=False, time_scale=stats.time_scale)
            )
    return CVResult(
        fold_reports=fold_reports,
        fold_reports_plain=fold_reports_plain if plain_variants else None,
        holdout_indices=holdout_idx,
        fold_test_indices=fold_parts,
        fold_train_indices=fold_train_indices,
        fold_logs=fold_logs,
    )
