"""Figure rendering for the CLI report paths.

Every plotting function takes already-computed table rows and writes one
PNG; the delimited tables remain the authoritative outputs and the
figures are a convenience rendered alongside them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SCHEME_STYLE = {"A": {"color": "tab:green", "ls": "-"}, "B": {"color": "tab:blue", "ls": "--"}}


def training_curves(log_rows: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r["epoch"] for r in log_rows]
    ax.plot(epochs, [r["train_loss"] for r in log_rows], label="train")
    ax.plot(epochs, [r["holdout_loss"] for r in log_rows], label="holdout")
    ax.set_xlabel("epoch")
    ax.set_ylabel("negative log-likelihood")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def metric_lines(rows: list[dict], path) -> None:
    """Concordance and Brier versus horizon fraction, one line per risk."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    risks = sorted({r["risk"] for r in rows})
    for risk in risks:
        sub = sorted((r for r in rows if r["risk"] == risk), key=lambda r: r["horizon_fraction"])
        fr = [r["horizon_fraction"] for r in sub]
        axes[0].plot(fr, [r["ctd"] for r in sub], marker="o", label=f"risk {risk}")
        axes[1].plot(fr, [r["brier"] for r in sub], marker="o", label=f"risk {risk}")
    axes[0].set_ylabel("concordance")
    axes[1].set_ylabel("Brier score")
    for ax in axes:
        ax.set_xlabel("event-time percentile")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def prediction_curves(times: np.ndarray, survival: np.ndarray, incidence: np.ndarray | None, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, survival, label="S(t)", color="black")
    if incidence is not None:
        for k in range(incidence.shape[1]):
            ax.plot(times, incidence[:, k], label=f"F{k + 1}(t)")
    ax.set_xlabel("time")
    ax.set_ylabel("probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def experiment_curves(rows: list[dict], path) -> None:
    """Concordance versus grid density, one panel per horizon, line per scheme."""
    fractions = sorted({r["horizon_fraction"] for r in rows})
    risks = sorted({r["risk"] for r in rows})
    fig, axes = plt.subplots(len(risks), len(fractions), figsize=(4 * len(fractions), 3.2 * len(risks)), squeeze=False)
    for i, risk in enumerate(risks):
        for j, frac in enumerate(fractions):
            ax = axes[i][j]
            for scheme in sorted({r["scheme"] for r in rows}):
                sub = sorted(
                    (r for r in rows if r["scheme"] == scheme and r["horizon_fraction"] == frac and r["risk"] == risk),
                    key=lambda r: r["grid_points"],
                )
                m = [r["grid_points"] for r in sub]
                mean = np.array([r["ctd_mean"] for r in sub])
                se = np.array([r["ctd_se"] for r in sub])
                style = _SCHEME_STYLE.get(scheme, {})
                ax.plot(m, mean, marker="o", label=f"scheme {scheme}", **style)
                ax.fill_between(m, mean - se, mean + se, alpha=0.2, color=style.get("color"))
            ax.set_xscale("log")
            ax.set_xlabel("grid points")
            ax.set_ylabel("concordance")
            ax.set_title(f"risk {risk}, {int(frac * 100)}% horizon")
            ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
