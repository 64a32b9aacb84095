"""Command-line front end.

Subcommands: ``simulate``, ``train``, ``evaluate``, ``predict`` and
``experiment`` (the discretization-scheme comparison).  Every command
writes a JSON manifest next to its outputs recording the resolved
configuration, the seed, input/output paths, the toolkit version and the
wall-clock duration; outputs are deterministic functions of that manifest
(the recorded duration aside).  Exit codes: 0 success, 1 input error,
2 numerical failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    apply_preprocess,
    fit_preprocess,
    load_csv,
    load_schema,
    schema_of,
    simulate_competing,
    simulate_nonlinear,
    write_csv,
    write_schema,
)
from .exceptions import InputError, NumericalError
from .model import predict_cif, predict_survival_curve
from .training import (
    TrainConfig,
    cross_validate,
    evaluate_model,
    stratified_holdout_split,
    substream,
    train as run_training,
    write_training_log,
)
from . import plots


def _write_manifest(out_path: Path, command: str, config: dict, seed, inputs: dict, outputs: dict, started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "version": __version__,
        "duration_seconds": round(time.time() - started, 3),
    }
    path = out_path.with_suffix(out_path.suffix + ".manifest.json") if out_path.suffix != ".json" else Path(
        str(out_path)[: -len(".json")] + ".manifest.json"
    )
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _resolve_config(config_path, **overrides) -> TrainConfig:
    raw: dict = {}
    if config_path:
        try:
            with open(config_path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"config file not found: {config_path}")
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {config_path} is not valid JSON: {exc}")
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    return TrainConfig.from_dict(raw)


def _load_dataset(data_path, schema_path) -> Dataset:
    schema = load_schema(schema_path)
    return load_csv(data_path, schema)


@click.group()
@click.version_option(__version__)
def cli():
    """Continuous-time neural hazard models for survival analysis."""


@cli.command()
@click.option("--kind", type=click.Choice(["nonlinear", "competing"]), required=True)
@click.option("--n", type=int, required=True, help="Number of samples.")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Output CSV path.")
def simulate(kind, n, seed, out):
    """Generate a synthetic benchmark dataset (CSV plus schema)."""
    started = time.time()
    dataset = simulate_nonlinear(n, seed) if kind == "nonlinear" else simulate_competing(n, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(dataset, out)
    schema_path = out.with_suffix(".schema.json")
    write_schema(schema_of(dataset), schema_path)
    manifest = _write_manifest(
        out,
        "simulate",
        {"kind": kind, "n": n},
        seed,
        {},
        {"data": out, "schema": schema_path},
        started,
    )
    click.echo(f"wrote {out}, {schema_path}, {manifest}")


def _config_overrides(seed, m, scheme, encoder, risks):
    return {
        "seed": seed,
        "grid_points": m,
        "scheme": scheme,
        "encoder": encoder,
        "risks": risks,
    }


@cli.command(name="train")
@click.option("--data", type=click.Path(path_type=Path), required=True)
@click.option("--schema", type=click.Path(path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Checkpoint path (.json).")
@click.option("--seed", type=int, default=None)
@click.option("--m", type=int, default=None, help="Grid points per integration.")
@click.option("--scheme", type=click.Choice(["A", "B"]), default=None)
@click.option("--encoder", type=click.Choice(["raw", "pe", "t2v"]), default=None)
@click.option("--risks", type=int, default=None)
@click.option("--figures/--no-figures", default=True, show_default=True)
def train_command(data, schema, config_path, out, seed, m, scheme, encoder, risks, figures):
    """Train on a dataset with holdout-minimum model selection."""
    started = time.time()
    config = _resolve_config(config_path, **_config_overrides(seed, m, scheme, encoder, risks))
    dataset = _load_dataset(data, schema)
    holdout_idx, rest = stratified_holdout_split(
        dataset.labels, config.holdout_fraction, substream(config.seed, "split")
    )
    raw_holdout = dataset.subset(holdout_idx)
    raw_train = dataset.subset(rest)
    stats = fit_preprocess(raw_train, time_scale=float(raw_holdout.times.mean()))
    result = run_training(
        apply_preprocess(raw_train, stats), apply_preprocess(raw_holdout, stats), config
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.network, config.grid_points, stats)
    log_path = Path(str(out)[: -len(out.suffix)] + ".training_log.csv" if out.suffix else str(out) + ".training_log.csv")
    write_training_log(result.log, log_path)
    outputs = {"checkpoint": out, "training_log": log_path}
    if figures:
        fig_path = log_path.with_suffix(".png")
        plots.training_curves(result.log, fig_path)
        outputs["figure"] = fig_path
    manifest = _write_manifest(
        out, "train", config.to_dict(), config.seed, {"data": data, "schema": schema}, outputs, started
    )
    click.echo(
        f"best epoch {result.best_epoch} holdout loss {result.best_holdout_loss:.6f}; wrote "
        + ", ".join(str(p) for p in outputs.values())
        + f", {manifest}"
    )


def _encode_for_model(dataset: Dataset, stats):
    if stats is not None:
        return apply_preprocess(dataset, stats), stats.time_scale
    numeric = [f for f in dataset.features if f.kind == "numeric"]
    if len(numeric) != len(dataset.features):
        raise InputError("checkpoint has no preprocessing statistics; only numeric data can be used raw")
    matrix = np.column_stack([f.values for f in numeric]) if numeric else np.empty((dataset.n, 0))
    if np.any(~np.isfinite(matrix)):
        raise InputError("raw numeric data contains missing values but the checkpoint has no imputation statistics")
    encoded = Dataset(
        features=dataset.features,
        times=dataset.times,
        labels=dataset.labels,
        note=dataset.note,
        matrix=matrix,
        matrix_columns=[f.name for f in numeric],
    )
    return encoded, 1.0


@cli.command()
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--data", type=click.Path(path_type=Path), required=True)
@click.option("--schema", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Metrics CSV path.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def evaluate(model_path, data, schema, out, figures):
    """Concordance and Brier at the 25/50/75% event-time percentile horizons."""
    started = time.time()
    net, grid_points, stats = load_checkpoint(model_path)
    dataset = _load_dataset(data, schema)
    encoded, time_scale = _encode_for_model(dataset, stats)
    if encoded.matrix.shape[1] != net.covariate_dim:
        raise InputError(
            f"data encodes to {encoded.matrix.shape[1]} covariates but the model expects {net.covariate_dim}"
        )
    report = evaluate_model(net, encoded, grid_points, ipcw=True, time_scale=time_scale)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv())
    outputs = {"metrics": out}
    if net.risks > 1:
        plain = evaluate_model(net, encoded, grid_points, ipcw=False, time_scale=time_scale)
        plain_path = Path(str(out)[: -len(out.suffix)] + ".plain.csv" if out.suffix else str(out) + ".plain.csv")
        plain_path.write_text(plain.to_csv())
        outputs["metrics_plain"] = plain_path
    if figures:
        fig_path = out.with_suffix(".png")
        plots.metric_lines(report.rows, fig_path)
        outputs["figure"] = fig_path
    manifest = _write_manifest(
        out,
        "evaluate",
        {"grid_points": grid_points},
        None,
        {"model": model_path, "data": data, "schema": schema},
        outputs,
        started,
    )
    click.echo(report.to_csv().rstrip())
    click.echo(f"wrote " + ", ".join(str(p) for p in outputs.values()) + f", {manifest}")


def _parse_mesh(spec: str) -> np.ndarray:
    """Mesh spec: 'N@TMAX' for N points on [0, TMAX], or explicit 't1,t2,...'."""
    spec = spec.strip()
    if "@" in spec:
        count_s, _, tmax_s = spec.partition("@")
        try:
            count, tmax = int(count_s), float(tmax_s)
        except ValueError:
            raise InputError(f"malformed mesh spec {spec!r}; expected 'COUNT@TMAX' or 't1,t2,...'")
        if count < 1 or tmax <= 0:
            raise InputError(f"mesh spec {spec!r} needs COUNT >= 1 and TMAX > 0")
        return np.linspace(0.0, tmax, count) if count > 1 else np.array([0.0])
    try:
        pts = np.array([float(tok) for tok in spec.split(",") if tok.strip() != ""])
    except ValueError:
        raise InputError(f"malformed mesh spec {spec!r}; expected 'COUNT@TMAX' or 't1,t2,...'")
    if pts.size == 0:
        raise InputError(f"mesh spec {spec!r} is empty")
    if pts[0] != 0.0 or np.any(np.diff(pts) <= 0):
        raise InputError("explicit mesh must start at 0 and ascend strictly")
    return pts


def _parse_covariates(tokens: list[str], stats, covariate_dim: int) -> np.ndarray:
    from .data import Feature

    if stats is None:
        try:
            row = np.array([float(t) for t in tokens])
        except ValueError:
            raise InputError("covariate row must be numeric when the checkpoint has no preprocessing statistics")
        if row.size != covariate_dim:
            raise InputError(f"expected {covariate_dim} covariates, got {row.size}")
        return row
    order = stats.feature_order
    if len(tokens) != len(order):
        raise InputError(f"expected {len(order)} raw feature values ({[n for n, _ in order]}), got {len(tokens)}")
    features = []
    for (name, kind), tok in zip(order, tokens):
        tok = tok.strip()
        if kind == "numeric":
            if tok == "":
                features.append(Feature(name, kind, np.array([np.nan])))
            else:
                try:
                    features.append(Feature(name, kind, np.array([float(tok)])))
                except ValueError:
                    raise InputError(f"feature {name!r}: cannot parse {tok!r} as a number")
        else:
            features.append(Feature(name, kind, np.array([tok if tok else None], dtype=object)))
    tiny = Dataset(features, np.array([0.0]), np.array([0]))
    return apply_preprocess(tiny, stats).matrix[0]


@cli.command()
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--x", "covariates", required=True, help="Comma-separated raw feature values.")
@click.option("--mesh", required=True, help="'COUNT@TMAX' or explicit 't1,t2,...' in original time units.")
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Curve CSV path.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def predict(model_path, covariates, mesh, out, figures):
    """Survival curve (plus cumulative incidence when the model has several risks)."""
    started = time.time()
    net, _, stats = load_checkpoint(model_path)
    time_scale = 1.0 if stats is None else stats.time_scale
    mesh_original = _parse_mesh(mesh)
    mesh_scaled = mesh_original / time_scale
    row = _parse_covariates(covariates.split(","), stats, net.covariate_dim)

    if mesh_scaled.size == 1:
        survival = np.array([1.0])
        incidence = np.zeros((1, net.risks)) if net.risks > 1 else None
    else:
        curve = predict_survival_curve(net, row, mesh_scaled)
        survival = curve.survival
        incidence = predict_cif(net, row, mesh_scaled).incidence if net.risks > 1 else None

    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        header = ["time", "survival"] + [f"cif_{k + 1}" for k in range(net.risks if incidence is not None else 0)]
        fh.write(",".join(header) + "\n")
        for i, t in enumerate(mesh_original):
            cells = [repr(float(t)), repr(float(survival[i]))]
            if incidence is not None:
                cells += [repr(float(v)) for v in incidence[i]]
            fh.write(",".join(cells) + "\n")
    outputs = {"curve": out}
    if figures:
        fig_path = out.with_suffix(".png")
        plots.prediction_curves(mesh_original, survival, incidence, fig_path)
        outputs["figure"] = fig_path
    manifest = _write_manifest(
        out,
        "predict",
        {"x": covariates, "mesh": mesh},
        None,
        {"model": model_path},
        outputs,
        started,
    )
    click.echo(f"wrote " + ", ".join(str(p) for p in outputs.values()) + f", {manifest}")


@cli.command()
@click.option("--data", type=click.Path(path_type=Path), required=True)
@click.option("--schema", type=click.Path(path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None)
@click.option("--m", "m_list", default="3,5,10,30,50,100", show_default=True, help="Comma-separated grid densities.")
@click.option("--schemes", default="A,B", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True, help="Results CSV path.")
@click.option("--figures/--no-figures", default=True, show_default=True)
def experiment(data, schema, config_path, m_list, schemes, seed, out, figures):
    """Cross-validated comparison of the two discretization schemes over grid densities."""
    started = time.time()
    config = _resolve_config(config_path, seed=seed)
    dataset = _load_dataset(data, schema)
    try:
        densities = sorted({int(tok) for tok in m_list.split(",") if tok.strip()})
    except ValueError:
        raise InputError(f"--m must be comma-separated integers, got {m_list!r}")
    if not densities or min(densities) < 2:
        raise InputError(f"grid densities must be >= 2, got {m_list!r}")
    scheme_set = []
    for tok in schemes.split(","):
        tok = tok.strip().upper()
        if not tok:
            continue
        if tok not in ("A", "B"):
            raise InputError(f"unknown scheme {tok!r}; expected A or B")
        if tok not in scheme_set:
            scheme_set.append(tok)
    if not scheme_set:
        raise InputError("no schemes requested")

    rows = []
    for scheme in sorted(scheme_set):
        for m in densities:
            cfg = dataclasses.replace(config, scheme=scheme, grid_points=m)
            cv = cross_validate(dataset, cfg)
            for agg in cv.aggregate():
                rows.append(
                    {
                        "scheme": scheme,
                        "grid_points": m,
                        "risk": agg["risk"],
                        "horizon_fraction": agg["horizon_fraction"],
                        "ctd_mean": agg["ctd_mean"],
                        "ctd_se": agg["ctd_se"],
                    }
                )
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("scheme,grid_points,risk,horizon_fraction,ctd_mean,ctd_se\n")
        for r in rows:
            fh.write(
                f"{r['scheme']},{r['grid_points']},{r['risk']},"
                f"{r['horizon_fraction']!r},{r['ctd_mean']!r},{r['ctd_se']!r}\n"
            )
    outputs = {"results": out}
    if figures:
        fig_path = out.with_suffix(".png")
        plots.experiment_curves(rows, fig_path)
        outputs["figure"] = fig_path
    manifest = _write_manifest(
        out,
        "experiment",
        {**config.to_dict(), "m_list": densities, "schemes": scheme_set},
        config.seed,
        {"data": data, "schema": schema},
        outputs,
        started,
    )
    click.echo(f"wrote " + ", ".join(str(p) for p in outputs.values()) + f", {manifest}")


def main(argv=None):
    try:
        return cli(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
