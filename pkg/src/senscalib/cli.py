"""Batch command-line front-end.

Commands: ``simulate | select | pme | invert | resolution | report``.
Inputs are CSV tables plus one JSON configuration; outputs are JSON
reports, CSV tables and standalone SVG figures.  Every output embeds the
tool version and a hash of the configuration for provenance.  Flags fall
back to ``CALIB_*`` environment variables, then to the configuration file.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

import argparse
import gzip
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    CalibrationDataset,
    SplitSpec,
    SyntheticConfig,
    load_csv,
    simulate,
    split,
)
from .exceptions import EmptyInput, NumericalError, ValidationError
from .glr import FittedModel
from .basis import PolynomialBasis
from .inversion import (
    ConditionalPrior,
    GridSpec,
    JointModel,
    default_prior,
    invert_dataset,
    joint_from_ensembles,
)
from .pme import decompose_model
from .report import pareto_svg, pie_svg
from .resolution import resolution_curve
from .rng import child_seed
from .selection import SelectionConfig, outer_bootstrap, sweep
from ._validate import check_in_range

_SCHEMA = {
    "roles": dict,
    "degree": int,
    "inner_bootstrap": int,
    "outer_replicates": int,
    "always_include": list,
    "sigma_x": (int, float, dict, type(None)),
    "grid": dict,
    "sampler": str,
    "pme_samples": int,
    "split": dict,
    "seed": int,
    "simulate": dict,
    "resolution": dict,
    "prior": str,
    "keep_records": bool,
}
_SUB_SCHEMAS = {
    "simulate": {"n_train": int, "n_test": int, "rho": (int, float), "rho_test": (int, float),
                 "rho_u": (int, float), "alpha_u": (int, float), "sigma_mes": (int, float)},
    "grid": {"points": int, "extend": (int, float)},
    "split": {"kind": str, "seed": int},
    "resolution": {"level": (int, float), "points": int, "n_outer": int, "n_inner": int},
}
_DEFAULTS = {
    "degree": 3,
    "inner_bootstrap": 200,
    "outer_replicates": 100,
    "always_include": [],
    "sigma_x": None,
    "grid": {"points": 400, "extend": 0.5},
    "sampler": "gaussian_copula_empirical",
    "pme_samples": 20000,
    "seed": 0,
    "prior": "conditional_kde",
    "keep_records": False,
    "resolution": {"level": 3.0, "points": 25, "n_outer": 500, "n_inner": 20},
}


def _validate_section(cfg: dict, schema: dict, where: str) -> None:
    for key, value in cfg.items():
        if key not in schema:
            raise ValidationError(f"unknown configuration key {where}{key!r}")
        if not isinstance(value, schema[key]):
            raise ValidationError(f"configuration key {where}{key!r} has the wrong type")


def load_config(path: str | None) -> dict:
    """Read, validate and default-fill the JSON configuration."""
    raw = {}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValidationError("configuration root must be a JSON object")
    _validate_section(raw, _SCHEMA, "")
    for section, schema in _SUB_SCHEMAS.items():
        if section in raw:
            _validate_section(raw[section], schema, f"{section}.")
    cfg = json.loads(json.dumps(_DEFAULTS))
    for key, value in raw.items():
        if isinstance(value, dict) and key in cfg and isinstance(cfg[key], dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _provenance(cfg: dict) -> dict:
    return {"tool_version": __version__, "config_sha256": config_hash(cfg)}


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2)
        fh.write("\n")


def _write_csv(path: Path, header: list, rows, provenance: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {provenance}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _prov_line(cfg: dict) -> str:
    return f"senscalib {__version__} config_sha256={config_hash(cfg)}"


def write_dataset_csv(path: Path, ds: CalibrationDataset, cfg: dict) -> None:
    header = list(ds.x_names) + list(ds.z_names) + list(ds.y_names)
    table = np.concatenate([ds.x, ds.z, ds.y], axis=1)
    if ds.time_index is not None:
        header = ["time"] + header
        table = np.concatenate([ds.time_index[:, None], table], axis=1)
    _write_csv(path, header, table, _prov_line(cfg))


def _roles(cfg: dict) -> dict:
    roles = cfg.get("roles")
    if not roles:
        raise ValidationError("configuration must define a 'roles' column map")
    return roles


def _resolve_sigma_x(cfg: dict, train: CalibrationDataset) -> np.ndarray:
    sigma = cfg.get("sigma_x")
    if sigma is None:
        sim = cfg.get("simulate")
        if sim and sim.get("sigma_mes"):
            return sim["sigma_mes"] * train.x.std(axis=0)
        return np.zeros(train.d_x)
    if isinstance(sigma, dict):
        return np.array([float(sigma.get(name, 0.0)) for name in train.x_names])
    return np.full(train.d_x, float(sigma))


# -- commands -----------------------------------------------------------------


def cmd_simulate(args, cfg: dict) -> int:
    sim = cfg.get("simulate")
    if not sim:
        raise ValidationError("configuration must define a 'simulate' section")
    for key in ("n_train", "n_test"):
        if key not in sim:
            raise ValidationError(f"simulate.{key} is required")
    seed = args.seed if args.seed is not None else cfg["seed"]
    common = dict(
        rho=float(sim.get("rho", 0.0)),
        rho_u=float(sim.get("rho_u", 0.0)),
        alpha_u=float(sim.get("alpha_u", 0.0)),
        sigma_mes=float(sim.get("sigma_mes", 0.0)),
    )
    train_cfg = SyntheticConfig(n=sim["n_train"], seed=child_seed(seed, "train"), **common)
    test_common = dict(common, rho=float(sim.get("rho_test", common["rho"])))
    test_cfg = SyntheticConfig(n=sim["n_test"], seed=child_seed(seed, "test"), **test_common)
    out = Path(args.out)
    for tag, config in (("train", train_cfg), ("test", test_cfg)):
        clean, noisy = simulate(config)
        write_dataset_csv(out / f"{tag}_clean.csv", clean, cfg)
        write_dataset_csv(out / f"{tag}_noisy.csv", noisy, cfg)
    print(f"wrote train/test clean+noisy CSVs to {out}")
    return 0


def _load_data(args, cfg: dict) -> CalibrationDataset:
    if not args.data:
        raise ValidationError("--data (or CALIB_DATA) is required for this command")
    ds = load_csv(args.data, _roles(cfg))
    if cfg.get("split"):
        spec = SplitSpec(kind=cfg["split"].get("kind", "random_half"),
                         seed=cfg["split"].get("seed", cfg["seed"]))
        ds, _ = split(ds, spec)
    return ds


def _serialize_model(model: FittedModel) -> dict:
    return {
        "target": model.target,
        "target_name": model.target_name,
        "alpha": list(model.basis.alpha),
        "degree": model.basis.degree,
        "d_x": model.basis.d_x,
        "exponents": model.basis.exponents,
        "norm_mean": model.basis.norm_mean,
        "norm_std": model.basis.norm_std,
        "var_names": list(model.basis.var_names),
        "beta": model.beta,
        "theta": model.theta,
        "n_train": model.n_train,
    }


def _deserialize_model(entry: dict) -> FittedModel:
    basis = PolynomialBasis(
        alpha=tuple(entry["alpha"]),
        degree=entry["degree"],
        d_x=entry["d_x"],
        exponents=np.asarray(entry["exponents"], dtype=np.int64),
        norm_mean=np.asarray(entry["norm_mean"]),
        norm_std=np.asarray(entry["norm_std"]),
        var_names=tuple(entry["var_names"]),
    )
    return FittedModel(
        target=entry["target"],
        target_name=entry["target_name"],
        basis=basis,
        beta=np.asarray(entry["beta"]),
        theta=entry["theta"],
        n_train=entry["n_train"],
    )


def cmd_select(args, cfg: dict) -> int:
    train = _load_data(args, cfg)
    seed = args.seed if args.seed is not None else cfg["seed"]
    sel_cfg = SelectionConfig(
        inner_b=cfg["inner_bootstrap"],
        seed=seed,
        always_include=tuple(cfg["always_include"]),
        keep_records=cfg["keep_records"],
        threads=args.threads or 1,
    )
    m_outer = cfg["outer_replicates"]
    results = []
    for target in range(train.d_y):
        if m_outer > 0:
            results.append(outer_bootstrap(train, target, cfg["degree"], m_outer, sel_cfg))
        else:
            results.append(sweep(train, target, cfg["degree"], sel_cfg))

    out = Path(args.out)
    prov = _provenance(cfg)
    selection_payload = dict(prov)
    selection_payload["seed"] = seed
    selection_payload["outputs"] = []
    for res in results:
        chosen_names = [train.z_names[a] for a in res.chosen.alpha]
        selection_payload["outputs"].append({
            "target_name": res.target_name,
            "chosen": {
                "alpha_names": chosen_names,
                "level": len(res.chosen.alpha),
                "k": res.chosen.report.k,
                "v": res.chosen.report.v,
                "bic": res.chosen.report.bic,
                "theta": res.model.theta,
            },
            "frequency_pct": res.frequency_pct,
            "n_replicates": res.n_replicates,
            "pareto": [
                {
                    "level": p.level,
                    "variables": [train.z_names[a] for a in p.alpha],
                    "v": p.v,
                    "bic": p.bic,
                    "mean_v": p.mean_v,
                    "modal_variables": [train.z_names[a] for a in p.modal_alpha],
                    "modal_freq_pct": p.modal_freq_pct,
                }
                for p in res.pareto
            ],
            "warnings": res.warnings,
        })
    _write_json(out / "selection.json", selection_payload)

    sigma_x = _resolve_sigma_x(cfg, train)
    joint = joint_from_ensembles([r.model for r in results], [r.ensemble for r in results], sigma_x)
    artifact = dict(prov)
    artifact.update({
        "degree": cfg["degree"],
        "x_names": list(train.x_names),
        "z_names": list(train.z_names),
        "y_names": list(train.y_names),
        "sigma_x": sigma_x,
        "outputs": [_serialize_model(r.model) for r in results],
        "joint": {
            "beta_mean": joint.beta_mean,
            "beta_cov": joint.beta_cov,
            "theta_sq": joint.theta_sq,
        },
        "prior_kind": cfg["prior"],
        "grid": cfg["grid"],
        "train_rows": {"x": train.x, "z": train.z, "y": train.y},
    })
    _write_json(out / "model.json", artifact)

    if cfg["keep_records"]:
        records = []
        for res in results:
            for rec in res.records or []:
                records.append({
                    "target_name": res.target_name,
                    "alpha": [train.z_names[a] for a in rec.alpha],
                    "k": len(rec.terms),
                    "v": None if rec.discarded else rec.report.v,
                    "bic": None if rec.discarded else rec.report.bic,
                    "discarded": rec.discarded,
                })
        path = out / "records.json.gz"
        path.parent.mkdir(parents=True, exist_ok=True)
        with gzip.open(path, "wt", encoding="utf-8") as fh:
            json.dump(_jsonable(dict(prov, records=records)), fh)
    for res in results:
        print(f"{res.target_name}: chosen interferents "
              f"{[train.z_names[a] for a in res.chosen.alpha]} (BIC {res.chosen.report.bic:.1f})")
    return 0


def _load_artifact(path: str):
    if not path:
        raise ValidationError("--model (or CALIB_MODEL) is required for this command")
    with open(path, "r", encoding="utf-8") as fh:
        artifact = json.load(fh)
    models = [_deserialize_model(entry) for entry in artifact["outputs"]]
    joint = JointModel(
        models=tuple(models),
        beta_mean=np.asarray(artifact["joint"]["beta_mean"]),
        beta_cov=np.asarray(artifact["joint"]["beta_cov"]),
        theta_sq=np.asarray(artifact["joint"]["theta_sq"]),
        sigma_x=np.asarray(artifact["sigma_x"], dtype=np.float64),
    )
    rows = artifact["train_rows"]
    train = CalibrationDataset(
        x=np.asarray(rows["x"], dtype=np.float64),
        z=np.asarray(rows["z"], dtype=np.float64),
        y=np.asarray(rows["y"], dtype=np.float64),
        x_names=tuple(artifact["x_names"]),
        z_names=tuple(artifact["z_names"]),
        y_names=tuple(artifact["y_names"]),
    )
    return artifact, joint, train


def cmd_invert(args, cfg: dict) -> int:
    artifact, joint, train = _load_artifact(args.model)
    if not args.data:
        raise ValidationError("--data (or CALIB_DATA) is required for invert")
    test = load_csv(args.data, _roles(cfg))
    prior = default_prior(train, joint.z_union, kind=artifact.get("prior_kind", "conditional_kde"))
    grid_cfg = artifact.get("grid", cfg["grid"])
    grid = GridSpec.from_train(train, float(grid_cfg.get("extend", 0.5)),
                               int(grid_cfg.get("points", 400)))
    truth = test.x if test.d_x == train.d_x else None
    res = invert_dataset(joint, prior, test, grid, truth=truth)

    out = Path(args.out)
    header = ["row"]
    for name in train.x_names:
        header += [f"{name}_hat", f"{name}_lo", f"{name}_hi"]
        if truth is not None:
            header += [f"{name}_true"]
    rows = []
    for i in range(test.n):
        row = [i]
        for j in range(train.d_x):
            row += [res.x_map[i, j], res.intervals[i, j, 0], res.intervals[i, j, 1]]
            if truth is not None:
                row += [truth[i, j]]
        rows.append(row)
    _write_csv(out / "predictions.csv", header, rows, _prov_line(cfg))

    payload = dict(_provenance(cfg))
    if res.metrics is not None:
        payload["metrics"] = {
            name: {
                "r2": res.metrics.r2[j],
                "mae": res.metrics.mae[j],
                "interval_length_mean": res.metrics.interval_length_mean[j],
                "coverage_pct": res.metrics.coverage_pct[j],
            }
            for j, name in enumerate(train.x_names)
        }
        for name, vals in payload["metrics"].items():
            print(f"{name}: R2={vals['r2']:.3f} MAE={vals['mae']:.3f} "
                  f"L={vals['interval_length_mean']:.3f} coverage={vals['coverage_pct']:.0f}%")
    payload["boundary_count"] = res.boundary_count
    _write_json(out / "metrics.json", payload)
    return 0


def cmd_pme(args, cfg: dict) -> int:
    artifact, joint, train = _load_artifact(args.model)
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = Path(args.out)
    payload = dict(_provenance(cfg))
    payload["outputs"] = []
    for model in joint.models:
        rep = decompose_model(model, train, cfg["sampler"], cfg["pme_samples"], seed)
        payload["outputs"].append({
            "target_name": model.target_name,
            "variables": list(rep.variables),
            "delta": rep.delta,
            "share_pct": rep.share_pct,
            "model_error_share_pct": rep.model_error_share_pct,
            "total_variance": rep.total_variance,
            "output_variance": rep.output_variance,
            "n_samples": rep.n_samples,
            "sampler": rep.sampler_kind,
            "mc_tol_pct": rep.mc_tol_pct,
            "floored": rep.floored,
        })
    _write_json(out / "pme.json", payload)
    for entry in payload["outputs"]:
        shares = ", ".join(f"{v}={s:.1f}%" for v, s in zip(entry["variables"], entry["share_pct"]))
        print(f"{entry['target_name']}: {shares}, model error={entry['model_error_share_pct']:.1f}%")
    return 0


def cmd_resolution(args, cfg: dict) -> int:
    artifact, joint, train = _load_artifact(args.model)
    rcfg = cfg["resolution"]
    level = args.level if args.level is not None else float(rcfg["level"])
    target = args.target
    if not 0 <= target < len(joint.models):
        raise ValidationError(f"--target {target} out of range")
    model = joint.models[target]
    names = model.basis.var_names
    if args.variable:
        if args.variable not in names:
            raise ValidationError(f"variable {args.variable!r} not among model inputs {names}")
        j = names.index(args.variable)
    else:
        j = 0
    seed = args.seed if args.seed is not None else cfg["seed"]
    curve = resolution_curve(
        model, train, j, level=level, grid_points=int(rcfg["points"]),
        n_outer=int(rcfg["n_outer"]), n_inner=int(rcfg["n_inner"]), seed=seed,
    )
    out = Path(args.out)
    rows = list(zip(curve.grid, curve.delta, curve.stderr))
    prov = f"{_prov_line(cfg)} variable={curve.variable} level={curve.level} {curve.threshold_note}"
    _write_csv(out / "resolution.csv", ["w_value", "delta", "mc_stderr"], rows, prov)
    finite = curve.delta[np.isfinite(curve.delta)]
    if finite.size:
        print(f"{curve.variable}: resolution {finite.min():.4g} .. {finite.max():.4g} "
              f"(level {curve.level})")
    else:
        print(f"{curve.variable}: no threshold crossing (insensitive input)")
    return 0


def cmd_report(args, cfg: dict) -> int:
    if not args.selection and not args.pme:
        raise ValidationError("report needs --selection and/or --pme inputs")
    out = Path(args.out)
    prov = _prov_line(cfg)
    wrote = []
    if args.selection:
        with open(args.selection, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        svg = pareto_svg(payload, prov)
        path = out / "pareto.svg"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
        wrote.append(str(path))
    if args.pme:
        with open(args.pme, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        outputs = payload.get("outputs") or []
        if not outputs:
            raise EmptyInput("PME report has no outputs")
        for entry in outputs:
            svg = pie_svg(entry, prov)
            path = out / f"pme_pie_{entry.get('target_name', 'output')}.svg"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(svg, encoding="utf-8")
            wrote.append(str(path))
    print("wrote " + ", ".join(wrote))
    return 0


# -- argument parsing ---------------------------------------------------------


def _env_default(name: str, cast=str):
    value = os.environ.get(f"CALIB_{name}")
    if value is None:
        return None
    return cast(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="senscalib",
        description="Interferent selection, sensitivity analysis and Bayesian "
                    "inversion for sensor calibration.",
    )
    parser.add_argument("--version", action="version", version=f"senscalib {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, model=False):
        p.add_argument("--config", default=_env_default("CONFIG"), help="JSON configuration path")
        p.add_argument("--out", default=_env_default("OUT") or ".", help="output directory")
        p.add_argument("--seed", type=int, default=_env_default("SEED", int))
        p.add_argument("--threads", type=int, default=_env_default("THREADS", int) or 1)
        if data:
            p.add_argument("--data", default=_env_default("DATA"), help="input CSV path")
        if model:
            p.add_argument("--model", default=_env_default("MODEL"), help="model artifact JSON")

    common(sub.add_parser("simulate", help="generate the synthetic benchmark datasets"))
    common(sub.add_parser("select", help="run the variable-selection pipeline"), data=True)
    common(sub.add_parser("invert", help="estimate targets on a test set"), data=True, model=True)
    common(sub.add_parser("pme", help="variance decomposition of the selected model"), model=True)
    p_res = sub.add_parser("resolution", help="resolution curve of a model input")
    common(p_res, model=True)
    p_res.add_argument("--variable", help="input variable label (default: first target)")
    p_res.add_argument("--level", type=float, default=None, help="resolution level k (default 3)")
    p_res.add_argument("--target", type=int, default=0, help="output index (default 0)")
    p_rep = sub.add_parser("report", help="render SVG figures from JSON reports")
    common(p_rep)
    p_rep.add_argument("--selection", help="selection.json to render as a Pareto front")
    p_rep.add_argument("--pme", help="pme.json to render as pie charts")
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "select": cmd_select,
    "invert": cmd_invert,
    "pme": cmd_pme,
    "resolution": cmd_resolution,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
