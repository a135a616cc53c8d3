"""``ua-dbo`` command-line interface.

Subcommands: gen-data, train, calibrate, evaluate, optimize, sweep, report.
Every command is reproducible from its config file and ``--seed``. Results
are printed as one JSON line on stdout; failures print a JSON error object on
stderr and exit with status 1.
"""
import argparse
import copy
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import geometry as geo
from . import objective as obj
from . import optimizer as opt
from . import oracle
from . import surrogate as sg
from . import uq

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("uadbo")

DEFAULTS = {
    "dataset": {"n_airfoils": 200, "machs_per_airfoil": 10, "task": "drag",
                "mach_min": 0.65, "mach_max": 0.80, "aoa_min": -3.0, "aoa_max": 5.0,
                "box_half_width": 0.0, "train_fraction": 0.82, "val_fraction": 0.10,
                "split_seed": 0, "jobs": 1},
    "model": {"mode": "gsed", "beta": 1e-5, "n_l": 4, "ensemble_n": 3, "latent_dim": 18, "residual": True},
    "training": {"batch_size": 16, "max_epochs": 300, "patience": 30},
    "uq": {"n_samples": 16, "alpha": 0.9, "min_calibration": 50, "seed": 1},
    "problem": {"kind": "drag", "cruise_mach": 0.73, "cruise_cl": 0.824, "baseline": ""},
    "optimizer": {"iterations": 50, "pop_size": 32, "init_size": 64, "F": 0.5, "CR": 0.9,
                  "verify": True, "amplitude": 0.002, "repeats": 1},
    "sweep": {"betas": [0.0, 1e-6, 1e-5, 1e-4], "n_ls": [1, 4, 8], "runs": 3},
}


class ConfigError(ValueError):
    pass


# config ------------------------------------------------------------------

def _check_type(key, default, value):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                             for v in value)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"config key {key!r}: expected {type(default).__name__}, got {value!r}")
    return value


def merge_config(user):
    """Defaults overridden by ``user``; unknown sections or keys are rejected."""
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in (user or {}).items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be a table")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown config key '{section}.{key}'")
            cfg[section][key] = _check_type(f"{section}.{key}", DEFAULTS[section][key], value)
    prob = (user or {}).get("problem", {})
    kind = cfg["problem"]["kind"]
    if kind not in ds.CRUISE:
        raise ConfigError(f"problem.kind must be one of {sorted(ds.CRUISE)}")
    if "cruise_mach" not in prob:
        cfg["problem"]["cruise_mach"] = ds.CRUISE[kind][0]
    if "cruise_cl" not in prob:
        cfg["problem"]["cruise_cl"] = ds.CRUISE[kind][1]
    return cfg


def load_config(path):
    if path is None:
        return merge_config({})
    try:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return merge_config(user)


# shared helpers ----------------------------------------------------------

def _baseline(cfg):
    """Built-in baseline, or a CST fit of an airfoil CSV named in the config."""
    path = cfg["problem"]["baseline"]
    if not path:
        return geo.baseline_airfoil()
    x, yu, yl = geo.read_airfoil_csv(path)
    if x.shape != geo.STATIONS.shape or not np.allclose(x, geo.STATIONS):
        yu, yl = np.interp(geo.STATIONS, x, yu), np.interp(geo.STATIONS, x, yl)
    (cu, rms_u), (cl, rms_l) = geo.fit_cst(yu), geo.fit_cst(yl)
    log.info("baseline %s fitted with RMS %.2e / %.2e", path, rms_u, rms_l)
    return geo.AirfoilShape(cu, cl)


def _problem(cfg):
    p = cfg["problem"]
    return obj.Problem(p["kind"], _baseline(cfg), cruise_mach=p["cruise_mach"], cruise_cl=p["cruise_cl"])


def _splits(records, cfg, split_seed=None):
    d = cfg["dataset"]
    seed = d["split_seed"] if split_seed is None else split_seed
    return ds.split(records, d["train_fraction"], d["val_fraction"], seed=seed)


def _train_config(cfg):
    t = cfg["training"]
    return sg.TrainConfig(batch_size=t["batch_size"], max_epochs=t["max_epochs"], patience=t["patience"])


def _model_config(cfg, task, mode=None, beta=None, n_l=None):
    m = cfg["model"]
    return sg.ModelConfig(mode=mode or m["mode"], beta=m["beta"] if beta is None else beta,
                          n_l=m["n_l"] if n_l is None else n_l, ensemble_n=m["ensemble_n"],
                          decoder="scalar" if task == "drag" else "field", residual=m["residual"],
                          latent_dim=m["latent_dim"])


def fit_model(config, train_arr, val_arr, seed, stats, train_config=None):
    if config.mode == "ensemble":
        return sg.ensemble_train(config, train_arr, val_arr, seed=seed, stats=stats, train_config=train_config)
    return sg.train(config, train_arr, val_arr, seed=seed, stats=stats, train_config=train_config)


def _record_cl(fields, records):
    """Lift per record from predicted (..., N, 2, 2, 101) fields."""
    out = np.empty(fields.shape[:-3])
    for idx in np.ndindex(out.shape):
        r = records[idx[-1]]
        f = fields[idx]
        out[idx] = oracle.integrate_coefficients(f[0], f[1], r.target.aoa, geo.cst_evaluate(r.shape))[0]
    return out


def predict_records(model, records, n_samples=16, seed=1):
    """Per-record truth and prediction of the task quantity (cd or cl).

    Returns (truth, mean, dist); ``dist`` is None for deterministic models.
    """
    task = model.config.task
    arr = ds.to_arrays(records, model.stats, task)
    prior = arr.prior if task == "buffet" else None
    if task == "drag":
        cond = np.array([r.target.mach for r in records])
        truth = np.array([r.target.cd for r in records])
    else:
        cond = np.array([r.target.aoa - r.cruise.aoa for r in records])
        truth = np.array([r.target.cl for r in records])
    dist = None
    if model.config.mode == "ed":
        out = uq.deterministic_outputs(model, arr.x, prior, [cond])[0]
        mean = out if task == "drag" else _record_cl(out, records)
    else:
        out = uq.sample_outputs(model, arr.x, prior, [cond], n_samples, seed)[:, 0]
        dist = uq.PredictiveDistribution(out if task == "drag" else _record_cl(out, records))
        mean = dist.mean
    return truth, mean, dist


def _per_airfoil(values, records):
    ids = np.array([r.airfoil_id for r in records])
    keys = np.unique(ids)
    return np.array([np.mean(values[ids == k]) for k in keys])


def _scale(task):
    return 1e4 if task == "drag" else 1.0


def evaluate_split(model, records, n_samples, seed, alpha):
    truth, mean, dist = predict_records(model, records, n_samples, seed)
    s = _scale(model.config.task)
    row = {"n": len(records), "mae_all": float(np.mean(np.abs(mean - truth)) * s),
           "mae_metric": float(np.mean(np.abs(_per_airfoil(mean, records) - _per_airfoil(truth, records))) * s)}
    if dist is not None:
        f = uq.factors_of(model)
        below, inside, above = uq.coverage_report(truth, dist, alpha, f)
        row.update({"ece": float(uq.ece(truth, dist, f)),
                    "coverage": {"below": float(below), "inside": float(inside), "above": float(above)}})
    return row


def _dumps(obj_):
    return json.dumps(obj_, sort_keys=True)


def _write_json(path, payload):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def _seed_int(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# commands ----------------------------------------------------------------

def command_gen_data(args, cfg):
    d = cfg["dataset"]
    task = d["task"]
    if d["box_half_width"] > 0:
        b = _baseline(cfg).vector()
        bounds = (b - d["box_half_width"], b + d["box_half_width"])
    else:
        bounds = ds.default_bounds()
    designs = ds.sample_designs(d["n_airfoils"], args.seed, bounds)
    jobs = args.jobs or d["jobs"]
    records = ds.build_dataset(designs, d["machs_per_airfoil"], (d["mach_min"], d["mach_max"]), seed=args.seed,
                               task=task, cruise=(cfg["problem"]["cruise_mach"], cfg["problem"]["cruise_cl"]),
                               aoa_range=(d["aoa_min"], d["aoa_max"]), jobs=jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.write_dataset(out, records, task)
    stats_path = out.with_suffix(".stats.json")
    ds.write_stats(stats_path, ds.compute_stats(records, task))
    n_air = len({r.airfoil_id for r in records})
    return {"command": "gen-data", "records": len(records), "airfoils": n_air, "task": task,
            "out": str(out), "stats": str(stats_path)}


def command_train(args, cfg):
    records, task = ds.read_dataset(args.data)
    train, val, test = _splits(records, cfg)
    train_arr, stats = ds.normalize(train, task)
    val_arr = ds.to_arrays(val, stats, task)
    config = _model_config(cfg, task, mode=args.mode)
    model = fit_model(config, train_arr, val_arr, args.seed, stats, _train_config(cfg))
    sg.save(model, args.out)
    return {"command": "train", "mode": config.mode, "task": task, "n_train": len(train),
            "n_val": len(val), "out": str(args.out),
            "epochs": model.metadata.get("epochs"), "params": model.parameter_count()}


def command_calibrate(args, cfg):
    model = sg.load(args.model)
    if model.config.mode == "ed":
        raise ValueError("cannot calibrate a deterministic (ed) model: it has no predictive spread")
    records, task = ds.read_dataset(args.data)
    if task != model.config.task:
        raise ValueError(f"dataset task {task!r} does not match model task {model.config.task!r}")
    train, _, _ = _splits(records, cfg)
    alpha = args.alpha if args.alpha is not None else cfg["uq"]["alpha"]
    truth, _, dist = predict_records(model, train, cfg["uq"]["n_samples"], cfg["uq"]["seed"])
    f = uq.calibrate(truth, dist, alpha, cfg["uq"]["min_calibration"])
    model.calibration = {**f.to_dict(), "calibrated": True}
    out = args.out or args.model
    sg.save(model, out)
    below, inside, above = uq.coverage_report(truth, dist, alpha, f)
    return {"command": "calibrate", "kappa_l": f.kappa_l, "kappa_u": f.kappa_u, "alpha": alpha, "n": f.n,
            "train_coverage": {"below": below, "inside": inside, "above": above}, "out": str(out)}


def command_evaluate(args, cfg):
    model = sg.load(args.model)
    records, task = ds.read_dataset(args.data)
    if task != model.config.task:
        raise ValueError(f"dataset task {task!r} does not match model task {model.config.task!r}")
    train, val, test = _splits(records, cfg)
    alpha = args.alpha if args.alpha is not None else cfg["uq"]["alpha"]
    n_s, seed = cfg["uq"]["n_samples"], cfg["uq"]["seed"]
    report = {"mode": model.config.mode, "task": task, "alpha": alpha,
              "calibrated": bool(model.calibration.get("calibrated")),
              "rows": {"train": evaluate_split(model, train, n_s, seed, alpha),
                       "test": evaluate_split(model, test, n_s, seed, alpha)}}
    if args.out:
        _write_json(args.out, report)
    return {"command": "evaluate", **report}


def _mean_se(values):
    v = np.array([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return None
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "se": se, "n": int(v.size)}


def command_optimize(args, cfg):
    mode = args.opt_mode or "cfd-oracle"
    o = cfg["optimizer"]
    problem = _problem(cfg)
    model = None
    if mode != "cfd-oracle":
        if not args.model:
            raise ValueError(f"--model is required for --opt-mode {mode}")
        model = sg.load(args.model)
        if model.config.task != problem.kind:
            raise ValueError(f"model task {model.config.task!r} does not match problem {problem.kind!r}")
        if mode == "dbo" and model.config.mode != "ed":
            log.warning("dbo mode with a %s model uses its mean prediction", model.config.mode)
    repeats = args.repeats or o["repeats"]
    alpha = args.alpha if args.alpha is not None else cfg["uq"]["alpha"]
    out = Path(args.out)
    runs = []
    for k in range(repeats):
        seed = args.seed + k
        try:
            r = opt.run(problem, mode, model, iterations=o["iterations"], pop_size=o["pop_size"],
                        init_size=o["init_size"], seed=seed, F=o["F"], CR=o["CR"], alpha=alpha,
                        n_samples=cfg["uq"]["n_samples"], verify=o["verify"], amplitude=o["amplitude"],
                        out_dir=out / f"run_{k}")
        except Exception as exc:
            raise RuntimeError(f"optimization repeat {k} (seed {seed}) failed: {exc}") from exc
        runs.append(r.summary())
    pick = lambda key: [(s.get("model_best") or {}).get(key) for s in runs]  # noqa: E731
    summary = {"mode": mode, "problem": problem.kind, "repeats": repeats, "seeds": [args.seed + k for k in range(repeats)],
               "predicted_best": _mean_se(pick("predicted")),
               "verified_best": _mean_se(pick("truth")),
               "prediction_error": _mean_se([None if s.get("model_best") is None or s["model_best"]["truth"] is None
                                             else abs(s["model_best"]["predicted"] - s["model_best"]["truth"])
                                             for s in runs]),
               "actual_best": _mean_se([None if s["actual_best"] is None else s["actual_best"][0] for s in runs]),
               "population_mae": _mean_se([s.get("prediction_mae") for s in runs]),
               "runs": runs}
    _write_json(out / "summary.json", summary)
    return {"command": "optimize", "out": str(out), **{k: summary[k] for k in
            ("mode", "repeats", "predicted_best", "verified_best", "actual_best", "prediction_error")}}


def command_sweep(args, cfg):
    records, task = ds.read_dataset(args.data)
    sw = cfg["sweep"]
    n_s, alpha = cfg["uq"]["n_samples"], cfg["uq"]["alpha"]
    tc = _train_config(cfg)
    cells = []
    ed_mae = []
    for r in range(sw["runs"]):
        train, val, test = _splits(records, cfg, split_seed=r)
        train_arr, stats = ds.normalize(train, task)
        val_arr = ds.to_arrays(val, stats, task)
        ed = fit_model(_model_config(cfg, task, mode="ed"), train_arr, val_arr, _seed_int(args.seed, 0, r), stats, tc)
        ed_mae.append(evaluate_split(ed, test, n_s, cfg["uq"]["seed"], alpha)["mae_all"])
        for ci, (beta, n_l) in enumerate((b, n) for b in sw["betas"] for n in sw["n_ls"]):
            if r == 0:
                cells.append({"beta": float(beta), "n_l": int(n_l), "mae": [], "ece": []})
            m = fit_model(_model_config(cfg, task, mode="gsed", beta=float(beta), n_l=int(n_l)), train_arr, val_arr,
                          _seed_int(args.seed, ci + 1, r), stats, tc)
            truth, _, dist = predict_records(m, train, n_s, cfg["uq"]["seed"])
            f = uq.calibrate(truth, dist, alpha, cfg["uq"]["min_calibration"])
            m.calibration = {**f.to_dict(), "calibrated": True}
            row = evaluate_split(m, test, n_s, cfg["uq"]["seed"], alpha)
            cells[ci]["mae"].append(row["mae_all"])
            cells[ci]["ece"].append(row["ece"])
    for c in cells:
        for k in ("mae", "ece"):
            v = np.array(c[k])
            c[f"{k}_mean"], c[f"{k}_std"] = float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
    report = {"task": task, "runs": sw["runs"], "cells": cells,
              "ed_reference": {"mae": ed_mae, "mae_mean": float(np.mean(ed_mae))}}
    _write_json(args.out, report)
    return {"command": "sweep", "out": str(args.out), "cells": len(cells), "runs": sw["runs"]}


def command_report(args, cfg):
    run_dir = Path(args.run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    warnings = []
    info = json.loads((run_dir / "run.json").read_text())
    key = info["config"]["metric"]
    gens = info["config"]["iterations"]
    traj = run_dir / "trajectory.csv"
    if traj.exists():
        (out / "trajectory.csv").write_text(traj.read_text())
    else:
        warnings.append("trajectory.csv missing")
    pareto = run_dir / "pareto.csv"
    if pareto.exists():
        (out / "pareto.csv").write_text(pareto.read_text())
    else:
        warnings.append("pareto.csv missing")
    rows = []
    for tag, g in (("initial", 0), ("final", gens)):
        path = run_dir / f"population_{g}.jsonl"
        if not path.exists():
            warnings.append(f"{path.name} missing")
            continue
        for line in path.read_text().splitlines():
            ind = json.loads(line)
            m, t = ind.get("metrics") or {}, ind.get("truth")
            pred = m.get(key)
            truth = None if not t else t["metrics"].get(key)
            bounds = (m.get("bounds") or {}).get(key) or []
            width = bounds[1] - bounds[0] if len(bounds) == 2 else None
            err = None if pred is None or truth is None else pred - truth
            rows.append([tag, width, err])
    if any(r[2] is None for r in rows):
        warnings.append("some individuals lack verified truth; their signed error is blank")
    with open(out / "scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["population", "interval_width", "signed_error"])
        for tag, width, err in rows:
            w.writerow([tag, "" if width is None else repr(float(width)), "" if err is None else repr(float(err))])
    for msg in warnings:
        log.warning(msg)
    return {"command": "report", "out": str(out), "scatter_rows": len(rows), "warnings": warnings}


COMMANDS = {"gen-data": command_gen_data, "train": command_train, "calibrate": command_calibrate,
            "evaluate": command_evaluate, "optimize": command_optimize, "sweep": command_sweep,
            "report": command_report}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (dotted keys or tables)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=None, help="cap on concurrent evaluations")
    p = argparse.ArgumentParser(prog="ua-dbo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("gen-data", parents=[common], help="sample designs and build a dataset")
    s.add_argument("--out", required=True)
    s = sub.add_parser("train", parents=[common], help="train a surrogate")
    s.add_argument("--data", required=True)
    s.add_argument("--mode", choices=sg.MODES, default=None)
    s.add_argument("--out", required=True)
    s = sub.add_parser("calibrate", parents=[common], help="fit interval calibration factors")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--out", default=None, help="output checkpoint (default: overwrite --model)")
    s = sub.add_parser("evaluate", parents=[common], help="MAE, ECE and coverage on train and test")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--out", default=None)
    s = sub.add_parser("optimize", parents=[common], help="run DE optimization repeats")
    s.add_argument("--model", default=None)
    s.add_argument("--opt-mode", choices=opt.MODES, default=None)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--repeats", type=int, default=None)
    s.add_argument("--out", required=True)
    s = sub.add_parser("sweep", parents=[common], help="beta x N_l hyperparameter sweep")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("report", parents=[common], help="plot data from a run directory")
    s.add_argument("--run", required=True)
    s.add_argument("--out", required=True)
    return p


def _setup_logging():
    level = os.environ.get("UA_DBO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        result = COMMANDS[args.command](args, cfg)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        sys.stderr.write(_dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}) + "\n")
        return 1
    sys.stdout.write(_dumps(result) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
