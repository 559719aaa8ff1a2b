"""Command-line pipeline chaining generation, labeling, training and solving.

Every subcommand works inside one experiment directory (``--workdir``):

    instances/{train,valid,test}/*.json   written by  gen
    labels/*.json                         written by  label     (train+valid)
    graphs/*.json, scaler.json            written by  featurize (all splits)
    model.json, history.csv               written by  train
    predictions/*.csv                     written by  predict   (valid+test)
    tuned.json                            written by  gridsearch
    results_{mode}.csv                    written by  run
    report.json, report.csv, curves/      written by  eval

Stages only read earlier outputs and only write their own files, so any
stage can be rerun in place; identical configuration and seeds give
byte-identical outputs (wall-clock timings are kept under a separate
``runtimes`` key in the report).  Exit codes: 2 when a required earlier
output is missing, 3 for an invalid configuration or command line, 4
for a runtime failure inside a stage.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from concurrent import futures
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bnb, gcn, generators, labeler, metrics, predictor, trigraph
from .core import BINARY, MipInstance, read_instance, write_instance

EXIT_MISSING_INPUT = 2
EXIT_BAD_CONFIG = 3
EXIT_RUNTIME = 4

SPLITS = ("train", "valid", "test")
RUN_MODES = ("approx", "exact", "baseline")

_SPLIT_CODE = {"train": 0, "valid": 1, "test": 2}
_RESULT_FIELDS = ("instance", "mode", "phi", "eta", "status", "objective",
                  "lower_bound", "nodes", "wall_time_s")


class MissingInputError(RuntimeError):
    """An earlier stage's output that this stage needs is absent."""


class ConfigError(ValueError):
    """The experiment configuration or command line is invalid."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    """Everything a pipeline run needs besides the working directory."""

    problem: str = "sc"
    preset: str = "tiny"
    gen_params: dict = field(default_factory=dict)
    n_train: int = 140
    n_valid: int = 20
    n_test: int = 40
    seed: int = 0
    label_max_iters: int = 40
    label_time_limit_s: float = 5.0
    hyper: gcn.GcnHyper = field(default_factory=gcn.GcnHyper)
    phi_grid: tuple = predictor.PHI_GRID
    eta_grid: tuple = predictor.ETA_GRID
    solve_time_limit_s: float = 5.0
    solve_node_limit: int | None = None
    ref_time_limit_s: float = 60.0
    fractions: tuple = (0.25, 0.5, 0.75, 0.9, 1.0)
    workdir: Path = field(default_factory=Path)
    jobs: int = 1


_SECTION_KEYS = {
    "experiment": {"problem", "preset", "params", "train", "valid", "test",
                   "seed"},
    "labeler": {"max_iters", "time_limit_s"},
    "gcn": {"hidden_dim", "transitions", "output_hidden", "learning_rate",
            "epochs", "seed", "attention", "literal_loops"},
    "predictor": {"phi_grid", "eta_grid", "time_limit_s", "node_limit"},
    "eval": {"fractions", "ref_time_limit_s"},
}


def _parse_list(raw: str, conv, where: str) -> tuple:
    tokens = [tok for tok in raw.replace(",", " ").split() if tok]
    if not tokens:
        raise ConfigError(f"{where}: empty list")
    try:
        return tuple(conv(tok) for tok in tokens)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _typed(cp: configparser.ConfigParser, getter: str, section: str,
           key: str, fallback):
    try:
        return getattr(cp, getter)(section, key, fallback=fallback)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def _apply_config(cfg: ExperimentConfig, cp: configparser.ConfigParser) -> None:
    for section in cp.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(cp[section]) - _SECTION_KEYS[section]
        if unknown:
            raise ConfigError(
                f"unknown keys {sorted(unknown)} in section [{section}]")

    cfg.problem = cp.get("experiment", "problem", fallback=cfg.problem).lower()
    cfg.preset = cp.get("experiment", "preset", fallback=cfg.preset).lower()
    if cp.has_option("experiment", "params"):
        raw = cp.get("experiment", "params")
        try:
            parsed = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"[experiment] params: {exc}") from None
        if not isinstance(parsed, dict):
            raise ConfigError("[experiment] params must be a JSON object")
        cfg.gen_params = parsed
    cfg.n_train = _typed(cp, "getint", "experiment", "train", cfg.n_train)
    cfg.n_valid = _typed(cp, "getint", "experiment", "valid", cfg.n_valid)
    cfg.n_test = _typed(cp, "getint", "experiment", "test", cfg.n_test)
    cfg.seed = _typed(cp, "getint", "experiment", "seed", cfg.seed)

    cfg.label_max_iters = _typed(cp, "getint", "labeler", "max_iters",
                                 cfg.label_max_iters)
    cfg.label_time_limit_s = _typed(cp, "getfloat", "labeler", "time_limit_s",
                                    cfg.label_time_limit_s)

    h = cfg.hyper
    h.hidden_dim = _typed(cp, "getint", "gcn", "hidden_dim", h.hidden_dim)
    h.transitions = _typed(cp, "getint", "gcn", "transitions", h.transitions)
    h.output_hidden = _typed(cp, "getint", "gcn", "output_hidden",
                             h.output_hidden)
    h.learning_rate = _typed(cp, "getfloat", "gcn", "learning_rate",
                             h.learning_rate)
    h.epochs = _typed(cp, "getint", "gcn", "epochs", h.epochs)
    h.seed = _typed(cp, "getint", "gcn", "seed", h.seed)
    h.attention = _typed(cp, "getboolean", "gcn", "attention", h.attention)
    h.literal_loops = _typed(cp, "getboolean", "gcn", "literal_loops",
                             h.literal_loops)

    if cp.has_option("predictor", "phi_grid"):
        cfg.phi_grid = _parse_list(cp.get("predictor", "phi_grid"), int,
                                   "[predictor] phi_grid")
    if cp.has_option("predictor", "eta_grid"):
        cfg.eta_grid = _parse_list(cp.get("predictor", "eta_grid"), float,
                                   "[predictor] eta_grid")
    cfg.solve_time_limit_s = _typed(cp, "getfloat", "predictor",
                                    "time_limit_s", cfg.solve_time_limit_s)
    if cp.get("predictor", "node_limit", fallback="").strip():
        cfg.solve_node_limit = _typed(cp, "getint", "predictor", "node_limit",
                                      None)

    if cp.has_option("eval", "fractions"):
        cfg.fractions = _parse_list(cp.get("eval", "fractions"), float,
                                    "[eval] fractions")
    cfg.ref_time_limit_s = _typed(cp, "getfloat", "eval", "ref_time_limit_s",
                                  cfg.ref_time_limit_s)


def _validate_config(cfg: ExperimentConfig) -> None:
    try:
        generators._merged_params(cfg.problem, cfg.preset, cfg.gen_params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for label, count in (("train", cfg.n_train), ("valid", cfg.n_valid),
                         ("test", cfg.n_test)):
        if count < 1:
            raise ConfigError(f"{label} count must be at least 1, got {count}")
    if cfg.label_max_iters < 1:
        raise ConfigError("labeler max_iters must be at least 1")
    if cfg.label_time_limit_s <= 0:
        raise ConfigError("labeler time_limit_s must be positive")
    try:
        cfg.hyper.validate()
    except ValueError as exc:
        raise ConfigError(f"[gcn] {exc}") from None
    if any(phi < 0 for phi in cfg.phi_grid):
        raise ConfigError("phi_grid values must be nonnegative")
    if any(not 0.0 < eta <= 1.0 for eta in cfg.eta_grid):
        raise ConfigError("eta_grid values must lie in (0, 1]")
    if cfg.solve_time_limit_s <= 0:
        raise ConfigError("predictor time_limit_s must be positive")
    if cfg.solve_node_limit is not None and cfg.solve_node_limit < 1:
        raise ConfigError("predictor node_limit must be at least 1")
    if cfg.ref_time_limit_s <= 0:
        raise ConfigError("eval ref_time_limit_s must be positive")
    if any(not 0.0 < f <= 1.0 for f in cfg.fractions):
        raise ConfigError("eval fractions must lie in (0, 1]")
    if cfg.jobs < 1:
        raise ConfigError("--jobs must be at least 1")


def load_config(path, workdir, scale: float = 1.0,
                jobs: int = 1) -> ExperimentConfig:
    """Experiment configuration from an INI file plus command-line knobs.

    ``scale`` multiplies the train/valid/test counts (never below one
    instance per split).  A missing or malformed file, an unknown key,
    or an out-of-range value raises ConfigError.
    """
    if not np.isfinite(scale) or scale <= 0:
        raise ConfigError(f"--scale must be positive, got {scale}")
    cfg = ExperimentConfig(workdir=Path(workdir), jobs=int(jobs))
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        _apply_config(cfg, cp)
    cfg.n_train = max(1, round(cfg.n_train * scale))
    cfg.n_valid = max(1, round(cfg.n_valid * scale))
    cfg.n_test = max(1, round(cfg.n_test * scale))
    _validate_config(cfg)
    return cfg


# ---------------------------------------------------------------------------
# Shared stage helpers


def _fmt(x: float) -> str:
    """17-significant-digit decimal; round-trips any float exactly."""
    return format(float(x), ".17g")


def _require_dir(path: Path, producer: str) -> Path:
    if not path.is_dir():
        raise MissingInputError(
            f"missing directory {path} (run the '{producer}' stage first)")
    return path


def _require_file(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise MissingInputError(
            f"missing file {path} (run the '{producer}' stage first)")
    return path


def _split_instances(cfg: ExperimentConfig, split: str) -> list[Path]:
    base = _require_dir(cfg.workdir / "instances", "gen")
    d = _require_dir(base / split, "gen")
    paths = sorted(d.glob("*.json"))
    if not paths:
        raise MissingInputError(
            f"no instance files in {d} (run the 'gen' stage first)")
    return paths


def _instance_seed(base_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([base_seed, _SPLIT_CODE[split], index])
    return int(ss.generate_state(1)[0])


def _pmap(fn, items, jobs: int) -> list:
    """Order-preserving map, optionally over a process pool."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _read_predictions(path: Path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["varname", "z"]:
            raise RuntimeError(f"{path}: expected a 'varname,z' header, "
                               f"got {header}")
        return {name: float(z) for name, z in reader}


def _z_for_instance(inst: MipInstance, pred: dict[str, float]) -> np.ndarray:
    # presolve can fix a binary out of the featurized instance, leaving
    # it without a prediction; fall back to maximal uncertainty so the
    # selector picks such variables last
    return np.array([pred.get(v.name, 0.5)
                     for v in inst.variables if v.vtype == BINARY])


# ---------------------------------------------------------------------------
# Stage commands


def cmd_gen(cfg: ExperimentConfig) -> None:
    counts = {"train": cfg.n_train, "valid": cfg.n_valid, "test": cfg.n_test}
    for split in SPLITS:
        d = cfg.workdir / "instances" / split
        d.mkdir(parents=True, exist_ok=True)
        for i in range(counts[split]):
            spec = generators.GenSpec(cfg.problem, cfg.preset,
                                      params=cfg.gen_params,
                                      seed=_instance_seed(cfg.seed, split, i))
            inst = generators.generate(spec)
            inst.name = f"{cfg.problem}-{cfg.preset}-{split}-{i:04d}"
            write_instance(inst, d / f"{inst.name}.json")
    total = sum(counts.values())
    print(f"gen: wrote {total} instances "
          f"({counts['train']}/{counts['valid']}/{counts['test']}) "
          f"under {cfg.workdir / 'instances'}")


def _label_one(task) -> str:
    inst_path, out_path, max_iters, time_limit, label_mode = task
    inst = read_instance(inst_path)
    if label_mode == "optimal":
        ls = labeler.optimal_labels(inst)
    else:
        ls = labeler.generate_labels(
            inst, labeler.LabelConfig(max_iters=max_iters,
                                      base_time_limit_s=time_limit))
    labeler.write_labels(out_path, ls)
    return ls.instance


def cmd_label(cfg: ExperimentConfig, label_mode: str = "proximity") -> None:
    out = cfg.workdir / "labels"
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(path, out / path.name, cfg.label_max_iters,
              cfg.label_time_limit_s, label_mode)
             for split in ("train", "valid")
             for path in _split_instances(cfg, split)]
    done = _pmap(_label_one, tasks, cfg.jobs)
    print(f"label: wrote {len(done)} label sets under {out}")


def _featurize_one(task) -> str:
    inst_path, out_path = task
    inst = read_instance(inst_path)
    root = bnb.collect_root_info(inst)
    if root.lp.status != "optimal":
        raise RuntimeError(f"root LP of {inst.name!r} ended "
                           f"{root.lp.status}; cannot featurize")
    trigraph.write_trigraph(out_path, trigraph.build_trigraph(inst, root))
    return inst.name


def cmd_featurize(cfg: ExperimentConfig) -> None:
    out = cfg.workdir / "graphs"
    out.mkdir(parents=True, exist_ok=True)
    tasks, train_graphs = [], []
    for split in SPLITS:
        for path in _split_instances(cfg, split):
            tasks.append((path, out / path.name))
            if split == "train":
                train_graphs.append(out / path.name)
    _pmap(_featurize_one, tasks, cfg.jobs)
    scaler = trigraph.fit_scaler(
        [trigraph.read_trigraph(p) for p in train_graphs])
    trigraph.write_scaler(cfg.workdir / "scaler.json", scaler)
    print(f"featurize: wrote {len(tasks)} graphs under {out} "
          f"and {cfg.workdir / 'scaler.json'}")


def cmd_train(cfg: ExperimentConfig) -> None:
    graphs_dir = _require_dir(cfg.workdir / "graphs", "featurize")
    labels_dir = _require_dir(cfg.workdir / "labels", "label")
    scaler = trigraph.read_scaler(
        _require_file(cfg.workdir / "scaler.json", "featurize"))
    dataset = []
    for path in _split_instances(cfg, "train"):
        graph = trigraph.read_trigraph(
            _require_file(graphs_dir / path.name, "featurize"))
        labels = labeler.read_labels(
            _require_file(labels_dir / path.name, "label"))
        dataset.append((trigraph.apply_scaler(graph, scaler), labels))
    params, history = gcn.train(dataset, cfg.hyper)
    gcn.save_params(cfg.workdir / "model.json", params, cfg.hyper)
    with open(cfg.workdir / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, _fmt(loss)])
    print(f"train: {len(dataset)} graphs, {len(history)} epochs, "
          f"final loss {history[-1]:.6f}; wrote {cfg.workdir / 'model.json'}")


def cmd_predict(cfg: ExperimentConfig) -> None:
    params, hyper = gcn.load_params(
        _require_file(cfg.workdir / "model.json", "train"))
    scaler = trigraph.read_scaler(
        _require_file(cfg.workdir / "scaler.json", "featurize"))
    graphs_dir = _require_dir(cfg.workdir / "graphs", "featurize")
    out = cfg.workdir / "predictions"
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for split in ("valid", "test"):
        for path in _split_instances(cfg, split):
            graph = trigraph.read_trigraph(
                _require_file(graphs_dir / path.name, "featurize"))
            z = gcn.forward(trigraph.apply_scaler(graph, scaler), params,
                            hyper)
            with open(out / f"{path.stem}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["varname", "z"])
                for name, zj in zip(graph.var_names, z):
                    writer.writerow([name, _fmt(zj)])
            n += 1
    print(f"predict: wrote {n} prediction files under {out}")


def _solver_config(cfg: ExperimentConfig) -> bnb.BnbConfig:
    return bnb.BnbConfig(time_limit_s=cfg.solve_time_limit_s,
                         node_limit=cfg.solve_node_limit)


def _validation_triples(cfg: ExperimentConfig):
    preds_dir = _require_dir(cfg.workdir / "predictions", "predict")
    triples = []
    for path in _split_instances(cfg, "valid"):
        inst = read_instance(path)
        pred = _read_predictions(
            _require_file(preds_dir / f"{path.stem}.csv", "predict"))
        ref = bnb.solve(inst,
                        bnb.BnbConfig(time_limit_s=cfg.ref_time_limit_s))
        if ref.objective is None:
            raise RuntimeError(f"no reference solution for {inst.name!r} "
                               f"within {cfg.ref_time_limit_s} s")
        triples.append((inst, _z_for_instance(inst, pred), ref.objective))
    return triples


def cmd_gridsearch(cfg: ExperimentConfig) -> None:
    validation = _validation_triples(cfg)
    solver = _solver_config(cfg)
    phi, eta = predictor.grid_search(validation, cfg.phi_grid, cfg.eta_grid,
                                     predictor.ApplyConfig(solver=solver))
    gaps = []
    for inst, z, ref_obj in validation:
        res = predictor.approximate_solve(
            inst, z, predictor.ApplyConfig(phi=phi, eta=eta, solver=solver))
        gaps.append(predictor.INFEASIBLE_GAP if res.objective is None
                    else metrics.primal_gap(res.objective, ref_obj))
    mean_gap = float(np.mean(gaps))
    _write_json(cfg.workdir / "tuned.json",
                {"phi": int(phi), "eta": float(eta),
                 "mean_primal_gap": mean_gap})
    print(f"gridsearch: phi={phi} eta={eta} "
          f"mean primal gap {mean_gap:.4f}% on validation")


def _tuned_pair(cfg: ExperimentConfig) -> tuple[int, float]:
    path = cfg.workdir / "tuned.json"
    if path.is_file():
        with open(path) as fh:
            tuned = json.load(fh)
        try:
            return int(tuned["phi"]), float(tuned["eta"])
        except (KeyError, TypeError, ValueError) as exc:
            raise RuntimeError(f"{path}: malformed tuned settings "
                               f"({exc})") from None
    return predictor.DEFAULTS.get(cfg.problem, (0, 1.0))


def _run_one(task) -> dict:
    inst_path, pred_path, mode, phi, eta, time_limit, node_limit = task
    inst = read_instance(inst_path)
    solver = bnb.BnbConfig(time_limit_s=time_limit, node_limit=node_limit)
    if mode == "baseline":
        res = bnb.solve(inst, solver)
        phi_out = eta_out = ""
    else:
        z = _z_for_instance(inst, _read_predictions(pred_path))
        apply_cfg = predictor.ApplyConfig(
            phi=phi, eta=eta, solver=solver,
            mode=predictor.APPROXIMATE if mode == "approx"
            else predictor.EXACT)
        solve = (predictor.approximate_solve if mode == "approx"
                 else predictor.exact_solve)
        res = solve(inst, z, apply_cfg)
        phi_out, eta_out = phi, _fmt(eta)
    return {
        "instance": inst.name,
        "mode": mode,
        "phi": phi_out,
        "eta": eta_out,
        "status": res.status,
        "objective": "" if res.objective is None else _fmt(res.objective),
        "lower_bound": _fmt(res.lower_bound),
        "nodes": res.nodes,
        "wall_time_s": _fmt(res.wall_time_s),
    }


def cmd_run(cfg: ExperimentConfig, mode: str) -> None:
    if mode not in RUN_MODES:
        raise ConfigError(f"unknown run mode {mode!r}; "
                          f"choose from {RUN_MODES}")
    paths = _split_instances(cfg, "test")
    phi, eta = _tuned_pair(cfg)
    tasks = []
    for path in paths:
        pred_path = None
        if mode != "baseline":
            preds_dir = _require_dir(cfg.workdir / "predictions", "predict")
            pred_path = _require_file(preds_dir / f"{path.stem}.csv",
                                      "predict")
        tasks.append((path, pred_path, mode, phi, eta,
                      cfg.solve_time_limit_s, cfg.solve_node_limit))
    rows = _pmap(_run_one, tasks, cfg.jobs)
    out = cfg.workdir / f"results_{mode}.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(_RESULT_FIELDS))
        writer.writeheader()
        writer.writerows(rows)
    solved = sum(1 for row in rows if row["objective"] != "")
    print(f"run[{mode}]: {solved}/{len(rows)} instances with a solution; "
          f"wrote {out}")


def _read_results(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        missing = set(_RESULT_FIELDS) - set(row)
        if missing:
            raise RuntimeError(f"{path}: results row missing columns "
                               f"{sorted(missing)}")
    return rows


def _prediction_quality(cfg: ExperimentConfig, report: metrics.EvalReport):
    """AP and accuracy curves of the validation predictions."""
    labels_dir = _require_dir(cfg.workdir / "labels", "label")
    preds_dir = _require_dir(cfg.workdir / "predictions", "predict")
    curves_dir = cfg.workdir / "curves"
    curves_dir.mkdir(parents=True, exist_ok=True)
    per_instance = []
    for path in _split_instances(cfg, "valid"):
        name = path.stem
        ls = labeler.read_labels(_require_file(labels_dir / path.name,
                                               "label"))
        pred = _read_predictions(_require_file(preds_dir / f"{name}.csv",
                                               "predict"))
        mask = ls.stable_mask()
        y = ls.targets()[mask]
        z = np.array([pred.get(v, 0.5) for v in ls.var_names])[mask]
        row = {"instance": name, "n_binary": len(ls.var_names),
               "n_stable": int(mask.sum()), "ap": None, "ap_baseline": None,
               "accuracy": None}
        if len(y) and (y == 1).any():
            row["ap"] = metrics.average_precision(z, y)
            row["ap_baseline"] = metrics.average_precision(
                metrics.prevalence_baseline(y), y)
        if len(y):
            curve = metrics.accuracy_at_fraction(z, y, cfg.fractions)
            metrics.write_curve_csv(curves_dir / f"{name}.csv", curve)
            row["accuracy"] = curve[-1][1] if cfg.fractions else None
        per_instance.append(row)
    scored = [row for row in per_instance if row["ap"] is not None]
    report.summary["validation"] = {
        "instances": len(per_instance),
        "mean_ap": (float(np.mean([row["ap"] for row in scored]))
                    if scored else None),
        "mean_ap_baseline": (float(np.mean([row["ap_baseline"]
                                            for row in scored]))
                             if scored else None),
        "per_instance": per_instance,
    }


def _solver_quality(cfg: ExperimentConfig, report: metrics.EvalReport,
                    runtimes: dict):
    """Primal/optimality gaps of every results_{mode}.csv present."""
    present = [(mode, cfg.workdir / f"results_{mode}.csv")
               for mode in RUN_MODES
               if (cfg.workdir / f"results_{mode}.csv").is_file()]
    if not present:
        raise MissingInputError(
            f"no results_*.csv under {cfg.workdir} "
            f"(run the 'run' stage first)")
    references = {}
    for path in _split_instances(cfg, "test"):
        inst = read_instance(path)
        ref = bnb.solve(inst,
                        bnb.BnbConfig(time_limit_s=cfg.ref_time_limit_s))
        if ref.objective is None:
            raise RuntimeError(f"no reference solution for {inst.name!r} "
                               f"within {cfg.ref_time_limit_s} s")
        references[inst.name] = ref.objective
    mode_summary = {}
    for mode, path in present:
        gaps, opt_gaps, solved = [], [], 0
        for row in _read_results(path):
            name = row["instance"]
            if name not in references:
                raise RuntimeError(f"{path}: unknown test instance {name!r}")
            obj = float(row["objective"]) if row["objective"] else None
            lb = float(row["lower_bound"])
            out = {"instance": name, "mode": mode, "status": row["status"],
                   "objective": row["objective"],
                   "reference": _fmt(references[name]),
                   "primal_gap": None, "optimality_gap": None,
                   "nodes": int(row["nodes"])}
            runtimes[f"{mode}:{name}"] = float(row["wall_time_s"])
            if obj is None:
                gaps.append(predictor.INFEASIBLE_GAP)
            else:
                solved += 1
                gap = metrics.primal_gap(obj, references[name])
                gaps.append(gap)
                out["primal_gap"] = gap
                # the cut-augmented bound of the approximate mode is not
                # valid for the original instance, so no gap is claimed
                if mode != "approx" and np.isfinite(lb):
                    out["optimality_gap"] = metrics.optimality_gap(obj, lb)
                    opt_gaps.append(out["optimality_gap"])
            report.rows.append(out)
        mode_summary[mode] = {
            "instances": len(gaps),
            "with_solution": solved,
            "mean_primal_gap": float(np.mean(gaps)) if gaps else None,
            "mean_optimality_gap": (float(np.mean(opt_gaps))
                                    if opt_gaps else None),
        }
    report.summary["modes"] = mode_summary


def cmd_eval(cfg: ExperimentConfig) -> None:
    started = time.perf_counter()
    report = metrics.EvalReport()
    runtimes: dict[str, float] = {}
    _prediction_quality(cfg, report)
    _solver_quality(cfg, report, runtimes)
    runtimes["eval_s"] = time.perf_counter() - started
    _write_json(cfg.workdir / "report.json",
                {"summary": report.summary, "rows": report.rows,
                 "runtimes": runtimes})
    metrics.write_report_csv(cfg.workdir / "report.csv", report)
    print("mode      instances  with_solution  mean_primal_gap%")
    for mode, stats in report.summary["modes"].items():
        gap = stats["mean_primal_gap"]
        print(f"{mode:<9} {stats['instances']:>9}  "
              f"{stats['with_solution']:>13}  "
              f"{'-' if gap is None else format(gap, '.4f'):>16}")
    val = report.summary["validation"]
    if val["mean_ap"] is not None:
        print(f"validation mean AP {val['mean_ap']:.4f} "
              f"(prevalence baseline {val['mean_ap_baseline']:.4f})")
    print(f"eval: wrote {cfg.workdir / 'report.json'} and report.csv")


# ---------------------------------------------------------------------------
# Entry point


class _Parser(argparse.ArgumentParser):
    # route usage errors through the invalid-config exit code instead of
    # argparse's bare exit(2)
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mippred",
                     description="Solution-prediction pipeline for mixed "
                                 "integer programs")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="INI experiment file (defaults apply if omitted)")
        p.add_argument("--workdir", type=Path, default=Path("."),
                       help="experiment directory (default: current)")
        p.add_argument("--scale", type=float, default=1.0,
                       help="multiplier on the train/valid/test counts")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for per-instance work")
        return p

    add("gen", "generate train/valid/test instances")
    label_p = add("label", "run proximity-search labeling over train+valid")
    label_p.add_argument("--label-mode", choices=("proximity", "optimal"),
                         default="proximity",
                         help="proximity: improving-solution traces; "
                              "optimal: single optimal solution per instance")
    add("featurize", "build graphs for all splits and fit the scaler")
    add("train", "train the prediction model on the train split")
    add("predict", "write per-variable predictions for valid+test")
    add("gridsearch", "tune (phi, eta) on the validation split")
    run_p = add("run", "solve the test split under the configured budget")
    run_p.add_argument("--mode", choices=RUN_MODES, required=True,
                       help="approx: local-branching cut; exact: root "
                            "branching; baseline: plain solve")
    add("eval", "report prediction quality and solver gaps")
    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "label": cmd_label,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "gridsearch": cmd_gridsearch,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.workdir, scale=args.scale,
                          jobs=args.jobs)
        if args.command == "run":
            cmd_run(cfg, args.mode)
        elif args.command == "label":
            cmd_label(cfg, args.label_mode)
        else:
            _COMMANDS[args.command](cfg)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
