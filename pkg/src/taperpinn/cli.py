"""Command line entry point: ``taperpinn {run,matrix,verify,eval}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
3 verification failure. ``TAPERPINN_OUTPUT_ROOT`` re-roots relative output
directories.
"""

import argparse
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
import logging
import os
from pathlib import Path
import sys
import time

import numpy as np
import yaml

from taperpinn.errors import ContractViolation, NumericFailure
from taperpinn.lossbuilder import evaluation_grid, relative_error
from taperpinn.network import load_checkpoint, save_checkpoint
from taperpinn.physics import FORMULATIONS, ProblemSpec, reference_solution
from taperpinn.trainer import TrainConfig, TrainingAborted, evaluate_field, train
from taperpinn import verification

log = logging.getLogger("taperpinn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "TAPERPINN_OUTPUT_ROOT"

FIELD_HEADER = ("x", "z", "re_u", "im_u")
TABLE_HEADER = ("formulation", "k", "status", "eps_R", "eps_I", "eps_R_train",
                "eps_I_train", "final_loss", "wall_time_s")

# config file layout: section -> TrainConfig fields it may set
SECTIONS = {
    "problem": ("k", "formulation", "b", "n_modes"),
    "network": ("hidden_layers", "neurons", "alpha0"),
    "sampling": ("grid_x", "grid_z", "n_b", "eval_grid_x", "eval_grid_z"),
    "optimizer": ("total_steps", "lr0", "decay_rate", "decay_steps", "staircase",
                  "beta1", "beta2", "eps_adam", "sa_ranges"),
    "run": ("seed", "eval_every", "output_dir"),
    "matrix": ("formulations", "k_values", "parallel"),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"
    formulations: list = field(default_factory=lambda: list(FORMULATIONS))
    k_values: list = field(default_factory=lambda: [8.0, 13.0])
    parallel: bool = False

    def to_dict(self):
        t = self.train.to_dict()
        out = {}
        for section, keys in SECTIONS.items():
            if section == "run":
                out[section] = {"seed": t["seed"], "eval_every": t["eval_every"],
                                "output_dir": self.output_dir}
            elif section == "matrix":
                out[section] = {"formulations": list(self.formulations),
                                "k_values": [float(k) for k in self.k_values],
                                "parallel": self.parallel}
            else:
                out[section] = {key: t[key] for key in keys}
        return out

    def output_path(self):
        path = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            path = Path(root) / path
        return path


def _key_lines(text):
    """Map ``section.key`` to its 1-based line in the YAML source."""
    lines = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if not isinstance(root, yaml.MappingNode):
        return lines
    for knode, vnode in root.value:
        lines[knode.value] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.MappingNode):
            for k2, _ in vnode.value:
                lines[f"{knode.value}.{k2.value}"] = k2.start_mark.line + 1
    return lines


def parse_config(text, source="<config>"):
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    lines = _key_lines(text)

    def fail(path, msg):
        line = lines.get(path)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {path}: {msg}")

    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    train_kw, exp_kw = {}, {}
    int_fields = {f.name for f in fields(TrainConfig) if f.type is int}
    for section, body in raw.items():
        if section not in SECTIONS:
            fail(section, f"unknown section (expected one of {', '.join(SECTIONS)})")
        if not isinstance(body, dict):
            fail(section, "section must be a mapping")
        for key, value in body.items():
            path = f"{section}.{key}"
            if key not in SECTIONS[section]:
                fail(path, "unknown key")
            if key in ("output_dir",):
                exp_kw[key] = str(value)
            elif key == "formulations":
                if not isinstance(value, list) or not value:
                    fail(path, "must be a non-empty list")
                bad = [v for v in value if v not in FORMULATIONS]
                if bad:
                    fail(path, f"unknown formulation(s) {bad}")
                exp_kw[key] = list(value)
            elif key == "k_values":
                if not isinstance(value, list) or not value:
                    fail(path, "must be a non-empty list")
                try:
                    exp_kw[key] = [float(v) for v in value]
                except (TypeError, ValueError):
                    fail(path, "must be a list of numbers")
            elif key == "parallel":
                exp_kw[key] = bool(value)
            elif key in int_fields:
                if isinstance(value, bool) or not isinstance(value, int):
                    fail(path, f"must be an integer, got {value!r}")
                train_kw[key] = value
            elif key in ("formulation",):
                train_kw[key] = str(value)
            elif key == "staircase":
                train_kw[key] = bool(value)
            elif key == "sa_ranges":
                if not isinstance(value, dict):
                    fail(path, "must be a mapping")
                train_kw[key] = {str(k): float(v) for k, v in value.items()}
            else:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    fail(path, f"must be a number, got {value!r}")
                train_kw[key] = float(value)
    try:
        cfg = TrainConfig(**train_kw)
        cfg.problem()
    except ContractViolation as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return ExperimentConfig(train=cfg, **exp_kw)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def dump_config(exp, path):
    with open(path, "w") as fh:
        yaml.safe_dump(exp.to_dict(), fh, sort_keys=False)


def write_field_csv(path, x, z, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_HEADER)
        for row in zip(x, z, values.real, values.imag):
            w.writerow([repr(float(v)) for v in row])


def _final_metrics(params, cfg):
    spec = cfg.problem()
    ex, ez = evaluation_grid(spec, cfg.eval_grid_x, cfg.eval_grid_z)
    values = evaluate_field(params, spec, ex, ez)
    eps_r, eps_i = relative_error(values, reference_solution(spec, ex, ez))
    tx, tz = evaluation_grid(spec, cfg.grid_x, cfg.grid_z)
    tr_r, tr_i = relative_error(evaluate_field(params, spec, tx, tz),
                                reference_solution(spec, tx, tz))
    return (ex, ez, values), {"eps_R": eps_r, "eps_I": eps_i,
                              "eps_R_train": tr_r, "eps_I_train": tr_i}


def execute_run(exp, out_dir):
    """Train one configuration and write all artefacts into ``out_dir``.

    Returns ``(status, metrics)`` where status is ``"ok"`` or ``"failed"``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = exp.train
    dump_config(exp, out_dir / "config.yaml")
    start = time.perf_counter()
    status = "ok"
    with open(out_dir / "trace.csv", "w") as sink:
        try:
            params, _, trace = train(cfg, sink=sink)
        except TrainingAborted as exc:
            log.error("%s: %s", out_dir, exc)
            params, trace, status = exc.params, exc.trace, "failed"
    wall = time.perf_counter() - start
    save_checkpoint(params, out_dir / "params.npz")
    metrics = {"final_loss": trace.last["loss"] if trace.last else float("nan"),
               "wall_time_s": wall}
    try:
        (ex, ez, values), errs = _final_metrics(params, cfg)
        write_field_csv(out_dir / "field.csv", ex, ez, values)
        metrics.update(errs)
    except NumericFailure as exc:
        log.error("%s: cannot evaluate field: %s", out_dir, exc)
        status = "failed"
    return status, metrics


def cmd_run(args):
    exp = load_config(args.config)
    out_dir = exp.output_path()
    status, metrics = execute_run(exp, out_dir)
    print(f"{exp.train.formulation} k={exp.train.k:g}: status={status} "
          + " ".join(f"{k}={v:.4g}" for k, v in metrics.items()))
    print(f"outputs in {out_dir}")
    return EXIT_OK if status == "ok" else EXIT_NUMERIC


def matrix_cells(exp):
    cells, seen = [], set()
    for form in exp.formulations:
        for k in exp.k_values:
            key = (form, float(k))
            if key in seen:
                log.warning("duplicate matrix cell %s k=%g ignored", form, k)
                continue
            seen.add(key)
            cells.append(key)
    return cells


def cell_seed(seed, index):
    """Independent per-cell seed derived from the base seed and the cell index."""
    return int(np.random.SeedSequence((seed, index)).generate_state(1)[0])


def _cell_config(exp, form, k, index):
    d = exp.train.to_dict()
    d.update(formulation=form, k=k, seed=cell_seed(exp.train.seed, index))
    return ExperimentConfig(TrainConfig(**d), exp.output_dir, [form], [k], False)


def _run_cell(args):
    cell_exp, out_dir = args
    try:
        cell_exp.train.problem()
    except ContractViolation as exc:
        log.error("cell %s k=%g rejected: %s", cell_exp.train.formulation,
                  cell_exp.train.k, exc)
        return "failed", {}
    return execute_run(cell_exp, out_dir)


def write_error_table(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for row in rows:
            w.writerow([row.get(c, "") if not isinstance(row.get(c), float)
                        else repr(row[c]) for c in TABLE_HEADER])


def run_matrix(exp):
    out_root = exp.output_path()
    out_root.mkdir(parents=True, exist_ok=True)
    dump_config(exp, out_root / "config.yaml")
    cells = matrix_cells(exp)
    jobs = [(_cell_config(exp, form, k, i), out_root / f"{form}_k{k:g}")
            for i, (form, k) in enumerate(cells)]
    if exp.parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    rows = []
    for (form, k), (status, metrics) in zip(cells, results):
        rows.append({"formulation": form, "k": float(k), "status": status, **metrics})
    table = out_root / "error_table.csv"
    write_error_table(table, rows)
    return table, rows


def cmd_matrix(args):
    exp = load_config(args.config)
    table, rows = run_matrix(exp)
    for row in rows:
        print(f"{row['formulation']:>9} k={row['k']:<5g} {row['status']:<6} "
              f"eps_R={row.get('eps_R', float('nan')):.4g} "
              f"eps_I={row.get('eps_I', float('nan')):.4g}")
    print(f"error table: {table}")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_NUMERIC


def cmd_verify(args):
    k = formulation = None
    b = 2.0
    if args.config:
        exp = load_config_lenient(args.config)
        k, formulation, b = exp["k"], exp["formulation"], exp["b"]
    results = verification.run_all(k=k, formulation=formulation, b=b)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def load_config_lenient(path):
    """Problem settings only; a forbidden k must reach the checks, not abort parsing."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    problem = raw.get("problem", {}) if isinstance(raw, dict) else {}
    return {"k": problem.get("k"), "formulation": problem.get("formulation"),
            "b": float(problem.get("b", 2.0))}


def parse_grid(text):
    parts = text.lower().replace(",", "x").split("x")
    try:
        nx, nz = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid must look like 240x20, got {text!r}") from None
    if nx < 1 or nz < 1:
        raise ConfigError("grid sizes must be positive")
    return nx, nz


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    nx, nz = parse_grid(args.grid)
    cfg_path = ckpt.parent / "config.yaml"
    settings = {"k": 8.0, "formulation": "taper", "b": 2.0, "n_modes": 1}
    if cfg_path.exists():
        t = load_config(cfg_path).train
        settings.update(k=t.k, formulation=t.formulation, b=t.b, n_modes=t.n_modes)
    for key in ("k", "formulation", "b"):
        if getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    try:
        spec = ProblemSpec(float(settings["k"]), float(settings["b"]),
                           settings["formulation"], int(settings["n_modes"]))
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    try:
        params = load_checkpoint(ckpt)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint {ckpt}: {exc}") from exc
    x, z = evaluation_grid(spec, nx, nz)
    values = evaluate_field(params, spec, x, z)
    out = args.out or "-"
    if out == "-":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(FIELD_HEADER)
        for row in zip(x, z, values.real, values.imag):
            w.writerow([repr(float(v)) for v in row])
    else:
        write_field_csv(out, x, z, values)
    eps_r, eps_i = relative_error(values, reference_solution(spec, x, z))
    print(f"eps_R={eps_r:.6g} eps_I={eps_i:.6g}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="taperpinn",
        description="PINN solver for Helmholtz scattering at a waveguide junction",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration")
    run.add_argument("config")
    run.set_defaults(func=cmd_run)

    mat = sub.add_parser("matrix", help="train every (formulation, k) cell")
    mat.add_argument("config")
    mat.set_defaults(func=cmd_matrix)

    ver = sub.add_parser("verify", help="run the oracle checks")
    ver.add_argument("config", nargs="?", help="optional config selecting k")
    ver.set_defaults(func=cmd_verify)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a grid")
    ev.add_argument("checkpoint")
    ev.add_argument("grid", help="NXxNZ, e.g. 240x20")
    ev.add_argument("--k", type=float)
    ev.add_argument("--formulation", choices=FORMULATIONS)
    ev.add_argument("--b", type=float)
    ev.add_argument("-o", "--out", help="CSV path, '-' for stdout (default)")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
