"""Command line: ``finsler-heat {run,sweep,validate} --config PATH``.

Exit codes: 0 all certificates pass, 1 a certificate failed (outputs are
still written), 2 invalid configuration, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import jsonschema
import numpy as np

from .experiments import CONFIG_SCHEMA, RUNNERS, SCHEMA_VERSION, SWEEP_SCHEMA
from .field import _atomic_write, save_field
from .flow import NonConvergenceError
from .wasserstein import JKOError

log = logging.getLogger("finsler_heat")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
OUT_ENV = "FINSLER_HEAT_OUT"


class ConfigError(ValueError):
    pass


def _plain(o):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return o


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _error_path(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def load_config(path: str, schema=CONFIG_SCHEMA) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    validate_config(cfg, schema)
    return cfg


def validate_config(cfg: dict, schema=CONFIG_SCHEMA) -> None:
    v = jsonschema.Draft202012Validator(schema)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"invalid config at '{_error_path(e)}': {e.message}")


def _write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    _atomic_write(path, buf.getvalue().encode())


def execute(cfg: dict, out_dir: str, seed: int) -> int:
    """Run one validated config, write its artifacts and return the exit code."""
    name = cfg["experiment"]
    summary = {"schema_version": SCHEMA_VERSION, "experiment": name, "seed": seed, "config": cfg}
    try:
        outcome = RUNNERS[name](cfg, seed)
    except (NonConvergenceError, JKOError) as exc:
        summary.update(passed=False, exit_code=EXIT_SOLVER, error=str(exc))
        _atomic_write(os.path.join(out_dir, "summary.json"), dumps(summary).encode())
        log.error("solver did not converge: %s", exc)
        return EXIT_SOLVER
    except (KeyError, TypeError, ValueError) as exc:
        # parameters that pass the schema but are rejected by the library
        msg = f"missing key {exc.args[0]!r}" if isinstance(exc, KeyError) else str(exc)
        raise ConfigError(f"invalid config: {msg}") from None
    code = EXIT_OK if outcome.passed else EXIT_FAILED
    summary.update(passed=bool(outcome.passed), exit_code=code, results=outcome.summary)
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "summary.json"), dumps(summary).encode())
    _write_csv(os.path.join(out_dir, "series.csv"), outcome.header, outcome.rows)
    for key, (grid, values) in outcome.fields.items():
        save_field(os.path.join(out_dir, "fields", f"{key}.field"), grid, values)
    return code


def _out_dir(args, cfg) -> str:
    return args.out or os.environ.get(OUT_ENV) or cfg.get("output_dir") or "out"


def _set_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def expand_sweep(sweep: dict) -> list[tuple[dict, dict]]:
    """Cartesian product of ``parameters`` applied to ``base``; [] if empty."""
    params = sweep["parameters"]
    names = sorted(params)
    if not names or any(len(params[n]) == 0 for n in names):
        return []
    runs = []
    for combo in itertools.product(*(params[n] for n in names)):
        cfg = copy.deepcopy(sweep["base"])
        cfg.setdefault("schema_version", SCHEMA_VERSION)
        for n, v in zip(names, combo):
            _set_path(cfg, n, v)
        runs.append((dict(zip(names, combo)), cfg))
    return runs


def _sweep_worker(job):
    cfg, out_dir, seed = job
    try:
        validate_config(cfg)
        code = execute(cfg, out_dir, seed)
    except ConfigError as exc:
        return EXIT_CONFIG, str(exc), {}
    results = {}
    path = os.path.join(out_dir, "summary.json")
    if os.path.exists(path):
        with open(path) as fh:
            results = json.load(fh).get("results", {})
    scalars = {k: v for k, v in results.items() if isinstance(v, (int, float, bool, str)) and not isinstance(v, dict)}
    return code, "", scalars


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.experiment and args.experiment != cfg["experiment"]:
        raise ConfigError(f"config runs '{cfg['experiment']}', not '{args.experiment}'")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _out_dir(args, cfg)
    code = execute(cfg, out, seed)
    print(f"{cfg['experiment']}: {'pass' if code == EXIT_OK else 'fail'} (exit {code}); outputs in {out}")
    return code


def cmd_sweep(args) -> int:
    sweep = load_config(args.config, SWEEP_SCHEMA)
    runs = expand_sweep(sweep)
    if not runs:
        raise ConfigError("sweep parameter grid is empty")
    seed = args.seed if args.seed is not None else sweep.get("seed", 0)
    out = _out_dir(args, sweep)
    jobs = [(cfg, os.path.join(out, f"run_{i:03d}"), seed) for i, (_, cfg) in enumerate(runs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    names = sorted(runs[0][0])
    scalar_keys = sorted({k for _, _, s in results for k in s})
    header = ["run"] + names + ["exit_code", "passed", "error"] + scalar_keys
    rows = []
    for i, ((values, _), (code, err, scalars)) in enumerate(zip(runs, results)):
        rows.append([f"run_{i:03d}"] + [json.dumps(values[n]) for n in names] + [code, code == EXIT_OK, err] + [_plain(scalars.get(k, "")) for k in scalar_keys])
    _write_csv(os.path.join(out, "sweep.csv"), header, rows)
    failed = sum(code != EXIT_OK for code, _, _ in results)
    print(f"sweep: {len(runs) - failed}/{len(runs)} runs passed; table in {os.path.join(out, 'sweep.csv')}")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_validate(args) -> int:
    with open(args.config) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    schema = SWEEP_SCHEMA if isinstance(doc, dict) and "base" in doc else CONFIG_SCHEMA
    validate_config(doc, schema)
    print("config is valid")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="finsler-heat", description="Finsler heat flow experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH")
    common.add_argument("--out", metavar="DIR", help=f"output directory (else ${OUT_ENV}, config output_dir, ./out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1)
    run = sub.add_parser("run", parents=[common], help="run one experiment")
    run.add_argument("experiment", nargs="?", help="optional; must match the config")
    run.set_defaults(func=cmd_run)
    sw = sub.add_parser("sweep", parents=[common], help="run a parameter grid")
    sw.set_defaults(func=cmd_sweep)
    va = sub.add_parser("validate", parents=[common], help="schema check only")
    va.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
