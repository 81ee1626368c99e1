"""``neuralpde run <config> [--out DIR] [--seed N] [--threads N]``.

Exit codes: 0 success, 2 unreadable or malformed config, 3 invalid
parameters, 4 numerical failure.  On failure a single JSON line with the
error category goes to stderr and no output files are left behind.
"""

import argparse
import copy
import csv
import json
import os
import shutil
import sys
import tempfile
import time

import yaml

EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERICAL = 2, 3, 4


class ConfigError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _same_kind(default, value):
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    if isinstance(default, dict):
        return isinstance(value, dict)
    return True


def _merge(defaults, user, path):
    """Defaults overlaid with ``user``; unknown keys and type mismatches are rejected.

    Mode maps (``a``, ``bdot``, ``velocity``) are free-form and replace the
    default wholesale.
    """
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in defaults:
            raise ConfigError(f"unknown key {where!r}", EXIT_VALIDATION)
        ref = defaults[key]
        if not _same_kind(ref, value):
            raise ConfigError(f"{where!r} should be {type(ref).__name__}, got {value!r}", EXIT_VALIDATION)
        if isinstance(ref, dict) and key not in ("a", "bdot", "velocity"):
            out[key] = _merge(ref, value, where)
        elif isinstance(ref, float):
            out[key] = float(value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path):
    """Parse and validate; returns the fully resolved config (defaults filled in)."""
    from .experiments import DEFAULTS

    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", EXIT_PARSE) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}", EXIT_PARSE) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping", EXIT_PARSE)
    kind = raw.get("experiment")
    if kind not in DEFAULTS:
        raise ConfigError(f"experiment must be one of {sorted(DEFAULTS)}, got {kind!r}", EXIT_VALIDATION)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}", EXIT_VALIDATION)
    params = raw.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping", EXIT_VALIDATION)
    extra = set(raw) - {"experiment", "seed", "params"}
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}", EXIT_VALIDATION)
    return {"experiment": kind, "seed": seed, "params": _merge(DEFAULTS[kind], params, "params")}


def _write_result(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _jsonable(v):
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    try:
        return float(v)
    except (TypeError, ValueError):
        return str(v)


def run(config_path, out, seed=None, threads=None):
    """Run one experiment; returns the result bundle dictionary."""
    from threadpoolctl import threadpool_limits

    from . import __version__
    from ._errors import BudgetExceeded, NumericalFailure, ResolutionExceeded, UnsupportedError
    from .experiments import RUNNERS

    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    parent = os.path.dirname(os.path.abspath(out)) or "."
    os.makedirs(parent, exist_ok=True)
    work = tempfile.mkdtemp(prefix=".neuralpde-", dir=parent)
    start = time.perf_counter()
    try:
        with threadpool_limits(limits=threads):
            try:
                header, rows, metrics, arts = RUNNERS[cfg["experiment"]](cfg["params"], cfg["seed"], work)
            except (NumericalFailure, BudgetExceeded, ResolutionExceeded) as exc:
                raise ConfigError(f"{type(exc).__name__}: {exc}", EXIT_NUMERICAL) from exc
            except (ValueError, UnsupportedError, TypeError, KeyError) as exc:
                raise ConfigError(f"invalid parameters: {exc}", EXIT_VALIDATION) from exc
        _write_result(os.path.join(work, "result.csv"), header, rows)
        with open(os.path.join(work, "config.echo"), "w") as fh:
            yaml.safe_dump(cfg, fh, sort_keys=True)
        files = ["result.csv", "config.echo"] + list(arts) + ["bundle.json"]
        bundle = {
            "experiment": cfg["experiment"], "seed": cfg["seed"], "version": __version__,
            "config_echo": "config.echo", "metrics": {k: _jsonable(v) for k, v in metrics.items()},
            "files": files, "wall_clock_s": time.perf_counter() - start,
        }
        with open(os.path.join(work, "bundle.json"), "w") as fh:
            json.dump(bundle, fh, indent=2, sort_keys=True)
        os.makedirs(out, exist_ok=True)
        for name in files:
            os.replace(os.path.join(work, name), os.path.join(out, name))
        return bundle
    finally:
        shutil.rmtree(work, ignore_errors=True)


def _parser():
    p = argparse.ArgumentParser(prog="neuralpde", description="Run one reproducible experiment.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a YAML config")
    r.add_argument("config")
    r.add_argument("--out", default="out", help="output directory (default: ./out)")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print(json.dumps({"error": "validation", "message": "seed out of range"}), file=sys.stderr)
        return EXIT_VALIDATION
    if args.threads is not None and args.threads < 1:
        print(json.dumps({"error": "validation", "message": "threads must be >= 1"}), file=sys.stderr)
        return EXIT_VALIDATION
    try:
        bundle = run(args.config, args.out, seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        category = {EXIT_PARSE: "parse", EXIT_VALIDATION: "validation", EXIT_NUMERICAL: "numerical"}[exc.code]
        print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
        return exc.code
    summary = ", ".join(f"{k}={v}" for k, v in bundle["metrics"].items())
    print(f"{bundle['experiment']}: {summary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
