"""Command-line driver.

    vesicle run <config.toml> [--out DIR] [--snapshot-stride N]
    vesicle sweep <config.toml> --eps 0.0848,0.06,0.0424 --observable Ev --t 0.025 [--model B]

Exit codes: 0 success, 1 invalid configuration or arguments, 2 solver
failure, 3 I/O error.  ``VESICLE_NUM_THREADS`` sets the thread count of
the linear algebra libraries.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

import tomli

from .linalg import SolverError
from .sim import (
    ConfigError,
    SimConfig,
    SimulationError,
    SweepError,
    load_checkpoint,
    run,
    sweep_epsilon,
)

log = logging.getLogger("vesicle")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}
_INT_KEYS = {"nx", "ny", "snapshot_stride"}
_STR_KEYS = {"model", "solver_backend", "csv_path"}
_LIST_KEYS = {"domain": 4, "center": 2, "semi_axes": 2}


class ConfigParseError(ValueError):
    """Malformed TOML; ``line`` is the 1-based line of the error when known."""

    def __init__(self, message: str, line: int | None):
        super().__init__(message)
        self.line = line


def _number(key, val, integer=False):
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(key, f"expected a number, got {val!r}")
    if integer:
        if isinstance(val, float):
            raise ConfigError(key, f"expected an integer, got {val!r}")
        return int(val)
    return float(val)


def config_from_mapping(data: dict) -> SimConfig:
    """Build a ``SimConfig`` from parsed TOML; missing keys keep their defaults."""
    kwargs = {}
    for key, val in data.items():
        if key not in _FIELDS:
            raise ConfigError(key, "unknown configuration key")
        if key in _STR_KEYS:
            if not isinstance(val, str):
                raise ConfigError(key, f"expected a string, got {val!r}")
            kwargs[key] = val
        elif key in _LIST_KEYS:
            if not isinstance(val, list) or len(val) != _LIST_KEYS[key]:
                raise ConfigError(key, f"expected a list of {_LIST_KEYS[key]} numbers")
            kwargs[key] = tuple(_number(key, x) for x in val)
        else:
            kwargs[key] = _number(key, val, integer=key in _INT_KEYS)
    return SimConfig(**kwargs)


def parse_config_text(text: str) -> SimConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else None
        raise ConfigParseError(f"config parse error: {exc}", line) from None
    return config_from_mapping(data)


def parse_config(path) -> SimConfig:
    return parse_config_text(Path(path).read_text())


def _toml_value(val) -> str:
    if isinstance(val, str):
        return json.dumps(val)
    if isinstance(val, list):
        return "[" + ", ".join(_toml_value(x) for x in val) + "]"
    if isinstance(val, float):
        if not math.isfinite(val):
            raise ValueError("non-finite values cannot be written")
        return repr(val)
    return str(val)


def emit_config(cfg: SimConfig) -> str:
    """TOML text that ``parse_config_text`` maps back to ``cfg``."""
    lines = [f"{k} = {_toml_value(v)}" for k, v in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"


def _prepare_out_dir(out: Path, cfg: SimConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    # the effective-config echo doubles as a writability check
    (out / "effective_config.toml").write_text(emit_config(cfg))


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.snapshot_stride is not None:
        cfg = dataclasses.replace(cfg, snapshot_stride=args.snapshot_stride)
    out = Path(args.out)
    _prepare_out_dir(out, cfg)
    state = load_checkpoint(args.resume, cfg) if args.resume else None
    nx, ny = cfg.mesh_size
    log.info("model %s, mesh %dx%d, %d steps", cfg.model.value, nx, ny, cfg.n_steps)
    result = run(cfg, out, state=state, checkpoint_every=args.checkpoint_every)
    log.info("finished at t = %.6g", result.state.t)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    if args.model is not None:
        cfg = dataclasses.replace(cfg, model=args.model)
    try:
        eps = [float(x) for x in args.eps.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("eps", f"cannot parse epsilon list {args.eps!r}") from None
    if len(eps) < 3:
        raise ConfigError("eps", "an epsilon sweep needs at least 3 values")
    if any(not e > 0 for e in eps):
        raise ConfigError("eps", "epsilon values must be positive")
    # validate every case before running any of them
    for e in eps:
        dataclasses.replace(cfg, epsilon=e, nx=None, ny=None, t_end=args.t)
    out = Path(args.out)
    _prepare_out_dir(out, cfg)
    result = sweep_epsilon(cfg, eps, args.observable, args.t, csv_path=out / "sweep.csv")
    for row in result.rows:
        print(f"eps={row.eps:.6g} {args.observable}={row.value:.6e} nx={row.nx} runtime={row.runtime:.1f}s")
    print(f"slope = {result.slope:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vesicle", description="Vesicle in shear flow simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--snapshot-stride", type=int, default=None)
    p_run.add_argument("--checkpoint-every", type=int, default=0)
    p_run.add_argument("--resume", default=None, help="checkpoint file to continue from")
    p_run.set_defaults(func=cmd_run)

    p_sw = sub.add_parser("sweep", help="epsilon convergence sweep")
    p_sw.add_argument("config")
    p_sw.add_argument("--eps", required=True, help="comma separated epsilon values")
    p_sw.add_argument("--observable", choices=("Ev", "Ec"), required=True)
    p_sw.add_argument("--t", type=float, required=True, help="measurement time")
    p_sw.add_argument("--model", choices=("A", "B", "C"), default=None)
    p_sw.add_argument("--out", default="sweep_out")
    p_sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    threads = os.environ.get("VESICLE_NUM_THREADS")
    if threads:
        for var in ("MKL_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, SolverError) as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SweepError as exc:
        print(f"error: sweep aborted after {len(exc.rows)} cases: {exc}", file=sys.stderr)
        cause = exc.__cause__
        if isinstance(cause, (OSError,)):
            return EXIT_IO
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # e.g. a checkpoint written for another configuration
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
