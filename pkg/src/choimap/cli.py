"""
Command line interface.

    choimap run <config> [--oracle] [--dt-ladder 1,0.5,0.25] [--rank-ladder 4,8,16]
    choimap analyze <series.bin> [--config <config>] [--output DIR] ...
    choimap oracle <config>

Exit codes: 0 success, 2 configuration or container error, 3 numerical failure.
The thread count of the linear-algebra backend follows ``CHOIMAP_NUM_THREADS``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import warnings
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import io, pipeline
from .analysis import AnalysisError
from .oracle import OracleSizeError
from .tdvp import KrylovError, PropagationError
from .tt_core import TTError
from .vibronic_model import ModelError, thermalize

logger = logging.getLogger("choimap")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _floats(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError("ranks must be integers")
    return [int(v) for v in vals]


def _window(text):
    vals = _floats(text)
    if len(vals) != 2 or vals[0] >= vals[1]:
        raise argparse.ArgumentTypeError("window must be 'start,end' with start < end")
    return tuple(vals)


def _add_analysis_flags(p):
    p.add_argument("--output", "-o", type=Path, help="output directory")
    p.add_argument("--ttm-memory", type=float, metavar="FS", help="transfer-tensor memory length")
    p.add_argument("--ttm-horizon", type=float, metavar="FS", help="extrapolation horizon")
    p.add_argument("--pauli-window", type=_window, metavar="T0,T1", help="Pauli fit window in fs")
    p.add_argument("--initial-site", type=int, metavar="N", help="1-based initially populated state")
    p.add_argument("--no-spectrum", action="store_true", help="skip the Choi spectrum")
    p.add_argument("--no-kernel", action="store_true", help="skip the memory kernel")
    p.add_argument("--no-plots", action="store_true", help="write CSV tables only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choimap", description="Finite-temperature reduced maps from TT propagation.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="propagate, extract the Choi series and analyze it")
    run.add_argument("config", type=Path)
    run.add_argument("--dt", type=float, metavar="FS")
    run.add_argument("--t-max", type=float, metavar="FS")
    run.add_argument("--stride", type=int, help="snapshot stride in steps")
    run.add_argument("--rank", type=int, help="TT rank cap")
    run.add_argument("--oracle", action="store_true", help="also compare against the dense oracle")
    run.add_argument("--dt-ladder", type=_floats, metavar="DT,...", help="TP residual table over time steps")
    run.add_argument("--rank-ladder", type=_ints, metavar="R,...", help="inter-rank map distances")
    _add_analysis_flags(run)

    ana = sub.add_parser("analyze", help="re-run analyses on a stored series")
    ana.add_argument("series", type=Path)
    ana.add_argument("--config", type=Path, help="take analysis settings from a run config")
    _add_analysis_flags(ana)

    orc = sub.add_parser("oracle", help="compare TT and dense propagation for a config")
    orc.add_argument("config", type=Path)
    orc.add_argument("--output", "-o", type=Path)
    return parser


def _override(cfg, args):
    for attr, key in (("dt", "dt"), ("t_max", "t_max"), ("stride", "snapshot_stride"), ("rank", "rank"),
                      ("output", "output"), ("ttm_memory", "ttm_memory"), ("ttm_horizon", "ttm_horizon"),
                      ("pauli_window", "pauli_window"), ("initial_site", "initial_site")):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "no_spectrum", False):
        cfg.spectrum = False
    if getattr(args, "no_kernel", False):
        cfg.kernel = False
    if getattr(args, "no_plots", False):
        cfg.plots = False
    if getattr(args, "oracle", False):
        cfg.oracle = True
    n = cfg.t_max / cfg.dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise io.ConfigError("t_max must be a whole number of steps", cfg.source)
    return cfg


def _load(cfg):
    spec = io.load_model(cfg.model_path)
    beta = cfg.beta if cfg.beta is not None else spec.beta
    if beta is None:
        raise io.ConfigError("no temperature given (beta_cm or temperature_K)", cfg.source)
    if spec.t_c is not None and cfg.t_max > spec.t_c:
        warnings.warn(
            f"t_max = {cfg.t_max:g} fs exceeds the bath validity window T_c = {spec.t_c:g} fs",
            RuntimeWarning,
            stacklevel=2,
        )
    try:
        return thermalize(spec.model, beta)
    except ModelError as exc:
        raise io.ConfigError(str(exc), cfg.model_path) from exc


def _print_table(header, rows, fmt="{:>14.6g}"):
    print("".join(f"{h:>14}" for h in header))
    for row in rows:
        print("".join(fmt.format(v) for v in row))


def cmd_run(args) -> int:
    cfg = _override(io.load_config(args.config), args)
    thermal = _load(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    series = pipeline.simulate(
        thermal, cfg.dt, cfg.n_steps, cfg.rank, cfg.snapshot_stride, cfg.krylov_dim, cfg.krylov_tol
    )
    t_prop = time.perf_counter() - t0
    io.write_series(series, out / "choi_series.bin")
    summary = pipeline.run_analyses(series, pipeline.AnalysisOptions.from_config(cfg), out)
    print(f"snapshots          {len(series)} (dt_map = {series.dt:g} fs)")
    print(f"final tp_residual  {summary['final_tp_residual']:.3e}")
    print(f"min CP eigenvalue  {summary['min_choi_eigenvalue']:.3e}")
    if "kernel_tail_ratio" in summary:
        print(f"kernel tail/peak   {summary['kernel_tail_ratio']:.3e}")
    print(f"propagation time   {t_prop:.2f} s")
    if cfg.oracle:
        gap = pipeline.oracle_gap(series, thermal, cfg.dt, cfg.snapshot_stride)
        io.write_csv(out / "oracle_gap.csv", ["t_fs", "frobenius_gap"], gap)
        print(f"oracle gap (max)   {gap[:, 1].max():.3e}")
    if args.dt_ladder:
        rows = pipeline.dt_ladder(
            thermal, args.dt_ladder, cfg.t_max, series.dt, cfg.rank, cfg.krylov_dim, cfg.krylov_tol
        )
        io.write_csv(out / "dt_ladder.csv", ["dt_fs", "mean_tp", "max_tp", "min_eig", "seconds"], rows)
        _print_table(["dt_fs", "mean_tp", "max_tp", "min_eig"], rows[:, :4])
        ordered = rows[np.argsort(-rows[:, 0])]
        mono = bool(np.all(np.diff(ordered[:, 1]) < 0))
        print(f"tp_residual decreases with dt: {'yes' if mono else 'no'}")
    if args.rank_ladder:
        rows = pipeline.rank_ladder(
            thermal, args.rank_ladder, cfg.dt, cfg.n_steps, cfg.snapshot_stride, cfg.krylov_dim, cfg.krylov_tol
        )
        io.write_csv(out / "rank_ladder.csv", ["rank", "max_gap_to_previous", "final_tp", "seconds"], rows)
        _print_table(["rank", "gap_to_prev", "final_tp"], rows[:, :3])
    print(f"wall time          {time.perf_counter() - t0:.2f} s")
    print(f"outputs in         {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    series = io.read_series(args.series)
    if args.config is not None:
        cfg = _override(io.load_config(args.config), args)
        opts = pipeline.AnalysisOptions.from_config(cfg)
        out = Path(cfg.output)
    else:
        opts = pipeline.AnalysisOptions(
            spectrum=not args.no_spectrum,
            kernel=not args.no_kernel,
            ttm_memory=args.ttm_memory,
            ttm_horizon=args.ttm_horizon,
            pauli_window=args.pauli_window,
            initial_site=args.initial_site or 1,
            plots=not args.no_plots,
        )
        out = args.output or args.series.parent
    summary = pipeline.run_analyses(series, opts, out)
    for name in summary["files"]:
        print(out / name)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = io.load_config(args.config)
    if args.output is not None:
        cfg.output = args.output
    thermal = _load(cfg)
    t0 = time.perf_counter()
    series = pipeline.simulate(
        thermal, cfg.dt, cfg.n_steps, cfg.rank, cfg.snapshot_stride, cfg.krylov_dim, cfg.krylov_tol
    )
    gap = pipeline.oracle_gap(series, thermal, cfg.dt, cfg.snapshot_stride)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "oracle_gap.csv", ["t_fs", "frobenius_gap"], gap)
    print(f"max Frobenius gap TT vs dense: {gap[:, 1].max():.3e}")
    print(f"wall time: {time.perf_counter() - t0:.2f} s")
    return EXIT_OK


def _thread_limit():
    n = os.environ.get("CHOIMAP_NUM_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": cmd_run, "analyze": cmd_analyze, "oracle": cmd_oracle}
    try:
        with _thread_limit():
            return handlers[args.command](args)
    except (io.ConfigError, io.ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PropagationError as exc:
        print(f"error: {exc} (last completed step {exc.step})", file=sys.stderr)
        return EXIT_NUMERIC
    except (KrylovError, AnalysisError, OracleSizeError, TTError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
