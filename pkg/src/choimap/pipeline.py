"""
End-to-end driver: thermofield propagation to a Choi series, and the
analysis stage that turns a series into CSV tables and figures.

The analysis stage is a pure function of the series and the options, so
re-running it on a stored container reproduces the in-run files byte for byte.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import io
from .analysis import (
    AnalysisError,
    choi_spectrum,
    kernel_block_norms,
    nz_kernel,
    pauli_fit,
    pauli_propagate,
    population_kernel,
    population_map,
    rate_from_kernel,
    transfer_tensors,
    ttm_extrapolate,
)
from .choi import ChoiSeries, partial_trace_choi, series_diagnostics
from .tdvp import PropagationPlan, propagate
from .vibronic_model import ThermalModel, build_hamiltonian, initial_state, site_layout

logger = logging.getLogger(__name__)


def simulate(
    thermal: ThermalModel,
    dt: float,
    n_steps: int,
    rank=None,
    snapshot_stride: int = 1,
    krylov_dim: int = 30,
    krylov_tol: float = 1e-10,
    progress: Optional[Callable] = None,
) -> ChoiSeries:
    """Propagate the purified state with TDVP and extract a Choi matrix per snapshot.

    ``rank`` caps the bond ranks (int or one value per bond); ``None``
    uses the largest meaningful ranks, which makes TDVP exact up to the
    Krylov tolerance. The series grid is ``dt * snapshot_stride``.
    """
    layout = site_layout(thermal)
    h = build_hamiltonian(thermal, layout)
    if rank is None:
        rank = 2**62
    psi = initial_state(thermal, layout, rank=rank)
    logger.info("sites %s, ranks %s", layout.dims, psi.ranks)
    plan = PropagationPlan(dt, n_steps, krylov_dim, krylov_tol, snapshot_stride)
    mats = []

    def snap(t, state):
        mats.append(partial_trace_choi(state, layout, t).j)
        if progress is not None:
            progress(t)

    propagate(psi, h, plan, snap)
    return ChoiSeries(thermal.d_s, dt * snapshot_stride, np.stack(mats), thermal.beta, thermal.fingerprint())


# --------------------------------------------------------------------------
# analysis stage


@dataclass
class AnalysisOptions:
    spectrum: bool = True
    kernel: bool = True
    ttm_memory: Optional[float] = None  # fs
    ttm_horizon: Optional[float] = None  # fs
    pauli_window: Optional[tuple] = None  # fs
    initial_site: int = 1  # 1-based
    basis: Optional[np.ndarray] = None
    plots: bool = True

    @classmethod
    def from_config(cls, cfg: "io.RunConfig") -> "AnalysisOptions":
        return cls(
            spectrum=cfg.spectrum,
            kernel=cfg.kernel,
            ttm_memory=cfg.ttm_memory,
            ttm_horizon=cfg.ttm_horizon,
            pauli_window=cfg.pauli_window,
            initial_site=cfg.initial_site,
            basis=cfg.basis,
            plots=cfg.plots,
        )


def _steps(t_fs, dt):
    return int(round(t_fs / dt))


def run_analyses(series: ChoiSeries, opts: AnalysisOptions, outdir) -> dict:
    """Write every enabled analysis table (and figure) into ``outdir``.

    Returns a summary dictionary. Tables written: ``diagnostics.csv``,
    ``populations.csv`` and, when enabled, ``spectrum.csv``,
    ``kernel_norms.csv``, ``ttm.csv``, ``rates.csv`` and
    ``pauli_populations.csv``.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    d, dt, n = series.d_s, series.dt, len(series)
    if not 1 <= opts.initial_site <= d:
        raise AnalysisError(f"initial_site must lie in 1..{d}")
    summary = {"files": []}

    def wrote(name):
        summary["files"].append(name)
        return out / name

    diag = series_diagnostics(series)
    io.write_diagnostics_csv(wrote("diagnostics.csv"), diag)
    summary["final_tp_residual"] = float(diag[-1, 2])
    summary["max_tp_residual"] = float(diag[:, 2].max())
    summary["min_choi_eigenvalue"] = float(diag[:, 3].min())

    pops_maps = population_map(series, opts.basis)
    site = opts.initial_site - 1
    pops = pops_maps[:, :, site]
    io.write_populations_csv(wrote("populations.csv"), series.times, pops)
    curves = {"exact": (series.times, pops)}

    spec = None
    if opts.spectrum:
        spec = choi_spectrum(series)
        io.write_spectrum_csv(wrote("spectrum.csv"), spec)
        summary["final_entropy_bits"] = float(spec.entropy[-1])
        summary["max_entropy_bits"] = float(spec.entropy.max())

    krows = None
    if opts.kernel and n >= 3:
        kernel = nz_kernel(series)
        krows = kernel_block_norms(kernel)
        io.write_kernel_norms_csv(wrote("kernel_norms.csv"), krows)
        summary["kernel_tail_ratio"] = kernel.tail_ratio()

    horizon = n - 1 if opts.ttm_horizon is None else _steps(opts.ttm_horizon, dt)
    if opts.ttm_memory is not None and n >= 2:
        k = max(1, min(_steps(opts.ttm_memory, dt), n - 1))
        tensors = transfer_tensors(series, memory_len=k)
        res = ttm_extrapolate(tensors, k, horizon)
        ref = series.maps()
        inside = min(len(res.maps), n)
        err = np.full(len(res.maps), np.nan)
        err[:inside] = np.abs(res.maps[:inside] - ref[:inside]).max(axis=(1, 2))
        ttm_pops = _map_populations(res.maps, d, opts.basis)[:, :, site]
        rows = np.column_stack([res.times, ttm_pops, res.min_eigenvalues, err])
        header = ["t_fs"] + [f"p_{i + 1}" for i in range(d)] + ["min_eig", "reconstruction_error"]
        io.write_csv(wrote("ttm.csv"), header, rows)
        summary["ttm_memory_steps"] = k
        summary["ttm_max_reconstruction_error"] = float(np.nanmax(err))
        summary["ttm_min_eigenvalue"] = float(res.min_eigenvalues.min())
        curves[f"TTM {k * dt:g} fs"] = (res.times, ttm_pops)

    if opts.pauli_window is not None:
        n0 = max(1, _steps(opts.pauli_window[0], dt))
        n1 = min(n - 1, _steps(opts.pauli_window[1], dt))
        rates = {"least-squares": pauli_fit(pops_maps, dt, (n0, n1))}
        if n >= 3:
            rates["kernel-laplace"] = rate_from_kernel(population_kernel(pops_maps, dt))
        io.write_rates_csv(wrote("rates.csv"), rates)
        t_grid = dt * np.arange(horizon + 1)
        p0 = np.zeros(d)
        p0[site] = 1.0
        pp = pauli_propagate(rates["least-squares"], p0, t_grid)
        io.write_populations_csv(wrote("pauli_populations.csv"), t_grid, pp)
        summary["pauli_W"] = rates["least-squares"].W.tolist()
        curves["Pauli"] = (t_grid, pp)

    if opts.plots:
        from . import plotting

        plotting.plot_diagnostics(diag, wrote("diagnostics.png"))
        plotting.plot_populations(curves, wrote("populations.png"))
        if spec is not None:
            plotting.plot_spectrum(spec, wrote("spectrum.png"))
        if krows is not None:
            plotting.plot_kernel_norms(krows, wrote("kernel_norms.png"))
    return summary


def _map_populations(maps, d, basis):
    """Population maps from Liouville matrices (optionally in a rotated basis)."""
    from .choi import shuffle

    series = ChoiSeries(d, 1.0, shuffle(maps, d))
    return population_map(series, basis)


# --------------------------------------------------------------------------
# ladders and oracle comparison


def dt_ladder(thermal, dts, t_max, dt_map, rank=None, krylov_dim=30, krylov_tol=1e-10) -> np.ndarray:
    """Rows ``(dt, mean_tp, max_tp, min_eig, seconds)``, snapshots every ``dt_map``."""
    rows = []
    for step in dts:
        stride = _steps(dt_map, step)
        if stride < 1 or abs(stride * step - dt_map) > 1e-9 * dt_map:
            raise ValueError(f"snapshot spacing {dt_map} fs is not a multiple of dt = {step} fs")
        t0 = time.perf_counter()
        s = simulate(thermal, step, _steps(t_max, step), rank, stride, krylov_dim, krylov_tol)
        diag = series_diagnostics(s)
        rows.append((step, diag[:, 2].mean(), diag[:, 2].max(), diag[:, 3].min(), time.perf_counter() - t0))
    return np.array(rows)


def rank_ladder(thermal, ranks, dt, n_steps, stride=1, krylov_dim=30, krylov_tol=1e-10) -> np.ndarray:
    """Rows ``(rank, max_distance_to_previous, final_tp, seconds)``.

    The distance is the largest Frobenius gap between Choi matrices of
    consecutive ranks over all snapshots (NaN for the first rank).
    """
    rows = []
    prev = None
    for r in ranks:
        t0 = time.perf_counter()
        s = simulate(thermal, dt, n_steps, r, stride, krylov_dim, krylov_tol)
        gap = np.nan if prev is None else float(np.linalg.norm(s.mats - prev, axis=(1, 2)).max())
        diag = series_diagnostics(s)
        rows.append((r, gap, diag[-1, 2], time.perf_counter() - t0))
        prev = s.mats
    return np.array(rows)


def oracle_gap(series: ChoiSeries, thermal: ThermalModel, dt: float, stride: int) -> np.ndarray:
    """Rows ``(t_fs, frobenius_gap)`` between ``series`` and the dense reference."""
    from .oracle import dense_choi_series

    ref = dense_choi_series(thermal, dt, (len(series) - 1) * stride, stride=stride)
    gap = np.linalg.norm(series.mats - ref.mats, axis=(1, 2))
    return np.column_stack([series.times, gap])
