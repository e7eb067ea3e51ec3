"""
Post-processing of a reduced-map series.

Maps are handled as Liouville matrices (column-major vectorization) stacked
along axis 0 on a uniform grid ``t_n = n dt`` with ``Phi_0 = I``. All memory
recursions are exact discrete algebra; they are evaluated with block power
series so that long series stay cheap:

* kernel:          ``K(z) Phi(z) = R(z)`` with ``R_n = (Phi_{n+1} - Phi_n) / dt^2``
* NZ propagation:  ``[(1 - z) I - dt^2 z K(z)] X(z) = X_0 + (X_1 - X_0) z``
* transfer tensors: ``Phi(z) = I + T(z) Phi(z)``
"""

from __future__ import annotations

import logging
from functools import lru_cache
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import nnls
from scipy.signal import savgol_filter

from . import _series
from .choi import ChoiMatrix, ChoiSeries, rotate_choi, shuffle

logger = logging.getLogger(__name__)


class AnalysisError(ValueError):
    pass


def _maps_from(source) -> np.ndarray:
    if isinstance(source, ChoiSeries):
        return source.maps()
    maps = np.asarray(source)
    if maps.ndim != 3 or maps.shape[1] != maps.shape[2]:
        raise AnalysisError(f"expected a stack of square matrices, got shape {maps.shape}")
    return maps


def _check_identity(maps, what="Phi_0"):
    dev = np.abs(maps[0] - np.eye(maps.shape[1])).max()
    if dev > 1e-8:
        raise AnalysisError(f"{what} must be the identity (max deviation {dev:.2e})")


def _check_grid(times, dt):
    if times is None:
        return
    times = np.asarray(times, dtype=float)
    if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-12):
        raise AnalysisError("maps must lie on a uniform time grid")


# --------------------------------------------------------------------------
# Hermitian operator basis: Hermiticity-preserving maps are real there, which
# halves the cost of every series operation. The change of basis is unitary
# and exact, so results are unaffected beyond rounding.


def hermitian_basis(d: int) -> np.ndarray:
    """Columns are column-major ``vec`` of an orthonormal Hermitian operator basis."""
    cols = []
    h = 1.0 / np.sqrt(2.0)
    for i in range(d):
        e = np.zeros((d, d), dtype=np.complex128)
        e[i, i] = 1.0
        cols.append(e)
    for i in range(d):
        for j in range(i + 1, d):
            x = np.zeros((d, d), dtype=np.complex128)
            x[i, j] = x[j, i] = h
            y = np.zeros((d, d), dtype=np.complex128)
            y[i, j] = -1j * h
            y[j, i] = 1j * h
            cols += [x, y]
    return np.stack([c.reshape(-1, order="F") for c in cols], axis=1)


@lru_cache(maxsize=16)
def _basis(d: int) -> np.ndarray:
    return hermitian_basis(d)


def _to_real(stack):
    """``(S^dag X S, S)`` when that is real (Hermiticity preserving maps), else ``(X, None)``."""
    if np.isrealobj(stack):
        return stack, None
    dim = stack.shape[-1]
    d = int(round(np.sqrt(dim)))
    if d * d != dim or stack.shape[-2] != dim or d == 1:
        return stack, None
    s = _basis(d)
    rot = s.conj().T @ (stack @ s)
    scale = max(float(np.abs(rot).max(initial=0.0)), 1.0)
    if np.abs(rot.imag).max(initial=0.0) > 1e-13 * scale:
        return stack, None
    return np.ascontiguousarray(rot.real), s


def _from_real(stack, s):
    """Inverse of :func:`_to_real`: ``S X S^dag``."""
    if s is None:
        return stack
    return s @ (stack @ s.conj().T)


# --------------------------------------------------------------------------
# spectra


@dataclass
class SpectrumSeries:
    times: np.ndarray
    eigenvalues: np.ndarray  # (N, d^2), descending
    entropy: np.ndarray
    effective_rank: np.ndarray


def entropy_bits(lam: np.ndarray) -> float:
    lam = np.asarray(lam, dtype=float)
    lam = lam[lam > 0]
    return float(-np.sum(lam * np.log2(lam))) if lam.size else 0.0


def choi_spectrum(series: ChoiSeries) -> SpectrumSeries:
    """Eigenvalues, von Neumann entropy (bits) and ``2^S`` of ``J / d`` per snapshot."""
    mats = series.mats / series.d_s
    herm = 0.5 * (mats + mats.conj().transpose(0, 2, 1))
    lam = np.linalg.eigvalsh(herm)[:, ::-1]
    ent = np.array([entropy_bits(row) for row in lam])
    return SpectrumSeries(series.times.copy(), lam, ent, 2.0**ent)


# --------------------------------------------------------------------------
# time-local generator


@dataclass
class TimeLocalGenerator:
    times: np.ndarray  # t_1 .. t_{N-1}
    generators: np.ndarray
    unreliable: np.ndarray  # bool per step


def tl_generator(source, dt: Optional[float] = None, reg: float = 1e-10) -> TimeLocalGenerator:
    """``L_{n+1} = (Phi_{n+1} - Phi_n)/dt pinv(Phi_n)``.

    Singular values of ``Phi_n`` below ``reg * sigma_max`` are dropped;
    such steps are flagged in ``unreliable`` rather than aborting.
    """
    if isinstance(source, ChoiSeries):
        dt = source.dt
    if dt is None or not dt > 0:
        raise AnalysisError("a positive dt is required")
    maps = _maps_from(source)
    if len(maps) < 2:
        raise AnalysisError("the time-local generator needs at least two maps")
    n = len(maps) - 1
    gens = np.zeros((n,) + maps.shape[1:], dtype=np.result_type(maps, np.complex128))
    flags = np.zeros(n, dtype=bool)
    for k in range(n):
        sv = np.linalg.svd(maps[k], compute_uv=False)
        flags[k] = sv[-1] <= reg * sv[0]
        gens[k] = (maps[k + 1] - maps[k]) / dt @ np.linalg.pinv(maps[k], rcond=reg)
    if flags.any():
        logger.info("time-local generator: %d of %d steps near-singular", flags.sum(), n)
    return TimeLocalGenerator(dt * np.arange(1, n + 1), gens, flags)


# --------------------------------------------------------------------------
# Nakajima-Zwanzig kernel


@dataclass
class KernelSeries:
    """Discrete memory kernel ``K_n`` at lags ``n = 1..len(kernels)``."""

    dt: float
    kernels: np.ndarray
    phi1: np.ndarray  # first map, seeds the propagation

    @property
    def lags(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self.kernels) + 1)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.kernels, axis=(1, 2))

    def tail_ratio(self, fraction: float = 0.1) -> float:
        """Largest norm over the last ``fraction`` of lags relative to the peak."""
        nrm = self.norms()
        if nrm.size == 0 or nrm.max() == 0:
            return 0.0
        k = max(1, int(np.ceil(fraction * nrm.size)))
        return float(nrm[-k:].max() / nrm.max())


def nz_kernel(source, dt: Optional[float] = None, times=None) -> KernelSeries:
    """Kernel of the discrete Nakajima-Zwanzig scheme (exact inverse of :func:`nz_propagate`).

    With ``G = Phi^{-1}`` as a power series (``Phi_0`` taken as ``I``), the
    recursion collapses to ``K_n = -(G_{n+1} + (Phi_1 - I) G_n) / dt^2``.
    """
    if isinstance(source, ChoiSeries):
        dt = source.dt
    if dt is None or not dt > 0:
        raise AnalysisError("a positive dt is required")
    _check_grid(times, dt)
    maps = _maps_from(source)
    if len(maps) < 3:
        raise AnalysisError("need at least three maps to form a kernel")
    _check_identity(maps)
    work, basis = _to_real(maps)
    work = work.copy()
    work[0] = np.eye(work.shape[1])
    n = len(maps)
    g = _series.inv(work, n)
    eye = np.eye(work.shape[1])
    k = -(g[2:] + (work[1] - eye) @ g[1:-1]) / dt**2
    return KernelSeries(dt, _from_real(k, basis), maps[1].copy())


def _real_matmul(g, x):
    """``g @ x`` for real ``g`` and possibly complex ``x`` without upcasting ``g``."""
    if np.isrealobj(x):
        return g @ x
    re = g @ np.ascontiguousarray(x.real)
    return re + 1j * (g @ np.ascontiguousarray(x.imag))


def _as_columns(x0):
    x0 = np.asarray(x0)
    if x0.ndim == 1:
        return x0[:, None], True
    return x0, False


def nz_propagate(kernel: KernelSeries, x0, n_steps: int, memory: Optional[int] = None, x1=None):
    """``X_{n+1} = X_n + dt^2 sum_{m=0}^{n-1} K_{n-m} X_m`` with ``X_1 = Phi_1 X_0``.

    ``x0`` may be a vector or a matrix (e.g. the identity to propagate the
    map itself). ``memory`` truncates the kernel after that many lags.
    Returns ``X_0..X_{n_steps}``.
    """
    avail = len(kernel.kernels)
    need = max(n_steps - 1, 0)
    if memory is None:
        if need > avail:
            raise AnalysisError(
                f"horizon of {n_steps} steps needs {need} kernel lags but only {avail} exist; "
                "give a memory length to extrapolate"
            )
        lags = avail
    else:
        if memory < 0 or memory > avail:
            raise AnalysisError(f"memory length {memory} outside 0..{avail}")
        lags = memory
    cols, was_vec = _as_columns(x0)
    dim = kernel.kernels.shape[-1] if avail else kernel.phi1.shape[0]
    x1 = kernel.phi1 @ cols if x1 is None else _as_columns(x1)[0]
    length = n_steps + 1
    kern, basis = _to_real(np.concatenate([kernel.kernels[:lags], kernel.phi1[None]]))
    kern = kern[:-1]
    a = np.zeros((length, dim, dim), dtype=kern.dtype if kern.size else float)
    a[0] = np.eye(dim)
    if length > 1:
        a[1] = -np.eye(dim)
    m = min(lags, length - 2)
    if m > 0:
        a[2:2 + m] -= kernel.dt**2 * kern[:m]
    g = _series.inv(a, length)
    if basis is not None:
        # apply S G S^dag to the columns without forming S G S^dag
        cols_r = basis.conj().T @ cols
        step_r = basis.conj().T @ (x1 - cols)
        out = basis @ _real_matmul(g, cols_r)
        out[1:] += basis @ _real_matmul(g[:-1], step_r)
    else:
        out = g @ cols
        out[1:] += g[:-1] @ (x1 - cols)
    if not (np.iscomplexobj(cols) or np.iscomplexobj(x1) or np.iscomplexobj(kernel.kernels)):
        out = out.real
    return out[..., 0] if was_vec else out


# --------------------------------------------------------------------------
# transfer tensors


@dataclass
class TransferTensors:
    """``T_m`` for ``m = 1..len(tensors)``; ``T_1 = Phi_1``."""

    dt: float
    tensors: np.ndarray

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.tensors, axis=(1, 2))


def transfer_tensors(source, memory_len: Optional[int] = None, dt: Optional[float] = None) -> TransferTensors:
    """``T_n = Phi_n - sum_{m=1}^{n-1} T_m Phi_{n-m}``, i.e. ``T = I - Phi^{-1}``."""
    if isinstance(source, ChoiSeries):
        dt = source.dt
    maps = _maps_from(source)
    if len(maps) < 2:
        raise AnalysisError("need at least two maps")
    _check_identity(maps)
    n = len(maps) if memory_len is None else min(memory_len + 1, len(maps))
    work, basis = _to_real(maps[:n])
    work = work.copy()
    work[0] = np.eye(work.shape[1])
    t = -_series.inv(work, n)[1:]
    return TransferTensors(1.0 if dt is None else dt, _from_real(t, basis))


@dataclass
class TTMResult:
    dt: float
    memory_len: int
    maps: np.ndarray  # Phi_0..Phi_horizon
    min_eigenvalues: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.maps))


def _min_choi_eigs(maps):
    dim = maps.shape[-1]
    d = int(round(np.sqrt(dim)))
    if d * d != dim or d == 1 or not np.iscomplexobj(maps):
        return None
    j = shuffle(maps, d)
    j = 0.5 * (j + j.conj().transpose(0, 2, 1))
    return np.linalg.eigvalsh(j)[:, 0]


def ttm_extrapolate(
    tensors: TransferTensors,
    memory_len: int,
    horizon: int,
    source=None,
    x0=None,
) -> TTMResult:
    """Maps ``Phi_n = sum_{m=1}^{K} T_m Phi_{n-m}`` up to ``n = horizon``.

    Without ``source`` the recursion starts from ``Phi_0 = I`` and uses only
    ``T_1..T_K``. With ``source`` the given maps are kept verbatim and the
    recursion continues after them; a horizon inside the source window
    returns the source prefix. ``x0`` additionally propagates a state.
    """
    avail = len(tensors.tensors)
    if not 1 <= memory_len <= avail:
        raise AnalysisError(f"memory length {memory_len} outside 1..{avail}")
    if horizon < 0:
        raise AnalysisError("horizon must be non-negative")
    t = tensors.tensors[:memory_len]
    dim = t.shape[-1]
    length = horizon + 1
    src = None if source is None else _maps_from(source)
    if src is not None and length <= len(src):
        maps = src[:length].copy()
    else:
        work, basis = _to_real(np.concatenate([t] if src is None else [t, src]))
        tk = work[:memory_len]
        a = np.zeros((length, dim, dim), dtype=work.dtype)
        a[0] = np.eye(dim)
        m = min(memory_len, length - 1)
        a[1:1 + m] = -tk[:m]
        g = _series.inv(a, length)
        if src is None:
            maps = g
        else:
            s = work[memory_len:]
            drive = _series.mul(a, s, len(s))
            maps = _series.mul(g, drive, length)
        maps = _from_real(maps, basis)
    states = None
    if x0 is not None:
        states = maps @ np.asarray(x0)
    return TTMResult(tensors.dt, memory_len, maps, _min_choi_eigs(maps), states)


# --------------------------------------------------------------------------
# populations


def population_map(series: ChoiSeries, basis: Optional[np.ndarray] = None) -> np.ndarray:
    """``M_n[i, j] = Phi_n[ii, jj]`` in the site basis or in the columns of ``basis``."""
    d = series.d_s
    mats = series.mats
    if basis is not None:
        mats = np.stack([rotate_choi(ChoiMatrix(d, 0.0, j), basis).j for j in mats])
    j4 = mats.reshape(len(mats), d, d, d, d)
    idx = np.arange(d)
    # pops[n, a, b] = J4[a, b, a, b]: input population a, output population b
    pops = j4[:, idx[:, None], idx[None, :], idx[:, None], idx[None, :]]
    return np.ascontiguousarray(pops.real.transpose(0, 2, 1))


def population_kernel(pop_maps: np.ndarray, dt: float) -> KernelSeries:
    return nz_kernel(np.asarray(pop_maps, dtype=float), dt)


# --------------------------------------------------------------------------
# rates


@dataclass
class RateMatrix:
    W: np.ndarray
    window: tuple
    method: str
    balance_correction: float = 0.0
    warning: Optional[str] = None
    converged: bool = True
    objective: Optional[float] = None
    details: dict = field(default_factory=dict)

    def check(self, atol: float = 1e-10):
        w = self.W
        off = w - np.diag(np.diag(w))
        if off.min(initial=0.0) < -atol or np.abs(w.sum(axis=0)).max() > atol:
            raise AnalysisError("rate matrix needs non-negative off-diagonals and zero column sums")


def _lagrange_at_zero(nodes):
    nodes = np.asarray(nodes, dtype=float)
    w = np.ones(len(nodes))
    for i, si in enumerate(nodes):
        for j, sj in enumerate(nodes):
            if i != j:
                w[i] *= sj / (sj - si)
    return w


def rate_from_kernel(kappa: KernelSeries, s_values: Optional[Sequence[float]] = None) -> RateMatrix:
    """``W = lim_{s->0+} hat kappa(s)`` from the discrete Laplace sum.

    ``hat kappa(s) = dt sum_{n>=1} exp(-s t_n) kappa_n`` is evaluated at
    ``s_values`` (default ``{4, 2, 1} / T_window``) and extrapolated to
    ``s = 0`` with Lagrange (Richardson) weights. A diagonal correction then
    restores zero column sums; its size is kept as ``balance_correction``.
    """
    k = np.asarray(kappa.kernels)
    t = kappa.lags
    if k.size == 0:
        raise AnalysisError("empty kernel")
    window = float(t[-1])
    s = np.array([4.0, 2.0, 1.0]) / window if s_values is None else np.asarray(s_values, dtype=float)
    if np.any(s <= 0):
        raise AnalysisError("s values must be positive")
    lap = np.array([kappa.dt * np.tensordot(np.exp(-si * t), k, axes=(0, 0)) for si in s])
    w = np.tensordot(_lagrange_at_zero(s), lap, axes=(0, 0)).real
    colsum = w.sum(axis=0)
    w[np.diag_indices_from(w)] -= colsum
    warning = None
    ratio = kappa.tail_ratio()
    if ratio > 0.2:
        warning = f"kernel tail is {100 * ratio:.0f}% of its peak; the Laplace limit may be unreliable"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return RateMatrix(
        w,
        (float(t[0]), window),
        "kernel-laplace",
        balance_correction=float(np.abs(colsum).max()),
        warning=warning,
        details={"s_values": s.tolist(), "tail_ratio": ratio},
    )


def pauli_fit(
    pop_maps: np.ndarray,
    dt: float,
    window: tuple,
    weights: Optional[np.ndarray] = None,
    max_iter: Optional[int] = None,
) -> RateMatrix:
    """Constrained least-squares Pauli generator over ``n0..n1`` (inclusive).

    Minimizes ``sum_n w_n |dM_n - W M_n|_F^2`` over rate matrices with
    non-negative off-diagonals and zero column sums. The diagonal is
    eliminated through the column-sum constraint, leaving a non-negative
    least-squares problem in the off-diagonal rates that is solved exactly by
    an active-set method. ``dM`` comes from :func:`_derivative`.
    """
    pops = np.asarray(pop_maps, dtype=float)
    n0, n1 = int(window[0]), int(window[1])
    if not (1 <= n0 < n1 <= len(pops) - 1):
        raise AnalysisError(f"empty or invalid fitting window ({n0}, {n1}) for {len(pops)} maps")
    d = pops.shape[-1]
    deriv = _derivative(pops, dt)
    n = np.arange(n0, n1 + 1)
    w = np.ones(len(n)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != n.shape or np.any(w < 0):
        raise AnalysisError("weights must be non-negative, one per window step")
    sw = np.sqrt(w)[:, None, None]
    target = (sw * deriv[n]).reshape(-1)
    pairs = [(i, j) for j in range(d) for i in range(d) if i != j]
    design = np.zeros((len(n), d, d, len(pairs)))
    for c, (i, j) in enumerate(pairs):
        # (e_i - e_j) e_j^T M_n
        design[:, i, :, c] += pops[n, j, :]
        design[:, j, :, c] -= pops[n, j, :]
    design = (sw[..., None] * design).reshape(-1, len(pairs))
    converged = True
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", RuntimeWarning)
            rates, rnorm = nnls(design, target, maxiter=max_iter)
    except (RuntimeError, RuntimeWarning):
        converged = False
        rates = _projected_gradient(design, target, iters=max_iter or 10000)
        rnorm = float(np.linalg.norm(design @ rates - target))
    wmat = np.zeros((d, d))
    for c, (i, j) in enumerate(pairs):
        wmat[i, j] = rates[c]
    wmat[np.diag_indices(d)] = -wmat.sum(axis=0)
    return RateMatrix(
        wmat,
        (float(n0 * dt), float(n1 * dt)),
        "least-squares",
        converged=converged,
        objective=float(rnorm**2),
    )


def _derivative(x: np.ndarray, dt: float, width: int = 7) -> np.ndarray:
    """Time derivative along axis 0 from local degree-``width - 1`` interpolants.

    Interior points use the centered ``width``-point stencil (error
    ``O(dt^(width-1))``); the edges use the interpolant through the first or
    last ``width`` samples. Short series fall back to second-order differences.
    """
    if len(x) < width:
        return np.gradient(x, dt, axis=0, edge_order=1 if len(x) < 3 else 2)
    return savgol_filter(x, width, width - 1, deriv=1, delta=dt, axis=0, mode="interp")


def _projected_gradient(a, b, iters):
    """Fallback solver: projected gradient on ``x >= 0`` (best iterate)."""
    step = 1.0 / max(np.linalg.norm(a, 2) ** 2, 1e-300)
    x = np.zeros(a.shape[1])
    best, best_val = x, np.inf
    prev = np.inf
    for _ in range(iters):
        x = np.maximum(x - step * (a.T @ (a @ x - b)), 0.0)
        val = float(np.sum((a @ x - b) ** 2))
        if val < best_val:
            best, best_val = x.copy(), val
        if abs(prev - val) <= 1e-12 * max(val, 1e-300):
            break
        prev = val
    return best


def pauli_propagate(rates, p0, t_grid) -> np.ndarray:
    """``p(t) = exp(W t) p0`` on ``t_grid``; returns shape ``(len(t_grid), d)``."""
    w = rates.W if isinstance(rates, RateMatrix) else np.asarray(rates, dtype=float)
    RateMatrix(w, (0.0, 0.0), "given").check(atol=1e-10 * max(1.0, np.abs(w).max()))
    p0 = np.asarray(p0, dtype=float)
    if np.any(p0 < -1e-12) or abs(p0.sum() - 1.0) > 1e-10:
        raise AnalysisError("p0 must be a probability vector")
    return np.array([expm(w * t) @ p0 for t in np.asarray(t_grid, dtype=float)])


def population_generator(pop_maps: np.ndarray, dt: float) -> np.ndarray:
    """Instantaneous rates ``W(t_n) = dM_n M_n^{-1}`` (centered differences)."""
    pops = np.asarray(pop_maps, dtype=float)
    deriv = _derivative(pops, dt)
    return deriv @ np.linalg.pinv(pops)


def time_averaged_rate(pop_maps: np.ndarray, dt: float, window: tuple) -> RateMatrix:
    """Average of ``W(t_n)`` over ``n0..n1`` (inclusive); no constraints imposed."""
    n0, n1 = int(window[0]), int(window[1])
    if not (0 <= n0 < n1 < len(pop_maps)):
        raise AnalysisError(f"invalid averaging window ({n0}, {n1})")
    w = population_generator(pop_maps, dt)[n0:n1 + 1].mean(axis=0)
    return RateMatrix(w, (n0 * dt, n1 * dt), "time-average")


def kernel_block_norms(kernel: KernelSeries) -> np.ndarray:
    """Rows ``(lag, total, pp, pc, cp, cc)`` of Frobenius norms per lag.

    Blocks split Liouville indices into populations (p) and coherences (c);
    ``pc`` is the population-output / coherence-input block. Population-only
    kernels report only the total.
    """
    k = kernel.kernels
    dim = k.shape[-1]
    d = int(round(np.sqrt(dim)))
    total = np.linalg.norm(k, axis=(1, 2))
    if d * d != dim or d == 1:
        return np.column_stack([kernel.lags, total])
    pop = np.array([i + i * d for i in range(d)])
    coh = np.setdiff1d(np.arange(dim), pop)
    blocks = [
        np.linalg.norm(k[:, a][:, :, b], axis=(1, 2))
        for a, b in ((pop, pop), (pop, coh), (coh, pop), (coh, coh))
    ]
    return np.column_stack([kernel.lags, total] + blocks)
