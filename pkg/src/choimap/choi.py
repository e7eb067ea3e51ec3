"""
Choi matrices of the reduced map and their extraction from a purified TT state.

Index convention: ``J`` is ``d^2 x d^2`` with row ``(a, s)`` flattened as
``a * d + s`` (ancilla slow, system fast), so that
``J4[i, m, j, n] = Phi(|i><j|)[m, n]``.

Liouville matrices use column-major vectorization,
``vec(rho)[m + n * d] = rho[m, n]``, hence ``Phi[m + n d, i + j d] = J4[i, m, j, n]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tt_core import TTVector
from .vibronic_model import SiteLayout


class ChoiError(ValueError):
    pass


@dataclass
class ChoiMatrix:
    d_s: int
    t: float
    j: np.ndarray

    def __post_init__(self):
        self.j = np.asarray(self.j, dtype=np.complex128)
        n = self.d_s * self.d_s
        if self.j.shape != (n, n):
            raise ChoiError(f"Choi matrix must be {n}x{n}, got {self.j.shape}")

    @property
    def j4(self) -> np.ndarray:
        d = self.d_s
        return self.j.reshape(d, d, d, d)

    @property
    def rho(self) -> np.ndarray:
        """Normalized Choi state ``J / d``."""
        return self.j / self.d_s


def identity_choi(d: int, t: float = 0.0) -> ChoiMatrix:
    """``|Omega><Omega|`` with ``|Omega> = sum_i |i>|i>``."""
    omega = np.eye(d, dtype=np.complex128).ravel()
    return ChoiMatrix(d, t, np.outer(omega, omega.conj()))


@dataclass
class ChoiSeries:
    """Choi matrices on the uniform grid ``t_n = n * dt``."""

    d_s: int
    dt: float
    mats: np.ndarray  # (N, d^2, d^2)
    beta: float = float("inf")
    model_hash: str = ""
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mats = np.asarray(self.mats, dtype=np.complex128)
        n = self.d_s * self.d_s
        if self.mats.ndim != 3 or self.mats.shape[1:] != (n, n):
            raise ChoiError(f"series must have shape (N, {n}, {n}), got {self.mats.shape}")
        if not self.dt > 0:
            raise ChoiError("dt must be positive")
        self.times = self.dt * np.arange(len(self.mats))

    @classmethod
    def from_matrices(cls, mats: Sequence[ChoiMatrix], dt: float, beta=float("inf"), model_hash=""):
        if not mats:
            raise ChoiError("empty series")
        d = mats[0].d_s
        t = np.array([m.t for m in mats])
        if not np.allclose(t, dt * np.arange(len(mats)), rtol=0, atol=1e-9 * max(1.0, dt * len(mats))):
            raise ChoiError("Choi series must lie on a uniform grid starting at t = 0")
        return cls(d, dt, np.stack([m.j for m in mats]), beta, model_hash)

    def __len__(self):
        return len(self.mats)

    def __getitem__(self, k) -> ChoiMatrix:
        return ChoiMatrix(self.d_s, float(self.times[k]), self.mats[k])

    def maps(self) -> np.ndarray:
        """Liouville matrices ``Phi_n`` stacked as ``(N, d^2, d^2)``."""
        return shuffle(self.mats, self.d_s)


def shuffle(j: np.ndarray, d: int) -> np.ndarray:
    """Exchange Choi and Liouville layouts; the permutation is an involution.

    Works on a single ``d^2 x d^2`` matrix or a stack of them.
    """
    lead = j.shape[:-2]
    j4 = j.reshape(lead + (d, d, d, d))
    k = len(lead)
    perm = tuple(range(k)) + (k + 3, k + 1, k + 2, k)
    return j4.transpose(perm).reshape(lead + (d * d, d * d))


def map_matrix(j: ChoiMatrix) -> np.ndarray:
    return shuffle(j.j, j.d_s)


def choi_from_map(phi: np.ndarray, t: float = 0.0) -> ChoiMatrix:
    d = int(round(np.sqrt(phi.shape[0])))
    return ChoiMatrix(d, t, shuffle(phi, d))


def apply_map(j: ChoiMatrix, rho: np.ndarray) -> np.ndarray:
    """``Phi(rho)[m, n] = sum_ij J4[i, m, j, n] rho[i, j]``."""
    rho = np.asarray(rho)
    d = j.d_s
    if rho.shape != (d, d):
        raise ChoiError(f"density matrix must be {d}x{d}, got {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=1e-10) or abs(np.trace(rho) - 1) > 1e-10:
        warnings.warn("apply_map received a non-Hermitian or non-unit-trace operator", stacklevel=2)
    return np.einsum("imjn,ij->mn", j.j4, rho)


def ancilla_marginal(j: ChoiMatrix) -> np.ndarray:
    """``Tr_S J`` as a ``d x d`` matrix on the ancilla."""
    return np.einsum("imjm->ij", j.j4)


def channel_diagnostics(j: ChoiMatrix) -> dict:
    d = j.d_s
    herm = 0.5 * (j.j + j.j.conj().T)
    tp = np.linalg.norm(ancilla_marginal(j) - np.eye(d)) / np.sqrt(d)
    return {
        "tp_residual": float(tp),
        "min_eigenvalue": float(np.linalg.eigvalsh(herm)[0]),
        "trace": float(np.trace(herm).real),
    }


def series_diagnostics(series: ChoiSeries) -> np.ndarray:
    """Rows ``(t, trace, tp_residual, min_eig)`` for every snapshot."""
    rows = []
    for k in range(len(series)):
        diag = channel_diagnostics(series[k])
        rows.append((series.times[k], diag["trace"], diag["tp_residual"], diag["min_eigenvalue"]))
    return np.array(rows, dtype=float).reshape(-1, 4)


def _trace_transfer(env, core):
    """``E' [a, a'] = sum_{p, b, b'} C[a, p, b] conj(C[a', p, b']) E[b, b']``."""
    t = np.tensordot(core, env, axes=([2], [0]))  # (a, p, b')
    return np.tensordot(t, core.conj(), axes=([1, 2], [1, 2]))


def _trace_transfer_left(env, core):
    """Mirror of :func:`_trace_transfer` advancing from the left boundary."""
    t = np.tensordot(env, core, axes=([0], [0]))  # (a', p, b)
    return np.tensordot(t, core.conj(), axes=([0, 1], [0, 1]))


def partial_trace_choi(state: TTVector, layout: SiteLayout, t: float = 0.0) -> ChoiMatrix:
    """Choi matrix from the purified state by a trace sweep over environment sites.

    Bath sites are contracted from the right boundary and disorder sites from
    the left boundary into ``r x r`` environment matrices, which are then
    joined through the ancilla and system cores. The full state is never
    formed, and the result does not depend on the gauge of ``state``.
    """
    if tuple(state.phys_dims) != tuple(layout.dims):
        raise ChoiError(f"state dims {state.phys_dims} do not match layout {layout.dims}")
    cores = state.cores
    right = np.ones((1, 1), dtype=np.complex128)
    for k in range(layout.n_sites - 1, layout.system, -1):
        right = _trace_transfer(right, cores[k])
    left = np.ones((1, 1), dtype=np.complex128)
    for k in range(layout.ancilla):
        left = _trace_transfer_left(left, cores[k])

    a = cores[layout.ancilla]
    s = cores[layout.system]
    d = layout.d_s
    # ket half: (l, i, m, y) ; contract the bra half with the environments
    ket = np.tensordot(a, s, axes=([2], [0]))
    bra = np.tensordot(left, ket.conj(), axes=([1], [0]))  # (l, j, n, y')
    bra = np.tensordot(bra, right, axes=([3], [1]))  # (l, j, n, y)
    j4 = np.tensordot(ket, bra, axes=([0, 3], [0, 3]))  # (i, m, j, n)
    j = j4.reshape(d * d, d * d)
    return ChoiMatrix(d, t, 0.5 * (j + j.conj().T))


def depolarizing_choi(d: int) -> ChoiMatrix:
    """Choi matrix of ``rho -> Tr(rho) I / d``."""
    return ChoiMatrix(d, 0.0, np.eye(d * d, dtype=np.complex128) / d)


def unitary_choi(u: np.ndarray, t: float = 0.0) -> ChoiMatrix:
    d = u.shape[0]
    col = (u.T).reshape(-1)  # (i, m) -> U[m, i]
    return ChoiMatrix(d, t, np.outer(col, col.conj()))


def rotate_choi(j: ChoiMatrix, u: Optional[np.ndarray]) -> ChoiMatrix:
    """Choi matrix of ``rho -> U^dag Phi(U rho U^dag) U``.

    This is the map expressed in the basis whose vectors are the columns of
    ``U``.
    """
    if u is None:
        return j
    d = j.d_s
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != (d, d) or not np.allclose(u.conj().T @ u, np.eye(d), atol=1e-10):
        raise ChoiError("basis must be a unitary d x d matrix")
    phi = map_matrix(j)
    # vec(U X U^dag) = (conj(U) kron U) vec(X) in column-major order
    big = np.kron(u.conj(), u)
    return ChoiMatrix(d, j.t, shuffle(big.conj().T @ phi @ big, d))
