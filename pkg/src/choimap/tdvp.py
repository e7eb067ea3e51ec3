"""
One-site TDVP in the KSL projector-splitting form, with Lanczos exponentials.

Ranks are frozen: the state keeps the bond dimensions it starts with. Use
:func:`choimap.tt_core.pad_ranks` to give it room to grow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .tt_core import TTError, TTOperator, TTVector, is_canonical, orthogonalize

logger = logging.getLogger(__name__)


class KrylovError(RuntimeError):
    """Lanczos failed to reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PropagationError(RuntimeError):
    """A run aborted; ``step`` is the last step that completed."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class PropagationPlan:
    dt: float
    n_steps: int
    krylov_dim: int = 30
    krylov_tol: float = 1e-10
    snapshot_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be at least 2")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be at least 1")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(0, self.n_steps + 1, self.snapshot_stride)


def _tridiag_exp_e1(alpha, beta, tau):
    """``exp(tau T) e_1`` for the real symmetric tridiagonal ``T``."""
    if len(alpha) == 1:
        return np.array([np.exp(tau * alpha[0])])
    w, v = eigh_tridiagonal(alpha, beta)
    return v @ (np.exp(tau * w) * v[0])


def krylov_expm_apply(
    matvec: Callable, v: np.ndarray, tau: complex, tol: float = 1e-10, krylov_dim: int = 30
) -> np.ndarray:
    """Approximate ``exp(tau * H) v`` for a Hermitian ``H`` given by ``matvec``.

    Lanczos with full reorthogonalization. Convergence is judged by the usual
    a-posteriori estimate ``beta_m |[exp(tau T_m)]_{m,1}|`` relative to ``|v|``.
    Real dynamics corresponds to ``tau = -1j * dt``.
    """
    v = np.asarray(v, dtype=np.complex128)
    shape = v.shape
    v = v.ravel()
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise KrylovError("Krylov breakdown: zero start vector", residual=0.0)
    if tau == 0:
        return v.reshape(shape).copy()
    n = v.size
    m_max = min(krylov_dim, n)
    basis = np.zeros((m_max + 1, n), dtype=np.complex128)
    basis[0] = v / nrm
    alpha = []
    beta = []
    err = np.inf
    for j in range(m_max):
        w = np.asarray(matvec(basis[j].reshape(shape)), dtype=np.complex128).ravel()
        a = np.vdot(basis[j], w).real
        alpha.append(a)
        # two passes of classical Gram-Schmidt against the whole basis
        for _ in range(2):
            w -= basis[: j + 1].T @ (basis[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        coeffs = _tridiag_exp_e1(np.array(alpha), np.array(beta), tau)
        scale = max(1.0, float(np.max(np.abs(np.array(alpha))))) * max(1.0, abs(tau))
        if b <= 1e-13 * scale or j + 1 == n:
            # invariant subspace: the projection is exact
            err = 0.0
            break
        err = b * abs(coeffs[-1])
        if err <= tol:
            break
        beta.append(b)
        basis[j + 1] = w / b
    else:
        raise KrylovError(
            f"Lanczos did not converge in {m_max} steps (residual {err:.2e} > {tol:.1e})",
            residual=err,
        )
    k = len(alpha)
    return (nrm * (coeffs @ basis[:k])).reshape(shape)


# --------------------------------------------------------------------------
# effective operators
#
# Environments are stored as [bra, w, ket]; MPO cores as W[wl, out, in, wr].


def _heff1(lenv, w, renv, a):
    t = np.tensordot(lenv, a, axes=([2], [0]))
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))
    return np.tensordot(t, renv, axes=([1, 3], [2, 1]))


def _heff0(lenv, renv, c):
    t = np.tensordot(lenv, c, axes=([2], [0]))
    return np.tensordot(t, renv, axes=([1, 2], [1, 2]))


def _grow_left(lenv, w, a):
    t = np.tensordot(lenv, a, axes=([2], [0]))
    t = np.tensordot(t, w, axes=([1, 2], [0, 2]))
    return np.tensordot(a.conj(), t, axes=([0, 1], [0, 2])).transpose(0, 2, 1)


def _grow_right(renv, w, a):
    t = np.tensordot(a, renv, axes=([2], [2]))
    t = np.tensordot(t, w, axes=([1, 3], [2, 3]))
    return np.tensordot(a.conj(), t, axes=([1, 2], [3, 1])).transpose(0, 2, 1)


def _boundary():
    return np.ones((1, 1, 1), dtype=np.complex128)


class _Sweeper:
    """Holds the cores and cached environments during a run."""

    def __init__(self, state: TTVector, h: TTOperator, plan: PropagationPlan):
        if tuple(state.phys_dims) != tuple(h.phys_dims):
            raise TTError(f"state dims {state.phys_dims} do not match operator {h.phys_dims}")
        if not is_canonical(state, 0, atol=1e-10):
            state = orthogonalize(state, 0)
        self.cores = [c.copy() for c in state.cores]
        self.w = h.cores
        self.tol = plan.krylov_tol
        self.kdim = plan.krylov_dim
        n = len(self.cores)
        self.lenv = [None] * (n + 1)
        self.renv = [None] * (n + 1)
        self.lenv[0] = _boundary()
        self.renv[n] = _boundary()
        for k in range(n - 1, 0, -1):
            self.renv[k] = _grow_right(self.renv[k + 1], self.w[k], self.cores[k])

    def _site(self, k, tau):
        le, w, re = self.lenv[k], self.w[k], self.renv[k + 1]
        self.cores[k] = krylov_expm_apply(
            lambda x: _heff1(le, w, re, x), self.cores[k], tau, self.tol, self.kdim
        )

    def _bond(self, k, c, tau):
        # bond between sites k-1 and k
        le, re = self.lenv[k], self.renv[k]
        return krylov_expm_apply(lambda x: _heff0(le, re, x), c, tau, self.tol, self.kdim)

    def step(self, dt):
        n = len(self.cores)
        tau = -0.5j * dt
        for k in range(n - 1):
            self._site(k, tau)
            r0, p, r1 = self.cores[k].shape
            q, c = np.linalg.qr(self.cores[k].reshape(r0 * p, r1))
            self.cores[k] = q.reshape(r0, p, r1)
            self.lenv[k + 1] = _grow_left(self.lenv[k], self.w[k], self.cores[k])
            c = self._bond(k + 1, c, -tau)
            self.cores[k + 1] = np.tensordot(c, self.cores[k + 1], axes=([1], [0]))
        self._site(n - 1, 2 * tau)
        for k in range(n - 1, 0, -1):
            r0, p, r1 = self.cores[k].shape
            q, c = np.linalg.qr(self.cores[k].reshape(r0, p * r1).T)
            self.cores[k] = q.T.reshape(r0, p, r1)
            c = c.T
            self.renv[k] = _grow_right(self.renv[k + 1], self.w[k], self.cores[k])
            c = self._bond(k, c, -tau)
            self.cores[k - 1] = np.tensordot(self.cores[k - 1], c, axes=([2], [0]))
            self._site(k - 1, tau)

    def state(self) -> TTVector:
        return TTVector(tuple(c.copy() for c in self.cores), ortho_center=0)


def tdvp_sweep(
    state: TTVector,
    h: TTOperator,
    dt: float,
    krylov_dim: int = 30,
    krylov_tol: float = 1e-10,
) -> TTVector:
    """One symmetric second-order KSL step of length ``dt``.

    A left-to-right half step (forward site, backward bond) followed by the
    mirrored right-to-left half step; the orthogonality center returns to
    site 0 and every rank is unchanged.
    """
    plan = PropagationPlan(dt, 1, krylov_dim, krylov_tol)
    sw = _Sweeper(state, h, plan)
    sw.step(dt)
    return sw.state()


def propagate(
    state: TTVector,
    h: TTOperator,
    plan: PropagationPlan,
    on_snapshot: Optional[Callable] = None,
) -> TTVector:
    """Run ``plan.n_steps`` TDVP steps, calling ``on_snapshot(t, state)`` on the stride grid.

    The callback receives a copy of the state. Exceptions raised by the
    integrator or the callback abort the run with :class:`PropagationError`
    reporting the last completed step.
    """
    sw = _Sweeper(state, h, plan)
    ranks0 = tuple(c.shape for c in sw.cores)

    def fire(step):
        if on_snapshot is None:
            return
        try:
            on_snapshot(step * plan.dt, sw.state())
        except Exception as exc:
            raise PropagationError(f"snapshot callback failed at step {step}: {exc}", step) from exc

    fire(0)
    for step in range(1, plan.n_steps + 1):
        try:
            sw.step(plan.dt)
        except (KrylovError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise PropagationError(f"integration failed at step {step}: {exc}", step - 1) from exc
        if not all(np.isfinite(c).all() for c in sw.cores):
            raise PropagationError(f"non-finite state at step {step}", step - 1)
        assert tuple(c.shape for c in sw.cores) == ranks0
        if step % plan.snapshot_stride == 0:
            fire(step)
    return sw.state()
