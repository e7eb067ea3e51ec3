"""
Dense brute-force reference dynamics.

Everything here is assembled with explicit Kronecker products in the same
site order as the tensor-train layout and propagated exactly, so the results
can serve as ground truth for the TT pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .choi import ChoiMatrix, ChoiSeries
from .vibronic_model import (
    CM_TO_RADFS,
    SiteLayout,
    ThermalModel,
    VibronicModel,
    gaussian_encoding_state,
    number,
    position_like,
    site_layout,
)

MAX_DENSE_DIM = 2**20
EIGH_DIM = 2**12


class OracleSizeError(ValueError):
    pass


@dataclass
class DenseModel:
    """Sparse storage of the full Hamiltonian (dense in the sense of "exact").

    ``h`` acts on ``z..., A, S, b...`` in that Kronecker order and is in rad/fs.
    """

    h: sp.csr_matrix
    layout: SiteLayout

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    def toarray(self) -> np.ndarray:
        return self.h.toarray()


def _kron_chain(ops):
    out = sp.identity(1, dtype=np.complex128, format="csr")
    for o in ops:
        out = sp.kron(out, sp.csr_matrix(o), format="csr")
    return out


def _embed(dims, local):
    """Kronecker product with identities on every site not in ``local``."""
    ops = [local.get(k, sp.identity(n, dtype=np.complex128, format="csr")) for k, n in enumerate(dims)]
    return _kron_chain(ops)


def _hamiltonian_terms(thermal: ThermalModel, layout: SiteLayout, with_ancilla: bool):
    c = CM_TO_RADFS
    dims = list(layout.dims)
    s_site = layout.system
    first_bath = layout.system + 1
    if not with_ancilla:
        dims.pop(layout.ancilla)
        s_site -= 1
        first_bath -= 1
    size = float(np.prod(dims, dtype=np.float64))
    if (size * (layout.d_s if not with_ancilla else 1)) > MAX_DENSE_DIM:
        raise OracleSizeError(f"dense dimension {size:.0f} exceeds {MAX_DENSE_DIM}")
    h = _embed(dims, {s_site: c * thermal.eps})
    for j, dm in enumerate(thermal.disorder):
        op = c * dm.sigma / np.sqrt(2.0) * dm.operator
        h = h + _embed(dims, {s_site: op, j: position_like(dm.basis_dim)})
    for j, k in enumerate(layout.bath_order):
        mode = thermal.modes[k]
        n = layout.bath_dims[j]
        site = first_bath + j
        h = h + _embed(dims, {site: c * mode.omega * number(n)})
        h = h + _embed(dims, {s_site: c * mode.coupling / np.sqrt(2.0), site: position_like(n)})
    return h.tocsr(), dims


def dense_hamiltonian(thermal: ThermalModel, layout: Optional[SiteLayout] = None) -> DenseModel:
    layout = layout or site_layout(thermal)
    h, _ = _hamiltonian_terms(thermal, layout, with_ancilla=True)
    return DenseModel(h, layout)


class _Propagator:
    """Exact ``exp(-i H t)`` on the environment+system space (no ancilla)."""

    def __init__(self, h):
        self.dim = h.shape[0]
        self.h = h
        self.e = None
        if self.dim <= EIGH_DIM:
            dense = h.toarray()
            if not np.abs(dense.imag).any():
                dense = dense.real
            self.e, self.v = sla.eigh(dense)

    def step(self, psi, dt):
        if self.e is not None:
            return self.evolve(psi, dt)
        return expm_multiply(-1j * dt * self.h, psi)

    def evolve(self, psi, t):
        """One-shot evolution without caching a full unitary."""
        if self.e is not None:
            return self.v @ (np.exp(-1j * self.e * t)[:, None] * (self.v.conj().T @ psi))
        return expm_multiply(-1j * t * self.h, psi)


def _initial_columns(layout: SiteLayout, dims_no_a):
    """Columns ``|z0> |i>_S |0>_B`` for i = 0..d-1, one per ancilla state."""
    d = layout.d_s
    cols = []
    for i in range(d):
        vecs = [gaussian_encoding_state(n) for n in layout.disorder_dims]
        e = np.zeros(d)
        e[i] = 1.0
        vecs.append(e)
        for n in layout.bath_dims:
            v0 = np.zeros(n)
            v0[0] = 1.0
            vecs.append(v0)
        col = np.ones(1)
        for v in vecs:
            col = np.kron(col, v)
        cols.append(col)
    return np.array(cols, dtype=np.complex128).T


def _partial_trace(psi, layout: SiteLayout, dims_no_a):
    """Explicit trace over z and bath indices.

    ``psi[:, a]`` is the environment+system vector attached to ancilla state
    ``a``. Returns ``J[a, s, a', s']`` flattened to ``(a s), (a' s')``.
    """
    d = layout.d_s
    nz = int(np.prod(layout.disorder_dims, dtype=np.int64)) if layout.disorder_dims else 1
    nb = int(np.prod(layout.bath_dims, dtype=np.int64)) if layout.bath_dims else 1
    t = psi.reshape(nz, d, nb, d)  # (z, s, b, a)
    j4 = np.einsum("zsba,ztbc->asct", t, t.conj())
    return j4.reshape(d * d, d * d)


def dense_choi_series(
    thermal: ThermalModel,
    dt: float,
    n: int,
    layout: Optional[SiteLayout] = None,
    stride: int = 1,
) -> ChoiSeries:
    """Choi matrices at ``t = k * stride * dt`` for ``k = 0..n // stride``."""
    layout = layout or site_layout(thermal)
    h, dims = _hamiltonian_terms(thermal, layout, with_ancilla=False)
    prop = _Propagator(h)
    psi0 = _initial_columns(layout, dims)
    mats = [ChoiMatrix(layout.d_s, 0.0, _partial_trace(psi0, layout, dims))]
    if prop.e is not None:
        # spectral evaluation at every snapshot time avoids error accumulation
        c0 = prop.v.conj().T @ psi0
        for step in range(stride, n + 1, stride):
            psi = prop.v @ (np.exp(-1j * prop.e * step * dt)[:, None] * c0)
            mats.append(ChoiMatrix(layout.d_s, step * dt, _partial_trace(psi, layout, dims)))
    else:
        psi = psi0
        for step in range(1, n + 1):
            psi = prop.step(psi, dt)
            if step % stride == 0:
                mats.append(ChoiMatrix(layout.d_s, step * dt, _partial_trace(psi, layout, dims)))
    return ChoiSeries.from_matrices(mats, dt * stride, beta=thermal.beta, model_hash=thermal.fingerprint())


def dense_state(thermal: ThermalModel, t: float, layout: Optional[SiteLayout] = None) -> np.ndarray:
    """Full purified state ``exp(-i H t)|Omega>|0>`` in TT site order."""
    layout = layout or site_layout(thermal)
    h, dims = _hamiltonian_terms(thermal, layout, with_ancilla=False)
    psi = _initial_columns(layout, dims)
    if t != 0:
        psi = _Propagator(h).evolve(psi, t)
    d = layout.d_s
    nz = int(np.prod(layout.disorder_dims, dtype=np.int64)) if layout.disorder_dims else 1
    rest = psi.reshape(nz, -1, d)  # (z, s b, a)
    full = rest.transpose(0, 2, 1)  # (z, a, s b)
    return full.reshape(layout.dims)


def thermal_ensemble_choi(
    model: VibronicModel, beta: float, times, fock_dim: Optional[int] = None
) -> list:
    """Choi matrices from a Boltzmann-weighted average over bath eigenstates.

    Uses the physical (non-thermofield) Hamiltonian with every mode truncated
    to ``fock_dim`` (default: the mode's own ``fock_dim``); no ancilla or
    tilde space is involved.
    """
    c = CM_TO_RADFS
    d = model.d_s
    dims = [d] + [fock_dim or m.fock_dim for m in model.modes]
    h = _embed(dims, {0: c * model.eps})
    for j, m in enumerate(model.modes):
        n = dims[j + 1]
        h = h + _embed(dims, {j + 1: c * m.omega * number(n)})
        h = h + _embed(dims, {0: c * m.coupling / np.sqrt(2.0), j + 1: position_like(n)})
    prop = _Propagator(h.tocsr())
    # bath occupation-number basis, each mode thermally populated
    nb = int(np.prod(dims[1:], dtype=np.int64))
    weights = np.ones(1)
    for j, m in enumerate(model.modes):
        n = dims[j + 1]
        w = np.exp(-beta * m.omega * np.arange(n)) if not np.isinf(beta) else (np.arange(n) == 0) * 1.0
        weights = np.kron(weights, w / w.sum())
    times = np.asarray(times, dtype=float)
    out = [np.zeros((d * d, d * d), dtype=np.complex128) for _ in times]
    for b in np.nonzero(weights > 1e-300)[0]:
        psi0 = np.zeros((d * nb, d), dtype=np.complex128)
        for i in range(d):
            psi0[i * nb + b, i] = 1.0
        for k, t in enumerate(times):
            psi = prop.evolve(psi0, t) if t != 0 else psi0
            tt = psi.reshape(d, nb, d)  # (s, b, a)
            j4 = np.einsum("sba,tbc->asct", tt, tt.conj())
            out[k] += weights[b] * j4.reshape(d * d, d * d)
    return out


def disorder_mc_choi(thermal: ThermalModel, times, n_samples: int, seed: int = 0):
    """Monte-Carlo average of Choi matrices over Gaussian parameter draws.

    Each draw shifts the electronic Hamiltonian by ``sum_d sigma_d xi_d V_d``
    with ``xi_d ~ N(0, 1)``; the bath (if any) is treated exactly for every
    draw. Returns ``(mean, standard_error)`` lists aligned with ``times``.
    """
    rng = np.random.default_rng(seed)
    base = ThermalModel(thermal.eps, thermal.modes, thermal.beta, [])
    layout = site_layout(base)
    h0, dims = _hamiltonian_terms(base, layout, with_ancilla=False)
    s_op = [
        _embed(dims, {0: CM_TO_RADFS * dm.operator}) for dm in thermal.disorder
    ]
    psi0 = _initial_columns(layout, dims)
    times = np.asarray(times, dtype=float)
    d = thermal.d_s
    acc = np.zeros((len(times), d * d, d * d), dtype=np.complex128)
    acc2 = np.zeros((len(times), d * d, d * d))
    for _ in range(n_samples):
        xi = rng.standard_normal(len(thermal.disorder))
        h = h0
        for x, dm, op in zip(xi, thermal.disorder, s_op):
            h = h + (x * dm.sigma) * op
        prop = _Propagator(h.tocsr())
        for k, t in enumerate(times):
            psi = prop.evolve(psi0, t) if t != 0 else psi0
            j = _partial_trace(psi, layout, dims)
            acc[k] += j
            acc2[k] += np.abs(j) ** 2
    mean = acc / n_samples
    var = np.maximum(acc2 / n_samples - np.abs(mean) ** 2, 0.0)
    stderr = np.sqrt(var / max(n_samples - 1, 1))
    return list(mean), list(stderr)
