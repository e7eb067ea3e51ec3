"""
Tensor-train vectors and operators.

A ``TTVector`` stores cores ``G[k]`` of shape ``(r_{k-1}, p_k, r_k)`` with
``r_0 = r_L = 1``. A ``TTOperator`` stores cores ``W[k]`` of shape
``(R_{k-1}, p_k, p_k, R_k)`` with the output (row) physical index before the
input (column) index. Dense reconstructions use the site order as the
slowest-to-fastest index order, i.e. site 0 is the most significant digit.

All values are treated as immutable: every operation returns a new object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

MAX_DENSE_SIZE = 2**24


class TTError(ValueError):
    pass


class TTSizeError(TTError):
    pass


def _as_cores(cores):
    return tuple(np.asarray(c, dtype=np.complex128) for c in cores)


@dataclass(frozen=True, eq=False)
class TTVector:
    cores: tuple
    ortho_center: Optional[int] = None

    def __post_init__(self):
        cores = _as_cores(self.cores)
        object.__setattr__(self, "cores", cores)
        if not cores:
            raise TTError("a tensor train needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3:
                raise TTError(f"core {k} must be 3-index, got shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise TTError("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise TTError(
                    f"rank mismatch between cores {k} and {k + 1}: "
                    f"{cores[k].shape[2]} != {cores[k + 1].shape[0]}"
                )
        if self.ortho_center is not None and not 0 <= self.ortho_center < len(cores):
            raise TTError(f"ortho_center {self.ortho_center} out of range")

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def phys_dims(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        """Bond ranks ``(r_0, ..., r_L)`` including the unit boundaries."""
        return (1,) + tuple(c.shape[2] for c in self.cores)

    def copy(self) -> "TTVector":
        return TTVector(tuple(c.copy() for c in self.cores), self.ortho_center)

    def to_dense(self) -> np.ndarray:
        """Full tensor of shape ``phys_dims``."""
        size = int(np.prod(self.phys_dims, dtype=np.float64))
        if size > MAX_DENSE_SIZE:
            raise TTSizeError(f"dense size {size} exceeds {MAX_DENSE_SIZE}")
        out = self.cores[0].reshape(self.cores[0].shape[1], -1)
        for c in self.cores[1:]:
            out = out @ c.reshape(c.shape[0], -1)
            out = out.reshape(-1, c.shape[2])
        return out.reshape(self.phys_dims)

    def norm(self) -> float:
        return float(np.sqrt(max(inner(self, self).real, 0.0)))

    def __mul__(self, alpha) -> "TTVector":
        cores = list(self.cores)
        k = self.ortho_center if self.ortho_center is not None else 0
        cores[k] = cores[k] * alpha
        return TTVector(tuple(cores), self.ortho_center)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class TTOperator:
    cores: tuple
    phys_dims: tuple = field(init=False)

    def __post_init__(self):
        cores = _as_cores(self.cores)
        object.__setattr__(self, "cores", cores)
        for k, c in enumerate(cores):
            if c.ndim != 4 or c.shape[1] != c.shape[2]:
                raise TTError(f"operator core {k} has invalid shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise TTError("boundary operator ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[3] != cores[k + 1].shape[0]:
                raise TTError(f"operator rank mismatch at bond {k}")
        object.__setattr__(self, "phys_dims", tuple(c.shape[1] for c in cores))

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def op_ranks(self) -> tuple:
        return (1,) + tuple(c.shape[3] for c in self.cores)

    def to_dense(self) -> np.ndarray:
        """Dense matrix of shape ``(prod p, prod p)``."""
        n = int(np.prod(self.phys_dims, dtype=np.float64))
        if n * n > MAX_DENSE_SIZE:
            raise TTSizeError(f"dense operator size {n}^2 exceeds {MAX_DENSE_SIZE}")
        out = self.cores[0][0]  # (p, p, R)
        for c in self.cores[1:]:
            # out: (P, P, R), c: (R, p, p, R')
            t = np.tensordot(out, c, axes=([2], [0]))  # (P, P, p, p, R')
            P = out.shape[0]
            p = c.shape[1]
            out = t.transpose(0, 2, 1, 3, 4).reshape(P * p, P * p, c.shape[3])
        return out[:, :, 0]


def _check_dims(a_dims, b_dims):
    if tuple(a_dims) != tuple(b_dims):
        raise TTError(f"physical dimensions differ: {a_dims} vs {b_dims}")


def _truncation_rank(s: np.ndarray, abs_tol: float, max_rank: Optional[int]) -> int:
    """Smallest rank whose discarded root-sum-square is <= abs_tol."""
    # tail[i] = sqrt(sum(s[i:]**2))
    tail = np.sqrt(np.cumsum((s**2)[::-1])[::-1])
    keep = len(s)
    for i in range(len(s)):
        if tail[i] <= abs_tol:
            keep = i
            break
    keep = max(keep, 1)
    if max_rank is not None:
        keep = min(keep, max_rank)
    return keep


def tt_from_dense(full, tol: float = 0.0, max_rank: Optional[int] = None) -> TTVector:
    """TT-SVD of a dense tensor.

    The per-bond truncation threshold is ``tol * ||full|| / sqrt(L - 1)``, so the
    reconstruction error is bounded by ``tol * ||full||``. The returned train is
    left-orthogonal with its center on the last site.
    """
    full = np.asarray(full, dtype=np.complex128)
    if full.size > MAX_DENSE_SIZE:
        raise TTSizeError(f"dense size {full.size} exceeds {MAX_DENSE_SIZE}")
    dims = full.shape
    L = len(dims)
    if L == 1:
        return TTVector((full.reshape(1, dims[0], 1),), ortho_center=0)
    bond_tol = tol * np.linalg.norm(full) / np.sqrt(L - 1)
    cores = []
    r = 1
    rest = full.reshape(1, -1)
    for k in range(L - 1):
        mat = rest.reshape(r * dims[k], -1)
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        keep = _truncation_rank(s, bond_tol, max_rank)
        cores.append(u[:, :keep].reshape(r, dims[k], keep))
        rest = s[:keep, None] * vh[:keep]
        r = keep
    cores.append(rest.reshape(r, dims[-1], 1))
    return TTVector(tuple(cores), ortho_center=L - 1)


def _left_split(core, abs_tol=0.0, max_rank=None, truncate=False):
    """SVD a core into a left-orthogonal part and the remainder (s @ vh).

    Returns ``(q, rest, discarded)``; ``discarded`` is the root-sum-square of
    dropped singular values.
    """
    r0, p, r1 = core.shape
    u, s, vh = np.linalg.svd(core.reshape(r0 * p, r1), full_matrices=False)
    keep = _truncation_rank(s, abs_tol, max_rank) if truncate else len(s)
    discarded = float(np.sqrt(np.sum(s[keep:] ** 2)))
    q = u[:, :keep].reshape(r0, p, keep)
    rest = s[:keep, None] * vh[:keep]
    return q, rest, discarded


def _right_split(core, abs_tol=0.0, max_rank=None, truncate=False):
    r0, p, r1 = core.shape
    u, s, vh = np.linalg.svd(core.reshape(r0, p * r1), full_matrices=False)
    keep = _truncation_rank(s, abs_tol, max_rank) if truncate else len(s)
    discarded = float(np.sqrt(np.sum(s[keep:] ** 2)))
    q = vh[:keep].reshape(keep, p, r1)
    rest = u[:, :keep] * s[None, :keep]
    return q, rest, discarded


def _sweep(cores, start, stop, truncate=False, abs_tol=0.0, max_rank=None):
    """Move the orthogonality center from ``start`` to ``stop`` in place.

    Cores between the two positions become left- (moving right) or
    right-orthogonal (moving left). Returns the list of discarded weights.
    """
    discarded = []
    if stop > start:
        for k in range(start, stop):
            q, rest, d = _left_split(cores[k], abs_tol, max_rank, truncate)
            cores[k] = q
            cores[k + 1] = np.tensordot(rest, cores[k + 1], axes=([1], [0]))
            discarded.append(d)
    else:
        for k in range(start, stop, -1):
            q, rest, d = _right_split(cores[k], abs_tol, max_rank, truncate)
            cores[k] = q
            cores[k - 1] = np.tensordot(cores[k - 1], rest, axes=([2], [0]))
            discarded.append(d)
    return discarded


def orthogonalize(v: TTVector, center: int) -> TTVector:
    """Canonical form with the orthogonality center on site ``center``."""
    L = v.n_sites
    if not 0 <= center < L:
        raise IndexError(f"center {center} out of range for {L} sites")
    cores = list(v.cores)
    if v.ortho_center is None:
        _sweep(cores, 0, L - 1)
        _sweep(cores, L - 1, center)
    else:
        _sweep(cores, v.ortho_center, center)
    return TTVector(tuple(cores), ortho_center=center)


def is_canonical(v: TTVector, center: int, atol: float = 1e-12) -> bool:
    for k, c in enumerate(v.cores):
        r0, p, r1 = c.shape
        if k < center:
            m = c.reshape(r0 * p, r1)
            if np.abs(m.conj().T @ m - np.eye(r1)).max() > atol:
                return False
        elif k > center:
            m = c.reshape(r0, p * r1)
            if np.abs(m @ m.conj().T - np.eye(r0)).max() > atol:
                return False
    return True


def _round(v: TTVector, tol: float, max_rank: Optional[int]):
    L = v.n_sites
    cores = list(orthogonalize(v, L - 1).cores)
    nrm = np.linalg.norm(cores[-1])
    bond_tol = tol * nrm / np.sqrt(max(L - 1, 1))
    discarded = _sweep(cores, L - 1, 0, truncate=True, abs_tol=bond_tol, max_rank=max_rank)
    return TTVector(tuple(cores), ortho_center=0), discarded


def round(v: TTVector, tol: float = 1e-14, max_rank: Optional[int] = None) -> TTVector:
    """Truncate ranks to relative accuracy ``tol`` and an optional cap.

    Returns a right-orthogonal train with its center on site 0.
    """
    return _round(v, tol, max_rank)[0]


def inner(a: TTVector, b: TTVector) -> complex:
    """``<a|b>`` (``a`` is conjugated)."""
    _check_dims(a.phys_dims, b.phys_dims)
    env = np.ones((1, 1), dtype=np.complex128)
    for ca, cb in zip(a.cores, b.cores):
        t = np.tensordot(env, cb, axes=([1], [0]))  # (ra, p, rb')
        env = np.tensordot(ca.conj(), t, axes=([0, 1], [0, 1]))
    return complex(env[0, 0])


def add(a: TTVector, b: TTVector) -> TTVector:
    """Sum of two trains via block-diagonal cores (ranks add)."""
    _check_dims(a.phys_dims, b.phys_dims)
    L = a.n_sites
    if L == 1:
        return TTVector((a.cores[0] + b.cores[0],))
    cores = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        ra0, p, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        if k == 0:
            c = np.concatenate([ca, cb], axis=2)
        elif k == L - 1:
            c = np.concatenate([ca, cb], axis=0)
        else:
            c = np.zeros((ra0 + rb0, p, ra1 + rb1), dtype=np.complex128)
            c[:ra0, :, :ra1] = ca
            c[ra0:, :, ra1:] = cb
        cores.append(c)
    return TTVector(tuple(cores))


def apply_operator(op: TTOperator, v: TTVector) -> TTVector:
    """Exact MPO-MPS product; ranks multiply (``R_k * r_k``)."""
    _check_dims(op.phys_dims, v.phys_dims)
    cores = []
    for w, c in zip(op.cores, v.cores):
        R0, p, _, R1 = w.shape
        r0, _, r1 = c.shape
        t = np.tensordot(w, c, axes=([2], [1]))  # (R0, p, R1, r0, r1)
        cores.append(t.transpose(0, 3, 1, 2, 4).reshape(R0 * r0, p, R1 * r1))
    return TTVector(tuple(cores))


def product_state(vectors: Sequence) -> TTVector:
    """Rank-1 train from a list of local vectors."""
    cores = [np.asarray(x, dtype=np.complex128).reshape(1, -1, 1) for x in vectors]
    return TTVector(tuple(cores))


def max_ranks(phys_dims: Sequence[int]) -> tuple:
    """Largest meaningful bond ranks for the given site dimensions."""
    dims = list(phys_dims)
    out = [1]
    for k in range(1, len(dims)):
        left = float(np.prod(dims[:k], dtype=np.float64))
        right = float(np.prod(dims[k:], dtype=np.float64))
        out.append(int(min(left, right)))
    out.append(1)
    return tuple(out)


def pad_ranks(v: TTVector, target, center: int = 0) -> TTVector:
    """Zero-pad bond ranks up to ``target`` (int cap or per-bond sequence).

    Targets are clipped to the largest meaningful rank of each bond and never
    shrink an existing bond. The padded train is canonicalized to ``center``;
    the zero blocks become arbitrary orthonormal completions of the isometries,
    which leaves the state itself unchanged.
    """
    L = v.n_sites
    full = max_ranks(v.phys_dims)
    if np.isscalar(target):
        want = [1] + [int(target)] * (L - 1) + [1]
    else:
        want = [1] + [int(t) for t in target] + [1]
        if len(want) != L + 1:
            raise TTError(f"need {L - 1} interior ranks, got {len(want) - 2}")
    ranks = list(v.ranks)
    new = [max(ranks[k], min(want[k], full[k])) for k in range(L + 1)]
    cores = []
    for k, c in enumerate(v.cores):
        r0, p, r1 = c.shape
        z = np.zeros((new[k], p, new[k + 1]), dtype=np.complex128)
        z[:r0, :, :r1] = c
        cores.append(z)
    return orthogonalize(TTVector(tuple(cores)), center)
