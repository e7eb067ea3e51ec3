import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choimap.tt_core import (
    TTError,
    TTOperator,
    TTSizeError,
    TTVector,
    add,
    apply_operator,
    inner,
    is_canonical,
    orthogonalize,
    pad_ranks,
    product_state,
    round as tt_round,
    tt_from_dense,
)
from choimap.vibronic_model import number
from conftest import random_mpo, random_tt


def test_boundary_rank_and_chain_checks():
    with pytest.raises(TTError):
        TTVector((np.ones((2, 2, 1)),))
    with pytest.raises(TTError):
        TTVector((np.ones((1, 2, 2)), np.ones((3, 2, 1))))
    with pytest.raises(TTError):
        TTOperator((np.ones((1, 2, 3, 1)),))


def test_product_state_from_dense_is_rank_one():
    e1 = np.zeros(3)
    e1[0] = 1
    full = np.einsum("i,j,k->ijk", e1, e1, e1)
    v = tt_from_dense(full)
    assert v.ranks == (1, 1, 1, 1)
    assert np.allclose(v.to_dense(), full, atol=0)


def test_random_2x2x2_exact(rng):
    full = rng.standard_normal((2, 2, 2)) + 1j * rng.standard_normal((2, 2, 2))
    v = tt_from_dense(full, tol=0.0)
    assert max(v.ranks) <= 2
    assert np.linalg.norm(v.to_dense() - full) <= 1e-14 * max(1.0, np.linalg.norm(full))
    assert v.ortho_center == 2


def test_tt_from_dense_truncation_bound(rng):
    full = rng.standard_normal((4, 4, 4, 4))
    v = tt_from_dense(full, tol=1e-3)
    assert np.linalg.norm(v.to_dense() - full) <= 1e-3 * np.linalg.norm(full)


def test_tt_from_dense_size_cap():
    with pytest.raises(TTSizeError):
        tt_from_dense(np.broadcast_to(np.zeros(1, dtype=complex), (2**13, 2**12)))


@settings(max_examples=30, deadline=None)
@given(
    dims=st.lists(st.integers(1, 8), min_size=1, max_size=4),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_property(dims, seed):
    rng = np.random.default_rng(seed)
    full = rng.standard_normal(dims) + 1j * rng.standard_normal(dims)
    v = tt_from_dense(full, tol=0.0)
    assert np.linalg.norm(v.to_dense() - full) <= 1e-12 * max(1.0, np.linalg.norm(full))


def test_orthogonalize_preserves_state(rng):
    v = random_tt(rng, [3, 4, 2, 3], 3)
    nrm2 = inner(v, v).real
    for center in (0, 3, 1):
        w = orthogonalize(v, center)
        assert is_canonical(w, center, atol=1e-12)
        assert abs(inner(w, v) - nrm2) <= 1e-12 * nrm2
        v = w


def test_orthogonalize_idempotent_and_product_rank(rng):
    v = orthogonalize(random_tt(rng, [2, 3, 2], 2), 1)
    w = orthogonalize(v, 1)
    assert np.allclose(w.to_dense(), v.to_dense(), atol=1e-13)
    p = product_state([rng.standard_normal(3) for _ in range(4)])
    for c in range(4):
        assert orthogonalize(p, c).ranks == (1, 1, 1, 1, 1)
    with pytest.raises(IndexError):
        orthogonalize(p, 4)


def test_inner_matches_dense(rng):
    a = random_tt(rng, [2, 3, 4], 2)
    b = random_tt(rng, [2, 3, 4], 3)
    ref = np.vdot(a.to_dense(), b.to_dense())
    assert abs(inner(a, b) - ref) <= 1e-12 * abs(ref)
    vv = inner(a, a)
    assert abs(vv.imag) <= 1e-12 * abs(vv) and vv.real >= 0
    e1 = product_state([[1, 0], [1, 0]])
    e2 = product_state([[0, 1], [0, 1]])
    assert inner(e1, e2) == 0
    with pytest.raises(TTError):
        inner(a, random_tt(rng, [2, 3, 3], 2))


def test_norm_gauge_invariance(rng):
    v = random_tt(rng, [3, 3, 3, 3], 4)
    n0 = v.norm()
    for c in range(4):
        assert abs(orthogonalize(v, c).norm() - n0) <= 1e-12 * n0


def test_round_rank_one_unchanged():
    p = product_state([[1, 2], [3, 4], [0, 1]])
    r = tt_round(p, tol=1e-3)
    assert r.ranks == p.ranks
    assert np.allclose(r.to_dense(), p.to_dense())


def test_round_removes_zero_padding(rng):
    v = tt_from_dense(rng.standard_normal((2, 3, 2)))
    padded = pad_ranks(v, 6)
    assert max(padded.ranks) > max(v.ranks) or padded.ranks == v.ranks
    assert np.allclose(padded.to_dense(), v.to_dense(), atol=1e-13)
    back = tt_round(padded, tol=1e-14)
    assert back.ranks == v.ranks


def test_round_max_rank_error_equals_discarded(rng):
    full = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    v = tt_from_dense(full)
    r = tt_round(v, tol=0.0, max_rank=2)
    s = np.linalg.svd(full, compute_uv=False)
    assert abs(np.linalg.norm(r.to_dense() - full) - s[2]) <= 1e-12


def test_round_never_increases_ranks(rng):
    v = random_tt(rng, [2, 4, 4, 2], 3)
    r = tt_round(v, tol=1e-8)
    assert all(a <= b for a, b in zip(r.ranks, v.ranks))
    assert np.linalg.norm(r.to_dense() - v.to_dense()) <= 1e-8 * v.norm()


def test_apply_operator_dense(rng):
    dims = [2, 3, 2]
    h = random_mpo(rng, dims, 2)
    v = random_tt(rng, dims, 2)
    out = apply_operator(h, v)
    ref = h.to_dense() @ v.to_dense().ravel()
    assert np.allclose(out.to_dense().ravel(), ref, atol=1e-12 * np.abs(ref).max())
    assert all(r <= 2 * 2 for r in out.ranks)


def test_apply_identity_and_number():
    eye = TTOperator(tuple(np.eye(p).reshape(1, p, p, 1) for p in (2, 3)))
    v = product_state([[1, 1j], [0.5, 0, 2]])
    out = tt_round(apply_operator(eye, v), tol=1e-14)
    assert np.allclose(out.to_dense(), v.to_dense())
    n_op = TTOperator((number(4).reshape(1, 4, 4, 1),))
    fock2 = product_state([[0, 0, 1, 0]])
    assert np.allclose(apply_operator(n_op, fock2).to_dense(), 2 * fock2.to_dense())


def test_apply_distributes_over_add(rng):
    dims = [2, 2, 3]
    h = random_mpo(rng, dims, 2)
    a, b = random_tt(rng, dims, 2), random_tt(rng, dims, 1)
    lhs = apply_operator(h, add(a, b)).to_dense()
    rhs = apply_operator(h, a).to_dense() + apply_operator(h, b).to_dense()
    assert np.allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())
