import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from se3flow.errors import InvalidArgumentError, SolverError
from se3flow.smoothing import (
    EdgeWeightField,
    apply_smoothing_operator,
    assemble_dense,
    smooth_embeddings,
    smooth_embeddings_dense,
    smoothing_energy,
)


def random_weights(rng, h, w, hi=5.0):
    return EdgeWeightField(rng.uniform(0, hi, (h, w)), rng.uniform(0, hi, (h, w)))


def test_weight_validation():
    with pytest.raises(InvalidArgumentError):
        EdgeWeightField(-np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(InvalidArgumentError):
        EdgeWeightField(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(InvalidArgumentError):
        EdgeWeightField(np.full((2, 2), np.inf), np.ones((2, 2)))


def test_zero_weights_return_input_exactly(rng):
    v = rng.standard_normal((7, 5, 4))
    assert np.array_equal(smooth_embeddings(v, EdgeWeightField.zeros(7, 5)), v)


def test_constant_input_is_fixed_point(rng):
    v = np.broadcast_to(rng.standard_normal(3), (9, 9, 3)).copy()
    assert np.array_equal(smooth_embeddings(v, random_weights(rng, 9, 9)), v)


def test_bypass_returns_input(rng):
    v = rng.standard_normal((4, 4, 2))
    out = smooth_embeddings(v, random_weights(rng, 4, 4), enabled=False)
    assert np.array_equal(out, v) and out is not v


def test_pcg_matches_dense_4x4(rng, backend):
    for _ in range(10):
        v = rng.standard_normal((4, 4, 3))
        w = random_weights(rng, 4, 4)
        assert np.max(np.abs(smooth_embeddings(v, w) - smooth_embeddings_dense(v, w))) < 1e-8


def test_operator_constant_is_identity(rng, backend):
    u = np.full((6, 6), 2.5)
    assert np.array_equal(apply_smoothing_operator(u, random_weights(rng, 6, 6)), u)


def test_operator_matches_assembly_8x8(rng, backend):
    w = random_weights(rng, 8, 8)
    u = rng.standard_normal((8, 8, 3))
    dense = (assemble_dense(w) @ u.reshape(64, 3)).reshape(8, 8, 3)
    assert np.max(np.abs(apply_smoothing_operator(u, w) - dense)) < 1e-12


def test_operator_matches_sparse_difference_form(rng):
    import scipy.sparse as sp

    H, W = 5, 6
    w = random_weights(rng, H, W)
    n = H * W
    idx = np.arange(n).reshape(H, W)

    def diff(a, b):
        rows = np.arange(a.size)
        return sp.csr_matrix(
            (np.r_[-np.ones(a.size), np.ones(a.size)], (np.r_[rows, rows], np.r_[a.ravel(), b.ravel()])), shape=(a.size, n)
        )

    Dx = diff(idx[:, :-1], idx[:, 1:])
    Dy = diff(idx[:-1], idx[1:])
    A = sp.eye(n) + Dx.T @ sp.diags(w.wx[:, :-1].ravel()) @ Dx + Dy.T @ sp.diags(w.wy[:-1].ravel()) @ Dy
    u = rng.standard_normal(n)
    assert np.allclose(apply_smoothing_operator(u.reshape(H, W), w).ravel(), A @ u, atol=1e-12)


def test_operator_symmetric_and_dominant(rng, backend):
    w = random_weights(rng, 7, 9)
    u, z = rng.standard_normal((2, 7, 9))
    Au, Az = apply_smoothing_operator(u, w), apply_smoothing_operator(z, w)
    assert abs(np.sum(Au * z) - np.sum(u * Az)) < 1e-10
    assert np.sum(Au * u) >= np.sum(u * u)


def test_solution_is_energy_minimum(rng):
    v = rng.standard_normal((8, 8, 2))
    w = random_weights(rng, 8, 8)
    u = smooth_embeddings(v, w, tol=1e-12)
    e = smoothing_energy(u, v, w)
    assert e <= smoothing_energy(v, v, w)
    for _ in range(5):
        assert e <= smoothing_energy(u + 1e-3 * rng.standard_normal(u.shape), v, w)


def test_larger_weights_smooth_more(rng):
    v = rng.standard_normal((10, 10))

    def roughness(u):
        return np.sum(np.diff(u, axis=0) ** 2) + np.sum(np.diff(u, axis=1) ** 2)

    r = [roughness(smooth_embeddings(v, EdgeWeightField.uniform(10, 10, s))) for s in (0.5, 2.0, 8.0)]
    assert r[0] > r[1] > r[2]


def test_zero_weight_edges_decouple_regions(rng):
    v = np.zeros((6, 6))
    v[:, 3:] = 1.0
    w = EdgeWeightField.uniform(6, 6, 50.0)
    w.wx[:, 2] = 0.0  # cut between columns 2 and 3
    u = smooth_embeddings(v, w)
    assert np.allclose(u, v, atol=1e-9)


def test_nonconvergence_reports_residual(rng):
    v = rng.standard_normal((12, 12))
    with pytest.raises(SolverError) as info:
        smooth_embeddings(v, random_weights(rng, 12, 12, hi=100.0), tol=1e-14, max_iter=2)
    assert info.value.residual > 1e-14


def test_shape_and_finiteness_checks(rng):
    with pytest.raises(InvalidArgumentError):
        smooth_embeddings(np.zeros((3, 3)), EdgeWeightField.zeros(3, 4))
    with pytest.raises(InvalidArgumentError):
        smooth_embeddings(np.full((3, 3), np.nan), EdgeWeightField.zeros(3, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_pcg_dense_agreement_property(h, w, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((h, w, 2))
    wt = random_weights(rng, h, w)
    assert np.max(np.abs(smooth_embeddings(v, wt, tol=1e-12) - smooth_embeddings_dense(v, wt))) < 1e-10
