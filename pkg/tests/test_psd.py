import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from block_nystrom.errors import DimensionMismatchError, InvalidSpecError, SingularReferenceError, TooLargeError
from block_nystrom.psd import (
    CooOperator,
    DenseOperator,
    KernelOperator,
    SpectrumSpec,
    dense_reg_solve,
    gen_psd,
    loewner_gap,
    read_matrix_market,
    write_matrix_market,
)


def _rbf(Xa, Xb):
    d = ((Xa[:, None, :] - Xb[None, :, :]) ** 2).sum(-1)
    return np.exp(-d / 2)


def test_explicit_identity_without_rotation():
    A = gen_psd(SpectrumSpec("explicit", values=(1, 1, 1)), 3, rotate=False)
    np.testing.assert_array_equal(A.to_dense(), np.eye(3))


def test_poly_decay_spectrum_after_rotation():
    A = gen_psd(SpectrumSpec("poly", gamma=1.0, seed=3), 4)
    w = np.sort(np.linalg.eigvalsh(A.to_dense()))[::-1]
    np.testing.assert_allclose(w, [1, 1 / 2, 1 / 3, 1 / 4], rtol=1e-12)


def test_spiked_head_count():
    A = gen_psd(SpectrumSpec("spiked", k=10, head=100, seed=1), 100)
    w = np.linalg.eigvalsh(A.to_dense())
    assert np.sum(w > 2 * w.min()) == 10
    tail = np.sort(w)[:90]
    assert tail.max() / tail.min() <= 2


@pytest.mark.parametrize(
    "spec,n",
    [
        (SpectrumSpec("poly", gamma=0.0), 5),
        (SpectrumSpec("poly", gamma=-1.0), 5),
        (SpectrumSpec("spiked", k=0), 5),
        (SpectrumSpec("spiked", k=5), 5),
        (SpectrumSpec("explicit", values=(1.0, 2.0)), 3),
        (SpectrumSpec("bogus"), 3),
    ],
)
def test_invalid_spec(spec, n):
    with pytest.raises(InvalidSpecError):
        gen_psd(spec, n)


def test_generator_is_deterministic():
    a = gen_psd(SpectrumSpec("poly", gamma=0.5, seed=11), 30).to_dense()
    b = gen_psd(SpectrumSpec("poly", gamma=0.5, seed=11), 30).to_dense()
    c = gen_psd(SpectrumSpec("poly", gamma=0.5, seed=12), 30).to_dense()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=25, deadline=None)
@given(
    gamma=st.floats(0.2, 3.0),
    n=st.integers(2, 60),
    seed=st.integers(0, 2**32),
)
def test_generated_spectrum_matches_spec(gamma, n, seed):
    spec = SpectrumSpec("poly", gamma=gamma, seed=seed)
    A = gen_psd(spec, n).to_dense()
    want = np.sort(spec.eigenvalues(n))
    got = np.linalg.eigvalsh(A)
    np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-8 * want.max())
    assert np.all(np.abs(A - A.T) <= 1e-12 * np.maximum(1, np.abs(A)))
    assert got.min() >= -1e-9 * got.max()


def test_loewner_identity_and_scaling():
    Y = gen_psd(SpectrumSpec("poly", gamma=1.0, seed=0), 20).to_dense() + np.eye(20)
    g = loewner_gap(Y, Y)
    assert g.gmin == pytest.approx(1, abs=1e-10) and g.gmax == pytest.approx(1, abs=1e-10)
    g = loewner_gap(2 * np.eye(5), np.eye(5))
    assert (g.gmin, g.gmax) == pytest.approx((2.0, 2.0))


def test_loewner_matches_generalized_eigensolve():
    rng = np.random.default_rng(5)
    X0 = rng.standard_normal((50, 50))
    Y0 = rng.standard_normal((50, 50))
    X = X0 @ X0.T
    Y = Y0 @ Y0.T + 0.5 * np.eye(50)
    brute = np.sort(np.real(np.linalg.eigvals(np.linalg.solve(Y, X))))
    g = loewner_gap(X, Y)
    assert g.gmin == pytest.approx(brute[0], rel=1e-8, abs=1e-8)
    assert g.gmax == pytest.approx(brute[-1], rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), lam=st.floats(1e-6, 10.0))
def test_loewner_of_reference_with_itself(seed, lam):
    A = gen_psd(SpectrumSpec("poly", gamma=1.0, seed=seed), 40)
    Y = A.to_dense() + lam * np.eye(40)
    g = loewner_gap(Y, Y)
    assert abs(g.gmin - 1) <= 1e-10 and abs(g.gmax - 1) <= 1e-10


def test_loewner_errors():
    with pytest.raises(SingularReferenceError):
        loewner_gap(np.eye(3), np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(TooLargeError):
        loewner_gap(np.eye(10), np.eye(10), cap=5)


def test_dense_reg_solve_examples():
    v = np.array([3.0, -1.0, 2.0])
    np.testing.assert_allclose(dense_reg_solve(np.zeros((3, 3)), 2.0, v), v / 2)
    np.testing.assert_allclose(dense_reg_solve(np.eye(3), 1.0, v), v / 2)
    np.testing.assert_allclose(dense_reg_solve(np.diag([3.0, 1.0]), 1.0, [4.0, 4.0]), [1.0, 2.0])
    with pytest.raises(TooLargeError):
        dense_reg_solve(np.eye(10), 1.0, np.ones(10), cap=4)


def test_dense_reg_solve_residual():
    A = gen_psd(SpectrumSpec("poly", gamma=0.5, seed=2), 200)
    v = np.random.default_rng(0).standard_normal(200)
    u = dense_reg_solve(A, 1e-3, v)
    assert np.linalg.norm(A.matvec(u) + 1e-3 * u - v) <= 1e-10 * np.linalg.norm(v)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_matvec_linearity(a, b, seed):
    A = gen_psd(SpectrumSpec("poly", gamma=1.0, seed=seed), 30)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, 30))
    lhs = A.matvec(a * u + b * v)
    rhs = a * A.matvec(u) + b * A.matvec(v)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(1.0, np.linalg.norm(lhs))


def test_backings_agree():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 2))
    K = _rbf(X, X)
    ops = [
        DenseOperator(K),
        KernelOperator(X, _rbf),
        KernelOperator(X, _rbf, cache_bytes=0),
    ]
    rows, cols = np.nonzero(np.abs(K) > 0)
    ops.append(CooOperator(40, rows, cols, K[rows, cols]))
    v = rng.standard_normal(40)
    idx = [3, 7, 7, 0]
    for op in ops:
        np.testing.assert_allclose(op.matvec(v), K @ v, rtol=1e-10)
        np.testing.assert_allclose(op.columns(idx), K[:, idx], rtol=1e-12)
        np.testing.assert_allclose(op.diagonal(), np.diag(K), rtol=1e-12)
        assert op.entry(3, 5) == pytest.approx(K[3, 5])
        np.testing.assert_allclose(op.to_dense(), K, rtol=1e-12)


def test_kernel_cache_eviction_keeps_values():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 2))
    op = KernelOperator(X, _rbf, cache_bytes=8 * 30 * 4)
    for j in range(30):
        np.testing.assert_allclose(op.column(j), _rbf(X, X[j : j + 1])[:, 0])
    assert len(op._cache) <= 4


def test_rejects_bad_input():
    with pytest.raises(InvalidSpecError):
        DenseOperator(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(DimensionMismatchError):
        DenseOperator(np.eye(3)).matvec(np.ones(4))


def test_matrix_market_roundtrip(tmp_path):
    A = gen_psd(SpectrumSpec("spiked", k=3, head=50, seed=4), 12)
    p1, p2 = tmp_path / "a.mtx", tmp_path / "b.mtx"
    write_matrix_market(p1, A)
    write_matrix_market(p2, A)
    assert p1.read_bytes() == p2.read_bytes()
    B = read_matrix_market(p1)
    np.testing.assert_allclose(B.to_dense(), A.to_dense(), rtol=1e-15, atol=1e-15)


def test_matrix_market_coordinate(tmp_path):
    p = tmp_path / "c.mtx"
    p.write_text("%%MatrixMarket matrix coordinate real symmetric\n3 3 4\n1 1 2.0\n2 1 -1.0\n2 2 2.0\n3 3 1.5\n")
    A = read_matrix_market(p)
    assert isinstance(A, CooOperator)
    np.testing.assert_allclose(A.to_dense(), [[2, -1, 0], [-1, 2, 0], [0, 0, 1.5]])
    assert A.nnz_hint == 5


def test_dense_cap():
    A = gen_psd(SpectrumSpec("poly", gamma=1.0), 10)
    with pytest.raises(TooLargeError):
        A.eigh(cap=5)
