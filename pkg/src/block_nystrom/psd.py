"""PSD operators, synthetic spectra and dense eigensolver oracles.

Everything else in the package talks to a matrix through :class:`PsdOperator`,
so the same code runs on explicit arrays, coordinate lists and implicit kernel
matrices.  The dense oracles in this module (``eigh``, :func:`loewner_gap`,
:func:`dense_reg_solve`) are the ground truth used by the verification code
and refuse to run above ``DESK_CAP``.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import (
    DimensionMismatchError,
    InvalidSpecError,
    NonPositiveRegularizerError,
    SingularReferenceError,
    TooLargeError,
)

DESK_CAP = 4096

ArrayOrOp = Union["PsdOperator", np.ndarray]


def _check_cap(n: int, cap: Optional[int]) -> None:
    cap = DESK_CAP if cap is None else cap
    if n > cap:
        raise TooLargeError(f"dense oracle requested for n={n} above cap {cap}")


class PsdOperator:
    """Read-only access to a symmetric positive semidefinite n x n matrix.

    Subclasses implement ``columns`` and ``matvec``; the rest has generic
    fallbacks.  Instances are immutable; the only mutable state is a lazily
    filled eigendecomposition cache guarded by a lock.
    """

    n: int
    nnz_hint: Union[int, str] = "dense"

    def __init__(self, n: int):
        if n < 1:
            raise InvalidSpecError("operator dimension must be at least 1")
        self.n = int(n)
        self._eig = None
        self._lock = threading.Lock()

    # access -------------------------------------------------------------
    def entry(self, i: int, j: int) -> float:
        return float(self.submatrix([i], [j])[0, 0])

    def column(self, j: int) -> np.ndarray:
        return self.columns([j])[:, 0]

    def columns(self, idx: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def submatrix(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        return self.columns(cols)[np.asarray(rows, dtype=np.intp)]

    def diagonal(self) -> np.ndarray:
        return np.array([self.entry(i, i) for i in range(self.n)])

    def matvec(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __matmul__(self, v):
        return self.matvec(v)

    def to_dense(self, cap: Optional[int] = None) -> np.ndarray:
        _check_cap(self.n, cap)
        return self.columns(np.arange(self.n))

    # oracles ------------------------------------------------------------
    def eigh(self, cap: Optional[int] = None):
        """Cached dense eigendecomposition ``(w, V)`` with ascending ``w``."""
        _check_cap(self.n, cap)
        with self._lock:
            if self._eig is None:
                w, V = np.linalg.eigh(self.to_dense(cap))
                self._eig = (w, V)
            return self._eig

    def eigvals(self, cap: Optional[int] = None) -> np.ndarray:
        return self.eigh(cap)[0]

    def _check_vec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionMismatchError(f"expected leading dimension {self.n}, got {v.shape[0]}")
        return v


class DenseOperator(PsdOperator):
    """Explicit array backing.  ``spectrum`` may carry a known ``(w, V)``."""

    def __init__(self, array, spectrum=None, check: bool = True):
        A = np.array(array, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatchError("a PSD operator needs a square matrix")
        super().__init__(A.shape[0])
        if check:
            scale = np.maximum(1.0, np.abs(A))
            if np.any(np.abs(A - A.T) > 1e-12 * scale):
                raise InvalidSpecError("matrix is not symmetric")
        A.setflags(write=False)
        self._A = A
        if spectrum is not None:
            w, V = spectrum
            order = np.argsort(w)
            w = np.asarray(w, dtype=float)[order]
            V = np.asarray(V, dtype=float)[:, order]
            w.setflags(write=False)
            V.setflags(write=False)
            self._eig = (w, V)

    @property
    def array(self) -> np.ndarray:
        return self._A

    def entry(self, i, j):
        return float(self._A[i, j])

    def columns(self, idx):
        return self._A[:, np.asarray(idx, dtype=np.intp)]

    def submatrix(self, rows, cols):
        return self._A[np.ix_(np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp))]

    def diagonal(self):
        return self._A.diagonal().copy()

    def matvec(self, v):
        return self._A @ self._check_vec(v)

    def to_dense(self, cap=None):
        _check_cap(self.n, cap)
        return self._A


class CooOperator(PsdOperator):
    """Coordinate-list backing for sparse symmetric input."""

    def __init__(self, n: int, rows, cols, vals, symmetrize: bool = False):
        super().__init__(n)
        M = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        if symmetrize:
            M = (M + M.T - sp.diags(M.diagonal())).tocsr()
        D = abs(M - M.T)
        if D.nnz and D.max() > 1e-12 * max(1.0, abs(M).max()):
            raise InvalidSpecError("coordinate matrix is not symmetric")
        self._M = M
        self._Mc = M.tocsc()
        self.nnz_hint = int(M.nnz)

    @property
    def sparse(self):
        return self._M

    def entry(self, i, j):
        return float(self._M[i, j])

    def columns(self, idx):
        return self._Mc[:, np.asarray(idx, dtype=np.intp)].toarray()

    def diagonal(self):
        return self._M.diagonal()

    def matvec(self, v):
        return self._M @ self._check_vec(v)

    def to_dense(self, cap=None):
        _check_cap(self.n, cap)
        return self._M.toarray()


class KernelOperator(PsdOperator):
    """Implicit kernel matrix K_ij = k(x_i, x_j) evaluated on demand.

    ``kernel(Xa, Xb)`` must return the cross-kernel matrix.  Columns are
    cached up to ``cache_bytes``; set it to 0 to disable caching.
    """

    def __init__(self, points, kernel: Callable, cache_bytes: int = 256 * 2**20):
        X = np.array(points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        super().__init__(X.shape[0])
        X.setflags(write=False)
        self.points = X
        self.kernel = kernel
        self._cache: OrderedDict = OrderedDict()
        self._max_cols = int(cache_bytes // (8 * self.n))

    def entry(self, i, j):
        return float(self.kernel(self.points[i : i + 1], self.points[j : j + 1])[0, 0])

    def columns(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        if self._max_cols == 0:
            return self.kernel(self.points, self.points[idx])
        uniq = np.unique(idx)
        with self._lock:
            missing = [j for j in uniq if j not in self._cache]
        if missing:
            fresh = self.kernel(self.points, self.points[missing])
            with self._lock:
                for t, j in enumerate(missing):
                    self._cache[j] = fresh[:, t].copy()
                    self._cache.move_to_end(j)
                while len(self._cache) > self._max_cols:
                    self._cache.popitem(last=False)
            lookup = dict(zip(missing, fresh.T))
        else:
            lookup = {}
        out = np.empty((self.n, len(idx)))
        with self._lock:
            for t, j in enumerate(idx):
                col = lookup.get(j)
                out[:, t] = col if col is not None else self._cache[j]
        return out

    def diagonal(self):
        diag = getattr(self.kernel, "diag", None)
        if diag is not None:
            return np.asarray(diag(self.points), dtype=float)
        return super().diagonal()

    def matvec(self, v, chunk: int = 512):
        v = self._check_vec(v)
        out = np.empty((self.n,) + v.shape[1:])
        for s in range(0, self.n, chunk):
            out[s : s + chunk] = self.kernel(self.points[s : s + chunk], self.points) @ v
        return out

    def to_dense(self, cap=None):
        _check_cap(self.n, cap)
        K = self.kernel(self.points, self.points)
        return 0.5 * (K + K.T)


def as_operator(A: ArrayOrOp) -> PsdOperator:
    if isinstance(A, PsdOperator):
        return A
    if sp.issparse(A):
        C = sp.coo_matrix(A)
        return CooOperator(C.shape[0], C.row, C.col, C.data)
    return DenseOperator(A)


def _dense(X: ArrayOrOp, cap) -> np.ndarray:
    if isinstance(X, PsdOperator):
        return X.to_dense(cap)
    X = np.asarray(X, dtype=float)
    _check_cap(X.shape[0], cap)
    return X


# --------------------------------------------------------------------------
# synthetic spectra


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalue recipe for :func:`gen_psd`.

    ``kind`` is ``"poly"`` (lambda_i = i^(-1/gamma)), ``"spiked"`` (k head
    eigenvalues geometrically spaced from ``head`` down to ``4*tail_floor``
    over a tail spread inside [1, tail_spread]) or ``"explicit"``.
    """

    kind: str
    gamma: Optional[float] = None
    k: Optional[int] = None
    head: float = 100.0
    tail_spread: float = 1.5
    values: Optional[tuple] = None
    seed: int = 0

    def eigenvalues(self, n: int) -> np.ndarray:
        """Spectrum in descending order."""
        if n < 1:
            raise InvalidSpecError("n must be at least 1")
        if self.kind == "poly":
            if self.gamma is None or not self.gamma > 0:
                raise InvalidSpecError("poly-decay needs gamma > 0")
            return np.arange(1, n + 1, dtype=float) ** (-1.0 / self.gamma)
        if self.kind == "spiked":
            k = self.k
            if k is None or not 1 <= k < n:
                raise InvalidSpecError(f"spiked needs 1 <= k < n, got k={k}, n={n}")
            if not 1.0 <= self.tail_spread < 2.0:
                raise InvalidSpecError("tail_spread must lie in [1, 2)")
            if not self.head > 4.0:
                raise InvalidSpecError("head must exceed 4 so head eigenvalues clear 2*lambda_min")
            head = np.geomspace(self.head, 4.0, k) if k > 1 else np.array([self.head])
            tail = np.linspace(self.tail_spread, 1.0, n - k)
            return np.concatenate([head, tail])
        if self.kind == "explicit":
            if self.values is None or len(self.values) != n:
                raise InvalidSpecError("explicit spectrum length must equal n")
            vals = np.asarray(self.values, dtype=float)
            if np.any(vals < 0):
                raise InvalidSpecError("explicit spectrum must be nonnegative")
            return np.sort(vals)[::-1]
        raise InvalidSpecError(f"unknown spectrum kind {self.kind!r}")


def random_orthogonal(n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def gen_psd(spec: SpectrumSpec, n: int, rotate: bool = True) -> DenseOperator:
    """A = Q diag(lambda) Q^T with Q seeded by ``spec.seed``.

    The returned operator carries its exact spectrum so that oracles do not
    need to re-diagonalize it.
    """
    lam = spec.eigenvalues(n)
    Q = random_orthogonal(n, spec.seed) if rotate else np.eye(n)
    A = (Q * lam) @ Q.T
    A = 0.5 * (A + A.T)
    return DenseOperator(A, spectrum=(lam, Q), check=False)


# --------------------------------------------------------------------------
# oracles


@dataclass(frozen=True)
class LoewnerGap:
    """Extreme generalized eigenvalues of (X, Yref)."""

    gmin: float
    gmax: float

    @property
    def ratio(self) -> float:
        return self.gmax / self.gmin


def gap_in_basis(X: np.ndarray, w: np.ndarray, V: np.ndarray) -> LoewnerGap:
    """Loewner gap of X against the reference V diag(w) V^T."""
    scale = np.max(np.abs(w))
    if w.min() <= 1e-12 * scale:
        raise SingularReferenceError(f"reference eigenvalue {w.min():.3e} is not positive")
    S = V / np.sqrt(w)
    Z = S.T @ X @ S
    g = np.linalg.eigvalsh(0.5 * (Z + Z.T))
    return LoewnerGap(float(g[0]), float(g[-1]))


def loewner_gap(X: ArrayOrOp, Yref: ArrayOrOp, cap: Optional[int] = None) -> LoewnerGap:
    """Extreme eigenvalues of Yref^{-1/2} X Yref^{-1/2}.

    X dominates c * Yref exactly when ``gmin >= c``.
    """
    Xd = _dense(X, cap)
    if isinstance(Yref, PsdOperator):
        w, V = Yref.eigh(cap)
    else:
        w, V = np.linalg.eigh(_dense(Yref, cap))
    if Xd.shape != V.shape:
        raise DimensionMismatchError("X and Yref must have the same shape")
    return gap_in_basis(Xd, w, V)


def dense_reg_solve(A: ArrayOrOp, lam: float, v, cap: Optional[int] = None) -> np.ndarray:
    """Solve (A + lam I) u = v with a dense Cholesky factorization."""
    if not lam > 0:
        raise NonPositiveRegularizerError("lambda must be positive")
    Ad = _dense(A, cap)
    M = Ad + lam * np.eye(Ad.shape[0])
    v = np.asarray(v, dtype=float)
    if v.shape[0] != M.shape[0]:
        raise DimensionMismatchError("right-hand side has the wrong length")
    return sla.cho_solve(sla.cho_factor(M, lower=True), v)


# --------------------------------------------------------------------------
# Matrix Market I/O


def read_matrix_market(path) -> PsdOperator:
    M = scipy.io.mmread(path)
    if sp.issparse(M):
        C = sp.coo_matrix(M)
        return CooOperator(C.shape[0], C.row, C.col, C.data)
    return DenseOperator(np.asarray(M, dtype=float))


def write_matrix_market(path, A: ArrayOrOp, comment: str = "") -> None:
    if isinstance(A, CooOperator):
        data = A.sparse.tocoo()
    elif isinstance(A, PsdOperator):
        data = np.asarray(A.to_dense())
    else:
        data = np.asarray(A, dtype=float)
    scipy.io.mmwrite(path, data, comment=comment, field="real", precision=17, symmetry="symmetric")
