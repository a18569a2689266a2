"""Landmark sampling and single-block Nystrom factors.

A factor is stored in compact form.  With u distinct landmarks and draw
counts d, the b x b matrix W = A[S,S] has the same nonzero spectrum as
M = D^{1/2} A[U,U] D^{1/2}, and

    C W^+ C^T = (A[:,U] D^{1/2}) M^+ (A[:,U] D^{1/2})^T = G G^T,

so only G (n x rank) is kept.  The full ``C`` and ``Wdag`` of the textbook
form are available as lazily computed properties.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import DimensionMismatchError, InvalidSpecError, ZeroMassError
from .leverage import RidgeScores
from .psd import _check_cap, as_operator

_MAGIC = b"NYSF"


@dataclass(frozen=True)
class LandmarkSet:
    indices: np.ndarray
    probs: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.indices) < 1:
            raise InvalidSpecError("a landmark set needs at least one index")
        n = len(self.probs)
        if np.any(self.indices < 0) or np.any(self.indices >= n):
            raise InvalidSpecError("landmark index out of range")

    @property
    def b(self) -> int:
        return len(self.indices)

    @classmethod
    def full(cls, n: int) -> "LandmarkSet":
        return cls(np.arange(n), np.full(n, 1.0 / n), None)


def sample_landmarks(scores: Union[RidgeScores, np.ndarray], b: int, seed) -> LandmarkSet:
    """b i.i.d. draws with p_i proportional to the scores."""
    s = np.asarray(scores.scores if isinstance(scores, RidgeScores) else scores, dtype=float)
    if b < 1:
        raise InvalidSpecError("need at least one landmark")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise InvalidSpecError("scores must be finite and nonnegative")
    total = s.sum()
    if total <= 0:
        raise ZeroMassError("all sampling scores are zero")
    p = s / total
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(p), size=int(b), replace=True, p=p)
    return LandmarkSet(idx, p, None if seed is None else int(np.asarray(seed).ravel()[0]))


def _cond_ok(L: np.ndarray, M: np.ndarray, tau_rel: float) -> bool:
    """True when the Cholesky factor certifies lambda_min(M) well above tau."""
    anorm = np.abs(M).sum(axis=0).max()
    rcond, info = lapack.dpocon(L, anorm, uplo="L")
    # kappa_2 <= kappa_1 for symmetric M; keep a 100x margin for the estimator
    return info == 0 and rcond > 100.0 * tau_rel


class NystromFactor:
    """Classical Nystrom approximation C W^+ C^T from one landmark set."""

    def __init__(self, n, landmarks: LandmarkSet, G: np.ndarray, uniq, inv, counts, core, source=None):
        self.n = int(n)
        self.landmarks = landmarks
        self.G = G
        self._uniq = uniq
        self._inv = inv
        self._counts = counts
        self._core = core  # ("chol", L) | ("eig", V, s) | ("dense", Wdag)
        self._source = source
        self._C = None
        self._Wdag = None

    @property
    def b(self) -> int:
        return self.landmarks.b

    @property
    def rank(self) -> int:
        return self.G.shape[1]

    @property
    def C(self) -> np.ndarray:
        if self._C is None:
            if self._source is None:
                raise InvalidSpecError("factor was loaded without its columns")
            self._C = self._source.columns(self.landmarks.indices)
        return self._C

    def core_pinv(self) -> np.ndarray:
        """M^+ for the compact u x u core."""
        kind = self._core[0]
        if kind == "chol":
            L = self._core[1]
            Linv = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
            return Linv.T @ Linv
        if kind == "eig":
            _, V, s = self._core
            return (V / s) @ V.T
        raise InvalidSpecError("dense-loaded factor has no compact core")

    def core_solve(self, x: np.ndarray) -> np.ndarray:
        kind = self._core[0]
        if kind == "chol":
            return sla.cho_solve((self._core[1], True), x)
        _, V, s = self._core
        return V @ ((V.T @ x) / (s if x.ndim == 1 else s[:, None]))

    @property
    def Wdag(self) -> np.ndarray:
        """b x b pseudo-inverse of W = A[S,S] (duplicates included)."""
        if self._Wdag is None:
            if self._core[0] == "dense":
                self._Wdag = self._core[1]
            else:
                Mp = self.core_pinv()
                f = 1.0 / np.sqrt(self._counts[self._inv])
                Wd = Mp[np.ix_(self._inv, self._inv)] * f[:, None] * f[None, :]
                self._Wdag = 0.5 * (Wd + Wd.T)
        return self._Wdag

    def coefficients(self, z: np.ndarray) -> np.ndarray:
        """u = Wdag C^T z, one entry per landmark draw, so that C u = A_hat z."""
        if self._core[0] == "dense":
            return self.Wdag @ (self.C.T @ z)
        dh = np.sqrt(self._counts)
        Cu_t_z = self._source.columns(self._uniq).T @ z
        w = self.core_solve(dh * Cu_t_z)
        return (w / dh)[self._inv]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return apply_factor(self, v)

    def materialize(self) -> np.ndarray:
        return self.G @ self.G.T

    # serialization -------------------------------------------------------
    def to_bytes(self) -> bytes:
        C = np.ascontiguousarray(self.C, dtype="<f8")
        Wd = np.ascontiguousarray(self.Wdag, dtype="<f8")
        seed = -1 if self.landmarks.seed is None else int(self.landmarks.seed)
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<qqqq", self.n, self.b, self.rank, seed))
        buf.write(C.tobytes())
        buf.write(Wd.tobytes())
        buf.write(np.ascontiguousarray(self.landmarks.indices, dtype="<i8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "NystromFactor":
        if data[:4] != _MAGIC:
            raise InvalidSpecError("not a Nystrom factor container")
        n, b, rank, seed = struct.unpack_from("<qqqq", data, 4)
        off = 4 + 32
        C = np.frombuffer(data, dtype="<f8", count=n * b, offset=off).reshape(n, b)
        off += 8 * n * b
        Wd = np.frombuffer(data, dtype="<f8", count=b * b, offset=off).reshape(b, b)
        off += 8 * b * b
        idx = np.frombuffer(data, dtype="<i8", count=b, offset=off).astype(np.intp)
        return factor_from_dense(C, Wd, LandmarkSet(idx, np.full(n, 1.0 / n), None if seed < 0 else seed))


def factor_from_dense(C: np.ndarray, Wdag: np.ndarray, landmarks: LandmarkSet) -> NystromFactor:
    """Rebuild a factor from explicit C and Wdag."""
    C = np.array(C, dtype=float)
    Wd = 0.5 * (np.array(Wdag, dtype=float) + np.array(Wdag, dtype=float).T)
    s, V = np.linalg.eigh(Wd)
    keep = s > Wd.shape[0] * np.finfo(float).eps * max(s.max(initial=0.0), 0.0)
    G = C @ (V[:, keep] * np.sqrt(s[keep]))
    f = NystromFactor(C.shape[0], landmarks, G, None, None, None, ("dense", Wd))
    f._C = C
    f._Wdag = Wd
    return f


def build_factor(A, S: LandmarkSet) -> NystromFactor:
    """C = A[:,S] and the thresholded pseudo-inverse of W = A[S,S].

    The threshold is tau = b * ulp * lambda_max(W).  When a Cholesky factor
    of the compact core certifies that every eigenvalue clears tau, the
    pseudo-inverse is the inverse and the eigendecomposition is skipped.
    """
    A = as_operator(A)
    idx = np.asarray(S.indices, dtype=np.intp)
    uniq, inv, counts = np.unique(idx, return_inverse=True, return_counts=True)
    b = len(idx)
    tau_rel = b * np.finfo(float).eps
    Cu = A.columns(uniq)
    dh = np.sqrt(counts.astype(float))
    M = A.submatrix(uniq, uniq) * dh[:, None] * dh[None, :]
    M = 0.5 * (M + M.T)
    Chat = Cu * dh
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info == 0 and _cond_ok(L, M, tau_rel):
        G = sla.solve_triangular(L, Chat.T, lower=True).T
        core = ("chol", L)
    else:
        s, V = np.linalg.eigh(M)
        smax = max(s[-1], 0.0)
        keep = s > tau_rel * smax if smax > 0 else np.zeros(len(s), dtype=bool)
        V, s = V[:, keep], s[keep]
        G = Chat @ (V / np.sqrt(s))
        core = ("eig", V, s)
    return NystromFactor(A.n, S, np.ascontiguousarray(G), uniq, inv, counts.astype(float), core, source=A)


def apply_factor(F: NystromFactor, v: np.ndarray) -> np.ndarray:
    """A_hat v = C (Wdag (C^T v)), evaluated through the compact factor G."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != F.n:
        raise DimensionMismatchError(f"expected length {F.n}, got {v.shape[0]}")
    return F.G @ (F.G.T @ v)


def check_operator_error(A, F: NystromFactor, cap: Optional[int] = None) -> float:
    """Spectral norm of A - A_hat from a dense eigensolve."""
    A = as_operator(A)
    _check_cap(A.n, cap)
    E = A.to_dense(cap) - F.materialize()
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (E + E.T)))))


def projection_oracle(A, S: LandmarkSet) -> np.ndarray:
    """A^{1/2} P A^{1/2} with P the orthogonal projector onto range(A^{1/2} S^T)."""
    A = as_operator(A)
    w, V = A.eigh()
    Ah = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    Y = Ah[:, np.asarray(S.indices)]
    U, sv, _ = np.linalg.svd(Y, full_matrices=False)
    keep = sv > max(Y.shape) * np.finfo(float).eps * (sv[0] if len(sv) else 0.0)
    P = U[:, keep] @ U[:, keep].T
    return Ah @ P @ Ah
