"""Ridge leverage scores: exact oracle, recursive halving and flat-tail sketch."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import EmbeddingFailureError, InvalidSpecError, NonPositiveRegularizerError
from .psd import DESK_CAP, LoewnerGap, PsdOperator, as_operator, gap_in_basis


@dataclass(frozen=True)
class RidgeScores:
    lam: float
    scores: np.ndarray
    approx_factor: float = 1.0
    method: str = "exact"

    @property
    def effective_dim(self) -> float:
        return float(np.sum(self.scores))

    @property
    def n(self) -> int:
        return len(self.scores)

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "method": self.method,
            "approx_factor": self.approx_factor,
            "scores": [float(s) for s in self.scores],
            "effective_dim": self.effective_dim,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "score"])
            for i, s in enumerate(self.scores):
                w.writerow([i, repr(float(s))])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def _check_lam(lam: float) -> None:
    if not lam > 0:
        raise NonPositiveRegularizerError(f"lambda must be positive, got {lam}")


def exact_rls(A, lam: float, cap: Optional[int] = None) -> RidgeScores:
    """diag(A (A + lam I)^{-1}) from the dense eigendecomposition."""
    _check_lam(lam)
    A = as_operator(A)
    w, V = A.eigh(cap)
    w = np.clip(w, 0.0, None)
    scores = (V**2) @ (w / (w + lam))
    return RidgeScores(float(lam), scores, 1.0, "exact")


def effective_dim(A, lam: float, cap: Optional[int] = None) -> float:
    _check_lam(lam)
    w = np.clip(as_operator(A).eigvals(cap), 0.0, None)
    return float(np.sum(w / (w + lam)))


# --------------------------------------------------------------------------
# recursive halving


def _ridge_estimate(A: PsdOperator, idx, S, weights, lam, diag):
    """Scores of columns ``idx`` against the weighted landmark sketch ``S``.

    l_i = (A_ii - A_iS (A_SS + lam W^{-1})^{-1} A_Si) / lam, the ridge
    leverage of column i relative to the reweighted subsample.
    """
    if len(S) == 0:
        return np.minimum(diag[idx] / lam, 1.0)
    C = A.submatrix(idx, S)
    K = A.submatrix(S, S) + lam * np.diag(1.0 / weights)
    L = sla.cho_factor(0.5 * (K + K.T), lower=True)
    quad = np.einsum("ij,ji->i", C, sla.cho_solve(L, C.T))
    return (diag[idx] - quad) / lam


def approx_rls_recursive(
    A,
    lam: float,
    oversample: float = 2.0,
    seed=0,
    base: int = 64,
    declared_factor: float = 3.0,
) -> RidgeScores:
    """Ridge leverage scores by uniform halving.

    Estimate scores on a random half, sample a weighted landmark set from
    them with about ``oversample * d * log n`` expected columns, and score
    every column against that set.  Subproblems of size <= ``base`` are
    solved exactly.
    """
    _check_lam(lam)
    if oversample < 1:
        raise InvalidSpecError("oversample must be >= 1")
    A = as_operator(A)
    rng = np.random.default_rng(seed)
    diag = A.diagonal()
    base = max(int(base), 2)

    def recurse(idx):
        if len(idx) <= base:
            K = A.submatrix(idx, idx)
            w, V = np.linalg.eigh(0.5 * (K + K.T))
            w = np.clip(w, 0.0, None)
            return (V**2) @ (w / (w + lam))
        half = np.sort(rng.choice(idx, size=len(idx) // 2, replace=False))
        sub = recurse(half)
        sub = np.clip(sub, 1e-12, 1.0)
        d = float(sub.sum())
        s = max(1.0, oversample * d * math.log(len(idx)))
        p = np.minimum(1.0, s * sub / d)
        keep = rng.random(len(half)) < p
        # the half only carries half of the mass of idx, hence the factor
        scale = len(idx) / len(half)
        return _ridge_estimate(A, idx, half[keep], scale / p[keep], lam, diag)

    idx = np.arange(A.n)
    scores = np.clip(recurse(idx), 1e-12, 1.0)
    return RidgeScores(float(lam), scores, float(declared_factor), "recursive")


# --------------------------------------------------------------------------
# flat-tail sketch pipeline


def count_sketch(rows: int, n: int, rng) -> sp.csr_matrix:
    """Sparse embedding with one random sign per column."""
    h = rng.integers(0, rows, size=n)
    s = rng.choice([-1.0, 1.0], size=n)
    return sp.csr_matrix((s, (h, np.arange(n))), shape=(rows, n))


def tail_moments(A: PsdOperator, k: int, cap: Optional[int] = None, probes: int = 64, seed=0):
    """(lam_bar, lam_tilde): tail mean of eigenvalues and of their squares, over k.

    Exact below the desk cap.  Above it, tr(A) comes from the diagonal, the
    top-k eigenpairs from Lanczos and the tail of tr(A^2) from a Hutchinson
    estimate on the deflated operator.
    """
    cap = DESK_CAP if cap is None else cap
    if A.n <= cap:
        w = np.sort(np.clip(A.eigvals(cap), 0.0, None))[::-1]
        tail = w[k:]
        return float(tail.sum() / k), float((tail**2).sum() / k)
    op = LinearOperator((A.n, A.n), matvec=A.matvec, matmat=A.matvec, dtype=float)
    top, U = eigsh(op, k=k, which="LA")
    rng = np.random.default_rng(seed)
    Z = rng.choice([-1.0, 1.0], size=(A.n, probes))
    # Hutchinson on the deflated tail P A P with P = I - U U^T
    Z -= U @ (U.T @ Z)
    AZ = A.matvec(Z)
    AZ -= U @ (U.T @ AZ)
    lam_tilde = float(np.sum(AZ**2) / probes) / k
    lam_bar = max(float(A.diagonal().sum()) - top.sum(), 0.0) / k
    return lam_bar, lam_tilde


def _pcg_small(M: np.ndarray, lam: float, rhs: np.ndarray, chol, tol: float = 1e-13, maxiter: int = 500):
    """Block PCG on (M M^T + lam I) X = rhs with a Cholesky preconditioner."""

    def op(X):
        return M @ (M.T @ X) + lam * X

    X = np.zeros_like(rhs)
    R = rhs.copy()
    Z = sla.cho_solve(chol, R)
    P = Z.copy()
    rz = np.sum(R * Z, axis=0)
    nrm = np.linalg.norm(rhs, axis=0)
    nrm[nrm == 0] = 1.0
    for _ in range(maxiter):
        if np.all(np.linalg.norm(R, axis=0) <= tol * nrm):
            break
        AP = op(P)
        denom = np.sum(P * AP, axis=0)
        denom[denom == 0] = 1.0
        a = rz / denom
        X += P * a
        R -= AP * a
        Z = sla.cho_solve(chol, R)
        rz_new = np.sum(R * Z, axis=0)
        rz_safe = np.where(rz == 0, 1.0, rz)
        P = Z + P * (rz_new / rz_safe)
        rz = rz_new
    return X


def fast_rls_flat_tail(
    A,
    k: int,
    seed=0,
    c_pi: float = 8.0,
    c_jl: float = 4.0,
    c_pre: float = 4.0,
    declared_factor: float = 8.0,
    cap: Optional[int] = None,
    probes: int = 64,
    retries: int = 3,
):
    """Flat-tail ridge leverage estimates via a sketch of A^2.

    Returns ``(scores, lam_bar)`` where the scores approximate
    ell_i(A^2, lam_tilde), which dominate ell_i(A, lam_bar) up to a constant
    when only k eigenvalues stand out of a flat tail.
    """
    A = as_operator(A)
    n = A.n
    if not 1 <= k < n:
        raise InvalidSpecError(f"need 1 <= k < n, got k={k}")
    lam_bar, lam_tilde = tail_moments(A, k, cap=cap, probes=probes, seed=seed)
    if not lam_tilde > 0:
        raise InvalidSpecError("tail of the spectrum is zero; flat-tail scores are undefined")

    m1 = int(math.ceil(c_pi * k))
    r = int(c_jl * math.ceil(math.log2(max(n, 2))))
    for attempt in range(retries + 1):
        rng = np.random.default_rng([int(seed), attempt])
        Pi = count_sketch(m1, n, rng)
        M = np.ascontiguousarray(A.matvec(Pi.T.toarray()).T)  # Pi A, using symmetry
        S2 = count_sketch(int(math.ceil(c_pre * m1)), n, rng)
        Mt = (S2 @ M.T).T
        P = Mt @ Mt.T + lam_tilde * np.eye(m1)
        try:
            chol = sla.cho_factor(P, lower=True)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(chol[0])):
            continue
        break
    else:
        raise EmbeddingFailureError("sketched preconditioner singular after retries")

    S = rng.standard_normal((r, m1 + n)) / math.sqrt(r)
    SB = S[:, :m1] @ M + math.sqrt(lam_tilde) * S[:, m1:]  # r x n
    # (M^T M + lt I)^{-1} x = (x - M^T (M M^T + lt I)^{-1} M x) / lt
    Y = _pcg_small(M, lam_tilde, M @ SB.T, chol)
    Rt = (SB.T - M.T @ Y) / lam_tilde  # n x r, equals R^T
    RA = A.matvec(Rt).T  # (R A) via symmetry of A
    scores = np.sum(RA**2, axis=0)
    return RidgeScores(float(lam_bar), scores, float(declared_factor), "flat-tail"), float(lam_bar)


def flat_tail_chain_gap(A, k: int, cap: Optional[int] = None) -> LoewnerGap:
    """Loewner gap of kbar(A^2) A^2 (A^2 + lt I)^{-1} against kbar(A) A (A + lb I)^{-1}.

    kbar_k(M) is the mean tail eigenvalue of M divided by its smallest one.
    A gap with gmin >= 1 certifies the flat-tail domination chain.
    """
    A = as_operator(A)
    w, V = A.eigh(cap)
    ws = np.sort(np.clip(w, 0.0, None))[::-1]
    lb = ws[k:].sum() / k
    lt = (ws[k:] ** 2).sum() / k
    lmin = ws[-1]
    kA = ws[k:].mean() / lmin
    kA2 = (ws[k:] ** 2).mean() / lmin**2
    wc = np.clip(w, 0.0, None)
    X = (V * (kA2 * wc**2 / (wc**2 + lt))) @ V.T
    return gap_in_basis(X, kA * wc / (wc + lb), V)
