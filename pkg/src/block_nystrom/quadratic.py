"""Block-Nystrom preconditioned CG for quadratics with a spiked Hessian."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .block import BlockConfig, BlockNystromOperator, build_block_nystrom
from .errors import DimensionMismatchError, InvalidSpecError, NotStronglyConvexError
from .leverage import fast_rls_flat_tail
from .psd import DESK_CAP, PsdOperator, as_operator, gap_in_basis
from .solvers import SolveReport, build_schedule, pcg, recursive_solve


@dataclass
class QuadraticProblem:
    """g(x) = x^T A x / 2 - b^T x with A positive definite."""

    A: PsdOperator
    b: np.ndarray
    k: int
    true_min: Optional[float] = None

    def __post_init__(self):
        self.A = as_operator(self.A)
        self.b = np.asarray(self.b, dtype=float)
        if self.b.shape != (self.A.n,):
            raise DimensionMismatchError("b must have length n")
        if not 1 <= self.k < self.A.n:
            raise InvalidSpecError("need 1 <= k < n")

    def value(self, x) -> float:
        return float(0.5 * x @ self.A.matvec(x) - self.b @ x)


@dataclass
class QuadConfig:
    inner_eps: float = 1e-3
    kappa_bound: Optional[float] = None  # defaults to 64 sqrt(n/k)
    block: BlockConfig = field(default_factory=BlockConfig)
    maxiter: Optional[int] = None


def min_eigenvalue(A: PsdOperator, cap: int = DESK_CAP, lanczos_iters: int = 100) -> float:
    if A.n <= cap:
        return float(A.eigvals(cap)[0])
    op = LinearOperator((A.n, A.n), matvec=A.matvec, dtype=float)
    return float(eigsh(op, k=1, which="SA", maxiter=lanczos_iters, return_eigenvectors=False)[0])


def solve_quadratic(P: QuadraticProblem, eps: float, seed=0, cfg: Optional[QuadConfig] = None):
    """Minimize g to relative optimality gap eps, starting from x0 = 0.

    Steps: flat-tail leverage scores and lambda_bar; alpha = sqrt(n/k) and
    lambda = lambda_bar / alpha^2; build Block-Nystrom at (lambda, alpha); run
    PCG on A with a recursive solve of A_hat + lambda I as preconditioner.
    The optimality gap of g equals half the squared A-norm error, so PCG is
    asked for energy accuracy sqrt(eps).
    """
    cfg = cfg or QuadConfig()
    A, n, k = P.A, P.A.n, P.k
    t0 = time.perf_counter()
    if A.n <= DESK_CAP and min_eigenvalue(A) <= 0:
        raise NotStronglyConvexError("A is not positive definite")
    scores, lam_bar = fast_rls_flat_tail(A, k, seed=seed)
    alpha = math.sqrt(n / k)
    lam = lam_bar / alpha**2
    bcfg = BlockConfig(**{**cfg.block.__dict__, "scores": scores})
    B = build_block_nystrom(A, lam, alpha, bcfg, seed=seed)
    schedule = build_schedule(alpha, lam, B.lam_prime, q=B.q)
    prep = time.perf_counter() - t0
    kappa = cfg.kappa_bound if cfg.kappa_bound is not None else 64.0 * alpha
    inner_reports = []

    def prec(r):
        u, rep = recursive_solve(B, r, cfg.inner_eps, schedule)
        inner_reports.append(rep)
        return u

    x, rep = pcg(A.matvec, prec, P.b, math.sqrt(eps), kappa, maxiter=cfg.maxiter or 10 * n)
    report = SolveReport(
        iterations_per_level=[rep.iterations_per_level[0]],
        residual=rep.residual,
        wall_time=time.perf_counter() - t0,
        preprocessing_time=prep,
        levels=[{"q": B.q, "reg": lam, "iters": rep.iterations_per_level[0]}],
        block_applies=sum(r.block_applies for r in inner_reports),
    )
    report.outer_iters = rep.iterations_per_level[0]
    report.alpha = alpha
    report.k = k
    report.lam = lam
    report.lam_bar = lam_bar
    report.operator = B
    return x, report


def measured_condition(A, B: BlockNystromOperator, lam: Optional[float] = None) -> float:
    """gmax / gmin of A against the materialized A_hat + lam I."""
    A = as_operator(A)
    lam = B.lam if lam is None else lam
    Y = B.materialize()
    Y[np.diag_indices_from(Y)] += lam
    w, V = np.linalg.eigh(Y)
    return gap_in_basis(A.to_dense(), w, V).ratio
