"""Preconditioned CG, Woodbury base solves and the recursive preconditioning ladder."""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as sla

from .block import BlockNystromOperator
from .errors import InnerSingularityError, InvalidSpecError, MaxIterationsError
from .nystrom import NystromFactor


@dataclass
class SolveReport:
    iterations_per_level: List[int] = field(default_factory=list)
    residual: float = 0.0
    wall_time: float = 0.0
    preprocessing_time: float = 0.0
    levels: List[dict] = field(default_factory=list)
    max_iterations_per_level: List[int] = field(default_factory=list)
    block_applies: int = 0
    converged: bool = True

    def to_json(self) -> dict:
        return {
            "levels": self.levels,
            "residual": self.residual,
            "wall_ms": 1e3 * self.wall_time,
            "prep_ms": 1e3 * self.preprocessing_time,
        }


def pcg_iteration_bound(kappa: float, eps: float) -> int:
    """ceil(4 sqrt(kappa) log(2/eps)), the PCG iteration budget."""
    return int(math.ceil(4.0 * math.sqrt(kappa) * math.log(2.0 / eps)))


def pcg(
    applyA: Callable,
    applyPrec: Callable,
    v,
    eps: float,
    kappa_bound: float,
    maxiter: Optional[int] = None,
    residual_tol: Optional[float] = None,
):
    """Flexible preconditioned conjugate gradient.

    Without ``residual_tol`` the loop stops once r^T z <= (eps^2/kappa) r0^T z0,
    which guarantees ||u - A^{-1}v||_A <= eps ||A^{-1}v||_A whenever the
    preconditioner's inverse B satisfies a A <= B <= kappa a A.  With
    ``residual_tol`` it stops on the true residual norm instead.  The
    Polak-Ribiere beta keeps the method stable for inexact (iterative)
    preconditioners.
    """
    t0 = time.perf_counter()
    v = np.asarray(v, dtype=float)
    bound = pcg_iteration_bound(kappa_bound, eps)
    maxiter = bound if maxiter is None else int(maxiter)
    vnorm = float(np.linalg.norm(v))
    x = np.zeros_like(v)
    if vnorm == 0.0:
        return x, SolveReport([0], 0.0, time.perf_counter() - t0)

    def done(r, rz):
        if residual_tol is not None:
            return np.linalg.norm(r) <= residual_tol
        return rz <= target

    r = v.copy()
    z = applyPrec(r)
    rz = float(r @ z)
    target = eps**2 / kappa_bound * rz
    p = z.copy()
    it = 0
    best, best_res = x.copy(), 1.0
    rising, last = 0, vnorm
    converged = done(r, rz)
    while not converged and it < maxiter:
        Ap = applyA(p)
        pAp = float(p @ Ap)
        if not pAp > 0:
            break
        a = rz / pAp
        x = x + a * p
        r_new = r - a * Ap
        it += 1
        rn = float(np.linalg.norm(r_new))
        if rn / vnorm < best_res:
            best, best_res = x.copy(), rn / vnorm
        z_new = applyPrec(r_new)
        rz_new = float(r_new @ z_new)
        if done(r_new, rz_new):
            if residual_tol is not None:
                # confirm against the true residual before returning
                r_true = v - applyA(x)
                if np.linalg.norm(r_true) <= residual_tol:
                    converged = True
                    r = r_true
                    break
                r = r_true
                z = applyPrec(r)
                rz = float(r @ z)
                p = z.copy()
                continue
            converged = True
            r = r_new
            break
        rising = rising + 1 if rn > last else 0
        last = rn
        if rising >= 5:
            p = z_new.copy()
            rising = 0
        else:
            beta = float(z_new @ (r_new - r)) / rz
            p = z_new + beta * p
        r, z, rz = r_new, z_new, rz_new
    res = float(np.linalg.norm(v - applyA(x))) / vnorm
    report = SolveReport([it], res, time.perf_counter() - t0, converged=converged)
    if not converged:
        raise MaxIterationsError(
            f"PCG stopped after {it} iterations (limit {maxiter}), residual {res:.3e}",
            best=best,
            residual=best_res,
        )
    return x, report


# --------------------------------------------------------------------------
# Woodbury


class WoodburySolver:
    """(G G^T + psi I)^{-1} through the r x r system G^T G + psi I.

    With G = C W^{+1/2} this is the identity
    (C W^+ C^T + psi I)^{-1} = (I - C (C^T C + psi W)^{-1} C^T) / psi
    restricted to the range of W.
    """

    def __init__(self, G: np.ndarray, psi: float):
        if not psi > 0:
            raise InvalidSpecError("psi must be positive")
        t0 = time.perf_counter()
        self.G = G
        self.psi = float(psi)
        r = G.shape[1]
        if r:
            K = G.T @ G
            K[np.diag_indices_from(K)] += psi
            try:
                self._chol = sla.cho_factor(K, lower=True)
            except np.linalg.LinAlgError as exc:
                raise InnerSingularityError("Woodbury inner system is singular") from exc
        else:
            self._chol = None
        self.prep_time = time.perf_counter() - t0

    def solve(self, v: np.ndarray) -> np.ndarray:
        if self._chol is None:
            return v / self.psi
        return (v - self.G @ sla.cho_solve(self._chol, self.G.T @ v)) / self.psi


_wb_lock = threading.Lock()


def _woodbury_for(F: NystromFactor, psi: float) -> WoodburySolver:
    with _wb_lock:
        cache = F.__dict__.setdefault("_woodbury", {})
        s = cache.get(psi)
        if s is None:
            s = cache[psi] = WoodburySolver(F.G, psi)
        return s


def woodbury_solve(F: NystromFactor, psi: float, v, eps: float = 1e-12) -> np.ndarray:
    """(A_hat + psi I)^{-1} v by a direct cached factorization; ``eps`` is met exactly."""
    return _woodbury_for(F, float(psi)).solve(np.asarray(v, dtype=float))


# --------------------------------------------------------------------------
# recursive ladder


@dataclass
class ScheduleConfig:
    c: float = 4.0
    theta: float = 0.5
    phi: float = 0.5
    lam_tilde: Optional[float] = None


@dataclass(frozen=True)
class SolverSchedule:
    c: float
    theta: float
    phi: float
    lam_tilde: float
    lam_prime: float
    depth: int
    levels: tuple  # ((q_j, reg_j), ...)

    @property
    def kappa_level(self) -> float:
        return self.c**2 * (1.0 + self.theta) ** 4

    @property
    def inner_eps(self) -> float:
        return 1.0 / (10.0 * self.kappa_level)

    def interior_bound(self) -> int:
        return pcg_iteration_bound(self.kappa_level, self.inner_eps)


def build_schedule(alpha: float, lam: float, lam_prime: float, cfg: Optional[ScheduleConfig] = None, q: Optional[int] = None) -> SolverSchedule:
    """Regularizer ladder reg_j = c^{2j} lam_tilde and block counts q_{j+1} = ceil(q_j / c).

    The ladder stops at the first level whose regularizer reaches lambda'.
    ``q`` is the top-level block count (defaults to ceil(alpha)).
    """
    cfg = cfg or ScheduleConfig()
    if not cfg.c > 1:
        raise InvalidSpecError("level ratio c must exceed 1")
    if not 0 < cfg.theta < 1 or not 0 < cfg.phi < 1:
        raise InvalidSpecError("theta and phi must lie in (0, 1)")
    if not lam_prime >= lam > 0:
        raise InvalidSpecError("need lambda' >= lambda > 0")
    lt = lam if cfg.lam_tilde is None else float(cfg.lam_tilde)
    ratio = math.log(math.sqrt(lam_prime / lt)) / math.log(cfg.c)
    k_raw = max(0, int(math.ceil(ratio - 1e-12)))
    qj = int(q) if q is not None else max(1, int(math.ceil(alpha)))
    levels = []
    for j in range(k_raw + 1):
        levels.append((qj, cfg.c ** (2 * j) * lt))
        qj = max(1, int(math.ceil(qj / cfg.c)))
    return SolverSchedule(cfg.c, cfg.theta, cfg.phi, lt, float(lam_prime), max(1, k_raw), tuple(levels))


def recursive_solve(
    B: BlockNystromOperator,
    v,
    eps: float,
    schedule: Optional[SolverSchedule] = None,
    inner_eps: Optional[float] = None,
    max_tighten: int = 3,
    top_maxiter: Optional[int] = None,
):
    """Solve (A_hat_[q] + lam I) u = v to ||u - u*|| <= eps ||v||.

    Level j runs PCG on M_j = A_hat_[q_j] + reg_j I (the first q_j blocks),
    preconditioned by an inexact level-(j+1) solve.  The last level is
    preconditioned by a Woodbury solve with block 1; a level with one block
    is solved directly.  The top level stops on ||r|| <= eps min(1, reg_0) ||v||,
    which bounds the Euclidean error because M_0 >= reg_0 I.
    """
    t0 = time.perf_counter()
    v = np.asarray(v, dtype=float)
    if schedule is None:
        schedule = build_schedule(B.alpha, B.lam, B.lam_prime, q=B.q)
    levels = [(min(qj, B.q), reg) for qj, reg in schedule.levels]
    levels[0] = (B.q, levels[0][1])
    kappa = schedule.kappa_level
    inner = schedule.inner_eps if inner_eps is None else float(inner_eps)
    F0 = B.blocks[0]
    last = len(levels) - 1
    prep0 = time.perf_counter()
    for qj, reg in levels:
        _woodbury_for(F0, reg)
    prep = time.perf_counter() - prep0

    vnorm = float(np.linalg.norm(v))
    reg0 = levels[0][1]
    tol_top = eps * min(1.0, reg0) * vnorm
    if top_maxiter is None:
        top_maxiter = 20 * pcg_iteration_bound(kappa, eps * min(1.0, reg0)) + 100

    for attempt in range(max_tighten + 1):
        iters = [0] * len(levels)
        maxit = [0] * len(levels)
        applies = [0]

        def make_op(qj, reg):
            def op(x):
                applies[0] += qj
                return B.apply(x, qj) + reg * x

            return op

        def solve_level(j, r, eps_j):
            qj, reg = levels[j]
            if qj == 1:
                applies[0] += 1
                return woodbury_solve(F0, reg, r)
            if j == last:
                wb = _woodbury_for(F0, reg)

                def prec(x):
                    applies[0] += 1
                    return wb.solve(x)

            else:

                def prec(x):
                    return solve_level(j + 1, x, inner)

            if j == 0:
                u, rep = pcg(make_op(qj, reg), prec, r, eps_j, kappa, maxiter=top_maxiter, residual_tol=tol_top)
            else:
                try:
                    u, rep = pcg(make_op(qj, reg), prec, r, eps_j, kappa)
                except MaxIterationsError as exc:
                    exc.level = j
                    raise
            iters[j] += rep.iterations_per_level[0]
            maxit[j] = max(maxit[j], rep.iterations_per_level[0])
            return u

        try:
            u = solve_level(0, v, eps)
            break
        except MaxIterationsError as exc:
            if exc.level is None:
                exc.level = 0
            if attempt == max_tighten:
                raise
            inner *= 0.5
    res_vec = B.apply(u) + B.lam * u - v
    report = SolveReport(
        iterations_per_level=iters,
        residual=float(np.linalg.norm(res_vec) / vnorm) if vnorm else 0.0,
        wall_time=time.perf_counter() - t0,
        preprocessing_time=prep,
        levels=[{"q": int(qj), "reg": float(reg), "iters": int(it)} for (qj, reg), it in zip(levels, iters)],
        max_iterations_per_level=maxit,
        block_applies=applies[0],
    )
    return u, report
