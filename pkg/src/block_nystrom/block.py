"""Block-Nystrom operator: an average of q independent Nystrom factors."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg as sla

from .errors import BudgetExceededError, DimensionMismatchError, InvalidSpecError
from .leverage import RidgeScores, approx_rls_recursive, exact_rls, fast_rls_flat_tail
from .nystrom import NystromFactor, build_factor, sample_landmarks
from .psd import DESK_CAP, LoewnerGap, PsdOperator, _check_cap, as_operator, gap_in_basis

_MAGIC = b"BNYO"


@dataclass
class BlockConfig:
    """Build knobs.  ``q`` and ``b`` override the size rules when set."""

    c_b: float = 2.0
    c_q: float = 1.0
    q: Optional[int] = None
    b: Optional[int] = None
    rls: str = "auto"  # auto | exact | recursive | flat-tail
    scores: Optional[RidgeScores] = None
    flat_tail_k: Optional[int] = None
    oversample: float = 2.0
    max_landmarks: Optional[int] = None
    cap: int = DESK_CAP


def block_sizes(n: int, d: float, alpha: float, cfg: BlockConfig):
    logn = math.log(n) if n > 1 else 1.0
    b = cfg.b if cfg.b is not None else max(1, math.ceil(cfg.c_b * d * logn))
    q = cfg.q if cfg.q is not None else max(1, math.ceil(cfg.c_q * alpha * logn))
    return int(q), int(b)


class BlockNystromOperator:
    """A_hat_[q] = (1/q) sum_i C_i W_i^+ C_i^T.

    All block factors share one n x sum(rank_i) array ``G`` so that applying
    any prefix of the blocks is a pair of matrix products.
    """

    def __init__(self, blocks: List[NystromFactor], lam: float, alpha: float, seed=None, scores=None):
        if not blocks:
            raise InvalidSpecError("need at least one block")
        self.n = blocks[0].n
        self.lam = float(lam)
        self.alpha = float(alpha)
        self.lam_prime = self.alpha**2 * self.lam
        self.seed = seed
        self.scores = scores
        ranks = [f.rank for f in blocks]
        self._offsets = np.concatenate([[0], np.cumsum(ranks)]).astype(int)
        G = np.empty((self.n, self._offsets[-1]))
        for f, a, e in zip(blocks, self._offsets[:-1], self._offsets[1:]):
            G[:, a:e] = f.G
            f.G = G[:, a:e]
        self._G = G
        self.blocks = blocks

    @property
    def q(self) -> int:
        return len(self.blocks)

    @property
    def b(self) -> int:
        return self.blocks[0].b

    @property
    def m(self) -> int:
        return sum(f.b for f in self.blocks)

    @property
    def rank_total(self) -> int:
        return int(self._offsets[-1])

    def _prefix(self, qj: Optional[int]):
        qj = self.q if qj is None else int(qj)
        if not 1 <= qj <= self.q:
            raise InvalidSpecError(f"prefix size {qj} outside [1, {self.q}]")
        return qj, self._G[:, : self._offsets[qj]]

    def apply(self, v: np.ndarray, qj: Optional[int] = None) -> np.ndarray:
        """Average of the first ``qj`` block factors applied to v."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise DimensionMismatchError(f"expected length {self.n}, got {v.shape[0]}")
        qj, G = self._prefix(qj)
        return G @ (G.T @ v) / qj

    def materialize(self, qj: Optional[int] = None) -> np.ndarray:
        qj, G = self._prefix(qj)
        return G @ G.T / qj

    def materialize_blockdiag(self) -> np.ndarray:
        """C (q blockdiag(W_i))^+ C^T from the explicit C_i and W_i^+."""
        C = np.hstack([f.C for f in self.blocks])
        Wp = sla.block_diag(*[f.Wdag for f in self.blocks]) / self.q
        return C @ Wp @ C.T

    def header(self) -> dict:
        return {
            "n": self.n,
            "q": self.q,
            "b": self.b,
            "lambda": self.lam,
            "alpha": self.alpha,
            "lambda_prime": self.lam_prime,
            "seed": self.seed,
        }

    def to_bytes(self) -> bytes:
        blobs = [f.to_bytes() for f in self.blocks]
        head = dict(self.header(), blob_sizes=[len(x) for x in blobs])
        hj = json.dumps(head, sort_keys=True).encode()
        return _MAGIC + struct.pack("<Q", len(hj)) + hj + b"".join(blobs)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BlockNystromOperator":
        if data[:4] != _MAGIC:
            raise InvalidSpecError("not a Block-Nystrom container")
        (hl,) = struct.unpack_from("<Q", data, 4)
        head = json.loads(data[12 : 12 + hl])
        off = 12 + hl
        blocks = []
        for size in head["blob_sizes"]:
            blocks.append(NystromFactor.from_bytes(data[off : off + size]))
            off += size
        return cls(blocks, head["lambda"], head["alpha"], head["seed"])


def _scores_for(A: PsdOperator, lam_prime: float, cfg: BlockConfig, seed) -> RidgeScores:
    if cfg.scores is not None:
        return cfg.scores
    method = cfg.rls
    if method == "auto":
        method = "exact" if A.n <= cfg.cap else "recursive"
    if method == "exact":
        return exact_rls(A, lam_prime, cap=cfg.cap)
    if method == "recursive":
        return approx_rls_recursive(A, lam_prime, oversample=cfg.oversample, seed=seed)
    if method == "flat-tail":
        if cfg.flat_tail_k is None:
            raise InvalidSpecError("flat-tail scores need cfg.flat_tail_k")
        return fast_rls_flat_tail(A, cfg.flat_tail_k, seed=seed, cap=cfg.cap)[0]
    raise InvalidSpecError(f"unknown leverage method {method!r}")


def build_block_nystrom(A, lam: float, alpha: float, cfg: Optional[BlockConfig] = None, seed=0) -> BlockNystromOperator:
    """Sample q blocks of b landmarks from lambda'-ridge leverage scores.

    lambda' = alpha^2 lambda; b = ceil(c_b d_lambda' log n) and
    q = ceil(c_q alpha log n) unless fixed in ``cfg``.  Block i uses sub-seed
    seed + i + 1.
    """
    if not lam > 0:
        raise InvalidSpecError("lambda must be positive")
    if not alpha >= 1:
        raise InvalidSpecError("alpha must be at least 1")
    cfg = cfg or BlockConfig()
    A = as_operator(A)
    lam_prime = alpha**2 * lam
    scores = _scores_for(A, lam_prime, cfg, seed)
    q, b = block_sizes(A.n, scores.effective_dim, alpha, cfg)
    if cfg.max_landmarks is not None and q * b > cfg.max_landmarks:
        raise BudgetExceededError(f"m = {q}*{b} exceeds max_landmarks={cfg.max_landmarks}")
    blocks = [build_factor(A, sample_landmarks(scores, b, seed + i + 1)) for i in range(q)]
    return BlockNystromOperator(blocks, lam, alpha, seed, scores)


def approximation_gap(A, B: BlockNystromOperator, lam: Optional[float] = None, cap: Optional[int] = None) -> LoewnerGap:
    """Loewner gap of A_hat + lam I against A + lam I (lam defaults to B.lam)."""
    A = as_operator(A)
    _check_cap(A.n, cap)
    lam = B.lam if lam is None else lam
    w, V = A.eigh(cap)
    X = B.materialize()
    X[np.diag_indices_from(X)] += lam
    return gap_in_basis(X, np.clip(w, 0.0, None) + lam, V)


def verify_approximation(A, B: BlockNystromOperator, cap: Optional[int] = None):
    """(alpha_measured, upper_ok) for the sandwich around A + lambda I."""
    g = approximation_gap(A, B, cap=cap)
    return 1.0 / g.gmin, bool(g.gmax <= 1.0 + 1e-7)


def mean_projection(A, lam_prime: float, b: int, trials: int, seed=0, scores=None) -> np.ndarray:
    """Monte Carlo mean of A^{1/2} S^T (S A S^T)^+ S A^{1/2} over i.i.d. landmark draws."""
    A = as_operator(A)
    w, V = A.eigh()
    Ah = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    if scores is None:
        scores = exact_rls(A, lam_prime)
    rng = np.random.default_rng(seed)
    acc = np.zeros((A.n, A.n))
    for t in range(trials):
        S = sample_landmarks(scores, b, rng.integers(2**63))
        Y = Ah[:, np.unique(S.indices)]
        U, sv, _ = np.linalg.svd(Y, full_matrices=False)
        keep = sv > max(Y.shape) * np.finfo(float).eps * sv[0] if len(sv) else []
        acc += U[:, keep] @ U[:, keep].T
    return acc / trials


def estimate_expected_projection(A, lam_prime: float, b: int, trials: int, seed=0, scores=None) -> LoewnerGap:
    """Gap of the mean landmark projection against A (A + lambda' I)^{-1}."""
    if trials < 50:
        raise InvalidSpecError("need at least 50 trials")
    A = as_operator(A)
    P = mean_projection(A, lam_prime, b, trials, seed, scores)
    w, V = A.eigh()
    w = np.clip(w, 0.0, None)
    return gap_in_basis(P, w / (w + lam_prime), V)
