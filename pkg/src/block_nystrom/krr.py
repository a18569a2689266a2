"""Kernel ridge regression with a Block-Nystrom kernel approximation."""

from __future__ import annotations

import csv
import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .block import BlockConfig, BlockNystromOperator, build_block_nystrom
from .errors import DimensionMismatchError, EmptyDatasetError, InvalidSpecError, KernelBoundError
from .nystrom import LandmarkSet, build_factor
from .psd import KernelOperator, dense_reg_solve
from .solvers import recursive_solve


@dataclass(frozen=True)
class Dataset:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatchError("points and labels differ in length")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidSpecError("dataset has non-finite entries")
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.points.shape[1]


class KernelSpec:
    """rbf(sigma), polynomial(degree, offset) or linear kernel with bound G.

    Calling the spec evaluates the cross-kernel matrix and adds the number of
    entries computed to ``evaluations``.
    """

    def __init__(self, kind: str = "rbf", sigma: float = 1.0, degree: int = 2, offset: float = 1.0, G: Optional[float] = None):
        if kind not in ("rbf", "polynomial", "linear"):
            raise InvalidSpecError(f"unknown kernel {kind!r}")
        if kind == "rbf" and not sigma > 0:
            raise InvalidSpecError("rbf bandwidth must be positive")
        self.kind = kind
        self.sigma = float(sigma)
        self.degree = int(degree)
        self.offset = float(offset)
        self.G = 1.0 if kind == "rbf" else G
        self.evaluations = 0
        self._lock = threading.Lock()

    def _count(self, k: int) -> None:
        with self._lock:
            self.evaluations += k

    def __call__(self, Xa, Xb) -> np.ndarray:
        Xa = np.atleast_2d(Xa)
        Xb = np.atleast_2d(Xb)
        self._count(Xa.shape[0] * Xb.shape[0])
        if self.kind == "rbf":
            return np.exp(-cdist(Xa, Xb, "sqeuclidean") / (2.0 * self.sigma**2))
        lin = Xa @ Xb.T
        if self.kind == "linear":
            return lin
        return (lin + self.offset) ** self.degree

    def diag(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        self._count(X.shape[0])
        if self.kind == "rbf":
            return np.ones(X.shape[0])
        sq = np.einsum("ij,ij->i", X, X)
        return sq if self.kind == "linear" else (sq + self.offset) ** self.degree

    def to_json(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "degree": self.degree, "offset": self.offset, "G": self.G}


def build_kernel(data: Dataset, spec: KernelSpec, cache_bytes: int = 256 * 2**20) -> KernelOperator:
    """Implicit kernel matrix; raises when a diagonal entry exceeds G^2."""
    K = KernelOperator(data.points, spec, cache_bytes=cache_bytes)
    diag = K.diagonal()
    if spec.G is None:
        spec.G = float(math.sqrt(max(diag.max(), 0.0)))
    if np.any(diag > spec.G**2 * (1.0 + 1e-10)):
        raise KernelBoundError(f"kernel diagonal {diag.max():.6g} exceeds G^2 = {spec.G ** 2:.6g}")
    return K


@dataclass
class KrrConfig:
    block: BlockConfig = field(default_factory=BlockConfig)
    eps_fit: float = 1e-10
    full_landmarks: bool = False


class KrrModel:
    """Predictor f(x) = (1/q) sum_i <u_i, k(X_{S_i}, x)>."""

    def __init__(self, spec: KernelSpec, landmark_points, u, Wdag, lam: float, alpha: float, z=None, operator=None):
        self.spec = spec
        self.landmark_points = landmark_points  # list of (b, d) arrays
        self.u = u  # list of length-b vectors
        self._Wdag = Wdag
        self.lam = lam
        self.alpha = alpha
        self.z = z
        self.operator = operator

    @property
    def q(self) -> int:
        return len(self.u)

    @property
    def b(self) -> int:
        return len(self.u[0])

    @property
    def Wdag(self):
        return [w() if callable(w) else w for w in self._Wdag]

    def predict_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.landmark_points[0].shape[1]:
            raise DimensionMismatchError("query dimension differs from training data")
        out = np.zeros(X.shape[0])
        for P, u in zip(self.landmark_points, self.u):
            out += self.spec(X, P) @ u
        return out / self.q


def predict(model: KrrModel, x) -> float:
    """One prediction using exactly q*b kernel evaluations."""
    x = np.asarray(x, dtype=float).ravel()
    return float(model.predict_many(x[None, :])[0])


def fit_block_krr(data: Dataset, spec: KernelSpec, lam: float, alpha: float, cfg: Optional[KrrConfig] = None, seed=0) -> KrrModel:
    """Fit z = (K_hat + n lam I)^{-1} y and precompute u_i = Wdag_i (S_i K) z.

    ``lam`` is on the statistical scale; the matrix regularizer is n * lam.
    """
    if not lam > 0:
        raise InvalidSpecError("lambda must be positive")
    if not alpha >= 1:
        raise InvalidSpecError("alpha must be at least 1")
    cfg = cfg or KrrConfig()
    K = build_kernel(data, spec)
    reg = data.n * lam
    if cfg.full_landmarks:
        F = build_factor(K, LandmarkSet.full(data.n))
        B = BlockNystromOperator([F], reg, 1.0, seed)
    else:
        B = build_block_nystrom(K, reg, alpha, cfg.block, seed=seed)
    z, _ = recursive_solve(B, data.labels, cfg.eps_fit)
    landmark_points = [data.points[f.landmarks.indices] for f in B.blocks]
    u = [f.coefficients(z) for f in B.blocks]
    Wdag = [(lambda f=f: f.Wdag) for f in B.blocks]
    return KrrModel(spec, landmark_points, u, Wdag, lam, alpha, z=z, operator=B)


def exact_krr_predictions(data: Dataset, spec: KernelSpec, lam: float, X) -> np.ndarray:
    """Dense oracle: k(X, X_train) (K + n lam I)^{-1} y."""
    K = spec(data.points, data.points)
    z = dense_reg_solve(0.5 * (K + K.T), data.n * lam, data.labels)
    return spec(np.atleast_2d(X), data.points) @ z


def empirical_risk(model, eval_data: Dataset) -> float:
    """Mean squared prediction error; ``model`` may also be a callable on arrays."""
    if eval_data.n == 0:
        raise EmptyDatasetError("evaluation set is empty")
    f = model.predict_many if isinstance(model, KrrModel) else model
    r = f(eval_data.points) - eval_data.labels
    return float(np.mean(r**2))


@dataclass(frozen=True)
class RegularizerSchedule:
    zeta: float
    gamma: float
    n: int
    lam_star: float


def schedule_lambda(zeta: float, gamma: float, n: int, const: float = 1.0) -> RegularizerSchedule:
    """lam* = const n^{-1/(2 zeta + gamma)} if 2 zeta + gamma > 1, else const / n."""
    if not 0 < gamma <= 1:
        raise InvalidSpecError("gamma must lie in (0, 1]")
    if not zeta > 0:
        raise InvalidSpecError("zeta must be positive")
    if zeta >= 0.5:
        warnings.warn("zeta >= 1/2 is outside the unattainable regime", stacklevel=2)
    if n < 1:
        raise InvalidSpecError("n must be positive")
    e = 2 * zeta + gamma
    lam = const * n ** (-1.0 / e) if e > 1 else const / n
    return RegularizerSchedule(float(zeta), float(gamma), int(n), float(lam))


# --------------------------------------------------------------------------
# synthetic data


def make_unattainable(
    n: int,
    zeta: float = 0.25,
    d: int = 3,
    sigma: float = 1.0,
    noise: float = 0.1,
    n_ref: int = 400,
    n_terms: int = 100,
    seed=0,
) -> Dataset:
    """Labels from f = sum_j mu_j^zeta g_j phi_j plus Gaussian noise.

    phi_j are Nystrom-extended eigenfunctions of the RBF kernel on a fixed
    reference sample and mu_j the matching empirical operator eigenvalues;
    the reference sample and coefficients depend on ``seed`` only, so train
    and test sets drawn with different ``sample_seed`` share the target.
    """
    return make_unattainable_split(n, 0, zeta, d, sigma, noise, n_ref, n_terms, seed)[0]


def make_unattainable_split(n_train, n_test, zeta=0.25, d=3, sigma=1.0, noise=0.1, n_ref=400, n_terms=100, seed=0):
    rng = np.random.default_rng(seed)
    spec = KernelSpec("rbf", sigma=sigma)
    Xref = rng.standard_normal((n_ref, d))
    Kref = spec(Xref, Xref)
    s, U = np.linalg.eigh(0.5 * (Kref + Kref.T))
    s, U = s[::-1][:n_terms], U[:, ::-1][:, :n_terms]
    keep = s > 1e-10 * s[0]
    s, U = s[keep], U[:, keep]
    mu = s / n_ref
    g = rng.standard_normal(len(s))
    g /= np.linalg.norm(g)
    # phi_j(x) = sqrt(n_ref) / s_j sum_i U_ij k(x_i, x), unit norm under the sample measure
    coef = U @ (mu**zeta * g * math.sqrt(n_ref) / s)

    def draw(m):
        X = rng.standard_normal((m, d))
        f = spec(X, Xref) @ coef
        return Dataset(X, f + noise * rng.standard_normal(m))

    train = draw(n_train)
    test = draw(n_test) if n_test else None
    return train, test


def make_attainable(n: int, d: int = 3, sigma: float = 1.0, noise: float = 0.1, seed=0) -> Dataset:
    """y = K w_bar + noise for a random coefficient vector w_bar."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    K = KernelSpec("rbf", sigma=sigma)(X, X)
    w = rng.standard_normal(n) / n
    return Dataset(X, K @ w + noise * rng.standard_normal(n))


# --------------------------------------------------------------------------
# CSV I/O


def read_dataset_csv(path) -> Dataset:
    """Last column is the label; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptyDatasetError(f"{path} is empty")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    if not rows:
        raise EmptyDatasetError(f"{path} has no data rows")
    arr = np.array(rows, dtype=float)
    return Dataset(arr[:, :-1], arr[:, -1])


def write_dataset_csv(path, data: Dataset, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j}" for j in range(data.d)] + ["y"])
        for x, y in zip(data.points, data.labels):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def write_predictions_csv(path, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])
