"""Command-line front end.

Every command prints (or writes to ``--out``) a JSON run report with a
config echo, metrics, per-trial records, pass/fail checks and a separate
``timing`` section.  The process exits with 0 iff every check passed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional

import numpy as np

from . import block as blk
from . import krr as krr_mod
from . import leverage as lev
from . import nystrom as nys
from . import psd
from . import quadratic as quad
from . import solvers
from .errors import BlockNystromError, InvalidSpecError

DEFAULTS = {
    "seed": 0,
    "out": None,
    "format": None,
    "threads": 1,
    "trials": 10,
    "kind": "poly",
    "n": 256,
    "k": 10,
    "head": 100.0,
    "gamma": 1.0,
    "zeta": 0.25,
    "d": 3,
    "sigma": 1.0,
    "noise": 0.1,
    "values": None,
    "matrix": None,
    "vector": None,
    "data": None,
    "test_data": None,
    "lam": None,
    "lam_index": 50,
    "alpha": 2.0,
    "q": None,
    "b": None,
    "eps": 1e-8,
    "theta": 0.5,
    "phi": 0.5,
    "c": 4.0,
    "method": "exact",
    "claim": "sandwich",
    "full": False,
    "save": None,
    "sweep": "apply",
    "n_test": None,
}

MODULE_OF = {
    "gen": "psd-core",
    "rls": "leverage",
    "nystrom": "nystrom",
    "block": "block-nystrom",
    "verify": "block-nystrom",
    "solve": "solvers",
    "quad": "quadratic-precond",
    "krr": "krr",
    "bench": "bench-cli",
}


class Report:
    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.metrics: Dict[str, object] = {}
        self.checks: List[dict] = []
        self.trials: List[dict] = []
        self.timing: Dict[str, float] = {}

    def check(self, name: str, value, bound, op: str = "<=") -> bool:
        ops = {"<=": lambda a, b: a <= b, ">=": lambda a, b: a >= b, "==": lambda a, b: a == b}
        ok = bool(ops[op](value, bound))
        self.checks.append({"name": name, "value": _plain(value), "bound": _plain(bound), "op": op, "pass": ok})
        return ok

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "config": {k: _plain(v) for k, v in sorted(self.cfg.items())},
            "metrics": {k: _plain(v) for k, v in sorted(self.metrics.items())},
            "checks": self.checks,
            "trials": sorted(self.trials, key=lambda t: t.get("trial", 0)),
            "passed": self.passed,
            "timing": self.timing,
        }


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _timed(report: Report, key: str, fn: Callable, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    report.timing[key] = report.timing.get(key, 0.0) + time.perf_counter() - t0
    return out


def _run_trials(cfg: dict, fn: Callable[[int], dict]) -> List[dict]:
    seeds = [cfg["seed"] + t for t in range(cfg["trials"])]
    with ThreadPoolExecutor(max_workers=max(1, cfg["threads"])) as ex:
        recs = list(ex.map(fn, seeds))
    for t, r in enumerate(recs):
        r["trial"] = t
    return recs


def _threshold(trials: int) -> int:
    return int(math.ceil(0.9 * trials))


# --------------------------------------------------------------------------
# input helpers


def _spectrum(cfg: dict, seed: int) -> psd.SpectrumSpec:
    kind = cfg["kind"]
    if kind == "poly":
        return psd.SpectrumSpec("poly", gamma=cfg["gamma"], seed=seed)
    if kind == "spiked":
        return psd.SpectrumSpec("spiked", k=cfg["k"], head=cfg["head"], seed=seed)
    if kind == "explicit":
        if not cfg["values"]:
            raise InvalidSpecError("--values is required for explicit spectra")
        vals = tuple(float(x) for x in str(cfg["values"]).split(","))
        return psd.SpectrumSpec("explicit", values=vals, seed=seed)
    raise InvalidSpecError(f"unknown matrix kind {kind!r}")


def _matrix(cfg: dict, seed: int) -> psd.PsdOperator:
    if cfg["matrix"]:
        return psd.read_matrix_market(cfg["matrix"])
    spec = _spectrum(cfg, seed)
    n = len(spec.values) if spec.kind == "explicit" else cfg["n"]
    return psd.gen_psd(spec, n)


def _lam(cfg: dict, A: psd.PsdOperator) -> float:
    if cfg["lam"] is not None:
        return float(cfg["lam"])
    w = np.sort(A.eigvals())[::-1]
    i = min(max(int(cfg["lam_index"]), 1), A.n)
    return float(w[i - 1])


def _write(cfg: dict, payload: str) -> None:
    if cfg["out"]:
        with open(cfg["out"], "w") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)


# --------------------------------------------------------------------------
# commands


def cmd_gen(cfg: dict, report: Report) -> None:
    out = cfg["out"] or ("data.csv" if cfg["kind"] == "krr" else "matrix.mtx")
    if cfg["kind"] == "krr":
        data = krr_mod.make_unattainable(cfg["n"], zeta=cfg["zeta"], d=cfg["d"], sigma=cfg["sigma"], noise=cfg["noise"], seed=cfg["seed"])
        krr_mod.write_dataset_csv(out, data)
        report.metrics.update(rows=data.n, columns=data.d + 1)
    else:
        A = _matrix(dict(cfg, matrix=None), cfg["seed"])
        psd.write_matrix_market(out, A)
        w = A.eigvals()
        report.metrics.update(n=A.n, lambda_max=float(w[-1]), lambda_min=float(w[0]))
        if cfg["kind"] == "spiked":
            head = int(np.sum(w > 2 * w[0]))
            report.metrics["head_count"] = head
            report.check("head_count", head, cfg["k"], "==")
    report.metrics["path"] = out
    cfg["_report_to_stdout"] = True


def cmd_rls(cfg: dict, report: Report) -> None:
    A = _matrix(cfg, cfg["seed"])
    method = cfg["method"]
    if method == "flat-tail":
        sc, lam = _timed(report, "rls", lev.fast_rls_flat_tail, A, cfg["k"], seed=cfg["seed"])
    else:
        lam = _lam(cfg, A)
        if method == "exact":
            sc = _timed(report, "rls", lev.exact_rls, A, lam)
        elif method == "recursive":
            sc = _timed(report, "rls", lev.approx_rls_recursive, A, lam, seed=cfg["seed"])
        else:
            raise InvalidSpecError(f"unknown method {method!r}")
    report.metrics.update(effective_dim=sc.effective_dim, lam=lam, method=sc.method, approx_factor=sc.approx_factor)
    if method != "exact" and A.n <= psd.DESK_CAP:
        ex = lev.exact_rls(A, lam)
        ratio = float(np.min(sc.scores / ex.scores))
        report.check("min_score_ratio", ratio, 1.0 / sc.approx_factor, ">=")
        if method == "recursive":
            report.check("sum_over_d", sc.effective_dim / ex.effective_dim, 3.0)
        else:
            report.check("sum_scores", sc.effective_dim, 6 * cfg["k"])
    if cfg["out"]:
        if (cfg["format"] or "csv") == "json":
            sc.write_json(cfg["out"])
        else:
            sc.write_csv(cfg["out"])
    cfg["_report_to_stdout"] = True


def cmd_nystrom(cfg: dict, report: Report) -> None:
    A = _matrix(cfg, cfg["seed"])
    lam = _lam(cfg, A)
    sc = lev.exact_rls(A, lam)
    b = cfg["b"] or int(math.ceil(2 * sc.effective_dim * math.log(A.n)))
    S = nys.LandmarkSet.full(A.n) if cfg["full"] else nys.sample_landmarks(sc, b, cfg["seed"])
    F = _timed(report, "build", nys.build_factor, A, S)
    err = nys.check_operator_error(A, F)
    report.metrics.update(b=F.b, rank=F.rank, lam=lam, operator_error=err)
    report.check("operator_error", err, lam)
    if cfg["save"]:
        with open(cfg["save"], "wb") as fh:
            fh.write(F.to_bytes())


def _block_cfg(cfg: dict) -> blk.BlockConfig:
    return blk.BlockConfig(q=cfg["q"], b=cfg["b"])


def cmd_block(cfg: dict, report: Report) -> None:
    A = _matrix(cfg, cfg["seed"])
    lam = _lam(cfg, A)
    B = _timed(report, "build", blk.build_block_nystrom, A, lam, cfg["alpha"], _block_cfg(cfg), cfg["seed"])
    am, ok = _timed(report, "verify", blk.verify_approximation, A, B)
    report.metrics.update(q=B.q, b=B.b, m=B.m, rank_total=B.rank_total, lam=lam, lambda_prime=B.lam_prime, alpha_measured=am)
    report.check("alpha_measured", am, 64 * cfg["alpha"])
    report.check("upper_ok", ok, True, "==")
    if cfg["save"]:
        with open(cfg["save"], "wb") as fh:
            fh.write(B.to_bytes())


def _verify_trial(cfg: dict, seed: int) -> dict:
    claim = cfg["claim"]
    A = _matrix(cfg, seed)
    lam = _lam(cfg, A)
    if claim == "classical-nystrom":
        sc = lev.exact_rls(A, lam)
        b = cfg["b"] or int(math.ceil(2 * sc.effective_dim * math.log(A.n)))
        S = nys.LandmarkSet.full(A.n) if cfg["full"] else nys.sample_landmarks(sc, b, seed)
        err = nys.check_operator_error(A, nys.build_factor(A, S))
        return {"seed": seed, "value": err, "bound": lam, "pass": err <= lam + 1e-12 * max(1.0, lam)}
    if claim == "sandwich":
        alpha = cfg["alpha"]
        bcfg = _block_cfg(cfg)
        if cfg["full"]:
            F = nys.build_factor(A, nys.LandmarkSet.full(A.n))
            B = blk.BlockNystromOperator([F], lam / alpha**2, alpha, seed)
        else:
            B = blk.build_block_nystrom(A, lam / alpha**2, alpha, bcfg, seed)
        am, ok = blk.verify_approximation(A, B)
        return {"seed": seed, "value": am, "bound": 64 * alpha, "upper_ok": ok, "pass": am <= 64 * alpha and ok}
    if claim == "expected-projection":
        sc = lev.exact_rls(A, lam)
        b = A.n if cfg["full"] else (cfg["b"] or int(math.ceil(2 * sc.effective_dim * math.log(A.n))))
        g = blk.estimate_expected_projection(A, lam, b, max(cfg.get("mc_trials", 200), 50), seed, scores=sc)
        return {"seed": seed, "value": g.gmin, "bound": 0.4, "pass": g.gmin >= 0.4}
    if claim == "concentration":
        alpha = cfg["alpha"]
        lam_small = lam / alpha**2
        q = cfg["q"] or int(math.ceil(8 * alpha * math.log(A.n)))
        sc = lev.exact_rls(A, lam)
        b = cfg["b"] or int(math.ceil(2 * sc.effective_dim * math.log(A.n)))
        ref = reference_average(A, sc, b, 50 * q, seed + 10**6)
        B = blk.build_block_nystrom(A, lam_small, alpha, blk.BlockConfig(q=q, b=b, scores=sc), seed)
        g = concentration_gap(B, ref, lam_small)
        return {"seed": seed, "gmin": g.gmin, "gmax": g.gmax, "pass": g.gmin >= 0.75 and g.gmax <= 1.25}
    raise InvalidSpecError(f"unknown claim {claim!r}")


def reference_average(A, scores, b: int, blocks: int, seed) -> np.ndarray:
    """Average of ``blocks`` independent Nystrom factors, accumulated densely."""
    acc = np.zeros((A.n, A.n))
    rng = np.random.default_rng(seed)
    for _ in range(blocks):
        F = nys.build_factor(A, nys.sample_landmarks(scores, b, rng.integers(2**63)))
        acc += F.G @ F.G.T
    return acc / blocks


def concentration_gap(B: blk.BlockNystromOperator, ref: np.ndarray, lam: float) -> psd.LoewnerGap:
    Y = ref + lam * np.eye(B.n)
    w, V = np.linalg.eigh(0.5 * (Y + Y.T))
    X = B.materialize()
    X[np.diag_indices_from(X)] += lam
    return psd.gap_in_basis(X, w, V)


def cmd_verify(cfg: dict, report: Report) -> None:
    recs = _timed(report, "trials", _run_trials, cfg, lambda s: _verify_trial(cfg, s))
    report.trials = recs
    passes = sum(bool(r["pass"]) for r in recs)
    report.metrics.update(claim=cfg["claim"], pass_count=passes, trials=len(recs))
    report.check("pass_count", passes, _threshold(len(recs)), ">=")


def cmd_solve(cfg: dict, report: Report) -> None:
    A = _matrix(cfg, cfg["seed"])
    lam = _lam(cfg, A)
    B = _timed(report, "build", blk.build_block_nystrom, A, lam, cfg["alpha"], _block_cfg(cfg), cfg["seed"])
    sched = solvers.build_schedule(cfg["alpha"], lam, B.lam_prime, solvers.ScheduleConfig(cfg["c"], cfg["theta"], cfg["phi"]), q=B.q)
    v = np.random.default_rng(cfg["seed"]).standard_normal(A.n)
    u, rep = _timed(report, "solve", solvers.recursive_solve, B, v, cfg["eps"], sched)
    report.metrics.update(q=B.q, b=B.b, depth=sched.depth, levels=rep.levels, block_applies=rep.block_applies)
    report.check("residual", rep.residual, cfg["eps"])
    if A.n <= psd.DESK_CAP:
        M = B.materialize()
        M[np.diag_indices_from(M)] += lam
        err = float(np.linalg.norm(u - np.linalg.solve(M, v)) / np.linalg.norm(v))
        report.check("error_vs_dense", err, cfg["eps"])
    if B.q == 1:
        diff = float(np.linalg.norm(u - solvers.woodbury_solve(B.blocks[0], lam, v)) / np.linalg.norm(v))
        report.check("woodbury_agreement", diff, 1e-12)
    report.timing["prep_ms"] = 1e3 * rep.preprocessing_time


def cmd_quad(cfg: dict, report: Report) -> None:
    if cfg["matrix"]:
        A = psd.read_matrix_market(cfg["matrix"])
    else:
        A = psd.gen_psd(psd.SpectrumSpec("spiked", k=cfg["k"], head=cfg["head"], seed=cfg["seed"]), cfg["n"])
    if cfg["vector"]:
        b = np.loadtxt(cfg["vector"], dtype=float).ravel()
    else:
        b = np.random.default_rng(cfg["seed"]).standard_normal(A.n)
    qcfg = quad.QuadConfig(block=_block_cfg(cfg))
    P = quad.QuadraticProblem(A, b, cfg["k"])
    x, rep = _timed(report, "solve", quad.solve_quadratic, P, cfg["eps"], cfg["seed"], qcfg)
    k, n = cfg["k"], A.n
    report.metrics.update(outer_iters=rep.outer_iters, alpha=rep.alpha, k=k, lam=rep.lam)
    if n <= psd.DESK_CAP:
        cond = _timed(report, "condition", quad.measured_condition, A, rep.operator)
        report.metrics["cond_measured"] = cond
        report.check("cond_measured", cond, 64 * math.sqrt(n / k))
        xs = np.linalg.solve(A.to_dense(), b)
        e = x - xs
        rel = float(e @ A.matvec(e) / (xs @ A.matvec(xs)))
        report.metrics["energy_error"] = rel
        report.check("energy_error", rel, cfg["eps"])
    report.check("outer_iters", rep.outer_iters, 8 * (n / k) ** 0.25 * math.log(1 / cfg["eps"]))


def cmd_krr(cfg: dict, report: Report) -> None:
    if cfg["data"]:
        train = krr_mod.read_dataset_csv(cfg["data"])
        test = krr_mod.read_dataset_csv(cfg["test_data"]) if cfg["test_data"] else train
    else:
        train, test = krr_mod.make_unattainable_split(
            cfg["n"], cfg["n_test"] or cfg["n"], zeta=cfg["zeta"], d=cfg["d"], sigma=cfg["sigma"], noise=cfg["noise"], seed=cfg["seed"]
        )
    lam = cfg["lam"] if cfg["lam"] is not None else krr_mod.schedule_lambda(cfg["zeta"], cfg["gamma"], train.n).lam_star
    spec = krr_mod.KernelSpec("rbf", sigma=cfg["sigma"])
    kcfg = krr_mod.KrrConfig(block=_block_cfg(cfg), full_landmarks=cfg["full"])
    model = _timed(report, "fit", krr_mod.fit_block_krr, train, spec, lam, cfg["alpha"], kcfg, cfg["seed"])
    risk = _timed(report, "predict", krr_mod.empirical_risk, model, test)
    c0 = spec.evaluations
    krr_mod.predict(model, test.points[0])
    report.metrics.update(q=model.q, b=model.b, lam=lam, risk=risk, evals_per_prediction=spec.evaluations - c0)
    report.check("evals_per_prediction", spec.evaluations - c0, model.q * model.b, "==")
    if train.n <= psd.DESK_CAP:
        exact = float(np.mean((krr_mod.exact_krr_predictions(train, spec, lam, test.points) - test.labels) ** 2))
        report.metrics["exact_risk"] = exact
        report.check("risk_ratio", risk / exact, 4.0)
    if cfg["out"] and cfg["format"] == "csv":
        krr_mod.write_predictions_csv(cfg["out"], model.predict_many(test.points))
        cfg["_report_to_stdout"] = True


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def bench_apply(n: int = 4096, b: int = 256, qs=(1, 2, 4, 8, 16), seed=0, reps: int = 7, d: int = 3):
    """Median wall time of one Block-Nystrom apply for m = q*b landmarks."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    K = psd.KernelOperator(X, krr_mod.KernelSpec("rbf", sigma=1.0), cache_bytes=0)
    scores = np.ones(n)
    B = blk.BlockNystromOperator(
        [nys.build_factor(K, nys.sample_landmarks(scores, b, seed + i + 1)) for i in range(max(qs))], 1.0, 1.0, seed
    )
    v = rng.standard_normal(n)
    ms, times = [], []
    for q in qs:
        t = []
        for _ in range(reps):
            t0 = time.perf_counter()
            B.apply(v, q)
            t.append(time.perf_counter() - t0)
        ms.append(q * b)
        times.append(float(np.median(t)))
    return ms, times


def bench_solve_ratio(seed: int, n: int = 1024, b: int = 128, q: int = 8, alpha: float = 4.0, eps: float = 1e-8):
    """Block-applies of recursive_solve with q and 2q blocks at fixed b."""
    A = psd.gen_psd(psd.SpectrumSpec("poly", gamma=1.0, seed=seed), n)
    w = np.sort(A.eigvals())[::-1]
    lam = w[49] / alpha**2
    counts = []
    v = np.random.default_rng(seed).standard_normal(n)
    for qq in (q, 2 * q):
        B = blk.build_block_nystrom(A, lam, alpha, blk.BlockConfig(q=qq, b=b), seed)
        _, rep = solvers.recursive_solve(B, v, eps)
        counts.append(rep.block_applies)
    return counts[1] / counts[0], counts


def cmd_bench(cfg: dict, report: Report) -> None:
    if cfg["sweep"] == "apply":
        n = cfg["n"] if cfg["n"] != DEFAULTS["n"] else 4096
        ms, times = _timed(report, "sweep", bench_apply, n=n, seed=cfg["seed"])
        slope = _loglog_slope(ms, times)
        report.metrics.update(m=ms, slope=slope)
        report.timing["apply_s"] = times
        report.check("slope_low", slope, 0.8, ">=")
        report.check("slope_high", slope, 1.3)
    elif cfg["sweep"] == "solve":
        recs = []
        for t in range(cfg["trials"]):
            ratio, counts = bench_solve_ratio(cfg["seed"] + t)
            recs.append({"trial": t, "ratio": ratio, "applies": counts})
        report.trials = recs
        med = float(np.median([r["ratio"] for r in recs]))
        report.metrics["median_ratio"] = med
        report.check("applies_ratio", med, 2**1.5)
    else:
        raise InvalidSpecError(f"unknown sweep {cfg['sweep']!r}")


COMMANDS = {
    "gen": cmd_gen,
    "rls": cmd_rls,
    "nystrom": cmd_nystrom,
    "block": cmd_block,
    "verify": cmd_verify,
    "solve": cmd_solve,
    "quad": cmd_quad,
    "krr": cmd_krr,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="block-nystrom", description=__doc__.splitlines()[0])
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--format", choices=["csv", "json", "matrix-market"])
    g.add_argument("--threads", type=int)
    g.add_argument("--trials", type=int)
    g.add_argument("--config", help="JSON file with option values; flags override it")
    g.add_argument("--kind", choices=["poly", "spiked", "explicit", "krr"])
    g.add_argument("--n", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--head", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--zeta", type=float)
    g.add_argument("--d", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--noise", type=float)
    g.add_argument("--values", help="comma separated eigenvalues for --kind explicit")
    g.add_argument("--matrix", help="Matrix Market input")
    g.add_argument("--vector", help="right-hand side, one value per line")
    g.add_argument("--data", help="training CSV, last column is the label")
    g.add_argument("--test-data", dest="test_data")
    g.add_argument("--n-test", dest="n_test", type=int)
    g.add_argument("--lam", type=float)
    g.add_argument("--lam-index", dest="lam_index", type=int, help="use lambda = i-th largest eigenvalue")
    g.add_argument("--alpha", type=float)
    g.add_argument("--q", type=int)
    g.add_argument("--b", type=int)
    g.add_argument("--eps", type=float)
    g.add_argument("--theta", type=float)
    g.add_argument("--phi", type=float)
    g.add_argument("--c", type=float)
    g.add_argument("--method", choices=["exact", "recursive", "flat-tail"])
    g.add_argument("--claim", choices=["sandwich", "classical-nystrom", "expected-projection", "concentration"])
    g.add_argument("--full", action="store_const", const=True, help="use every index as a landmark")
    g.add_argument("--save", help="write the built factor or operator container here")
    g.add_argument("--sweep", choices=["apply", "solve"])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[g])
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise InvalidSpecError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            cfg[k] = v
    for key in ("n", "trials", "threads"):
        if int(cfg[key]) < 1:
            raise InvalidSpecError(f"--{key} must be positive")
    for key in ("eps", "alpha"):
        if not float(cfg[key]) > 0:
            raise InvalidSpecError(f"--{key} must be positive")
    if not 0 < float(cfg["theta"]) < 1 or not 0 < float(cfg["phi"]) < 1:
        raise InvalidSpecError("theta and phi must lie in (0, 1)")
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        report = Report(args.command, cfg)
        t0 = time.perf_counter()
        COMMANDS[args.command](cfg, report)
        report.timing["wall_s"] = time.perf_counter() - t0
    except (BlockNystromError, OSError) as exc:
        sys.stderr.write(f"error [{MODULE_OF[args.command]}]: {exc}\n")
        return 2
    to_stdout = cfg.pop("_report_to_stdout", False)
    payload = json.dumps(report.to_json(), indent=1, sort_keys=True) + "\n"
    if to_stdout:
        sys.stdout.write(payload)
    else:
        _write(cfg, payload)
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
