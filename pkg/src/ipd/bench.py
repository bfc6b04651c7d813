"""Seeded problem generators, recovery metrics, a high-accuracy reference
oracle, and the experiment runner with CSV/JSON reports."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (DivergedError, FunctionDescriptor, Metric, OracleFailure,
                   ProblemSpec, ReferenceSolution, kkt_residual, recovery_snr)
from .solvers import (AlgParams, ALMState, StopRule, Trace, iilppd_step,
                      init_state, ippd_step, prox_alm_step, run)

SUMMARY_COLUMNS = ("family", "m", "n", "seed", "algorithm", "alpha", "s",
                   "subtol", "Init", "Res", "Rel", "SNR", "Time_ms", "converged")


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_nlcqp(m: int, n: int, seed: int, with_reference: bool = True,
              oracle_tol: float = 1e-10) -> ProblemSpec:
    """Nonnegative quadratic program: min 0.5 x'Qx + q'x s.t. Ax=b, x>=0.

    A = [B | I] with Gaussian B, Q = 2 H'H with Gaussian square H, Gaussian
    q, uniform b on [0, 1).  The reference solution is oracle-computed.
    """
    if not m < n:
        raise ValueError("gen_nlcqp needs m < n")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    b = rng.uniform(0.0, 1.0, m)
    B = rng.standard_normal((m, n - m))
    A = np.concatenate([B, np.eye(m)], axis=1)
    H = rng.standard_normal((n, n))
    Q = 2.0 * (H.T @ H)
    p = ProblemSpec(f=FunctionDescriptor.nonneg(), A=A, b=b,
                    g=FunctionDescriptor.quadratic(Q, q),
                    name=f"nlcqp_m{m}_n{n}_seed{seed}")
    if with_reference:
        p.reference = compute_reference_oracle(p, oracle_tol)
    return p


def gen_basis_pursuit(m: int, n: int, seed: int,
                      sparsity: float = 0.1) -> ProblemSpec:
    """Basis pursuit: min |x|_1 s.t. Ax = b with a planted sparse solution.

    round(sparsity*n) nonzeros drawn uniformly from [-2, 2] on a uniformly
    random support; b = A x* exactly.
    """
    if m > n:
        raise ValueError("gen_basis_pursuit needs m <= n")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    nnz = int(round(sparsity * n))
    support = rng.choice(n, size=nnz, replace=False)
    x_star = np.zeros(n)
    x_star[support] = rng.uniform(-2.0, 2.0, nnz)
    b = A @ x_star
    ref = ReferenceSolution(x_star=x_star, F_star=float(np.abs(x_star).sum()),
                            lambda_star=None, provenance="planted")
    return ProblemSpec(f=FunctionDescriptor.l1(), A=A, b=b, g=None,
                       reference=ref, name=f"bp_m{m}_n{n}_seed{seed}")


def gen_l1l2(m: int, n: int, seed: int, beta: float,
             noise_norm: float = 1e-4) -> ProblemSpec:
    """Sparse recovery with an l1 + (beta/2) l2^2 objective and noisy data.

    The planted signal has 150 nonzeros at n = 3000 (0.05 n otherwise),
    drawn from N(0, 4) resampled into [-2, 2]; the noise direction is
    Gaussian, rescaled to exactly ``noise_norm``.  Split as f = |.|_1 and
    g = (beta/2)|.|_2^2 so the linearized method applies with M = s*beta.
    The planted x* is the signal to recover, not the optimizer, so no F*
    is claimed.
    """
    if m > n:
        raise ValueError("gen_l1l2 needs m <= n")
    if beta <= 0:
        raise ValueError("beta must be positive")
    if noise_norm < 0:
        raise ValueError("noise_norm must be nonnegative")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    nnz = 150 if n == 3000 else max(1, int(round(0.05 * n)))
    support = rng.choice(n, size=nnz, replace=False)
    vals = rng.normal(0.0, 2.0, nnz)
    bad = np.abs(vals) > 2.0
    while bad.any():  # resample until inside [-2, 2]
        vals[bad] = rng.normal(0.0, 2.0, int(bad.sum()))
        bad = np.abs(vals) > 2.0
    x_star = np.zeros(n)
    x_star[support] = vals
    omega = np.zeros(m)
    if noise_norm > 0:
        omega = rng.standard_normal(m)
        omega *= noise_norm / np.linalg.norm(omega)
    b = A @ x_star + omega
    g = FunctionDescriptor.quadratic(beta * np.eye(n), np.zeros(n),
                                     lipschitz_constant=beta)
    ref = ReferenceSolution(x_star=x_star, F_star=None, lambda_star=None,
                            provenance="planted")
    return ProblemSpec(f=FunctionDescriptor.l1(), A=A, b=b, g=g,
                       reference=ref, name=f"l1l2_m{m}_n{n}_seed{seed}_beta{beta}")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def metrics(x: np.ndarray, ref: ReferenceSolution | None, A: np.ndarray,
            b: np.ndarray):
    """(Res, Rel, SNR) of a final iterate; Rel/SNR are None without a
    reference."""
    x = np.asarray(x, float)
    res = float(np.linalg.norm(A @ x - b))
    if ref is None or ref.x_star is None:
        return res, None, None
    xs = ref.x_star
    rel = float(np.linalg.norm(x - xs) / max(np.linalg.norm(xs), 1e-300))
    return res, rel, recovery_snr(x, xs)


# ---------------------------------------------------------------------------
# Reference oracle
# ---------------------------------------------------------------------------

def _oracle_inertial(p: ProblemSpec, tol: float, max_outer: int = 20000):
    """Tight-subproblem inertial run driven to a small KKT residual.

    Composite problems use the linearized step: keeping an ill-conditioned
    quadratic inside the subproblem makes the inner solves impractical for
    a first-order method, while the linearized subproblems stay well
    conditioned through the metric floor M = s L_g I.
    """
    sched = lambda k: max(1e-4 / (k + 1) ** 3, 1e-12)  # noqa: E731
    if p.L_g > 0:
        params = AlgParams(alpha=30.0, s=1.0, metric=Metric.scaled(p.L_g),
                           eps_schedule=sched, inner_max_iter=2000)
        step, mode = iilppd_step, "iilppd"
    else:
        alpha = float(min(max(p.n, 3), 100))
        params = AlgParams(alpha=alpha, s=100.0, metric=Metric.zeros(),
                           eps_schedule=sched, inner_max_iter=2000)
        step, mode = ippd_step, "ippd"
    st = init_state(p, params, mode)
    best = (np.inf, st.x, st.lam)
    for _ in range(max_outer):
        st, _rec = step(p, params, st)
        if st.k % 10 == 1:
            station, feas = kkt_residual(p, st.x, st.lam)
            score = max(station, feas)
            if score < best[0]:
                best = (score, st.x.copy(), st.lam.copy())
            if score <= tol:
                return best
    return best


def _oracle_prox_alm(p: ProblemSpec, tol: float, max_outer: int = 20000):
    """Tight proximal ALM run driven to a small KKT residual."""
    sA2 = p.sigma_A() ** 2
    if p.L_g > 0:
        sigma = max(10.0 * p.L_g / max(sA2, 1e-12), 1e-3)
        P = Metric.scaled(p.L_g / 10.0)
    else:
        sigma = 10.0
        P = Metric.scaled(1.0)
    st = ALMState(np.zeros(p.n), np.zeros(p.m), np.zeros(p.m))
    best = (np.inf, st.x, st.lam)
    for k in range(1, max_outer + 1):
        st, _rec = prox_alm_step(p, sigma, P, st, inner_target=1e-12,
                                 inner_max_iter=3000)
        if k % 5 == 0 or k <= 5:
            station, feas = kkt_residual(p, st.x, st.lam)
            score = max(station, feas)
            if score < best[0]:
                best = (score, st.x.copy(), st.lam.copy())
            if score <= tol:
                return best
    return best


def compute_reference_oracle(p: ProblemSpec, tol: float = 1e-10,
                             force: bool = False) -> ReferenceSolution:
    """High-accuracy reference by consensus of two independent solvers.

    Runs a tight inertial primal-dual method and a tight proximal ALM,
    cross-checks the candidates to 1e-6 relative, verifies the returned
    point's KKT residual against ``tol`` and returns it with provenance
    ``oracle-computed``.  An existing reference is verified and passed
    through unless ``force`` is set.
    """
    if tol > 1e-10:
        raise ValueError("oracle tolerance must be <= 1e-10")
    if p.reference is not None and not force:
        ref = p.reference
        if ref.provenance == "oracle-computed" and ref.lambda_star is not None:
            station, feas = kkt_residual(p, ref.x_star, ref.lambda_star)
            if max(station, feas) > 1e-10:
                raise OracleFailure("stored oracle reference fails its KKT check",
                                    (ref,))
        return ref
    score_a, x_a, lam_a = _oracle_inertial(p, tol)
    score_b, x_b, lam_b = _oracle_prox_alm(p, tol)
    if np.linalg.norm(x_a - x_b) > 1e-6 * (1.0 + np.linalg.norm(x_a)):
        raise OracleFailure(
            f"oracle candidates disagree (kkt scores {score_a:.2e}, {score_b:.2e})",
            ((x_a, lam_a), (x_b, lam_b)))
    if score_b <= score_a:
        score, x, lam = score_b, x_b, lam_b
    else:
        score, x, lam = score_a, x_a, lam_a
    if score > tol:
        raise OracleFailure(
            f"oracle reached KKT residual {score:.2e} > tol {tol:.2e}",
            ((x_a, lam_a), (x_b, lam_b)))
    return ReferenceSolution(x_star=x, F_star=p.objective(x), lambda_star=lam,
                             provenance="oracle-computed")


def oracle_lambda_star(p: ProblemSpec, tol: float = 1e-8) -> np.ndarray:
    """Multiplier for a problem with a planted primal solution, from a
    long tight inertial run with a KKT verification at the planted point."""
    if p.reference is None or p.reference.x_star is None:
        raise ValueError("needs a planted primal solution")
    score, x, lam = _oracle_inertial(p, max(tol * 1e-2, 1e-12))
    station, feas = kkt_residual(p, p.reference.x_star, lam)
    if max(station, feas) > tol:
        raise OracleFailure(
            f"dual limit fails KKT at the planted point ({station:.2e}, {feas:.2e})",
            ((x, lam),))
    return lam


# ---------------------------------------------------------------------------
# Experiment configuration and runner
# ---------------------------------------------------------------------------

FAMILIES = ("nlcqp", "basis_pursuit", "l1l2")


@dataclass
class ExperimentConfig:
    family: str
    dimensions: list
    algorithms: list
    seed: int = 0
    sparsity: float = 0.1
    noise: float = 1e-4
    beta: object = 0.5  # float or list of floats (l1l2 only)
    subtol: float | None = None
    repeat: int = 1
    out_dir: str = "bench_out"
    with_reference: bool = True

    def validate(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not self.dimensions:
            raise ValueError("dimensions must be a nonempty list of [m, n] pairs")
        for mn in self.dimensions:
            if len(mn) != 2 or int(mn[0]) <= 0 or int(mn[1]) <= 0:
                raise ValueError(f"bad dimensions entry {mn!r}")
            m, n = int(mn[0]), int(mn[1])
            if self.family == "nlcqp" and not m < n:
                raise ValueError("nlcqp needs m < n")
            if self.family in ("basis_pursuit", "l1l2") and not m <= n:
                raise ValueError(f"{self.family} needs m <= n")
        if not 0 < self.sparsity <= 1:
            raise ValueError("sparsity must be in (0, 1]")
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")
        for beta in self._betas():
            if beta is not None and beta <= 0:
                raise ValueError("beta must be positive")
        if not isinstance(self.algorithms, list):
            raise ValueError("algorithms must be a list")
        for a in self.algorithms:
            if "name" not in a:
                raise ValueError("each algorithm entry needs a 'name'")
        return self

    def _betas(self):
        if self.family != "l1l2":
            return [None]
        return list(self.beta) if isinstance(self.beta, (list, tuple)) else [self.beta]

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj).validate()


def _resolve_scalar(value, p: ProblemSpec):
    if value == "n":
        return float(p.n)
    if value == "Lg":
        return float(p.L_g)
    return float(value)


def _build_params(alg: dict, p: ProblemSpec, subtol: float | None) -> AlgParams:
    alpha = _resolve_scalar(alg.get("alpha", 3.0), p)
    s = _resolve_scalar(alg.get("s", 1.0), p)
    metric_spec = alg.get("metric", "auto")
    metric = None
    if metric_spec == "zero":
        metric = Metric.zeros()
    elif metric_spec == "slg":
        metric = Metric.scaled(s * p.L_g)
    elif metric_spec not in (None, "auto"):
        metric = Metric.scaled(float(metric_spec))
    stop_mode = alg.get("stop_mode", "max_iter_only")
    stop = StopRule(stop_mode, alg.get("stop_tau", 0.0))
    inner_tol = alg.get("inner_tol", subtol)
    eps_schedule = None if inner_tol is None else (lambda k, v=float(inner_tol): v)
    return AlgParams(
        alpha=alpha, s=s, metric=metric, eps_schedule=eps_schedule,
        max_outer=int(alg.get("max_outer", 500)),
        stop=stop, inner_max_iter=int(alg.get("inner_max", 1000)),
        certificate_mode=bool(alg.get("certificate_mode", True)),
        s_norm=alg.get("s_norm"),
    )


def _make_problem(cfg: ExperimentConfig, m: int, n: int, beta):
    if cfg.family == "nlcqp":
        return gen_nlcqp(m, n, cfg.seed, with_reference=cfg.with_reference)
    if cfg.family == "basis_pursuit":
        return gen_basis_pursuit(m, n, cfg.seed, cfg.sparsity)
    return gen_l1l2(m, n, cfg.seed, beta, cfg.noise)


def _fmt_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every (instance x algorithm x repeat) combination and write
    per-run trace CSVs plus summary.csv / summary.json under cfg.out_dir.

    Diverged runs are recorded as failed rows.  Parallelism is capped by
    the IPD_THREADS environment variable (default 1); rows keep a
    deterministic order regardless.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for (m, n) in [(int(a), int(b)) for a, b in cfg.dimensions]:
        for beta in cfg._betas():
            problem = _make_problem(cfg, m, n, beta)
            for alg in cfg.algorithms:
                for rep in range(cfg.repeat):
                    tasks.append((problem, m, n, beta, alg, rep))

    def one(task):
        problem, m, n, beta, alg, rep = task
        params = _build_params(alg, problem, cfg.subtol)
        name = alg["name"]
        t0 = time.perf_counter()
        tagb = "" if beta is None else f"_beta{beta}"
        trace_path = out / (f"trace_{cfg.family}_m{m}_n{n}_seed{cfg.seed}"
                            f"{tagb}_{name}_a{params.alpha:g}_r{rep}.csv")
        row = {
            "family": cfg.family, "m": m, "n": n, "seed": cfg.seed,
            "algorithm": name, "alpha": params.alpha, "s": params.s,
            "subtol": alg.get("inner_tol", cfg.subtol),
            "Init": None, "Res": None, "Rel": None, "SNR": None,
            "Time_ms": None, "converged": False,
        }
        try:
            trace = run(problem, name, params)
        except DivergedError as exc:
            partial = exc.trace if exc.trace is not None else Trace()
            partial.summary = {"exit_reason": "diverged"}
            partial.to_csv(trace_path)
            row["Init"] = len(partial)
            row["Time_ms"] = (time.perf_counter() - t0) * 1e3
            row["error"] = "diverged"
            return row, str(trace_path)
        trace.to_csv(trace_path)
        row["Init"] = trace.summary["iterations"]
        row["Res"] = trace.summary["res"]
        row["Rel"] = trace.summary["rel"]
        row["SNR"] = trace.summary["snr"]
        row["Time_ms"] = trace.summary["time_ms"]
        row["converged"] = trace.summary["converged"]
        return row, str(trace_path)

    threads = max(1, int(os.environ.get("IPD_THREADS", "1")))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]

    rows = [r for r, _ in results]
    trace_paths = [t for _, t in results]
    summary_csv = out / "summary.csv"
    with open(summary_csv, "w") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(row.get(c)) for c in SUMMARY_COLUMNS) + "\n")
    report = {
        "config": {
            "family": cfg.family, "dimensions": cfg.dimensions,
            "algorithms": cfg.algorithms, "seed": cfg.seed,
            "sparsity": cfg.sparsity, "noise": cfg.noise,
            "beta": cfg.beta, "subtol": cfg.subtol, "repeat": cfg.repeat,
            "out_dir": str(cfg.out_dir), "with_reference": cfg.with_reference,
        },
        "rows": rows,
        "traces": trace_paths,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report


# ---------------------------------------------------------------------------
# Paper-style presets
# ---------------------------------------------------------------------------

def preset_config(name: str, out_dir: str = "bench_out",
                  subtol: float | None = None, beta=None,
                  seed: int = 0) -> ExperimentConfig:
    """Experiment presets mirroring the published test families."""
    if name == "bp-paper":
        return ExperimentConfig(
            family="basis_pursuit",
            dimensions=[[60, 100], [200, 300], [300, 500], [600, 1000], [1000, 1500]],
            algorithms=[{"name": "ippd", "alpha": "n", "s": 100.0, "metric": "zero",
                         "stop_mode": "res_plus_rel", "stop_tau": 1e-8,
                         "max_outer": 2000}],
            subtol=1e-8 if subtol is None else subtol,
            seed=seed, out_dir=out_dir)
    if name == "nlcqp-paper":
        algs = [{"name": "iilppd", "alpha": a, "s": "Lg", "metric": "slg",
                 "max_outer": 500} for a in (10.0, 20.0, 30.0)]
        algs.append({"name": "aalm", "max_outer": 500})
        return ExperimentConfig(
            family="nlcqp", dimensions=[[100, 500]], algorithms=algs,
            subtol=1e-8 if subtol is None else subtol,
            seed=seed, out_dir=out_dir)
    if name == "l1l2-paper":
        return ExperimentConfig(
            family="l1l2", dimensions=[[1500, 3000]],
            algorithms=[{"name": "iilppd", "alpha": 20.0, "s": 1.0, "metric": "slg",
                         "stop_mode": "feas_tol", "stop_tau": 5e-4,
                         "max_outer": 2000}],
            beta=[0.01, 0.05, 0.1, 0.5, 1.0, 1.5] if beta is None else beta,
            subtol=1e-8 if subtol is None else subtol,
            seed=seed, out_dir=out_dir)
    raise ValueError(f"unknown preset {name!r}")
