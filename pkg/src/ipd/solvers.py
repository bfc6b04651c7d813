"""Outer-loop state machines: inertial primal-dual steps, ALM baselines,
an accelerated linearized ALM baseline, and the run driver with traces."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (CapabilityError, DivergedError, Metric, ProblemSpec,
                   recovery_snr, seminorm_sq)
from .inner import (QuadraticModel, _model_lipschitz, assemble_subproblem_alg1,
                    assemble_subproblem_alg2, solve_subproblem)

TRACE_COLUMNS = ("k", "objective", "obj_gap", "feas", "energy", "eps_norm",
                 "inner_iters", "inner_converged", "time_ms",
                 "dx_bar_msq", "dlam_bar_sq")


# ---------------------------------------------------------------------------
# Parameters, stop rules, schedules
# ---------------------------------------------------------------------------

def constant_metric(M: Metric) -> Callable[[int], Metric]:
    return lambda k: M


def cubic_eps_schedule(eps0: float) -> Callable[[int], float]:
    """Inner residual targets eps0/(k+1)^3, summable against k with margin."""
    return lambda k: eps0 / (k + 1) ** 3


def fixed_eps_schedule(value: float) -> Callable[[int], float]:
    return lambda k: value


@dataclass
class StopRule:
    """Termination test: ``feas_tol`` (||Ax-b|| <= tau), ``res_plus_rel``
    (Res+Rel <= tau, needs a reference solution) or ``max_iter_only``."""

    mode: str = "max_iter_only"
    tau: float = 0.0

    def __post_init__(self):
        if self.mode not in ("feas_tol", "res_plus_rel", "max_iter_only"):
            raise ValueError(f"unknown stop mode {self.mode!r}")
        if self.mode != "max_iter_only" and not self.tau > 0:
            raise ValueError("stop rule needs tau > 0")


@dataclass
class AlgParams:
    """Shared solver parameters.

    ``s`` doubles as the ALM penalty sigma for the baseline methods.  The
    metric schedule must be nonincreasing in the PSD order; it is queried
    with k = 0 for the initial metric.  ``eps_schedule`` maps the outer
    index to the inner residual target; the default decays like 1/k^3 so
    that sum k*eps_k stays finite.
    """

    alpha: float = 3.0
    s: float = 1.0
    metric: Metric | None = None
    metric_schedule: Callable[[int], Metric] | None = None
    eps_schedule: Callable[[int], float] | None = None
    eps0: float | None = None
    max_outer: int = 500
    stop: StopRule = field(default_factory=StopRule)
    inner_max_iter: int = 1000
    certificate_mode: bool = True
    eps_injection: Callable[[int], np.ndarray] | None = None
    s_norm: float | None = None  # curvature scale for the aalm baseline; L_g if None

    def __post_init__(self):
        if self.alpha < 3:
            raise ValueError("alpha must be >= 3")
        if self.s <= 0:
            raise ValueError("s must be positive")
        if self.max_outer < 0:
            raise ValueError("max_outer must be nonnegative")

    def resolve_metric(self, p: ProblemSpec, algorithm: str) -> Callable[[int], Metric]:
        if self.metric_schedule is not None:
            return self.metric_schedule
        if self.metric is not None:
            return constant_metric(self.metric)
        if algorithm == "iilppd":
            return constant_metric(Metric.scaled(self.s * p.L_g))
        return constant_metric(Metric.zeros())

    def resolve_eps(self, p: ProblemSpec) -> Callable[[int], float]:
        if self.eps_schedule is not None:
            return self.eps_schedule
        eps0 = self.eps0
        if eps0 is None:
            eps0 = 1e-2 * (1.0 + float(np.linalg.norm(p.b)))
        return cubic_eps_schedule(eps0)


# ---------------------------------------------------------------------------
# States and records
# ---------------------------------------------------------------------------

@dataclass
class SolverState:
    """Iterate bundle for the inertial methods; k starts at 1 with
    x_prev == x and lam_prev == lam."""

    k: int
    x: np.ndarray
    x_prev: np.ndarray
    lam: np.ndarray
    lam_prev: np.ndarray
    Ax: np.ndarray
    M_prev: Metric
    op_cache: dict = field(default_factory=dict)
    # derived fields, populated by the last executed step
    x_bar: np.ndarray | None = None
    lam_bar: np.ndarray | None = None
    lam_hat: np.ndarray | None = None
    eta: np.ndarray | None = None
    x_hat: np.ndarray | None = None


@dataclass
class ALMState:
    x: np.ndarray
    lam: np.ndarray
    Ax: np.ndarray
    op_cache: dict = field(default_factory=dict)
    psd_checked: bool = False


@dataclass
class AALMState:
    x: np.ndarray
    x_bar: np.ndarray
    lam: np.ndarray
    Ax: np.ndarray
    op_cache: dict = field(default_factory=dict)


@dataclass
class IterationRecord:
    k: int
    objective: float
    obj_gap: float | None
    feas: float
    energy: float | None
    eps_norm: float
    inner_iters: int
    inner_converged: bool
    time_ms: float
    dx_bar_msq: float = 0.0
    dlam_bar_sq: float = 0.0
    x: np.ndarray | None = None
    lam: np.ndarray | None = None
    x_bar: np.ndarray | None = None
    lam_bar: np.ndarray | None = None
    eps_vec: np.ndarray | None = None


def init_state(p: ProblemSpec, params: AlgParams, algorithm: str,
               x0: np.ndarray | None = None,
               lam0: np.ndarray | None = None) -> SolverState:
    x0 = np.zeros(p.n) if x0 is None else np.asarray(x0, float).copy()
    lam0 = np.zeros(p.m) if lam0 is None else np.asarray(lam0, float).copy()
    M0 = params.resolve_metric(p, algorithm)(0)
    return SolverState(k=1, x=x0, x_prev=x0.copy(), lam=lam0,
                       lam_prev=lam0.copy(), Ax=p.A @ x0, M_prev=M0)


# ---------------------------------------------------------------------------
# Elementary step operations
# ---------------------------------------------------------------------------

def extrapolate(k: int, alpha: float, current: np.ndarray,
                previous: np.ndarray) -> np.ndarray:
    """Inertial extrapolation current + (k-2)/(k+alpha-2) (current-previous).

    At k = 1 the coefficient is negative, but current == previous there.
    """
    return current + ((k - 2) / (k + alpha - 2)) * (current - previous)


def dual_anchor(k: int, alpha: float, lam_bar: np.ndarray,
                lam: np.ndarray) -> np.ndarray:
    """Anchored multiplier (k+alpha-2)/(alpha-1) lam_bar - (k-1)/(alpha-1) lam."""
    return ((k + alpha - 2) / (alpha - 1)) * lam_bar - ((k - 1) / (alpha - 1)) * lam


def eta_target(k: int, alpha: float, A: np.ndarray, x_k: np.ndarray,
               b: np.ndarray, Ax: np.ndarray | None = None) -> np.ndarray:
    """Constraint target: convex combination of A x_k and b with weights
    (k-1)/(k+alpha-2) and (alpha-1)/(k+alpha-2)."""
    Ax = A @ x_k if Ax is None else Ax
    return ((k - 1) / (k + alpha - 2)) * Ax + ((alpha - 1) / (k + alpha - 2)) * b


def dual_update(k: int, alpha: float, s: float, lam_bar: np.ndarray,
                A: np.ndarray, x_next: np.ndarray, x_k: np.ndarray,
                b: np.ndarray, Ax_next: np.ndarray | None = None,
                Ax_k: np.ndarray | None = None) -> np.ndarray:
    Ax_next = A @ x_next if Ax_next is None else Ax_next
    Ax_k = A @ x_k if Ax_k is None else Ax_k
    corr = Ax_next - b + ((k - 1) / (alpha - 1)) * (Ax_next - Ax_k)
    return lam_bar + (s * k / (k + alpha - 2)) * corr


# ---------------------------------------------------------------------------
# Inertial primal-dual steps
# ---------------------------------------------------------------------------

def _check_metric_order(M_prev: Metric, M_k: Metric):
    try:
        ok = M_prev.dominates(M_k)
    except CapabilityError:
        return  # dense metrics: ordering not decidable, caller's responsibility
    if not ok:
        raise ValueError("metric schedule must be nonincreasing in the PSD order")


def _reference_info(p: ProblemSpec):
    ref = p.reference
    if ref is None:
        return None, None, None
    lam_star = ref.lambda_star
    return ref.x_star, ref.F_star, lam_star


def _record_for(p: ProblemSpec, params: AlgParams, k: int, M_k: Metric,
                x_next, lam_next, Ax_next, x_k, lam_k, x_bar, lam_bar,
                eps_norm, rep, dt_ms, retain: bool, eps_vec=None) -> IterationRecord:
    alpha, s = params.alpha, params.s
    obj = p.objective(x_next)
    feas = float(np.linalg.norm(Ax_next - p.b))
    x_star, F_star, lam_star = _reference_info(p)
    obj_gap = None if F_star is None else obj - F_star
    energy = None
    if x_star is not None and lam_star is not None and F_star is not None:
        xh = x_next + ((k - 1) / (alpha - 1)) * (x_next - x_k)
        lh = lam_next + ((k - 1) / (alpha - 1)) * (lam_next - lam_k)
        gap = obj + float(lam_star @ (Ax_next - p.b)) - F_star
        energy = (s * k * (k + 1) / (alpha - 1) ** 2) * gap \
            + 0.5 * seminorm_sq(M_k, xh - x_star) \
            + 0.5 * float(np.linalg.norm(lh - lam_star) ** 2)
    return IterationRecord(
        k=k, objective=obj, obj_gap=obj_gap, feas=feas, energy=energy,
        eps_norm=eps_norm, inner_iters=rep.iterations,
        inner_converged=rep.converged, time_ms=dt_ms,
        dx_bar_msq=seminorm_sq(M_k, x_next - x_bar),
        dlam_bar_sq=float(np.linalg.norm(lam_next - lam_bar) ** 2),
        x=x_next.copy() if retain else None,
        lam=lam_next.copy() if retain else None,
        x_bar=x_bar.copy() if retain else None,
        lam_bar=lam_bar.copy() if retain else None,
        eps_vec=None if (eps_vec is None or not retain) else np.asarray(eps_vec, float).copy(),
    )


def ippd_step(p: ProblemSpec, params: AlgParams, st: SolverState,
              retain: bool = False):
    """One inertial proximal primal-dual step (extrapolate, anchored
    subproblem with any quadratic smooth part kept inside, dual update)."""
    t0 = time.perf_counter()
    k, alpha, s = st.k, params.alpha, params.s
    x_bar = extrapolate(k, alpha, st.x, st.x_prev)
    lam_bar = extrapolate(k, alpha, st.lam, st.lam_prev)
    lam_hat = dual_anchor(k, alpha, lam_bar, st.lam)
    eta = eta_target(k, alpha, p.A, st.x, p.b, Ax=st.Ax)
    M_k = params.resolve_metric(p, "ippd")(k)
    _check_metric_order(st.M_prev, M_k)
    f_part, model = assemble_subproblem_alg1(p, k, alpha, s, M_k, x_bar, eta,
                                             lam_hat, st.op_cache)
    target = params.resolve_eps(p)(k)
    rep = solve_subproblem(f_part, model, st.x, target, params.inner_max_iter)
    x_next = rep.solution
    Ax_next = p.A @ x_next
    lam_next = dual_update(k, alpha, s, lam_bar, p.A, x_next, st.x, p.b,
                           Ax_next=Ax_next, Ax_k=st.Ax)
    dt = (time.perf_counter() - t0) * 1e3
    rec = _record_for(p, params, k, M_k, x_next, lam_next, Ax_next, st.x,
                      st.lam, x_bar, lam_bar, rep.residual_norm, rep, dt, retain)
    new = SolverState(k + 1, x_next, st.x, lam_next, st.lam, Ax_next, M_k,
                      st.op_cache, x_bar, lam_bar, lam_hat, eta,
                      x_hat=dual_anchor(k, alpha, x_bar, st.x))
    return new, rec


def iilppd_step(p: ProblemSpec, params: AlgParams, st: SolverState,
                retain: bool = False):
    """One inexact inertial linearized proximal primal-dual step: the smooth
    part is linearized at the extrapolated point and the subproblem may be
    perturbed (injected vector) or solved inexactly (residual ledger)."""
    t0 = time.perf_counter()
    k, alpha, s = st.k, params.alpha, params.s
    if p.g is None or not p.g.has_gradient:
        raise CapabilityError("linearized step needs a smooth part with gradient")
    x_bar = extrapolate(k, alpha, st.x, st.x_prev)
    lam_bar = extrapolate(k, alpha, st.lam, st.lam_prev)
    lam_hat = dual_anchor(k, alpha, lam_bar, st.lam)
    eta = eta_target(k, alpha, p.A, st.x, p.b, Ax=st.Ax)
    M_k = params.resolve_metric(p, "iilppd")(k)
    _check_metric_order(st.M_prev, M_k)
    if params.certificate_mode and M_k.kind != "dense":
        if not M_k.dominates(Metric.scaled(s * p.L_g)):
            raise ValueError("certificate mode requires M_k >= s L_g I")
    eps_vec = None if params.eps_injection is None else params.eps_injection(k)
    f_part, model = assemble_subproblem_alg2(p, k, alpha, s, M_k, x_bar, eta,
                                             lam_hat, eps_vec, st.op_cache)
    target = params.resolve_eps(p)(k)
    rep = solve_subproblem(f_part, model, st.x, target, params.inner_max_iter)
    x_next = rep.solution
    Ax_next = p.A @ x_next
    lam_next = dual_update(k, alpha, s, lam_bar, p.A, x_next, st.x, p.b,
                           Ax_next=Ax_next, Ax_k=st.Ax)
    eps_norm = rep.residual_norm if eps_vec is None else float(np.linalg.norm(eps_vec))
    dt = (time.perf_counter() - t0) * 1e3
    rec = _record_for(p, params, k, M_k, x_next, lam_next, Ax_next, st.x,
                      st.lam, x_bar, lam_bar, eps_norm, rep, dt, retain,
                      eps_vec=eps_vec)
    new = SolverState(k + 1, x_next, st.x, lam_next, st.lam, Ax_next, M_k,
                      st.op_cache, x_bar, lam_bar, lam_hat, eta,
                      x_hat=dual_anchor(k, alpha, x_bar, st.x))
    return new, rec


# ---------------------------------------------------------------------------
# Baselines: (proximal / linearized) ALM and accelerated linearized ALM
# ---------------------------------------------------------------------------

def _alm_model(p: ProblemSpec, sigma: float, P: Metric, x_k, lam_k,
               linearize_g: bool, op_cache: dict) -> tuple:
    linear = p.A.T @ lam_k - sigma * (p.A.T @ p.b)
    if not P.is_zero:
        linear = linear - P.apply(x_k)
    Q = None
    if p.g is not None:
        if linearize_g:
            linear = linear + p.g.gradient(x_k)
        elif p.g.kind == "quadratic":
            Q = p.g.Q
            linear = linear + p.g.q
        elif p.g.kind != "zero":
            raise CapabilityError(
                "non-quadratic smooth part: use the linearized ALM step")
    L = _model_lipschitz(1.0, P, sigma, p, Q, op_cache)
    return p.f, QuadraticModel(1.0, P, sigma, p.A, linear, Q, L)


def _check_alm_psd(p: ProblemSpec, sigma: float, P: Metric):
    H = sigma * (p.A.T @ p.A) + P.to_dense(p.n)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise CapabilityError("P + sigma A'A must be positive definite") from exc


def prox_alm_step(p: ProblemSpec, sigma: float, P: Metric, st: ALMState,
                  inner_target: float = 1e-10, inner_max_iter: int = 1000,
                  retain: bool = False):
    """Proximal augmented Lagrangian step: full objective in the subproblem,
    multiplier ascent lam + sigma (Ax - b)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t0 = time.perf_counter()
    if not st.psd_checked:
        _check_alm_psd(p, sigma, P)
        st.psd_checked = True
    f_part, model = _alm_model(p, sigma, P, st.x, st.lam, False, st.op_cache)
    rep = solve_subproblem(f_part, model, st.x, inner_target, inner_max_iter)
    x_next = rep.solution
    Ax_next = p.A @ x_next
    lam_next = st.lam + sigma * (Ax_next - p.b)
    dt = (time.perf_counter() - t0) * 1e3
    obj = p.objective(x_next)
    F_star = None if p.reference is None else p.reference.F_star
    rec = IterationRecord(
        k=0, objective=obj, obj_gap=None if F_star is None else obj - F_star,
        feas=float(np.linalg.norm(Ax_next - p.b)), energy=None,
        eps_norm=rep.residual_norm, inner_iters=rep.iterations,
        inner_converged=rep.converged, time_ms=dt,
        x=x_next.copy() if retain else None,
        lam=lam_next.copy() if retain else None)
    return ALMState(x_next, lam_next, Ax_next, st.op_cache, True), rec


def linearized_alm_step(p: ProblemSpec, sigma: float, P: Metric, st: ALMState,
                        inner_target: float = 1e-10, inner_max_iter: int = 1000,
                        retain: bool = False):
    """ALM step with the smooth part linearized at the current iterate."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if p.g is None or not p.g.has_gradient:
        raise CapabilityError("linearized ALM needs a smooth part with gradient")
    t0 = time.perf_counter()
    if not st.psd_checked:
        _check_alm_psd(p, sigma, P)
        st.psd_checked = True
    f_part, model = _alm_model(p, sigma, P, st.x, st.lam, True, st.op_cache)
    rep = solve_subproblem(f_part, model, st.x, inner_target, inner_max_iter)
    x_next = rep.solution
    Ax_next = p.A @ x_next
    lam_next = st.lam + sigma * (Ax_next - p.b)
    dt = (time.perf_counter() - t0) * 1e3
    obj = p.objective(x_next)
    F_star = None if p.reference is None else p.reference.F_star
    rec = IterationRecord(
        k=0, objective=obj, obj_gap=None if F_star is None else obj - F_star,
        feas=float(np.linalg.norm(Ax_next - p.b)), energy=None,
        eps_norm=rep.residual_norm, inner_iters=rep.iterations,
        inner_converged=rep.converged, time_ms=dt,
        x=x_next.copy() if retain else None,
        lam=lam_next.copy() if retain else None)
    return ALMState(x_next, lam_next, Ax_next, st.op_cache, True), rec


def aalm_step(p: ProblemSpec, k: int, st: AALMState, s_norm: float | None = None,
              inner_target: float = 1e-10, inner_max_iter: int = 1000,
              retain: bool = False):
    """Accelerated linearized ALM step with the adaptive parameter choices
    a_k = 2/(k+1), penalty and dual step s_norm*k, prox weight 2 s_norm/k."""
    if p.g is None or not p.g.has_gradient:
        raise CapabilityError("accelerated linearized ALM needs a smooth part")
    if s_norm is None:
        s_norm = p.L_g
    if s_norm <= 0:
        raise ValueError("s_norm must be positive (smooth curvature scale)")
    t0 = time.perf_counter()
    a_k = 2.0 / (k + 1)
    beta_k = gamma_k = s_norm * k
    P_k = Metric.scaled(2.0 * s_norm / k)
    x_hat = (1 - a_k) * st.x_bar + a_k * st.x
    linear = p.g.gradient(x_hat) + p.A.T @ st.lam - beta_k * (p.A.T @ p.b) \
        - P_k.apply(st.x)
    L = _model_lipschitz(1.0, P_k, beta_k, p, None, st.op_cache)
    model = QuadraticModel(1.0, P_k, beta_k, p.A, linear, None, L)
    rep = solve_subproblem(p.f, model, st.x, inner_target, inner_max_iter)
    x_next = rep.solution
    Ax_next = p.A @ x_next
    x_bar_next = (1 - a_k) * st.x_bar + a_k * x_next
    lam_next = st.lam + gamma_k * (Ax_next - p.b)
    dt = (time.perf_counter() - t0) * 1e3
    obj = p.objective(x_next)
    F_star = None if p.reference is None else p.reference.F_star
    rec = IterationRecord(
        k=k, objective=obj, obj_gap=None if F_star is None else obj - F_star,
        feas=float(np.linalg.norm(Ax_next - p.b)), energy=None,
        eps_norm=rep.residual_norm, inner_iters=rep.iterations,
        inner_converged=rep.converged, time_ms=dt,
        x=x_next.copy() if retain else None,
        lam=lam_next.copy() if retain else None)
    return AALMState(x_next, x_bar_next, lam_next, Ax_next, st.op_cache), rec


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class Trace:
    """Per-iteration diagnostics stream plus run summary and metadata."""

    def __init__(self, records=None, meta=None, summary=None):
        self.records: list[IterationRecord] = records or []
        self.meta: dict = meta or {}
        self.summary: dict = summary or {}

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.records]
        return np.array([np.nan if v is None else float(v) for v in vals])

    @property
    def has_vectors(self) -> bool:
        return bool(self.records) and self.records[0].x is not None

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# meta: " + json.dumps(self.meta) + "\n")
            fh.write("# summary: " + json.dumps(self.summary) + "\n")
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for r in self.records:
                row = [_fmt(getattr(r, c)) for c in TRACE_COLUMNS]
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        meta, summary, records = {}, {}, []
        with open(path) as fh:
            lines = fh.read().splitlines()
        body = []
        for ln in lines:
            if ln.startswith("# meta:"):
                meta = json.loads(ln[len("# meta:"):])
            elif ln.startswith("# summary:"):
                summary = json.loads(ln[len("# summary:"):])
            elif ln.strip():
                body.append(ln)
        if not body:
            raise ValueError("trace file has no header row")
        header = body[0].split(",")
        required = set(TRACE_COLUMNS) - {"dx_bar_msq", "dlam_bar_sq"}
        if not required.issubset(header):
            missing = sorted(required - set(header))
            raise ValueError(f"trace file missing columns: {missing}")
        idx = {name: header.index(name) for name in header}

        def parse(row, name, cast=float):
            if name not in idx:
                return None
            cell = row[idx[name]]
            return None if cell == "" else cast(cell)

        for ln in body[1:]:
            row = ln.split(",")
            records.append(IterationRecord(
                k=int(row[idx["k"]]),
                objective=parse(row, "objective"),
                obj_gap=parse(row, "obj_gap"),
                feas=parse(row, "feas"),
                energy=parse(row, "energy"),
                eps_norm=parse(row, "eps_norm") or 0.0,
                inner_iters=int(parse(row, "inner_iters") or 0),
                inner_converged=bool(int(row[idx["inner_converged"]] or "0")),
                time_ms=parse(row, "time_ms") or 0.0,
                dx_bar_msq=parse(row, "dx_bar_msq") or 0.0,
                dlam_bar_sq=parse(row, "dlam_bar_sq") or 0.0,
            ))
        return cls(records, meta, summary)


@dataclass
class RunCallbacks:
    retain_vectors: bool = False
    on_iteration: Callable | None = None


ALGORITHMS = ("ippd", "iilppd", "alm", "prox-alm", "lin-alm", "aalm")


def _default_alm_metric(p: ProblemSpec, params: AlgParams, algorithm: str) -> Metric:
    if params.metric is not None:
        return params.metric
    if params.metric_schedule is not None:
        return params.metric_schedule(0)
    if algorithm == "alm":
        return Metric.zeros()
    if algorithm == "lin-alm":
        # linearizing g needs the prox weight to dominate its curvature
        return Metric.scaled(1.01 * max(p.L_g, 1e-12))
    return Metric.scaled(1.0)


def run(p: ProblemSpec, algorithm: str, params: AlgParams,
        callbacks: RunCallbacks | None = None,
        x0: np.ndarray | None = None, lam0: np.ndarray | None = None) -> Trace:
    """Drive a solver until its stop rule fires or ``max_outer`` is reached.

    Returns a Trace whose records follow the produced iterates: the row
    written at outer index k describes x_{k+1}.  Raises DivergedError (with
    the last good state and the partial trace attached) on non-finite
    iterates.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    callbacks = callbacks or RunCallbacks()
    retain = callbacks.retain_vectors
    stop = params.stop
    ref = p.reference
    if stop.mode == "res_plus_rel" and (ref is None or ref.x_star is None):
        raise ValueError("res_plus_rel stop rule needs a reference solution")

    x_star, F_star, lam_star = _reference_info(p)
    t_start = time.perf_counter()

    meta = {
        "algorithm": algorithm,
        "alpha": params.alpha,
        "s": params.s,
        "m": p.m,
        "n": p.n,
        "problem": p.name,
    }
    trace = Trace(meta=meta)

    if algorithm in ("ippd", "iilppd"):
        st = init_state(p, params, algorithm, x0, lam0)
        meta["metric0"] = st.M_prev.describe()
        meta["x1"] = st.x.tolist()
        meta["lambda1"] = st.lam.tolist()
        eps_sched = params.resolve_eps(p)
        meta["eps_target_1"] = eps_sched(1)
        meta["eps_schedule"] = "custom" if params.eps_schedule is not None else "cubic"
        if params.eps_schedule is None:
            meta["eps0"] = params.eps0 if params.eps0 is not None \
                else 1e-2 * (1.0 + float(np.linalg.norm(p.b)))
        if x_star is not None and lam_star is not None:
            E1 = 0.5 * seminorm_sq(st.M_prev, st.x - x_star) \
                + 0.5 * float(np.linalg.norm(st.lam - lam_star) ** 2)
            meta["E1"] = E1
        if F_star is not None:
            meta["F_star"] = F_star
        if lam_star is not None:
            meta["lambda_star_norm"] = float(np.linalg.norm(lam_star))
        step = ippd_step if algorithm == "ippd" else iilppd_step
        state = st
        for _ in range(params.max_outer):
            new_state, rec = step(p, params, state, retain=retain)
            if not (np.isfinite(new_state.x).all() and np.isfinite(new_state.lam).all()):
                raise DivergedError("non-finite iterate", state=state, trace=trace)
            trace.records.append(rec)
            if callbacks.on_iteration:
                callbacks.on_iteration(new_state, rec)
            state = new_state
            if _should_stop(stop, rec, p, state.x):
                _finish(trace, p, state.x, state.lam, t_start, "converged")
                return trace
        _finish(trace, p, state.x, state.lam, t_start, "max_iter")
        return trace

    if algorithm in ("alm", "prox-alm", "lin-alm"):
        sigma = params.s
        P = _default_alm_metric(p, params, algorithm)
        meta["sigma"] = sigma
        meta["metric0"] = P.describe()
        x0v = np.zeros(p.n) if x0 is None else np.asarray(x0, float).copy()
        lam0v = np.zeros(p.m) if lam0 is None else np.asarray(lam0, float).copy()
        st = ALMState(x0v, lam0v, p.A @ x0v)
        eps_sched = params.resolve_eps(p)
        step_fn = linearized_alm_step if algorithm == "lin-alm" else prox_alm_step
        for k in range(1, params.max_outer + 1):
            new_st, rec = step_fn(p, sigma, P, st, inner_target=eps_sched(k),
                                  inner_max_iter=params.inner_max_iter,
                                  retain=retain)
            rec.k = k
            if not (np.isfinite(new_st.x).all() and np.isfinite(new_st.lam).all()):
                raise DivergedError("non-finite iterate", state=st, trace=trace)
            trace.records.append(rec)
            if callbacks.on_iteration:
                callbacks.on_iteration(new_st, rec)
            st = new_st
            if _should_stop(stop, rec, p, st.x):
                _finish(trace, p, st.x, st.lam, t_start, "converged")
                return trace
        _finish(trace, p, st.x, st.lam, t_start, "max_iter")
        return trace

    # aalm
    x0v = np.zeros(p.n) if x0 is None else np.asarray(x0, float).copy()
    lam0v = np.zeros(p.m) if lam0 is None else np.asarray(lam0, float).copy()
    st = AALMState(x0v, x0v.copy(), lam0v, p.A @ x0v)
    s_norm = params.s_norm if params.s_norm is not None else p.L_g
    meta["s_norm"] = s_norm
    eps_sched = params.resolve_eps(p)
    for k in range(1, params.max_outer + 1):
        new_st, rec = aalm_step(p, k, st, s_norm=s_norm,
                                inner_target=eps_sched(k),
                                inner_max_iter=params.inner_max_iter,
                                retain=retain)
        if not (np.isfinite(new_st.x).all() and np.isfinite(new_st.lam).all()):
            raise DivergedError("non-finite iterate", state=st, trace=trace)
        trace.records.append(rec)
        if callbacks.on_iteration:
            callbacks.on_iteration(new_st, rec)
        st = new_st
        if _should_stop(stop, rec, p, st.x):
            _finish(trace, p, st.x, st.lam, t_start, "converged")
            return trace
    _finish(trace, p, st.x, st.lam, t_start, "max_iter")
    return trace


def _should_stop(stop: StopRule, rec: IterationRecord, p: ProblemSpec,
                 x: np.ndarray) -> bool:
    if stop.mode == "feas_tol":
        return rec.feas <= stop.tau
    if stop.mode == "res_plus_rel":
        xs = p.reference.x_star
        rel = float(np.linalg.norm(x - xs) / max(np.linalg.norm(xs), 1e-300))
        return rec.feas + rel <= stop.tau
    return False


def _finish(trace: Trace, p: ProblemSpec, x, lam, t_start, reason: str):
    res = p.feasibility(x)
    rel = None
    snr = None
    if p.reference is not None and p.reference.x_star is not None:
        xs = p.reference.x_star
        rel = float(np.linalg.norm(x - xs) / max(np.linalg.norm(xs), 1e-300))
        snr = recovery_snr(x, xs)
    trace.summary = {
        "iterations": len(trace.records),
        "res": res,
        "rel": rel,
        "snr": snr,
        "objective": p.objective(x),
        "exit_reason": reason,
        "time_ms": (time.perf_counter() - t_start) * 1e3,
        "converged": reason == "converged",
    }
    if "E1" in trace.meta:
        trace.summary["E1"] = trace.meta["E1"]
