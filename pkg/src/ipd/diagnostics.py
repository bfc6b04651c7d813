"""Lyapunov energy evaluation and runtime convergence certificates.

The energy at index k combines the Lagrangian gap at x_k with anchored
primal/dual distances to a KKT point; along exact inertial traces it is
nonincreasing, which yields O(1/k^2) bounds on feasibility violation and
objective error.  Certificates check those bounds on recorded traces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (CapabilityError, InsufficientDataError, KKTPoint, Metric,
                   ProblemSpec, seminorm_sq)
from .solvers import Trace


@dataclass
class Certificate:
    kind: str
    predicted: float
    observed: float
    margin: float
    passed: bool | None
    k_worst: int | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "predicted": self.predicted,
            "observed": self.observed,
            "margin": self.margin,
            "pass": self.passed,
            "k_worst": self.k_worst,
            "detail": self.detail,
        }


def _unavailable(kind: str, margin: float, why: str) -> Certificate:
    return Certificate(kind, float("nan"), float("nan"), margin, None, None,
                       f"unavailable: {why}")


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

def energy(p: ProblemSpec, kkt: KKTPoint, alpha: float, s: float,
           M_prev: Metric, k: int, x_k: np.ndarray, x_bar_k: np.ndarray,
           lam_k: np.ndarray, lam_bar_k: np.ndarray) -> float:
    """Lyapunov energy at index k from the iterate and its extrapolations.

    Uses the anchored points
    x_hat = (k+alpha-2)/(alpha-1) x_bar - (k-1)/(alpha-1) x (same for the
    multiplier) and the metric chosen at the previous iteration.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    co = (k + alpha - 2) / (alpha - 1)
    ci = (k - 1) / (alpha - 1)
    x_hat = co * x_bar_k - ci * x_k
    lam_hat = co * lam_bar_k - ci * lam_k
    F_star = p.objective(kkt.x_star)
    obj = p.objective(x_k)
    if not np.isfinite(obj):
        return float("inf")
    gap = obj + float(kkt.lambda_star @ (p.A @ x_k - p.b)) - F_star
    return (s * (k * k - k) / (alpha - 1) ** 2) * gap \
        + 0.5 * seminorm_sq(M_prev, x_hat - kkt.x_star) \
        + 0.5 * float(np.linalg.norm(lam_hat - kkt.lambda_star) ** 2)


def perturbed_energy(trace: Trace, kkt: KKTPoint, alpha: float, s: float,
                     eps_history: list) -> np.ndarray:
    """Perturbation-corrected energies along an inexact linearized trace.

    ``eps_history[i]`` is the perturbation vector used at outer iteration
    i+1 (the perturbation at index 0 is zero by initialization and is not
    listed).  Returns the sequence starting at the initial energy:
    ``out[j]`` is the corrected energy at index j+1.  Requires a trace with
    retained iterate vectors.
    """
    if len(eps_history) != len(trace):
        raise ValueError("eps_history must align with the trace records")
    if not trace.has_vectors:
        raise CapabilityError(
            "perturbed_energy needs retained vectors; rerun with "
            "RunCallbacks(retain_vectors=True)")
    if "E1" not in trace.meta:
        raise CapabilityError("trace lacks an initial energy (no reference)")
    E1 = trace.meta["E1"]
    x1 = np.asarray(trace.meta["x1"], float)
    energies = trace.column("energy")
    if np.isnan(energies).any():
        raise CapabilityError("trace lacks energy values (no reference)")
    out = np.empty(len(trace) + 1)
    out[0] = E1
    correction = 0.0
    xs = kkt.x_star
    for i, rec in enumerate(trace.records):
        # term j = i+2 of the correction sum: s (j-1)/(alpha-1) <x_hat_j - x*, eps_{j-1}>
        x_j = rec.x
        x_jm1 = trace.records[i - 1].x if i >= 1 else x1
        j = i + 2
        x_hat_j = x_j + ((j - 2) / (alpha - 1)) * (x_j - x_jm1)
        eps = np.asarray(eps_history[i], float)
        correction += (s * (j - 1) / (alpha - 1)) * float((x_hat_j - xs) @ eps)
        out[i + 1] = energies[i] - correction
    return out


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

def energy_monotone_certificate(trace: Trace, margin: float = 1e-8) -> Certificate:
    """Check that the recorded energy never increases by more than
    margin*(1+E1) between consecutive indices."""
    if "E1" not in trace.meta:
        return _unavailable("energy_monotone", margin, "no initial energy in trace")
    vals = trace.column("energy")
    if len(vals) == 0 or np.isnan(vals).any():
        return _unavailable("energy_monotone", margin, "energy column empty")
    E1 = trace.meta["E1"]
    seq = np.concatenate(([E1], vals))
    increases = np.diff(seq)
    worst = int(np.argmax(increases))
    observed = float(increases[worst])
    slack = margin * (1.0 + abs(E1))
    return Certificate("energy_monotone", slack, observed, margin,
                       observed <= slack, k_worst=worst + 2)


def feasibility_certificate(trace: Trace, E1: float, alpha: float, s: float,
                            margin: float = 1e-6) -> Certificate:
    """Check ||Ax_k - b|| against the energy-based O(1/k^2) bound.

    For an inexact linearized trace pass the inexactness-adjusted constant
    in place of E1 (see ``rate_constant_inexact``).
    """
    if len(trace) == 0:
        return _unavailable("feasibility_bound", margin, "empty trace")
    worst_ratio = -1.0
    worst = None
    for i, rec in enumerate(trace.records):
        k = rec.k + 1  # row at outer index j describes the iterate x_{j+1}
        bound = 4 * (alpha - 1) ** 2 * np.sqrt(2 * E1) / (s * (k - 1) * (k + alpha - 3))
        obs = rec.feas
        ratio = obs / bound if bound > 0 else (0.0 if obs <= 1e-12 else np.inf)
        if ratio > worst_ratio:
            worst_ratio, worst = ratio, (k, bound, obs)
    k_w, pred, obs = worst
    return Certificate("feasibility_bound", float(pred), float(obs), margin,
                       obs <= pred * (1 + margin) + 1e-300, k_worst=k_w)


def objective_certificate(trace: Trace, E1: float, alpha: float, s: float,
                          kkt: KKTPoint, margin: float = 1e-6) -> Certificate:
    """Check |F(x_k) - F(x*)| against the energy-based O(1/k^2) bound."""
    if len(trace) == 0:
        return _unavailable("objective_bound", margin, "empty trace")
    gaps = trace.column("obj_gap")
    if np.isnan(gaps).any():
        return _unavailable("objective_bound", margin, "obj_gap column empty")
    lam_norm = float(np.linalg.norm(kkt.lambda_star))
    worst_ratio = -1.0
    worst = None
    for i, rec in enumerate(trace.records):
        k = rec.k + 1
        bound = (alpha - 1) ** 2 * E1 / (s * (k * k - k)) \
            + 4 * (alpha - 1) ** 2 * np.sqrt(2 * E1) * lam_norm \
            / (s * (k - 1) * (k + alpha - 3))
        obs = abs(gaps[i])
        ratio = obs / bound if bound > 0 else (0.0 if obs <= 1e-12 else np.inf)
        if ratio > worst_ratio:
            worst_ratio, worst = ratio, (k, bound, obs)
    k_w, pred, obs = worst
    return Certificate("objective_bound", float(pred), float(obs), margin,
                       obs <= pred * (1 + margin) + 1e-300, k_worst=k_w)


def square_summability(trace: Trace, alpha: float, M_schedule=None,
                       margin: float = 1e-6) -> Certificate:
    """Check that sum k^2 (||x_{k+1}-x_bar||_M^2 + ||lam_{k+1}-lam_bar||^2)
    plateaus and stays below the telescoped energy budget 2(alpha-1)^2 E1.

    The plateau test compares last-quartile and first-quartile increment
    means and is only applied when at least 8 records exist.
    """
    if len(trace) == 0:
        return _unavailable("square_summability", margin, "empty trace")
    if "E1" not in trace.meta:
        return _unavailable("square_summability", margin, "no initial energy in trace")
    E1 = trace.meta["E1"]
    ks = trace.column("k")
    inc = ks ** 2 * (trace.column("dx_bar_msq") + trace.column("dlam_bar_sq"))
    total = float(inc.sum())
    predicted = 2 * (alpha - 1) ** 2 * E1
    bound_ok = total <= predicted * (1 + margin) + 1e-300
    decay_ok = True
    if len(inc) >= 8:
        q = len(inc) // 4
        decay_ok = float(inc[-q:].mean()) <= float(inc[:q].mean()) + 1e-300
    return Certificate("square_summability", float(predicted), total, margin,
                       bool(bound_ok and decay_ok),
                       k_worst=int(ks[np.argmax(inc)]) if len(inc) else None,
                       detail="" if decay_ok else "tail increments not decaying")


def rate_slope(series, k_min: int, k_max: int) -> float:
    """Least-squares slope of log(value) against log(k) on a window.

    Values below 1e-14 are treated as noise and dropped; fewer than 5
    usable points raises InsufficientDataError.
    """
    ks, vs = [], []
    for k, v in series:
        if k_min <= k <= k_max and v >= 1e-14:
            ks.append(float(k))
            vs.append(float(v))
    if len(ks) < 5:
        raise InsufficientDataError(
            f"need at least 5 usable points in [{k_min}, {k_max}], got {len(ks)}")
    coef = np.polyfit(np.log(np.asarray(ks)), np.log(np.asarray(vs)), 1)
    return float(coef[0])


def rate_slope_certificate(trace: Trace, k_min: int = 10, k_max: int = 500,
                           threshold: float = -1.5) -> Certificate:
    """Fit the empirical decay rate of the feasibility violation."""
    series = [(rec.k + 1, rec.feas) for rec in trace.records]
    try:
        slope = rate_slope(series, k_min, k_max)
    except InsufficientDataError as exc:
        return _unavailable("rate_slope", 0.0, str(exc))
    return Certificate("rate_slope", threshold, slope, 0.0, slope <= threshold)


def rate_constant_inexact(E1: float, alpha: float, s: float, L_g: float,
                          eps_norms, tail: float = 0.0) -> float:
    """Inexactness-adjusted constant replacing E1 in the rate bounds.

    ``eps_norms[i]`` is the perturbation norm at outer iteration i+1; the
    weighted ledger sum(k ||eps_k||) is completed by an analytic ``tail``
    bound for the iterations beyond the recorded horizon.
    """
    if L_g <= 0:
        raise CapabilityError("inexact rate constant needs L_g > 0")
    eps_norms = np.asarray(eps_norms, float)
    ks = np.arange(1, len(eps_norms) + 1)
    S = float((ks * eps_norms).sum()) + tail
    return E1 + (s / (alpha - 1)) * (np.sqrt(2 * E1 / (s * L_g))
                                     + 2 * S / ((alpha - 1) * L_g)) * S


def cubic_schedule_tail(eps0: float, K: int) -> float:
    """Upper bound on sum_{j>K} j * eps0/(j+1)^3 (<= eps0/(K+1))."""
    return eps0 / (K + 1)
