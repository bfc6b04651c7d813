"""Assembly and solution of the per-iteration quadratic subproblems.

Each outer step minimizes ``f(x) + smooth model`` where the smooth model is
a metric proximal term plus an augmented penalty on the constraint (plus,
optionally, a quadratic smooth objective kept inside the subproblem).  The
model is held in expanded, constant-free form: 0.5 x'Hx + <linear, x> with
H = c1*M + c2*A'A (+ Q) applied as an operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (CapabilityError, FunctionDescriptor, Metric, NumericalError,
                   ProblemSpec, operator_norm_estimate)


@dataclass
class QuadraticModel:
    c1: float
    M: Metric
    c2: float
    A: np.ndarray
    linear: np.ndarray
    Q: np.ndarray | None = None
    lipschitz: float = 0.0

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = self.c2 * (self.A.T @ (self.A @ x)) + self.linear
        if self.c1 != 0.0 and not self.M.is_zero:
            g = g + self.c1 * self.M.apply(x)
        if self.Q is not None:
            g = g + self.Q @ x
        return g

    def hess_apply(self, x: np.ndarray) -> np.ndarray:
        return self.grad(x) - self.linear

    def value(self, x: np.ndarray) -> float:
        """Constant-free model value 0.5 x'Hx + <linear, x>."""
        return float(0.5 * (x @ self.hess_apply(x)) + self.linear @ x)

    def hess_dense(self) -> np.ndarray:
        n = self.A.shape[1]
        H = self.c2 * (self.A.T @ self.A)
        if self.c1 != 0.0 and not self.M.is_zero:
            H += self.c1 * self.M.to_dense(n)
        if self.Q is not None:
            H += self.Q
        return H


@dataclass
class InnerReport:
    solution: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def _model_lipschitz(c1: float, M: Metric, c2: float, p: ProblemSpec,
                     Q: np.ndarray | None, op_cache: dict | None) -> float:
    """Upper bound on lambda_max of c1*M + c2*A'A (+ Q).

    Exact when M is zero/scaled-identity and Q is absent (shared
    eigenvectors with A'A); otherwise power iteration with a warm-started
    vector kept in ``op_cache``.
    """
    if Q is None and M.kind in ("zero", "scaled_identity"):
        return c1 * (M.c if M.kind == "scaled_identity" else 0.0) + c2 * p.sigma_A() ** 2

    def apply_fn(v):
        w = c2 * (p.A.T @ (p.A @ v))
        if c1 != 0.0 and not M.is_zero:
            w = w + c1 * M.apply(v)
        if Q is not None:
            w = w + Q @ v
        return w

    warm = None if op_cache is None else op_cache.get("warm")
    lam, vec = operator_norm_estimate(apply_fn, p.n, tol=1e-6, v0=warm)
    if op_cache is not None:
        op_cache["warm"] = vec
    return lam * (1 + 1e-4)  # safety: power iteration approaches from below


def assemble_subproblem_alg1(p: ProblemSpec, k: int, alpha: float, s: float,
                             M_k: Metric, x_bar: np.ndarray, eta: np.ndarray,
                             lam_hat: np.ndarray, op_cache: dict | None = None):
    """Build the inertial-step subproblem keeping any quadratic smooth part.

    Returns ``(f_part, model)`` with model coefficients
    c1 = (k+alpha-2)/(s k) on the metric proximal term and
    c2 = s k (k+alpha-2)/(alpha-1)^2 on the constraint penalty.
    """
    if k < 1 or alpha < 3 or s <= 0:
        raise ValueError("need k >= 1, alpha >= 3, s > 0")
    if p.g is not None and p.g.kind not in ("zero", "quadratic"):
        raise CapabilityError(
            "non-quadratic smooth part cannot be kept inside the subproblem; "
            "use the linearized step instead")
    c1 = (k + alpha - 2) / (s * k)
    c2 = s * k * (k + alpha - 2) / (alpha - 1) ** 2
    Q = None
    linear = p.A.T @ lam_hat - c2 * (p.A.T @ eta)
    if not M_k.is_zero:
        linear = linear - c1 * M_k.apply(x_bar)
    if p.g is not None and p.g.kind == "quadratic":
        Q = p.g.Q
        linear = linear + p.g.q
    L = _model_lipschitz(c1, M_k, c2, p, Q, op_cache)
    return p.f, QuadraticModel(c1, M_k, c2, p.A, linear, Q, L)


def assemble_subproblem_alg2(p: ProblemSpec, k: int, alpha: float, s: float,
                             M_k: Metric, x_bar: np.ndarray, eta: np.ndarray,
                             lam_hat: np.ndarray, eps_k: np.ndarray | None = None,
                             op_cache: dict | None = None):
    """Build the linearized subproblem: g replaced by <grad g(x_bar), x>.

    ``eps_k`` is an optional perturbation subtracted from the linear term.
    """
    if k < 1 or alpha < 3 or s <= 0:
        raise ValueError("need k >= 1, alpha >= 3, s > 0")
    if p.g is None or not p.g.has_gradient:
        raise CapabilityError("linearized step needs a smooth part with gradient")
    c1 = (k + alpha - 2) / (s * k)
    c2 = s * k * (k + alpha - 2) / (alpha - 1) ** 2
    linear = p.g.gradient(x_bar) + p.A.T @ lam_hat - c2 * (p.A.T @ eta)
    if not M_k.is_zero:
        linear = linear - c1 * M_k.apply(x_bar)
    if eps_k is not None:
        linear = linear - np.asarray(eps_k, float)
    L = _model_lipschitz(c1, M_k, c2, p, None, op_cache)
    return p.f, QuadraticModel(c1, M_k, c2, p.A, linear, None, L)


def _mapping_residual(f: FunctionDescriptor, model: QuadraticModel, x, gx, L):
    pnt = f.prox(x - gx / L, 1.0 / L)
    return L * float(np.linalg.norm(x - pnt))


def fista(f_part: FunctionDescriptor, model: QuadraticModel, x0: np.ndarray,
          target_residual: float, max_iter: int = 1000) -> InnerReport:
    """Monotone FISTA on f_part(x) + model(x) with step 1/L.

    Stops when the prox-gradient mapping norm
    L * ||x - prox_{f/L}(x - grad(x)/L)|| falls to ``target_residual``;
    otherwise returns the best-objective iterate with ``converged=False``.
    The accepted objective never exceeds the objective at ``x0``.
    """
    if not f_part.has_prox:
        raise CapabilityError("inner solver needs a proximable f_part")
    L = model.lipschitz
    if L <= 0:
        raise ValueError("model lipschitz must be positive")
    x = np.asarray(x0, float).copy()
    gx = model.grad(x)
    phi = f_part.value(x) + 0.5 * (x @ gx) + 0.5 * (model.linear @ x)
    r = _mapping_residual(f_part, model, x, gx, L)
    if r <= target_residual or max_iter <= 0:
        return InnerReport(x, 0, r, r <= target_residual)
    best_x, best_phi, best_r = x, phi, r
    y = x
    t = 1.0
    for it in range(1, max_iter + 1):
        gy = model.grad(y)
        z = f_part.prox(y - gy / L, 1.0 / L)
        gz = model.grad(z)
        phi_z = f_part.value(z) + 0.5 * (z @ gz) + 0.5 * (model.linear @ z)
        if phi_z <= phi:
            x_new, phi_new, g_new = z, phi_z, gz
        else:  # monotone safeguard: keep the previous iterate
            x_new, phi_new, g_new = x, phi, gx
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t / t_new) * (z - x_new) + ((t - 1.0) / t_new) * (x_new - x)
        x, phi, gx, t = x_new, phi_new, g_new, t_new
        r = _mapping_residual(f_part, model, x, gx, L)
        if phi < best_phi:
            best_x, best_phi, best_r = x, phi, r
        if r <= target_residual:
            return InnerReport(x, it, r, True)
    return InnerReport(best_x, max_iter, best_r, False)


def direct_solve(model: QuadraticModel, f_part: FunctionDescriptor) -> np.ndarray:
    """Exact minimizer of the model when f_part is the zero function.

    Solves H x = -linear by Cholesky with iterative refinement; requires H
    positive definite and certifies ||Hx + linear|| <= 1e-10 (1 + ||linear||).
    """
    if f_part.kind != "zero":
        raise CapabilityError("direct_solve requires a zero f_part")
    H = model.hess_dense()
    try:
        factor = scipy.linalg.cho_factor(H, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        report = ""
        if H.shape[0] <= 500:
            ev = np.linalg.eigvalsh(H)
            report = f" (eigenvalue range [{ev.min():.3e}, {ev.max():.3e}])"
        raise NumericalError(f"subproblem Hessian not positive definite{report}") from exc
    rhs = -model.linear
    x = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    tol = 1e-10 * (1.0 + np.linalg.norm(model.linear))
    for _ in range(3):
        res = H @ x - rhs
        if np.linalg.norm(res) <= tol:
            break
        x = x - scipy.linalg.cho_solve(factor, res, check_finite=False)
    res_norm = float(np.linalg.norm(H @ x - rhs))
    if res_norm > tol:
        raise NumericalError(
            f"direct solve residual {res_norm:.3e} above tolerance {tol:.3e}")
    return x


def solve_subproblem(f_part: FunctionDescriptor, model: QuadraticModel,
                     x0: np.ndarray, target_residual: float,
                     max_iter: int = 1000) -> InnerReport:
    """Route to direct_solve for zero f_part, FISTA otherwise."""
    if f_part.kind == "zero":
        x = direct_solve(model, f_part)
        r = float(np.linalg.norm(model.grad(x)))
        return InnerReport(x, 1, r, True)
    return fista(f_part, model, x0, target_residual, max_iter)


def subproblem_residual_as_epsilon(report: InnerReport) -> float:
    """Map an inner solve's mapping residual onto the perturbation ledger."""
    return report.residual_norm


def step2_inclusion_residual(k: int, alpha: float, s: float, M_k: Metric,
                             x_bar: np.ndarray, x_next: np.ndarray,
                             lam_next: np.ndarray, lam_k: np.ndarray,
                             model: QuadraticModel, A: np.ndarray,
                             smooth_correction: np.ndarray | None = None) -> float:
    """Residual of the step-2 optimality inclusion after the dual update.

    Recovers the implied subgradient v = -grad model(x_next) (+ correction
    moving it from the f slot to the full-objective slot) and evaluates

        (k+alpha-2)/k M_k(x_next - x_bar) + s (v + A'(lam_next + w))

    with w = (k-1)/(alpha-1) (lam_next - lam_k).  Zero, up to the inner
    solve residual, whenever steps 2 and 3 are consistent.
    """
    v = -model.grad(x_next)
    if smooth_correction is not None:
        v = v + smooth_correction
    w = lam_next + ((k - 1) / (alpha - 1)) * (lam_next - lam_k)
    r = ((k + alpha - 2) / k) * M_k.apply(x_next - x_bar) + s * (v + A.T @ w)
    return float(np.linalg.norm(r))
