"""Problem model, metrics, KKT residuals and shared numerical primitives."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class CapabilityError(TypeError):
    """An operation was requested that the function/algorithm cannot provide."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed (singular or indefinite system, etc.)."""


class DivergedError(RuntimeError):
    """A solver produced a non-finite iterate; carries the last good state."""

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace


class OracleFailure(RuntimeError):
    """Independent reference computations disagreed; carries both candidates."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = candidates


class InsufficientDataError(ValueError):
    """Not enough usable points for the requested fit or check."""


# ---------------------------------------------------------------------------
# Function descriptors
# ---------------------------------------------------------------------------

KINDS = ("zero", "l1", "nonneg_indicator", "l1_plus_scaled_sq", "quadratic", "custom")


@dataclass(frozen=True)
class FunctionDescriptor:
    """A convex function with capability flags.

    Supported kinds: ``zero``, ``l1``, ``nonneg_indicator``,
    ``l1_plus_scaled_sq`` (weight ``beta``), ``quadratic`` (dense PSD ``Q``
    and linear term ``q``), and ``custom`` (user supplied callables).
    ``lipschitz_constant`` is the gradient Lipschitz constant for smooth
    kinds and 0 for nonsmooth ones.
    """

    kind: str
    beta: float = 0.0
    Q: np.ndarray | None = None
    q: np.ndarray | None = None
    lipschitz_constant: float = 0.0
    value_fn: object = None
    prox_fn: object = None
    grad_fn: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown function kind {self.kind!r}")
        if self.kind == "l1_plus_scaled_sq" and not self.beta > 0:
            raise ValueError("l1_plus_scaled_sq requires beta > 0")
        if self.kind == "quadratic":
            Q = np.asarray(self.Q, dtype=float)
            if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
                raise ValueError("quadratic Q must be square")
            scale = max(1.0, float(np.abs(Q).max()))
            if np.abs(Q - Q.T).max() > 1e-12 * scale:
                raise ValueError("quadratic Q must be symmetric (1e-12 relative)")
            object.__setattr__(self, "Q", Q)
            q = np.zeros(Q.shape[0]) if self.q is None else np.asarray(self.q, float)
            if q.shape != (Q.shape[0],):
                raise ValueError("quadratic q has wrong length")
            object.__setattr__(self, "q", q)
            est = spectral_norm_estimate(Q, tol=1e-9)
            if self.lipschitz_constant == 0.0:
                object.__setattr__(self, "lipschitz_constant", est)
            elif self.lipschitz_constant < est * (1 - 1e-6):
                raise ValueError("declared lipschitz_constant below ||Q|| estimate")

    # -- capabilities ------------------------------------------------------

    @property
    def has_prox(self) -> bool:
        if self.kind == "custom":
            return self.prox_fn is not None
        return self.kind in ("zero", "l1", "nonneg_indicator", "l1_plus_scaled_sq", "quadratic")

    @property
    def has_gradient(self) -> bool:
        if self.kind == "custom":
            return self.grad_fn is not None
        return self.kind in ("zero", "quadratic")

    # -- evaluation --------------------------------------------------------

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, float)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return float(np.abs(x).sum())
        if self.kind == "nonneg_indicator":
            # saturating +inf for infeasible user-supplied points
            return 0.0 if (x >= 0).all() else float("inf")
        if self.kind == "l1_plus_scaled_sq":
            return float(np.abs(x).sum() + 0.5 * self.beta * (x @ x))
        if self.kind == "quadratic":
            return float(0.5 * (x @ (self.Q @ x)) + self.q @ x)
        if self.value_fn is None:
            raise CapabilityError("custom function lacks a value callable")
        return float(self.value_fn(x))

    def prox(self, v: np.ndarray, t: float) -> np.ndarray:
        from . import prox as _prox  # local import avoids a cycle

        return _prox.prox_dispatch(self, v, t)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "quadratic":
            return self.Q @ x + self.q
        if self.kind == "custom" and self.grad_fn is not None:
            return np.asarray(self.grad_fn(x), float)
        raise CapabilityError(f"{self.kind} has no gradient")

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def l1(cls):
        return cls("l1")

    @classmethod
    def nonneg(cls):
        return cls("nonneg_indicator")

    @classmethod
    def l1_l2(cls, beta: float):
        return cls("l1_plus_scaled_sq", beta=float(beta))

    @classmethod
    def quadratic(cls, Q, q=None, lipschitz_constant: float = 0.0):
        return cls("quadratic", Q=np.asarray(Q, float), q=q,
                   lipschitz_constant=lipschitz_constant)

    @classmethod
    def custom(cls, value_fn=None, prox_fn=None, grad_fn=None, lipschitz_constant=0.0):
        return cls("custom", value_fn=value_fn, prox_fn=prox_fn, grad_fn=grad_fn,
                   lipschitz_constant=float(lipschitz_constant))


# ---------------------------------------------------------------------------
# Metrics (positive semidefinite weights for semi-norms)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Metric:
    """A PSD weight matrix in one of four representations.

    ``kind`` is one of ``zero``, ``scaled_identity`` (scalar ``c``),
    ``diagonal`` (nonnegative vector ``d``) or ``dense`` (PSD matrix ``m``).
    """

    kind: str
    c: float = 0.0
    d: np.ndarray | None = None
    m: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "zero":
            return
        if self.kind == "scaled_identity":
            if self.c < 0:
                raise ValueError("scaled_identity requires c >= 0")
        elif self.kind == "diagonal":
            d = np.asarray(self.d, float)
            if (d < 0).any():
                raise ValueError("diagonal metric requires nonnegative entries")
            object.__setattr__(self, "d", d)
        elif self.kind == "dense":
            m = np.asarray(self.m, float)
            if np.abs(m - m.T).max() > 1e-12 * max(1.0, np.abs(m).max()):
                raise ValueError("dense metric must be symmetric")
            if np.linalg.eigvalsh(m).min() < -1e-10 * max(1.0, np.abs(m).max()):
                raise ValueError("dense metric must be positive semidefinite")
            object.__setattr__(self, "m", m)
        else:
            raise ValueError(f"unknown metric kind {self.kind!r}")

    @classmethod
    def zeros(cls):
        return cls("zero")

    @classmethod
    def scaled(cls, c: float):
        return cls("scaled_identity", c=float(c))

    @classmethod
    def diag(cls, d):
        return cls("diagonal", d=np.asarray(d, float))

    @classmethod
    def dense(cls, m):
        return cls("dense", m=np.asarray(m, float))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "scaled_identity" and self.c == 0.0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "scaled_identity":
            return self.c * x
        if self.kind == "diagonal":
            return self.d * x
        return self.m @ x

    def to_dense(self, n: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros((n, n))
        if self.kind == "scaled_identity":
            return self.c * np.eye(n)
        if self.kind == "diagonal":
            return np.diag(self.d)
        return self.m

    def dominates(self, other: "Metric") -> bool:
        """PSD-order comparison ``self >= other`` for scalar/diagonal kinds."""
        a, b = self, other
        if b.is_zero:
            return True
        if a.kind == "dense" or b.kind == "dense":
            raise CapabilityError("ordering undecided for dense metrics")
        if a.kind == "scaled_identity" and b.kind == "scaled_identity":
            return a.c >= b.c
        # compare elementwise on the diagonal
        da = a.d if a.kind == "diagonal" else None
        db = b.d if b.kind == "diagonal" else None
        if da is None and a.kind == "zero":
            da = np.zeros(len(db))
        if db is None and b.kind == "zero":
            db = np.zeros(len(da))
        if da is None:
            da = np.full(len(db), a.c)
        if db is None:
            db = np.full(len(da), b.c)
        return bool((da >= db).all())

    def describe(self) -> dict:
        if self.kind == "zero":
            return {"kind": "zero"}
        if self.kind == "scaled_identity":
            return {"kind": "scaled_identity", "c": self.c}
        if self.kind == "diagonal":
            return {"kind": "diagonal", "d": self.d.tolist()}
        return {"kind": "dense", "m": self.m.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "Metric":
        kind = obj["kind"]
        if kind == "zero":
            return cls.zeros()
        if kind == "scaled_identity":
            return cls.scaled(obj["c"])
        if kind == "diagonal":
            return cls.diag(obj["d"])
        return cls.dense(obj["m"])


def seminorm_sq(M: Metric, x: np.ndarray) -> float:
    """Squared semi-norm x'Mx for a PSD metric M."""
    x = np.asarray(x, float)
    return float(x @ M.apply(x))


# ---------------------------------------------------------------------------
# Reference solutions and KKT points
# ---------------------------------------------------------------------------

@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    F_star: float | None
    lambda_star: np.ndarray | None = None
    provenance: str = "planted"  # or "oracle-computed"


@dataclass
class KKTPoint:
    x_star: np.ndarray
    lambda_star: np.ndarray


# ---------------------------------------------------------------------------
# Problem specification
# ---------------------------------------------------------------------------

@dataclass
class ProblemSpec:
    """Linearly constrained composite problem: min f(x)+g(x) s.t. Ax = b.

    ``f`` is the nonsmooth proximable part, ``g`` the optional smooth part
    (with Lipschitz gradient), ``A`` a dense m-by-n matrix. Instances are
    treated as immutable after construction.
    """

    f: FunctionDescriptor
    A: np.ndarray
    b: np.ndarray
    g: FunctionDescriptor | None = None
    reference: ReferenceSolution | None = None
    name: str = ""
    _sigma_A: float = field(default=0.0, repr=False)

    def __post_init__(self):
        self.A = np.ascontiguousarray(np.asarray(self.A, float))
        self.b = np.asarray(self.b, float)
        if self.A.ndim != 2:
            raise ValueError("A must be a matrix")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError("b length must match rows of A")
        if self.g is not None and self.g.has_gradient:
            self._check_lipschitz_declaration()

    def _check_lipschitz_declaration(self, probes: int = 5, seed: int = 20240):
        rng = np.random.default_rng(seed)
        L = self.g.lipschitz_constant
        for _ in range(probes):
            x = rng.standard_normal(self.n)
            y = rng.standard_normal(self.n)
            lhs = np.linalg.norm(self.g.gradient(x) - self.g.gradient(y))
            rhs = (1 + 1e-6) * L * np.linalg.norm(x - y)
            if lhs > rhs + 1e-12:
                raise ValueError(
                    f"declared L_g={L} violated on a probe pair ({lhs:.3e} > {rhs:.3e})")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def L_g(self) -> float:
        return 0.0 if self.g is None else self.g.lipschitz_constant

    def objective(self, x: np.ndarray) -> float:
        val = self.f.value(x)
        if self.g is not None:
            val += self.g.value(x)
        return val

    def grad_g(self, x: np.ndarray) -> np.ndarray:
        if self.g is None:
            return np.zeros(self.n)
        return self.g.gradient(x)

    def feasibility(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.A @ x - self.b))

    def sigma_A(self) -> float:
        """Largest singular value of A (cached)."""
        if self._sigma_A == 0.0 and self.A.size:
            self._sigma_A = spectral_norm_estimate(self.A, tol=1e-10)
        return self._sigma_A


def evaluate_lagrangian(p: ProblemSpec, x: np.ndarray, lam: np.ndarray) -> float:
    """L(x, lam) = f(x) + g(x) + <lam, Ax - b>; may return +inf."""
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    if x.shape != (p.n,) or lam.shape != (p.m,):
        raise ValueError("dimension mismatch in evaluate_lagrangian")
    val = p.objective(x)
    if not np.isfinite(val):
        return val
    return val + float(lam @ (p.A @ x - p.b))


def kkt_residual(p: ProblemSpec, x: np.ndarray, lam: np.ndarray,
                 t: float | None = None) -> tuple[float, float]:
    """Stationarity and feasibility residuals at (x, lam).

    Feasibility is ||Ax - b||.  Stationarity is the prox-gradient fixed
    point residual ||x - prox_{t f}(x - t (grad g(x) + A'lam))|| / t, which
    vanishes exactly at KKT points of problems with proximable f.  The step
    ``t`` defaults to 1/max(1, L_g).
    """
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    if x.shape != (p.n,) or lam.shape != (p.m,):
        raise ValueError("dimension mismatch in kkt_residual")
    if not p.f.has_prox:
        raise CapabilityError("kkt_residual needs a proximable f")
    if t is None:
        t = 1.0 / max(1.0, p.L_g)
    if t <= 0:
        raise ValueError("t must be positive")
    feas = p.feasibility(x)
    v = p.grad_g(x) + p.A.T @ lam
    station = float(np.linalg.norm(x - p.f.prox(x - t * v, t)) / t)
    return station, feas


def is_kkt_point(p: ProblemSpec, x, lam, tol: float = 1e-8) -> bool:
    station, feas = kkt_residual(p, x, lam)
    return station <= tol and feas <= tol


def recovery_snr(x: np.ndarray, x_star: np.ndarray) -> float:
    """Signal-to-noise ratio of a recovered vector in dB, capped at 1e6."""
    x = np.asarray(x, float)
    x_star = np.asarray(x_star, float)
    num = float(np.linalg.norm(x_star - x_star.mean()) ** 2)
    den = float(np.linalg.norm(x - x_star) ** 2)
    if den == 0.0:
        return 1e6
    return 10.0 * np.log10(num / den)


# ---------------------------------------------------------------------------
# Spectral norm by power iteration
# ---------------------------------------------------------------------------

def spectral_norm_estimate(A: np.ndarray, tol: float = 1e-8, seed: int = 0,
                           max_iter: int = 5000, v0: np.ndarray | None = None):
    """Largest singular value of A by power iteration on A'A.

    Deterministic for a fixed seed.  Returns 0.0 for the zero matrix.  With
    ``return_vector=True`` semantics folded in: pass ``v0`` to warm start.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = np.asarray(A, float)
    if A.size == 0 or not np.abs(A).max() > 0:
        return 0.0
    n = A.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) if v0 is None else np.asarray(v0, float).copy()
    nv = np.linalg.norm(v)
    if nv == 0:
        v = rng.standard_normal(n)
        nv = np.linalg.norm(v)
    v /= nv
    sigma = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:  # v happened to be in the null space; restart
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        new_sigma = np.sqrt(nw)  # Rayleigh-like estimate of sigma_max
        v = w / nw
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1e-300):
            return float(new_sigma)
        sigma = new_sigma
    return float(sigma)


def operator_norm_estimate(apply_fn, n: int, tol: float = 1e-6, seed: int = 0,
                           v0: np.ndarray | None = None, max_iter: int = 2000):
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Returns ``(lam_max, vector)`` so callers can warm start the next call.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) if v0 is None else np.asarray(v0, float).copy()
    nv = np.linalg.norm(v)
    if nv == 0:
        v = rng.standard_normal(n)
        nv = np.linalg.norm(v)
    v /= nv
    lam = 0.0
    for _ in range(max_iter):
        w = apply_fn(v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, v
        new_lam = float(v @ w)
        v = w / nw
        if abs(new_lam - lam) <= tol * max(abs(new_lam), 1e-300):
            return max(new_lam, nw), v
        lam = new_lam
    return max(lam, 0.0), v


# ---------------------------------------------------------------------------
# JSON problem serialization
# ---------------------------------------------------------------------------

def _descriptor_to_dict(d: FunctionDescriptor | None):
    if d is None:
        return None
    obj = {"kind": d.kind}
    if d.kind == "l1_plus_scaled_sq":
        obj["beta"] = d.beta
    if d.kind == "quadratic":
        obj["Q"] = d.Q.tolist()
        obj["q"] = d.q.tolist()
        obj["lipschitz_constant"] = d.lipschitz_constant
    return obj


def _descriptor_from_dict(obj):
    if obj is None:
        return None
    kind = obj["kind"]
    if kind == "quadratic":
        return FunctionDescriptor.quadratic(obj["Q"], obj.get("q"),
                                            obj.get("lipschitz_constant", 0.0))
    if kind == "l1_plus_scaled_sq":
        return FunctionDescriptor.l1_l2(obj["beta"])
    if kind == "custom":
        raise CapabilityError("custom descriptors are not serializable")
    return FunctionDescriptor(kind)


def problem_to_dict(p: ProblemSpec) -> dict:
    obj = {
        "f": _descriptor_to_dict(p.f),
        "g": _descriptor_to_dict(p.g),
        "A": p.A.tolist(),
        "b": p.b.tolist(),
        "reference": None,
    }
    if p.reference is not None:
        r = p.reference
        obj["reference"] = {
            "x_star": r.x_star.tolist(),
            "F_star": r.F_star,
            "lambda_star": None if r.lambda_star is None else r.lambda_star.tolist(),
            "provenance": r.provenance,
        }
    if p.name:
        obj["name"] = p.name
    return obj


def problem_from_dict(obj: dict) -> ProblemSpec:
    ref = None
    if obj.get("reference"):
        r = obj["reference"]
        lam = r.get("lambda_star")
        ref = ReferenceSolution(
            x_star=np.asarray(r["x_star"], float),
            F_star=r.get("F_star"),
            lambda_star=None if lam is None else np.asarray(lam, float),
            provenance=r.get("provenance", "planted"),
        )
    return ProblemSpec(
        f=_descriptor_from_dict(obj["f"]),
        g=_descriptor_from_dict(obj.get("g")),
        A=np.asarray(obj["A"], float),
        b=np.asarray(obj["b"], float),
        reference=ref,
        name=obj.get("name", ""),
    )


def save_problem(p: ProblemSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(p), fh)


def load_problem(path) -> ProblemSpec:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
