"""Closed-form proximal operators for the supported objective classes."""

from __future__ import annotations

import numpy as np

from .core import CapabilityError, FunctionDescriptor


def prox_l1(v: np.ndarray, t: float) -> np.ndarray:
    """Soft threshold: argmin_x t|x|_1 + 0.5||x - v||^2, componentwise.

    Ties at |v_i| = t map to exactly 0.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.asarray(v, float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def project_nonneg(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(v, float), 0.0)


def prox_l1_l2(v: np.ndarray, t: float, beta: float) -> np.ndarray:
    """Prox of |x|_1 + (beta/2)|x|_2^2: soft threshold then shrink by 1+t*beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return prox_l1(v, t) / (1.0 + t * beta)


def prox_quadratic(Q: np.ndarray, q: np.ndarray, v: np.ndarray, t: float) -> np.ndarray:
    """Prox of 0.5 x'Qx + q'x: solve (I + tQ) x = v - t q by dense factorization."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.asarray(v, float)
    if t == 0:
        return v.copy()
    n = len(v)
    return np.linalg.solve(np.eye(n) + t * Q, v - t * q)


def prox_dispatch(d: FunctionDescriptor, v: np.ndarray, t: float) -> np.ndarray:
    """Route to the closed-form prox for the descriptor's kind."""
    if not d.has_prox:
        raise CapabilityError(f"{d.kind} has no prox rule")
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = np.asarray(v, float)
    if d.kind == "zero":
        return v.copy()
    if d.kind == "l1":
        return prox_l1(v, t)
    if d.kind == "nonneg_indicator":
        return project_nonneg(v)
    if d.kind == "l1_plus_scaled_sq":
        return prox_l1_l2(v, t, d.beta)
    if d.kind == "quadratic":
        return prox_quadratic(d.Q, d.q, v, t)
    return np.asarray(d.prox_fn(v, t), float)
