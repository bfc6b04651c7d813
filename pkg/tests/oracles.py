"""Independent brute-force oracles used to freeze expected test values.

Nothing here calls into the package's numerical paths: minimizers come from
grid search with local refinement, gradients from central differences, and
the tiny-QP solutions from explicit active-set enumeration.
"""

import numpy as np


def refine_minimize_1d(fun, lo, hi, rounds=5, points=2001):
    """Grid search with shrinking windows; precision ~ (hi-lo)/points^rounds."""
    for _ in range(rounds):
        xs = np.linspace(lo, hi, points)
        vals = np.array([fun(x) for x in xs])
        i = int(np.argmin(vals))
        lo = xs[max(i - 1, 0)]
        hi = xs[min(i + 1, points - 1)]
    return 0.5 * (lo + hi)


def prox_oracle_scalar(penalty, v, t):
    """argmin_u t*penalty(u) + 0.5 (u - v)^2 by bracketed grid refinement."""
    R = abs(v) + t + 1.0
    return refine_minimize_1d(lambda u: t * penalty(u) + 0.5 * (u - v) ** 2,
                              -R, R)


def refine_minimize_2d(fun, center, radius, rounds=6, points=81):
    """Vectorized 2-D grid search with shrinking windows around the argmin."""
    cx, cy = center
    for _ in range(rounds):
        xs = np.linspace(cx - radius, cx + radius, points)
        ys = np.linspace(cy - radius, cy + radius, points)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        V = fun(X, Y)
        i, j = np.unravel_index(np.argmin(V), V.shape)
        cx, cy = xs[i], ys[j]
        radius *= 2.5 / points
    return np.array([cx, cy])


def fd_gradient(fun, x, h=1e-6):
    """Central finite-difference gradient."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def coordinate_descent_l1_quadratic(H, c, n_sweeps=20000, tol=1e-13):
    """Minimize 0.5 x'Hx + c'x + |x|_1 by exact coordinate minimization."""
    n = len(c)
    x = np.zeros(n)
    for _ in range(n_sweeps):
        delta = 0.0
        for i in range(n):
            rest = H[i] @ x - H[i, i] * x[i]
            zi = -(c[i] + rest) / H[i, i]
            new = np.sign(zi) * max(abs(zi) - 1.0 / H[i, i], 0.0)
            delta = max(delta, abs(new - x[i]))
            x[i] = new
        if delta < tol:
            break
    return x


def active_set_qp(Q, q, A, b):
    """Exact solution of min 0.5 x'Qx + q'x s.t. Ax=b, x>=0 for tiny n.

    Enumerates all free/fixed sign patterns, solves the equality KKT system
    on each, and keeps the candidates that satisfy primal and dual
    feasibility; returns the best (x, lam)."""
    n = Q.shape[0]
    m = A.shape[0]
    best = None
    for mask in range(1 << n):
        free = [i for i in range(n) if (mask >> i) & 1]
        nf = len(free)
        if nf < m:
            continue  # cannot satisfy m equality constraints generically
        Qf = Q[np.ix_(free, free)]
        Af = A[:, free]
        K = np.block([[Qf, Af.T], [Af, np.zeros((m, m))]])
        rhs = np.concatenate([-q[free], b])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            continue
        x = np.zeros(n)
        x[free] = sol[:nf]
        lam = sol[nf:]
        if (x[free] < -1e-9).any():
            continue
        mu = Q @ x + q + A.T @ lam  # must be >= 0 off the free set
        fixed = [i for i in range(n) if i not in free]
        if fixed and (mu[fixed] < -1e-9).any():
            continue
        if np.linalg.norm(A @ x - b) > 1e-8 * (1 + np.linalg.norm(b)):
            continue
        obj = 0.5 * x @ (Q @ x) + q @ x
        if best is None or obj < best[0] - 1e-12:
            best = (obj, x, lam)
    if best is None:
        raise RuntimeError("active-set enumeration found no KKT candidate")
    return best[1], best[2]
