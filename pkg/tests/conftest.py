import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ipd.core import FunctionDescriptor, ProblemSpec, ReferenceSolution


def make_quad_toy(n=20, m=5, seed=42):
    """Equality-constrained strongly convex QP with a dense-KKT reference."""
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((n, n))
    Q = 2.0 * H.T @ H + 0.5 * np.eye(n)
    q = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = rng.uniform(0.0, 1.0, m)
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-q, b]))
    xs, ls = sol[:n], sol[n:]
    p = ProblemSpec(f=FunctionDescriptor.zero(), A=A, b=b,
                    g=FunctionDescriptor.quadratic(Q, q),
                    name=f"quad_toy_{n}x{m}_s{seed}")
    p.reference = ReferenceSolution(x_star=xs, F_star=p.objective(xs),
                                    lambda_star=ls, provenance="oracle-computed")
    return p


@pytest.fixture(scope="session")
def quad_toy():
    return make_quad_toy()
