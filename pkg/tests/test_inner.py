import numpy as np
import pytest

from ipd.core import (CapabilityError, FunctionDescriptor, Metric,
                      NumericalError, ProblemSpec)
from ipd.inner import (QuadraticModel, assemble_subproblem_alg1,
                       assemble_subproblem_alg2, direct_solve, fista,
                       solve_subproblem, step2_inclusion_residual,
                       subproblem_residual_as_epsilon)
from ipd.solvers import (AlgParams, dual_anchor, dual_update, eta_target,
                         extrapolate, init_state, ippd_step)

from oracles import coordinate_descent_l1_quadratic, fd_gradient


def seeded_problem(m=4, n=6, seed=77, with_g=True):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    g = None
    if with_g:
        W = rng.standard_normal((n, n))
        g = FunctionDescriptor.quadratic(W.T @ W + 0.2 * np.eye(n),
                                         rng.standard_normal(n))
    return ProblemSpec(f=FunctionDescriptor.l1(), A=A, b=b, g=g), rng


def point_model(c, n):
    """Model 0.5||x - c||^2 expressed in expanded form."""
    A0 = np.zeros((1, n))
    return QuadraticModel(c1=1.0, M=Metric.scaled(1.0), c2=0.0, A=A0,
                          linear=-np.asarray(c, float), lipschitz=1.0)


class TestAssembly:
    def test_zero_metric_coefficients(self):
        p, rng = seeded_problem(with_g=False)
        k, alpha, s = 3, 4.0, 2.0
        x_bar = rng.standard_normal(p.n)
        eta = rng.standard_normal(p.m)
        lam_hat = rng.standard_normal(p.m)
        _f, model = assemble_subproblem_alg1(p, k, alpha, s, Metric.zeros(),
                                             x_bar, eta, lam_hat)
        rho = s * k * (k + alpha - 2) / (alpha - 1) ** 2
        assert model.c2 == pytest.approx(rho)
        x = rng.standard_normal(p.n)
        assert np.allclose(model.hess_apply(x), rho * (p.A.T @ (p.A @ x)))

    def test_k1_alpha3_s1_coefficients(self):
        p, rng = seeded_problem(with_g=False)
        _f, model = assemble_subproblem_alg1(
            p, 1, 3.0, 1.0, Metric.scaled(1.0), np.zeros(p.n),
            np.zeros(p.m), np.zeros(p.m))
        assert model.c1 == pytest.approx(2.0)
        assert model.c2 == pytest.approx(0.5)

    def test_gradient_matches_finite_differences(self):
        p, rng = seeded_problem()
        k, alpha, s = 5, 3.5, 0.7
        M = Metric.diag(rng.uniform(0.1, 2.0, p.n))
        x_bar = rng.standard_normal(p.n)
        eta = rng.standard_normal(p.m)
        lam_hat = rng.standard_normal(p.m)
        _f, model = assemble_subproblem_alg1(p, k, alpha, s, M, x_bar, eta, lam_hat)
        x = rng.standard_normal(p.n)
        fd = fd_gradient(model.value, x)
        g = model.grad(x)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))

    def test_alg2_gradient_matches_finite_differences(self):
        p, rng = seeded_problem()
        k, alpha, s = 2, 4.0, 1.3
        M = Metric.scaled(s * p.L_g)
        x_bar = rng.standard_normal(p.n)
        eta = rng.standard_normal(p.m)
        lam_hat = rng.standard_normal(p.m)
        eps = rng.standard_normal(p.n) * 1e-3
        _f, model = assemble_subproblem_alg2(p, k, alpha, s, M, x_bar, eta,
                                             lam_hat, eps)
        x = rng.standard_normal(p.n)
        fd = fd_gradient(model.value, x)
        assert np.linalg.norm(model.grad(x) - fd) <= 1e-5 * max(
            1.0, np.linalg.norm(fd))

    def test_alg1_rejects_nonquadratic_smooth(self):
        g = FunctionDescriptor.custom(value_fn=lambda x: np.log1p(x @ x),
                                      grad_fn=lambda x: 2 * x / (1 + x @ x),
                                      lipschitz_constant=2.0)
        p = ProblemSpec(f=FunctionDescriptor.l1(), A=np.eye(3), b=np.zeros(3), g=g)
        with pytest.raises(CapabilityError):
            assemble_subproblem_alg1(p, 1, 3.0, 1.0, Metric.zeros(),
                                     np.zeros(3), np.zeros(3), np.zeros(3))

    def test_alg2_requires_smooth_part(self):
        p, _ = seeded_problem(with_g=False)
        with pytest.raises(CapabilityError):
            assemble_subproblem_alg2(p, 1, 3.0, 1.0, Metric.zeros(),
                                     np.zeros(p.n), np.zeros(p.m), np.zeros(p.m))

    def test_alg2_with_zero_smooth_matches_alg1(self):
        p, rng = seeded_problem(with_g=False)
        p_zero_g = ProblemSpec(f=p.f, A=p.A, b=p.b,
                               g=FunctionDescriptor.quadratic(np.zeros((p.n, p.n))))
        k, alpha, s = 3, 3.0, 1.0
        M = Metric.scaled(0.4)
        x_bar = rng.standard_normal(p.n)
        eta = rng.standard_normal(p.m)
        lam_hat = rng.standard_normal(p.m)
        _f1, m1 = assemble_subproblem_alg1(p, k, alpha, s, M, x_bar, eta, lam_hat)
        _f2, m2 = assemble_subproblem_alg2(p_zero_g, k, alpha, s, M, x_bar,
                                           eta, lam_hat, np.zeros(p.n))
        assert np.allclose(m1.linear, m2.linear)
        x = rng.standard_normal(p.n)
        assert np.allclose(m1.grad(x), m2.grad(x))

    def test_lipschitz_upper_bounds_operator(self):
        p, rng = seeded_problem()
        M = Metric.diag(rng.uniform(0, 3, p.n))
        _f, model = assemble_subproblem_alg1(p, 4, 5.0, 1.1, M,
                                             rng.standard_normal(p.n),
                                             rng.standard_normal(p.m),
                                             rng.standard_normal(p.m))
        for _ in range(20):
            x = rng.standard_normal(p.n)
            assert np.linalg.norm(model.hess_apply(x)) <= \
                model.lipschitz * np.linalg.norm(x) * (1 + 1e-10)


class TestFista:
    def test_zero_f_reaches_center(self):
        c = np.array([1.0, -2.0, 3.0])
        rep = fista(FunctionDescriptor.zero(), point_model(c, 3),
                    np.zeros(3), 1e-10, 500)
        assert rep.converged
        assert np.allclose(rep.solution, c, atol=1e-9)

    def test_l1_one_prox_step(self):
        v = np.array([2.0, -0.3, 0.0, 1.1])
        rep = fista(FunctionDescriptor.l1(), point_model(v, 4),
                    np.zeros(4), 1e-12, 50)
        expect = np.sign(v) * np.maximum(np.abs(v) - 1.0, 0)
        assert rep.converged
        assert np.allclose(rep.solution, expect, atol=1e-10)

    def test_matches_coordinate_descent_oracle(self):
        rng = np.random.default_rng(31)
        n = 10
        W = rng.standard_normal((n, n))
        Hm = W.T @ W + 0.5 * np.eye(n)
        c = rng.standard_normal(n)
        model = QuadraticModel(c1=0.0, M=Metric.zeros(), c2=0.0,
                               A=np.zeros((1, n)), linear=c, Q=Hm,
                               lipschitz=float(np.linalg.eigvalsh(Hm).max()))
        rep = fista(FunctionDescriptor.l1(), model, np.zeros(n), 1e-12, 20000)
        oracle = coordinate_descent_l1_quadratic(Hm, c)
        assert rep.converged
        assert np.linalg.norm(rep.solution - oracle) < 1e-8

    def test_objective_never_worse_than_start(self):
        rng = np.random.default_rng(32)
        n = 8
        for trial in range(10):
            W = rng.standard_normal((n, n))
            Hm = W.T @ W + 0.01 * np.eye(n)
            c = rng.standard_normal(n) * 10
            model = QuadraticModel(c1=0.0, M=Metric.zeros(), c2=0.0,
                                   A=np.zeros((1, n)), linear=c, Q=Hm,
                                   lipschitz=float(np.linalg.eigvalsh(Hm).max()))
            f = FunctionDescriptor.l1()
            x0 = rng.standard_normal(n)
            rep = fista(f, model, x0, 1e-14, 7)  # deliberately few iterations
            phi = lambda x: f.value(x) + model.value(x)
            assert phi(rep.solution) <= phi(x0) + 1e-12

    def test_immediate_return_at_solution(self):
        c = np.array([0.5, 0.5])
        rep = fista(FunctionDescriptor.zero(), point_model(c, 2), c, 1e-9, 100)
        assert rep.iterations == 0
        assert rep.converged

    def test_max_iter_reports_not_converged(self):
        model = QuadraticModel(c1=0.0, M=Metric.zeros(), c2=0.0,
                               A=np.zeros((1, 2)), linear=np.array([10.0, -10.0]),
                               Q=np.diag([50.0, 1.0]), lipschitz=50.0)
        rep = fista(FunctionDescriptor.l1(), model, np.zeros(2), 1e-14, 1)
        assert not rep.converged
        assert rep.residual_norm > 1e-14


class TestDirectSolve:
    def test_two_identity(self):
        model = QuadraticModel(c1=2.0, M=Metric.scaled(1.0), c2=0.0,
                               A=np.zeros((1, 2)), linear=np.array([-2.0, -4.0]),
                               lipschitz=2.0)
        assert np.allclose(direct_solve(model, FunctionDescriptor.zero()),
                           [1.0, 2.0])

    def test_matches_fista(self):
        rng = np.random.default_rng(33)
        n, m = 6, 3
        A = rng.standard_normal((m, n))
        model = QuadraticModel(c1=0.8, M=Metric.scaled(1.0), c2=1.7, A=A,
                               linear=rng.standard_normal(n),
                               lipschitz=0.8 + 1.7 * np.linalg.svd(A, compute_uv=False)[0] ** 2)
        xd = direct_solve(model, FunctionDescriptor.zero())
        rep = fista(FunctionDescriptor.zero(), model, np.zeros(n), 1e-12, 5000)
        assert np.linalg.norm(xd - rep.solution) < 1e-8

    def test_singular_raises(self):
        rng = np.random.default_rng(34)
        A = rng.standard_normal((2, 5))  # rank 2 < 5: A'A singular
        model = QuadraticModel(c1=0.0, M=Metric.zeros(), c2=1.0, A=A,
                               linear=rng.standard_normal(5), lipschitz=1.0)
        with pytest.raises(NumericalError):
            direct_solve(model, FunctionDescriptor.zero())

    def test_requires_zero_f(self):
        model = point_model(np.zeros(2), 2)
        with pytest.raises(CapabilityError):
            direct_solve(model, FunctionDescriptor.l1())

    def test_residual_contract(self):
        rng = np.random.default_rng(35)
        n = 40
        W = rng.standard_normal((n, n))
        model = QuadraticModel(c1=0.0, M=Metric.zeros(), c2=0.0,
                               A=np.zeros((1, n)), linear=rng.standard_normal(n),
                               Q=W.T @ W + 0.05 * np.eye(n), lipschitz=1.0)
        x = direct_solve(model, FunctionDescriptor.zero())
        H = model.hess_dense()
        assert np.linalg.norm(H @ x + model.linear) <= \
            1e-10 * (1 + np.linalg.norm(model.linear))


class TestEpsilonLedger:
    def test_pass_through(self):
        from ipd.inner import InnerReport
        rep = InnerReport(np.zeros(2), 5, 1e-9, True)
        assert subproblem_residual_as_epsilon(rep) == 1e-9

    def test_direct_solve_tiny_residual(self):
        model = QuadraticModel(c1=2.0, M=Metric.scaled(1.0), c2=0.0,
                               A=np.zeros((1, 2)), linear=np.array([1.0, -1.0]),
                               lipschitz=2.0)
        rep = solve_subproblem(FunctionDescriptor.zero(), model, np.zeros(2),
                               1e-10, 10)
        assert subproblem_residual_as_epsilon(rep) <= 1e-10 * 2

    def test_injected_epsilon_recovered_as_residual(self):
        # solving the eps-perturbed subproblem exactly leaves a mapping
        # residual of exactly ||eps|| on the unperturbed one (f = zero)
        rng = np.random.default_rng(36)
        m, n = 2, 3
        A = rng.standard_normal((m, n))
        base = QuadraticModel(c1=1.0, M=Metric.scaled(1.0), c2=2.0, A=A,
                              linear=rng.standard_normal(n),
                              lipschitz=1.0 + 2.0 * np.linalg.svd(A, compute_uv=False)[0] ** 2)
        eps = rng.standard_normal(n) * 1e-3
        perturbed = QuadraticModel(c1=base.c1, M=base.M, c2=base.c2, A=base.A,
                                   linear=base.linear - eps, Q=base.Q,
                                   lipschitz=base.lipschitz)
        x_eps = direct_solve(perturbed, FunctionDescriptor.zero())
        resid = np.linalg.norm(base.grad(x_eps))
        assert resid == pytest.approx(np.linalg.norm(eps), rel=1e-9)


class TestInclusionResidual:
    def test_along_inertial_run(self):
        # after exact step-2 solves, the recovered subgradient satisfies the
        # step-2/step-3 optimality inclusion at every iteration
        rng = np.random.default_rng(37)
        n, m = 8, 3
        A = rng.standard_normal((m, n))
        b = rng.standard_normal(m)
        p = ProblemSpec(f=FunctionDescriptor.l1(), A=A, b=b)
        alpha, s = 4.0, 1.5
        params = AlgParams(alpha=alpha, s=s, metric=Metric.scaled(0.7),
                           eps_schedule=lambda k: 1e-12, inner_max_iter=5000)
        st = init_state(p, params, "ippd")
        for _ in range(10):
            k = st.k
            x_bar = extrapolate(k, alpha, st.x, st.x_prev)
            lam_bar = extrapolate(k, alpha, st.lam, st.lam_prev)
            lam_hat = dual_anchor(k, alpha, lam_bar, st.lam)
            eta = eta_target(k, alpha, A, st.x, b, Ax=st.Ax)
            M_k = Metric.scaled(0.7)
            f_part, model = assemble_subproblem_alg1(p, k, alpha, s, M_k,
                                                     x_bar, eta, lam_hat)
            rep = solve_subproblem(f_part, model, st.x, 1e-12, 5000)
            x_next = rep.solution
            lam_next = dual_update(k, alpha, s, lam_bar, A, x_next, st.x, b)
            res = step2_inclusion_residual(k, alpha, s, M_k, x_bar, x_next,
                                           lam_next, st.lam, model, A)
            assert res <= 1e-6
            st, _ = ippd_step(p, params, st)
