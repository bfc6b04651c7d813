import numpy as np
import pytest

from ipd.core import CapabilityError, FunctionDescriptor
from ipd.prox import prox_dispatch, prox_l1, prox_l1_l2, project_nonneg

from oracles import prox_oracle_scalar, refine_minimize_2d


class TestProxL1:
    def test_closed_form(self):
        got = prox_l1(np.array([2.0, -0.5, 0.0]), 1.0)
        assert np.allclose(got, [1.0, 0.0, 0.0])

    def test_t_zero_identity(self):
        v = np.array([0.3, -2.0, 7.0])
        assert np.array_equal(prox_l1(v, 0.0), v)

    def test_scalar_against_grid_oracle(self):
        got = prox_l1(np.array([0.7]), 0.3)[0]
        oracle = prox_oracle_scalar(abs, 0.7, 0.3)
        assert got == pytest.approx(0.4, abs=1e-9)
        assert got == pytest.approx(oracle, abs=1e-6)

    def test_negative_t_rejected(self):
        with pytest.raises(ValueError):
            prox_l1(np.zeros(2), -0.1)

    def test_tie_maps_to_zero(self):
        assert prox_l1(np.array([0.5, -0.5]), 0.5) == pytest.approx([0.0, 0.0])


class TestProjectNonneg:
    def test_basic(self):
        assert np.array_equal(project_nonneg(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_idempotent_and_fixed_on_nonneg(self):
        rng = np.random.default_rng(3)
        v = np.abs(rng.standard_normal(10))
        assert np.array_equal(project_nonneg(v), v)
        w = rng.standard_normal(10)
        assert np.array_equal(project_nonneg(project_nonneg(w)), project_nonneg(w))

    def test_against_per_coordinate_oracle(self):
        rng = np.random.default_rng(4)
        v = rng.standard_normal(6)
        pen = lambda u: 0.0 if u >= 0 else 1e18  # indicator of u >= 0
        for i in range(6):
            oracle = prox_oracle_scalar(pen, v[i], 1.0)
            assert project_nonneg(v)[i] == pytest.approx(oracle, abs=1e-6)


class TestProxL1L2:
    def test_scalar_case(self):
        assert prox_l1_l2(np.array([2.0]), 1.0, 1.0)[0] == pytest.approx(0.5)

    def test_scalar_against_grid_oracle(self):
        beta = 1.0
        oracle = prox_oracle_scalar(lambda u: abs(u) + beta / 2 * u * u, 2.0, 1.0)
        assert prox_l1_l2(np.array([2.0]), 1.0, beta)[0] == pytest.approx(
            oracle, abs=1e-6)

    def test_t_zero_and_v_zero(self):
        v = np.array([1.0, -3.0])
        assert np.array_equal(prox_l1_l2(v, 0.0, 2.0), v)
        assert np.array_equal(prox_l1_l2(np.zeros(3), 0.7, 2.0), np.zeros(3))

    def test_beta_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            prox_l1_l2(np.zeros(2), 1.0, 0.0)


class TestDispatch:
    def test_zero_kind(self):
        v = np.array([1.0, 2.0])
        assert np.array_equal(prox_dispatch(FunctionDescriptor.zero(), v, 3.0), v)

    def test_quadratic_kind(self):
        d = FunctionDescriptor.quadratic(np.eye(2))
        got = prox_dispatch(d, np.array([2.0, 4.0]), 1.0)
        assert np.allclose(got, [1.0, 2.0])

    def test_l1_agrees(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal(8)
        assert np.array_equal(prox_dispatch(FunctionDescriptor.l1(), v, 0.4),
                              prox_l1(v, 0.4))

    def test_unsupported_kind(self):
        d = FunctionDescriptor.custom(value_fn=lambda x: 0.0)
        with pytest.raises(CapabilityError):
            prox_dispatch(d, np.zeros(2), 1.0)

    def test_quadratic_2d_against_grid_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            W = rng.standard_normal((2, 2))
            Q = W.T @ W + 0.1 * np.eye(2)
            q = rng.standard_normal(2)
            d = FunctionDescriptor.quadratic(Q, q)
            v = rng.standard_normal(2)
            t = rng.uniform(0.1, 2.0)
            got = prox_dispatch(d, v, t)

            def obj(X, Y):
                quad = 0.5 * (Q[0, 0] * X * X + 2 * Q[0, 1] * X * Y + Q[1, 1] * Y * Y)
                return t * (quad + q[0] * X + q[1] * Y) \
                    + 0.5 * ((X - v[0]) ** 2 + (Y - v[1]) ** 2)

            oracle = refine_minimize_2d(obj, got, max(1.0, np.abs(got).max()))
            assert np.linalg.norm(got - oracle) < 1e-6


class TestProxProperties:
    KINDS = ["zero", "l1", "nonneg", "l1l2", "quad"]

    def make(self, kind, n, rng):
        if kind == "zero":
            return FunctionDescriptor.zero()
        if kind == "l1":
            return FunctionDescriptor.l1()
        if kind == "nonneg":
            return FunctionDescriptor.nonneg()
        if kind == "l1l2":
            return FunctionDescriptor.l1_l2(rng.uniform(0.2, 2.0))
        W = rng.standard_normal((n, n))
        return FunctionDescriptor.quadratic(W.T @ W + 0.1 * np.eye(n),
                                            rng.standard_normal(n))

    @pytest.mark.parametrize("kind", KINDS)
    def test_nonexpansive(self, kind):
        rng = np.random.default_rng(11)
        n = 9
        d = self.make(kind, n, rng)
        for _ in range(25):
            v1, v2 = rng.standard_normal(n), rng.standard_normal(n)
            t = rng.uniform(0.0, 3.0)
            lhs = np.linalg.norm(d.prox(v1, t) - d.prox(v2, t))
            assert lhs <= np.linalg.norm(v1 - v2) + 1e-12

    def test_l1_subgradient_membership(self):
        # 0 in t d|.|(p) + (p - v): |v-p| <= t where p=0, else v-p = t sign(p)
        rng = np.random.default_rng(12)
        for _ in range(100):
            v = rng.standard_normal(5) * rng.uniform(0.5, 3)
            t = rng.uniform(0.0, 2.0)
            p = prox_l1(v, t)
            for vi, pi in zip(v, p):
                if pi == 0.0:
                    assert abs(vi - pi) <= t + 1e-10
                else:
                    assert vi - pi == pytest.approx(t * np.sign(pi), abs=1e-10)

    def test_nonneg_optimality(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            v = rng.standard_normal(6)
            p = project_nonneg(v)
            # p minimizes the projection objective: normal-cone condition
            assert (p >= 0).all()
            for vi, pi in zip(v, p):
                if pi > 0:
                    assert pi == pytest.approx(vi, abs=1e-12)
                else:
                    assert vi <= 1e-12

    def test_l1l2_optimality(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            v = rng.standard_normal(4)
            t = rng.uniform(0.01, 2.0)
            beta = rng.uniform(0.1, 3.0)
            p = prox_l1_l2(v, t, beta)
            # 0 in t(d|.| + beta p) + (p - v)
            for vi, pi in zip(v, p):
                resid = vi - pi - t * beta * pi
                if pi == 0.0:
                    assert abs(resid) <= t + 1e-10
                else:
                    assert resid == pytest.approx(t * np.sign(pi), abs=1e-10)

    @pytest.mark.parametrize("kind", ["l1", "nonneg", "l1l2"])
    def test_separable_prox_against_grid_oracle(self, kind):
        rng = np.random.default_rng(15)
        d = self.make(kind, 1, rng)
        if kind == "l1":
            pen = abs
        elif kind == "nonneg":
            pen = lambda u: 0.0 if u >= 0 else 1e18
        else:
            pen = lambda u, b=d.beta: abs(u) + 0.5 * b * u * u
        for _ in range(30):
            v = float(rng.standard_normal() * rng.uniform(0.5, 3))
            t = float(rng.uniform(0.05, 2.0))
            got = d.prox(np.array([v]), t)[0]
            assert got == pytest.approx(prox_oracle_scalar(pen, v, t), abs=1e-6)
