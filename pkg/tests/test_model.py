import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import aggressive_state, random_states
from slipforge.errors import (
    ConfigError,
    LoadTransferSingularityError,
    SpeedBelowFloorError,
    WheelRateBelowFloorError,
)
from slipforge.model import (
    ControlInput,
    FullState,
    SlipState,
    TyreParams,
    VehicleParams,
    WheelKinematics,
    free_rolling_rates,
    kinematics,
    magic_formula,
    normal_forces,
    slip_ratios,
    state_derivative,
    tyre_forces,
    wrap_angle,
)

finite = dict(allow_nan=False, allow_infinity=False)


def kin_of(v_fx_w=25.0, v_fy_w=0.0, v_rx_b=25.0, v_ry_b=0.0):
    return WheelKinematics(25.0, 0.0, v_fx_w, v_fy_w, v_rx_b, v_ry_b)


class TestKinematics:
    def test_straight_driving(self, params):
        k = kinematics([0, 0, 0, 25, 0, 0, 1, 1], 0.0, params)
        assert k == pytest.approx(WheelKinematics(25, 0, 25, 0, 25, 0), abs=1e-12)

    def test_pure_sideslip(self, params):
        k = kinematics([0, 0, 0, 10, 10, 0, 1, 1], 0.0, params)
        assert k.beta == pytest.approx(math.pi / 4)
        assert k.v == pytest.approx(math.sqrt(200))
        assert k.v_ry_b == pytest.approx(10.0)

    def test_aggressive_against_oracle(self):
        p = VehicleParams(l_f=1.5)
        v, beta, psi, psidot, delta = 25.0, 0.1, 0.4, 0.8, 0.2
        X = [0, 0, psi, v * math.cos(psi + beta), v * math.sin(psi + beta), psidot, 1, 1]
        got = kinematics(X, delta, p)
        want = oracle.kinematics(X[3], X[4], psi, psidot, delta, p.l_f, p.l_r)
        np.testing.assert_allclose(np.array(got, dtype=float), want, rtol=1e-13, atol=1e-13)

    def test_speed_floor(self, params):
        with pytest.raises(SpeedBelowFloorError):
            kinematics([0, 0, 0, 0.05, 0.05, 0, 1, 1], 0.0, params)

    def test_beta_wraps_for_any_heading(self, params):
        # heading far from the velocity angle still yields beta in (-pi, pi]
        k = kinematics([0, 0, 3.0, -10, -1, 0, 1, 1], 0.0, params)
        assert -math.pi < k.beta <= math.pi

    @given(st.floats(-50, 50, **finite))
    def test_wrap_angle_range(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi + 1e-12
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


class TestSlipRatios:
    def test_free_rolling(self, params):
        s = slip_ratios(kin_of(25, 0, 25, 0), 25 / params.r_f, 25 / params.r_r, params)
        assert (s.s_fx, s.s_fy, s.s_f) == pytest.approx((0, 0, 0), abs=1e-15)

    def test_locked_ratio_braking(self, params):
        s = slip_ratios(kin_of(27.5, 0, 25, 0), 25 / params.r_f, 25 / params.r_r, params)
        assert s.s_fx == pytest.approx(0.1)

    def test_mixed_slip(self, params):
        s = slip_ratios(kin_of(26, 2, 25, 0), 25 / params.r_f, 25 / params.r_r, params)
        assert s.s_fx == pytest.approx(0.04)
        assert s.s_fy == pytest.approx(0.08)
        assert s.s_f == pytest.approx(math.sqrt(0.04**2 + 0.08**2))

    def test_wheel_rate_floor(self, params):
        with pytest.raises(WheelRateBelowFloorError):
            slip_ratios(kin_of(), 0.05, 10.0, params)
        with pytest.raises(WheelRateBelowFloorError):
            slip_ratios(kin_of(), 10.0, -1.0, params)


class TestMagicFormula:
    def test_zero_slip_zero_friction(self, theta):
        mu = magic_formula(SlipState(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), theta)
        assert mu == (0.0, 0.0, 0.0, 0.0)

    def test_pure_longitudinal_value(self, theta):
        mu = magic_formula(SlipState(0.0, 0.0, 0.1, 0.0, 0.0, 0.1), theta)
        assert mu[2] == pytest.approx(-math.sin(1.9 * math.atan(1.0)), abs=1e-12)
        assert mu[2] == pytest.approx(-0.99692, abs=5e-6)

    @given(st.floats(-1, 1, **finite), st.floats(-1, 1, **finite),
           st.floats(0.5, 50), st.floats(1.01, 4), st.floats(0.05, 2))
    def test_odd_capped_and_antiparallel(self, sx, sy, B, C, D):
        th = TyreParams(B, C, D)
        s = math.hypot(sx, sy)
        mu = magic_formula(SlipState(sx, sy, -sx, -sy, s, s), th)
        assert mu[2] == pytest.approx(-mu[0], abs=1e-15)
        assert mu[3] == pytest.approx(-mu[1], abs=1e-15)
        assert math.hypot(mu[0], mu[1]) <= D * (1 + 1e-12)
        if s > 1e-6:
            assert abs(mu[0] * sy - mu[1] * sx) <= 1e-12 * max(1.0, s)
            # opposes the slip until C*atan(B*s) passes pi, which needs C > 2
            if C * math.atan(B * s) < math.pi:
                assert mu[0] * sx + mu[1] * sy <= 1e-15


class TestNormalForces:
    def test_static_split(self, params):
        f_fz, f_rz = normal_forces((0.0, 0.0, 0.0, 0.0), 0.0, params)
        mg = params.m * params.g
        assert f_fz == pytest.approx(mg * params.l_r / params.wheelbase)
        assert f_rz == pytest.approx(mg * params.l_f / params.wheelbase)

    def test_braking_against_oracle(self):
        p = VehicleParams(h=0.5, l_f=1.5, l_r=1.5)
        got = normal_forces((-0.8, 0.0, -0.8, 0.0), 0.0, p)
        want = oracle.normal_forces(-0.8, 0.0, -0.8, 0.0, dataclasses.asdict(p))
        assert got == pytest.approx(want, rel=1e-14)
        assert got[0] > got[1]  # braking loads the front axle

    def test_singularity(self):
        p = VehicleParams(h=2.5, l_f=1.4, l_r=1.5)
        with pytest.raises(LoadTransferSingularityError):
            normal_forces((-1.5, 0.0, 1.5, 0.0), 0.0, p)

    @given(st.floats(-1, 1, **finite), st.floats(-1, 1, **finite),
           st.floats(-1, 1, **finite), st.floats(-0.6, 0.6, **finite))
    def test_sum_is_weight(self, a, b, c, d):
        p = VehicleParams()
        f_fz, f_rz = normal_forces((a, b, c, 0.0), d, p)
        assert f_fz + f_rz == pytest.approx(p.m * p.g, rel=1e-12)
        assert f_fz > 0 and f_rz > 0


class TestStateDerivative:
    def test_steady_rolling(self, params, theta):
        X = np.array([0, 0, 0.3, 25 * math.cos(0.3), 25 * math.sin(0.3), 0, 0, 0])
        X[6], X[7] = free_rolling_rates(X, 0.0, params)
        d = state_derivative(X, [0, 0, 0], params, theta)
        np.testing.assert_allclose(d[3:], 0, atol=1e-9)
        np.testing.assert_allclose(d[:3], X[3:6])

    def test_front_torque_only(self, params, theta):
        X = np.array([0, 0, 0, 25, 0, 0, 25 / params.r_f, 25 / params.r_r])
        d = state_derivative(X, ControlInput(0.0, 100.0, 0.0), params, theta)
        assert d[6] == pytest.approx(100 / params.I_f)
        np.testing.assert_allclose(np.delete(d[3:], 3), 0, atol=1e-12)

    def test_aggressive_against_oracle(self, params, pdict, theta):
        X, U = aggressive_state(params)
        got = state_derivative(FullState.from_array(X), ControlInput.from_array(U), params, theta)
        want = oracle.derivative(X, U, pdict, (theta.B, theta.C, theta.D))
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=0)

    def test_batched_equals_looped(self, params, theta):
        X, U = random_states(np.random.default_rng(3), 50, params)
        batch = state_derivative(X, U, params, theta)
        single = np.array([state_derivative(x, u, params, theta) for x, u in zip(X, U)])
        np.testing.assert_array_equal(batch, single)

    def test_frame_consistency(self, params, theta):
        # rotating the wheel-frame front force into the body frame first gives the same body terms
        X, U = aggressive_state(params)
        fr = tyre_forces(X, U, params, theta)
        d = state_derivative(X, U, params, theta)
        c, s = math.cos(U[0]), math.sin(U[0])
        f_fx_b = fr.f_fx_w * c - fr.f_fy_w * s
        f_fy_b = fr.f_fx_w * s + fr.f_fy_w * c
        Fx, Fy = f_fx_b + fr.f_rx_b, f_fy_b + fr.f_ry_b
        cp, sp = math.cos(X[2]), math.sin(X[2])
        assert d[3] == pytest.approx((Fx * cp - Fy * sp) / params.m, rel=1e-12)
        assert d[4] == pytest.approx((Fx * sp + Fy * cp) / params.m, rel=1e-12)
        assert d[5] == pytest.approx((f_fy_b * params.l_f - fr.f_ry_b * params.l_r) / params.I_z,
                                     rel=1e-12)

    @given(st.floats(5, 40), st.floats(-0.4, 0.4), st.floats(-0.4, 0.4),
           st.floats(-0.3, 0.3), st.floats(-0.5, 0.5))
    @settings(max_examples=200)
    def test_sliding_friction_only_dissipates(self, v, sf, sr, beta, psidot):
        p = VehicleParams()
        th = TyreParams(10, 1.9, 1.0)
        X = np.array([0, 0, 0, v * math.cos(beta), v * math.sin(beta), psidot, 0, 0])
        kin = kinematics(X, 0.0, p)
        X[6] = kin.v_fx_w / (p.r_f * (1 + sf))
        X[7] = kin.v_rx_b / (p.r_r * (1 + sr))
        d = state_derivative(X, [0, 0, 0], p, th)
        # kinetic energy of body, yaw and both wheels
        power = (p.m * (X[3] * d[3] + X[4] * d[4]) + p.I_z * X[5] * d[5]
                 + p.I_f * X[6] * d[6] + p.I_r * X[7] * d[7])
        assert power <= 1e-9 * p.m * v * v

    @given(st.floats(5, 40), st.floats(0.0, 0.4), st.floats(0.0, 0.4))
    def test_braking_slip_slows_the_body(self, v, sf, sr):
        # wheels turning slower than the ground: friction can only take speed away
        p = VehicleParams()
        th = TyreParams(10, 1.9, 1.0)
        X = np.array([0, 0, 0, v, 0, 0, v / (p.r_f * (1 + sf)), v / (p.r_r * (1 + sr))])
        d = state_derivative(X, [0, 0, 0], p, th)
        assert X[3] * d[3] + X[4] * d[4] <= 0

    def test_domain_errors_propagate(self, params, theta):
        with pytest.raises(WheelRateBelowFloorError):
            state_derivative([0, 0, 0, 25, 0, 0, 0.0, 70], [0, 0, 0], params, theta)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(m=0), dict(I_z=-1), dict(h=3.0), dict(g=float("nan"))])
    def test_vehicle_rejects(self, kw):
        with pytest.raises(ConfigError):
            VehicleParams(**kw)

    @pytest.mark.parametrize("bcd", [(0, 1.9, 1), (51, 1.9, 1), (10, 1.0, 1), (10, 4.1, 1),
                                     (10, 1.9, 0), (10, 1.9, 2.1)])
    def test_tyre_box(self, bcd):
        with pytest.raises(ConfigError):
            TyreParams(*bcd)

    def test_round_trips(self, theta):
        assert TyreParams.from_array(theta.to_array()) == theta
        s = FullState(*range(8))
        assert FullState.from_array(s.to_array()) == s
        assert theta.peak_slip == pytest.approx(math.tan(math.pi / 3.8) / 10)
