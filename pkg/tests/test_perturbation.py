import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosovlab.errors import ChartError, NonPositiveHu
from anosovlab.perturbation import (
    BumpMap,
    I_of_h,
    LocalizedBump,
    apply_bump,
    apply_localized,
    ball_points,
    c1_distance,
    h_components,
    jac_bump,
    jac_bump_inverse,
    jac_localized,
    localized_c1_distance,
    profile,
)
from anosovlab.spectral import DEFAULT_CENTER, AdaptedChart, TorusPoint, solve_spectrum

from oracles import fd_jacobian, spherical_log_hu_integral

# spherical Gauss quadrature oracle (48 x 48 x 96 nodes), frozen
I_ORACLE = {0.1: -5.648442327e-4, 0.2: -2.269344916e-3, 0.3: -5.143802367e-3, 1.0: -6.601512430e-2}

ball = st.tuples(*[st.floats(-0.577, 0.577)] * 3)


def test_bump_validation():
    with pytest.raises(ValueError):
        BumpMap(math.pi / 2)
    with pytest.raises(ValueError):
        BumpMap(0.3, margin=0.0)
    assert BumpMap(0.3).support_radius == pytest.approx(0.9)


def test_profile_values():
    assert profile(0.0, 0.7, 0.1) == 0.7
    assert profile(0.9, 0.7, 0.1) == 0.0
    assert profile(0.45, 1.0, 0.1) == pytest.approx(0.75**2)


def test_identity_off_support_is_exact():
    h = BumpMap(1.2)
    x = ball_points(20000)
    far = x[np.linalg.norm(x, axis=1) >= 0.9]
    assert len(far) > 0
    assert np.array_equal(apply_bump(h, far), far)
    assert np.array_equal(jac_bump(h, far), np.broadcast_to(np.eye(3), (len(far), 3, 3)))


def test_outside_ball_rejected():
    with pytest.raises(ChartError):
        apply_bump(BumpMap(0.2), [1.0, 0.5, 0.0])


@settings(max_examples=60, deadline=None)
@given(ball, st.floats(0.0, 1.5))
def test_jacobian_matches_finite_differences(x, a):
    h = BumpMap(a)
    J = jac_bump(h, x)
    fd = fd_jacobian(lambda y: apply_bump(h, y), x)
    assert np.max(np.abs(J - fd)) < 1e-6


@settings(max_examples=60, deadline=None)
@given(ball, st.floats(0.0, 1.5))
def test_volume_preserving_and_inverse(x, a):
    h = BumpMap(a)
    J = jac_bump(h, x)
    assert np.linalg.det(J) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(jac_bump_inverse(J) @ J, np.eye(3), atol=1e-12)
    y = apply_bump(h, x)
    assert np.allclose(apply_bump(h, y, inverse=True), x, atol=1e-13)
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x))


def test_first_coordinate_and_cu_plane_preserved():
    h = BumpMap(0.9)
    x = ball_points(500)[1:]
    J = jac_bump(h, x)
    assert np.all(J[:, 0] == np.array([1.0, 0.0, 0.0]))
    assert np.allclose(apply_bump(h, x)[:, 0], x[:, 0])
    # Dh e_u has no e_s component
    hu, hc = h_components(h, x)
    assert np.allclose(J[:, :, 2], np.column_stack([np.zeros(len(x)), hc, hu]))


def test_h_components_at_center():
    hu, hc = h_components(BumpMap(0.4), np.zeros(3))
    assert hu == pytest.approx(math.cos(0.4))
    assert hc == pytest.approx(-math.sin(0.4))


def test_c1_distance():
    assert c1_distance(BumpMap(0.0)) == 0.0
    # at the centre ||Dh - I|| = 2 sin(a/2); the sup can only be larger
    a = 0.3
    d = c1_distance(BumpMap(a), 20000)
    assert d >= 2 * math.sin(a / 2)
    assert c1_distance(BumpMap(0.6), 20000) > d


@pytest.mark.parametrize("a", sorted(I_ORACLE))
def test_I_of_h_matches_spherical_oracle(a):
    est = I_of_h(BumpMap(a))
    assert est.value == pytest.approx(I_ORACLE[a], rel=1e-6)
    assert est.value < 0


def test_spherical_oracle_is_reproducible_here():
    h = BumpMap(0.2)
    val = spherical_log_hu_integral(lambda x: apply_bump(h, x), h.support_radius, nr=24, nt=24, nphi=48)
    assert val == pytest.approx(I_ORACLE[0.2], rel=1e-5)


def test_I_of_h_zero_and_errors():
    assert I_of_h(BumpMap(0.0)).value == 0.0
    with pytest.raises(ValueError):
        I_of_h(BumpMap(0.2), method="simpson")


def test_I_of_h_montecarlo_agrees():
    est = I_of_h(BumpMap(0.5), method="montecarlo", n=200_000, seed=3)
    ref = I_of_h(BumpMap(0.5)).value
    assert abs(est.value - ref) < 4 * est.stderr


def test_I_of_h_refinement_converges():
    h = BumpMap(0.3)
    assert abs(I_of_h(h, n=100).value - I_ORACLE[0.3]) > abs(I_of_h(h, n=200).value - I_ORACLE[0.3])


def test_nonpositive_hu_detected(monkeypatch):
    import anosovlab.perturbation as pert

    def bad_jac(h, x):
        J = np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3)).copy()
        J[..., 2, 2] = -0.5
        return J

    monkeypatch.setattr(pert, "_jac", bad_jac)
    with pytest.raises(NonPositiveHu):
        I_of_h(BumpMap(0.3), n=8)


def test_ball_points_fill_the_ball():
    x = ball_points(4096)
    r = np.linalg.norm(x, axis=1)
    assert np.all(r <= 1.0)
    assert np.array_equal(x[0], np.zeros(3))
    # uniform in volume: P(|x| < 1/2) = 1/8
    assert np.mean(r < 0.5) == pytest.approx(0.125, abs=0.01)
    y = ball_points(1000, kind="random", seed=5)
    assert np.array_equal(y, ball_points(1000, kind="random", seed=5))


def test_localized_bump():
    sp = solve_spectrum(7)
    chart = AdaptedChart(DEFAULT_CENTER, 0.06, sp)
    lb = LocalizedBump(BumpMap(0.8), chart)
    far = TorusPoint((0.9, 0.1, 0.2))
    assert np.array_equal(apply_localized(lb, far).coords, far.coords)
    assert np.array_equal(jac_localized(lb, far), sp.P @ np.eye(3) @ sp.P_inv)
    w = chart.backward([0.1, 0.2, -0.3])
    moved = apply_localized(lb, w)
    assert np.allclose(apply_localized(lb, moved, inverse=True).lift, w.lift, atol=1e-14)
    fd = fd_jacobian(lambda v: apply_localized(lb, TorusPoint(v)).lift, w.lift, eps=1e-7)
    assert np.max(np.abs(jac_localized(lb, w) - fd)) < 1e-5
    d = localized_c1_distance(lb)
    assert 2 * math.sin(0.4) <= d <= 0.06 * 2 + c1_distance(BumpMap(0.8), 20_000)
    assert localized_c1_distance(LocalizedBump(BumpMap(0.0), chart)) == 0.0
