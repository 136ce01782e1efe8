import math
import warnings

import numpy as np
import pytest

from anosovlab import cocycle
from anosovlab.cocycle import (
    PerturbedDiffeo,
    benettin_spectrum,
    check_F_disjoint,
    corollary_lower_bound,
    dstep,
    estimate_C,
    inverse_step,
    lyapunov_mc,
    make_diffeo,
    return_time,
    seed_stream,
    sigma_estimate,
    step,
)
from anosovlab.errors import DisagreementWarning
from anosovlab.perturbation import BumpMap, I_of_h, UNIT_BALL_VOLUME
from anosovlab.spectral import DEFAULT_CENTER, AdaptedChart, TorusPoint, solve_spectrum

from oracles import charpoly_roots

LOG_K5 = tuple(math.log(v) for v in reversed(charpoly_roots(5)))  # descending


def wrap(d):
    return (d + 0.5) % 1.0 - 0.5


@pytest.fixture(scope="module")
def f5():
    return make_diffeo(5, 1.0, 0.08)


def test_origin_fixed_by_linear_map():
    f = PerturbedDiffeo(solve_spectrum(5))
    assert np.array_equal(step(f, TorusPoint((0.0, 0.0, 0.0))).coords, np.zeros(3))


def test_zero_amplitude_is_linear():
    f = make_diffeo(6, 0.0)
    A = f.spectral.A
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = TorusPoint(tuple(rng.random(3)))
        assert np.allclose(step(f, w).coords, (A @ w.lift) % 1.0, atol=1e-15)
        assert np.allclose(dstep(f, w), A, atol=1e-12)


def test_round_trip(f5):
    W = np.random.default_rng(1).random((10_000, 3))
    back = cocycle._backward(f5, cocycle._forward(f5, W))
    assert np.max(np.abs(wrap(back - W))) < 1e-10
    w = f5.chart.backward([0.3, -0.2, 0.5])
    assert np.max(np.abs(wrap(inverse_step(f5, step(f5, w)).coords - w.coords))) < 1e-12


def test_batched_matches_pointwise(f5):
    W = np.vstack([f5.chart.backward(x).coords for x in ([0.1, 0.2, 0.3], [-0.5, 0.1, 0.6])] + [[0.9, 0.1, 0.2]])
    for w in W:
        assert np.allclose(cocycle._forward(f5, w[None])[0], step(f5, TorusPoint(tuple(w))).coords, atol=1e-14)


def test_dstep_matches_finite_differences(f5):
    rng = np.random.default_rng(2)
    inside = np.array([f5.chart.backward(x).lift for x in 0.95 * (rng.random((500, 3)) * 2 - 1) / math.sqrt(3)])
    W = np.vstack([inside, rng.random((500, 3))])
    eps = 1e-7
    worst = 0.0
    for w in W:
        J = dstep(f5, TorusPoint(tuple(w)))
        cols = []
        for i in range(3):
            e = np.zeros(3)
            e[i] = eps
            plus = step(f5, TorusPoint(tuple(w + e))).coords
            minus = step(f5, TorusPoint(tuple(w - e))).coords
            cols.append(wrap(plus - minus) / (2 * eps))
        worst = max(worst, float(np.max(np.abs(J - np.stack(cols, axis=-1)))))
    assert worst < 1e-5


def test_det_of_derivative_is_one(f5):
    w = f5.chart.backward([0.2, 0.1, -0.4])
    assert np.linalg.det(dstep(f5, w)) == pytest.approx(1.0, abs=1e-10)


def test_benettin_linear_oracle():
    f = make_diffeo(5, 0.0)
    ex = benettin_spectrum(f, TorusPoint((0.1, 0.2, 0.3)), 10_000)
    assert ex == pytest.approx(LOG_K5, abs=1e-3)
    assert abs(ex.sum()) < 1e-6
    assert list(ex) == sorted(ex, reverse=True)


def test_benettin_continuity_in_amplitude():
    w = TorusPoint((0.31, 0.52, 0.9))
    a0 = benettin_spectrum(make_diffeo(5, 0.0), w, 2000)
    a1 = benettin_spectrum(make_diffeo(5, 1e-6), w, 2000)
    assert np.max(np.abs(a0 - a1)) < 1e-4


def test_benettin_sum_zero_perturbed():
    ex = benettin_spectrum(make_diffeo(20, 1.4, 0.3), TorusPoint((0.1, 0.7, 0.4)), 2000)
    assert abs(ex.sum()) < 1e-6


def test_benettin_rejects_bad_T(f5):
    with pytest.raises(ValueError):
        benettin_spectrum(f5, TorusPoint((0.1, 0.2, 0.3)), 0)


def test_seed_streams_are_independent_and_stable():
    a = seed_stream(7, 0).random(4)
    assert np.array_equal(a, seed_stream(7, 0).random(4))
    assert not np.array_equal(a, seed_stream(7, 1).random(4))
    assert not np.array_equal(a, seed_stream(8, 0).random(4))


def test_lyapunov_mc_linear():
    f = make_diffeo(8, 0.0)
    est = lyapunov_mc(f, 8, 500, master_seed=3)
    lo, hi = est.ci[1]
    log_c = math.log(f.spectral.lambda_c)
    assert lo - 1e-12 <= log_c <= hi + 1e-12
    assert est.per_seed.shape == (8, 3)
    assert np.all(np.abs(est.per_seed.sum(axis=1)) < 1e-6)


def test_lyapunov_mc_tiny_run():
    est = lyapunov_mc(make_diffeo(5, 1.0, 0.3), 2, 10, master_seed=0)
    assert np.all(est.ci[:, 1] >= est.ci[:, 0])
    with pytest.raises(ValueError):
        lyapunov_mc(make_diffeo(5, 1.0), 1, 10)


def test_lyapunov_mc_variance_shrinks_with_T():
    f = make_diffeo(5, 0.0)
    v10 = lyapunov_mc(f, 16, 10, 0, warmup=0).per_seed[:, 1].var()
    v20 = lyapunov_mc(f, 16, 20, 0, warmup=0).per_seed[:, 1].var()
    assert v20 < v10


def test_lyapunov_mc_deterministic_across_tasks():
    f = make_diffeo(20, 1.4, 0.3)
    one = lyapunov_mc(f, 7, 300, master_seed=11, tasks=1)
    three = lyapunov_mc(f, 7, 300, master_seed=11, tasks=3)
    assert one.per_seed.tobytes() == three.per_seed.tobytes()
    assert lyapunov_mc(f, 7, 300, master_seed=12).per_seed.tobytes() != one.per_seed.tobytes()


@pytest.mark.parametrize("bundle,index", [("c", 1), ("u", 0)])
def test_sigma_linear(bundle, index):
    f = make_diffeo(6, 0.0)
    s = sigma_estimate(f, bundle, 4, 200, master_seed=1, points_per_seed=50, depth=10)
    exact = math.log(f.spectral.eigenvalues[2 - index])
    assert s.ci[0] - 1e-12 <= exact <= s.ci[1] + 1e-12
    assert s.method == "spectrum-average"
    assert s.cross_check.method == "direct-jacobian"
    assert s.cross_check.value == pytest.approx(exact, abs=1e-12)


def test_sigma_disagreement_warns(monkeypatch):
    f = make_diffeo(6, 0.0)
    real = cocycle.sigma_direct

    def shifted(*args, **kw):
        s = real(*args, **kw)
        s.value += 1.0
        s.stderr = 1e-3
        return s

    monkeypatch.setattr(cocycle, "sigma_direct", shifted)
    with pytest.warns(DisagreementWarning):
        sigma_estimate(f, "c", 4, 100, points_per_seed=20, depth=5)
    with pytest.raises(ValueError):
        sigma_estimate(f, "s", 4, 100)


def test_sigma_methods_agree_when_perturbed():
    f = make_diffeo(20, 1.0, 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("error", DisagreementWarning)
        s = sigma_estimate(f, "u", 32, 3000, master_seed=2, points_per_seed=2000, depth=30)
    assert s.disagreement < 3


def test_return_time_default_ball():
    sp = solve_spectrum(5)
    rt = return_time(sp, AdaptedChart(DEFAULT_CENTER, 0.08, sp), n_max=10, n_samples=20_000)
    assert rt.n is not None and rt.n >= 2


def test_return_time_exhaustion():
    sp = solve_spectrum(5)
    rt = return_time(sp, AdaptedChart(DEFAULT_CENTER, 0.08, sp), n_max=1, n_samples=20_000)
    assert rt.exceeded and str(rt) == "> 1"
    with pytest.raises(ValueError):
        return_time(sp, AdaptedChart(DEFAULT_CENTER, 0.08, sp), n_max=0)


def test_return_time_large_ball_against_dense_oracle():
    sp = solve_spectrum(5)
    ch = AdaptedChart(DEFAULT_CENTER, 0.45, sp)
    rt = return_time(sp, ch, n_max=5, n_samples=5000)
    # oracle: random points of the ball whose linear image is again in the ball
    rng = np.random.default_rng(4)
    x = rng.normal(size=(200_000, 3))
    x *= (rng.random(200_000) ** (1 / 3) / np.linalg.norm(x, axis=1))[:, None]
    W = (DEFAULT_CENTER.coords + 0.45 * x @ sp.P.T) % 1.0
    assert np.any(ch.contains((W @ sp.A.T) % 1.0))
    assert rt.n == 1


@pytest.mark.parametrize("k", [5, 100, 1])
def test_F_disjoint(k):
    assert check_F_disjoint(k)


def test_F_disjoint_monte_carlo():
    rng = np.random.default_rng(5)
    lo, hi = np.array([0, 0, 5 / 6]), np.array([2 / 3, 1, 1])
    for k in (5, 37):
        A = solve_spectrum(max(k, 5)).A
        W = lo + (hi - lo) * rng.random((10_000, 3))
        img = (W @ A.T) % 1.0
        inside = np.all((img > lo) & (img < hi), axis=1)
        assert not inside.any()


def test_C_zero_without_perturbation():
    assert estimate_C(make_diffeo(10, 0.0)).value == 0.0
    assert float(estimate_C(PerturbedDiffeo(solve_spectrum(10)))) == 0.0


def test_C_grid_refinement():
    f = make_diffeo(20, 1.0)
    coarse = estimate_C(f, n_points=1000, depth=20).value
    fine = estimate_C(f, n_points=8000, depth=40).value
    assert fine == pytest.approx(coarse, rel=0.05)


def test_C_uniformly_bounded_in_k():
    vals = [estimate_C(make_diffeo(k, 1.0), n_points=1000, depth=20).value for k in (20, 40, 60, 80, 100)]
    assert max(vals) < 1.2 * min(vals)
    assert max(vals) < 5.0


def test_gain_bound_formula_and_monotonicity():
    sp = solve_spectrum(20)
    ch = AdaptedChart(DEFAULT_CENTER, 0.08, sp)
    h = BumpMap(1.0)
    I = I_of_h(h).value
    b3 = corollary_lower_bound(sp, ch, I, 3, 2.4)
    assert b3 == pytest.approx(ch.volume() * (-I / UNIT_BALL_VOLUME - 2.4 * sp.alpha**3))
    assert corollary_lower_bound(20, ch, h, 3, 2.4) == pytest.approx(b3)
    assert corollary_lower_bound(sp, ch, I, 2, 2.4) < b3 < corollary_lower_bound(sp, ch, I, 4, 2.4)
    assert corollary_lower_bound(sp, ch, BumpMap(0.0), 1, 0.0) == 0.0
    with pytest.raises(ValueError):
        corollary_lower_bound(sp, ch, I, 0, 1.0)


def test_gain_bound_limit_small_alpha():
    h = BumpMap(1.0)
    I = I_of_h(h).value
    gaps = []
    for k in (20, 200, 2000):
        sp = solve_spectrum(k)
        ch = AdaptedChart(DEFAULT_CENTER, 0.08, sp)
        gaps.append(ch.volume() * (-I / UNIT_BALL_VOLUME) - corollary_lower_bound(sp, ch, I, 2, 2.4))
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert gaps[2] < 1e-8
