"""Orbits and derivative cocycle of ``f_{k,r} = A_k o h_{k,r}``.

Batched routines take torus coordinates as ``(n, 3)`` arrays and run all
orbits in lock-step; every operation is elementwise across the batch, so a
given orbit produces the same bits whatever batch it is computed in.

Tangent vectors are handled in adapted coordinates, where the cocycle is
``diag(lambda) @ Dh(x)`` (``Dh`` = identity off the ball). Lyapunov
exponents do not depend on the (constant) change of basis.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .errors import DisagreementWarning, NonPositiveHu
from .perturbation import UNIT_BALL_VOLUME, BumpMap, I_of_h, LocalizedBump, _jac, ball_points
from .spectral import (
    DEFAULT_CENTER,
    DEFAULT_RADIUS,
    AdaptedChart,
    SpectralData,
    TorusPoint,
    adapted_ball_volume,
    inverse_matrix,
    reduce_mod1,
    solve_spectrum,
)

F_BOX = (Fraction(0), Fraction(0), Fraction(5, 6)), (Fraction(2, 3), Fraction(1), Fraction(1))


@dataclass(frozen=True)
class PerturbedDiffeo:
    spectral: SpectralData
    localized: LocalizedBump | None = None

    @property
    def unperturbed(self) -> bool:
        return self.localized is None or self.localized.bump.amplitude == 0.0

    @property
    def chart(self) -> AdaptedChart | None:
        return None if self.localized is None else self.localized.chart


def make_diffeo(
    k: int,
    amplitude: float = 0.0,
    radius: float = DEFAULT_RADIUS,
    margin: float = 0.1,
    center: TorusPoint = DEFAULT_CENTER,
    spectral: SpectralData | None = None,
) -> PerturbedDiffeo:
    sp = spectral if spectral is not None else solve_spectrum(k)
    chart = AdaptedChart(center, radius, sp)
    return PerturbedDiffeo(sp, LocalizedBump(BumpMap(amplitude, margin), chart))


# -- point maps ---------------------------------------------------------------


def _forward(f: PerturbedDiffeo, W: np.ndarray) -> np.ndarray:
    if f.localized is not None:
        W = W + f.localized.displacement(W)
    return reduce_mod1(W @ f.spectral.A.T)


def _backward(f: PerturbedDiffeo, W: np.ndarray) -> np.ndarray:
    V = reduce_mod1(W @ f.spectral.A_inv.T)
    if f.localized is not None:
        V = reduce_mod1(V + f.localized.displacement(V, inverse=True))
    return V


def _adapted_jac(f: PerturbedDiffeo, W: np.ndarray) -> np.ndarray:
    if f.localized is None:
        return np.broadcast_to(np.eye(3), W.shape[:-1] + (3, 3)).copy()
    return f.localized.adapted_jacobian(W)


def step(f: PerturbedDiffeo, w: TorusPoint) -> TorusPoint:
    lift = w.lift
    if f.localized is not None:
        lift = lift + f.localized.displacement(w.coords)
    return TorusPoint(f.spectral.A @ lift)


def inverse_step(f: PerturbedDiffeo, w: TorusPoint) -> TorusPoint:
    v = TorusPoint(f.spectral.A_inv @ w.lift)
    if f.localized is None:
        return v
    return TorusPoint(v.lift + f.localized.displacement(v.coords, inverse=True))


def dstep(f: PerturbedDiffeo, w: TorusPoint) -> np.ndarray:
    """Ambient derivative ``A_k @ P Dh P^{-1}``."""
    sp = f.spectral
    return sp.A @ sp.P @ _adapted_jac(f, w.coords[None])[0] @ sp.P_inv


# -- random streams -------------------------------------------------------------


def seed_stream(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(master_seed, index)``."""
    return np.random.Generator(np.random.Philox(key=[int(master_seed) & (2**64 - 1), int(index)]))


def uniform_points(master_seed: int, index: int, n: int) -> np.ndarray:
    return seed_stream(master_seed, index).random((n, 3))


# -- Benettin -------------------------------------------------------------------


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched 3x3 product with a fixed summation order."""
    return a[..., :, 0, None] * b[..., None, 0, :] + a[..., :, 1, None] * b[..., None, 1, :] + a[..., :, 2, None] * b[..., None, 2, :]


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _qr3(B: np.ndarray):
    """Gram-Schmidt with one re-orthogonalisation on the columns of ``(n, 3, 3)``."""
    a1, a2, a3 = B[..., :, 0], B[..., :, 1], B[..., :, 2]
    r1 = np.sqrt(_dot(a1, a1))
    q1 = a1 / r1[..., None]
    for _ in range(2):
        a2 = a2 - _dot(q1, a2)[..., None] * q1
    r2 = np.sqrt(_dot(a2, a2))
    q2 = a2 / r2[..., None]
    for _ in range(2):
        a3 = a3 - _dot(q1, a3)[..., None] * q1
        a3 = a3 - _dot(q2, a3)[..., None] * q2
    r3 = np.sqrt(_dot(a3, a3))
    q3 = a3 / r3[..., None]
    return np.stack([q1, q2, q3], axis=-1), np.stack([r1, r2, r3], axis=-1)


# Fixed generic starting frame: the adapted axes are invariant for the
# linear map and would pin the frame to the wrong ordering.
_FRAME0 = np.linalg.qr(np.array([[0.8, -0.3, 0.5], [0.2, 0.9, -0.4], [0.55, 0.35, 0.75]]))[0]


def _random_frames(master_seed: int, indices) -> tuple[np.ndarray, np.ndarray]:
    """Starting point and orthonormal starting frame for each seed index."""
    W, Q = [], []
    for i in indices:
        g = seed_stream(master_seed, int(i))
        W.append(g.random(3))
        Q.append(_qr3(g.standard_normal((1, 3, 3)))[0][0])
    return np.array(W), np.array(Q)


def _benettin_batch(f: PerturbedDiffeo, W: np.ndarray, T: int, warmup: int, Q: np.ndarray | None = None) -> np.ndarray:
    lam = f.spectral.eigenvalues
    n = W.shape[0]
    Q = np.broadcast_to(_FRAME0, (n, 3, 3)).copy() if Q is None else Q.copy()
    acc = np.zeros((n, 3))
    for i in range(warmup + T):
        M = lam[None, :, None] * _adapted_jac(f, W)
        Q, r = _qr3(_matmul(M, Q))
        if i >= warmup:
            acc += np.log(r)
        W = _forward(f, W)
    return -np.sort(-(acc / T), axis=-1)


def benettin_spectrum(f: PerturbedDiffeo, w0: TorusPoint, T: int, warmup: int = 100, seed: int | None = None) -> np.ndarray:
    """Finite-time Lyapunov exponents along the orbit of ``w0``, descending.

    ``seed`` draws a random starting frame; by default a fixed generic frame is used.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    Q = None if seed is None else _qr3(seed_stream(seed, 0).standard_normal((1, 3, 3)))[0]
    return _benettin_batch(f, w0.coords[None], T, warmup, Q)[0]


# -- Monte Carlo over seeds --------------------------------------------------------


def _summary(samples: np.ndarray, level: float = 0.95):
    """Mean, standard error and two-sided t interval along axis 0."""
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(n)
    q = stats.t.ppf(0.5 + level / 2.0, n - 1)
    return mean, se, np.stack([mean - q * se, mean + q * se], axis=-1)


@dataclass
class LyapunovEstimate:
    exponents: np.ndarray
    stderr: np.ndarray
    ci: np.ndarray  # (3, 2)
    per_seed: np.ndarray  # (n_seeds, 3)
    n_seeds: int
    n_iters: int
    master_seed: int

    @property
    def central(self) -> float:
        return float(self.exponents[1])

    def to_dict(self) -> dict:
        return {
            "exponents": self.exponents.tolist(),
            "stderr": self.stderr.tolist(),
            "ci95": self.ci.tolist(),
            "n_seeds": self.n_seeds,
            "n_iters": self.n_iters,
            "master_seed": self.master_seed,
            "per_seed": self.per_seed.tolist(),
        }


def _run_chunks(func, indices: list[int], tasks: int) -> np.ndarray:
    chunks = [c for c in np.array_split(np.asarray(indices), max(1, tasks)) if len(c)]
    if len(chunks) == 1:
        return func(chunks[0])
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(func, chunks))
    return np.concatenate(parts, axis=0)


def lyapunov_mc(
    f: PerturbedDiffeo,
    n_seeds: int,
    T: int,
    master_seed: int = 0,
    warmup: int = 100,
    tasks: int = 1,
) -> LyapunovEstimate:
    """Benettin exponents from ``n_seeds`` uniform starting points.

    Seed ``i`` draws its starting point and starting frame from stream
    ``(master_seed, i)``; ``tasks`` only partitions the work.
    """
    if n_seeds < 2:
        raise ValueError("need at least 2 seeds for an error bar")

    def run(idx):
        W0, Q0 = _random_frames(master_seed, idx)
        return _benettin_batch(f, W0, T, warmup, Q0)

    per_seed = _run_chunks(run, list(range(n_seeds)), tasks)
    mean, se, ci = _summary(per_seed)
    return LyapunovEstimate(mean, se, ci, per_seed, n_seeds, T, master_seed)


# -- bundles -------------------------------------------------------------------------


def _normalize(v):
    return v / np.sqrt(_dot(v, v))[..., None]


def _apply(M, v):
    return np.einsum("nij,nj->ni", M, v)


def unstable_direction(f: PerturbedDiffeo, W: np.ndarray, depth: int = 50) -> np.ndarray:
    """``E^u`` at each row of ``W`` (adapted coordinates), by pushing ``e_u``
    forward along the ``depth`` preimages."""
    lam = f.spectral.eigenvalues
    back = [W]
    for _ in range(depth):
        back.append(_backward(f, back[-1]))
    u = np.zeros_like(W)
    u[:, 2] = 1.0
    for Y in reversed(back[1:]):
        u = _normalize(lam * _apply(_adapted_jac(f, Y), u))
    return u


def center_direction(f: PerturbedDiffeo, W: np.ndarray, depth: int = 50) -> np.ndarray:
    """``E^c = E^cs cap E^cu`` at each row of ``W`` (adapted coordinates).

    ``E^cu`` is the constant plane ``x_s = 0`` (the bump preserves it). The
    normal of ``E^cs`` is pulled back from ``e_u`` along the forward orbit
    with transposed derivatives.
    """
    lam = f.spectral.eigenvalues
    fwd = [W]
    for _ in range(depth - 1):
        fwd.append(_forward(f, fwd[-1]))
    nrm = np.zeros_like(W)
    nrm[:, 2] = 1.0
    for Z in reversed(fwd):
        M = lam[None, :, None] * _adapted_jac(f, Z)
        nrm = _normalize(np.einsum("nji,nj->ni", M, nrm))
    e_s = np.zeros_like(W)
    e_s[:, 0] = 1.0
    return _normalize(np.cross(nrm, e_s))


def _direct_logs(f: PerturbedDiffeo, W: np.ndarray, depth: int):
    """Per-point ``log J^u`` and the log stretch of the quotient ``E^cu / E^u``."""
    lam = f.spectral.eigenvalues
    u = unstable_direction(f, W, depth)
    M = lam[None, :, None] * _adapted_jac(f, W)
    Mu = _apply(M, u)
    ju = np.sqrt(_dot(Mu, Mu))
    u_next = Mu / ju[:, None]
    c_perp = np.stack([np.zeros(len(W)), -u[:, 2], u[:, 1]], axis=-1)
    w = _apply(M, c_perp)
    w = w - _dot(w, u_next)[:, None] * u_next
    return np.log(ju), np.log(np.sqrt(_dot(w, w)))


@dataclass
class SigmaEstimate:
    bundle: str
    value: float
    stderr: float
    ci: tuple
    method: str
    n_seeds: int
    n_samples: int
    cross_check: "SigmaEstimate | None" = None
    disagreement: float | None = field(default=None)

    def to_dict(self) -> dict:
        out = {
            "bundle": self.bundle,
            "value": self.value,
            "stderr": self.stderr,
            "ci95": list(self.ci),
            "method": self.method,
            "n_seeds": self.n_seeds,
            "n_samples": self.n_samples,
        }
        if self.cross_check is not None:
            out["cross_check"] = self.cross_check.to_dict()
            out["disagreement_in_se"] = self.disagreement
        return out


def sigma_direct(
    f: PerturbedDiffeo,
    bundle: str,
    n_seeds: int,
    points_per_seed: int,
    master_seed: int = 0,
    depth: int = 50,
    tasks: int = 1,
) -> SigmaEstimate:
    """Space average of the log Jacobian on ``E^u`` (or on ``E^cu/E^u`` for ``c``)."""
    col = {"u": 0, "c": 1}[bundle]

    def run(idx):
        rows = []
        for i in idx:
            W = uniform_points(master_seed, 1_000_000 + int(i), points_per_seed)
            rows.append(np.mean(_direct_logs(f, W, depth)[col]))
        return np.array(rows)

    per_seed = _run_chunks(run, list(range(n_seeds)), tasks)
    mean, se, ci = _summary(per_seed)
    return SigmaEstimate(bundle, float(mean), float(se), tuple(map(float, ci)), "direct-jacobian", n_seeds, n_seeds * points_per_seed)


def sigma_from_spectrum(est: LyapunovEstimate, bundle: str) -> SigmaEstimate:
    i = {"u": 0, "c": 1}[bundle]
    return SigmaEstimate(
        bundle,
        float(est.exponents[i]),
        float(est.stderr[i]),
        tuple(map(float, est.ci[i])),
        "spectrum-average",
        est.n_seeds,
        est.n_seeds * est.n_iters,
    )


def sigma_estimate(
    f: PerturbedDiffeo,
    bundle: str,
    n_seeds: int,
    T: int,
    master_seed: int = 0,
    depth: int = 50,
    points_per_seed: int | None = None,
    warmup: int = 100,
    tasks: int = 1,
    spectrum: LyapunovEstimate | None = None,
) -> SigmaEstimate:
    """``sigma^bundle``: spectrum average (primary) cross-checked by direct bundle tracking.

    Emits :class:`DisagreementWarning` when the two differ by more than three
    combined standard errors.
    """
    if bundle not in ("c", "u"):
        raise ValueError("bundle must be 'c' or 'u'")
    est = spectrum if spectrum is not None else lyapunov_mc(f, n_seeds, T, master_seed, warmup, tasks)
    primary = sigma_from_spectrum(est, bundle)
    pps = points_per_seed if points_per_seed is not None else max(16, T // depth)
    check = sigma_direct(f, bundle, n_seeds, pps, master_seed, depth, tasks)
    # floor at rounding level: both errors vanish for the linear map
    combined = max(math.hypot(primary.stderr, check.stderr), 1e-12 * (1.0 + abs(primary.value)))
    gap = abs(primary.value - check.value) / combined
    primary.cross_check = check
    primary.disagreement = gap
    if gap > 3.0:
        warnings.warn(
            f"sigma^{bundle}: spectrum average {primary.value:.6g} vs direct {check.value:.6g} ({gap:.1f} SE)",
            DisagreementWarning,
            stacklevel=2,
        )
    return primary


# -- return time, F region, C, lower bound ---------------------------------------------


@dataclass(frozen=True)
class ReturnTime:
    n: int | None  # None: no return detected up to n_max
    n_max: int
    n_samples: int
    hits: int

    @property
    def exceeded(self) -> bool:
        return self.n is None

    def __str__(self):
        return f"> {self.n_max}" if self.n is None else str(self.n)


def return_time(spectral: SpectralData, chart: AdaptedChart, n_max: int = 10, n_samples: int = 100_000) -> ReturnTime:
    """Least ``n`` with ``A_k^n(B) cap B`` non-empty, detected on a Halton sample of ``B``.

    A missed intersection can only overestimate ``n``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    x = ball_points(n_samples)
    Y = reduce_mod1(chart.center.coords + chart.radius * (x @ spectral.P.T))
    A = spectral.A
    for n in range(1, n_max + 1):
        Y = reduce_mod1(Y @ A.T)
        hits = int(np.count_nonzero(chart.contains(Y)))
        if hits:
            return ReturnTime(n, n_max, n_samples, hits)
    return ReturnTime(None, n_max, n_samples, 0)


def check_F_disjoint(k: int) -> bool:
    """Exact test that ``A_k^{-1}(F)`` misses ``F = P((0,2/3) x (0,1) x (5/6,1))``.

    The third coordinate of ``A_k^{-1} w`` is a fixed integer combination of
    the coordinates of ``w``; its range over the open box is computed with
    rational interval arithmetic and compared with ``(5/6, 1)`` modulo 1.
    """
    row = [int(v) for v in inverse_matrix(k)[2]]
    lo_box, hi_box = F_BOX
    lo = sum(c * (lo_box[i] if c > 0 else hi_box[i]) for i, c in enumerate(row))
    hi = sum(c * (hi_box[i] if c > 0 else lo_box[i]) for i, c in enumerate(row))
    if hi - lo >= 1:
        return False
    target_lo, target_hi = lo_box[2], hi_box[2]
    for shift in range(math.floor(lo) - 1, math.ceil(hi) + 2):
        if max(lo, target_lo + shift) < min(hi, target_hi + shift):
            return False
    return True


@dataclass(frozen=True)
class CEstimate:
    value: float
    ratio_factor: float
    projection_factor: float
    n_points: int
    depth: int

    def __float__(self):
        return self.value

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "ratio_factor": self.ratio_factor,
            "projection_factor": self.projection_factor,
            "n_points": self.n_points,
            "depth": self.depth,
        }


def estimate_C(f: PerturbedDiffeo, n_points: int = 2000, depth: int = 30) -> CEstimate:
    """``max |h_c|/h_u  *  max |Proj_u(e_c)|`` over the perturbation ball.

    The projection of ``e_c`` onto ``E^u`` is taken parallel to the perturbed
    centre direction; both bundles are reconstructed to finite depth.
    """
    if f.localized is None or f.unperturbed:
        return CEstimate(0.0, 0.0, 0.0, n_points, depth)
    lb = f.localized
    x = ball_points(n_points)
    J = _jac(lb.bump, x)
    hu, hc = J[:, 2, 2], J[:, 1, 2]
    if np.any(hu <= 0):
        raise NonPositiveHu(f"h_u <= 0 at amplitude {lb.bump.amplitude}")
    ratio = float(np.max(np.abs(hc) / hu))
    W = reduce_mod1(lb.chart.center.coords + lb.chart.radius * (x @ f.spectral.P.T))
    u = unstable_direction(f, W, depth)
    c = center_direction(f, W, depth)
    det = u[:, 1] * c[:, 2] - c[:, 1] * u[:, 2]
    proj = float(np.max(np.abs(c[:, 2] / det)))
    return CEstimate(ratio * proj, ratio, proj, n_points, depth)


def corollary_lower_bound(
    spectral: SpectralData | int,
    chart: AdaptedChart,
    h: BumpMap | float,
    n_r: int,
    C: float,
) -> float:
    """``vol(B) * (-I_avg - C alpha^n_r)`` with ``I_avg`` the ball average of ``log h_u``.

    ``h`` is a bump (its integral is computed) or a precomputed integral over
    the unit ball. Dividing by the unit-ball volume is the change of
    variables from the unit ball to ``B``.
    """
    if n_r < 1:
        raise ValueError("n_r must be >= 1")
    sp = solve_spectrum(spectral) if isinstance(spectral, int) else spectral
    I_value = I_of_h(h).value if isinstance(h, BumpMap) else float(h)
    vol = adapted_ball_volume(chart)
    return vol * (-I_value / UNIT_BALL_VOLUME - float(C) * sp.alpha**n_r)
