"""Volume-preserving bump ``h`` on the unit ball and its localisation on T^3.

``h`` fixes the first coordinate and rotates the ``(x2, x3)`` plane by an
angle that depends on the full radius::

    h(x) = (x1, R(theta(|x|)) (x2, x3)),   theta(rho) = a (1 - (rho/(1-delta))^2)^2

Coordinates are ordered ``(s, c, u)`` so the plane of the last two is the
centre-unstable plane. Each slice ``x1 = const`` is twisted by an
area-preserving map, hence ``det Dh = 1`` identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import ChartError, NonPositiveHu
from .spectral import AdaptedChart, TorusPoint, reduce_mod1

UNIT_BALL_VOLUME = 4.0 / 3.0 * math.pi
AMPLITUDE_CEILING = math.pi / 2


@dataclass(frozen=True)
class BumpMap:
    amplitude: float
    margin: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.amplitude < AMPLITUDE_CEILING:
            raise ValueError(f"amplitude must lie in [0, pi/2), got {self.amplitude}")
        if not 0.0 < self.margin < 1.0:
            raise ValueError(f"margin must lie in (0, 1), got {self.margin}")

    @property
    def support_radius(self) -> float:
        return 1.0 - self.margin


def profile(rho, a: float, delta: float):
    """Rotation angle at radius ``rho``; C^1 (indeed C^1 with zero slope) at ``1 - delta``."""
    rho = np.asarray(rho, dtype=float)
    u2 = (rho / (1.0 - delta)) ** 2
    out = np.where(u2 < 1.0, a * (1.0 - u2) ** 2, 0.0)
    return out if out.ndim else float(out)


def _angle_and_slope(h: BumpMap, x: np.ndarray):
    """``theta`` and ``theta'(rho)/rho`` (finite at the origin) for rows of ``x``."""
    R = h.support_radius
    u2 = np.einsum("...i,...i->...", x, x) / (R * R)
    inside = u2 < 1.0
    one_m = np.where(inside, 1.0 - u2, 0.0)
    theta = h.amplitude * one_m**2
    g = -4.0 * h.amplitude * one_m / (R * R)
    return theta, g


def _check_ball(x: np.ndarray):
    if np.any(np.einsum("...i,...i->...", x, x) > 1.0 + 1e-12):
        raise ChartError("bump evaluated outside the closed unit ball")


def apply_bump(h: BumpMap, x, inverse: bool = False) -> np.ndarray:
    """``h(x)`` (or ``h^{-1}(x)``) for a point or an ``(n, 3)`` array in the unit ball."""
    x = np.asarray(x, dtype=float)
    _check_ball(x)
    return _rotate(h, x, -1.0 if inverse else 1.0)


def _rotate(h: BumpMap, x: np.ndarray, sign: float) -> np.ndarray:
    theta, _ = _angle_and_slope(h, x)
    c, s = np.cos(theta), sign * np.sin(theta)
    out = np.empty_like(x)
    out[..., 0] = x[..., 0]
    out[..., 1] = c * x[..., 1] - s * x[..., 2]
    out[..., 2] = s * x[..., 1] + c * x[..., 2]
    # exact identity off the support, independent of rounding in cos/sin
    return np.where((theta == 0.0)[..., None], x, out)


def jac_bump(h: BumpMap, x) -> np.ndarray:
    """Closed-form ``Dh(x)``; shape ``(3, 3)`` or ``(n, 3, 3)``.

    With ``g = theta'(rho)/rho`` and ``(h2, h3)`` the rotated pair::

        Dh = [[1,          0,              0          ],
              [-h3 g x1,   c - h3 g x2,   -s - h3 g x3],
              [ h2 g x1,   s + h2 g x2,    c + h2 g x3]]
    """
    x = np.asarray(x, dtype=float)
    _check_ball(x)
    return _jac(h, x)


def _jac(h: BumpMap, x: np.ndarray) -> np.ndarray:
    theta, g = _angle_and_slope(h, x)
    c, s = np.cos(theta), np.sin(theta)
    c = np.where(theta == 0.0, 1.0, c)
    s = np.where(theta == 0.0, 0.0, s)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    h2 = c * x2 - s * x3
    h3 = s * x2 + c * x3
    J = np.zeros(x.shape[:-1] + (3, 3))
    J[..., 0, 0] = 1.0
    J[..., 1, 0] = -h3 * g * x1
    J[..., 1, 1] = c - h3 * g * x2
    J[..., 1, 2] = -s - h3 * g * x3
    J[..., 2, 0] = h2 * g * x1
    J[..., 2, 1] = s + h2 * g * x2
    J[..., 2, 2] = c + h2 * g * x3
    return J


def jac_bump_inverse(J: np.ndarray) -> np.ndarray:
    """Inverse of matrices with the block structure of :func:`jac_bump` (unit determinant)."""
    out = np.zeros_like(J)
    p, q = J[..., 1, 1], J[..., 1, 2]
    r, t = J[..., 2, 1], J[..., 2, 2]
    b1, b2 = J[..., 1, 0], J[..., 2, 0]
    out[..., 0, 0] = 1.0
    out[..., 1, 1], out[..., 1, 2] = t, -q
    out[..., 2, 1], out[..., 2, 2] = -r, p
    out[..., 1, 0] = -(t * b1 - q * b2)
    out[..., 2, 0] = -(-r * b1 + p * b2)
    return out


def h_components(h: BumpMap, x):
    """``(h_u, h_c)`` with ``Dh e_u = h_u e_u + h_c e_c``."""
    J = jac_bump(h, x)
    return J[..., 2, 2], J[..., 1, 2]


def ball_points(n: int, kind: str = "halton", seed: int | None = None) -> np.ndarray:
    """``n`` points filling the closed unit ball; deterministic for ``halton``.

    A volume-preserving map of the cube: radius ``u^(1/3)``, direction from
    the Lambert cylindrical projection. The first Halton point is the centre.
    """
    if kind == "halton":
        u = qmc.Halton(d=3, scramble=False).random(n)
    elif kind == "random":
        u = np.random.Generator(np.random.Philox(key=seed or 0)).random((n, 3))
    else:
        raise ValueError(f"unknown point set {kind!r}")
    rho = np.cbrt(u[:, 0])
    z = 2.0 * u[:, 1] - 1.0
    phi = 2.0 * math.pi * u[:, 2]
    sxy = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    d = np.column_stack([sxy * np.cos(phi), sxy * np.sin(phi), z])
    return rho[:, None] * d


def c1_distance(h: BumpMap, n_samples: int = 100_000) -> float:
    """Sampled ``sup |h(x) - x| + sup ||Dh(x) - I||_op`` over the unit ball.

    A lower bound on the true C^1 distance; the Halton set contains the
    centre, where ``||Dh - I|| = 2 sin(theta(0)/2)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if h.amplitude == 0.0:
        return 0.0
    best0 = best1 = 0.0
    for chunk in np.array_split(ball_points(n_samples), max(1, n_samples // 50_000)):
        best0 = max(best0, float(np.max(np.linalg.norm(_rotate(h, chunk, 1.0) - chunk, axis=1))))
        D = _jac(h, chunk) - np.eye(3)
        best1 = max(best1, float(np.max(np.linalg.norm(D, ord=2, axis=(1, 2)))))
    return best0 + best1


@dataclass(frozen=True)
class IntegralEstimate:
    value: float
    stderr: float
    method: str
    n: int

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "method": self.method, "n": self.n}


def _log_hu(h: BumpMap, x: np.ndarray) -> np.ndarray:
    J = _jac(h, x)
    hu = J[:, 2, 2]
    if np.any(hu <= 0.0):
        raise NonPositiveHu(f"h_u <= 0 at amplitude {h.amplitude}")
    return np.log(hu)


def _midpoint(h: BumpMap, n: int) -> float:
    g = (np.arange(n) + 0.5) * (2.0 / n) - 1.0
    yy, zz = np.meshgrid(g, g, indexing="ij")
    yz = np.column_stack([yy.ravel(), zz.ravel()])
    parts = []
    for x1 in g:
        pts = np.column_stack([np.full(len(yz), x1), yz])
        pts = pts[np.einsum("ij,ij->i", pts, pts) < 1.0]
        parts.append(float(np.sum(_log_hu(h, pts))) if len(pts) else 0.0)
    return math.fsum(parts) * (2.0 / n) ** 3


def I_of_h(h: BumpMap, method: str = "midpoint", n: int = 200, seed: int = 0) -> IntegralEstimate:
    """``I(h)``: integral of ``log h_u`` over the unit ball (Lebesgue measure).

    ``midpoint``: cell-centred rule on an ``n^3`` grid of ``[-1, 1]^3`` masked
    to the ball; the error estimate is the change from the ``n/2`` grid.
    The integrand vanishes near the sphere so the mask costs nothing.
    ``montecarlo``: ``n`` uniform points, standard error from the sample.
    """
    if h.amplitude == 0.0:
        return IntegralEstimate(0.0, 0.0, method, n)
    if method == "midpoint":
        fine = _midpoint(h, n)
        coarse = _midpoint(h, max(2, n // 2))
        return IntegralEstimate(fine, abs(fine - coarse), method, n)
    if method == "montecarlo":
        vals = _log_hu(h, ball_points(n, kind="random", seed=seed))
        return IntegralEstimate(
            UNIT_BALL_VOLUME * float(vals.mean()),
            UNIT_BALL_VOLUME * float(vals.std(ddof=1)) / math.sqrt(n),
            method,
            n,
        )
    raise ValueError(f"unknown quadrature method {method!r}")


@dataclass(frozen=True)
class LocalizedBump:
    """``h`` transported to the adapted ball of ``chart``; identity elsewhere."""

    bump: BumpMap
    chart: AdaptedChart

    def unit_coords(self, coords: np.ndarray) -> np.ndarray:
        return self.chart.to_unit(coords)

    def displacement(self, coords: np.ndarray, inverse: bool = False) -> np.ndarray:
        """Lift displacement ``h_loc(w) - w`` for rows of torus coordinates."""
        x = self.chart.to_unit(coords)
        inside = np.einsum("...i,...i->...", x, x) < 1.0
        xi = np.where(inside[..., None], x, 0.0)
        moved = _rotate(self.bump, xi, -1.0 if inverse else 1.0) - xi
        step = self.chart.radius * (moved @ self.chart.spectral.P.T)
        return np.where(inside[..., None], step, 0.0)

    def adapted_jacobian(self, coords: np.ndarray) -> np.ndarray:
        """Derivative in adapted coordinates: ``Dh`` at the chart image, identity outside."""
        x = self.chart.to_unit(coords)
        inside = np.einsum("...i,...i->...", x, x) < 1.0
        return _jac(self.bump, np.where(inside[..., None], x, 1.0))


def apply_localized(lb: LocalizedBump, w: TorusPoint, inverse: bool = False) -> TorusPoint:
    return TorusPoint(w.lift + lb.displacement(w.coords, inverse=inverse))


def jac_localized(lb: LocalizedBump, w: TorusPoint) -> np.ndarray:
    """Ambient derivative ``P Dh P^{-1}``; the homothety factors cancel."""
    J = lb.adapted_jacobian(w.coords)
    sp = lb.chart.spectral
    return sp.P @ J @ sp.P_inv


def localized_c1_distance(lb: LocalizedBump, n_samples: int = 20_000) -> float:
    """C^1 distance of ``h_loc`` to the identity in the adapted norm, sampled on the ball."""
    if lb.bump.amplitude == 0.0:
        return 0.0
    x = ball_points(n_samples)
    c0 = lb.chart.radius * float(np.max(np.linalg.norm(_rotate(lb.bump, x, 1.0) - x, axis=1)))
    c1 = float(np.max(np.linalg.norm(_jac(lb.bump, x) - np.eye(3), ord=2, axis=(1, 2))))
    return c0 + c1


__all__ = [
    "BumpMap",
    "LocalizedBump",
    "IntegralEstimate",
    "profile",
    "apply_bump",
    "jac_bump",
    "jac_bump_inverse",
    "h_components",
    "c1_distance",
    "I_of_h",
    "apply_localized",
    "jac_localized",
    "localized_c1_distance",
    "ball_points",
    "reduce_mod1",
]
