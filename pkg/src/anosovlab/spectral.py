"""The family of hyperbolic automorphisms ``A_k`` of the 3-torus.

All matrices are ``numpy`` float arrays of shape ``(3, 3)`` in row-major
order (``M[i, j]`` is row ``i``, column ``j``) and act on column vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartError

MIN_K = 5
ROOT_TOL = 1e-13


def family_matrix(k: int) -> np.ndarray:
    """Integer matrix of ``f_k`` as a float array."""
    return np.array([[0.0, 0.0, 1.0], [0.0, 1.0, -1.0], [-1.0, -1.0, float(k)]])


def inverse_matrix(k: int) -> np.ndarray:
    """Closed-form inverse of ``A_k`` (adjugate, since ``det A_k = 1``).

    Returned with integer dtype so that ``A_k @ inverse`` is exact.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return np.array([[k - 1, -1, -1], [1, 1, 0], [1, 0, 0]], dtype=np.int64)


def char_poly_eval(k: int, x: float) -> float:
    """Characteristic polynomial x^3 - (k+1) x^2 + k x - 1 by Horner's rule."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return ((x - (k + 1)) * x + k) * x - 1.0


def _char_poly_deriv(k: int, x: float) -> float:
    return (3.0 * x - 2.0 * (k + 1)) * x + k


def _bisect(k: int, lo: float, hi: float, tol: float = ROOT_TOL) -> float:
    flo = char_poly_eval(k, lo)
    fhi = char_poly_eval(k, hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise ValueError(f"no sign change of p_{k} on ({lo}, {hi})")
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        fm = char_poly_eval(k, mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _newton_polish(k: int, x: float, steps: int = 2) -> float:
    for _ in range(steps):
        d = _char_poly_deriv(k, x)
        if d == 0.0:
            break
        x_new = x - char_poly_eval(k, x) / d
        if not math.isfinite(x_new):
            break
        x = x_new
    return x


def eigenvector(lam: float) -> np.ndarray:
    """Unit eigenvector of any ``A_k`` for eigenvalue ``lam``.

    The direction ``(1, lam/(1-lam), lam)`` does not depend on ``k``; ``k``
    only selects which ``lam`` are eigenvalues.
    """
    if lam == 1.0:
        raise ZeroDivisionError("eigenvector direction has a pole at lambda = 1")
    v = np.array([1.0, lam / (1.0 - lam), lam])
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SpectralData:
    k: int
    lambda_s: float
    lambda_c: float
    lambda_u: float
    e_s: np.ndarray = field(repr=False)
    e_c: np.ndarray = field(repr=False)
    e_u: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)
    P_inv: np.ndarray = field(repr=False)
    theta: float

    @property
    def A(self) -> np.ndarray:
        return family_matrix(self.k)

    @property
    def A_inv(self) -> np.ndarray:
        return inverse_matrix(self.k).astype(float)

    @property
    def eigenvalues(self) -> np.ndarray:
        """``(lambda_s, lambda_c, lambda_u)``; the matrix of ``A_k`` in adapted coordinates is their diagonal."""
        return np.array([self.lambda_s, self.lambda_c, self.lambda_u])

    @property
    def alpha(self) -> float:
        return self.lambda_c / self.lambda_u

    def adapted_norm(self, v) -> float | np.ndarray:
        """Norm making ``e_s, e_c, e_u`` orthonormal; works row-wise on ``(n, 3)``."""
        return np.linalg.norm(np.asarray(v) @ self.P_inv.T, axis=-1)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lambda_s": self.lambda_s,
            "lambda_c": self.lambda_c,
            "lambda_u": self.lambda_u,
            "theta": self.theta,
            "e_s": self.e_s.tolist(),
            "e_c": self.e_c.tolist(),
            "e_u": self.e_u.tolist(),
            "det_P": float(np.linalg.det(self.P)),
        }


def solve_spectrum(k: int) -> SpectralData:
    """Eigen-decomposition of ``A_k`` for ``k >= 5``.

    The unstable and central roots are bracketed by sign changes of ``p_k``
    on ``(k, k+1)`` and ``(1/2, 1)``; bisection then one Newton step. The
    stable root comes from the unit determinant and is polished on ``p_k``.
    """
    if k < MIN_K:
        raise ValueError(f"the eigenvalue brackets need k >= {MIN_K}, got {k}")
    lam_u = _newton_polish(k, _bisect(k, float(k), float(k + 1)), steps=1)
    lam_c = _newton_polish(k, _bisect(k, 0.5, 1.0), steps=1)
    lam_s = _newton_polish(k, 1.0 / (lam_c * lam_u))

    e_s, e_c, e_u = eigenvector(lam_s), eigenvector(lam_c), eigenvector(lam_u)
    P = np.column_stack([e_s, e_c, e_u])
    P_inv = np.linalg.inv(P)
    theta = min(lam_c / lam_s, lam_u / lam_c)
    return SpectralData(k, lam_s, lam_c, lam_u, e_s, e_c, e_u, P, P_inv, theta)


def reduce_mod1(x):
    """Map reals to ``[0, 1)`` with ``floor``; never returns 1.0."""
    y = np.asarray(x, dtype=float) - np.floor(x)
    return np.where(y >= 1.0, 0.0, y)


@dataclass(frozen=True)
class TorusPoint:
    """A point of T^3 together with one lift to R^3."""

    lift: np.ndarray

    def __post_init__(self):
        lift = np.array(self.lift, dtype=float).reshape(3)
        if not np.all(np.isfinite(lift)):
            raise ValueError("torus point must be finite")
        object.__setattr__(self, "lift", lift)

    @property
    def coords(self) -> np.ndarray:
        return reduce_mod1(self.lift)

    @classmethod
    def from_coords(cls, coords) -> "TorusPoint":
        return cls(reduce_mod1(np.asarray(coords, dtype=float)))


DEFAULT_CENTER = TorusPoint((1 / 3, 1 / 2, 11 / 12))
# Largest round radius whose adapted ball stays inside F_REGION for every k >= 5.
DEFAULT_RADIUS = 0.08
F_REGION = ((0.0, 0.0, 5 / 6), (2 / 3, 1.0, 1.0))


@dataclass(frozen=True)
class AdaptedChart:
    """Ball of radius ``radius`` about ``center`` in the adapted metric of ``spectral``.

    ``forward`` sends the ball onto the Euclidean unit ball: an isometry onto
    ``B_r(0)`` (coordinates along ``e_s, e_c, e_u``) followed by the homothety
    of ratio ``1/r``.
    """

    center: TorusPoint
    radius: float
    spectral: SpectralData

    def __post_init__(self):
        if not 0.0 < self.radius < 1.0:
            raise ChartError(f"radius must lie in (0, 1), got {self.radius}")
        if self.extent >= 0.5:
            raise ChartError(
                f"adapted ball of radius {self.radius} does not embed in T^3 for k={self.spectral.k} "
                f"(coordinate half-extent {self.extent:.4f} >= 1/2)"
            )

    @property
    def extent(self) -> float:
        """Largest Euclidean half-width of the ball along a coordinate axis."""
        return float(self.radius * np.max(np.linalg.norm(self.spectral.P, axis=1)))

    def displacement(self, coords: np.ndarray) -> np.ndarray:
        """Lift of ``coords - center`` closest to 0; ``(n, 3)`` or ``(3,)``."""
        d = np.asarray(coords, dtype=float) - self.center.coords
        return d - np.round(d)

    def to_unit(self, coords: np.ndarray) -> np.ndarray:
        """Unchecked chart map on raw torus coordinates (any shape ``(..., 3)``)."""
        return self.displacement(coords) @ self.spectral.P_inv.T / self.radius

    def contains(self, coords: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.to_unit(coords), axis=-1) < 1.0

    def forward(self, w: TorusPoint) -> np.ndarray:
        x = self.to_unit(w.coords)
        if np.linalg.norm(x) > 1.0:
            raise ChartError("point lies outside the adapted ball")
        return x

    def backward(self, x) -> TorusPoint:
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x) > 1.0:
            raise ChartError("point lies outside the unit ball")
        return TorusPoint(self.center.lift + self.radius * (self.spectral.P @ x))

    def volume(self) -> float:
        return adapted_ball_volume(self)

    def inside_F(self) -> bool:
        return self.inside_region(*F_REGION)

    def inside_region(self, lo, hi) -> bool:
        """Whether the ball lies in the box ``P(lo x hi)`` of the torus (lift around the center)."""
        half = self.radius * np.linalg.norm(self.spectral.P, axis=1)
        c = self.center.coords
        return bool(np.all(c - half > np.asarray(lo)) and np.all(c + half < np.asarray(hi)))


def adapted_forward(chart: AdaptedChart, w: TorusPoint) -> np.ndarray:
    return chart.forward(w)


def adapted_backward(chart: AdaptedChart, x) -> TorusPoint:
    return chart.backward(x)


def adapted_ball_volume(chart: AdaptedChart) -> float:
    """Lebesgue volume of the adapted ball: ``|det P| * 4/3 pi r^3``."""
    return abs(float(np.linalg.det(chart.spectral.P))) * 4.0 / 3.0 * math.pi * chart.radius**3


def cone_constants(spectral: SpectralData, beta: float | None = None, validate: bool = True):
    """Cone angle and rate constants for ``A_k`` (see :class:`ConeConstants`).

    ``beta`` defaults to ``theta**(1/4) - 1`` so that ``(1+beta)^2 = sqrt(theta)``.
    ``mu1, lambda2`` sit at the log-scale thirds of
    ``((1+beta) lambda_s, lambda_c/(1+beta))`` and ``mu2, lambda3`` at the
    thirds of ``((1+beta) lambda_c, lambda_u/(1+beta))``.

    With ``validate=False`` an inadmissible ``beta`` still yields constants
    (possibly with ``gamma >= 1`` and ``epsilon = 0``), for negative tests.
    """
    from .conefield import ConeConstants, epsilon_bound, gamma_of

    if spectral.theta <= 1.0:
        raise ValueError("theta must exceed 1")
    if beta is None:
        beta = spectral.theta**0.25 - 1.0
    if beta <= 0:
        raise ValueError("beta must be positive")
    one_b = 1.0 + beta

    def thirds(lo, hi):
        step = math.log(hi / lo) / 3.0
        return lo * math.exp(step), lo * math.exp(2.0 * step)

    mu1, lambda2 = thirds(one_b * spectral.lambda_s, spectral.lambda_c / one_b)
    mu2, lambda3 = thirds(one_b * spectral.lambda_c, spectral.lambda_u / one_b)
    raw = ConeConstants(
        beta=beta,
        mu1=mu1,
        lambda2=lambda2,
        mu2=mu2,
        lambda3=lambda3,
        gamma=max(mu2 / lambda3, mu1 / lambda2),
        epsilon=0.0,
        lambda1=spectral.lambda_s,
        mu3=spectral.lambda_u,
    )
    if not validate:
        eps = epsilon_bound(raw) if raw.gamma < 1.0 and mu1 < 1.0 < lambda3 else 0.0
        return raw.replace(epsilon=eps)

    from .errors import ConstantsError

    if mu1 >= 1.0 or lambda3 <= 1.0:
        raise ConstantsError(f"need mu1 < 1 < lambda3, got mu1={mu1}, lambda3={lambda3}")
    if not 1.0 < one_b**2 < spectral.theta:
        raise ConstantsError(f"need 1 < (1+beta)^2 < theta, got (1+beta)^2={one_b**2}, theta={spectral.theta}")
    gamma = gamma_of(raw)
    c = raw.replace(gamma=gamma)
    return c.replace(epsilon=epsilon_bound(c))
