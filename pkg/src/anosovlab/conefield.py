"""Invariant cone families and a sampling certifier for absolute partial hyperbolicity.

Everything here works in adapted coordinates, where the splitting
``E^s + E^c + E^u`` is the canonical basis and ``A_k`` is
``diag(lambda_s, lambda_c, lambda_u)``. A cone ``C(E, beta)`` is the set of
``v`` with ``|v_F| <= beta |v_E|``, ``F`` the orthogonal complement of ``E``.

Choice of the admissible perturbation size
------------------------------------------
Let ``g`` satisfy ``||Dg - I|| <= eps`` (adapted operator norm) and take
``v`` in ``C(E, gamma*beta)``, so ``|v| <= |v_E| s`` with
``s = sqrt(1 + gamma^2 beta^2)``. Since orthogonal projections have norm 1,

    |(Dg v)_F| <= gamma beta |v_E| + eps s |v_E|,
    |(Dg v)_E| >= |v_E| - eps s |v_E|,

so ``Dg v`` lies in ``C(E, beta)`` as soon as
``gamma beta + eps s <= beta (1 - eps s)``, i.e.

    eps <= beta (1 - gamma) / ((1 + beta) s).                        (i)

The same argument for ``Dg^{-1}`` uses ``||Dg^{-1} - I|| <= eps/(1-eps)``,
which asks for ``eps/(1 - eps)`` below the bound (i). With ``l = 1 - eps``
and ``L = 1 + eps`` bracketing ``|Dg v|/|v|``, the rate conditions
``l/L > gamma``, ``L < 1/mu1``, ``l > 1/lambda3`` read

    eps < (1 - gamma)/(1 + gamma),  eps < 1/mu1 - 1,  eps < 1 - 1/lambda3.   (ii)

:func:`epsilon_bound` returns the minimum of all of these.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConstantsError

if TYPE_CHECKING:
    from .cocycle import PerturbedDiffeo
    from .spectral import SpectralData

FAMILIES = ("s", "cs", "u", "cu")
_CORE = {"s": (0,), "c": (1,), "u": (2,), "cs": (0, 1), "cu": (1, 2)}
_FORWARD = ("u", "cu")
_BACKWARD = ("s", "cs")


@dataclass(frozen=True)
class ConeConstants:
    beta: float
    mu1: float
    lambda2: float
    mu2: float
    lambda3: float
    gamma: float
    epsilon: float
    lambda1: float  # informational: exact stable rate of the linear map
    mu3: float  # informational: exact unstable rate of the linear map

    def replace(self, **kw) -> "ConeConstants":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def gamma_of(constants: ConeConstants) -> float:
    g = max(constants.mu2 / constants.lambda3, constants.mu1 / constants.lambda2)
    if not g < 1.0:
        raise ConstantsError(f"gamma = {g} is not < 1")
    return g


def epsilon_bound(constants: ConeConstants) -> float:
    """Largest C^1 size of ``g`` for which ``f o g`` keeps the cone families; see module docs."""
    b, g = constants.beta, constants.gamma
    if not g < 1.0:
        raise ConstantsError(f"gamma = {g} is not < 1")
    recapture = b * (1.0 - g) / ((1.0 + b) * math.sqrt(1.0 + (g * b) ** 2))
    return min(
        recapture,
        recapture / (1.0 + recapture),  # same bound for Dg^{-1}
        (1.0 - g) / (1.0 + g),
        1.0 / constants.mu1 - 1.0,
        1.0 - 1.0 / constants.lambda3,
    )


def _split(coords: np.ndarray, family: str):
    core = list(_CORE[family])
    rest = [i for i in range(3) if i not in core]
    E = np.linalg.norm(coords[..., core], axis=-1)
    F = np.linalg.norm(coords[..., rest], axis=-1)
    return E, F


def in_cone(v, splitting: "SpectralData", family: str, beta: float, rtol: float = 1e-12) -> bool:
    """Membership of the ambient vector ``v`` in ``C^family(beta)``; the cone is closed."""
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("the zero vector has no direction")
    E, F = _split(splitting.P_inv @ v, family)
    return bool(F <= beta * E * (1.0 + rtol))


def cone_boundary_directions(family: str, beta: float, n: int, include_core: bool = True) -> np.ndarray:
    """Unit vectors (adapted coordinates) on the boundary ``|v_F| = beta |v_E|``.

    For a one-dimensional core the ``n`` vectors run around the circle of
    complementary directions; for a two-dimensional core ``n // 2`` core
    directions are paired with both signs of the complement. The core basis
    vectors are appended when ``include_core``.
    """
    if n < 4:
        raise ValueError("need at least 4 directions")
    core = list(_CORE[family])
    rest = [i for i in range(3) if i not in core]
    out = []
    if len(core) == 1:
        t = 2.0 * math.pi * np.arange(n) / n
        for tj in t:
            v = np.zeros(3)
            v[core[0]] = 1.0
            v[rest[0]] = beta * math.cos(tj)
            v[rest[1]] = beta * math.sin(tj)
            out.append(v)
    else:
        m = n // 2
        t = 2.0 * math.pi * np.arange(m) / m
        for tj in t:
            for sign in (1.0, -1.0):
                v = np.zeros(3)
                v[core[0]] = math.cos(tj)
                v[core[1]] = math.sin(tj)
                v[rest[0]] = sign * beta
                out.append(v)
    if include_core:
        for i in core:
            v = np.zeros(3)
            v[i] = 1.0
            out.append(v)
    out = np.array(out)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


@dataclass
class ConeCertificate:
    verdict: bool
    margins: dict  # per-point conditions for f o g (worst over the grid)
    linear_margins: dict  # conditions of the unperturbed linear map alone
    domination: dict  # per-point rate chain  L mu1 < l lambda2, ...
    constant_margins: dict  # admissibility of beta and of the rate constants
    grid: dict
    constants: dict
    premise: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)

    def all_margins(self) -> dict:
        out = {}
        for group in ("margins", "linear_margins", "domination", "constant_margins"):
            for key, val in getattr(self, group).items():
                out[f"{group}.{key}"] = val
        return out

    def min_margin(self) -> float:
        return min(self.all_margins().values())

    def to_dict(self) -> dict:
        return {
            "verdict": "pass" if self.verdict else "fail",
            "margins": self.margins,
            "linear_margins": self.linear_margins,
            "domination": self.domination,
            "constant_margins": self.constant_margins,
            "grid": self.grid,
            "constants": self.constants,
            "premise": self.premise,
            "worst": self.worst,
        }


def _constant_margins(spectral: "SpectralData", c: ConeConstants) -> dict:
    """Relative slack of each strict inequality the constants must satisfy."""
    one_b = 1.0 + c.beta
    ls, lc, lu = spectral.lambda_s, spectral.lambda_c, spectral.lambda_u
    chain = [
        ("beta_lower", one_b**2, 1.0),
        ("beta_upper", spectral.theta, one_b**2),
        ("mu1_lower", c.mu1, one_b * ls),
        ("lambda2_over_mu1", c.lambda2, c.mu1),
        ("lambda2_upper", lc / one_b, c.lambda2),
        ("mu2_lower", c.mu2, one_b * lc),
        ("lambda3_over_mu2", c.lambda3, c.mu2),
        ("lambda3_upper", lu / one_b, c.lambda3),
        ("mu1_below_one", 1.0, c.mu1),
        ("lambda3_above_one", c.lambda3, 1.0),
        ("gamma_below_one", 1.0, c.gamma),
    ]
    return {name: big / small - 1.0 for name, big, small in chain}


def _ratio(images: np.ndarray, family: str) -> np.ndarray:
    E, F = _split(images, family)
    with np.errstate(divide="ignore"):
        return np.where(E > 0, F / np.where(E > 0, E, 1.0), np.inf)


def _stretch(images: np.ndarray) -> np.ndarray:
    return np.linalg.norm(images, axis=-1)


def _linear_margins(spectral: "SpectralData", c: ConeConstants, n_dirs: int) -> dict:
    """The unperturbed map: angle contraction by at most ``gamma`` and the four rate bounds on ``C(beta)``."""
    lam = spectral.eigenvalues
    out = {}
    for fam in FAMILIES:
        D = cone_boundary_directions(fam, c.beta, n_dirs)
        img = D * (lam if fam in _FORWARD else 1.0 / lam)
        kappa = float(np.max(_ratio(img, fam))) / c.beta
        out[f"contraction_{fam}"] = 1.0 - kappa / c.gamma
    rates = {"u": c.lambda3, "cu": c.lambda2, "cs": 1.0 / c.mu2, "s": 1.0 / c.mu1}
    for fam in FAMILIES:
        D = cone_boundary_directions(fam, c.beta, n_dirs)
        img = D * (lam if fam in _FORWARD else 1.0 / lam)
        out[f"rate_{fam}"] = float(np.min(_stretch(img))) / rates[fam] - 1.0
    return out


def _point_margins(lam: np.ndarray, Dg: np.ndarray, c: ConeConstants, n_dirs: int):
    """Margins of ``f o g`` at each sample point, given ``Dg`` in adapted coordinates.

    Forward families are tested on ``C(gamma beta)`` and must return into it;
    backward families on ``C(beta)``. Rate bounds use the per-point ``l, L``
    (extreme singular values of ``Dg``).
    """
    from .perturbation import jac_bump_inverse

    sv = np.linalg.svd(Dg, compute_uv=False)
    L, l = sv[:, 0], sv[:, -1]
    M = lam[None, :, None] * Dg  # diag(lam) @ Dg
    Minv = jac_bump_inverse(Dg) / lam[None, None, :]  # Dg^{-1} @ diag(1/lam)
    rates = {"u": (c.lambda3, l), "cu": (c.lambda2, l), "cs": (1.0 / c.mu2, 1.0 / L), "s": (1.0 / c.mu1, 1.0 / L)}
    per_point = {}
    for fam in FAMILIES:
        fwd = fam in _FORWARD
        angle = c.gamma * c.beta if fwd else c.beta
        D = cone_boundary_directions(fam, angle, n_dirs)
        img = np.einsum("nij,mj->nmi", M if fwd else Minv, D)
        per_point[f"invariance_{fam}"] = 1.0 - np.max(_ratio(img, fam), axis=1) / angle
        rate, scale = rates[fam]
        per_point[f"rate_{fam}"] = np.min(_stretch(img), axis=1) / (rate * scale) - 1.0
    dom = {
        "L_mu1_below_l_lambda2": l * c.lambda2 / (L * c.mu1) - 1.0,
        "L_mu2_below_l_lambda3": l * c.lambda3 / (L * c.mu2) - 1.0,
        "L_mu1_below_one": 1.0 / (L * c.mu1) - 1.0,
        "l_lambda3_above_one": l * c.lambda3 - 1.0,
    }
    return per_point, dom


def _certificate(spectral, c, Dg, n_dirs, grid, premise=None, points=None) -> ConeCertificate:
    lam = spectral.eigenvalues
    per_point, dom = _point_margins(lam, Dg, c, n_dirs)
    margins, worst = {}, {}
    for key, vals in per_point.items():
        i = int(np.argmin(vals))
        margins[key] = float(vals[i])
        if points is not None:
            worst[key] = points[i].tolist()
    domination = {key: float(np.min(vals)) for key, vals in dom.items()}
    linear = _linear_margins(spectral, c, n_dirs)
    consts = _constant_margins(spectral, c)
    verdict = all(v > 0 for group in (margins, linear, domination, consts) for v in group.values())
    return ConeCertificate(verdict, margins, linear, domination, consts, grid, c.to_dict(), premise or {}, worst)


def check_linear_cones(spectral: "SpectralData", constants: ConeConstants, n_dirs: int = 64) -> ConeCertificate:
    """Certificate for ``A_k`` itself, i.e. the per-point test with ``Dg = I``."""
    grid = {"points": 1, "directions": n_dirs}
    return _certificate(spectral, constants, np.eye(3)[None], n_dirs, grid)


def certify_perturbed(
    f: "PerturbedDiffeo",
    constants: ConeConstants,
    n_points: int = 1000,
    n_dirs: int = 64,
    c1_samples: int = 20_000,
) -> ConeCertificate:
    """Sample the perturbation ball and test the cone conditions of ``f o g``.

    The identity point (any point off the ball) is always included, so the
    certificate also covers the unperturbed region. The premise
    ``c1_distance < epsilon`` is evaluated and reported but does not gate
    the run.
    """
    from .perturbation import _jac, ball_points, localized_c1_distance

    if f.localized is None:
        grid = {"points": n_points, "directions": n_dirs}
        Dg = np.repeat(np.eye(3)[None], n_points + 1, axis=0)
        return _certificate(f.spectral, constants, Dg, n_dirs, grid, {"c1_distance": 0.0, "epsilon": constants.epsilon, "holds": True})
    lb = f.localized
    pts = ball_points(n_points)
    Dg = np.concatenate([np.eye(3)[None], _jac(lb.bump, pts)])
    c1 = localized_c1_distance(lb, c1_samples)
    premise = {"c1_distance": c1, "epsilon": constants.epsilon, "holds": bool(c1 < constants.epsilon)}
    grid = {"points": n_points, "directions": n_dirs}
    all_pts = np.concatenate([np.full((1, 3), np.nan), pts])
    return _certificate(f.spectral, constants, Dg, n_dirs, grid, premise, all_pts)
