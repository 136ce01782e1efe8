"""Parameter sweeps, witness search and the CI-aware root finder in ``r``."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .cocycle import (
    LyapunovEstimate,
    corollary_lower_bound,
    estimate_C,
    lyapunov_mc,
    make_diffeo,
    return_time,
    sigma_estimate,
)
from .conefield import ConeCertificate, certify_perturbed
from .errors import BracketInvalid, NotFound
from .perturbation import AMPLITUDE_CEILING, BumpMap, I_of_h
from .spectral import DEFAULT_RADIUS, MIN_K, TorusPoint, cone_constants, solve_spectrum

OUTPUT_DIR_ENV = "ANOSOVLAB_OUTPUT_DIR"


@dataclass
class ExperimentConfig:
    """Everything a sweep or search needs. Loaded from / saved to YAML."""

    k_values: list = field(default_factory=lambda: list(range(5, 21)))
    amplitude: float = 1.0
    margin: float = 0.1
    center: list = field(default_factory=lambda: [1 / 3, 1 / 2, 11 / 12])
    radius: float = DEFAULT_RADIUS
    # Monte Carlo
    n_seeds: int = 64
    n_iters: int = 20_000
    warmup: int = 100
    master_seed: int = 0
    tasks: int = 1
    cross_check: bool = False
    direct_points: int = 4000
    sigma_depth: int = 50
    # quadrature, certifier and C grids
    quad_grid: int = 200
    cert_points: int = 1000
    cert_dirs: int = 64
    c_points: int = 2000
    c_depth: int = 30
    return_n_max: int = 10
    return_samples: int = 100_000
    # witness search
    search_k: list = field(default_factory=lambda: [10, 20, 50, 100, 200, 500])
    search_amplitude: list = field(default_factory=lambda: [1.0, 1.4])
    search_radius: list = field(default_factory=lambda: [0.3, 0.4])
    # root finder
    r0_halfwidth_floor: float = 1e-3
    r0_max_steps: int = 30
    r0_max_doublings: int = 3
    r0_tol: float = 1e-4
    output_dir: str = "anosovlab-out"

    def __post_init__(self):
        self.k_values = [int(k) for k in self.k_values]
        self.search_k = [int(k) for k in self.search_k]
        self.center = [float(c) for c in self.center]
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ValueError(f"invalid config: {msg}")

        need(all(k >= MIN_K for k in self.k_values + self.search_k), f"every k must be >= {MIN_K}")
        need(0.0 <= self.amplitude < AMPLITUDE_CEILING, "amplitude must lie in [0, pi/2)")
        need(all(0.0 <= a < AMPLITUDE_CEILING for a in self.search_amplitude), "search amplitudes must lie in [0, pi/2)")
        need(0.0 < self.margin < 1.0, "margin must lie in (0, 1)")
        need(len(self.center) == 3, "center needs three coordinates")
        need(0.0 < self.radius < 0.5, "radius must lie in (0, 1/2)")
        need(all(0.0 < r < 0.5 for r in self.search_radius), "search radii must lie in (0, 1/2)")
        need(self.n_seeds >= 2, "n_seeds must be >= 2")
        for name in ("n_iters", "tasks", "direct_points", "sigma_depth", "quad_grid", "cert_points", "cert_dirs",
                     "c_points", "c_depth", "return_n_max", "return_samples", "r0_max_steps"):
            need(getattr(self, name) >= 1, f"{name} must be >= 1")
        need(self.warmup >= 0 and self.r0_max_doublings >= 0, "warmup and r0_max_doublings must be >= 0")
        need(self.quad_grid % 2 == 0, "quad_grid must be even")
        need(self.r0_halfwidth_floor > 0 and self.r0_tol > 0, "r0 tolerances must be positive")

    @property
    def center_point(self) -> TorusPoint:
        return TorusPoint(tuple(self.center))

    def replace(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **kw})

    def output_path(self) -> Path:
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ValueError("invalid config: top level must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"invalid config: unknown keys {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_yaml())
        return path


@dataclass
class SweepRow:
    k: int
    lambda_s: float = math.nan
    lambda_c: float = math.nan
    lambda_u: float = math.nan
    theta: float = math.nan
    beta: float = math.nan
    gamma: float = math.nan
    epsilon: float = math.nan
    c1_distance: float = math.nan
    I_h: float = math.nan
    n_r: int | None = None
    C: float = math.nan
    lower_bound: float = math.nan
    sigma_c: float = math.nan
    sigma_c_ci_lo: float = math.nan
    sigma_c_ci_hi: float = math.nan
    sigma_u: float = math.nan
    verdict: str = ""
    error: str = ""


SWEEP_COLUMNS = [f.name for f in fields(SweepRow)]


def _sweep_row(k: int, cfg: ExperimentConfig, I_value: float) -> SweepRow:
    row = SweepRow(k=k)
    try:
        sp = solve_spectrum(k)
        row.lambda_s, row.lambda_c, row.lambda_u, row.theta = sp.lambda_s, sp.lambda_c, sp.lambda_u, sp.theta
        consts = cone_constants(sp)
        row.beta, row.gamma, row.epsilon = consts.beta, consts.gamma, consts.epsilon
        row.I_h = I_value
        f = make_diffeo(k, cfg.amplitude, cfg.radius, cfg.margin, cfg.center_point, spectral=sp)
        cert = certify_perturbed(f, consts, cfg.cert_points, cfg.cert_dirs)
        row.c1_distance = cert.premise["c1_distance"]
        row.verdict = "pass" if cert.verdict else "fail"
        rt = return_time(sp, f.chart, cfg.return_n_max, cfg.return_samples)
        # No return seen up to n_max: n_max under-reports n_r, which only weakens the bound.
        row.n_r = rt.n if rt.n is not None else cfg.return_n_max
        row.C = estimate_C(f, cfg.c_points, cfg.c_depth).value
        row.lower_bound = corollary_lower_bound(sp, f.chart, I_value, row.n_r, row.C)
        est = lyapunov_mc(f, cfg.n_seeds, cfg.n_iters, cfg.master_seed, cfg.warmup, cfg.tasks)
        row.sigma_c = float(est.exponents[1])
        row.sigma_c_ci_lo, row.sigma_c_ci_hi = (float(v) for v in est.ci[1])
        row.sigma_u = float(est.exponents[0])
        if cfg.cross_check:
            sigma_estimate(f, "c", cfg.n_seeds, cfg.n_iters, cfg.master_seed, cfg.sigma_depth,
                           cfg.direct_points, cfg.warmup, cfg.tasks, spectrum=est)
    except Exception as exc:  # soft failure: annotate the row, keep sweeping
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def sweep_k(cfg: ExperimentConfig) -> list[SweepRow]:
    """One :class:`SweepRow` per ``k`` in ascending order."""
    try:
        I_value = I_of_h(BumpMap(cfg.amplitude, cfg.margin), n=cfg.quad_grid).value
    except Exception as exc:
        return [SweepRow(k=k, error=f"{type(exc).__name__}: {exc}") for k in sorted(set(cfg.k_values))]
    return [_sweep_row(k, cfg, I_value) for k in sorted(set(cfg.k_values))]


def max_C(rows: list[SweepRow]) -> float:
    vals = [r.C for r in rows if not math.isnan(r.C)]
    return max(vals) if vals else math.nan


# -- positive central exponent witness -----------------------------------------


@dataclass
class PositiveExample:
    k: int
    amplitude: float
    radius: float
    estimate: LyapunovEstimate
    certificate: ConeCertificate
    log_lambda_c: float
    trace: list

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "amplitude": self.amplitude,
            "radius": self.radius,
            "log_lambda_c": self.log_lambda_c,
            "sigma_c": float(self.estimate.exponents[1]),
            "sigma_c_ci95": [float(v) for v in self.estimate.ci[1]],
            "estimate": self.estimate.to_dict(),
            "certificate": self.certificate.to_dict(),
            "trace": self.trace,
        }


def _central(cfg: ExperimentConfig, k: int, a: float, r: float, n_iters: int | None = None,
             master_seed: int | None = None, spectral=None) -> LyapunovEstimate:
    f = make_diffeo(k, a, r, cfg.margin, cfg.center_point, spectral=spectral)
    seed = cfg.master_seed if master_seed is None else master_seed
    return lyapunov_mc(f, cfg.n_seeds, n_iters or cfg.n_iters, seed, cfg.warmup, cfg.tasks)


def find_positive_example(cfg: ExperimentConfig) -> PositiveExample:
    """First ``(k, a, r)`` (ascending ``k``, then config order) whose central-exponent CI lies above 0."""
    trace = []
    for k in sorted(set(cfg.search_k)):
        sp = solve_spectrum(k)
        for a in cfg.search_amplitude:
            for r in cfg.search_radius:
                entry = {"k": k, "amplitude": a, "radius": r}
                try:
                    est = _central(cfg, k, a, r, spectral=sp)
                except Exception as exc:
                    trace.append({**entry, "error": f"{type(exc).__name__}: {exc}"})
                    continue
                lo, hi = (float(v) for v in est.ci[1])
                trace.append({**entry, "sigma_c": float(est.exponents[1]), "ci95": [lo, hi]})
                if lo > 0.0 and math.log(sp.lambda_c) < 0.0:
                    f = make_diffeo(k, a, r, cfg.margin, cfg.center_point, spectral=sp)
                    cert = certify_perturbed(f, cone_constants(sp), cfg.cert_points, cfg.cert_dirs)
                    return PositiveExample(k, a, r, est, cert, math.log(sp.lambda_c), trace)
    raise NotFound("no searched (k, a, r) has a central-exponent CI above 0", trace)


# -- zero of the central exponent in r -------------------------------------------


@dataclass
class RootResult:
    r0: float
    estimate: LyapunovEstimate
    bracket: tuple  # (r_lo, r_hi): CI below 0 at r_lo (exact at 0), above 0 at r_hi
    converged: bool
    history: list

    @property
    def sigma_c(self) -> float:
        return float(self.estimate.exponents[1])

    @property
    def stderr(self) -> float:
        return float(self.estimate.stderr[1])

    def to_dict(self) -> dict:
        return {
            "r0": self.r0,
            "sigma_c": self.sigma_c,
            "stderr": self.stderr,
            "ci95": [float(v) for v in self.estimate.ci[1]],
            "bracket": list(self.bracket),
            "converged": self.converged,
            "history": self.history,
        }


def find_r0(k: int, a: float, r_hi: float, cfg: ExperimentConfig) -> RootResult:
    """Bisection on ``r`` for a zero of the central exponent.

    The lower end is ``r = 0`` where the exponent is exactly ``log lambda_c < 0``.
    Every radius uses the same seeds. When the CI at the midpoint contains 0
    but is wider than the floor, the orbit length is doubled (up to
    ``r0_max_doublings`` times) before accepting the midpoint.
    """
    sp = solve_spectrum(k)
    if not math.log(sp.lambda_c) < 0.0:
        raise BracketInvalid(f"log lambda_c >= 0 at k={k}")
    top = _central(cfg, k, a, r_hi, spectral=sp)
    if not top.ci[1][0] > 0.0:
        raise BracketInvalid(
            f"central exponent at r={r_hi} is not resolved above 0 (CI {top.ci[1][0]:.3g}..{top.ci[1][1]:.3g})"
        )
    lo, hi = 0.0, float(r_hi)
    history = [{"r": hi, "n_iters": cfg.n_iters, "sigma_c": float(top.exponents[1]), "ci95": [float(v) for v in top.ci[1]]}]
    est = top
    for _ in range(cfg.r0_max_steps):
        mid = 0.5 * (lo + hi)
        n_iters = cfg.n_iters
        for doubling in range(cfg.r0_max_doublings + 1):
            est = _central(cfg, k, a, mid, n_iters=n_iters, spectral=sp)
            ci_lo, ci_hi = (float(v) for v in est.ci[1])
            history.append({"r": mid, "n_iters": n_iters, "sigma_c": float(est.exponents[1]), "ci95": [ci_lo, ci_hi]})
            straddles = ci_lo <= 0.0 <= ci_hi
            if not straddles or 0.5 * (ci_hi - ci_lo) <= cfg.r0_halfwidth_floor:
                break
            if doubling < cfg.r0_max_doublings:
                n_iters *= 2
        if straddles:
            return RootResult(mid, est, (lo, hi), True, history)
        if ci_lo > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < cfg.r0_tol:
            break
    return RootResult(0.5 * (lo + hi), est, (lo, hi), False, history)


def sigma_profile(k: int, a: float, radii, cfg: ExperimentConfig) -> dict:
    """Central exponent on a list of radii (same seeds) and whether it increases within noise."""
    sp = solve_spectrum(k)
    pts = []
    for r in radii:
        est = _central(cfg, k, a, float(r), spectral=sp)
        pts.append((float(r), float(est.exponents[1]), float(est.stderr[1])))
    violations = [
        (p[0], q[0])
        for p, q in zip(pts, pts[1:])
        if q[1] < p[1] - 2.0 * math.hypot(p[2], q[2])
    ]
    return {"points": pts, "increasing_within_noise": not violations, "violations": violations}


def reproduce(example: PositiveExample, cfg: ExperimentConfig, master_seed: int) -> LyapunovEstimate:
    """Re-run a witness under another master seed."""
    return _central(cfg, example.k, example.amplitude, example.radius, master_seed=master_seed)


__all__ = [
    "ExperimentConfig",
    "SweepRow",
    "SWEEP_COLUMNS",
    "sweep_k",
    "max_C",
    "PositiveExample",
    "find_positive_example",
    "RootResult",
    "find_r0",
    "sigma_profile",
    "reproduce",
    "OUTPUT_DIR_ENV",
]
