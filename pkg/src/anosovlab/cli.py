"""Command-line entry point ``anosovlab``.

Exit codes: 0 success, 1 usage or invalid input, 2 search found nothing
(no witness / invalid bracket), 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict

from .cocycle import lyapunov_mc, make_diffeo
from .conefield import certify_perturbed
from .errors import BracketInvalid, NotFound
from .experiments import ExperimentConfig, find_positive_example, find_r0, sweep_k
from .perturbation import BumpMap, I_of_h
from .report import emit
from .spectral import DEFAULT_RADIUS, cone_constants, solve_spectrum

EXIT_OK, EXIT_USAGE, EXIT_SEARCH, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _print(obj):
    print(json.dumps(_finite(obj), indent=2))


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "tasks", None):
        cfg = cfg.replace(tasks=args.tasks)
    return cfg


def cmd_spectrum(args):
    _print(solve_spectrum(args.k).to_dict())


def cmd_constants(args):
    _print(cone_constants(solve_spectrum(args.k)).to_dict())


def cmd_ih(args):
    _print(I_of_h(BumpMap(args.amplitude, args.margin), method=args.method, n=args.grid).to_dict())


def cmd_certify(args):
    sp = solve_spectrum(args.k)
    f = make_diffeo(args.k, args.amplitude, args.radius, args.margin, spectral=sp)
    cert = certify_perturbed(f, cone_constants(sp), args.points, args.dirs)
    _print(cert.to_dict())


def cmd_lyapunov(args):
    f = make_diffeo(args.k, args.amplitude, args.radius, args.margin)
    est = lyapunov_mc(f, args.seeds, args.iters, args.seed, args.warmup, args.tasks)
    out = est.to_dict()
    if not args.per_seed:
        out.pop("per_seed")
    _print(out)


def cmd_sweep(args):
    cfg = _config(args)
    rows = sweep_k(cfg)
    paths = emit(rows, args.format, cfg.output_path(), args.stem, meta={"config": asdict(cfg)})
    for p in paths:
        print(p)


def cmd_find_positive(args):
    cfg = _config(args)
    ex = find_positive_example(cfg)
    doc = ex.to_dict()
    out = cfg.output_path() / "positive_example.json"
    _write_json(out, doc)
    summary = {k: doc[k] for k in ("k", "amplitude", "radius", "log_lambda_c", "sigma_c", "sigma_c_ci95")}
    summary["certificate"] = doc["certificate"]["verdict"]
    summary["written"] = str(out)
    _print(summary)


def cmd_find_r0(args):
    cfg = _config(args)
    res = find_r0(args.k, args.amplitude, args.rhi, cfg)
    out = cfg.output_path() / "r0.json"
    doc = res.to_dict()
    _write_json(out, doc)
    _print({**{k: doc[k] for k in ("r0", "sigma_c", "stderr", "ci95", "bracket", "converged")}, "written": str(out)})


def _write_json(path, doc):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_finite(doc), indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="anosovlab", description="Central exponents of perturbed automorphisms of the 3-torus.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def bump_args(sp, radius=True):
        sp.add_argument("--amplitude", type=float, required=True)
        sp.add_argument("--margin", type=float, default=0.1)
        if radius:
            sp.add_argument("--radius", type=float, default=DEFAULT_RADIUS)

    s = sub.add_parser("spectrum", help="eigen-data of A_k")
    s.add_argument("--k", type=int, required=True)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("constants", help="cone constants of A_k")
    s.add_argument("--k", type=int, required=True)
    s.set_defaults(func=cmd_constants)

    s = sub.add_parser("ih", help="integral of log h_u over the unit ball")
    bump_args(s, radius=False)
    s.add_argument("--grid", type=int, default=200)
    s.add_argument("--method", choices=["midpoint", "montecarlo"], default="midpoint")
    s.set_defaults(func=cmd_ih)

    s = sub.add_parser("certify", help="cone-field certificate for the perturbed map")
    s.add_argument("--k", type=int, required=True)
    bump_args(s)
    s.add_argument("--points", type=int, default=1000)
    s.add_argument("--dirs", type=int, default=64)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("lyapunov", help="Monte Carlo Lyapunov spectrum")
    s.add_argument("--k", type=int, required=True)
    bump_args(s)
    s.add_argument("--seeds", type=int, default=64)
    s.add_argument("--iters", type=int, default=20_000)
    s.add_argument("--warmup", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tasks", type=int, default=1)
    s.add_argument("--per-seed", action="store_true")
    s.set_defaults(func=cmd_lyapunov)

    s = sub.add_parser("sweep", help="sweep over k; writes CSV, JSON and plot data")
    s.add_argument("--config")
    s.add_argument("--format", choices=["csv", "json", "plot", "all"], default="all")
    s.add_argument("--stem", default="sweep")
    s.add_argument("--tasks", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("find-positive", help="search (k, a, r) for a positive central exponent")
    s.add_argument("--config")
    s.add_argument("--tasks", type=int)
    s.set_defaults(func=cmd_find_positive)

    s = sub.add_parser("find-r0", help="radius where the central exponent vanishes")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--amplitude", type=float, required=True)
    s.add_argument("--rhi", type=float, required=True)
    s.add_argument("--config")
    s.add_argument("--tasks", type=int)
    s.set_defaults(func=cmd_find_r0)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (NotFound, BracketInvalid) as exc:
        print(f"anosovlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except OSError as exc:
        print(f"anosovlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"anosovlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
