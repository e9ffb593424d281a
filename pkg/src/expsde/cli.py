"""Command-line front end: case catalog, config files, and the
check/reference/weak-error/compare/rate/simulate commands.

Config files are flat ``key = value`` text with optional ``[profile]``
sections overlaying the base keys; a key repeated inside one section
accumulates into a list (used for scheme and test_fn).  Every flag has a
config twin under the same name with dashes as underscores.  Flags beat
the config file, which beats built-in defaults.

Exit codes: 0 success, 1 divergence-dominated result, 2 usage or config
error.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import (
    build_case_table,
    render_compare_csv,
    write_detail_csv,
    write_summary_csv,
)
from .models import PrototypeModel, check_hypotheses
from .montecarlo import TEST_FUNCTIONS
from .paths import make_stream
from .reference import (
    DEFAULT_N0,
    DEFAULT_P_REF,
    DivergentIntegralError,
    UnreliableReferenceError,
    analytic_first_moment,
    analytic_second_moment,
    fine_grid_reference,
)
from .schemes import DIVERGENCE_CAP, SchemeKind, step_values

__all__ = ["CASES", "RunConfig", "ConfigError", "main"]

# benchmark catalog: (b0, b1, b2, sigma, alpha), unit start and horizon
CASES = {
    "case1": PrototypeModel(b0=0.0, b1=0.0, b2=2.0, sigma=0.1, alpha=1.5),
    "case2": PrototypeModel(b0=0.0, b1=0.0, b2=3.0, sigma=1.0, alpha=1.25),
    "case3": PrototypeModel(b0=0.0, b1=0.0, b2=1.0, sigma=1.0, alpha=1.5),
    "case4": PrototypeModel(b0=1.0, b1=1.0, b2=0.4, sigma=0.1, alpha=3.0),
    "case5": PrototypeModel(b0=0.0, b1=0.0, b2=10.0, sigma=0.5, alpha=1.125),
    "case6": PrototypeModel(b0=0.0, b1=0.0, b2=0.01, sigma=0.1, alpha=1.25),
    "case7": PrototypeModel(b0=0.0, b1=0.0, b2=0.4, sigma=0.1, alpha=3.0),
}

ALL_SCHEME_IDS = tuple(k.value for k in SchemeKind)
COMPARE_SCHEMES = ("exp-es", "ses", "sms", "tes", "stes")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    case: Optional[str] = None
    b0: float = 0.0
    b1: float = 0.0
    b2: Optional[float] = None
    sigma: Optional[float] = None
    alpha: Optional[float] = None
    x0: float = 1.0
    horizon: float = 1.0
    scheme: tuple = ()
    test_fn: tuple = ("x",)
    p_min: int = 2
    p_max: int = 7
    p: int = 8              # single level, simulate only
    n: int = 100_000
    n0: int = DEFAULT_N0
    p_ref: int = DEFAULT_P_REF
    seed: int = 0
    workers: int = 1
    output: Optional[str] = None
    ref_method: str = "fine-grid"
    cache_dir: Optional[str] = None
    no_cache: bool = False
    milstein_half: bool = False
    trajectory: int = 0


def _cast_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _cast_str_tuple(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value)
    return (str(value),)


# config key -> caster applied to the raw string (or list of strings)
_CASTERS = {
    "case": str,
    "b0": float, "b1": float, "b2": float, "sigma": float, "alpha": float,
    "x0": float, "horizon": float,
    "scheme": _cast_str_tuple,
    "test_fn": _cast_str_tuple,
    "p_min": int, "p_max": int, "p": int,
    "n": int, "n0": int, "p_ref": int, "seed": int, "workers": int,
    "output": str,
    "ref_method": str,
    "cache_dir": str,
    "no_cache": _cast_bool,
    "milstein_half": _cast_bool,
    "trajectory": int,
}


def parse_config_text(text: str):
    """Parse flat key = value lines into {profile name or None: settings}."""
    profiles = {None: {}}
    current = profiles[None]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"config line {lineno}: empty profile name")
            current = profiles.setdefault(name, {})
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        if key in current:
            prev = current[key]
            if isinstance(prev, list):
                prev.append(value)
            else:
                current[key] = [prev, value]
        else:
            current[key] = value
    return profiles


def resolve_config(args: argparse.Namespace) -> RunConfig:
    settings = {}
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        profiles = parse_config_text(text)
        merged = dict(profiles[None])
        if getattr(args, "profile", None):
            if args.profile not in profiles:
                known = sorted(k for k in profiles if k)
                raise ConfigError(f"unknown profile {args.profile!r}; defined: {known}")
            merged.update(profiles[args.profile])
        for key, value in merged.items():
            if key not in _CASTERS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                settings[key] = _CASTERS[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}")
    elif getattr(args, "profile", None):
        raise ConfigError("--profile needs --config")
    for key in _CASTERS:
        value = getattr(args, key, None)
        if value is None:
            continue
        settings[key] = _cast_str_tuple(value) if key in ("scheme", "test_fn") else value
    cfg = replace(RunConfig(), **settings)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    if cfg.p_min > cfg.p_max:
        raise ConfigError(f"empty p range: p_min={cfg.p_min} > p_max={cfg.p_max}")
    for s in cfg.scheme:
        try:
            SchemeKind.from_id(s)
        except ValueError as exc:
            raise ConfigError(str(exc))
    for f in cfg.test_fn:
        if f not in TEST_FUNCTIONS:
            raise ConfigError(
                f"unknown test function {f!r}; built-ins: {sorted(TEST_FUNCTIONS)}"
            )
    if cfg.ref_method not in ("fine-grid", "analytic"):
        raise ConfigError(f"ref_method must be fine-grid or analytic, got {cfg.ref_method!r}")
    if cfg.n < 2:
        raise ConfigError(f"n must be >= 2, got {cfg.n}")
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    if cfg.p < 0:
        raise ConfigError(f"p must be >= 0, got {cfg.p}")


def resolve_model(cfg: RunConfig):
    inline = [k for k in ("b2", "sigma", "alpha") if getattr(cfg, k) is not None]
    if cfg.case and inline:
        raise ConfigError("give either a catalog case or inline parameters, not both")
    if cfg.case:
        if cfg.case not in CASES:
            raise ConfigError(f"unknown case {cfg.case!r}; known: {', '.join(sorted(CASES))}")
        return cfg.case, CASES[cfg.case]
    if not inline:
        raise ConfigError("no model given: use --case or inline --b2/--sigma/--alpha")
    missing = [k for k in ("b2", "sigma", "alpha") if getattr(cfg, k) is None]
    if missing:
        raise ConfigError(f"inline model is missing {', '.join(missing)}")
    try:
        model = PrototypeModel(b0=cfg.b0, b1=cfg.b1, b2=cfg.b2, sigma=cfg.sigma,
                               alpha=cfg.alpha, x0=cfg.x0, horizon=cfg.horizon)
    except ValueError as exc:
        raise ConfigError(f"bad model parameters: {exc}")
    return "inline", model


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)


def _divergence_dominated(report) -> bool:
    saw_cell = False
    for cell in report.cells:
        saw_cell = True
        if cell.table is None:
            continue
        for row in cell.table.rows:
            if not row.diverged:
                return False
    return saw_cell


def _build_report(cfg: RunConfig, default_schemes):
    name, model = resolve_model(cfg)
    schemes = cfg.scheme or default_schemes
    p_list = list(range(cfg.p_min, cfg.p_max + 1))
    report = build_case_table({name: model}, list(schemes), list(cfg.test_fn),
                              p_list, cfg.n, cfg.seed, n0=cfg.n0,
                              p_ref=cfg.p_ref, workers=cfg.workers,
                              cache_dir=cfg.cache_dir,
                              use_cache=not cfg.no_cache,
                              milstein_half=cfg.milstein_half)
    for cell in report.cells:
        if cell.error:
            print(f"warning: {cell.case}/{cell.scheme.value}/{cell.test_fn}: "
                  f"{cell.error}", file=sys.stderr)
    return report


# ---------------------------------------------------------------- commands

def cmd_check(cfg: RunConfig) -> int:
    name, model = resolve_model(cfg)
    report = check_hypotheses(model)
    print(f"{name}: b0={model.b0:g} b1={model.b1:g} b2={model.b2:g} "
          f"sigma={model.sigma:g} alpha={model.alpha:g}")
    print(f"H1: {'satisfied' if report.h1_ok else 'violated'}")
    print(f"H4: {'satisfied' if report.h4_ok else 'violated'}")
    if math.isnan(report.kappa):
        print("H5: violated, κ undefined")
    else:
        verdict = "satisfied" if report.h5_ok else "violated"
        print(f"H5: {verdict}, κ≈{report.kappa:.3g}")
    print(f"max provable moment order: {report.max_moment_order:g}")
    for note in report.notes:
        print(f"note: {note}")
    return 0


def cmd_reference(cfg: RunConfig) -> int:
    name, model = resolve_model(cfg)
    lines = []
    for f in cfg.test_fn:
        mc = fine_grid_reference(model, f, n0=cfg.n0, p_ref=cfg.p_ref,
                                 seed=cfg.seed, workers=cfg.workers,
                                 cache_dir=cfg.cache_dir,
                                 use_cache=not cfg.no_cache)
        ref = mc
        if cfg.ref_method == "analytic":
            ref = _analytic_or_fallback(model, f, mc)
        lines.append(f"{name} {f}: {ref.value!r} +- {ref.uncertainty:.3g} "
                     f"[{ref.method.value}]")
    _emit(cfg, "\n".join(lines) + "\n")
    return 0


def _analytic_or_fallback(model, f, mc):
    ops = {"x": analytic_first_moment, "x2": analytic_second_moment}
    if f not in ops:
        print(f"note: no closed form for test function {f!r}; "
              "using the fine-grid value", file=sys.stderr)
        return mc
    try:
        return ops[f](model, mc_check=mc)
    except DivergentIntegralError as exc:
        print(f"note: {exc}; falling back to the fine-grid value", file=sys.stderr)
        return mc
    except ValueError as exc:
        print(f"note: closed form not applicable ({exc}); "
              "using the fine-grid value", file=sys.stderr)
        return mc


def cmd_weak_error(cfg: RunConfig) -> int:
    report = _build_report(cfg, default_schemes=("exp-es",))
    buf = io.StringIO()
    write_detail_csv(report, buf)
    _emit(cfg, buf.getvalue())
    return 1 if _divergence_dominated(report) else 0


def cmd_compare(cfg: RunConfig) -> int:
    report = _build_report(cfg, default_schemes=COMPARE_SCHEMES)
    _emit(cfg, render_compare_csv(report))
    return 1 if _divergence_dominated(report) else 0


def cmd_rate(cfg: RunConfig) -> int:
    report = _build_report(cfg, default_schemes=("exp-es",))
    buf = io.StringIO()
    write_summary_csv(report, buf)
    _emit(cfg, buf.getvalue())
    return 1 if _divergence_dominated(report) else 0


def cmd_simulate(cfg: RunConfig) -> int:
    name, model = resolve_model(cfg)
    schemes = cfg.scheme or ("exp-es",)
    if len(schemes) != 1:
        raise ConfigError("simulate takes exactly one scheme")
    kind = SchemeKind.from_id(schemes[0])
    n_steps = 1 << cfg.p
    dt = model.horizon / n_steps
    sqdt = math.sqrt(dt)
    stream = make_stream(cfg.seed, cfg.trajectory, cfg.p)
    z = stream.standard_normals(n_steps)
    lines = ["t,value", f"{0.0!r},{model.x0!r}"]
    x = np.full(1, model.x0, dtype=np.float64)
    diverged_at = None
    for k in range(n_steps):
        out = step_values(kind, model, x, dt, np.full(1, z[k] * sqdt),
                          milstein_half=cfg.milstein_half)
        value = float(out[0])
        if (not math.isfinite(value)) or abs(value) > DIVERGENCE_CAP:
            diverged_at = (k + 1) * dt
            break
        lines.append(f"{(k + 1) * dt!r},{value!r}")
        x = out
    _emit(cfg, "\n".join(lines) + "\n")
    if diverged_at is not None:
        print(f"warning: {name}/{kind.value} path diverged at t={diverged_at:g}",
              file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------------ parser

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--profile", help="profile section of the config file")
    sub.add_argument("--case", help="catalog case id (case1..case7)")
    sub.add_argument("--b0", type=float, help="drift constant term")
    sub.add_argument("--b1", type=float, help="drift linear coefficient")
    sub.add_argument("--b2", type=float, help="drift superlinear coefficient")
    sub.add_argument("--sigma", type=float, help="diffusion coefficient")
    sub.add_argument("--alpha", type=float, help="diffusion power (> 1)")
    sub.add_argument("--x0", type=float, help="initial value (default 1)")
    sub.add_argument("--horizon", type=float, help="time horizon (default 1)")
    sub.add_argument("--scheme", action="append",
                     help=f"scheme id, repeatable; one of {', '.join(ALL_SCHEME_IDS)}")
    sub.add_argument("--test-fn", action="append", dest="test_fn",
                     help="test function id, repeatable: x, x2, inv_x, exp_neg_x2")
    sub.add_argument("--p-min", type=int, dest="p_min", help="coarsest level (default 2)")
    sub.add_argument("--p-max", type=int, dest="p_max", help="finest level (default 7)")
    sub.add_argument("--p", type=int, help="single level for simulate (default 8)")
    sub.add_argument("--n", type=int, help="trajectories per level (default 100000)")
    sub.add_argument("--n0", type=int, help=f"reference trajectories (default {DEFAULT_N0})")
    sub.add_argument("--p-ref", type=int, dest="p_ref",
                     help=f"reference level (default {DEFAULT_P_REF})")
    sub.add_argument("--seed", type=int, help="master seed (default 0)")
    sub.add_argument("--workers", type=int, help="worker processes (default 1)")
    sub.add_argument("--output", help="write result here instead of stdout")
    sub.add_argument("--ref-method", dest="ref_method",
                     choices=["fine-grid", "analytic"],
                     help="reference preference (default fine-grid)")
    sub.add_argument("--cache-dir", dest="cache_dir",
                     help="reference cache directory (default $EXPSDE_CACHE_DIR)")
    sub.add_argument("--no-cache", dest="no_cache", action="store_const",
                     const=True, help="disable the reference cache")
    sub.add_argument("--milstein-half", dest="milstein_half", action="store_const",
                     const=True, help="use the half-coefficient Milstein correction")
    sub.add_argument("--trajectory", type=int, help="trajectory index for simulate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expsde",
        description=(
            "Weak-error toolkit for one-dimensional SDEs with superlinear "
            "polynomial coefficients: positivity-preserving exponential "
            "stepping, tamed and symmetrized comparison schemes, fine-grid "
            "references, and order-one rate checks."
        ),
    )
    subs = parser.add_subparsers(dest="command")
    specs = [
        ("check", cmd_check, "evaluate the parameter hypotheses for a model"),
        ("reference", cmd_reference, "compute (and cache) reference expectations"),
        ("weak-error", cmd_weak_error, "per-level weak-error table as CSV"),
        ("compare", cmd_compare, "multi-scheme wide comparison table"),
        ("rate", cmd_rate, "fitted convergence-rate summary as CSV"),
        ("simulate", cmd_simulate, "dump one trajectory as t,value CSV"),
    ]
    for name, func, help_text in specs:
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub)
        sub.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UnreliableReferenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
