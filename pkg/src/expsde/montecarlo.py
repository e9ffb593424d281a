"""Ensemble simulation: weak-error estimation, divergence accounting, and
empirical moment checks, deterministically parallel.

Trajectories are processed in fixed chunks of CHUNK_TRAJECTORIES.  Each
trajectory draws its normals from its own keyed stream, stepping is
vectorized across the chunk, and chunk results are reduced in chunk-index
order through a pairwise tree with compensated addition.  Neither the
worker count nor the scheduling order can change any output bit (workers
only compute whole chunks, which are pure functions of the chunk index).

Diverged trajectories (non-finite state, |state| above the cap, or a
non-finite test-function value at the terminal, for example 1/x at an
exact zero) are excluded from means and counted in n_diverged.
"""

from __future__ import annotations

import math
import multiprocessing
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import check_hypotheses
from .paths import make_stream
from .schemes import DIVERGENCE_CAP, SchemeKind, step_values

__all__ = [
    "Estimate",
    "WeakErrorRow",
    "WeakErrorTable",
    "AllDivergedError",
    "TEST_FUNCTIONS",
    "resolve_test_function",
    "estimate_expectation",
    "estimate_many",
    "weak_error_sweep",
    "moment_sweep",
    "exp_moment_estimate",
]

CHUNK_TRAJECTORIES = 4096
SEGMENT_STEPS = 1024
MARKER_FRACTION = 0.01  # a table row renders "-" above this diverged share


class AllDivergedError(RuntimeError):
    """Every trajectory of an ensemble diverged; no mean is available."""


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_effective: int
    n_diverged: int

    @property
    def n_requested(self) -> int:
        return self.n_effective + self.n_diverged


@dataclass(frozen=True)
class WeakErrorRow:
    p: int
    dt: float
    estimate: Estimate
    reference: object
    abs_error: Optional[float]
    diverged: bool


@dataclass(frozen=True)
class WeakErrorTable:
    rows: tuple

    def row(self, p: int) -> WeakErrorRow:
        for r in self.rows:
            if r.p == p:
                return r
        raise KeyError(f"no row at refinement level {p}")


def _f_x(x):
    return x


def _f_x2(x):
    return x * x


def _f_inv_x(x):
    with np.errstate(divide="ignore"):
        return 1.0 / x


def _f_exp_neg_x2(x):
    return np.exp(-(x * x))


TEST_FUNCTIONS = {
    "x": _f_x,
    "x2": _f_x2,
    "inv_x": _f_inv_x,
    "exp_neg_x2": _f_exp_neg_x2,
}


def resolve_test_function(f):
    if callable(f):
        return f
    try:
        return TEST_FUNCTIONS[f]
    except KeyError:
        raise ValueError(
            f"unknown test function {f!r}; built-ins: {sorted(TEST_FUNCTIONS)}"
        ) from None


# ------------------------------------------------------------------ engine

def _chunk_payload(model, kind, p, seed, start, count, with_integral, milstein_half):
    """Simulate trajectories [start, start+count) at level p.

    Returns (terminal values, diverged mask, path integral of X^(2a-2) by
    left Riemann sum or None).  Pure function of its arguments.
    """
    n_steps = 1 << p
    dt = model.horizon / n_steps
    sqdt = math.sqrt(dt)
    streams = [make_stream(seed, start + i, p) for i in range(count)]
    x = np.full(count, model.x0, dtype=np.float64)
    div = np.zeros(count, dtype=bool)
    integral = np.zeros(count, dtype=np.float64) if with_integral else None
    power = 2.0 * model.alpha - 2.0
    k0 = 0
    block = np.empty((count, min(SEGMENT_STEPS, n_steps)), dtype=np.float64)
    while k0 < n_steps:
        width = min(SEGMENT_STEPS, n_steps - k0)
        for i, s in enumerate(streams):
            block[i, :width] = s.standard_normals(width)
        for j in range(width):
            if div.all():
                # streams must still be exhausted below to keep counters
                # aligned, but no state can change any more
                break
            if with_integral:
                with np.errstate(over="ignore", invalid="ignore"):
                    contrib = np.power(x, power) * dt
                integral = np.where(div, integral, integral + contrib)
            cand = step_values(kind, model, x, dt, block[:, j] * sqdt,
                               milstein_half=milstein_half)
            with np.errstate(invalid="ignore"):
                good = np.isfinite(cand) & (np.abs(cand) <= DIVERGENCE_CAP)
            newly_bad = ~div & ~good
            x = np.where(div, x, cand)
            div = div | newly_bad
        k0 += width
        if div.all() and k0 < n_steps:
            for s in streams:
                s.standard_normals(n_steps - k0)
            break
    return x, div, integral


def _worker(args):
    (model, kind_value, p, seed, start, count, with_integral, milstein_half) = args
    return _chunk_payload(model, SchemeKind(kind_value), p, seed, start, count,
                          with_integral, milstein_half)


def _iter_chunks(model, kind, p, n, seed, workers, with_integral, milstein_half):
    """Yield (terminals, diverged, integral) per chunk, in chunk-index order."""
    starts = list(range(0, n, CHUNK_TRAJECTORIES))
    arglist = [
        (model, kind.value, p, seed, s, min(CHUNK_TRAJECTORIES, n - s),
         with_integral, milstein_half)
        for s in starts
    ]
    if workers <= 1 or len(arglist) == 1:
        for args in arglist:
            yield _worker(args)
        return
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(processes=min(workers, len(arglist))) as pool:
        yield from pool.imap(_worker, arglist, chunksize=1)


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _tree_sum(leaves):
    """Pairwise compensated reduction in fixed leaf order."""
    if not leaves:
        return 0.0
    nodes = [(v, 0.0) for v in leaves]
    while len(nodes) > 1:
        merged = []
        for i in range(0, len(nodes) - 1, 2):
            s1, c1 = nodes[i]
            s2, c2 = nodes[i + 1]
            s, e = _two_sum(s1, s2)
            merged.append((s, c1 + c2 + e))
        if len(nodes) % 2:
            merged.append(nodes[-1])
        nodes = merged
    s, c = nodes[0]
    return s + c


def _assemble(sums, sumsqs, n_eff, n_div):
    total = _tree_sum(sums)
    total_sq = _tree_sum(sumsqs)
    if n_eff == 0:
        return Estimate(mean=math.nan, stderr=math.inf,
                        n_effective=0, n_diverged=n_div)
    mean = total / n_eff
    if n_eff == 1:
        stderr = math.inf
    else:
        var = max(0.0, (total_sq - n_eff * mean * mean) / (n_eff - 1))
        stderr = math.sqrt(var / n_eff)
    return Estimate(mean=mean, stderr=stderr, n_effective=n_eff, n_diverged=n_div)


def estimate_many(model, kind, fs, p, n, seed, workers: int = 1,
                  milstein_half: bool = False):
    """Estimate E[f(X_T)] for several test functions on one shared ensemble.

    Returns one Estimate per entry of fs.  Divergence is assessed per test
    function (a terminal that is fine for f(x)=x may still produce a
    non-finite 1/x).
    """
    if n < 1:
        raise ValueError(f"need at least one trajectory, got n={n}")
    funcs = [resolve_test_function(f) for f in fs]
    per_f = [([], [], 0, 0) for _ in funcs]  # sums, sumsqs, n_eff, n_div
    for terminals, div, _ in _iter_chunks(model, kind, p, n, seed, workers,
                                          False, milstein_half):
        for idx, func in enumerate(funcs):
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                vals = np.asarray(func(terminals), dtype=np.float64)
            good = ~div & np.isfinite(vals)
            sums, sumsqs, n_eff, n_div = per_f[idx]
            safe = np.where(good, vals, 0.0)
            sums.append(float(np.sum(safe)))
            sumsqs.append(float(np.sum(safe * safe)))
            per_f[idx] = (sums, sumsqs,
                          n_eff + int(good.sum()),
                          n_div + int((~good).sum()))
    return [_assemble(*acc) for acc in per_f]


def estimate_expectation(model, kind, f, p, n, seed, workers: int = 1,
                         milstein_half: bool = False) -> Estimate:
    """Mean and stderr of f over the non-diverged terminals of an n-path
    ensemble at refinement level p.  Raises AllDivergedError if nothing
    survives."""
    if n < 2:
        raise ValueError(f"need n >= 2 for a standard error, got n={n}")
    est = estimate_many(model, kind, [f], p, n, seed, workers=workers,
                        milstein_half=milstein_half)[0]
    if est.n_effective == 0:
        raise AllDivergedError(
            f"all {n} trajectories diverged (scheme {kind.value}, p={p})"
        )
    return est


def weak_error_sweep(model, kind, f, p_list, n, reference, seed,
                     workers: int = 1, milstein_half: bool = False) -> WeakErrorTable:
    """One weak-error row per refinement level in p_list.

    Ensembles at different levels are independent (the level is part of the
    stream key).  A row is marked diverged when more than MARKER_FRACTION
    of its trajectories diverged or its mean is non-finite; the sweep never
    aborts on a bad row.
    """
    if not p_list:
        raise ValueError("p_list must be nonempty")
    rows = []
    for p in p_list:
        est = estimate_many(model, kind, [f], p, n, seed, workers=workers,
                            milstein_half=milstein_half)[0]
        marked = (est.n_diverged > MARKER_FRACTION * est.n_requested
                  or not math.isfinite(est.mean))
        abs_error = None
        if not marked:
            abs_error = abs(est.mean - reference.value)
        rows.append(WeakErrorRow(
            p=p,
            dt=model.horizon / (1 << p),
            estimate=est,
            reference=reference,
            abs_error=abs_error,
            diverged=marked,
        ))
    return WeakErrorTable(rows=tuple(rows))


def moment_sweep(model, kind, orders, p, n, seed, workers: int = 1):
    """Empirical E[X_T^order] for each order, on one shared ensemble.

    Warns when an order exceeds the model's largest provably finite moment
    order (the estimate is still computed; blow-up across p is exactly what
    the caller may be probing)."""
    report = check_hypotheses(model)
    for order in orders:
        if order > report.max_moment_order:
            warnings.warn(
                f"moment order {order} exceeds the provable bound "
                f"{report.max_moment_order:.6g}; estimate may blow up",
                stacklevel=2,
            )
    funcs = [(lambda o: (lambda x: np.power(x, float(o))))(o) for o in orders]
    ests = estimate_many(model, kind, funcs, p, n, seed, workers=workers)
    return dict(zip(orders, ests))


def _exp_moment_bound(model):
    s2 = model.sigma * model.sigma
    if model.b0 == 0.0:
        return (s2 + 2.0 * model.b2) ** 2 / (8.0 * s2)
    return model.b2 * s2


def exp_moment_estimate(model, kind, mu, p, n, seed, workers: int = 1) -> Estimate:
    """Empirical E[exp(mu * I_T)] with I_T the left-endpoint Riemann sum of
    X^(2 alpha - 2) on the simulation grid.  Overflowing trajectories count
    as diverged."""
    bound = _exp_moment_bound(model)
    if mu > bound:
        warnings.warn(
            f"mu={mu} exceeds the exponential-moment bound {bound:.6g} "
            "for this model; the estimate may be infinite in the limit",
            stacklevel=2,
        )
    if model.b0 > 0.0 and model.alpha <= 1.5:
        warnings.warn(
            "exponential-moment bound is only established for alpha > 3/2 "
            "when b(0) > 0",
            stacklevel=2,
        )
    sums, sumsqs, n_eff, n_div = [], [], 0, 0
    for _, div, integral in _iter_chunks(model, kind, p, n, seed, workers,
                                         True, False):
        with np.errstate(over="ignore", invalid="ignore"):
            vals = np.exp(mu * integral)
        good = ~div & np.isfinite(vals)
        safe = np.where(good, vals, 0.0)
        sums.append(float(np.sum(safe)))
        sumsqs.append(float(np.sum(safe * safe)))
        n_eff += int(good.sum())
        n_div += int((~good).sum())
    return _assemble(sums, sumsqs, n_eff, n_div)
