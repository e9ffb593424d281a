"""Model definitions and parameter hypothesis checks for the scalar SDE

    dX_t = b(X_t) dt + sigma * X_t^alpha dW_t,   X_0 = x0 > 0,  alpha > 1,

where the drift is dominated by B1*x - B2*x^(2*alpha-1) + b(0).

PrototypeModel fixes the polynomial drift b(x) = b0 + b1*x - b2*x^(2*alpha-1).
GeneralDriftModel wraps an arbitrary drift callable plus declared growth
metadata.  check_hypotheses evaluates the sufficient parameter conditions for
weak order one of the exponential scheme and reports the slack kappa.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, InitVar
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PrototypeModel",
    "GeneralDriftModel",
    "GrowthMetadata",
    "HypothesisReport",
    "InsufficientMetadataError",
    "drift_eval",
    "kappa",
    "check_hypotheses",
]


class InsufficientMetadataError(ValueError):
    """Raised when a general-drift model lacks the growth metadata needed
    by the hypothesis checker.  ``missing`` lists the absent fields."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(
            "general drift model lacks growth metadata: missing "
            + ", ".join(self.missing)
        )


@dataclass(frozen=True)
class PrototypeModel:
    """Polynomial-drift model b(x) = b0 + b1*x - b2*x^(2*alpha-1).

    ``validate=False`` skips the invariant checks so degenerate parameter
    sets (for example alpha = 1) can still be fed to check_hypotheses,
    which will then report the violated condition instead of raising.
    """

    b0: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    sigma: float = 0.1
    alpha: float = 1.5
    x0: float = 1.0
    horizon: float = 1.0
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        if not validate:
            return
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.x0 > 0.0:
            raise ValueError(f"x0 must be positive, got {self.x0}")
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        for name in ("b0", "b1", "b2"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True)
class GrowthMetadata:
    """Declared growth constants for a general drift.

    B1, B2 bound the drift itself (b(x) <= B1*x - B2*x^(2*alpha-1) + b(0));
    B1p, B2p bound its derivative.  gamma_up[i] / gamma_down[i] are the
    declared local-Lipschitz exponents of the i+1-th derivative (four
    entries, derivative orders 1 through 4).
    """

    B1: float
    B2: float
    B1p: float
    B2p: float
    gamma_up: tuple = ()
    gamma_down: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "gamma_up", tuple(float(g) for g in self.gamma_up))
        object.__setattr__(self, "gamma_down", tuple(float(g) for g in self.gamma_down))
        for name in ("gamma_up", "gamma_down"):
            vals = getattr(self, name)
            if len(vals) not in (0, 4):
                raise ValueError(f"{name} needs exactly 4 entries, got {len(vals)}")
            if any(g < 0.0 for g in vals):
                raise ValueError(f"{name} entries must be nonnegative: {vals}")
        for name in ("B1", "B2", "B1p", "B2p"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class GeneralDriftModel:
    """SDE model with a user-supplied drift callable.

    The drift is soft-checked against the declared growth bound on a log
    grid at construction (a warning, not an error: the bound is a
    hypothesis about all of [0, inf), which a finite sample cannot prove).
    """

    drift: Callable[[float], float]
    b_at_zero: float
    sigma: float
    alpha: float
    x0: float = 1.0
    horizon: float = 1.0
    drift_deriv: Optional[Callable[[float], float]] = None
    growth: Optional[GrowthMetadata] = None
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        if not validate:
            return
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.x0 > 0.0:
            raise ValueError(f"x0 must be positive, got {self.x0}")
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.b_at_zero < 0.0:
            raise ValueError("b_at_zero must be nonnegative")
        try:
            at0 = float(self.drift(0.0))
        except Exception:
            at0 = None
        if at0 is not None and math.isfinite(at0):
            if abs(at0 - self.b_at_zero) > 1e-12 * max(1.0, abs(at0)):
                raise ValueError(
                    f"drift(0) = {at0} disagrees with declared b_at_zero = {self.b_at_zero}"
                )
        if self.growth is not None:
            self._soft_growth_check()

    def _soft_growth_check(self):
        g = self.growth
        xs = np.logspace(-6.0, 6.0, 1000)
        with np.errstate(over="ignore", invalid="ignore"):
            bx = np.array([self.drift(float(x)) for x in xs], dtype=np.float64)
            bound = g.B1 * xs - g.B2 * np.power(xs, 2.0 * self.alpha - 1.0) + self.b_at_zero
        bad = np.isfinite(bx) & np.isfinite(bound) & (bx > bound + 1e-9 * (1.0 + np.abs(bound)))
        if bad.any():
            worst = xs[np.argmax(np.where(bad, bx - bound, -np.inf))]
            warnings.warn(
                f"declared growth bound violated on sampled grid (for example x={worst:.4g}); "
                "hypothesis report may be unreliable",
                stacklevel=3,
            )


@dataclass(frozen=True)
class HypothesisReport:
    h1_ok: bool
    h4_ok: bool
    h5_ok: bool
    kappa: float
    kappa_constraint_used: str
    max_moment_order: float
    notes: tuple = ()


def drift_eval(model: PrototypeModel, x):
    """Drift b(x) = b0 + b1*x - b2*x^(2*alpha-1), vectorized over x.

    Powers use IEEE semantics: 0 maps to 0, an integer-valued exponent of a
    negative base stays real, and a fractional power of a negative base is
    NaN (downstream code treats that as divergence).
    """
    xv = np.asarray(x, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        out = model.b0 + model.b1 * xv - model.b2 * np.power(xv, 2.0 * model.alpha - 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def _bracket(alpha: float) -> float:
    """The three-way max appearing in the order-one parameter constraint."""
    return max(
        12.0 * alpha - 19.0,
        8.0 * alpha - 10.0,
        5.0 * alpha * alpha / (2.0 * alpha - 1.0),
    )


def kappa(model: PrototypeModel) -> float:
    """Slack of the order-one parameter constraint for the prototype model.

    For b0 = 0:  B2 - 3*sigma^2*alpha - (sigma^2/2) * max{12a-19, 8a-10,
    5a^2/(2a-1)}.  For b0 > 0 the subtracted budget is the max of a^2/2 and
    the same sigma^2/2 bracket.  Nonnegative slack means the hypothesis
    holds (for b0 > 0 this additionally needs alpha > 3/2, which is the
    caller's concern; the arithmetic here is well defined for any alpha > 1).
    """
    a = model.alpha
    s2 = model.sigma * model.sigma
    budget = 0.5 * s2 * _bracket(a)
    if model.b0 > 0.0:
        budget = max(0.5 * a * a, budget)
    return model.b2 - 3.0 * s2 * a - budget


def _beta_bar(growth: GrowthMetadata) -> float:
    g2, g3, g4 = growth.gamma_up[1], growth.gamma_up[2], growth.gamma_up[3]
    return max(3.0 * (g2 + 1.0), g2 + g3 + 2.0, g4 + 1.0)


def check_hypotheses(model) -> HypothesisReport:
    """Evaluate the parameter hypotheses and return a report.

    h1: alpha > 1, sigma > 0, x0 > 0.  h4: derivative growth exponents obey
    gamma_(i) <= i-1 (automatic for the polynomial prototype).  h5: the
    order-one constraint, reported through its slack kappa (h5_ok iff
    kappa >= 0; when the b0 > 0 constraint is inapplicable because
    alpha <= 3/2, kappa is NaN and a note carries the raw slack).
    max_moment_order is the largest finite moment order 1 + 2*B2/sigma^2.
    """
    if isinstance(model, GeneralDriftModel):
        return _check_general(model)
    return _check_prototype(model)


def _check_prototype(model: PrototypeModel) -> HypothesisReport:
    notes = []
    h1 = (model.alpha > 1.0) and (model.sigma > 0.0) and (model.x0 > 0.0)
    if not h1:
        notes.append(
            f"h1 violated: need alpha > 1, sigma > 0, x0 > 0 "
            f"(got alpha={model.alpha}, sigma={model.sigma}, x0={model.x0})"
        )
    h4 = True  # polynomial drift: every derivative is again polynomial with
    # local-Lipschitz exponent at most its order minus one

    s2 = model.sigma * model.sigma
    max_order = 1.0 + 2.0 * model.b2 / s2 if s2 > 0.0 else math.inf

    if model.b0 > 0.0:
        used = "b0>0"
        raw = kappa(model) if model.alpha > 1.0 else math.nan
        if model.alpha <= 1.5:
            k = math.nan
            h5 = False
            notes.append(
                "the constant-drift constraint needs alpha > 3/2; "
                f"alpha={model.alpha} so the order-one condition is not applicable "
                f"(raw slack {raw:.6g})"
            )
        else:
            k = raw
            h5 = k >= 0.0
    else:
        used = "b0=0"
        k = kappa(model) if model.alpha > 1.0 else math.nan
        h5 = (k >= 0.0) if not math.isnan(k) else False

    notes.append(f"derived drift-derivative bound uses B2' = (2*alpha-1)*B2 = {(2.0 * model.alpha - 1.0) * model.b2:.6g}")
    return HypothesisReport(
        h1_ok=h1,
        h4_ok=h4,
        h5_ok=bool(h5),
        kappa=k,
        kappa_constraint_used=used,
        max_moment_order=max_order,
        notes=tuple(notes),
    )


def _check_general(model: GeneralDriftModel) -> HypothesisReport:
    if model.growth is None:
        raise InsufficientMetadataError(
            ["growth.B1", "growth.B2", "growth.B1p", "growth.B2p",
             "growth.gamma_up", "growth.gamma_down"]
        )
    g = model.growth
    missing = [f"growth.{name}" for name in ("gamma_up", "gamma_down")
               if len(getattr(g, name)) != 4]
    if missing:
        raise InsufficientMetadataError(missing)
    notes = []
    h1 = (model.alpha > 1.0) and (model.sigma > 0.0) and (model.x0 > 0.0)
    if not h1:
        notes.append("h1 violated (need alpha > 1, sigma > 0, x0 > 0)")
    h4 = all(g.gamma_down[i] <= float(i) for i in range(4))
    if not h4:
        notes.append(f"h4 violated: gamma_down = {g.gamma_down} exceeds (0,1,2,3)")

    a = model.alpha
    s2 = model.sigma * model.sigma
    bb = _beta_bar(g)
    body = 0.5 * s2 * (max(2.0 * bb, bb + 2.0 * a) - 1.0)
    if model.b_at_zero > 0.0:
        body = max(0.5 * a * a, body)
    slack_drift = g.B2 - 3.0 * s2 * a - body
    slack_deriv = g.B2p - s2 * a * (8.5 * a - 3.0)
    k = min(slack_drift, slack_deriv)
    h5 = k >= 0.0
    if model.b_at_zero > 0.0 and a <= 1.5:
        notes.append(
            "the constant-drift constraint needs alpha > 3/2; order-one "
            f"condition not applicable (raw slack {k:.6g})"
        )
        k = math.nan
        h5 = False
    max_order = 1.0 + 2.0 * g.B2 / s2 if s2 > 0.0 else math.inf
    return HypothesisReport(
        h1_ok=h1,
        h4_ok=bool(h4),
        h5_ok=bool(h5),
        kappa=k,
        kappa_constraint_used="general",
        max_moment_order=max_order,
        notes=tuple(notes),
    )
