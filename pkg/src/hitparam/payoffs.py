"""Named payoff functions h(t, x) of the stopped pair (tau ^ T, X_{tau ^ T}).

Payoffs are built from plain data so that run configs stay language-agnostic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class PayoffError(ValueError):
    pass


@dataclass(frozen=True)
class Payoff:
    """h(t, x) with an optional x-derivative (for integration-by-parts checks)."""

    name: str
    func: Callable
    space_deriv: Callable | None = None

    def __call__(self, t, x):
        return self.func(np.asarray(t, float), np.asarray(x, float))


def indicator_before(T):
    # the stopped time equals T exactly when no crossing happened before T
    return Payoff("indicator-before-T", lambda t, x: np.where(t < T, 1.0, 0.0) + 0.0 * x)


def indicator_at(T):
    return Payoff("indicator-at-T", lambda t, x: np.where(t >= T, 1.0, 0.0) + 0.0 * x)


def unit():
    return Payoff("unit", lambda t, x: np.ones(np.broadcast(t, x).shape))


def polynomial(coefficients, only_at_T=None):
    """sum_k c_k x^k, optionally restricted to the survival event {tau > T}."""
    c = np.asarray(coefficients, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise PayoffError("polynomial needs a non-empty coefficient list")
    dc = np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1)

    def f(t, x):
        v = np.polynomial.polynomial.polyval(x, c)
        return v if only_at_T is None else np.where(t >= only_at_T, v, 0.0)

    return Payoff("polynomial", f, lambda x: np.polynomial.polynomial.polyval(x, dc))


def exponential_tilt(rate, only_at_T=None):
    def f(t, x):
        v = np.exp(rate * x)
        return v if only_at_T is None else np.where(t >= only_at_T, v, 0.0)

    return Payoff("exponential-tilt", f, lambda x: rate * np.exp(rate * x))


def grid_interpolated(x_grid, values, only_at_T=None):
    """Piecewise-linear h in x, constant beyond the end points."""
    xg = np.asarray(x_grid, dtype=float)
    vg = np.asarray(values, dtype=float)
    if xg.ndim != 1 or xg.shape != vg.shape or xg.size < 2 or np.any(np.diff(xg) <= 0):
        raise PayoffError("grid-interpolated payoff needs increasing x_grid and matching values")

    def f(t, x):
        v = np.interp(x, xg, vg)
        return v if only_at_T is None else np.where(t >= only_at_T, v, 0.0)

    return Payoff("grid-interpolated", f)


def build_payoff(spec: dict, T: float) -> Payoff:
    """Build a payoff from a config mapping ``{"name": ..., <params>}``."""
    name = spec.get("name")
    survival = T if spec.get("survival_only", False) else None
    if name == "indicator-before-T":
        return indicator_before(T)
    if name == "indicator-at-T":
        return indicator_at(T)
    if name == "unit":
        return unit()
    if name == "polynomial":
        return polynomial(spec["coefficients"], survival)
    if name == "exponential-tilt":
        return exponential_tilt(float(spec["rate"]), survival)
    if name == "grid-interpolated":
        return grid_interpolated(spec["x_grid"], spec["values"], survival)
    raise PayoffError(f"unknown payoff {name!r}")


PAYOFF_NAMES = ("indicator-before-T", "indicator-at-T", "unit", "polynomial", "exponential-tilt", "grid-interpolated")
