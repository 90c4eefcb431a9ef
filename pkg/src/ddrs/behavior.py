"""Acceptance-probability curves for the actors of each layer.

A curve maps the reward offered to a layer (in pence) to the probability that
the layer's actor performs the transfer.  :class:`BehaviorCurve` is the
built-in saturating-exponential family parameterised by the base probability
``p0`` and the reward ``x90`` that buys 90% acceptance.  Any other curve may be
plugged in through :class:`FunctionCurve` as long as ``ln b`` is concave.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import as_scalar_or_array, check_nonnegative
from .exceptions import DomainError

P0_MAX = 0.9 - 1e-6
X90_LEVEL = 0.9


class Curve:
    """Base class: an increasing acceptance probability ``b(R)`` on ``R >= 0``.

    Subclasses provide ``_value`` and ``_derivative`` on validated arrays.
    """

    name: str = ""

    def __call__(self, reward):
        r = check_nonnegative(reward)
        return as_scalar_or_array(self._value(r), reward)

    def derivative(self, reward):
        r = check_nonnegative(reward)
        return as_scalar_or_array(self._derivative(r), reward)

    def inverse_ratio(self, reward):
        """``b(R) / b'(R)``, the quantity equalised across layers at the optimum."""
        r = np.asarray(reward, dtype=float)
        if np.any(~(r > 0)):
            raise DomainError(f"inverse_ratio needs reward > 0, got {reward!r}")
        return as_scalar_or_array(self._ratio(r), reward)

    def _ratio(self, r):
        with np.errstate(divide="ignore", over="ignore"):
            return self._value(r) / self._derivative(r)

    def invert_ratio(self, target, upper, tol=1e-12):
        """Smallest ``R`` in ``[0, upper]`` with ``inverse_ratio(R) >= target``.

        Plain bisection; relies only on the ratio being increasing.  Returns
        0 when the ratio already exceeds ``target`` at zero reward and
        ``upper`` when it never reaches it inside the bracket.
        """
        lo, hi = 0.0, float(upper)
        if self._ratio_at(lo) >= target:
            return 0.0
        if self._ratio_at(hi) < target:
            return hi
        while hi - lo > tol * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if self._ratio_at(mid) < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def _ratio_at(self, r):
        return float(self._ratio(np.asarray(r, dtype=float)))

    def log_value(self, reward):
        with np.errstate(divide="ignore"):
            return np.log(self(reward))


@dataclass(frozen=True)
class BehaviorCurve(Curve):
    """``b(R) = 1 - (1 - p0) exp(-k R)`` with ``k = ln((1 - p0) / 0.1) / x90``.

    Parameters
    ----------
    p0 : float
        Acceptance probability with no reward, in ``[0, 0.9)``.
    x90 : float
        Reward in pence at which the acceptance probability reaches 0.9.
    name : str, optional
        Label used in reports.
    """

    p0: float
    x90: float
    name: str = ""
    decay_rate: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.p0 <= P0_MAX):
            raise DomainError(f"p0 must lie in [0, {P0_MAX}], got {self.p0!r}")
        if not self.x90 > 0:
            raise DomainError(f"x90 must be > 0, got {self.x90!r}")
        k = math.log((1.0 - self.p0) / (1.0 - X90_LEVEL)) / self.x90
        object.__setattr__(self, "decay_rate", k)

    def _value(self, r):
        return 1.0 - (1.0 - self.p0) * np.exp(-self.decay_rate * r)

    def _derivative(self, r):
        return (1.0 - self.p0) * self.decay_rate * np.exp(-self.decay_rate * r)

    def _ratio(self, r):
        # b/b' = (e^{kR} - (1 - p0)) / ((1 - p0) k); stays finite where b' underflows
        q = 1.0 - self.p0
        with np.errstate(over="ignore"):
            return (np.exp(self.decay_rate * r) - q) / (q * self.decay_rate)

    def to_dict(self):
        d = {"p0": self.p0, "x90": self.x90}
        if self.name:
            d["name"] = self.name
        return d


class FunctionCurve(Curve):
    """A user-supplied curve.

    ``derivative`` defaults to a central finite difference of ``func``.
    """

    def __init__(self, func: Callable, derivative: Callable | None = None, name: str = ""):
        self.func = func
        self.deriv = derivative
        self.name = name

    @staticmethod
    def _apply(f, r):
        try:
            return np.asarray(f(r), dtype=float)
        except (TypeError, ValueError):
            # scalar-only callables (math.exp and friends)
            return np.vectorize(f, otypes=[float])(r)

    def _value(self, r):
        return self._apply(self.func, r)

    def _derivative(self, r):
        if self.deriv is not None:
            return self._apply(self.deriv, r)
        h = 1e-6
        lo = np.maximum(r - h, 0.0)
        return (self._value(r + h) - self._value(lo)) / (r + h - lo)

    def __repr__(self):
        return f"FunctionCurve(name={self.name!r})"


TABLE1 = (
    BehaviorCurve(0.05, 15.0, "consumers"),
    BehaviorCurve(0.10, 5.0, "collectors"),
    BehaviorCurve(0.50, 1.0, "paper_mills"),
)


def verify_log_concavity(curve: Curve, grid, tol: float = 1e-9) -> bool:
    """Check that ``ln b`` has non-positive second divided differences on ``grid``.

    Grid points where ``b`` is exactly zero are skipped (``ln b = -inf`` there
    is concave in the extended sense).
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 3:
        raise DomainError("grid needs at least 3 points")
    if np.any(g < 0):
        raise DomainError("grid must be non-negative")
    if np.any(np.diff(g) <= 0):
        raise DomainError("grid must be strictly increasing")

    b = np.asarray(curve(g), dtype=float)
    keep = b > 0
    g, b = g[keep], b[keep]
    if g.size < 3:
        return True
    y = np.log(b)
    h = np.diff(g)
    slopes = np.diff(y) / h
    second = 2.0 * np.diff(slopes) / (h[:-1] + h[1:])
    return bool(np.all(second <= tol))
