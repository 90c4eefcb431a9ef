"""Centralised reference solution for splitting a deposit into layer rewards.

The end-to-end recycling probability is the product of the layers' acceptance
probabilities.  With every ``ln b_i`` concave, the optimum spends the whole
deposit and equalises ``b_i / b_i'`` over the layers that receive a positive
reward; a layer whose ratio at zero reward already exceeds the common value
gets nothing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_nonnegative
from .behavior import Curve, verify_log_concavity
from .exceptions import DomainError


def throughput(curves: Sequence[Curve], rewards) -> float:
    """Probability that an item clears every layer, ``prod_i b_i(R_i)``."""
    r = check_nonnegative(rewards, "rewards")
    if r.ndim != 1 or len(curves) != r.size:
        raise DomainError(f"{len(curves)} curves but {r.size} rewards")
    return float(np.prod([c(float(x)) for c, x in zip(curves, r)]))


def _check_curves(curves, deposit):
    grid = np.linspace(0.0, max(deposit, 1e-9), 201)
    for i, c in enumerate(curves):
        if not verify_log_concavity(c, grid):
            raise DomainError(f"curve {i} ({getattr(c, 'name', '')!r}) is not log-concave on [0, {deposit}]")


def _split_at(curves, rho, deposit):
    return np.array([c.invert_ratio(rho, deposit) for c in curves])


def solve_consensus(curves: Sequence[Curve], deposit: float, tol: float = 1e-6,
                    check: bool = True) -> np.ndarray:
    """Rewards maximising throughput subject to ``sum(R) <= deposit``.

    Bisects on the shared value of ``b_i / b_i'``; each layer's reward at a
    given shared value comes from inverting its own (increasing) ratio, which
    yields zero for layers whose ratio at zero reward is already larger.
    """
    if not len(curves):
        raise DomainError("need at least one curve")
    deposit = float(deposit)
    if deposit < 0 or np.isnan(deposit):
        raise DomainError(f"deposit must be >= 0, got {deposit!r}")
    if deposit == 0:
        return np.zeros(len(curves))
    if check:
        _check_curves(curves, deposit)

    lo = min(c._ratio_at(0.0) for c in curves)
    hi = max(c._ratio_at(deposit) for c in curves)
    if not np.isfinite(hi):
        hi = np.finfo(float).max / 4
    rewards = _split_at(curves, hi, deposit)
    for _ in range(2000):
        mid = 0.5 * (lo + hi) if hi < 4 * max(lo, 1.0) else np.sqrt(max(lo, 1e-300) * hi)
        rewards = _split_at(curves, mid, deposit)
        gap = rewards.sum() - deposit
        if gap == 0:
            break
        if gap < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    if abs(rewards.sum() - deposit) > tol:
        raise DomainError(f"budget residual {rewards.sum() - deposit:.3g} exceeds tol {tol}")
    # remove bisection residue so the vector is budget-tight
    rewards = np.maximum(rewards, 0.0)
    active = rewards > 0
    if active.any():
        rewards[active] += (deposit - rewards.sum()) / active.sum()
    return np.maximum(rewards, 0.0)


@dataclass
class ThroughputSurface:
    """Throughput over the feasible ``(R1, R2)`` grid with ``R3 = D - R1 - R2``."""

    deposit: float
    step: float
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    values: np.ndarray

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.values))

    @property
    def best(self):
        i = self.argmax
        return (float(self.r1[i]), float(self.r2[i]), float(self.r3[i])), float(self.values[i])

    def rows(self):
        return zip(self.r1.tolist(), self.r2.tolist(), self.r3.tolist(), self.values.tolist())


def sweep_surface(curves: Sequence[Curve], deposit: float, step: float) -> ThroughputSurface:
    """Evaluate throughput on every grid cell of the full-budget simplex."""
    if len(curves) != 3:
        raise DomainError(f"the surface sweep needs exactly 3 layers, got {len(curves)}")
    if not step > 0:
        raise DomainError(f"step must be > 0, got {step!r}")
    deposit = float(deposit)
    n = int(np.floor(deposit / step + 1e-9))
    axis = np.arange(n + 1) * step
    a, b = np.meshgrid(axis, axis, indexing="ij")
    feasible = a + b <= deposit + 1e-9 * max(1.0, deposit)
    r1, r2 = a[feasible], b[feasible]
    r3 = np.maximum(deposit - r1 - r2, 0.0)
    values = curves[0](r1) * curves[1](r2) * curves[2](r3)
    return ThroughputSurface(deposit, float(step), r1, r2, r3, np.asarray(values))


class ConsensusAllocator(BaseEstimator):
    """Estimator wrapper around :func:`solve_consensus`.

    ``fit`` takes the list of layer curves; ``transform`` maps an array of
    deposits to the matching optimal reward vectors.

    Attributes
    ----------
    rewards_ : ndarray of shape (n_layers,)
        Optimal split of ``deposit``.
    throughput_ : float
    ratios_ : ndarray
        ``b_i / b_i'`` at ``rewards_`` (``inf`` for layers left at zero).
    """

    def __init__(self, deposit=20.0, tol=1e-6):
        self.deposit = deposit
        self.tol = tol

    def fit(self, curves, y=None):
        self.curves_ = list(curves)
        self.n_layers_ = len(self.curves_)
        self.rewards_ = solve_consensus(self.curves_, self.deposit, self.tol)
        self.throughput_ = throughput(self.curves_, self.rewards_)
        self.ratios_ = np.array([
            c.inverse_ratio(r) if r > 0 else np.inf for c, r in zip(self.curves_, self.rewards_)
        ])
        return self

    def transform(self, deposits):
        check_is_fitted(self, "curves_")
        d = check_nonnegative(deposits, "deposits").reshape(-1)
        return np.vstack([solve_consensus(self.curves_, x, self.tol, check=False) for x in d])

    def predict(self, deposits):
        """Optimal throughput for each deposit."""
        rewards = self.transform(deposits)
        return np.array([throughput(self.curves_, r) for r in rewards])
