"""Slow PI loop that moves the deposit toward a target recycling rate."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._validation import check_probability
from .behavior import Curve
from .exceptions import ConfigError
from .rewardopt import solve_consensus, throughput


def measure_error(measured_rate: float, target_rate: float) -> float:
    return check_probability(target_rate, "target_rate") - check_probability(measured_rate, "measured_rate")


@dataclass
class PiConfig:
    kp: float = 5.0
    ki: float = 30.0
    target_rate: float = 0.77
    d0: float = 1.0
    d_min: float = 0.0
    d_max: float = 100.0
    rate_limit_up: float = 2.0
    rate_limit_down: float = 0.5
    period_days: int = 30

    def __post_init__(self):
        if self.kp < 0:
            raise ConfigError("must be >= 0", "kp")
        if self.ki < 0:
            raise ConfigError("must be >= 0", "ki")
        if not 0 <= self.target_rate <= 1:
            raise ConfigError("must lie in [0, 1]", "target_rate")
        if not 0 <= self.d_min <= self.d_max:
            raise ConfigError("need 0 <= d_min <= d_max", "d_min")
        if not self.d_min <= self.d0 <= self.d_max:
            raise ConfigError("must lie in [d_min, d_max]", "d0")
        if self.rate_limit_up < 1:
            raise ConfigError("must be >= 1", "rate_limit_up")
        if not 0 < self.rate_limit_down <= 1:
            raise ConfigError("must lie in (0, 1]", "rate_limit_down")
        if int(self.period_days) < 1:
            raise ConfigError("must be >= 1", "period_days")


@dataclass
class PiController:
    """PI law on the rate error with output saturation and a per-step rate limit.

    The integral term is kept in pence so that, with zero error, the deposit
    stays where it is.  When the output is clamped (by ``d_min``/``d_max`` or
    by the rate limits) the integral is reset to the value consistent with
    the clamped output, so no windup builds up behind the limit.
    """

    config: PiConfig = field(default_factory=PiConfig)
    deposit: float = field(init=False)
    integral: float = field(init=False)
    clamped: bool = field(init=False, default=False)
    unstable: bool = field(init=False, default=False)
    _over: int = field(init=False, default=0, repr=False)
    _last_abs_error: float = field(init=False, default=0.0, repr=False)

    def __post_init__(self):
        self.deposit = float(self.config.d0)
        self.integral = self.deposit

    def bounds(self):
        cfg = self.config
        lo = max(cfg.d_min, cfg.rate_limit_down * self.deposit)
        hi = min(cfg.d_max, cfg.rate_limit_up * self.deposit)
        return lo, max(lo, hi)

    def step(self, measured_rate: float) -> float:
        cfg = self.config
        e = measure_error(measured_rate, cfg.target_rate)
        integral = self.integral + cfg.ki * e
        candidate = integral + cfg.kp * e
        lo, hi = self.bounds()
        out = min(max(candidate, lo), hi)
        self.clamped = out != candidate
        self.integral = out - cfg.kp * e if self.clamped else integral

        # three periods in a row asking for more than d_max while the error grows
        if candidate > cfg.d_max and abs(e) > self._last_abs_error:
            self._over += 1
        else:
            self._over = 0
        self.unstable = self.unstable or self._over >= 3
        self._last_abs_error = abs(e)
        self.deposit = out
        return out


class StaticPlant:
    """Exact plant: optimal split of the deposit, then its exact throughput."""

    def __init__(self, curves: Sequence[Curve]):
        self.curves = list(curves)

    def __call__(self, deposit: float):
        rewards = solve_consensus(self.curves, deposit, check=False)
        return throughput(self.curves, rewards), rewards


@dataclass
class ClosedLoopResult:
    deposits: np.ndarray
    rates: np.ndarray
    rewards: np.ndarray
    target_rate: float
    unstable: bool

    def rows(self):
        for p, (d, y, r) in enumerate(zip(self.deposits, self.rates, self.rewards)):
            yield [p, float(d), float(y), self.target_rate, *map(float, r)]


def closed_loop(plant: Callable, config: PiConfig | None = None, periods: int = 36) -> ClosedLoopResult:
    """Alternate plant evaluation and controller steps for ``periods`` periods.

    ``plant(deposit)`` returns ``(rate, rewards)``.  Row ``p`` holds the
    deposit active during period ``p`` and the rate measured at its end.
    """
    ctl = PiController(config or PiConfig())
    deposits, rates, rewards = [], [], []
    for _ in range(periods):
        rate, split = plant(ctl.deposit)
        deposits.append(ctl.deposit)
        rates.append(rate)
        rewards.append(np.asarray(split, dtype=float))
        ctl.step(rate)
    return ClosedLoopResult(np.array(deposits), np.array(rates), np.vstack(rewards),
                            ctl.config.target_rate, ctl.unstable)
