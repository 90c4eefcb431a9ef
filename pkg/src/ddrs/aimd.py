"""Unsynchronised AIMD split of a deposit into per-layer rewards.

Every layer raises its reward by ``alpha`` per step.  When the rewards add up
to more than the deposit a budget monitor broadcasts a capacity event; each
layer then records its reward, updates its long-run average and, with a
probability computed from its own private curve at that average, shrinks its
reward by ``beta``.  The averages settle where ``b_i / b_i'`` agree across
layers, which is the throughput optimum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .behavior import Curve
from .exceptions import ConfigError, DomainError
from .rewardopt import solve_consensus

logger = logging.getLogger(__name__)

PI_MIN = 1e-6


def decrease_probability(curve: Curve, avg_reward: float, gamma: float, pi_min: float = PI_MIN,
                         clamp: bool = True) -> float:
    """Back-off probability ``gamma * b(R) / (R * b'(R))`` at the long-run average ``R``."""
    if not avg_reward > 0:
        raise DomainError(f"average reward must be > 0, got {avg_reward!r}")
    if not gamma > 0:
        raise DomainError(f"gamma must be > 0, got {gamma!r}")
    p = gamma * curve._ratio_at(avg_reward) / avg_reward
    if not clamp:
        return p
    return min(max(p, pi_min), 1.0)


def consensus_diagnostic(curves: Sequence[Curve], avg_rewards) -> np.ndarray:
    """``b_i'(R_i) / b_i(R_i)`` for each layer; equal values mean optimality."""
    r = np.asarray(avg_rewards, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("average rewards must be > 0")
    return np.array([1.0 / c.inverse_ratio(float(x)) for c, x in zip(curves, r)])


def relative_spread(values) -> float:
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / abs(v.mean()))


def auto_gamma(curves: Sequence[Curve], deposit: float, target_pi: float = 0.5) -> float:
    """Pick ``gamma`` so the largest back-off probability at the optimum is ``target_pi``.

    At the optimum every rewarded layer shares the same ``b/b'``, so the
    layer with the smallest optimal reward has the largest probability.
    """
    opt = solve_consensus(curves, deposit)
    scale = [r / c.inverse_ratio(r) for c, r in zip(curves, opt) if r > 0]
    if not scale:
        raise ConfigError("no layer receives a positive reward; cannot derive gamma")
    return target_pi * min(scale)


@dataclass
class AimdConfig:
    deposit: float = 20.0
    alpha: float = 0.01
    beta: float = 0.85
    gamma: float | None = None
    max_iter: int = 1_000_000
    initial_reward: float = 0.1
    window: int = 50
    rtol: float = 1e-3
    min_events: int = 20000
    stop_on_convergence: bool = True
    record_every: int = 1

    def __post_init__(self):
        if not self.deposit > 0:
            raise ConfigError(f"must be > 0, got {self.deposit!r}", "deposit")
        if not self.alpha > 0:
            raise ConfigError(f"must be > 0, got {self.alpha!r}", "alpha")
        if not 0 < self.beta < 1:
            raise ConfigError(f"must lie in (0, 1), got {self.beta!r}", "beta")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"must be > 0, got {self.gamma!r}", "gamma")
        if not self.initial_reward > 0:
            raise ConfigError(f"must be > 0, got {self.initial_reward!r}", "initial_reward")
        for key in ("max_iter", "window", "record_every"):
            if int(getattr(self, key)) < 1:
                raise ConfigError("must be >= 1", key)
        if not self.rtol > 0:
            raise ConfigError("must be > 0", "rtol")


class AimdLayer:
    """One layer's private state.  Only this object ever evaluates its curve."""

    def __init__(self, curve: Curve, reward: float, rng: np.random.Generator):
        self._curve = curve
        self._rng = rng
        self.reward = float(reward)
        self.events = 0
        self.event_sum = 0.0
        self.history: list[float] = []

    @property
    def average(self) -> float:
        return self.event_sum / self.events if self.events else float("nan")

    def increase(self, alpha):
        self.reward += alpha

    def on_capacity_event(self, alpha, beta, gamma) -> float:
        self.events += 1
        self.event_sum += self.reward
        self.history.append(self.reward)
        pi = decrease_probability(self._curve, self.average, gamma)
        if self._rng.random() < pi:
            self.reward *= beta
        else:
            self.reward += alpha
        return pi

    def ratio(self) -> float:
        """``b'/b`` at the current average, reported for diagnostics only."""
        return 1.0 / self._curve.inverse_ratio(self.average)


def step(layers: Sequence[AimdLayer], config: AimdConfig, gamma: float) -> bool:
    """Advance every layer by one iteration; returns ``True`` on a capacity event."""
    total = sum(layer.reward for layer in layers)
    if total <= config.deposit:
        for layer in layers:
            layer.increase(config.alpha)
        return False
    for layer in layers:
        layer.on_capacity_event(config.alpha, config.beta, gamma)
    return True


@dataclass
class AimdResult:
    gamma: float
    steps: int
    events: int
    status: str
    rewards: np.ndarray
    averages: np.ndarray
    # thinned per-step trajectory
    trace_step: np.ndarray = field(repr=False)
    trace_rewards: np.ndarray = field(repr=False)
    trace_events: np.ndarray = field(repr=False)
    trace_averages: np.ndarray = field(repr=False)
    # one row per capacity event
    event_step: np.ndarray = field(repr=False)
    event_rewards: np.ndarray = field(repr=False)
    event_averages: np.ndarray = field(repr=False)
    event_ratios: np.ndarray = field(repr=False)
    sum_time_average: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def run(curves: Sequence[Curve], config: AimdConfig | None = None, seed=None) -> AimdResult:
    """Iterate :func:`step` until the averages settle or ``max_iter`` is reached.

    Each layer draws from its own child stream of ``seed`` so that back-off
    decisions are independent across layers.
    """
    config = config or AimdConfig()
    if not len(curves):
        raise ConfigError("need at least one curve", "curves")
    gamma = config.gamma if config.gamma is not None else auto_gamma(curves, config.deposit)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    layers = [AimdLayer(c, config.initial_reward, np.random.default_rng(s))
              for c, s in zip(curves, ss.spawn(len(curves)))]

    n_layers = len(layers)
    trace_step, trace_r, trace_k, trace_avg = [], [], [], []
    ev_step, ev_avg, ev_ratio = [], [], []
    sum_acc = 0.0
    status = "max_iter"
    every = config.record_every
    nan_avg = [float("nan")] * n_layers
    steps = 0

    for l in range(1, config.max_iter + 1):
        rewards_before = [layer.reward for layer in layers]
        sum_acc += sum(rewards_before)
        event = step(layers, config, gamma)
        steps = l
        if event:
            k = layers[0].events
            ev_step.append(l)
            ev_avg.append([layer.average for layer in layers])
            ev_ratio.append([layer.ratio() for layer in layers])
            if (config.stop_on_convergence and k >= max(config.min_events, config.window + 1)):
                now = np.asarray(ev_avg[-1])
                then = np.asarray(ev_avg[-1 - config.window])
                if np.all(np.abs(now - then) <= config.rtol * np.abs(now)):
                    status = "converged"
        if l % every == 0 or status == "converged":
            trace_step.append(l)
            trace_r.append(rewards_before)
            trace_k.append(layers[0].events)
            trace_avg.append([layer.average for layer in layers] if layers[0].events else nan_avg)
        if status == "converged":
            break

    if layers[0].events == 0:
        status = "deposit unreachable"
        logger.warning("no capacity event in %d steps; deposit %.4g unreachable", steps, config.deposit)

    return AimdResult(
        gamma=gamma,
        steps=steps,
        events=layers[0].events,
        status=status,
        rewards=np.array([layer.reward for layer in layers]),
        averages=np.array([layer.average for layer in layers]),
        trace_step=np.asarray(trace_step, dtype=int),
        trace_rewards=np.asarray(trace_r, dtype=float).reshape(-1, n_layers),
        trace_events=np.asarray(trace_k, dtype=int),
        trace_averages=np.asarray(trace_avg, dtype=float).reshape(-1, n_layers),
        event_step=np.asarray(ev_step, dtype=int),
        event_rewards=np.array([layer.history for layer in layers]).T.reshape(-1, n_layers),
        event_averages=np.asarray(ev_avg, dtype=float).reshape(-1, n_layers),
        event_ratios=np.asarray(ev_ratio, dtype=float).reshape(-1, n_layers),
        sum_time_average=sum_acc / max(steps, 1),
    )


class AimdAllocator(BaseEstimator):
    """Estimator front end for :func:`run`.

    ``fit(curves)`` runs the allocator; ``rewards_`` holds the final long-run
    averages and ``result_`` the full :class:`AimdResult`.
    """

    def __init__(self, deposit=20.0, alpha=0.01, beta=0.85, gamma=None, max_iter=1_000_000,
                 initial_reward=0.1, stop_on_convergence=True, random_state=None):
        self.deposit = deposit
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.max_iter = max_iter
        self.initial_reward = initial_reward
        self.stop_on_convergence = stop_on_convergence
        self.random_state = random_state

    def _config(self, deposit=None):
        return AimdConfig(deposit=self.deposit if deposit is None else deposit, alpha=self.alpha,
                          beta=self.beta, gamma=self.gamma, max_iter=self.max_iter,
                          initial_reward=self.initial_reward,
                          stop_on_convergence=self.stop_on_convergence, record_every=1000)

    def fit(self, curves, y=None):
        self.curves_ = list(curves)
        self.result_ = run(self.curves_, self._config(), self.random_state)
        self.rewards_ = self.result_.averages
        self.gamma_ = self.result_.gamma
        return self

    def transform(self, deposits):
        """Run the allocator afresh for each deposit; rows are long-run averages."""
        check_is_fitted(self, "curves_")
        out = []
        for d in np.asarray(deposits, dtype=float).reshape(-1):
            out.append(run(self.curves_, self._config(float(d)), self.random_state).averages)
        return np.vstack(out)
