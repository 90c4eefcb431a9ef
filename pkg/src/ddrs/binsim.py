"""Decentralised bin selection by Poisson availability signalling.

Each bin broadcasts availability signals at a rate that grows with its free
space, ``lambda_j = r_j ** a``.  An arriving user takes the first signal, so
bin ``j`` wins with probability ``r_j**a / sum_k r_k**a``.  Large ``a`` makes
the rule pick the emptiest bin almost surely.  The module also runs the
week-long three-bin experiment comparing this rule with unsupervised choice
and a centralised emptiest-bin oracle.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf
from sklearn.base import BaseEstimator

from ._validation import check_random_state, check_residuals
from .exceptions import AllBinsFull, ConfigError, DomainError

MINUTES_PER_DAY = 24 * 60
PRESET_EXPONENTS = (1.0, 8.0)


def rate(residual, a: float):
    """Signalling rate ``residual ** a``; zero for a full bin."""
    if not a > 0:
        raise ConfigError(f"exponent must be > 0, got {a!r}", "exponent_a")
    r = np.asarray(residual, dtype=float)
    if np.any(r < 0):
        raise DomainError("residual must be >= 0")
    out = np.where(r > 0, np.power(r, a), 0.0)
    return float(out) if np.ndim(residual) == 0 else out


def sample_wait(lam: float, rng=None, u: float | None = None) -> float:
    """Exponential waiting time ``-ln(u) / lam`` with ``u ~ Uniform(0, 1]``."""
    if not lam > 0:
        raise DomainError(f"rate must be > 0 to signal, got {lam!r}")
    if u is None:
        u = 1.0 - check_random_state(rng).random()
    return -math.log(u) / lam


def assignment_probabilities(residuals, a: float) -> np.ndarray:
    """Winning probabilities of the signalling race, row-wise for 2-D input.

    Residuals are divided by their maximum before exponentiation, which leaves
    the ratios unchanged and avoids overflow for large ``a``.
    """
    if not a > 0:
        raise ConfigError(f"exponent must be > 0, got {a!r}", "exponent_a")
    r = check_residuals(residuals)
    top = r.max(axis=-1, keepdims=True)
    if np.any(top <= 0):
        raise AllBinsFull("all bins are full")
    w = np.where(r > 0, np.power(r / top, a), 0.0)
    return w / w.sum(axis=-1, keepdims=True)


@dataclass
class BinState:
    id: int
    capacity: int = 200
    level: int = 0
    distance: float = 0.0  # normalised to [0, 1]

    def __post_init__(self):
        if self.capacity <= 0:
            raise ConfigError("capacity must be > 0", "bins.capacity")
        if not 0 <= self.level <= self.capacity:
            raise DomainError(f"level {self.level} outside [0, {self.capacity}]")
        if not 0 <= self.distance <= 1:
            raise ConfigError("distance must be normalised to [0, 1]", "bins.distances")

    @property
    def residual(self) -> int:
        return self.capacity - self.level


def effective_residuals(bins: Sequence[BinState], distance_weight: float = 1.0) -> np.ndarray:
    """Blend normalised free space with proximity; a full bin always scores zero."""
    w = float(distance_weight)
    free = np.array([b.residual / b.capacity for b in bins])
    near = np.array([1.0 - b.distance for b in bins])
    return np.where(free > 0, w * free + (1.0 - w) * near, 0.0)


def _as_residuals(bins, distance_weight=1.0):
    if len(bins) and isinstance(bins[0], BinState):
        return effective_residuals(bins, distance_weight)
    return check_residuals(bins)


def assign_race(bins, a: float, mode: str = "analytic", rng=None, base_rate: float = 1.0,
                distance_weight: float = 1.0, return_wait: bool = False):
    """Index of the bin that wins the signalling race.

    ``mode="analytic"`` samples the categorical law directly;
    ``mode="time-driven"`` draws one exponential wait per signalling bin and
    returns the earliest.  Rates use residuals as given (``BinState`` inputs
    are normalised by capacity), times ``base_rate``.
    """
    rng = check_random_state(rng)
    r = _as_residuals(bins, distance_weight)
    if r.ndim != 1:
        raise DomainError("assign_race takes one residual vector")
    if mode == "analytic":
        q = assignment_probabilities(r, a)
        j = int(rng.choice(r.size, p=q))
        return (j, float("nan")) if return_wait else j
    if mode != "time-driven":
        raise ConfigError(f"unknown race mode {mode!r}", "race_mode")
    lam = base_rate * rate(r, a)
    live = np.flatnonzero(lam > 0)
    if live.size == 0:
        raise AllBinsFull("all bins are full")
    waits = rng.exponential(1.0 / lam[live])
    k = int(np.argmin(waits))
    j = int(live[k])
    return (j, float(waits[k])) if return_wait else j


def sample_race(residuals, a: float, size: int | None = None, mode: str = "analytic", rng=None,
                base_rate: float = 1.0) -> np.ndarray:
    """Many race winners at once.

    A 1-D residual vector is raced ``size`` times; a 2-D array races each row
    once.  Same laws as :func:`assign_race`, vectorised.
    """
    rng = check_random_state(rng)
    r = check_residuals(residuals)
    if r.ndim == 1:
        r = np.broadcast_to(r, (1 if size is None else int(size), r.size))
    elif size is not None and size != r.shape[0]:
        raise DomainError("size must match the number of residual rows")
    if mode == "analytic":
        q = assignment_probabilities(r, a)
        u = rng.random((r.shape[0], 1))
        idx = (np.cumsum(q, axis=1) < u).sum(axis=1)
        # guard against round-off in the last cumulative sum
        return np.minimum(idx, np.argmax(np.where(q > 0, np.arange(q.shape[1]), -1), axis=1))
    if mode != "time-driven":
        raise ConfigError(f"unknown race mode {mode!r}", "race_mode")
    top = r.max(axis=1, keepdims=True)
    if np.any(top <= 0):
        raise AllBinsFull("all bins are full")
    lam = base_rate * np.where(r > 0, np.power(r / top, a), 0.0)
    with np.errstate(divide="ignore"):
        waits = rng.exponential(size=r.shape) / lam
    return np.argmin(waits, axis=1)


def assign_centralised(bins, rng=None) -> int:
    """Emptiest bin; ties are split uniformly at random."""
    rng = check_random_state(rng)
    r = _as_residuals(bins)
    top = r.max()
    if top <= 0:
        raise AllBinsFull("all bins are full")
    ties = np.flatnonzero(r == top)
    return int(ties[0] if ties.size == 1 else rng.choice(ties))


class RaceAssigner(BaseEstimator):
    """Signalling-race assignment as an estimator.

    Rows of ``X`` are residual-space vectors; ``predict_proba`` gives the
    winning probabilities and ``predict`` samples one winner per row.
    """

    def __init__(self, exponent=1.0, mode="analytic", random_state=None):
        self.exponent = exponent
        self.mode = mode
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if not self.exponent > 0:
            raise ConfigError(f"exponent must be > 0, got {self.exponent!r}", "exponent")
        if self.mode not in ("analytic", "time-driven"):
            raise ConfigError(f"unknown race mode {self.mode!r}", "mode")
        self.rng_ = check_random_state(self.random_state)
        return self

    def predict_proba(self, X):
        return np.atleast_2d(assignment_probabilities(X, self.exponent))

    def predict(self, X):
        if not hasattr(self, "rng_"):
            self.fit()
        return sample_race(np.atleast_2d(check_residuals(X)), self.exponent, mode=self.mode, rng=self.rng_)


class CentralisedAssigner(BaseEstimator):
    """Emptiest-bin oracle with the same interface as :class:`RaceAssigner`."""

    def __init__(self, random_state=None):
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.rng_ = check_random_state(self.random_state)
        return self

    def predict_proba(self, X):
        R = np.atleast_2d(check_residuals(X))
        top = R.max(axis=1, keepdims=True)
        if np.any(top <= 0):
            raise AllBinsFull("all bins are full")
        hit = (R == top).astype(float)
        return hit / hit.sum(axis=1, keepdims=True)

    def predict(self, X):
        if not hasattr(self, "rng_"):
            self.fit()
        R = np.atleast_2d(check_residuals(X))
        return np.array([assign_centralised(row, self.rng_) for row in R])


# --- week simulation -------------------------------------------------------


@dataclass
class ArrivalProcess:
    """Daily arrival intensity: flat background plus a Gaussian bump.

    ``peak_fraction`` of the daily mean falls in the bump centred at
    ``peak_hour`` with standard deviation ``peak_width`` hours.
    """

    daily_mean: float = 270.0
    peak_hour: float = 8.0
    peak_width: float = 1.5
    peak_fraction: float = 0.5

    def __post_init__(self):
        if not self.daily_mean >= 0:
            raise ConfigError("must be >= 0", "daily_mean")
        if not 0 <= self.peak_hour < 24:
            raise ConfigError("must lie in [0, 24)", "peak_hour")
        if not self.peak_width > 0:
            raise ConfigError("must be > 0", "peak_width")
        if not 0 <= self.peak_fraction <= 1:
            raise ConfigError("must lie in [0, 1]", "peak_fraction")

    def _bump_cdf(self, hours):
        z = (np.asarray(hours, dtype=float) - self.peak_hour) / (self.peak_width * math.sqrt(2.0))
        return 0.5 * (1.0 + erf(z))

    @property
    def _bump_mass(self):
        return float(self._bump_cdf(24.0) - self._bump_cdf(0.0))

    def intensity(self, hour):
        """Arrivals per hour at time of day ``hour`` (taken modulo 24)."""
        h = np.mod(np.asarray(hour, dtype=float), 24.0)
        base = (1.0 - self.peak_fraction) * self.daily_mean / 24.0
        height = self.peak_fraction * self.daily_mean / (
            self._bump_mass * self.peak_width * math.sqrt(2.0 * math.pi))
        out = base + height * np.exp(-0.5 * ((h - self.peak_hour) / self.peak_width) ** 2)
        return float(out) if np.ndim(hour) == 0 else out

    def minute_means(self) -> np.ndarray:
        """Expected arrivals in each minute of one day (exact integrals)."""
        edges = np.arange(MINUTES_PER_DAY + 1) / 60.0
        base = (1.0 - self.peak_fraction) * self.daily_mean / MINUTES_PER_DAY
        bump = np.diff(self._bump_cdf(edges)) / self._bump_mass * self.peak_fraction * self.daily_mean
        return base + bump

    def sample(self, days: int, rng=None) -> np.ndarray:
        rng = check_random_state(rng)
        return rng.poisson(np.tile(self.minute_means(), days))


@dataclass
class BinsConfig:
    count: int = 3
    capacity: int = 200
    distance_weight: float = 1.0
    distances: list | None = None
    initial_levels: list | None = None

    def __post_init__(self):
        if int(self.count) < 1:
            raise ConfigError("must be >= 1", "count")
        if int(self.capacity) < 1:
            raise ConfigError("must be >= 1", "capacity")
        if not 0 <= self.distance_weight <= 1:
            raise ConfigError("must lie in [0, 1]", "distance_weight")
        for key in ("distances", "initial_levels"):
            v = getattr(self, key)
            if v is not None and len(v) != self.count:
                raise ConfigError(f"needs {self.count} entries", key)
        if self.distances is not None and not all(0 <= d <= 1 for d in self.distances):
            raise ConfigError("entries must lie in [0, 1]", "distances")
        if self.initial_levels is not None and not all(0 <= x <= self.capacity for x in self.initial_levels):
            raise ConfigError("entries must lie in [0, capacity]", "initial_levels")


@dataclass
class PreferenceModel:
    """Bin choice weights of unsupervised users, switching on weekends."""

    weekday: list = field(default_factory=lambda: [0.85, 0.1, 0.05])
    weekend: list = field(default_factory=lambda: [0.1, 0.1, 0.8])
    weekend_days: list = field(default_factory=lambda: [5, 6])

    def __post_init__(self):
        for key in ("weekday", "weekend"):
            w = np.asarray(getattr(self, key), dtype=float)
            if np.any(w < 0) or not w.sum() > 0:
                raise ConfigError("weights must be >= 0 with positive sum", key)

    def weights(self, day: int) -> np.ndarray:
        w = np.asarray(self.weekend if day % 7 in self.weekend_days else self.weekday, dtype=float)
        return w / w.sum()


_DECENTRAL = re.compile(r"^decentralised(?:\((?:a\s*=\s*)?([0-9.eE+-]+)\))?$")


def parse_strategy(name: str, default_a: float = 8.0):
    """``"decentralised(8)"`` -> ``("decentralised", 8.0)``; other names get ``None``."""
    s = str(name).strip()
    if s in ("unsupervised", "centralised"):
        return s, None
    m = _DECENTRAL.match(s)
    if m:
        a = float(m.group(1)) if m.group(1) else float(default_a)
        if not a > 0:
            raise ConfigError(f"exponent must be > 0 in {name!r}", "strategy")
        return "decentralised", a
    raise ConfigError(f"unknown strategy {name!r}", "strategy")


def strategy_label(kind, a):
    return kind if a is None else f"{kind}(a={a:g})"


@dataclass
class WeekConfig:
    bins: BinsConfig = field(default_factory=BinsConfig)
    arrivals: ArrivalProcess = field(default_factory=ArrivalProcess)
    preferences: PreferenceModel = field(default_factory=PreferenceModel)
    strategy: object = "decentralised"
    exponent_a: float = 8.0
    race_mode: str = "analytic"
    base_rate: float = 1.0
    empty_threshold_fraction: float = 0.75
    horizon_days: int = 7

    def __post_init__(self):
        if not self.exponent_a > 0:
            raise ConfigError("must be > 0", "exponent_a")
        if self.race_mode not in ("analytic", "time-driven"):
            raise ConfigError(f"unknown race mode {self.race_mode!r}", "race_mode")
        if not self.base_rate > 0:
            raise ConfigError("must be > 0", "base_rate")
        if not 0 < self.empty_threshold_fraction <= 1:
            raise ConfigError("must lie in (0, 1]", "empty_threshold_fraction")
        if int(self.horizon_days) < 1:
            raise ConfigError("must be >= 1", "horizon_days")
        for name in self.strategies():
            parse_strategy(name, self.exponent_a)
        for key in ("weekday", "weekend"):
            if len(getattr(self.preferences, key)) != self.bins.count:
                raise ConfigError(f"needs {self.bins.count} weights", f"preferences.{key}")

    def strategies(self) -> list:
        s = self.strategy
        return [s] if isinstance(s, str) else list(s)


@dataclass
class WeekReport:
    strategy: str
    levels: np.ndarray = field(repr=False)          # (minutes, bins), end of each minute
    cumulative_overflow: np.ndarray = field(repr=False)
    arrivals: int = 0
    recycled: int = 0
    overflowed: int = 0
    emptyings: int = 0
    waits: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    @property
    def overflow_fraction(self) -> float:
        return self.overflowed / self.arrivals if self.arrivals else 0.0

    def summary(self) -> dict:
        out = {
            "strategy": self.strategy,
            "arrivals": self.arrivals,
            "recycled": self.recycled,
            "overflowed": self.overflowed,
            "overflow_fraction": self.overflow_fraction,
            "nightly_emptyings": self.emptyings,
            "max_level": int(self.levels.max()) if self.levels.size else 0,
            "mean_level_spread": float(np.mean(self.levels.max(axis=1) - self.levels.min(axis=1))),
        }
        if self.waits.size:
            out["signal_wait_mean_s"] = float(self.waits.mean())
            out["signal_wait_p95_s"] = float(np.quantile(self.waits, 0.95))
        return out


def simulate_week(config: WeekConfig | None = None, strategy: str | None = None, rng=None) -> WeekReport:
    """Minute-by-minute bin levels under one allocation strategy.

    Arrival counts are drawn first from ``rng``, so runs with equal seeds
    share the same arrival stream whatever the strategy.  At each midnight a
    bin whose level exceeds the threshold is emptied.
    """
    config = config or WeekConfig()
    rng = check_random_state(rng)
    kind, a = parse_strategy(strategy if strategy is not None else config.strategies()[0], config.exponent_a)

    days = int(config.horizon_days)
    counts = config.arrivals.sample(days, rng)
    bc = config.bins
    cap = int(bc.capacity)
    threshold = config.empty_threshold_fraction * cap
    bins = [BinState(j, cap, int(bc.initial_levels[j]) if bc.initial_levels else 0,
                     float(bc.distances[j]) if bc.distances else 0.0) for j in range(bc.count)]
    level = np.array([b.level for b in bins], dtype=np.int64)
    near = 1.0 - np.array([b.distance for b in bins])
    w = bc.distance_weight

    n_min = days * MINUTES_PER_DAY
    levels = np.empty((n_min, bc.count), dtype=np.int64)
    cum = np.empty(n_min, dtype=np.int64)
    overflow = emptyings = 0
    waits = []
    prefs = None

    for t in range(n_min):
        if t % MINUTES_PER_DAY == 0:
            day = t // MINUTES_PER_DAY
            if day > 0:
                full = level > threshold
                emptyings += int(full.sum())
                level[full] = 0
            prefs = config.preferences.weights(day)
        for _ in range(int(counts[t])):
            free = cap - level
            if kind == "unsupervised":
                j = int(rng.choice(bc.count, p=prefs))
                if free[j] <= 0:
                    overflow += 1
                    continue
            else:
                if not np.any(free > 0):
                    overflow += 1
                    continue
                if kind == "centralised":
                    j = assign_centralised(free, rng)
                else:
                    r = np.where(free > 0, w * free / cap + (1.0 - w) * near, 0.0)
                    j, tw = assign_race(r, a, config.race_mode, rng, config.base_rate, return_wait=True)
                    if config.race_mode == "time-driven":
                        waits.append(tw)
            level[j] += 1
        levels[t] = level
        cum[t] = overflow

    total = int(counts.sum())
    return WeekReport(strategy_label(kind, a), levels, cum, total, total - overflow, overflow,
                      emptyings, np.asarray(waits))


def rms_distance(a: WeekReport, b: WeekReport) -> float:
    """Root-mean-square gap between two level trajectories."""
    return float(np.sqrt(np.mean((a.levels.astype(float) - b.levels) ** 2)))
