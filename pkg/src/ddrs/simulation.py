"""End-to-end deposit-return simulation with a monthly deposit controller.

Cups arrive as a Poisson stream.  Each one carries a wallet loaded with the
deposit active at its birth and the reward split advertised at that moment.
A cup moves from layer ``i-1`` to ``i`` at the first transfer opportunity of
stage ``i`` that is at least one cadence after it reached layer ``i-1``; the
move succeeds with probability ``b_i(R_i)``, otherwise the cup is wasted at
that stage.  At the end of every period the recycling rate of the cups that
resolved during the period feeds a PI controller, and the new deposit is split
into rewards either by the exact consensus solver or by an AIMD run.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import aimd
from ._validation import check_random_state
from .behavior import TABLE1, BehaviorCurve, Curve
from .depositctl import ClosedLoopResult, PiConfig, PiController, StaticPlant, closed_loop
from .exceptions import ConfigError, SimulationIntegrityError
from .rewardopt import solve_consensus

logger = logging.getLogger(__name__)

PENDING, RECYCLED = -1, 0  # outcome codes; i > 0 means wasted at stage i


@dataclass
class CupTwin:
    id: int
    birth: float
    deposit: float
    rewards: tuple
    layer: int = 0
    wallet: float = field(default=None)
    outcome: str | None = None

    def __post_init__(self):
        if self.wallet is None:
            self.wallet = float(self.deposit)


def generate_cups(rate: float, horizon: float, rng=None, deposit: float = 0.0, rewards=()) -> list[CupTwin]:
    """Homogeneous Poisson arrivals on ``[0, horizon)`` days."""
    if rate < 0:
        raise ConfigError("must be >= 0", "cups_per_day")
    rng = check_random_state(rng)
    if rate == 0 or horizon <= 0:
        return []
    n = int(rng.poisson(rate * horizon))
    births = np.sort(rng.uniform(0.0, horizon, n))
    return [CupTwin(i, float(t), deposit, tuple(rewards)) for i, t in enumerate(births)]


def advance_stage(cup: CupTwin, curve: Curve, reward: float, rng=None, ledger=None) -> str:
    """One transfer attempt for ``cup`` into the next layer.

    Returns ``"advanced"`` or ``"wasted"``.  On success ``reward`` leaves the
    wallet and is credited to ``ledger[stage]`` when a ledger is given.
    """
    if cup.outcome is not None:
        raise SimulationIntegrityError(f"cup {cup.id} already resolved as {cup.outcome}")
    stage = cup.layer + 1
    if rng is None or not isinstance(rng, np.random.Generator):
        rng = check_random_state(rng)
    if rng.random() < curve(reward):
        if reward > cup.wallet + 1e-9:
            raise SimulationIntegrityError(
                f"cup {cup.id}: reward {reward} exceeds wallet {cup.wallet}")
        cup.wallet -= reward
        cup.layer = stage
        if ledger is not None:
            ledger[stage] = ledger.get(stage, 0.0) + reward
        return "advanced"
    cup.outcome = f"wasted-at-stage-{stage}"
    return "wasted"


def next_opportunity(ready_time, cadence: int):
    """First multiple of ``cadence`` not earlier than ``ready_time``."""
    return np.ceil(np.asarray(ready_time, dtype=float) / cadence - 1e-12).astype(np.int64) * cadence


@dataclass
class Advisory:
    stage: int
    direction: str
    rate: float


def check_behavior_bounds(rates: Sequence[float], bounds: Sequence[Sequence[float]]) -> list[Advisory]:
    """Flag every stage whose measured success rate leaves its ``(low, high)`` band."""
    if len(rates) != len(bounds):
        raise ConfigError(f"{len(rates)} rates but {len(bounds)} bands", "behavior_bounds")
    out = []
    for i, (r, (lo, hi)) in enumerate(zip(rates, bounds), start=1):
        if r is None or (isinstance(r, float) and math.isnan(r)):
            continue
        if r < lo:
            out.append(Advisory(i, "below", float(r)))
        elif r > hi:
            out.append(Advisory(i, "above", float(r)))
    return out


# "exact" skips the cup simulation and closes the loop on the static plant
MODES = ("fast", "aimd", "exact")


@dataclass
class DdrsConfig:
    curves: list = field(default_factory=lambda: [BehaviorCurve(c.p0, c.x90, c.name) for c in TABLE1])
    cups_per_day: float = 900.0
    cadences: list = field(default_factory=lambda: [1, 2, 5])
    pi: PiConfig = field(default_factory=PiConfig)
    aimd: aimd.AimdConfig = field(default_factory=lambda: aimd.AimdConfig(max_iter=400_000, record_every=1000))
    horizon_periods: int = 36
    mode: str = "fast"
    fixed_rewards: list | None = None
    behavior_bounds: list | None = None

    def __post_init__(self):
        if not self.curves:
            raise ConfigError("need at least one curve", "curves")
        if len(self.cadences) != len(self.curves):
            raise ConfigError(f"needs {len(self.curves)} entries, one per layer", "cadences")
        if any(int(c) != c or c < 1 for c in self.cadences):
            raise ConfigError("cadences must be integers >= 1", "cadences")
        if self.cups_per_day < 0:
            raise ConfigError("must be >= 0", "cups_per_day")
        if int(self.horizon_periods) < 1:
            raise ConfigError("must be >= 1", "horizon_periods")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", "mode")
        if self.fixed_rewards is not None:
            if len(self.fixed_rewards) != len(self.curves):
                raise ConfigError(f"needs {len(self.curves)} entries", "fixed_rewards")
            if any(r < 0 for r in self.fixed_rewards):
                raise ConfigError("rewards must be >= 0", "fixed_rewards")
        if self.behavior_bounds is not None:
            if len(self.behavior_bounds) != len(self.curves):
                raise ConfigError(f"needs {len(self.curves)} bands", "behavior_bounds")
            if any(not 0 <= lo <= hi <= 1 for lo, hi in self.behavior_bounds):
                raise ConfigError("bands must satisfy 0 <= low <= high <= 1", "behavior_bounds")


@dataclass
class PeriodReport:
    period: int
    deposit: float
    rewards: list
    created: int
    resolved: int
    recycled: int
    wasted: list
    in_flight: int
    rate: float
    stage_success: list
    advisories: list = field(default_factory=list)
    created_total: int = 0
    recycled_total: int = 0
    wasted_total: list = field(default_factory=list)

    @property
    def waste_fractions(self) -> list:
        return [w / self.resolved if self.resolved else float("nan") for w in self.wasted]


@dataclass
class DdrsResult:
    periods: list
    deposits_paid: float
    wallet_residue: float
    credits: list
    min_traverse_days: float
    # per-cup columns (birth, deposit, wallet, layer, outcome, rewards)
    cups: dict = field(default_factory=dict, repr=False)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.periods])

    @property
    def deposits(self) -> np.ndarray:
        return np.array([p.deposit for p in self.periods])

    def summary(self) -> dict:
        last = self.periods[-1]
        return {
            "periods": len(self.periods),
            "final_deposit": last.deposit,
            "final_rewards": last.rewards,
            "final_rate": last.rate,
            "cups_created": last.created_total,
            "cups_recycled": last.recycled_total,
            "deposits_paid": self.deposits_paid,
            "wallet_residue": self.wallet_residue,
            "actor_credits": self.credits,
            "min_traverse_days": self.min_traverse_days,
        }


class _CupStore:
    """Columnar digital twins, one row per cup, grown by doubling."""

    def __init__(self, n_layers, capacity=1024):
        self.n_layers = n_layers
        self.size = 0
        self.birth = np.zeros(capacity)
        self.deposit = np.zeros(capacity)
        self.wallet = np.zeros(capacity)
        self.layer = np.zeros(capacity, dtype=np.int8)
        self.outcome = np.full(capacity, PENDING, dtype=np.int8)
        self.rewards = np.zeros((capacity, n_layers))

    def _grow(self, need):
        cap = self.birth.size
        while cap < need:
            cap *= 2
        if cap == self.birth.size:
            return
        for name in ("birth", "deposit", "wallet", "layer", "outcome", "rewards"):
            old = getattr(self, name)
            new = np.full((cap,) + old.shape[1:], PENDING if name == "outcome" else 0, dtype=old.dtype)
            new[: self.size] = old[: self.size]
            setattr(self, name, new)

    def add(self, births, deposit, rewards):
        n = births.size
        self._grow(self.size + n)
        sl = slice(self.size, self.size + n)
        self.birth[sl] = births
        self.deposit[sl] = deposit
        self.wallet[sl] = deposit
        self.rewards[sl] = rewards
        idx = np.arange(self.size, self.size + n)
        self.size += n
        return idx

    def columns(self) -> dict:
        n = self.size
        return {name: getattr(self, name)[:n].copy()
                for name in ("birth", "deposit", "wallet", "layer", "outcome", "rewards")}


def _allocate(config: DdrsConfig, deposit: float, rng) -> np.ndarray:
    if config.fixed_rewards is not None:
        return np.asarray(config.fixed_rewards, dtype=float)
    if deposit <= 0:
        return np.zeros(len(config.curves))
    if config.mode == "fast":
        return solve_consensus(config.curves, deposit, check=False)
    cfg = aimd.AimdConfig(**{**asdict(config.aimd), "deposit": deposit, "gamma": config.aimd.gamma})
    res = aimd.run(config.curves, cfg, int(rng.integers(2**63 - 1)))
    return res.averages * (deposit / res.averages.sum()) if res.averages.sum() > deposit else res.averages


def run_exact(config: DdrsConfig | None = None) -> ClosedLoopResult:
    """Deposit loop closed on the exact static plant, one row per period."""
    config = config or DdrsConfig(mode="exact")
    return closed_loop(StaticPlant(config.curves), config.pi, int(config.horizon_periods))


def run_ddrs(config: DdrsConfig | None = None, seed=None) -> DdrsResult:
    """Simulate ``horizon_periods`` control periods and return per-period reports."""
    config = config or DdrsConfig()
    if config.mode == "exact":
        raise ConfigError("exact mode has no cup simulation; use run_exact", "mode")
    rng = check_random_state(seed)
    curves = config.curves
    L = len(curves)
    cad = [int(c) for c in config.cadences]
    pdays = int(config.pi.period_days)
    days = int(config.horizon_periods) * pdays

    if config.fixed_rewards is not None:
        ctl = None
        deposit = float(sum(config.fixed_rewards))
    else:
        ctl = PiController(config.pi)
        deposit = ctl.deposit
    rewards = _allocate(config, deposit, rng)
    if rewards.sum() > deposit + 1e-9:
        raise ConfigError(f"initial rewards {rewards.sum():.6g} exceed deposit {deposit:.6g}", "fixed_rewards")

    store = _CupStore(L)
    queue = [defaultdict(list) for _ in range(L)]  # stage -> opportunity day -> index arrays
    credits = np.zeros(L)
    paid_in = 0.0
    min_traverse = math.inf

    reports = []
    period_stats = _fresh_stats(L)
    totals = {"created": 0, "recycled": 0, "wasted": np.zeros(L, dtype=np.int64)}

    for day in range(days):
        # transfer opportunities due today, last stage first
        for s in range(L - 1, -1, -1):
            batch = queue[s].pop(day, None)
            if not batch:
                continue
            idx = np.concatenate(batch)
            reward_s = store.rewards[idx, s]
            p = curves[s](reward_s)
            ok = rng.random(idx.size) < p
            wallet = store.wallet
            adv = idx[ok]
            if np.any(reward_s[ok] > wallet[adv] + 1e-9):
                raise SimulationIntegrityError("reward exceeds wallet balance")
            wallet[adv] -= reward_s[ok]
            credits[s] += reward_s[ok].sum()
            store.layer[adv] = s + 1
            lost = idx[~ok]
            store.outcome[lost] = s + 1
            period_stats["attempts"][s] += idx.size
            period_stats["success"][s] += adv.size
            period_stats["wasted"][s] += lost.size
            totals["wasted"][s] += lost.size
            if s + 1 < L:
                nxt = int(next_opportunity(day + cad[s + 1], cad[s + 1]))
                queue[s + 1][nxt].append(adv)
            else:
                store.outcome[adv] = RECYCLED
                period_stats["recycled"] += adv.size
                totals["recycled"] += adv.size
                if adv.size:
                    min_traverse = min(min_traverse, float(day - store.birth[adv].max()))

        # births during [day, day + 1)
        n = int(rng.poisson(config.cups_per_day))
        if n:
            births = day + np.sort(rng.random(n))
            idx = store.add(births, deposit, rewards)
            paid_in += deposit * n
            period_stats["created"] += n
            totals["created"] += n
            due = next_opportunity(births + cad[0], cad[0])
            for d in np.unique(due):
                queue[0][int(d)].append(idx[due == d])

        if (day + 1) % pdays == 0:
            period = (day + 1) // pdays - 1
            rep = _close_period(period, deposit, rewards, period_stats, totals, store, config)
            reports.append(rep)
            if ctl is not None:
                if rep.resolved:
                    deposit = ctl.step(rep.rate)
                rewards = _allocate(config, deposit, rng)
                if rewards.sum() > deposit + 1e-9:
                    raise SimulationIntegrityError("allocated rewards exceed the deposit")
            period_stats = _fresh_stats(L)

    wallet_residue = float(store.wallet[: store.size].sum())
    if abs(paid_in - wallet_residue - credits.sum()) > 1e-6 * max(1.0, paid_in):
        raise SimulationIntegrityError("money is not conserved")
    return DdrsResult(reports, paid_in, wallet_residue, credits.tolist(), min_traverse, store.columns())


def _fresh_stats(L):
    return {"created": 0, "recycled": 0, "wasted": np.zeros(L, dtype=np.int64),
            "attempts": np.zeros(L, dtype=np.int64), "success": np.zeros(L, dtype=np.int64)}


def _close_period(period, deposit, rewards, stats, totals, store, config):
    resolved = int(stats["recycled"] + stats["wasted"].sum())
    rate = stats["recycled"] / resolved if resolved else float("nan")
    with np.errstate(invalid="ignore", divide="ignore"):
        success = np.where(stats["attempts"] > 0, stats["success"] / np.maximum(stats["attempts"], 1), np.nan)
    in_flight = int(totals["created"] - totals["recycled"] - totals["wasted"].sum())
    advisories = []
    if config.behavior_bounds is not None:
        advisories = check_behavior_bounds(success.tolist(), config.behavior_bounds)
        for a in advisories:
            logger.info("period %d: stage %d success %.3f %s band", period, a.stage, a.rate, a.direction)
    return PeriodReport(
        period=period, deposit=float(deposit), rewards=[float(r) for r in rewards],
        created=int(stats["created"]), resolved=resolved, recycled=int(stats["recycled"]),
        wasted=stats["wasted"].tolist(), in_flight=in_flight, rate=float(rate),
        stage_success=success.tolist(), advisories=advisories,
        created_total=int(totals["created"]), recycled_total=int(totals["recycled"]),
        wasted_total=totals["wasted"].tolist(),
    )
