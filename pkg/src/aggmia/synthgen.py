"""Synthetic user panel generation.

Two population kinds with opposite mobility texture:

  commuter  regular weekday itinerary (morning arrival at a work ROI, evening
            return home, thin weekend leisure), low active-slot fraction
  cab       lazy random walk over a ROI grid driven by client demand,
            high active-slot fraction, little day-to-day structure

Slots are hourly; day boundaries follow the panel grid (24 slots per day,
days 0..4 weekdays). Each user's cell stream derives from a labeled hash of
(seed, user id), so generating users in parallel or serially, or regenerating
a single user, yields identical cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LocationMatrix, RoiSet, TimeGrid, UserPanel
from .seeds import rng_for

__all__ = [
    "GeneratorError",
    "KIND_DEFAULTS",
    "MobilityProfile",
    "GeneratorConfig",
    "commuter_hour_weight",
    "cab_hour_weight",
    "draw_profile",
    "generate_panel",
    "tier_users",
    "sample_targets",
]

KIND_DEFAULTS = {
    "commuter": {"regularity": 0.9, "active_slot_fraction": 0.17, "activity_spread": 0.45},
    "cab": {"regularity": 0.2, "active_slot_fraction": 0.67, "activity_spread": 0.25},
}

_SLOTS_PER_DAY = 24
_WEEKDAYS = 5

# Relative per-hour activity weights; a per-user scale factor stretches them
# until the expected number of active slots matches the user's target.
_W_COMMUTE_PEAK = 1.0
_W_WORK_FILL = 0.55
_W_EVENING_SHOULDER = 0.2
_W_MORNING_SHOULDER = 0.15
_W_WEEKEND_DAY = 0.28
_W_NIGHT = 0.02
_W_CAB_DAY = 1.0
_W_CAB_NIGHT = 0.3


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class MobilityProfile:
    """One user's itinerary parameters."""

    home_rois: tuple
    work_rois: tuple
    reports_per_day: float
    regularity: float
    active_slot_fraction: float
    leisure_roi: int = 0
    morning_hour: int = 8
    evening_hour: int = 17

    def __post_init__(self):
        if not self.home_rois or not self.work_rois:
            raise GeneratorError("profile ROI sets must be non-empty")
        if 0 in self.home_rois or 0 in self.work_rois:
            raise GeneratorError("profile ROI sets may not contain the null ROI")
        if not (0.0 <= self.regularity <= 1.0):
            raise GeneratorError("regularity must be in [0, 1]")
        if self.reports_per_day < 0:
            raise GeneratorError("reports_per_day must be non-negative")
        if not (0.0 < self.active_slot_fraction <= 1.0):
            raise GeneratorError("active_slot_fraction must be in (0, 1]")


@dataclass(frozen=True)
class GeneratorConfig:
    user_count: int
    roi_count: int
    slot_count: int
    kind: str
    seed: int
    regularity: float = None
    active_slot_fraction: float = None
    activity_spread: float = None
    work_sites: int = None
    telework_rate: float = None

    def __post_init__(self):
        if self.kind not in KIND_DEFAULTS:
            raise GeneratorError(f"unknown generator kind: {self.kind}")
        if self.user_count < 1 or self.slot_count < 1:
            raise GeneratorError("user_count and slot_count must be positive")
        if self.roi_count < 3:
            raise GeneratorError("need at least two real ROIs plus the null ROI")
        defaults = KIND_DEFAULTS[self.kind]
        for name in ("regularity", "active_slot_fraction", "activity_spread"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, defaults[name])
        if not (0.0 <= self.regularity <= 1.0):
            raise GeneratorError("regularity must be in [0, 1]")
        if not (0.0 < self.active_slot_fraction <= 1.0):
            raise GeneratorError("active_slot_fraction must be in (0, 1]")
        if self.activity_spread < 0:
            raise GeneratorError("activity_spread must be non-negative")
        if self.work_sites is not None and self.work_sites < 1:
            raise GeneratorError("work_sites must be at least 1")
        if self.telework_rate is None:
            object.__setattr__(self, "telework_rate", 0.0)
        if not (0.0 <= self.telework_rate < 1.0):
            raise GeneratorError("telework_rate must be in [0, 1)")


def commuter_hour_weight(hour: int, is_weekday: bool, morning: int, evening: int) -> float:
    """Relative activity weight of one hour in the commuter template."""
    if is_weekday:
        if hour == morning or hour == evening:
            return _W_COMMUTE_PEAK
        if morning < hour < evening:
            return _W_WORK_FILL
        if evening < hour <= min(23, evening + 2):
            return _W_EVENING_SHOULDER
        if morning - 2 <= hour < morning:
            return _W_MORNING_SHOULDER
        return _W_NIGHT
    return _W_WEEKEND_DAY if 9 <= hour < 22 else _W_NIGHT


def cab_hour_weight(hour: int) -> float:
    return _W_CAB_DAY if 7 <= hour < 23 else _W_CAB_NIGHT


def _solve_scale(weights: np.ndarray, target_slots: float) -> float:
    """Scale s such that sum(min(1, s*w)) = target_slots, by bisection."""
    if target_slots >= weights.size:
        return math.inf
    lo, hi = 0.0, 1.0
    while np.minimum(1.0, hi * weights).sum() < target_slots:
        hi *= 2.0
        if hi > 1e9:
            return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.minimum(1.0, mid * weights).sum() < target_slots:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _activity_factor(rng, spread: float) -> float:
    # lognormal with unit mean, so the population hits the configured
    # active-slot fraction while individual users spread around it
    return math.exp(rng.normal(0.0, spread) - 0.5 * spread * spread)


def draw_profile(rng, cfg: GeneratorConfig) -> MobilityProfile:
    """Draw one user's itinerary from the configured population."""
    real = np.arange(1, cfg.roi_count)
    perm = rng.permutation(real)
    n_home = 2 if (real.size >= 4 and rng.random() < 0.3) else 1
    if cfg.work_sites is not None:
        # Fixed number of workplaces, visited in weekday rotation; a single
        # observed day then reveals only one site of the weekly signature.
        n_work = max(1, min(cfg.work_sites, real.size - n_home - 1))
    else:
        n_work = 2 if (real.size >= n_home + 3 and rng.random() < 0.25) else 1
    home = tuple(int(r) for r in perm[:n_home])
    work = tuple(int(r) for r in perm[n_home : n_home + n_work])
    rest = perm[n_home + n_work :]
    leisure = int(rest[0]) if rest.size else home[0]
    morning = int(rng.integers(7, 10))
    evening = int(rng.integers(16, 20))
    factor = _activity_factor(rng, cfg.activity_spread)
    lo, hi = (0.02, 0.92) if cfg.kind == "commuter" else (0.05, 0.95)
    fraction = float(np.clip(cfg.active_slot_fraction * factor, lo, hi))
    return MobilityProfile(
        home_rois=home,
        work_rois=work,
        reports_per_day=fraction * _SLOTS_PER_DAY,
        regularity=cfg.regularity,
        active_slot_fraction=fraction,
        leisure_roi=leisure,
        morning_hour=morning,
        evening_hour=evening,
    )


def _commuter_cells(rng, profile: MobilityProfile, cfg: GeneratorConfig):
    slots = np.arange(cfg.slot_count)
    hours = slots % _SLOTS_PER_DAY
    days = (slots // _SLOTS_PER_DAY) % 7
    weekday = days < _WEEKDAYS
    weights = np.array(
        [
            commuter_hour_weight(
                int(h), bool(wd), profile.morning_hour, profile.evening_hour
            )
            for h, wd in zip(hours, weekday)
        ]
    )
    scale = _solve_scale(weights, profile.active_slot_fraction * cfg.slot_count)
    active = rng.random(cfg.slot_count) < np.minimum(1.0, scale * weights)

    work = np.asarray(profile.work_rois)
    work_of_day = work[days % work.size]
    home = profile.home_rois[0]
    if cfg.telework_rate:
        # Whole days worked from home: day-level structure that a single
        # observed day cannot average away, unlike per-slot wandering.
        day_idx = slots // _SLOTS_PER_DAY
        stay_home = rng.random(int(day_idx[-1]) + 1) < cfg.telework_rate
        work_of_day = np.where(stay_home[day_idx], home, work_of_day)
    weekday_template = np.where(
        hours < profile.morning_hour,
        home,
        np.where(hours < profile.evening_hour, work_of_day, home),
    )
    weekend_template = np.where(
        (hours >= 10) & (hours < 18), profile.leisure_roi, home
    )
    template = np.where(weekday, weekday_template, weekend_template)

    follow = rng.random(cfg.slot_count) < profile.regularity
    wander = rng.integers(1, cfg.roi_count, size=cfg.slot_count)
    rois = np.where(follow, template, wander)
    # occasional paired departure/arrival report inside one slot
    extra = rng.random(cfg.slot_count) < 0.5 * (1.0 - profile.regularity)
    extra_roi = rng.integers(1, cfg.roi_count, size=cfg.slot_count)

    cells = [(int(rois[s]), int(s)) for s in np.nonzero(active)[0]]
    for s in np.nonzero(active & extra)[0]:
        if extra_roi[s] != rois[s]:
            cells.append((int(extra_roi[s]), int(s)))
    return cells


def _grid_width(real_count: int) -> int:
    return max(1, math.ceil(math.sqrt(real_count)))


def _neighbors(index: int, real_count: int, width: int) -> list:
    out = []
    if index % width > 0:
        out.append(index - 1)
    if index % width < width - 1 and index + 1 < real_count:
        out.append(index + 1)
    if index - width >= 0:
        out.append(index - width)
    if index + width < real_count:
        out.append(index + width)
    return out


def _cab_cells(rng, profile: MobilityProfile, cfg: GeneratorConfig):
    slots = np.arange(cfg.slot_count)
    hours = slots % _SLOTS_PER_DAY
    weights = np.array([cab_hour_weight(int(h)) for h in hours])
    scale = _solve_scale(weights, profile.active_slot_fraction * cfg.slot_count)
    active = rng.random(cfg.slot_count) < np.minimum(1.0, scale * weights)

    real_count = cfg.roi_count - 1
    width = _grid_width(real_count)
    moves = rng.random(cfg.slot_count)
    jumps = rng.integers(0, real_count, size=cfg.slot_count)
    steps = rng.integers(0, 4, size=cfg.slot_count)
    extras = rng.random(cfg.slot_count) < 0.5 * (1.0 - profile.regularity)

    index = profile.home_rois[0] - 1
    reg = profile.regularity
    cells = []
    for s in np.nonzero(active)[0]:
        prev = index
        if moves[s] < reg * 0.6:
            pass  # idle at the current rank
        elif moves[s] < reg:
            near = _neighbors(index, real_count, width)
            if near:
                index = near[steps[s] % len(near)]
        else:
            index = int(jumps[s])
        cells.append((index + 1, int(s)))
        if extras[s] and prev != index:
            cells.append((prev + 1, int(s)))
    return cells


def generate_panel(cfg: GeneratorConfig) -> UserPanel:
    """Generate a panel of cfg.user_count users, deterministic given cfg.seed."""
    synth = _commuter_cells if cfg.kind == "commuter" else _cab_cells
    matrices = {}
    for uid in range(cfg.user_count):
        rng = rng_for(cfg.seed, "user", uid)
        profile = draw_profile(rng, cfg)
        cells = synth(rng, profile, cfg)
        matrices[uid] = LocationMatrix.build(
            uid, cells, cfg.roi_count, cfg.slot_count
        )
    return UserPanel(
        users=tuple(range(cfg.user_count)),
        matrices=matrices,
        grid=TimeGrid(cfg.slot_count),
        rois=RoiSet(cfg.roi_count),
    )


def tier_users(panel: UserPanel):
    """Split users into three mobility tiers (most to least active) by real
    cell count; ties break by user id; the remainder joins the last tier."""
    if panel.user_count < 3:
        raise GeneratorError("need at least 3 users to tier")
    order = sorted(
        panel.users, key=lambda uid: (-panel.matrices[uid].real_cell_count, uid)
    )
    base = len(order) // 3
    return order[:base], order[base : 2 * base], order[2 * base :]


def sample_targets(tiers, per_tier: int, seed) -> list:
    """Uniform without-replacement draw of per_tier users from every tier."""
    if per_tier < 0:
        raise GeneratorError("per_tier must be non-negative")
    out = []
    for i, tier in enumerate(tiers):
        if per_tier > len(tier):
            raise GeneratorError(
                f"per_tier {per_tier} exceeds tier {i} size {len(tier)}"
            )
        rng = rng_for(seed, "targets", i)
        picks = rng.choice(len(tier), size=per_tier, replace=False)
        out.extend(tier[j] for j in picks.tolist())
    return out
