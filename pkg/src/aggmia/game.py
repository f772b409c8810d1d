"""Membership distinguishability game on aggregate location series.

The challenger picks a hidden bit b. With b=0 the challenge aggregate is
computed over a random cohort plus the target user; with b=1 the target
is swapped for a uniformly chosen replacement. The adversary sees only
the aggregate and must guess b. Throughout the package label 1 ("in")
marks aggregates that contain the target, and b=0 corresponds to "in".

Dataset builders cover four kinds of adversary knowledge:

  SubsetLocationsPrior   raw traces of an alpha-fraction of users that
                         includes the target; training groups are drawn
                         from that subset, test groups from its complement
  SameGroupsPrior        labeled past aggregates of the very groups that
                         are released later (train on past weeks, test on
                         the inference window)
  DifferentGroupsPrior   labeled past aggregates of groups disjoint from
                         the released ones
  PerfectKnowledgePrior  raw inference-window aggregates of the released
                         groups themselves; the worst case used when
                         measuring perturbation defenses

All sampling is driven by labeled sub-seeds of GameConfig.seed, so every
target's experiment is reproducible in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .classifiers import TrainedModel, predict_scores
from .core import AggregateSeries, Window, aggregate, as_window
from .dp import MechanismConfig, perturb
from .features import extract
from .metrics import GameReport, privacy_loss, roc_auc
from .seeds import derive_seed, rng_for

__all__ = [
    "GameError",
    "GameConfig",
    "SubsetLocationsPrior",
    "SameGroupsPrior",
    "DifferentGroupsPrior",
    "PerfectKnowledgePrior",
    "LabeledSample",
    "ExperimentDataset",
    "Challenge",
    "challenger_round",
    "build_subset_prior",
    "build_same_groups_prior",
    "build_diff_groups_prior",
    "build_perfect_prior",
    "perturb_dataset",
    "play_game",
]

_REDRAW_CAP = 1000


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class GameConfig:
    """Group size, inference window, optional observation window, seed."""

    m: int
    inference_window: Window
    observation_window: Window | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "inference_window", as_window(self.inference_window)
        )
        if self.observation_window is not None:
            object.__setattr__(
                self, "observation_window", as_window(self.observation_window)
            )
        if self.m < 2:
            raise GameError("group size m must be at least 2")


@dataclass(frozen=True)
class SubsetLocationsPrior:
    """Adversary knows raw traces of ceil(alpha * |U|) users incl. target."""

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise GameError("alpha must be in (0, 1]")


def _check_beta(beta: int) -> None:
    if beta < 2 or beta % 2:
        raise GameError("beta must be an even count >= 2")


@dataclass(frozen=True)
class SameGroupsPrior:
    """Adversary knows past aggregates of the released groups."""

    beta: int

    def __post_init__(self):
        _check_beta(self.beta)


@dataclass(frozen=True)
class DifferentGroupsPrior:
    """Adversary knows past aggregates of beta other groups; beta // 3
    fresh groups are released at inference time."""

    beta: int

    def __post_init__(self):
        _check_beta(self.beta)
        test_count = self.beta // 3
        if test_count < 2 or test_count % 2:
            raise GameError("beta // 3 released groups must be even and >= 2")


@dataclass(frozen=True)
class PerfectKnowledgePrior:
    """Adversary knows the raw inference-window aggregates of the released
    groups and the target's membership in each."""

    beta: int

    def __post_init__(self):
        _check_beta(self.beta)


@dataclass(frozen=True)
class LabeledSample:
    """One aggregate with its membership label and originating group."""

    aggregate: AggregateSeries
    label: int
    group: tuple

    def __post_init__(self):
        if self.label not in (0, 1):
            raise GameError("label must be 0 (out) or 1 (in)")
        object.__setattr__(self, "group", tuple(self.group))

    @property
    def series(self):
        return self.aggregate


def _check_balanced(samples, split_name: str) -> None:
    ins = sum(s.label for s in samples)
    if 2 * ins != len(samples):
        raise GameError(
            f"{split_name} split is unbalanced: {ins} in of {len(samples)}"
        )


@dataclass(frozen=True)
class ExperimentDataset:
    """Balanced labeled train/test samples for one target."""

    target: int
    train: tuple
    test: tuple
    prior_kind: str = ""

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        _check_balanced(self.train, "train")
        _check_balanced(self.test, "test")
        for sample in (*self.train, *self.test):
            if sample.label != int(self.target in sample.group):
                raise GameError("label disagrees with group membership")

    def train_groups(self) -> set:
        return {frozenset(s.group) for s in self.train}

    def test_groups(self) -> set:
        return {frozenset(s.group) for s in self.test}

    def overlap_stats(self) -> dict:
        """Mean pairwise Jaccard overlap within each split, plus the number
        of groups the splits share. Reported, never controlled."""

        def mean_jaccard(groups):
            groups = [set(g) for g in groups]
            if len(groups) < 2:
                return 0.0
            total, pairs = 0.0, 0
            for i in range(len(groups)):
                for j in range(i + 1, len(groups)):
                    total += len(groups[i] & groups[j]) / len(groups[i] | groups[j])
                    pairs += 1
            return total / pairs

        train_g = self.train_groups()
        test_g = self.test_groups()
        return {
            "train_mean_jaccard": mean_jaccard(train_g),
            "test_mean_jaccard": mean_jaccard(test_g),
            "shared_groups": len(train_g & test_g),
        }


@dataclass(frozen=True)
class Challenge:
    """A challenge aggregate; only .aggregate is for the adversary's eyes.

    cohort holds the m-1 users common to both branches, member the user
    who filled the last slot (the target when hidden_bit is 0).
    """

    aggregate: AggregateSeries
    hidden_bit: int
    cohort: tuple
    member: int

    @property
    def group(self) -> tuple:
        return tuple(sorted((*self.cohort, self.member)))


def _others(panel, target) -> list:
    users = list(panel.users)
    if target not in users:
        raise GameError(f"target {target} not in panel")
    return [u for u in users if u != target]


def challenger_round(
    panel, target, config: GameConfig, round_index: int = 0, force_bit=None
) -> Challenge:
    """One protocol round: draw a cohort of m-1 non-target users, flip b,
    aggregate cohort + target (b=0) or cohort + replacement (b=1) over the
    inference window. force_bit is a test hook."""
    others = _others(panel, target)
    if config.m > len(others):
        raise GameError(
            f"m={config.m} needs at least {config.m} non-target users"
        )
    rng = rng_for(config.seed, "challenge", target, round_index)
    cohort = rng.choice(np.array(others), size=config.m - 1, replace=False)
    cohort = tuple(int(u) for u in cohort)
    bit = int(rng.integers(0, 2)) if force_bit is None else int(force_bit)
    if bit not in (0, 1):
        raise GameError("forced bit must be 0 or 1")
    if bit == 0:
        member = target
    else:
        pool = [u for u in others if u not in set(cohort)]
        member = int(pool[rng.integers(len(pool))])
    agg = aggregate(panel, (*cohort, member), config.inference_window)
    return Challenge(aggregate=agg, hidden_bit=bit, cohort=cohort, member=member)


# --- group drawing -----------------------------------------------------------

def _draw_unique(rng, pool, k, fixed, taken):
    """A sorted group of k pool members plus the fixed members, distinct
    as a set from everything in taken; capped redraws."""
    pool = np.asarray(pool)
    for _ in range(_REDRAW_CAP):
        picked = rng.choice(pool, size=k, replace=False)
        group = tuple(sorted((*(int(u) for u in picked), *fixed)))
        key = frozenset(group)
        if key not in taken:
            taken.add(key)
            return group
    raise GameError(
        f"exceeded {_REDRAW_CAP} redraws searching for a unique group"
    )


def _draw_group_lists(rng, target, pool_in, pool_out, m, n_in, n_out, taken):
    ins = [
        _draw_unique(rng, pool_in, m - 1, (target,), taken) for _ in range(n_in)
    ]
    outs = [_draw_unique(rng, pool_out, m, (), taken) for _ in range(n_out)]
    return ins, outs


def _samples_over(panel, groups, label, target, window):
    out = []
    for group in groups:
        out.append(
            LabeledSample(
                aggregate=aggregate(panel, group, window),
                label=label,
                group=group,
            )
        )
    return out


# --- prior 1: known raw traces of a user subset ------------------------------

def build_subset_prior(
    panel,
    target,
    config: GameConfig,
    prior: SubsetLocationsPrior,
    n_train: int = 400,
    n_test: int = 100,
) -> ExperimentDataset:
    """Training groups live inside the known subset Y (target included);
    test groups are drawn from the unknown remainder plus the target.
    Observation and inference windows coincide here."""
    if config.observation_window is not None and (
        config.observation_window != config.inference_window
    ):
        raise GameError("this prior requires observation window == inference window")
    for n in (n_train, n_test):
        if n < 2 or n % 2:
            raise GameError("sample counts must be even and >= 2")
    others = _others(panel, target)
    known_count = math.ceil(prior.alpha * len(panel.users))
    if known_count <= config.m:
        raise GameError(
            f"alpha={prior.alpha} knows only {known_count} users; need > m={config.m}"
        )
    rng = rng_for(config.seed, "subset-prior", target)
    known_others = rng.choice(np.array(others), size=known_count - 1, replace=False)
    known_others = sorted(int(u) for u in known_others)
    unknown = sorted(set(others) - set(known_others))
    if unknown and len(unknown) < config.m:
        raise GameError(
            f"only {len(unknown)} users outside the known subset; need >= m"
        )
    test_pool = unknown if unknown else known_others  # alpha=1 degenerates
    taken: set = set()
    train_in, train_out = _draw_group_lists(
        rng, target, known_others, known_others, config.m,
        n_train // 2, n_train // 2, taken,
    )
    test_in, test_out = _draw_group_lists(
        rng, target, test_pool, test_pool, config.m,
        n_test // 2, n_test // 2, taken,
    )
    w = config.inference_window
    return ExperimentDataset(
        target=target,
        train=_samples_over(panel, train_in, 1, target, w)
        + _samples_over(panel, train_out, 0, target, w),
        test=_samples_over(panel, test_in, 1, target, w)
        + _samples_over(panel, test_out, 0, target, w),
        prior_kind="subset-locations",
    )


# --- priors 2a/2b: labeled past aggregates ------------------------------------

def _windows_overlap(a: Window, b: Window) -> bool:
    return not (a.end <= b.start or b.end <= a.start)


def _observation_weeks(panel, config: GameConfig, weekly_slices):
    if config.observation_window is None:
        raise GameError("this prior requires an observation window")
    if _windows_overlap(config.observation_window, config.inference_window):
        raise GameError("observation and inference windows overlap")
    if weekly_slices is not None:
        weeks = [panel.grid.validate_window(w) for w in weekly_slices]
        for w in weeks:
            if not config.observation_window.contains(w):
                raise GameError(f"slice {w} outside the observation window")
        if not weeks:
            raise GameError("empty weekly slices")
        return weeks
    week_len = panel.grid.slots_per_week
    obs = config.observation_window
    if obs.length % week_len:
        raise GameError(
            f"observation window length {obs.length} is not whole weeks"
        )
    return [
        Window(obs.start + i * week_len, obs.start + (i + 1) * week_len)
        for i in range(obs.length // week_len)
    ]


def _past_aggregate_samples(panel, target, weeks, ins, outs):
    train = []
    for week in weeks:
        train.extend(_samples_over(panel, ins, 1, target, week))
        train.extend(_samples_over(panel, outs, 0, target, week))
    return train


def build_same_groups_prior(
    panel,
    target,
    config: GameConfig,
    prior: SameGroupsPrior,
    weekly_slices=None,
) -> ExperimentDataset:
    """beta fixed groups, half containing the target; one training sample
    per group per observation week, tests on the same groups over the
    disjoint inference window."""
    weeks = _observation_weeks(panel, config, weekly_slices)
    others = _others(panel, target)
    if config.m > len(others):
        raise GameError("group size exceeds available users")
    rng = rng_for(config.seed, "same-groups-prior", target)
    taken: set = set()
    ins, outs = _draw_group_lists(
        rng, target, others, others, config.m,
        prior.beta // 2, prior.beta // 2, taken,
    )
    w = config.inference_window
    return ExperimentDataset(
        target=target,
        train=_past_aggregate_samples(panel, target, weeks, ins, outs),
        test=_samples_over(panel, ins, 1, target, w)
        + _samples_over(panel, outs, 0, target, w),
        prior_kind="same-groups",
    )


def build_diff_groups_prior(
    panel,
    target,
    config: GameConfig,
    prior: DifferentGroupsPrior,
    weekly_slices=None,
) -> ExperimentDataset:
    """beta training groups plus beta // 3 disjoint released groups,
    stratified by label; training uses observation weeks only, testing the
    inference window only."""
    weeks = _observation_weeks(panel, config, weekly_slices)
    others = _others(panel, target)
    if config.m > len(others):
        raise GameError("group size exceeds available users")
    rng = rng_for(config.seed, "diff-groups-prior", target)
    test_count = prior.beta // 3
    taken: set = set()
    ins, outs = _draw_group_lists(
        rng, target, others, others, config.m,
        (prior.beta + test_count) // 2, (prior.beta + test_count) // 2, taken,
    )
    in_order = rng.permutation(len(ins))
    out_order = rng.permutation(len(outs))
    train_in = [ins[i] for i in in_order[: prior.beta // 2]]
    test_in = [ins[i] for i in in_order[prior.beta // 2 :]]
    train_out = [outs[i] for i in out_order[: prior.beta // 2]]
    test_out = [outs[i] for i in out_order[prior.beta // 2 :]]
    w = config.inference_window
    return ExperimentDataset(
        target=target,
        train=_past_aggregate_samples(panel, target, weeks, train_in, train_out),
        test=_samples_over(panel, test_in, 1, target, w)
        + _samples_over(panel, test_out, 0, target, w),
        prior_kind="different-groups",
    )


# --- worst-case prior for defense evaluation -----------------------------------

def build_perfect_prior(
    panel, target, config: GameConfig, prior: PerfectKnowledgePrior
) -> ExperimentDataset:
    """Train and test cover the same released groups over the same window;
    without perturbation the two splits are numerically identical, which is
    exactly the worst case a perturbation defense must face."""
    others = _others(panel, target)
    if config.m > len(others):
        raise GameError("group size exceeds available users")
    rng = rng_for(config.seed, "perfect-prior", target)
    taken: set = set()
    ins, outs = _draw_group_lists(
        rng, target, others, others, config.m,
        prior.beta // 2, prior.beta // 2, taken,
    )
    w = config.inference_window
    train = _samples_over(panel, ins, 1, target, w) + _samples_over(
        panel, outs, 0, target, w
    )
    test = [
        LabeledSample(aggregate=s.aggregate, label=s.label, group=s.group)
        for s in train
    ]
    return ExperimentDataset(
        target=target, train=train, test=test, prior_kind="perfect-knowledge"
    )


# --- perturbation wiring ---------------------------------------------------------

def _noisy_samples(samples, mechanism: MechanismConfig, seed: int, tag: str):
    out = []
    for i, sample in enumerate(samples):
        cfg = replace(mechanism, seed=derive_seed(seed, "noise", tag, i))
        noisy = perturb(sample.aggregate.values, cfg)
        agg = AggregateSeries(
            values=np.array(noisy.values),
            window=sample.aggregate.window,
            group_size=sample.aggregate.group_size,
        )
        out.append(LabeledSample(aggregate=agg, label=sample.label, group=sample.group))
    return out


def perturb_dataset(
    dataset: ExperimentDataset,
    mechanism: MechanismConfig,
    where: str,
    seed=None,
) -> ExperimentDataset:
    """Apply the mechanism with per-sample fresh noise.

    where="test-only" models a passive adversary (train raw, test noisy);
    where="train-and-test" the strategic one that mimics the defense. The
    train and test streams use disjoint sub-seeds, so their noise is
    independent; the mechanism's single sensitivity is used for every
    sample (one panel-wide bound, the usual worst-case convention).
    """
    if where not in ("test-only", "train-and-test"):
        raise GameError(f"unknown perturbation scope: {where}")
    if seed is None:
        seed = int(np.random.SeedSequence().entropy) & ((1 << 64) - 1)
    train = dataset.train
    if where == "train-and-test":
        train = _noisy_samples(dataset.train, mechanism, seed, "train")
    test = _noisy_samples(dataset.test, mechanism, seed, "test")
    return ExperimentDataset(
        target=dataset.target,
        train=train,
        test=test,
        prior_kind=dataset.prior_kind,
    )


# --- playing the game --------------------------------------------------------------

def play_game(
    dataset: ExperimentDataset, model, metrics_sink=None, threshold: float = 0.5
) -> GameReport:
    """Score the test split and tally the confusion matrix.

    Guessing "in" means score > threshold. A true positive is an in-sample
    guessed in (hidden bit 0 guessed 0). The model must have been fitted on
    dataset.train only; the feature columns and any scaler travel inside it.
    """
    if not isinstance(model, TrainedModel):
        raise GameError("play_game needs a TrainedModel")
    fm = extract(dataset.test)
    scores = predict_scores(model, fm)
    labels = fm.labels
    curve = roc_auc(scores, labels)
    guess_in = scores > threshold
    is_in = labels == 1.0
    report = GameReport(
        target=dataset.target,
        tp=int(np.sum(is_in & guess_in)),
        tn=int(np.sum(~is_in & ~guess_in)),
        fp=int(np.sum(~is_in & guess_in)),
        fn=int(np.sum(is_in & ~guess_in)),
        roc=curve,
        auc=curve.auc,
        pl=privacy_loss(curve.auc),
    )
    if metrics_sink is not None:
        metrics_sink(report)
    return report
