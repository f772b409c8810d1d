import numpy as np
import pytest
from scipy.stats import chisquare

from aggmia.core import LocationMatrix, RoiSet, TimeGrid, UserPanel
from aggmia.synthgen import (
    GeneratorConfig,
    GeneratorError,
    MobilityProfile,
    commuter_hour_weight,
    draw_profile,
    generate_panel,
    sample_targets,
    tier_users,
)


def real_cells(matrix):
    keep = matrix.cell_rois != matrix.null_roi
    return matrix.cell_rois[keep], matrix.cell_slots[keep]


def oracle_mean_unique_rois(n_users, cfg, seed):
    """Straight-line re-simulation of the commuter model: per user, draw the
    itinerary, walk every slot once, and count distinct visited ROIs."""
    master = np.random.default_rng(seed)
    uniques = []
    for _ in range(n_users):
        rng = np.random.default_rng(int(master.integers(2**63)))
        real = np.arange(1, cfg.roi_count)
        perm = rng.permutation(real)
        n_home = 2 if (real.size >= 4 and rng.random() < 0.3) else 1
        n_work = 2 if (real.size >= n_home + 3 and rng.random() < 0.25) else 1
        home = perm[:n_home]
        work = perm[n_home : n_home + n_work]
        rest = perm[n_home + n_work :]
        leisure = int(rest[0]) if rest.size else int(home[0])
        morning = int(rng.integers(7, 10))
        evening = int(rng.integers(16, 20))
        factor = np.exp(
            rng.normal(0.0, cfg.activity_spread) - 0.5 * cfg.activity_spread**2
        )
        fraction = float(np.clip(cfg.active_slot_fraction * factor, 0.02, 0.92))

        weights = []
        for slot in range(cfg.slot_count):
            weekday = ((slot // 24) % 7) < 5
            weights.append(
                commuter_hour_weight(slot % 24, weekday, morning, evening)
            )
        target = fraction * cfg.slot_count
        lo, hi = 0.0, 1.0
        while sum(min(1.0, hi * w) for w in weights) < target:
            hi *= 2.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            if sum(min(1.0, mid * w) for w in weights) < target:
                lo = mid
            else:
                hi = mid
        scale = 0.5 * (lo + hi)

        visited = set()
        for slot in range(cfg.slot_count):
            if rng.random() >= min(1.0, scale * weights[slot]):
                continue
            hour = slot % 24
            day = (slot // 24) % 7
            if day < 5:
                if hour < morning:
                    template = int(home[0])
                elif hour < evening:
                    template = int(work[day % len(work)])
                else:
                    template = int(home[0])
            else:
                template = leisure if 10 <= hour < 18 else int(home[0])
            if rng.random() < cfg.regularity:
                visited.add(template)
            else:
                visited.add(int(rng.integers(1, cfg.roi_count)))
            if rng.random() < 0.5 * (1.0 - cfg.regularity):
                visited.add(int(rng.integers(1, cfg.roi_count)))
        uniques.append(len(visited))
    return float(np.mean(uniques))


def panel_with_counts(counts):
    """One real cell per (slot, roi 1) up to the requested count per user."""
    slot_count = max(counts) + 1
    matrices = {
        uid: LocationMatrix.build(
            uid, [(1, s) for s in range(c)], 3, slot_count
        )
        for uid, c in enumerate(counts)
    }
    return UserPanel(
        users=tuple(range(len(counts))),
        matrices=matrices,
        grid=TimeGrid(slot_count),
        rois=RoiSet(3),
    )


@pytest.fixture(scope="module")
def commuter_1000():
    cfg = GeneratorConfig(
        user_count=1000, roi_count=30, slot_count=168, kind="commuter", seed=2024
    )
    return cfg, generate_panel(cfg)


class TestConfigAndProfile:
    def test_kind_defaults_resolve(self):
        cfg = GeneratorConfig(10, 5, 24, "commuter", seed=1)
        assert cfg.regularity == 0.9
        assert cfg.active_slot_fraction == 0.17
        cab = GeneratorConfig(10, 5, 24, "cab", seed=1)
        assert cab.regularity == 0.2
        assert cab.active_slot_fraction == 0.67

    def test_overrides_survive(self):
        cfg = GeneratorConfig(10, 5, 24, "commuter", seed=1, regularity=0.5)
        assert cfg.regularity == 0.5

    def test_rejects_bad_configs(self):
        with pytest.raises(GeneratorError):
            GeneratorConfig(10, 5, 24, "pedestrian", seed=1)
        with pytest.raises(GeneratorError):
            GeneratorConfig(0, 5, 24, "cab", seed=1)
        with pytest.raises(GeneratorError):
            GeneratorConfig(10, 2, 24, "cab", seed=1)
        with pytest.raises(GeneratorError):
            GeneratorConfig(10, 5, 24, "cab", seed=1, regularity=1.5)

    def test_profile_validation(self):
        with pytest.raises(GeneratorError):
            MobilityProfile((), (2,), 1.0, 0.5, 0.2)
        with pytest.raises(GeneratorError):
            MobilityProfile((0,), (2,), 1.0, 0.5, 0.2)
        with pytest.raises(GeneratorError):
            MobilityProfile((1,), (2,), -1.0, 0.5, 0.2)
        with pytest.raises(GeneratorError):
            MobilityProfile((1,), (2,), 1.0, 0.5, 0.0)

    def test_draw_profile_respects_population(self):
        cfg = GeneratorConfig(10, 20, 168, "commuter", seed=3)
        rng = np.random.default_rng(0)
        profile = draw_profile(rng, cfg)
        assert profile.regularity == 0.9
        assert set(profile.home_rois).isdisjoint(profile.work_rois)
        assert 7 <= profile.morning_hour <= 9
        assert 16 <= profile.evening_hour <= 19


class TestGeneratePanel:
    def test_same_seed_is_bit_identical(self):
        cfg = GeneratorConfig(20, 12, 168, "commuter", seed=7)
        a, b = generate_panel(cfg), generate_panel(cfg)
        for uid in a.users:
            assert np.array_equal(a.matrices[uid].cell_rois, b.matrices[uid].cell_rois)
            assert np.array_equal(
                a.matrices[uid].cell_slots, b.matrices[uid].cell_slots
            )

    def test_different_seeds_differ(self):
        base = dict(user_count=20, roi_count=12, slot_count=168, kind="cab")
        a = generate_panel(GeneratorConfig(seed=1, **base))
        b = generate_panel(GeneratorConfig(seed=2, **base))
        assert any(
            not np.array_equal(a.matrices[u].cell_rois, b.matrices[u].cell_rois)
            or not np.array_equal(a.matrices[u].cell_slots, b.matrices[u].cell_slots)
            for u in a.users
        )

    def test_full_regularity_forces_the_weekday_template(self):
        cfg = GeneratorConfig(
            50, 3, 336, "commuter", seed=11, regularity=1.0
        )
        panel = generate_panel(cfg)
        for uid in panel.users:
            rois, slots = real_cells(panel.matrices[uid])
            hours = slots % 24
            days = (slots // 24) % 7
            work_band = (days < 5) & (hours >= 9) & (hours < 16)
            night_band = (days < 5) & (hours >= 21)
            work_rois = set(rois[work_band].tolist())
            home_rois = set(rois[night_band].tolist())
            assert len(work_rois) <= 1
            assert len(home_rois) <= 1
            assert work_rois.isdisjoint(home_rois)

    def test_commuter_active_fraction_band(self, commuter_1000):
        cfg, panel = commuter_1000
        fractions = []
        for uid in panel.users:
            _, slots = real_cells(panel.matrices[uid])
            fractions.append(len(set(slots.tolist())) / cfg.slot_count)
        assert 0.8 * 0.17 <= np.mean(fractions) <= 1.2 * 0.17

    def test_cab_active_fraction_band(self):
        cfg = GeneratorConfig(300, 36, 168, "cab", seed=12)
        panel = generate_panel(cfg)
        fractions = []
        for uid in panel.users:
            _, slots = real_cells(panel.matrices[uid])
            fractions.append(len(set(slots.tolist())) / cfg.slot_count)
        assert 0.8 * 0.67 <= np.mean(fractions) <= 1.2 * 0.67

    def test_unique_roi_count_matches_simulation_oracle(self, commuter_1000):
        cfg, panel = commuter_1000
        measured = np.mean(
            [
                len(set(real_cells(panel.matrices[uid])[0].tolist()))
                for uid in panel.users
            ]
        )
        expected = oracle_mean_unique_rois(1000, cfg, seed=555)
        assert abs(measured - expected) <= 0.2 * expected

    def test_commuters_repeat_days_more_than_cabs(self):
        shape = dict(user_count=60, roi_count=36, slot_count=168)
        scores = {}
        for kind in ("commuter", "cab"):
            panel = generate_panel(GeneratorConfig(kind=kind, seed=13, **shape))
            per_user = []
            for uid in panel.users:
                rois, slots = real_cells(panel.matrices[uid])
                day_sets = {}
                for r, s in zip(rois.tolist(), slots.tolist()):
                    day_sets.setdefault(s // 24, set()).add(r)
                days = list(day_sets.values())
                pairs = [
                    len(a & b) / len(a | b)
                    for i, a in enumerate(days)
                    for b in days[i + 1 :]
                ]
                if pairs:
                    per_user.append(np.mean(pairs))
            scores[kind] = np.mean(per_user)
        assert scores["commuter"] > scores["cab"]

    def test_null_roi_only_marks_absence(self):
        for kind in ("commuter", "cab"):
            panel = generate_panel(GeneratorConfig(40, 10, 168, kind, seed=14))
            for uid in panel.users:
                m = panel.matrices[uid]
                null_slots = set(m.cell_slots[m.cell_rois == 0].tolist())
                real_slots = set(m.cell_slots[m.cell_rois != 0].tolist())
                assert null_slots.isdisjoint(real_slots)
                assert len(null_slots) + len(real_slots) == m.slot_count


class TestTierUsers:
    def test_spec_split(self):
        panel = panel_with_counts([10, 20, 30, 40, 50, 60])
        top, mid, low = tier_users(panel)
        assert top == [5, 4]
        assert mid == [3, 2]
        assert low == [1, 0]

    def test_ties_break_by_user_id(self):
        panel = panel_with_counts([7, 7, 7, 7, 7, 7])
        top, mid, low = tier_users(panel)
        assert (top, mid, low) == ([0, 1], [2, 3], [4, 5])

    def test_remainder_goes_to_last_tier(self):
        panel = panel_with_counts([5, 4, 3, 2, 1, 6, 7, 8])
        top, mid, low = tier_users(panel)
        assert len(top) == 2 and len(mid) == 2 and len(low) == 4

    def test_matches_sort_oracle_at_scale(self, commuter_1000):
        _, panel = commuter_1000
        expected = sorted(
            panel.users,
            key=lambda uid: (-panel.matrices[uid].real_cell_count, uid),
        )
        top, mid, low = tier_users(panel)
        assert top + mid + low == expected

    def test_rejects_tiny_panels(self):
        with pytest.raises(GeneratorError):
            tier_users(panel_with_counts([1, 2]))


class TestSampleTargets:
    def test_whole_tier_when_per_tier_equals_size(self):
        tiers = ([1, 2, 3], [4, 5, 6], [7, 8, 9])
        picked = sample_targets(tiers, 3, seed=1)
        assert sorted(picked) == list(range(1, 10))

    def test_zero_picks_nothing(self):
        assert sample_targets(([1], [2], [3]), 0, seed=1) == []

    def test_rejects_oversized_requests(self):
        with pytest.raises(GeneratorError):
            sample_targets(([1, 2], [3], [4, 5]), 2, seed=1)

    def test_deterministic_given_seed(self):
        tiers = (list(range(10)), list(range(10, 20)), list(range(20, 30)))
        assert sample_targets(tiers, 4, seed=9) == sample_targets(tiers, 4, seed=9)
        assert sample_targets(tiers, 4, seed=9) != sample_targets(tiers, 4, seed=10)

    def test_selection_is_uniform_over_seeds(self):
        tier = list(range(10))
        counts = np.zeros(10)
        for seed in range(10_000):
            for uid in sample_targets((tier,), 3, seed=seed):
                counts[uid] += 1
        assert chisquare(counts).pvalue > 0.01
