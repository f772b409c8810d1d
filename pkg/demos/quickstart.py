"""Smallest end-to-end run: one synthetic panel, one target, one classifier.

Generates a commuter panel, builds a balanced train/test set under the
subset-locations prior (the adversary knows half the user base and asks
whether the target's data entered a released aggregate), fits a logistic
regression on the training aggregates, and scores the held-out ones.

Run with:  python3 demos/quickstart.py
"""

from aggmia.core import Window
from aggmia.game import (
    GameConfig,
    SubsetLocationsPrior,
    build_subset_prior,
    play_game,
)
from aggmia.runner import fit_classifiers
from aggmia.synthgen import GeneratorConfig, generate_panel


def main():
    panel = generate_panel(
        GeneratorConfig(
            kind="commuter", user_count=300, roi_count=12, slot_count=168, seed=7
        )
    )
    target = panel.users[0]
    config = GameConfig(m=10, inference_window=Window(0, 168), seed=7)
    dataset = build_subset_prior(
        panel,
        target,
        config,
        SubsetLocationsPrior(alpha=0.5),
        n_train=100,
        n_test=40,
    )

    model = fit_classifiers(dataset, ["LR"], seed=7)["LR"]
    report = play_game(dataset, model)

    print(f"panel: {panel.user_count} users, {panel.rois.roi_count} regions, "
          f"{panel.grid.slot_count} hourly slots")
    print(f"target user {target}, groups of {config.m}, "
          f"{len(dataset.train)} train / {len(dataset.test)} test aggregates")
    print(f"AUC {report.auc:.3f}  privacy loss {report.pl:.3f}")
    print(f"confusion: tp={report.tp} fp={report.fp} tn={report.tn} fn={report.fn}")


if __name__ == "__main__":
    main()
