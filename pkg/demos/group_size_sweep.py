"""How membership risk shrinks as the aggregation group grows.

For a handful of targets, plays the distinguishing game at several group
sizes m and prints the mean AUC per classifier. Aggregating over more
users dilutes any single contribution, so the rows should trend toward
0.5 (coin flipping) as m grows, from near-certain identification at m=5.

Run with:  python3 demos/group_size_sweep.py [--seed N]
"""

import argparse

import numpy as np

from aggmia.core import Window
from aggmia.game import (
    GameConfig,
    SubsetLocationsPrior,
    build_subset_prior,
    play_game,
)
from aggmia.runner import fit_classifiers
from aggmia.synthgen import GeneratorConfig, generate_panel

GROUP_SIZES = (5, 10, 50)
CLASSIFIERS = ("LR", "KNN", "RF")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    panel = generate_panel(
        GeneratorConfig(
            kind="commuter",
            user_count=400,
            roi_count=15,
            slot_count=168,
            seed=args.seed,
        )
    )
    targets = list(panel.users[:3])
    prior = SubsetLocationsPrior(alpha=0.5)

    print(f"targets {targets}, {len(CLASSIFIERS)} classifiers, "
          f"mean AUC over targets per group size")
    print(f"{'m':>4}  " + "  ".join(f"{c:>5}" for c in CLASSIFIERS))
    for m in GROUP_SIZES:
        aucs = {c: [] for c in CLASSIFIERS}
        for target in targets:
            config = GameConfig(
                m=m, inference_window=Window(0, 168), seed=args.seed
            )
            dataset = build_subset_prior(
                panel, target, config, prior, n_train=100, n_test=40
            )
            models = fit_classifiers(dataset, list(CLASSIFIERS), seed=args.seed)
            for c in CLASSIFIERS:
                aucs[c].append(play_game(dataset, models[c]).auc)
        cells = "  ".join(f"{np.mean(aucs[c]):>5.3f}" for c in CLASSIFIERS)
        print(f"{m:>4}  {cells}")


if __name__ == "__main__":
    main()
