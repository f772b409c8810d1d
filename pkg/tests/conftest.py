import numpy as np
import pytest

from aggmia.core import LocationMatrix, RoiSet, TimeGrid, UserPanel


def random_panel(rng, n_users=4, roi_count=3, slot_count=5, cell_rate=0.3, null_roi=0):
    """Small random panel built directly from random cell sets (independent
    of the synthetic generator)."""
    matrices = {}
    users = tuple(range(n_users))
    for uid in users:
        mask = rng.random((roi_count, slot_count)) < cell_rate
        mask[null_roi, :] = False
        rois, slots = np.nonzero(mask)
        matrices[uid] = LocationMatrix.build(
            uid, list(zip(rois.tolist(), slots.tolist())), roi_count, slot_count, null_roi
        )
    return UserPanel(
        users=users,
        matrices=matrices,
        grid=TimeGrid(slot_count),
        rois=RoiSet(roi_count, null_roi),
    )


@pytest.fixture
def tiny_panel():
    rng = np.random.default_rng(7)
    return random_panel(rng)
