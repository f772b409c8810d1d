"""Location data model.

Users are binary ROI x time-slot matrices (stored sparsely as cell sets), a
panel bundles the matrices of a user population, and group aggregates are
dense count matrices over a slot window. Every slot in which a user reports
no real ROI carries the reserved null ROI instead, so each user contributes
at least one cell per slot.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Window",
    "TimeGrid",
    "RoiSet",
    "LocationMatrix",
    "UserPanel",
    "AggregateSeries",
    "Sensitivity",
    "PanelError",
    "EmptyGroupError",
    "EmptyPanelError",
    "UnknownUserError",
    "WindowError",
    "PanelFormatError",
    "aggregate",
    "sensitivity",
    "slice_window",
    "save_panel",
    "load_panel",
]


class PanelError(ValueError):
    """Base class for data-model errors."""


class EmptyGroupError(PanelError):
    pass


class EmptyPanelError(PanelError):
    pass


class UnknownUserError(PanelError):
    pass


class WindowError(PanelError):
    pass


class PanelFormatError(PanelError):
    """Malformed panel file."""


@dataclass(frozen=True, order=True)
class Window:
    """Half-open contiguous slot range [start, end)."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise WindowError(f"invalid window [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start

    def contains(self, other: "Window") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "Window") -> bool:
        return self.start < other.end and other.start < self.end

    def shift(self, offset: int) -> "Window":
        return Window(self.start + offset, self.end + offset)


def as_window(w) -> Window:
    if isinstance(w, Window):
        return w
    try:
        start, end = w
    except (TypeError, ValueError):
        raise WindowError(f"not a window: {w!r}") from None
    return Window(int(start), int(end))


@dataclass(frozen=True)
class TimeGrid:
    """Discrete time axis of the panel.

    slot_duration is in hours; epoch_label is the weekday index of slot 0
    (0 = Monday).
    """

    slot_count: int
    slot_duration: float = 1.0
    epoch_label: int = 0

    def __post_init__(self):
        if self.slot_count < 1:
            raise PanelError("slot_count must be >= 1")
        if self.slot_duration <= 0:
            raise PanelError("slot_duration must be positive")
        if not (0 <= self.epoch_label <= 6):
            raise PanelError("epoch_label must be a weekday index 0..6")

    @property
    def slots_per_day(self) -> int:
        per_day = 24.0 / self.slot_duration
        if abs(per_day - round(per_day)) > 1e-9:
            raise PanelError("slot_duration does not divide a day evenly")
        return int(round(per_day))

    @property
    def slots_per_week(self) -> int:
        return 7 * self.slots_per_day

    def full_window(self) -> Window:
        return Window(0, self.slot_count)

    def validate_window(self, window) -> Window:
        w = as_window(window)
        if w.end > self.slot_count:
            raise WindowError(
                f"window [{w.start}, {w.end}) exceeds slot_count {self.slot_count}"
            )
        return w

    def weekday_of_slot(self, slot: int) -> int:
        return (self.epoch_label + (slot // self.slots_per_day)) % 7

    def hour_of_slot(self, slot: int) -> float:
        return (slot % self.slots_per_day) * self.slot_duration


@dataclass(frozen=True)
class RoiSet:
    """ROI index space; one index is reserved for the null (absent) ROI."""

    roi_count: int
    null_roi: int = 0

    def __post_init__(self):
        if self.roi_count < 2:
            raise PanelError("roi_count must be >= 2 (one real ROI plus null)")
        if not (0 <= self.null_roi < self.roi_count):
            raise PanelError("null_roi out of range")

    @property
    def real_rois(self) -> np.ndarray:
        return np.array(
            [r for r in range(self.roi_count) if r != self.null_roi], dtype=np.int64
        )


@dataclass(frozen=True)
class LocationMatrix:
    """One user's binary ROI x slot matrix, stored as a sparse cell set.

    Cells are kept as parallel (roi, slot) arrays sorted by flat index
    roi * slot_count + slot, deduplicated, with null filling applied: every
    slot without a real-ROI cell holds a null-ROI cell.
    """

    user: int
    cell_rois: np.ndarray
    cell_slots: np.ndarray
    roi_count: int
    slot_count: int
    null_roi: int = 0

    @classmethod
    def build(cls, user, cells, roi_count, slot_count, null_roi=0):
        """Construct from an iterable of (roi, slot) pairs, null-filling
        empty slots and discarding duplicates."""
        cells = list(cells)
        if cells:
            arr = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
            rois, slots = arr[:, 0], arr[:, 1]
            if rois.min() < 0 or rois.max() >= roi_count:
                raise PanelError(f"user {user}: roi index out of range")
            if slots.min() < 0 or slots.max() >= slot_count:
                raise PanelError(f"user {user}: slot index out of range")
        else:
            rois = np.empty(0, dtype=np.int64)
            slots = np.empty(0, dtype=np.int64)
        covered = np.zeros(slot_count, dtype=bool)
        real = rois != null_roi
        covered[slots[real]] = True
        fill_slots = np.nonzero(~covered)[0]
        rois = np.concatenate([rois[real], np.full(fill_slots.size, null_roi)])
        slots = np.concatenate([slots[real], fill_slots])
        flat = np.unique(rois * slot_count + slots)
        out_rois = (flat // slot_count).astype(np.int32)
        out_slots = (flat % slot_count).astype(np.int32)
        out_rois.setflags(write=False)
        out_slots.setflags(write=False)
        return cls(int(user), out_rois, out_slots, roi_count, slot_count, null_roi)

    @property
    def cell_count(self) -> int:
        return int(self.cell_rois.size)

    @property
    def real_cell_count(self) -> int:
        return int(np.count_nonzero(self.cell_rois != self.null_roi))

    def cell_set(self) -> set:
        return set(zip(self.cell_rois.tolist(), self.cell_slots.tolist()))

    def cells_in(self, window) -> tuple[np.ndarray, np.ndarray]:
        w = as_window(window)
        mask = (self.cell_slots >= w.start) & (self.cell_slots < w.end)
        return self.cell_rois[mask], self.cell_slots[mask]

    def window_flat(self, window) -> np.ndarray:
        """Flat indices roi * window_length + (slot - start) of the cells
        inside the window."""
        w = as_window(window)
        rois, slots = self.cells_in(w)
        return rois.astype(np.int64) * w.length + (slots.astype(np.int64) - w.start)

    def window_cell_count(self, window) -> int:
        w = as_window(window)
        return int(
            np.count_nonzero((self.cell_slots >= w.start) & (self.cell_slots < w.end))
        )

    def dense(self, window=None) -> np.ndarray:
        """0/1 matrix of shape (roi_count, window length)."""
        w = as_window(window) if window is not None else Window(0, self.slot_count)
        out = np.zeros((self.roi_count, w.length), dtype=np.float64)
        rois, slots = self.cells_in(w)
        out[rois, slots - w.start] = 1.0
        return out


@dataclass(frozen=True)
class UserPanel:
    """A population of users with one LocationMatrix each."""

    users: tuple
    matrices: dict
    grid: TimeGrid
    rois: RoiSet

    def __post_init__(self):
        if len(set(self.users)) != len(self.users):
            raise PanelError("duplicate user ids")
        for uid in self.users:
            m = self.matrices.get(uid)
            if m is None:
                raise PanelError(f"user {uid} has no matrix")
            if m.roi_count != self.rois.roi_count or m.slot_count != self.grid.slot_count:
                raise PanelError(f"user {uid}: matrix shape disagrees with panel")
            if m.null_roi != self.rois.null_roi:
                raise PanelError(f"user {uid}: null roi disagrees with panel")

    @property
    def user_count(self) -> int:
        return len(self.users)

    def matrix(self, uid) -> LocationMatrix:
        try:
            return self.matrices[uid]
        except KeyError:
            raise UnknownUserError(f"unknown user id {uid}") from None


@dataclass(frozen=True)
class AggregateSeries:
    """Dense per-ROI, per-slot count matrix of one group over a window."""

    values: np.ndarray
    window: Window
    group_size: int

    def __post_init__(self):
        if self.values.shape[1] != self.window.length:
            raise PanelError("values shape disagrees with window length")
        self.values.setflags(write=False)


@dataclass(frozen=True)
class Sensitivity:
    """Largest single-user contribution to an aggregate over a window.

    l1 is the max per-user cell count inside the window; for binary matrices
    the l2 norm of one user's contribution is sqrt of that count.
    """

    l1: float
    l2: float
    window: Window

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0:
            raise PanelError("sensitivity must be non-negative")
        if self.l1 >= 1 and self.l2 > self.l1 + 1e-9:
            raise PanelError("l2 must not exceed l1")


def aggregate(panel: UserPanel, group: Sequence, window) -> AggregateSeries:
    """Sum the group members' binary matrices over the window."""
    if len(group) == 0:
        raise EmptyGroupError("empty group")
    if len(set(group)) != len(group):
        raise PanelError("duplicate user ids in group")
    w = panel.grid.validate_window(window)
    parts = [panel.matrix(uid).window_flat(w) for uid in group]
    flat = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    counts = np.bincount(flat, minlength=panel.rois.roi_count * w.length)
    values = counts.reshape(panel.rois.roi_count, w.length).astype(np.float64)
    return AggregateSeries(values=values, window=w, group_size=len(group))


def sensitivity(panel: UserPanel, window) -> Sensitivity:
    """Max per-user cell count inside the window (l1) and its sqrt (l2)."""
    if panel.user_count == 0:
        raise EmptyPanelError("empty panel")
    w = panel.grid.validate_window(window)
    l1 = max(panel.matrix(uid).window_cell_count(w) for uid in panel.users)
    return Sensitivity(l1=float(l1), l2=math.sqrt(l1), window=w)


def slice_window(series: AggregateSeries, sub) -> AggregateSeries:
    """Column sub-range of an aggregate; group size is preserved."""
    s = as_window(sub)
    if not series.window.contains(s):
        raise WindowError(f"sub-window {s} not contained in {series.window}")
    lo = s.start - series.window.start
    values = np.array(series.values[:, lo : lo + s.length])
    return AggregateSeries(values=values, window=s, group_size=series.group_size)


_HEADER_RE = re.compile(r"#panel v1 users=(\d+) rois=(\d+) slots=(\d+)\s*$")


def save_panel(panel: UserPanel, path) -> None:
    """Write the line-oriented panel format: a header plus one
    `user_id,roi_id,slot` line per real cell.

    Users without real cells get a single explicit null-cell line so the
    user census survives the round trip.
    """
    with open(path, "w") as fh:
        fh.write(
            f"#panel v1 users={panel.user_count} "
            f"rois={panel.rois.roi_count} slots={panel.grid.slot_count}\n"
        )
        for uid in panel.users:
            m = panel.matrix(uid)
            real = m.cell_rois != m.null_roi
            rois = m.cell_rois[real]
            slots = m.cell_slots[real]
            if rois.size == 0:
                fh.write(f"{uid},{m.null_roi},0\n")
                continue
            for r, t in zip(rois.tolist(), slots.tolist()):
                fh.write(f"{uid},{r},{t}\n")


def load_panel(path, slot_duration=1.0, epoch_label=0, null_roi=0) -> UserPanel:
    """Read the panel format; absent slots are null-filled per user.

    The format does not carry the grid anchor, so slot_duration and
    epoch_label default to 1-hour slots starting on a Monday.
    """
    with open(path) as fh:
        header = fh.readline()
        match = _HEADER_RE.match(header)
        if not match:
            raise PanelFormatError(f"{path}: missing or malformed panel header")
        n_users, roi_count, slot_count = (int(g) for g in match.groups())
        cells_by_user: dict[int, list] = {}
        order: list[int] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 3:
                raise PanelFormatError(f"{path}:{lineno}: expected 3 fields")
            try:
                uid, roi, slot = (int(f) for f in fields)
            except ValueError:
                raise PanelFormatError(
                    f"{path}:{lineno}: non-integer field"
                ) from None
            if not (0 <= roi < roi_count):
                raise PanelFormatError(f"{path}:{lineno}: roi {roi} out of range")
            if not (0 <= slot < slot_count):
                raise PanelFormatError(f"{path}:{lineno}: slot {slot} out of range")
            if uid not in cells_by_user:
                cells_by_user[uid] = []
                order.append(uid)
            cells_by_user[uid].append((roi, slot))
    if len(order) != n_users:
        raise PanelFormatError(
            f"{path}: header says {n_users} users, found {len(order)}"
        )
    grid = TimeGrid(slot_count, slot_duration, epoch_label)
    rois = RoiSet(roi_count, null_roi)
    matrices = {
        uid: LocationMatrix.build(uid, cells_by_user[uid], roi_count, slot_count, null_roi)
        for uid in order
    }
    return UserPanel(users=tuple(order), matrices=matrices, grid=grid, rois=rois)
