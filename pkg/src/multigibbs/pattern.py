"""Rectangular windows, labelled point patterns and annulus neighbour counts."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class DegenerateWindowError(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DegenerateWindowError(
                f"degenerate window [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width * self.height

    def contains(self, xy) -> np.ndarray:
        """Closed-rectangle membership for an (n, 2) array."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return (
            (xy[:, 0] >= self.x_min)
            & (xy[:, 0] <= self.x_max)
            & (xy[:, 1] >= self.y_min)
            & (xy[:, 1] <= self.y_max)
        )

    def overlaps(self, other: "Window") -> bool:
        return (
            self.x_min <= other.x_max
            and other.x_min <= self.x_max
            and self.y_min <= other.y_max
            and other.y_min <= self.y_max
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)


def erode_window(w: Window, r_bor: float) -> Window:
    """Return ``w`` shrunk by ``r_bor`` on every side."""
    if r_bor < 0:
        raise ValueError("erosion radius must be non-negative")
    return Window(w.x_min + r_bor, w.x_max - r_bor, w.y_min + r_bor, w.y_max - r_bor)


def pairwise_distance(a, b) -> np.ndarray:
    # hypot is exact for axis-aligned offsets, so boundary ties compare cleanly.
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.hypot(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1])


@dataclass(frozen=True, eq=False)
class MultiTypePattern:
    """Points with integer types ``0..p-1`` inside a rectangular window.

    Types are stored zero-based; the CSV layer converts to and from the
    1-based labels used in files. ``labels`` optionally names each type.
    """

    xy: np.ndarray
    types: np.ndarray
    p: int
    window: Window
    labels: tuple = field(default=())

    def __post_init__(self):
        xy = np.ascontiguousarray(np.asarray(self.xy, dtype=float).reshape(-1, 2))
        types = np.asarray(self.types, dtype=np.int64).reshape(-1)
        if len(xy) != len(types):
            raise ValueError("coordinate and type arrays differ in length")
        if self.p < 1:
            raise ValueError("type count p must be at least 1")
        if len(types) and (types.min() < 0 or types.max() >= self.p):
            raise ValueError(f"type labels must lie in 0..{self.p - 1}")
        if len(xy) and not self.window.contains(xy).all():
            raise ValueError("pattern has points outside its window")
        if self.labels and len(self.labels) != self.p:
            raise ValueError("labels must name every type")
        xy.setflags(write=False)
        types.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return len(self.types)

    def __eq__(self, other):
        if not isinstance(other, MultiTypePattern):
            return NotImplemented
        return (
            self.p == other.p
            and self.window == other.window
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.types, other.types)
            and self.labels == other.labels
        )

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.types, minlength=self.p)

    def sub(self, i: int) -> np.ndarray:
        """Coordinates of the type-``i`` sub-pattern."""
        return self.xy[self.types == i]

    def subset(self, mask) -> "MultiTypePattern":
        mask = np.asarray(mask)
        return MultiTypePattern(self.xy[mask], self.types[mask], self.p, self.window, self.labels)

    def with_window(self, window: Window) -> "MultiTypePattern":
        return MultiTypePattern(self.xy, self.types, self.p, window, self.labels)

    @classmethod
    def from_subpatterns(cls, parts, window: Window, labels=()) -> "MultiTypePattern":
        xy = [np.asarray(a, dtype=float).reshape(-1, 2) for a in parts]
        types = [np.full(len(a), i, dtype=np.int64) for i, a in enumerate(xy)]
        return cls(np.concatenate(xy), np.concatenate(types), len(xy), window, labels)


def subset_in_region(pattern: MultiTypePattern, region: Window) -> MultiTypePattern:
    """Points of ``pattern`` lying in the closed rectangle ``region``.

    The type count and the window are kept, so empty sub-types survive.
    """
    if len(pattern) == 0:
        return pattern
    return pattern.subset(region.contains(pattern.xy))


class SpatialIndex:
    """Per-type k-d trees answering annulus counts.

    The innermost annulus (``r_lo == 0``) is the closed ball, so coincident
    points count as neighbours; otherwise the shell is ``(r_lo, r_hi]``.
    """

    def __init__(self, pattern: MultiTypePattern):
        self.pattern = pattern
        self._index = [np.flatnonzero(pattern.types == i) for i in range(pattern.p)]
        self._trees = [cKDTree(pattern.xy[idx]) if len(idx) else None for idx in self._index]

    def neighbours(self, center, target_type: int, r_hi: float) -> np.ndarray:
        """Pattern indices of type ``target_type`` within distance ``r_hi``."""
        tree = self._trees[target_type]
        if tree is None:
            return np.empty(0, dtype=np.int64)
        center = np.asarray(center, dtype=float)
        # candidate set with slack, then the exact hypot filter
        cand = np.asarray(tree.query_ball_point(center, r_hi * (1 + 1e-9) + 1e-12), dtype=np.int64)
        idx = self._index[target_type][cand]
        d = pairwise_distance(self.pattern.xy[idx], center)
        return idx[d <= r_hi]

    def count(self, center, target_type: int, r_lo: float, r_hi: float,
              exclude: int | None = None) -> int:
        _check_radii(r_lo, r_hi)
        idx = self.neighbours(center, target_type, r_hi)
        if exclude is not None:
            idx = idx[idx != exclude]
        if r_lo > 0:
            d = pairwise_distance(self.pattern.xy[idx], np.asarray(center, dtype=float))
            idx = idx[d > r_lo]
        return int(len(idx))


def _check_radii(r_lo, r_hi):
    if r_lo < 0 or r_hi <= r_lo:
        raise ValueError(f"invalid annulus radii ({r_lo}, {r_hi}]")


def count_annulus_neighbours(center, target_type: int, r_lo: float, r_hi: float,
                             pattern: MultiTypePattern, exclude_self: int | None = None,
                             index: SpatialIndex | None = None) -> int:
    """Number of type-``target_type`` points at distance in ``(r_lo, r_hi]``.

    ``exclude_self`` is the pattern index of the centre when the centre is
    itself a pattern point; exclusion is by identity, not by zero distance.
    """
    _check_radii(r_lo, r_hi)
    if index is None:
        index = SpatialIndex(pattern)
    return index.count(center, target_type, r_lo, r_hi, exclude=exclude_self)


# ---------------------------------------------------------------------------
# CSV input/output


def read_pattern_csv(path, window: Window | None = None, p: int | None = None) -> MultiTypePattern:
    """Read an ``x,y,type`` file.

    Integer types are taken as 1-based indices. Any non-integer label switches
    to string mode, where labels are indexed in order of first appearance.
    Without an explicit window the bounding box of the points is used.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader)]
        if header[:3] != ["x", "y", "type"]:
            raise ValueError(f"{path}: expected header x,y,type, got {','.join(header)}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    xs = np.array([float(r[0]) for r in rows])
    ys = np.array([float(r[1]) for r in rows])
    raw = [r[2].strip() for r in rows]
    labels: tuple = ()
    try:
        types = np.array([int(t) for t in raw], dtype=np.int64) - 1
        if len(types) and types.min() < 0:
            raise ValueError(f"{path}: integer types must be 1-based")
        n_types = int(types.max()) + 1 if len(types) else 1
    except ValueError as err:
        if "1-based" in str(err):
            raise
        order: dict[str, int] = {}
        for t in raw:
            order.setdefault(t, len(order))
        types = np.array([order[t] for t in raw], dtype=np.int64)
        labels = tuple(order)
        n_types = len(order)
    if p is None:
        p = n_types
    elif p < n_types:
        raise ValueError(f"{path}: found {n_types} types but p={p}")
    if labels and len(labels) < p:
        labels = labels + tuple(str(k + 1) for k in range(len(labels), p))
    xy = np.column_stack([xs, ys]) if len(xs) else np.empty((0, 2))
    if window is None:
        if len(xs) == 0:
            raise ValueError(f"{path}: cannot infer a window from an empty pattern")
        window = Window(xs.min(), xs.max(), ys.min(), ys.max())
    return MultiTypePattern(xy, types, p, window, labels)


def write_pattern_csv(pattern: MultiTypePattern, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "type"])
        for (x, y), t in zip(pattern.xy, pattern.types):
            label = pattern.labels[t] if pattern.labels else str(t + 1)
            w.writerow([repr(float(x)), repr(float(y)), label])
