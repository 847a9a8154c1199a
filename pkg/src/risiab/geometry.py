"""Finite-region sampling and tree-line intersection geometry.

Tree lines are rectangular strips (``length`` x ``width``) centred on a point
and rotated by ``orientation``.  Strip boundaries are open, so a link that
only grazes an edge crosses zero vegetation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidParameterError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def distance_to(self, other: Point) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Region:
    width: float
    height: float
    origin: Point = Point(0.0, 0.0)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidParameterError("region width and height must be positive")
        if not (math.isfinite(self.width) and math.isfinite(self.height)):
            raise InvalidParameterError("region extent must be finite")

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x)
        y = np.asarray(y)
        return ((x >= self.origin.x) & (x <= self.origin.x + self.width)
                & (y >= self.origin.y) & (y <= self.origin.y + self.height))


@dataclass(frozen=True)
class TreeLine:
    center: Point
    orientation: float
    length: float
    width: float
    in_leaf: bool

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise InvalidParameterError("tree line length and width must be positive")
        if not (0.0 <= self.orientation < math.pi):
            raise InvalidParameterError("orientation must lie in [0, pi)")


@dataclass(frozen=True)
class TreeField:
    """Tree lines inside a region, stored column-wise for vectorised queries."""

    lines: tuple[TreeLine, ...] = ()
    density: float = 0.0
    _cols: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.lines)
        cols = {
            "cx": np.fromiter((t.center.x for t in self.lines), float, n),
            "cy": np.fromiter((t.center.y for t in self.lines), float, n),
            "cos": np.fromiter((math.cos(t.orientation) for t in self.lines), float, n),
            "sin": np.fromiter((math.sin(t.orientation) for t in self.lines), float, n),
            "half_len": np.fromiter((t.length / 2 for t in self.lines), float, n),
            "half_wid": np.fromiter((t.width / 2 for t in self.lines), float, n),
            "in_leaf": np.fromiter((t.in_leaf for t in self.lines), bool, n),
        }
        object.__setattr__(self, "_cols", cols)

    def __len__(self):
        return len(self.lines)

    def chords(self, a, b) -> np.ndarray:
        """Chord lengths of segments ``a[k] -> b[k]`` through every line, shape (k, n_lines)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        c = self._cols
        if len(self.lines) == 0:
            return np.zeros((a.shape[0], 0))
        # Move both endpoints into each strip's local frame.
        rx = a[:, 0:1] - c["cx"]
        ry = a[:, 1:2] - c["cy"]
        dx = (b[:, 0] - a[:, 0])[:, None]
        dy = (b[:, 1] - a[:, 1])[:, None]
        ux = c["cos"] * rx + c["sin"] * ry
        uy = -c["sin"] * rx + c["cos"] * ry
        vx = c["cos"] * dx + c["sin"] * dy
        vy = -c["sin"] * dx + c["cos"] * dy
        t0 = np.zeros(ux.shape)
        t1 = np.ones(ux.shape)
        ok = np.ones(ux.shape, dtype=bool)
        for start, step, half in ((ux, vx, c["half_len"]), (uy, vy, c["half_wid"])):
            still = step == 0
            ok &= ~still | (np.abs(start) < half)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                ta = (-half - start) / step
                tb = (half - start) / step
            lo = np.where(still, -np.inf, np.minimum(ta, tb))
            hi = np.where(still, np.inf, np.maximum(ta, tb))
            t0 = np.maximum(t0, lo)
            t1 = np.minimum(t1, hi)
        seg_len = np.hypot(dx, dy)
        return np.where(ok & (t1 > t0), (t1 - t0) * seg_len, 0.0)

    def depths(self, a, b) -> tuple[np.ndarray, np.ndarray]:
        """In-leaf and out-of-leaf vegetation depth for each segment ``a[k] -> b[k]``."""
        ch = self.chords(a, b)
        leaf = self._cols["in_leaf"]
        return ch[:, leaf].sum(axis=1), ch[:, ~leaf].sum(axis=1)


def sample_tree_field(region: Region, density: float, line_length: float,
                      line_width: float, in_leaf_probability: float,
                      rng: np.random.Generator, orientation: float | None = None) -> TreeField:
    """Draw tree lines from a finite homogeneous Poisson point process.

    ``orientation`` fixes every line to one angle (street-aligned rows);
    by default orientations are uniform on [0, pi).  In-leaf states use one
    uniform per line compared against ``in_leaf_probability`` so that fields
    drawn from the same stream with different probabilities are nested.
    """
    if not (math.isfinite(density) and density >= 0):
        raise InvalidParameterError(f"tree density must be finite and >= 0, got {density}")
    if not (0.0 <= in_leaf_probability <= 1.0):
        raise InvalidParameterError("in_leaf_probability must lie in [0, 1]")
    count = int(rng.poisson(density * region.area))
    xs = region.origin.x + region.width * rng.random(count)
    ys = region.origin.y + region.height * rng.random(count)
    if orientation is None:
        angles = math.pi * rng.random(count)
    else:
        angles = np.full(count, float(orientation) % math.pi)
    leaf_u = rng.random(count)
    lines = tuple(
        TreeLine(Point(float(x), float(y)), float(t) % math.pi, line_length, line_width,
                 bool(u < in_leaf_probability))
        for x, y, t, u in zip(xs, ys, angles, leaf_u)
    )
    return TreeField(lines, density)


def sample_uniform_points(region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent uniform points in ``region`` as an (n, 2) array.

    Coordinates are drawn row by row, so the first ``m`` points of a draw of
    size ``n >= m`` equal a draw of size ``m`` from the same stream state.
    """
    if n < 0:
        raise InvalidParameterError("point count must be >= 0")
    u = rng.random((n, 2))
    return np.column_stack([region.origin.x + region.width * u[:, 0],
                            region.origin.y + region.height * u[:, 1]])


def _check_distinct(a: Point, b: Point):
    if a.x == b.x and a.y == b.y:
        raise InvalidParameterError("link endpoints must be distinct")


def segment_strip_chord(link_a: Point, link_b: Point, line: TreeLine) -> float:
    _check_distinct(link_a, link_b)
    return float(TreeField((line,)).chords(link_a.as_array(), link_b.as_array())[0, 0])


def vegetation_depth(link_a: Point, link_b: Point, field: TreeField) -> tuple[float, float]:
    _check_distinct(link_a, link_b)
    leaf, bare = field.depths(link_a.as_array(), link_b.as_array())
    return float(leaf[0]), float(bare[0])


def is_los(link_a: Point, link_b: Point, field: TreeField) -> bool:
    leaf, bare = vegetation_depth(link_a, link_b, field)
    return leaf + bare == 0.0


def pairwise_distance(a, b) -> np.ndarray:
    """Euclidean distances between rows of ``a`` (k, 2) and ``b`` (m, 2)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    return np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
