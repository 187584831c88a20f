"""Binary masks, polygons, boxes, and connected-component geometry.

Coordinate conventions used throughout the package:

* array grids are indexed ``bits[y, x]`` with shape ``(height, width)``;
* geometry tuples are ``(x, y)`` in continuous pixel coordinates;
* pixel ``(x, y)`` occupies the unit square ``[x, x+1) x [y, y+1)`` and its
  center sits at ``(x + 0.5, y + 0.5)``.

All operations are pure: identical inputs give bitwise-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError, InvalidBoxError, InvalidPolygonError

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass(eq=False)
class BinaryMask:
    """Row-major boolean pixel grid; True marks a distorted pixel."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2D grid, got shape {bits.shape}")
        self.bits = bits

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        """Number of distorted pixels."""
        return int(self.bits.sum())

    @property
    def empty(self) -> bool:
        return not self.bits.any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class Polygon:
    """Ordered (x, y) vertices in continuous pixel coordinates; at least 3."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise InvalidPolygonError(f"polygon needs >= 3 vertices, got {len(verts)}")
        if not all(np.isfinite(x) and np.isfinite(y) for x, y in verts):
            raise InvalidPolygonError("polygon has non-finite coordinates")
        object.__setattr__(self, "vertices", verts)

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=np.float64)


@dataclass(frozen=True, order=True)
class Box:
    """Half-open integer pixel box: x0/y0 inclusive, x1/y1 exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InvalidBoxError(f"inverted or empty box {self!r}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x0 and 0 <= self.y0 and self.x1 <= width and self.y1 <= height


@dataclass(frozen=True)
class ComponentRegion:
    """One maximal connected region of set pixels with its tight bounding box."""

    pixel_count: int
    bounding_box: Box
    pixels: frozenset[tuple[int, int]]

    def to_mask(self, width: int, height: int) -> BinaryMask:
        bits = np.zeros((height, width), dtype=bool)
        if self.pixels:
            xs, ys = zip(*self.pixels)
            bits[np.array(ys), np.array(xs)] = True
        return BinaryMask(bits)


def rasterize_polygon(poly: Polygon, width: int, height: int) -> BinaryMask:
    """Fill a polygon under the even-odd rule sampled at pixel centers.

    Pixel (x, y) is set iff its center (x + 0.5, y + 0.5) is inside the
    polygon under the even-odd (crossing parity) rule; anything outside the
    canvas is clipped. Self-intersecting polygons are handled by the same
    parity rule.
    """
    if width < 1 or height < 1:
        raise ValueError(f"canvas must be positive, got {width}x{height}")
    verts = poly.as_array()
    bits = np.zeros((height, width), dtype=bool)

    # Restrict the parity test to the polygon's bounding sub-grid.
    x_lo = max(0, int(np.floor(verts[:, 0].min() - 0.5)))
    x_hi = min(width - 1, int(np.ceil(verts[:, 0].max())))
    y_lo = max(0, int(np.floor(verts[:, 1].min() - 0.5)))
    y_hi = min(height - 1, int(np.ceil(verts[:, 1].max())))
    if x_lo > x_hi or y_lo > y_hi:
        return BinaryMask(bits)

    xc = np.arange(x_lo, x_hi + 1, dtype=np.float64) + 0.5  # (nx,)
    yc = np.arange(y_lo, y_hi + 1, dtype=np.float64) + 0.5  # (ny,)
    inside = np.zeros((yc.size, xc.size), dtype=bool)

    x1s, y1s = verts[:, 0], verts[:, 1]
    x2s, y2s = np.roll(x1s, -1), np.roll(y1s, -1)
    for x1, y1, x2, y2 in zip(x1s, y1s, x2s, y2s):
        # Half-open crossing test; horizontal edges never satisfy it.
        crosses = (y1 > yc) != (y2 > yc)  # (ny,)
        if not crosses.any():
            continue
        t = (yc[crosses] - y1) / (y2 - y1)
        x_at = x1 + t * (x2 - x1)  # (n_cross,)
        inside[crosses] ^= xc[None, :] < x_at[:, None]

    bits[y_lo : y_hi + 1, x_lo : x_hi + 1] = inside
    return BinaryMask(bits)


def _label_bits(bits: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCTURE_8 if connectivity == 8 else _STRUCTURE_4
    labels, n = ndimage.label(bits, structure=structure)
    return labels, int(n)


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[ComponentRegion]:
    """Partition the set pixels into maximal connected regions.

    Regions come back in a deterministic order, sorted by the (min y, min x)
    of their bounding boxes.
    """
    labels, n = _label_bits(mask.bits, connectivity)
    regions: list[ComponentRegion] = []
    for slice_y, slice_x in ndimage.find_objects(labels):
        sub = labels[slice_y, slice_x]
        # find_objects yields one slice pair per label, in label order
        label_id = len(regions) + 1
        ys, xs = np.nonzero(sub == label_id)
        pixels = frozenset(
            (int(x + slice_x.start), int(y + slice_y.start)) for x, y in zip(xs, ys)
        )
        box = Box(slice_x.start, slice_y.start, slice_x.stop, slice_y.stop)
        regions.append(ComponentRegion(len(pixels), box, pixels))
    regions.sort(key=lambda r: (r.bounding_box.y0, r.bounding_box.x0,
                                r.bounding_box.y1, r.bounding_box.x1))
    return regions


def mask_to_boxes(mask: BinaryMask, connectivity: int = 8) -> list[Box]:
    """Tight bounding box per connected component, in component order."""
    return [region.bounding_box for region in connected_components(mask, connectivity)]


def boxes_to_mask(boxes: list[Box], width: int, height: int) -> BinaryMask:
    """Union of box interiors; lets box-output predictors be scored as masks."""
    bits = np.zeros((height, width), dtype=bool)
    for box in boxes:
        if not box.within(width, height):
            raise InvalidBoxError(f"box {box!r} outside {width}x{height} canvas")
        bits[box.y0 : box.y1, box.x0 : box.x1] = True
    return BinaryMask(bits)


def require_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatchError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull of (n, 2) points, counter-clockwise."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def densify_ring(points: np.ndarray, target: int = 20) -> np.ndarray:
    """Resample a closed ring of vertices to ~target points along its perimeter."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) >= target:
        return pts
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    perimeter = seg.sum()
    if perimeter <= 0:
        return pts
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    samples = np.linspace(0.0, perimeter, target, endpoint=False)
    out = np.empty((target, 2))
    for i, s in enumerate(samples):
        k = int(np.searchsorted(cum, s, side="right")) - 1
        k = min(k, len(seg) - 1)
        t = (s - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        out[i] = closed[k] * (1 - t) + closed[k + 1] * t
    return out
