"""Border following over binary masks: outer contours, bounding boxes, areas.

Each 8-connected foreground component yields one detection consisting of its
outer border trace, tight bounding box, and pixel count. Components are
enumerated in raster-scan order of their topmost-leftmost pixel, which fixes
tie-breaking for multi-sign images.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .mask import BinaryMask

DEFAULT_MIN_AREA = 16
DEFAULT_MIN_SIDE = 4

OUTER = "outer"
HOLE = "hole"

# 8-neighborhood in counterclockwise order (image coordinates, y grows down):
# E, NE, N, NW, W, SW, S, SE. Clockwise is the same ring walked backwards.
_CCW = ((1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1))
_CCW_INDEX = {d: i for i, d in enumerate(_CCW)}


class ContourError(Exception):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel-coordinate box."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ContourError(f"degenerate bounding box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass
class Contour:
    """Closed border walk; consecutive points are 8-connected neighbors.

    Points may repeat where the walk doubles back along one-pixel-wide
    protrusions. A single point represents an isolated pixel.
    """

    points: list[tuple[int, int]]
    kind: str = OUTER

    def __post_init__(self):
        if not self.points:
            raise ContourError("contour must contain at least one point")
        if self.kind not in (OUTER, HOLE):
            raise ContourError(f"unknown contour kind {self.kind!r}")


@dataclass
class Detection:
    contour: Contour
    bbox: BoundingBox
    area: int


@dataclass
class DetectionSet:
    mask_dims: tuple[int, int]  # (width, height)
    detections: list[Detection]

    def __len__(self) -> int:
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)


def _components_by_runs(bits: np.ndarray):
    """Label 8-connected components by run-length union-find.

    Each maximal horizontal run of foreground becomes a node; runs in
    adjacent rows whose column spans touch (within one column, for the
    diagonal case) are unioned. Unions keep the smaller run id as root, so a
    component's root is its raster-first run and root order is raster-scan
    order of the topmost-leftmost pixel.

    Returns a list of (start_x, start_y, bbox, area) per component."""
    h, w = bits.shape
    # One zero separator column keeps runs from crossing row boundaries when
    # the whole grid is flattened for a single edge-detection pass.
    stride = w + 1
    grid = np.zeros((h, stride), dtype=np.int8)
    grid[:, :w] = bits
    flat = np.concatenate((np.zeros(1, dtype=np.int8), grid.ravel(), np.zeros(1, dtype=np.int8)))
    edges = np.flatnonzero(np.diff(flat))
    starts = edges[0::2]
    run_y = (starts // stride).tolist()
    run_x0 = (starts % stride).tolist()
    run_x1 = ((edges[1::2] - 1) % stride).tolist()
    n = len(run_y)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    prev_lo = prev_hi = 0  # run-index range of the previous populated row
    i = 0
    while i < n:
        y = run_y[i]
        row_lo = i
        while i < n and run_y[i] == y:
            i += 1
        row_hi = i
        if prev_hi > prev_lo and run_y[prev_lo] == y - 1:
            lag = prev_lo
            for j in range(row_lo, row_hi):
                x0, x1 = run_x0[j], run_x1[j]
                while lag < prev_hi and run_x1[lag] < x0 - 1:
                    lag += 1
                probe = lag
                while probe < prev_hi and run_x0[probe] <= x1 + 1:
                    ra, rb = find(j), find(probe)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
                    probe += 1
        prev_lo, prev_hi = row_lo, row_hi

    stats: dict[int, list[int]] = {}  # root -> [x_min, y_min, x_max, y_max, area]
    for run_id in range(n):
        root = find(run_id)
        x0, x1, y = run_x0[run_id], run_x1[run_id], run_y[run_id]
        entry = stats.get(root)
        if entry is None:
            stats[root] = [x0, y, x1, y, x1 - x0 + 1]
        else:
            if x0 < entry[0]:
                entry[0] = x0
            if x1 > entry[2]:
                entry[2] = x1
            entry[3] = y  # runs arrive in raster order
            entry[4] += x1 - x0 + 1
    components = []
    for root in sorted(stats):
        x_min, y_min, x_max, y_max, area = stats[root]
        components.append(
            (run_x0[root], run_y[root], BoundingBox(x_min, y_min, x_max, y_max), area)
        )
    return components


def _follow_border(rows, w: int, h: int, start: tuple[int, int], prev: tuple[int, int]):
    """Trace one closed border starting at `start`, entered from background `prev`.

    `prev` lies west of `start` for outer borders and east for hole borders.
    Returns the ordered border walk."""

    def fg(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and bool(rows[y][x])

    sx, sy = start
    # Search clockwise from prev for the first foreground neighbor.
    first = None
    start_idx = _CCW_INDEX[(prev[0] - sx, prev[1] - sy)]
    for step in range(8):
        dx, dy = _CCW[(start_idx - step) % 8]
        if fg(sx + dx, sy + dy):
            first = (sx + dx, sy + dy)
            break
    if first is None:
        return [start]  # isolated pixel

    points = [start]
    before, current = first, start
    while True:
        # Counterclockwise search around `current`, starting just past `before`.
        cx, cy = current
        idx = _CCW_INDEX[(before[0] - cx, before[1] - cy)]
        nxt = None
        for step in range(1, 9):
            dx, dy = _CCW[(idx + step) % 8]
            if fg(cx + dx, cy + dy):
                nxt = (cx + dx, cy + dy)
                break
        if nxt == start and current == first:
            break
        before, current = current, nxt
        points.append(current)
    return points


def trace_contours(mask: BinaryMask) -> DetectionSet:
    """Detect all 8-connected foreground components of the mask.

    Each detection carries the component's outer border walk, its tight
    bounding box, and its foreground pixel count. An empty mask yields an
    empty detection list."""
    bits = mask.bits
    h, w = bits.shape
    rows = bits.tolist()
    detections: list[Detection] = []
    for x, y, bbox, area in _components_by_runs(bits):
        border = _follow_border(rows, w, h, (x, y), (x - 1, y))
        detections.append(Detection(Contour(border, OUTER), bbox, area))
    return DetectionSet((w, h), detections)


def trace_borders(mask: BinaryMask) -> list[Contour]:
    """Trace all borders, outer and hole, in raster order of their start pixel.

    Hole borders are reported for completeness; detections use outer borders
    only."""
    contours = [d.contour for d in trace_contours(mask)]
    bits = mask.bits
    h, w = bits.shape
    rows = bits.tolist()
    # A hole is a 4-connected background component that never touches the
    # image border. Its topmost-leftmost pixel always has foreground west of it.
    visited = [bytearray(w) for _ in range(h)]
    holes: list[tuple[int, int]] = []
    for y in range(h):
        for x in range(w):
            if rows[y][x] or visited[y][x]:
                continue
            queue = deque([(x, y)])
            visited[y][x] = 1
            touches_border = False
            while queue:
                cx, cy = queue.popleft()
                if cx in (0, w - 1) or cy in (0, h - 1):
                    touches_border = True
                for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nx, ny = cx + dx, cy + dy
                    if 0 <= nx < w and 0 <= ny < h and not rows[ny][nx] and not visited[ny][nx]:
                        visited[ny][nx] = 1
                        queue.append((nx, ny))
            if not touches_border:
                holes.append((x, y))
    for hx, hy in holes:
        walk = _follow_border(rows, w, h, (hx - 1, hy), (hx, hy))
        contours.append(Contour(walk, HOLE))
    return contours


def filter_detections(
    detections: DetectionSet, min_area: int = 0, min_side: int = 0
) -> DetectionSet:
    """Drop detections below the area or side-length thresholds; order preserved."""
    if min_area < 0 or min_side < 0:
        raise ContourError("thresholds must be >= 0")
    kept = [
        d
        for d in detections.detections
        if d.area >= min_area and d.bbox.width >= min_side and d.bbox.height >= min_side
    ]
    return DetectionSet(detections.mask_dims, kept)


def format_detection_records(sample_id: str, detections: DetectionSet) -> list[str]:
    """One tab-separated record per detection:
    sample_id, index, x_min, y_min, x_max, y_max, area."""
    return [
        "\t".join(
            str(v)
            for v in (sample_id, i, d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max, d.area)
        )
        for i, d in enumerate(detections.detections)
    ]


def parse_detection_record(line: str) -> tuple[str, int, BoundingBox, int]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7:
        raise ContourError(f"expected 7 tab-separated fields, got {len(parts)}")
    sample_id = parts[0]
    index, x_min, y_min, x_max, y_max, area = (int(p) for p in parts[1:])
    return sample_id, index, BoundingBox(x_min, y_min, x_max, y_max), area
