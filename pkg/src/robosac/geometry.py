"""Oriented bird's-eye-view boxes, detection sets and rotated IoU."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "OrientedBox",
    "DetectionSet",
    "normalize_yaw",
    "box_corners",
    "rotated_iou",
    "pairwise_iou",
]

# column layout of DetectionSet.data
X, Y, LENGTH, WIDTH, YAW, SCORE = range(6)
_FIELDS = ("x", "y", "l", "w", "yaw", "score")
_SCALAR_PAIRS = 32


def normalize_yaw(yaw):
    """Wrap angles (scalar or array) into [-pi, pi)."""
    if isinstance(yaw, float):
        return (yaw + math.pi) % (2 * math.pi) - math.pi
    return (np.asarray(yaw, dtype=float) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class OrientedBox:
    center_x: float
    center_y: float
    length: float
    width: float
    yaw: float = 0.0
    score: float = 1.0

    def __post_init__(self) -> None:
        values = (self.center_x, self.center_y, self.length, self.width, self.yaw, self.score)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite box coordinates: {values}")
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"degenerate box: length={self.length}, width={self.width}")
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> list[tuple[float, float]]:
        """Counter-clockwise corner list."""
        return _row_corners(self.as_row())

    def as_row(self) -> tuple[float, ...]:
        return (self.center_x, self.center_y, self.length, self.width, self.yaw, self.score)


class DetectionSet:
    """An ordered, immutable collection of oriented boxes for one frame.

    Boxes are stored as an ``(n, 6)`` float array with columns
    ``x, y, l, w, yaw, score``.
    """

    __slots__ = ("data", "frame_id")

    def __init__(self, data: Any = None, frame_id: int = 0):
        arr = np.zeros((0, 6)) if data is None else np.array(data, dtype=float, copy=True)
        if arr.size == 0:
            arr = arr.reshape(0, 6)
        if arr.ndim != 2 or arr.shape[1] != 6:
            raise ValueError(f"detection array must have shape (n, 6), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("detection set contains non-finite values")
        if np.any(arr[:, LENGTH] <= 0) or np.any(arr[:, WIDTH] <= 0):
            raise ValueError("detection set contains degenerate boxes")
        arr[:, YAW] = normalize_yaw(arr[:, YAW])
        arr.setflags(write=False)
        self.data = arr
        self.frame_id = int(frame_id)

    @classmethod
    def _wrap(cls, arr: np.ndarray, frame_id: int) -> "DetectionSet":
        """Skip validation for arrays derived from already-valid sets."""
        obj = cls.__new__(cls)
        arr = arr.reshape(-1, 6)
        arr.setflags(write=False)
        obj.data = arr
        obj.frame_id = int(frame_id)
        return obj

    @classmethod
    def from_boxes(cls, boxes: Iterable[OrientedBox], frame_id: int = 0) -> "DetectionSet":
        rows = [b.as_row() for b in boxes]
        return cls(np.array(rows, dtype=float).reshape(-1, 6), frame_id)

    @property
    def boxes(self) -> list[OrientedBox]:
        return [OrientedBox(*row) for row in self.data.tolist()]

    @property
    def scores(self) -> np.ndarray:
        return self.data[:, SCORE]

    @property
    def centers(self) -> np.ndarray:
        return self.data[:, :2]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __iter__(self) -> Iterator[OrientedBox]:
        return iter(self.boxes)

    def __getitem__(self, idx) -> "DetectionSet | OrientedBox":
        if isinstance(idx, (int, np.integer)):
            return OrientedBox(*self.data[idx].tolist())
        return DetectionSet._wrap(self.data[idx], self.frame_id)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DetectionSet):
            return NotImplemented
        return self.frame_id == other.frame_id and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"DetectionSet(frame_id={self.frame_id}, n={len(self)})"

    def within(self, center: Sequence[float], radius: float) -> "DetectionSet":
        """Boxes whose centers lie inside the disc (boundary included)."""
        dx = self.data[:, X] - center[0]
        dy = self.data[:, Y] - center[1]
        return DetectionSet._wrap(self.data[dx * dx + dy * dy <= radius * radius], self.frame_id)

    def with_frame(self, frame_id: int) -> "DetectionSet":
        return DetectionSet._wrap(self.data, frame_id)

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "boxes": [dict(zip(_FIELDS, row)) for row in self.data.tolist()],
        }

    @classmethod
    def from_dict(cls, record: dict) -> "DetectionSet":
        rows = [[float(b[k]) if k != "score" else float(b.get(k, 1.0)) for k in _FIELDS]
                for b in record.get("boxes", [])]
        return cls(np.array(rows, dtype=float).reshape(-1, 6), record.get("frame_id", 0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DetectionSet":
        return cls.from_dict(json.loads(text))


def box_corners(data: np.ndarray) -> np.ndarray:
    """Counter-clockwise corners, shape ``(n, 4, 2)``, for an ``(n, >=5)`` array."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    c, s = np.cos(data[:, YAW]), np.sin(data[:, YAW])
    hl, hw = data[:, LENGTH] / 2, data[:, WIDTH] / 2
    dx = np.stack([hl, -hl, -hl, hl], axis=1)
    dy = np.stack([hw, hw, -hw, -hw], axis=1)
    xs = data[:, X, None] + c[:, None] * dx - s[:, None] * dy
    ys = data[:, Y, None] + s[:, None] * dx + c[:, None] * dy
    return np.stack([xs, ys], axis=2)


def _row_corners(row, ox: float = 0.0, oy: float = 0.0) -> list[tuple[float, float]]:
    """Corners of one box row, relative to the origin ``(ox, oy)``."""
    x, y, length, width, yaw = row[:5]
    x, y = x - ox, y - oy
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2, width / 2
    return [(x + c * dx - s * dy, y + s * dx + c * dy)
            for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))]


def _clip(subject: list[tuple[float, float]], clipper: list[tuple[float, float]]):
    """Sutherland-Hodgman clip of a convex polygon by a CCW convex clipper."""
    out = subject
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        px, py = inp[-1]
        p_side = ex * (py - ay) - ey * (px - ax)
        for qx, qy in inp:
            q_side = ex * (qy - ay) - ey * (qx - ax)
            if q_side >= 0:
                if p_side < 0:
                    t = p_side / (p_side - q_side)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
                out.append((qx, qy))
            elif p_side >= 0:
                t = p_side / (p_side - q_side)
                out.append((px + t * (qx - px), py + t * (qy - py)))
            px, py, p_side = qx, qy, q_side
    return out


def _shoelace(poly: list[tuple[float, float]]) -> float:
    if len(poly) < 3:
        return 0.0
    area = 0.0
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        area += x0 * y1 - x1 * y0
        x0, y0 = x1, y1
    return abs(area) / 2


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over union of two oriented rectangles by polygon clipping."""
    if a.area <= 0 or b.area <= 0:
        raise ValueError("rotated_iou needs boxes with positive area")
    # cheap reject: circumscribed circles do not touch
    reach = (math.hypot(a.length, a.width) + math.hypot(b.length, b.width)) / 2
    if math.hypot(a.center_x - b.center_x, a.center_y - b.center_y) >= reach:
        return 0.0
    if a.as_row()[:5] == b.as_row()[:5]:
        return 1.0
    # clip in a frame centered on ``a`` so far-away small boxes keep their precision
    ox, oy = a.center_x, a.center_y
    inter = _shoelace(_clip(_row_corners(a.as_row(), ox, oy), _row_corners(b.as_row(), ox, oy)))
    union = a.area + b.area - inter
    return max(0.0, min(1.0, inter / union))


def _batched_intersection(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Intersection areas of paired convex quads ``ca[i]``, ``cb[i]`` (each CCW).

    The intersection polygon's vertices are the corners of each quad lying in
    the other plus all edge-edge crossings; they are ordered by angle around
    their centroid and fed to the shoelace formula.
    """
    m = ca.shape[0]
    tol = 1e-9

    def inside(pts, quad):
        # pts (m, k, 2) against CCW quad (m, 4, 2)
        a = quad[:, None, :, :]
        e = np.roll(quad, -1, axis=1)[:, None, :, :] - a
        rel = pts[:, :, None, :] - a
        cross = e[..., 0] * rel[..., 1] - e[..., 1] * rel[..., 0]
        return np.all(cross >= -tol, axis=2)

    a_in_b = inside(ca, cb)
    b_in_a = inside(cb, ca)

    p = ca[:, :, None, :]
    r = (np.roll(ca, -1, axis=1) - ca)[:, :, None, :]
    q = cb[:, None, :, :]
    s = (np.roll(cb, -1, axis=1) - cb)[:, None, :, :]
    rxs = r[..., 0] * s[..., 1] - r[..., 1] * s[..., 0]
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[..., 0] * s[..., 1] - qp[..., 1] * s[..., 0]) / rxs
        u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / rxs
    cross_ok = (np.abs(rxs) > 1e-12) & (t >= -tol) & (t <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)
    cross_pts = (p + np.where(cross_ok, t, 0.0)[..., None] * r).reshape(m, 16, 2)

    pts = np.concatenate([ca, cb, cross_pts], axis=1)
    valid = np.concatenate([a_in_b, b_in_a, cross_ok.reshape(m, 16)], axis=1)
    count = valid.sum(axis=1)

    w = valid[..., None].astype(float)
    centroid = (pts * w).sum(axis=1) / np.maximum(count, 1)[:, None]
    rel = pts - centroid[:, None, :]
    ang = np.where(valid, np.arctan2(rel[..., 1], rel[..., 0]), np.inf)
    order = np.argsort(ang, axis=1, kind="stable")
    pts = np.take_along_axis(pts, order[..., None], axis=1)
    valid = np.take_along_axis(valid, order, axis=1)
    # pad invalid slots with the first vertex so they add zero area
    pts = np.where(valid[..., None], pts, pts[:, :1, :])
    nxt = np.roll(pts, -1, axis=1)
    area = 0.5 * np.abs(np.sum(pts[..., 0] * nxt[..., 1] - nxt[..., 0] * pts[..., 1], axis=1))
    return np.where(count >= 3, area, 0.0)


def pairwise_iou(a: DetectionSet | np.ndarray, b: DetectionSet | np.ndarray) -> np.ndarray:
    """IoU matrix of shape ``(len(a), len(b))``.

    Pairs whose circumscribed circles are disjoint are skipped; the rest are
    evaluated in one vectorized batch.
    """
    da = a.data if isinstance(a, DetectionSet) else np.asarray(a, dtype=float).reshape(-1, 6)
    db = b.data if isinstance(b, DetectionSet) else np.asarray(b, dtype=float).reshape(-1, 6)
    out = np.zeros((da.shape[0], db.shape[0]))
    if out.size == 0:
        return out
    ra = np.hypot(da[:, LENGTH], da[:, WIDTH]) / 2
    rb = np.hypot(db[:, LENGTH], db[:, WIDTH]) / 2
    dist = np.hypot(da[:, None, X] - db[None, :, X], da[:, None, Y] - db[None, :, Y])
    ii, jj = np.nonzero(dist < ra[:, None] + rb[None, :])
    if ii.size == 0:
        return out
    area_a = da[ii, LENGTH] * da[ii, WIDTH]
    area_b = db[jj, LENGTH] * db[jj, WIDTH]
    if ii.size <= _SCALAR_PAIRS:
        # numpy call overhead dominates for a handful of pairs
        rows_a, rows_b = da.tolist(), db.tolist()
        ca: dict[int, list] = {}
        inter_l = []
        for i, j in zip(ii.tolist(), jj.tolist()):
            ox, oy = rows_a[i][X], rows_a[i][Y]
            if i not in ca:
                ca[i] = _row_corners(rows_a[i], ox, oy)
            inter_l.append(_shoelace(_clip(ca[i], _row_corners(rows_b[j], ox, oy))))
        inter = np.array(inter_l)
    else:
        origin = da[ii, None, :2]
        inter = _batched_intersection(box_corners(da)[ii] - origin, box_corners(db)[jj] - origin)
    out[ii, jj] = np.clip(inter / (area_a + area_b - inter), 0.0, 1.0)
    same = np.all(da[ii, :5] == db[jj, :5], axis=1)
    out[ii[same], jj[same]] = 1.0
    return out
