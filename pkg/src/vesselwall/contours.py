"""Label masks -> closed contours, wall-area merging, and lifting contours to
oriented 3D surface samples for reconstruction."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath
from skimage import measure

from .segmenter import BG, LUMEN, WALL, LabelMask2D, SegmenterError
from .volume import PlanePose


class ContourError(Exception):
    pass


@dataclass(frozen=True)
class Contour2D:
    """Closed simple polygon in plane (u, v) mm coordinates, CCW."""

    vertices: np.ndarray  # (n, 2), implicitly closed (last != first)
    kind: str  # "lumen_boundary" | "outer_wall_boundary"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ContourError("contour needs at least 3 2D vertices")
        if signed_area(v) <= 0:
            raise ContourError("contour must be CCW with positive area")
        object.__setattr__(self, "vertices", v)
        v.setflags(write=False)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @property
    def perimeter(self) -> float:
        closed = np.vstack([self.vertices, self.vertices[:1]])
        return float(np.sum(np.linalg.norm(np.diff(closed, axis=0), axis=1)))

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


@dataclass(frozen=True)
class ContourSet:
    pose: PlanePose
    lumen: tuple
    outer: tuple

    @property
    def empty(self) -> bool:
        return not self.lumen and not self.outer


@dataclass(frozen=True)
class OrientedPointCloud:
    """Surface samples with outward unit normals."""

    points: np.ndarray   # (n, 3)
    normals: np.ndarray  # (n, 3)
    surface: str         # "lumen_solid" | "outer_solid"

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if len(p) != len(n):
            raise ContourError("points and normals must have equal length")
        if len(n) and np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-9:
            raise ContourError("normals must be unit length")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)

    def __len__(self):
        return len(self.points)


def signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _ensure_ccw(vertices: np.ndarray) -> np.ndarray:
    return vertices if signed_area(vertices) > 0 else vertices[::-1]


def mask_to_contours(mask: LabelMask2D, min_area: float = 1.0) -> ContourSet:
    """Marching-squares 0.5-isolines of the lumen and lumen+wall indicators.

    Components enclosing less than min_area mm^2 are dropped. Vertices are in
    center-anchored plane mm coordinates.
    """
    nu, nv = mask.size
    sp = mask.spacing

    def extract(indicator, kind):
        padded = np.pad(indicator.astype(float), 1)
        out = []
        for loop in measure.find_contours(padded, 0.5):
            if np.linalg.norm(loop[0] - loop[-1]) > 1e-9:
                continue  # open contour (cannot happen after padding)
            idx = loop[:-1] - 1.0  # unpad; rows are u, cols are v
            uv = np.column_stack([
                (idx[:, 0] - (nu - 1) / 2.0) * sp,
                (idx[:, 1] - (nv - 1) / 2.0) * sp,
            ])
            uv = _ensure_ccw(uv)
            if abs(signed_area(uv)) < min_area:
                continue
            out.append(Contour2D(uv, kind))
        # drop hole boundaries: a contour nested inside another of the same
        # family bounds a cavity, not a solid
        solid = [c for c in out if not any(
            o is not c and MplPath(o.vertices).contains_point(c.centroid)
            and o.area > c.area for o in out)]
        return tuple(solid)

    lumen = extract(mask.labels == LUMEN, "lumen_boundary")
    outer = extract((mask.labels == LUMEN) | (mask.labels == WALL),
                    "outer_wall_boundary")
    return ContourSet(mask.pose, lumen, outer)


def merge_wall_regions(a: LabelMask2D, b: LabelMask2D) -> LabelMask2D:
    """Join two masks on the same grid: lumen union wins over wall union."""
    if not a.same_geometry(b):
        raise ContourError("cannot merge masks with different geometry")
    lumen = (a.labels == LUMEN) | (b.labels == LUMEN)
    wall = ((a.labels == WALL) | (b.labels == WALL)) & ~lumen
    out = np.zeros(a.size, dtype=np.uint8)
    out[wall] = WALL
    out[lumen] = LUMEN
    return LabelMask2D(a.pose, a.spacing, out)


def resample_contour(vertices: np.ndarray, step: float) -> np.ndarray:
    """Resample a closed polygon at uniform arc-length step (>= 3 samples)."""
    closed = np.vstack([vertices, vertices[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = max(3, int(np.floor(total / step)))
    arcs = np.linspace(0.0, total, n, endpoint=False)
    i = np.clip(np.searchsorted(cum, arcs, side="right") - 1, 0, len(seg) - 1)
    t = (arcs - cum[i]) / seg[i]
    return closed[i] * (1 - t)[:, None] + closed[i + 1] * t[:, None]


def _outward_normals_2d(vertices: np.ndarray) -> np.ndarray:
    """Per-vertex outward normals of a CCW polygon (mean of edge normals)."""
    nxt = np.roll(vertices, -1, axis=0)
    prv = np.roll(vertices, 1, axis=0)
    edge_out = vertices - prv
    edge_in = nxt - vertices
    # CCW interior is on the left; outward normal of edge (dx,dy) is (dy,-dx)
    n = np.column_stack([edge_out[:, 1] + edge_in[:, 1],
                         -(edge_out[:, 0] + edge_in[:, 0])])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    norm[norm < 1e-12] = 1.0
    return n / norm


def _plane_to_world(pose: PlanePose, uv: np.ndarray) -> np.ndarray:
    return pose.center + uv[:, :1] * pose.axis_u + uv[:, 1:2] * pose.axis_v


def _cap_samples(contours, pose: PlanePose, sign: float, step: float):
    """Disk samples filling the contour interiors, normals = sign * plane normal."""
    pts = []
    for c in contours:
        lo = c.vertices.min(axis=0)
        hi = c.vertices.max(axis=0)
        us = np.arange(lo[0], hi[0] + step, step)
        vs = np.arange(lo[1], hi[1] + step, step)
        if not len(us) or not len(vs):
            continue
        grid = np.stack(np.meshgrid(us, vs, indexing="ij"), axis=-1).reshape(-1, 2)
        inside = MplPath(c.vertices).contains_points(grid)
        if np.any(inside):
            pts.append(grid[inside])
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3))
    uv = np.vstack(pts)
    world = _plane_to_world(pose, uv)
    normals = np.tile(sign * pose.normal, (len(world), 1))
    return world, normals


def lift_and_sample(cset: ContourSet, step: float, end_caps=None):
    """Lift a contour set to oriented 3D samples.

    Lumen contours feed the lumen solid, outer contours the outer solid, each
    with in-plane outward normals mapped to world. `end_caps` is an optional
    +1/-1 sign: cap disks are added over both contour families with normals
    sign * plane normal (use at terminal planes so the solids close).

    Returns (lumen_solid cloud, outer_solid cloud).
    """
    if step <= 0:
        raise ContourError("sampling step must be positive")

    def lift(contours):
        pts, nrm = [], []
        for c in contours:
            uv = resample_contour(c.vertices, step)
            n2 = _outward_normals_2d(uv)
            pts.append(_plane_to_world(cset.pose, uv))
            nrm.append(n2[:, :1] * cset.pose.axis_u + n2[:, 1:2] * cset.pose.axis_v)
        if not pts:
            return np.zeros((0, 3)), np.zeros((0, 3))
        n = np.vstack(nrm)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return np.vstack(pts), n

    lp, ln = lift(cset.lumen)
    op, on = lift(cset.outer)
    if end_caps is not None:
        sign = float(end_caps)
        cp, cn = _cap_samples(cset.lumen, cset.pose, sign, step)
        lp, ln = np.vstack([lp, cp]), np.vstack([ln, cn])
        cp, cn = _cap_samples(cset.outer, cset.pose, sign, step)
        op, on = np.vstack([op, cp]), np.vstack([on, cn])
    return (OrientedPointCloud(lp, ln, "lumen_solid"),
            OrientedPointCloud(op, on, "outer_solid"))


# ---------------------------------------------------------------------------
# annotation files (shared with metrics)


def rasterize_contours(cset: ContourSet, size, spacing: float) -> LabelMask2D:
    """Rasterize a contour set back to a label mask on the pose's pixel grid."""
    nu, nv = size
    iu = (np.arange(nu) - (nu - 1) / 2.0) * spacing
    iv = (np.arange(nv) - (nv - 1) / 2.0) * spacing
    grid = np.stack(np.meshgrid(iu, iv, indexing="ij"), axis=-1).reshape(-1, 2)
    inside_outer = np.zeros(len(grid), dtype=bool)
    for c in cset.outer:
        inside_outer |= MplPath(c.vertices).contains_points(grid)
    inside_lumen = np.zeros(len(grid), dtype=bool)
    for c in cset.lumen:
        inside_lumen |= MplPath(c.vertices).contains_points(grid)
    labels = np.zeros(len(grid), dtype=np.uint8)
    labels[inside_outer] = WALL
    labels[inside_lumen] = LUMEN
    return LabelMask2D(cset.pose, spacing, labels.reshape(size))


def annotation_to_doc(plane_id: int, vessel: str, cset: ContourSet,
                      spacing: float, size) -> dict:
    return {
        "plane_id": plane_id,
        "vessel": vessel,
        "pose": {
            "center": cset.pose.center.tolist(),
            "axis_u": cset.pose.axis_u.tolist(),
            "axis_v": cset.pose.axis_v.tolist(),
            "normal": cset.pose.normal.tolist(),
        },
        "spacing_mm": spacing,
        "size": list(size),
        "inner": [c.vertices.tolist() for c in cset.lumen],
        "outer": [c.vertices.tolist() for c in cset.outer],
    }


def doc_to_annotation(doc: dict):
    pose = PlanePose(
        np.asarray(doc["pose"]["center"], float),
        np.asarray(doc["pose"]["axis_u"], float),
        np.asarray(doc["pose"]["axis_v"], float),
        np.asarray(doc["pose"]["normal"], float),
    )
    lumen = tuple(Contour2D(_ensure_ccw(np.asarray(v, float)), "lumen_boundary")
                  for v in doc["inner"])
    outer = tuple(Contour2D(_ensure_ccw(np.asarray(v, float)), "outer_wall_boundary")
                  for v in doc["outer"])
    cset = ContourSet(pose, lumen, outer)
    return (int(doc["plane_id"]), doc["vessel"], cset,
            float(doc["spacing_mm"]), tuple(doc["size"]))


def save_annotations(docs, path):
    Path(path).write_text(json.dumps(list(docs), indent=1) + "\n", encoding="utf-8")


def load_annotations(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [doc_to_annotation(d) for d in doc]
