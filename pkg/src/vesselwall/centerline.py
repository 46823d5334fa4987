"""Carotid centerline tree: arc-length tools, stable frames, bifurcation axis,
and the cross-section sampling plan."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import PlanePose

BRANCH_ORDER = ("CCA", "ICA", "ECA", "BIF")


class CenterlineError(Exception):
    pass


@dataclass(frozen=True)
class PolyLine3:
    """Ordered 3D polyline in world mm."""

    points: np.ndarray  # (n, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise CenterlineError("polyline needs at least two 3D points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg < 1e-12):
            raise CenterlineError("polyline has duplicate consecutive points")
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    @property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])

    def point_at(self, arc_s: float) -> np.ndarray:
        """Point at arc length arc_s by linear interpolation along segments."""
        cum = self.cumulative
        if arc_s < -1e-9 or arc_s > cum[-1] + 1e-9:
            raise CenterlineError(f"arc length {arc_s} outside [0, {cum[-1]}]")
        s = min(max(arc_s, 0.0), cum[-1])
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(cum) - 2)
        seg = cum[i + 1] - cum[i]
        t = (s - cum[i]) / seg
        return (1 - t) * self.points[i] + t * self.points[i + 1]


@dataclass(frozen=True)
class CenterlineTree:
    """CCA/ICA/ECA polylines joined at one bifurcation point.

    cca runs proximal -> distal and ends at the bifurcation point; ica and
    eca start there. Branch identities are declared by the caller.
    """

    cca: PolyLine3
    ica: PolyLine3
    eca: PolyLine3

    def __post_init__(self):
        bif = self.cca.points[-1]
        for name, branch in (("ica", self.ica), ("eca", self.eca)):
            if np.linalg.norm(branch.points[0] - bif) > 1e-6:
                raise CenterlineError(
                    f"{name} does not start at the cca bifurcation point")

    @property
    def bifurcation_point(self) -> np.ndarray:
        return self.cca.points[-1]

    def branch(self, name: str) -> PolyLine3:
        return {"CCA": self.cca, "ICA": self.ica, "ECA": self.eca}[name]


@dataclass(frozen=True)
class BifurcationAxis:
    origin: np.ndarray
    direction: np.ndarray  # unit
    extent: float

    def __post_init__(self):
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise CenterlineError("bifurcation axis direction is not unit length")
        if self.extent <= 0:
            raise CenterlineError("bifurcation axis extent must be positive")


@dataclass(frozen=True)
class PlanEntry:
    pose: PlanePose
    branch: str  # CCA | ICA | ECA | BIF
    arc_s: float


@dataclass(frozen=True)
class SamplingPlan:
    entries: tuple
    sd: float
    use_bifurcation_axis: bool


def resample_polyline(line: PolyLine3, step: float) -> PolyLine3:
    """Resample at arc lengths 0, step, 2*step, ... plus the original endpoint."""
    if step <= 0:
        raise CenterlineError("step must be positive")
    total = line.length
    if step > total + 1e-12:
        raise CenterlineError(f"step {step} exceeds polyline length {total}")
    arcs = list(np.arange(0.0, total, step))
    if total - arcs[-1] > 1e-9:
        arcs.append(total)
    else:
        arcs[-1] = total
    pts = np.array([line.point_at(s) for s in arcs])
    # drop near-duplicates that arise when step divides the length exactly
    keep = [0]
    for i in range(1, len(pts)):
        if np.linalg.norm(pts[i] - pts[keep[-1]]) > 1e-12:
            keep.append(i)
    return PolyLine3(pts[keep])


def tangent_at(line: PolyLine3, arc_s: float, h_cap: float = 1.0) -> np.ndarray:
    """Unit tangent by central difference over +-h; one-sided at the endpoints."""
    total = line.length
    if arc_s < -1e-9 or arc_s > total + 1e-9:
        raise CenterlineError(f"arc length {arc_s} outside [0, {total}]")
    s = min(max(arc_s, 0.0), total)
    h = min(h_cap, float(np.min(line.segment_lengths)))
    lo, hi = s - h, s + h
    if lo < 0.0:
        lo = 0.0
    if hi > total:
        hi = total
    d = line.point_at(hi) - line.point_at(lo)
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise CenterlineError("degenerate tangent (coincident difference points)")
    return d / norm


def frames_along(line: PolyLine3, arcs) -> list:
    """Rotation-minimizing frames at the given sorted arc lengths.

    Uses the double-reflection construction; the first frame's u axis is
    seeded from the world axis least aligned with the initial tangent.
    """
    arcs = [float(s) for s in arcs]
    if any(b < a for a, b in zip(arcs, arcs[1:])):
        raise CenterlineError("arc lengths must be sorted ascending")
    total = line.length
    if arcs and (arcs[0] < -1e-9 or arcs[-1] > total + 1e-9):
        raise CenterlineError("arc lengths out of range")
    poses = []
    prev_p = prev_t = prev_u = None
    for s in arcs:
        p = line.point_at(s)
        t = tangent_at(line, s)
        if prev_p is None:
            pose = PlanePose.from_normal(p, t)
            u = pose.axis_u
        else:
            # double reflection: reflect (u, t) through the chord bisector,
            # then through the bisector of the reflected and new tangents
            d1 = p - prev_p
            c1 = np.dot(d1, d1)
            if c1 < 1e-24:
                u, t = prev_u, prev_t
            else:
                u_r = prev_u - (2.0 / c1) * np.dot(d1, prev_u) * d1
                t_r = prev_t - (2.0 / c1) * np.dot(d1, prev_t) * d1
                d2 = t - t_r
                c2 = np.dot(d2, d2)
                u = u_r if c2 < 1e-24 else u_r - (2.0 / c2) * np.dot(d2, u_r) * d2
            u = u - np.dot(u, t) * t
            u = u / np.linalg.norm(u)
            pose = PlanePose(p, u, np.cross(t, u), t)
        poses.append(pose)
        prev_p, prev_t, prev_u = p, t, u
    return poses


def bifurcation_axis(tree: CenterlineTree, branch_offset: float = 4.0) -> BifurcationAxis:
    """Axis from the bifurcation point toward the ICA/ECA mass center.

    The ICA and ECA points are taken at arc length `branch_offset` along
    each branch.
    """
    for name in ("ICA", "ECA"):
        if tree.branch(name).length < branch_offset:
            raise CenterlineError(f"{name} branch shorter than offset {branch_offset}")
    p_ica = tree.ica.point_at(branch_offset)
    p_eca = tree.eca.point_at(branch_offset)
    mid = 0.5 * (p_ica + p_eca)
    bif = tree.bifurcation_point
    delta = mid - bif
    extent = float(np.linalg.norm(delta))
    if extent < 1e-6:
        raise CenterlineError("degenerate axis: mass center coincides with bifurcation")
    return BifurcationAxis(bif, delta / extent, extent)


def _branch_arcs(length: float, sd: float, start: float = 0.0):
    n = int(np.floor((length - start) / sd + 1e-9))
    return [start + k * sd for k in range(n + 1)]


def plan_cross_sections(tree: CenterlineTree, sd: float,
                        use_bifurcation_axis: bool = True,
                        bif_region: float = 4.0,
                        branch_offset: float = 4.0) -> SamplingPlan:
    """Emit the cross-section plan: one pose per sampling station.

    With the bifurcation axis off, every station is centerline-perpendicular.
    With it on, stations whose arc distance to the bifurcation point is
    within `bif_region` are replaced by planes stacked along the bifurcation
    axis (normal = axis direction, branch tag BIF), spanning axis stations
    from -bif_region into the CCA to +extent past the bifurcation.
    """
    if not (0 < sd <= 5):
        raise CenterlineError("sampling distance must be in (0, 5] mm")
    if bif_region <= 0:
        raise CenterlineError("bif_region must be positive")
    entries = []

    def add_branch(name, skip_near_bif):
        line = tree.branch(name)
        length = line.length
        if skip_near_bif and bif_region > length:
            raise CenterlineError(f"bif_region exceeds {name} branch length")
        start = 0.0 if name == "CCA" else sd  # bifurcation point belongs to the CCA
        arcs = _branch_arcs(length, sd, start)
        if skip_near_bif:
            if name == "CCA":
                arcs = [s for s in arcs if length - s > bif_region]
            else:
                arcs = [s for s in arcs if s > bif_region]
        if not arcs:
            return
        poses = frames_along(line, arcs)
        for s, pose in zip(arcs, poses):
            entries.append(PlanEntry(pose, name, float(s)))

    for name in ("CCA", "ICA", "ECA"):
        add_branch(name, use_bifurcation_axis)

    if use_bifurcation_axis:
        axis = bifurcation_axis(tree, branch_offset)
        base = PlanePose.from_normal(axis.origin, axis.direction)
        station = -bif_region
        while station <= axis.extent + 1e-9:
            center = axis.origin + station * axis.direction
            pose = PlanePose(center, base.axis_u, base.axis_v, base.normal)
            entries.append(PlanEntry(pose, "BIF", float(station)))
            station += sd

    entries.sort(key=lambda e: (BRANCH_ORDER.index(e.branch), e.arc_s))
    return SamplingPlan(tuple(entries), sd, use_bifurcation_axis)


# ---------------------------------------------------------------------------
# file format: JSON with keys cca / ica / eca, arrays of [x, y, z] in mm


def load_centerline(path) -> CenterlineTree:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (ValueError, OSError) as exc:
        raise CenterlineError(f"cannot read centerline file {path}: {exc}") from exc
    try:
        return CenterlineTree(
            cca=PolyLine3(np.asarray(doc["cca"], dtype=float)),
            ica=PolyLine3(np.asarray(doc["ica"], dtype=float)),
            eca=PolyLine3(np.asarray(doc["eca"], dtype=float)),
        )
    except KeyError as exc:
        raise CenterlineError(f"centerline file missing key {exc}") from exc


def save_centerline(tree: CenterlineTree, path):
    doc = {
        "cca": tree.cca.points.tolist(),
        "ica": tree.ica.points.tolist(),
        "eca": tree.eca.points.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
