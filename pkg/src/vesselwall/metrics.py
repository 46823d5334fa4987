"""Evaluation protocol: evaluation-plane post-processing, symmetric contour
distances (ACD/HD), DSC, failed-slice detection, and aggregation."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .contours import Contour2D, ContourSet, mask_to_contours, resample_contour
from .segmenter import BG, LUMEN, WALL, LabelMask2D


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class StructureMetrics:
    acd: float
    hd: float
    dsc: float


@dataclass(frozen=True)
class MetricsRecord:
    case_id: str
    plane_id: int
    vessel: str
    lumen: StructureMetrics = None
    wall: StructureMetrics = None
    failed: bool = False


@dataclass(frozen=True)
class AggregateReport:
    key: str
    lumen: StructureMetrics
    wall: StructureMetrics
    failed_count: int
    total_count: int


# ---------------------------------------------------------------------------
# post-processing (two-vessel and bifurcation rules)


def _pixel_centers(mask: LabelMask2D):
    nu, nv = mask.size
    iu = (np.arange(nu) - (nu - 1) / 2.0) * mask.spacing
    iv = (np.arange(nv) - (nv - 1) / 2.0) * mask.spacing
    return np.meshgrid(iu, iv, indexing="ij")


def postprocess_eval_plane(pred: LabelMask2D, plane_center=(0.0, 0.0)) -> LabelMask2D:
    """Keep only the vessel nearest the plane center.

    Far lumen components and wall components adjacent only to them become
    background. If one wall component encloses several lumens, its pixels are
    kept only where they are strictly closer to the center lumen than to any
    other lumen.
    """
    labels = pred.labels.copy()
    lumen = labels == LUMEN
    lum_lab, n_lum = ndimage.label(lumen)  # 4-connectivity
    if n_lum <= 1:
        return pred

    uu, vv = _pixel_centers(pred)
    cu, cv = plane_center
    dist2_center = (uu - cu) ** 2 + (vv - cv) ** 2
    centroids = ndimage.center_of_mass(lumen, lum_lab, range(1, n_lum + 1))
    nu, nv = pred.size
    best, best_d = 1, np.inf
    for cid, (ci, cj) in enumerate(centroids, start=1):
        u = (ci - (nu - 1) / 2.0) * pred.spacing
        v = (cj - (nv - 1) / 2.0) * pred.spacing
        d = (u - cu) ** 2 + (v - cv) ** 2
        if d < best_d:
            best, best_d = cid, d
    center_lumen = lum_lab == best
    other_lumen = lumen & ~center_lumen

    wall = labels == WALL
    wall_lab, n_wall = ndimage.label(wall, structure=np.ones((3, 3)))
    out = np.zeros_like(labels)
    out[center_lumen] = LUMEN

    struct = np.ones((3, 3))
    center_halo = ndimage.binary_dilation(center_lumen, structure=struct)
    other_halo = ndimage.binary_dilation(other_lumen, structure=struct)
    # per-pixel distances (in mm) to each lumen family, for shared walls
    d_center = ndimage.distance_transform_edt(~center_lumen,
                                              sampling=pred.spacing)
    d_other = ndimage.distance_transform_edt(~other_lumen,
                                             sampling=pred.spacing)
    for wid in range(1, n_wall + 1):
        comp = wall_lab == wid
        touches_center = np.any(comp & center_halo)
        touches_other = np.any(comp & other_halo)
        if touches_center and touches_other:
            keep = comp & (d_center < d_other)
            out[keep] = WALL
        elif touches_center:
            out[comp] = WALL
        # components adjacent only to far lumens (or to nothing) drop out
    return LabelMask2D(pred.pose, pred.spacing, out)


def detect_failed(pred: LabelMask2D, plane_center=(0.0, 0.0),
                  radius: float = 5.0) -> bool:
    """A slice fails when no lumen pixel lies within `radius` of the center."""
    lumen = pred.labels == LUMEN
    if not np.any(lumen):
        return True
    uu, vv = _pixel_centers(pred)
    d2 = (uu - plane_center[0]) ** 2 + (vv - plane_center[1]) ** 2
    return not np.any(lumen & (d2 <= radius * radius))


# ---------------------------------------------------------------------------
# metrics


def dsc(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient of two boolean pixel sets; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricsError("pixel sets live on different grids")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def _polyline_segments(contours):
    """Closed-polygon edges of all contours as (starts, ends) arrays."""
    starts, ends = [], []
    for c in contours:
        v = c.vertices if isinstance(c, Contour2D) else np.asarray(c, dtype=float)
        starts.append(v)
        ends.append(np.roll(v, -1, axis=0))
    return np.vstack(starts), np.vstack(ends)


def _points_to_segments_dist(points: np.ndarray, starts: np.ndarray,
                             ends: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest segment (exact, vectorized)."""
    d = ends - starts  # (m, 2)
    len2 = np.einsum("ij,ij->i", d, d)
    len2[len2 < 1e-24] = 1e-24
    out = np.empty(len(points))
    # chunk over points to bound the (n, m) temporary
    chunk = max(1, int(2e6 // max(1, len(starts))))
    for i in range(0, len(points), chunk):
        p = points[i:i + chunk]
        w = p[:, None, :] - starts[None, :, :]
        t = np.clip(np.einsum("nmj,mj->nm", w, d) / len2, 0.0, 1.0)
        proj = starts[None, :, :] + t[..., None] * d[None, :, :]
        dist = np.linalg.norm(p[:, None, :] - proj, axis=2)
        out[i:i + chunk] = dist.min(axis=1)
    return out


def _dense_samples(contours, step: float) -> np.ndarray:
    return np.vstack([resample_contour(
        c.vertices if isinstance(c, Contour2D) else np.asarray(c, dtype=float), step)
        for c in contours])


def _directed(stat, a, b, step):
    pa = _dense_samples(a, step)
    s, e = _polyline_segments(b)
    return stat(_points_to_segments_dist(pa, s, e))


def acd(a, b, sample_step: float = 0.05) -> float:
    """Symmetric average contour distance between two contour lists (mm)."""
    if not a or not b:
        raise MetricsError("ACD needs non-empty contour lists")
    return 0.5 * (_directed(np.mean, a, b, sample_step)
                  + _directed(np.mean, b, a, sample_step))


def hausdorff(a, b, sample_step: float = 0.05) -> float:
    """Symmetric Hausdorff distance between two contour lists (mm)."""
    if not a or not b:
        raise MetricsError("Hausdorff needs non-empty contour lists")
    return max(_directed(np.max, a, b, sample_step),
               _directed(np.max, b, a, sample_step))


# ---------------------------------------------------------------------------
# per-case evaluation


@dataclass(frozen=True)
class EvalCase:
    case_id: str
    plane_id: int
    vessel: str
    pred: LabelMask2D
    expert_contours: ContourSet
    expert_mask: LabelMask2D
    plane_center: tuple = (0.0, 0.0)


def evaluate_case(case: EvalCase, failed_radius: float = 5.0,
                  sample_step: float = 0.05, min_area: float = 1.0) -> MetricsRecord:
    """Post-process, check for failure, then compute DSC/ACD/HD per structure."""
    if not case.pred.same_geometry(case.expert_mask):
        raise MetricsError("prediction and expert mask geometry differ")
    pred = postprocess_eval_plane(case.pred, case.plane_center)
    if detect_failed(pred, case.plane_center, failed_radius):
        return MetricsRecord(case.case_id, case.plane_id, case.vessel, failed=True)

    pred_contours = mask_to_contours(pred, min_area)
    exp = case.expert_contours
    if not pred_contours.lumen or not pred_contours.outer or not exp.lumen or not exp.outer:
        return MetricsRecord(case.case_id, case.plane_id, case.vessel, failed=True)

    lumen_pred = pred.labels == LUMEN
    lumen_exp = case.expert_mask.labels == LUMEN
    wall_pred = pred.labels == WALL
    wall_exp = case.expert_mask.labels == WALL
    lumen = StructureMetrics(
        acd=acd(pred_contours.lumen, exp.lumen, sample_step),
        hd=hausdorff(pred_contours.lumen, exp.lumen, sample_step),
        dsc=dsc(lumen_pred, lumen_exp),
    )
    wall = StructureMetrics(
        acd=acd(pred_contours.outer, exp.outer, sample_step),
        hd=hausdorff(pred_contours.outer, exp.outer, sample_step),
        dsc=dsc(wall_pred, wall_exp),
    )
    return MetricsRecord(case.case_id, case.plane_id, case.vessel,
                         lumen=lumen, wall=wall)


# ---------------------------------------------------------------------------
# aggregation and reports


def _mean_metrics(records) -> tuple:
    ok = [r for r in records if not r.failed]
    if not ok:
        nan = StructureMetrics(float("nan"), float("nan"), float("nan"))
        return nan, nan
    lumen = StructureMetrics(
        float(np.mean([r.lumen.acd for r in ok])),
        float(np.mean([r.lumen.hd for r in ok])),
        float(np.mean([r.lumen.dsc for r in ok])),
    )
    wall = StructureMetrics(
        float(np.mean([r.wall.acd for r in ok])),
        float(np.mean([r.wall.hd for r in ok])),
        float(np.mean([r.wall.dsc for r in ok])),
    )
    return lumen, wall


def aggregate(records, group_by: str = "plane"):
    """Group records and average the non-failed ones.

    group_by "plane" emits rows for planes 1..8 plus an "All planes" row;
    "dataset" and "config" group on case_id prefix / provided key.
    """
    rows = []
    if group_by == "plane":
        for pid in sorted({r.plane_id for r in records}):
            sub = [r for r in records if r.plane_id == pid]
            lumen, wall = _mean_metrics(sub)
            rows.append(AggregateReport(f"Plane {pid}", lumen, wall,
                                        sum(r.failed for r in sub), len(sub)))
        lumen, wall = _mean_metrics(records)
        rows.append(AggregateReport("All planes", lumen, wall,
                                    sum(r.failed for r in records), len(records)))
    elif group_by in ("dataset", "config"):
        keys = sorted({r.case_id.split("/")[0] for r in records})
        for key in keys:
            sub = [r for r in records if r.case_id.split("/")[0] == key]
            lumen, wall = _mean_metrics(sub)
            rows.append(AggregateReport(key, lumen, wall,
                                        sum(r.failed for r in sub), len(sub)))
    else:
        raise MetricsError(f"unknown group_by {group_by!r}")
    return rows


CASE_CSV_HEADER = ["case_id", "plane_id", "vessel", "lumen_acd", "lumen_hd",
                   "lumen_dsc", "wall_acd", "wall_hd", "wall_dsc", "failed"]
AGGREGATE_CSV_HEADER = ["group", "lumen_acd", "lumen_hd", "lumen_dsc",
                        "wall_acd", "wall_hd", "wall_dsc",
                        "failed_slices", "num_slices"]
ABLATION_CSV_HEADER = ["sd", "ba", "lumen_acd", "lumen_hd", "lumen_dsc",
                       "wall_acd", "wall_hd", "wall_dsc",
                       "failed_slices", "num_slices"]


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.3f}"


def write_case_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CASE_CSV_HEADER)
        for r in records:
            if r.failed:
                w.writerow([r.case_id, r.plane_id, r.vessel,
                            "", "", "", "", "", "", "1"])
            else:
                w.writerow([r.case_id, r.plane_id, r.vessel,
                            _fmt(r.lumen.acd), _fmt(r.lumen.hd), _fmt(r.lumen.dsc),
                            _fmt(r.wall.acd), _fmt(r.wall.hd), _fmt(r.wall.dsc), "0"])


def read_case_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            failed = row["failed"] == "1"
            records.append(MetricsRecord(
                row["case_id"], int(row["plane_id"]), row["vessel"],
                failed=failed,
                lumen=None if failed else StructureMetrics(
                    float(row["lumen_acd"]), float(row["lumen_hd"]),
                    float(row["lumen_dsc"])),
                wall=None if failed else StructureMetrics(
                    float(row["wall_acd"]), float(row["wall_hd"]),
                    float(row["wall_dsc"]))))
    return records


def write_aggregate_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_CSV_HEADER)
        for r in rows:
            w.writerow([r.key, _fmt(r.lumen.acd), _fmt(r.lumen.hd),
                        _fmt(r.lumen.dsc), _fmt(r.wall.acd), _fmt(r.wall.hd),
                        _fmt(r.wall.dsc), r.failed_count, r.total_count])


def select_configuration(rows):
    """Pick the configuration with the fewest failed slices, breaking ties by
    the lowest mean wall Hausdorff distance.

    `rows` are dicts with keys sd, ba, wall_hd, failed_slices.
    """
    if not rows:
        raise MetricsError("no configurations to select from")
    return min(rows, key=lambda r: (int(r["failed_slices"]), float(r["wall_hd"])))
