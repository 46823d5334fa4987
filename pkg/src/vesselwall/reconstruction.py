"""Screened Poisson surface reconstruction on a regular grid, iso-surface
extraction, and voxelization into the 3D pseudo-label mask."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage import measure

from . import centerline as cl
from . import contours as ct
from . import segmenter as sg
from .volume import Affine3, Volume3, sample_plane, trilinear


class ReconstructionError(Exception):
    pass


@dataclass(frozen=True)
class ScalarGrid3:
    """Axis-aligned scalar field (indicator chi); nodes at origin + index*spacing."""

    values: np.ndarray  # (nx, ny, nz)
    spacing: float
    origin: np.ndarray  # (3,)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ReconstructionError("grid contains non-finite values")
        if self.spacing <= 0:
            raise ReconstructionError("grid spacing must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def dims(self):
        return self.values.shape

    def as_volume(self) -> Volume3:
        return Volume3(self.values, Affine3.from_spacing(self.spacing, self.origin))

    def sample(self, points) -> np.ndarray:
        return trilinear(self.as_volume(), points)


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray   # (n, 3) mm
    triangles: np.ndarray  # (m, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ReconstructionError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def signed_volume(self) -> float:
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return float(np.sum(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0)

    def edge_counts(self):
        """Multiset of undirected edges -> occurrence counts."""
        e = np.vstack([self.triangles[:, [0, 1]],
                       self.triangles[:, [1, 2]],
                       self.triangles[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def save_obj(self, path):
        with open(path, "w", encoding="ascii") as fh:
            for v in self.vertices:
                fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
            for t in self.triangles:
                fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


@dataclass(frozen=True)
class PseudoLabelMask:
    mask: Volume3  # u8 labels {0, 1, 2}
    provenance: dict


# ---------------------------------------------------------------------------
# screened Poisson solve


def _splat(points: np.ndarray, values: np.ndarray, dims, origin, spacing):
    """Trilinear splatting of per-point values onto grid nodes."""
    nx, ny, nz = dims
    k = 1 if values.ndim == 1 else values.shape[1]
    field = np.zeros((nx, ny, nz, k))
    vals = values.reshape(len(points), k)
    idx = (points - origin) / spacing
    i0 = np.floor(idx).astype(int)
    f = idx - i0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (np.where(dx, f[:, 0], 1 - f[:, 0])
                     * np.where(dy, f[:, 1], 1 - f[:, 1])
                     * np.where(dz, f[:, 2], 1 - f[:, 2]))
                ii = np.clip(i0[:, 0] + dx, 0, nx - 1)
                jj = np.clip(i0[:, 1] + dy, 0, ny - 1)
                kk = np.clip(i0[:, 2] + dz, 0, nz - 1)
                np.add.at(field, (ii, jj, kk), w[:, None] * vals)
    return field[..., 0] if values.ndim == 1 else field


def _neumann_laplacian(x: np.ndarray, h: float) -> np.ndarray:
    """7-point Laplacian with zero-flux (replicated edge) boundary."""
    return ndimage.laplace(x, mode="nearest") / (h * h)


def _jacobi_diagonal(dims, h, screen_field):
    nx, ny, nz = dims
    count = np.full(dims, 6.0)
    count[0, :, :] -= 1
    count[-1, :, :] -= 1
    count[:, 0, :] -= 1
    count[:, -1, :] -= 1
    count[:, :, 0] -= 1
    count[:, :, -1] -= 1
    return count / (h * h) + screen_field


def conjugate_gradient(apply_a, b, diag, rel_tol=1e-8, max_iter=None):
    """Jacobi-preconditioned CG on a matrix-free SPD operator.

    Keeps the best iterate seen so the reported residual history is
    non-increasing. Returns (solution, residual_history).
    """
    n = b.size
    max_iter = max_iter or 10 * n
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), [0.0]
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(np.vdot(r, z))
    best_x, best_res = x.copy(), 1.0
    history = [1.0]
    for _ in range(max_iter):
        ap = apply_a(p)
        pap = float(np.vdot(p, ap))
        if pap <= 0:
            break
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        res = float(np.linalg.norm(r)) / b_norm
        if res < best_res:
            best_res, best_x = res, x.copy()
        history.append(best_res)
        if best_res <= rel_tol:
            break
        z = r / diag
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, history


def poisson_indicator(cloud: ct.OrientedPointCloud, spacing: float,
                      margin: float = 3.0, screening: float = 4.0,
                      bounds=None, rel_tol: float = 1e-8):
    """Solve the screened Poisson equation for the indicator field chi.

    The oriented normals are splatted trilinearly onto the grid, smoothed by
    a one-voxel Gaussian, and (laplacian - screening*S) chi = div V is solved
    with Neumann boundary by preconditioned conjugate gradient. chi is
    normalized so its mean over the sample points is zero; chi < 0 inside.

    Returns (ScalarGrid3, info dict with residual history).
    """
    pts = cloud.points
    if len(pts) < 4:
        raise ReconstructionError("insufficient points for reconstruction (need >= 4)")
    if np.linalg.matrix_rank(pts - pts.mean(axis=0)) < 3:
        raise ReconstructionError("points are coplanar; reconstruction is degenerate")

    if bounds is None:
        lo = pts.min(axis=0) - margin
        hi = pts.max(axis=0) + margin
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    dims = tuple(int(np.ceil((hi[i] - lo[i]) / spacing)) + 1 for i in range(3))
    origin = lo
    h = spacing

    vec = _splat(pts, cloud.normals, dims, origin, h)
    for c in range(3):
        vec[..., c] = ndimage.gaussian_filter(vec[..., c], sigma=1.0, mode="nearest")
    density = ndimage.gaussian_filter(_splat(pts, np.ones(len(pts)), dims, origin, h),
                                      sigma=1.0, mode="nearest")

    div = (np.gradient(vec[..., 0], h, axis=0)
           + np.gradient(vec[..., 1], h, axis=1)
           + np.gradient(vec[..., 2], h, axis=2))

    screen_field = screening * density
    diag = _jacobi_diagonal(dims, h, screen_field)

    def apply_a(x):
        return -_neumann_laplacian(x, h) + screen_field * x

    chi, history = conjugate_gradient(apply_a, -div, diag, rel_tol=rel_tol)
    if history[-1] > rel_tol:
        raise ReconstructionError(
            f"conjugate gradient did not converge: residual {history[-1]:.3e}")

    grid = ScalarGrid3(chi, h, origin)
    offset = float(np.mean(grid.sample(pts)))
    grid = ScalarGrid3(chi - offset, h, origin)
    return grid, {"residual": history[-1], "iterations": len(history) - 1,
                  "residual_history": history}


# ---------------------------------------------------------------------------
# iso-surface extraction and voxelization


def extract_isosurface(grid: ScalarGrid3, iso: float = 0.0) -> TriangleMesh:
    """Marching cubes at the given level; outward orientation (toward chi > iso).

    An iso level outside the value range yields an empty mesh.
    """
    v = grid.values
    if not (v.min() < iso < v.max()):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(v, level=iso,
                                                spacing=(grid.spacing,) * 3)
    mesh = TriangleMesh(verts + grid.origin, faces)
    if mesh.signed_volume() < 0:
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def voxelize_solids(lumen: ScalarGrid3, outer: ScalarGrid3, reference=None) -> Volume3:
    """Label a voxel grid from the two indicator fields.

    label 1 where chi_lumen < 0 (lumen wins all conflicts), else 2 where
    chi_outer < 0, else 0. `reference` is an optional (dims, spacing, origin)
    triple; by default the lumen grid frame is used (the outer field is
    resampled trilinearly if its frame differs).
    """
    if reference is None:
        dims, spacing, origin = lumen.dims, lumen.spacing, lumen.origin
    else:
        dims, spacing, origin = reference
        dims = tuple(int(d) for d in dims)

    def field_at(grid):
        if (grid.dims == tuple(dims) and abs(grid.spacing - spacing) < 1e-12
                and np.allclose(grid.origin, origin, atol=1e-9)):
            return grid.values
        idx = np.stack(np.meshgrid(*(np.arange(n) for n in dims), indexing="ij"),
                       axis=-1).reshape(-1, 3)
        pts = idx * spacing + origin
        vol = grid.as_volume()
        vals = trilinear(vol, pts)
        # outside the source grid is outside the solid
        frac = vol.affine.to_index(pts)
        outside = ~np.all((frac >= 0) & (frac <= np.array(grid.dims) - 1.0), axis=1)
        vals[outside] = 1.0
        return vals.reshape(dims)

    chi_l = field_at(lumen)
    chi_o = field_at(outer)
    labels = np.zeros(dims, dtype=np.uint8)
    labels[chi_o < 0] = sg.WALL
    labels[chi_l < 0] = sg.LUMEN
    return Volume3(labels, Affine3.from_spacing(spacing, origin))


# ---------------------------------------------------------------------------
# end-to-end pseudo-label pipeline


@dataclass
class PipelineConfig:
    sd: float = 0.6
    use_bifurcation_axis: bool = True
    bif_region: float = 4.0
    branch_offset: float = 4.0
    grid_spacing: float = 0.3
    margin: float = 3.0
    screening: float = 4.0
    plane_spacing: float = 0.3
    plane_size: tuple = (64, 64)
    bif_plane_size: tuple = (96, 96)
    contour_step: float = None  # defaults to plane_spacing
    min_area: float = 1.0
    end_caps: bool = True
    rel_tol: float = 1e-8


def _plane_polyline_hits(line: cl.PolyLine3, center, normal) -> np.ndarray:
    """All intersection points of a plane with a polyline, shape (k, 3)."""
    pts = line.points
    f = (pts - center) @ normal
    hits = []
    for i in range(len(f) - 1):
        a, b = f[i], f[i + 1]
        if a == 0.0:
            hits.append(pts[i])
        elif a * b < 0:
            t = a / (a - b)
            hits.append((1 - t) * pts[i] + t * pts[i + 1])
    if f[-1] == 0.0:
        hits.append(pts[-1])
    return np.array(hits).reshape(-1, 3)


def _plane_polyline_intersection(line: cl.PolyLine3, center, normal):
    """Closest intersection point of a plane with a polyline, or None."""
    hits = _plane_polyline_hits(line, center, normal)
    if not len(hits):
        return None
    d = np.linalg.norm(hits - center, axis=1)
    return hits[np.argmin(d)]


def _other_branch_in_mask(mask: sg.LabelMask2D, tree: cl.CenterlineTree,
                          branch: str) -> bool:
    """True when another branch's centerline crosses the plane inside the
    segmented region (the oblique-cut failure mode of centerline-perpendicular
    sampling near the bifurcation)."""
    pose = mask.pose
    nu, nv = mask.size
    for other in ("CCA", "ICA", "ECA"):
        if other == branch:
            continue
        for hit in _plane_polyline_hits(tree.branch(other), pose.center, pose.normal):
            rel = hit - pose.center
            iu = int(round(np.dot(rel, pose.axis_u) / mask.spacing + (nu - 1) / 2.0))
            iv = int(round(np.dot(rel, pose.axis_v) / mask.spacing + (nv - 1) / 2.0))
            if 0 <= iu < nu and 0 <= iv < nv and mask.labels[iu, iv] != sg.BG:
                return True
    return False


def run_segmentation_stage(volume: Volume3, tree: cl.CenterlineTree,
                           backend: sg.SegmenterBackend, cfg: PipelineConfig):
    """Plan cross-sections and segment them.

    Returns (list of (entry, LabelMask2D or None), stats dict). Stats count
    failed planes (no segmentation) and invalid single-vessel planes whose
    raw segmentation contained extra lumen components (another vessel cut).
    """
    plan = cl.plan_cross_sections(tree, cfg.sd, cfg.use_bifurcation_axis,
                                  cfg.bif_region, cfg.branch_offset)
    results = []
    stats = {"planes": len(plan.entries), "failed": 0, "invalid": 0,
             "failed_entries": []}
    sections, section_entries = [], []
    bif_tasks = []

    for entry in plan.entries:
        if entry.branch == "BIF":
            bif_tasks.append(entry)
        else:
            cs = sample_plane(volume, entry.pose, cfg.plane_size, cfg.plane_spacing)
            sections.append(cs)
            section_entries.append(entry)

    masks, infos = sg.segment_batch(backend, sections)
    for entry, mask, info in zip(section_entries, masks, infos):
        if info.empty:
            stats["failed"] += 1
            stats["failed_entries"].append((entry.branch, entry.arc_s, "empty"))
            results.append((entry, None))
            continue
        if (info.extra_lumen_components > 0
                or _other_branch_in_mask(mask, tree, entry.branch)):
            stats["invalid"] += 1
            stats["failed_entries"].append((entry.branch, entry.arc_s, "extra_vessel"))
        results.append((entry, mask))

    for entry in bif_tasks:
        pose = entry.pose
        p_ica = _plane_polyline_intersection(tree.ica, pose.center, pose.normal)
        p_eca = _plane_polyline_intersection(tree.eca, pose.center, pose.normal)
        p_cca = _plane_polyline_intersection(tree.cca, pose.center, pose.normal)
        try:
            if p_ica is not None and p_eca is not None:
                mask, infos2 = sg.segment_bifurcation(
                    backend, pose, p_ica, p_eca, cfg.bif_plane_size,
                    cfg.plane_spacing, volume=volume, sub_size=cfg.plane_size)
                empty = all(i.empty for i in infos2)
            else:
                center = next((p for p in (p_cca, p_ica, p_eca) if p is not None),
                              pose.center)
                sub = sg.reproject_mask(
                    sg.segment(backend, sample_plane(
                        volume,
                        cl.PlanePose(center - np.dot(center - pose.center, pose.normal)
                                     * pose.normal,
                                     pose.axis_u, pose.axis_v, pose.normal),
                        cfg.plane_size, cfg.plane_spacing))[0],
                    pose, cfg.bif_plane_size, cfg.plane_spacing)
                mask, empty = sub, not np.any(sub.labels)
        except sg.SegmenterError as exc:
            stats["failed"] += 1
            stats["failed_entries"].append((entry.branch, entry.arc_s, str(exc)))
            results.append((entry, None))
            continue
        if empty:
            stats["failed"] += 1
            stats["failed_entries"].append((entry.branch, entry.arc_s, "empty"))
            results.append((entry, None))
        else:
            results.append((entry, mask))
    return results, stats


def build_pseudolabel(volume: Volume3, tree: cl.CenterlineTree,
                      backend: sg.SegmenterBackend,
                      cfg: PipelineConfig = None) -> PseudoLabelMask:
    """Full pipeline: plan -> segment -> contours -> surface samples ->
    Poisson indicator x2 -> labeled voxel mask."""
    cfg = cfg or PipelineConfig()
    step = cfg.contour_step or cfg.plane_spacing
    results, stats = run_segmentation_stage(volume, tree, backend, cfg)

    # terminal stations get end caps so the Poisson solids close
    terminals = {}
    for branch in ("CCA", "ICA", "ECA"):
        arcs = [e.arc_s for e, m in results if e.branch == branch and m is not None]
        if arcs:
            terminals[(branch, min(arcs) if branch == "CCA" else max(arcs))] = \
                -1.0 if branch == "CCA" else 1.0

    lumen_pts, lumen_nrm, outer_pts, outer_nrm = [], [], [], []
    contour_count = 0
    for entry, mask in results:
        if mask is None:
            continue
        cset = ct.mask_to_contours(mask, cfg.min_area)
        if cset.empty:
            continue
        cap = terminals.get((entry.branch, entry.arc_s)) if cfg.end_caps else None
        lumen_cloud, outer_cloud = ct.lift_and_sample(cset, step, end_caps=cap)
        contour_count += len(cset.lumen) + len(cset.outer)
        lumen_pts.append(lumen_cloud.points)
        lumen_nrm.append(lumen_cloud.normals)
        outer_pts.append(outer_cloud.points)
        outer_nrm.append(outer_cloud.normals)

    if contour_count == 0:
        raise ReconstructionError("zero contours: no cross-section produced a segmentation")

    lumen_cloud = ct.OrientedPointCloud(np.vstack(lumen_pts), np.vstack(lumen_nrm),
                                        "lumen_solid")
    outer_cloud = ct.OrientedPointCloud(np.vstack(outer_pts), np.vstack(outer_nrm),
                                        "outer_solid")

    lo = np.minimum(lumen_cloud.points.min(axis=0), outer_cloud.points.min(axis=0))
    hi = np.maximum(lumen_cloud.points.max(axis=0), outer_cloud.points.max(axis=0))
    bounds = (lo - cfg.margin, hi + cfg.margin)
    chi_l, info_l = poisson_indicator(lumen_cloud, cfg.grid_spacing, cfg.margin,
                                      cfg.screening, bounds=bounds, rel_tol=cfg.rel_tol)
    chi_o, info_o = poisson_indicator(outer_cloud, cfg.grid_spacing, cfg.margin,
                                      cfg.screening, bounds=bounds, rel_tol=cfg.rel_tol)
    mask = voxelize_solids(chi_l, chi_o)

    provenance = {
        "sd": cfg.sd,
        "use_bifurcation_axis": cfg.use_bifurcation_axis,
        "bif_region": cfg.bif_region,
        "branch_offset": cfg.branch_offset,
        "grid_spacing": cfg.grid_spacing,
        "screening": cfg.screening,
        "planes": stats["planes"],
        "failed": stats["failed"],
        "invalid": stats["invalid"],
        "failures": stats["failed_entries"],
        "solver_residuals": {"lumen": info_l["residual"], "outer": info_o["residual"]},
    }
    return PseudoLabelMask(mask, provenance)
