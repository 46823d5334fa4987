"""Analytic bifurcating-vessel phantoms: volume, centerline tree, ground-truth
masks and expert-style sparse contour annotations.

The membership function (lumen / wall / outside) is exact, so it doubles as
the oracle for reconstruction and metrics tests.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .centerline import CenterlineTree, PolyLine3, save_centerline
from .contours import Contour2D, ContourSet, annotation_to_doc, save_annotations
from .volume import Affine3, PlanePose, Volume3, save_volume


class PhantomError(Exception):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    trunk_radius_lumen: float = 3.0
    trunk_radius_outer: float = 4.0
    trunk_length: float = 30.0
    ica_radius_lumen: float = 2.2
    eca_radius_lumen: float = 1.8
    wall_thickness: float = 1.0
    branch_angle_deg: float = 25.0
    branch_length: float = 25.0
    voxel_spacing: float = 0.6
    lumen_intensity: float = 0.0
    wall_intensity: float = 1000.0
    background_intensity: float = 400.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (self.trunk_radius_outer > self.trunk_radius_lumen > 0):
            raise PhantomError("need radius_outer > radius_lumen > 0")
        if not (0.0 < self.branch_angle_deg <= 80.0):
            raise PhantomError("branch angle must be in (0, 80] degrees")
        if self.voxel_spacing <= 0 or self.wall_thickness <= 0:
            raise PhantomError("spacing and wall thickness must be positive")


@dataclass(frozen=True)
class PhantomBundle:
    spec: PhantomSpec
    volume: Volume3
    tree: CenterlineTree
    truth: Volume3            # labels {0, 1, 2} on the truth grid
    annotations: list         # (plane_id, vessel, ContourSet, spacing, size)


@dataclass(frozen=True)
class _Tube:
    start: np.ndarray
    end: np.ndarray
    radius_lumen: float
    radius_outer: float

    def axis_distance(self, points: np.ndarray) -> np.ndarray:
        d = self.end - self.start
        len2 = float(np.dot(d, d))
        t = np.clip((points - self.start) @ d / len2, 0.0, 1.0)
        proj = self.start + t[:, None] * d
        return np.linalg.norm(points - proj, axis=1)


def _tubes(spec: PhantomSpec):
    ang = np.deg2rad(spec.branch_angle_deg)
    bif = np.zeros(3)
    trunk = _Tube(np.array([0.0, 0.0, -spec.trunk_length]), bif,
                  spec.trunk_radius_lumen, spec.trunk_radius_outer)
    ica_dir = np.array([np.sin(ang), 0.0, np.cos(ang)])
    eca_dir = np.array([-np.sin(ang), 0.0, np.cos(ang)])
    ica = _Tube(bif, ica_dir * spec.branch_length,
                spec.ica_radius_lumen, spec.ica_radius_lumen + spec.wall_thickness)
    eca = _Tube(bif, eca_dir * spec.branch_length,
                spec.eca_radius_lumen, spec.eca_radius_lumen + spec.wall_thickness)
    return trunk, ica, eca


def membership(spec: PhantomSpec, points) -> np.ndarray:
    """Exact labels {0=outside, 1=lumen, 2=wall} at arbitrary world points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    labels = np.zeros(len(pts), dtype=np.uint8)
    wall_any = np.zeros(len(pts), dtype=bool)
    lumen_any = np.zeros(len(pts), dtype=bool)
    for tube in _tubes(spec):
        d = tube.axis_distance(pts)
        lumen_any |= d <= tube.radius_lumen
        wall_any |= d <= tube.radius_outer
    labels[wall_any] = 2
    labels[lumen_any] = 1
    return labels


def centerline_tree(spec: PhantomSpec, step: float = 1.0) -> CenterlineTree:
    trunk, ica, eca = _tubes(spec)

    def poly(tube):
        n = max(2, int(np.ceil(np.linalg.norm(tube.end - tube.start) / step)) + 1)
        t = np.linspace(0.0, 1.0, n)
        return PolyLine3(tube.start + t[:, None] * (tube.end - tube.start))

    return CenterlineTree(cca=poly(trunk), ica=poly(ica), eca=poly(eca))


def _world_grid(spec: PhantomSpec, spacing: float):
    trunk, ica, eca = _tubes(spec)
    pad = spec.trunk_radius_outer + 2.0
    ends = np.array([trunk.start, trunk.end, ica.end, eca.end])
    lo = ends.min(axis=0) - pad
    hi = ends.max(axis=0) + pad
    dims = np.ceil((hi - lo) / spacing).astype(int)
    origin = lo + 0.5 * spacing
    return dims, Affine3.from_spacing(spacing, origin)


def _rasterize(spec: PhantomSpec, spacing: float):
    dims, affine = _world_grid(spec, spacing)
    idx = np.stack(np.meshgrid(*(np.arange(n) for n in dims), indexing="ij"),
                   axis=-1).reshape(-1, 3).astype(float)
    pts = idx @ affine.matrix.T + affine.origin
    labels = membership(spec, pts).reshape(tuple(dims))
    return labels, affine


def _circle(radius: float, n: int = 128) -> np.ndarray:
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([radius * np.cos(t), radius * np.sin(t)])


def _annotation_planes(spec: PhantomSpec):
    """Eight expert-style stations: two in the CCA, one at the bifurcation,
    four along the ICA (bulb to distal) and one in the ECA."""
    trunk, ica, eca = _tubes(spec)

    def along(tube, frac):
        d = tube.end - tube.start
        n = d / np.linalg.norm(d)
        return tube.start + frac * d, n

    stations = [
        (1, "CCA", *along(trunk, 0.35)),
        (2, "CCA", *along(trunk, 0.75)),
        (3, "CCA", *along(trunk, 0.97)),
        (4, "ICA", *along(ica, 0.20)),
        (5, "ICA", *along(ica, 0.40)),
        (6, "ICA", *along(ica, 0.60)),
        (7, "ICA", *along(ica, 0.80)),
        (8, "ECA", *along(eca, 0.60)),
    ]
    tubes = {"CCA": trunk, "ICA": ica, "ECA": eca}
    out = []
    for pid, vessel, center, normal in stations:
        pose = PlanePose.from_normal(center, normal)
        tube = tubes[vessel]
        cset = ContourSet(pose,
                          (Contour2D(_circle(tube.radius_lumen), "lumen_boundary"),),
                          (Contour2D(_circle(tube.radius_outer), "outer_wall_boundary"),))
        out.append((pid, vessel, cset, 0.3, (64, 64)))
    return out


def generate(spec: PhantomSpec, truth_spacing: float = 0.3) -> PhantomBundle:
    """Build the full bundle: intensity volume, tree, truth mask, annotations."""
    labels, affine = _rasterize(spec, spec.voxel_spacing)
    intensity = np.full(labels.shape, spec.background_intensity)
    intensity[labels == 1] = spec.lumen_intensity
    intensity[labels == 2] = spec.wall_intensity
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        intensity = intensity + rng.normal(0.0, spec.noise_sigma, labels.shape)
    volume = Volume3(intensity, affine)

    truth_labels, truth_affine = _rasterize(spec, truth_spacing)
    truth = Volume3(truth_labels, truth_affine)

    return PhantomBundle(spec, volume, centerline_tree(spec), truth,
                         _annotation_planes(spec))


def write_bundle(bundle: PhantomBundle, out_dir) -> dict:
    """Emit volume, truth, centerline and annotations; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(bundle.volume, out / "volume.rvol", "f32")
    save_volume(bundle.truth, out / "truth.rvol", "u8")
    save_centerline(bundle.tree, out / "centerline.json")
    docs = [annotation_to_doc(pid, vessel, cset, spacing, size)
            for pid, vessel, cset, spacing, size in bundle.annotations]
    save_annotations(docs, out / "annotations.json")
    manifest = {
        "spec": {k: getattr(bundle.spec, k) for k in bundle.spec.__dataclass_fields__},
        "volume": "volume.rvol",
        "truth": "truth.rvol",
        "centerline": "centerline.json",
        "annotations": "annotations.json",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n",
                                       encoding="utf-8")
    return manifest
