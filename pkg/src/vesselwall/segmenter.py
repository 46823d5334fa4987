"""2D vessel-wall segmentation boundary.

Two backends: a deterministic intensity-band oracle for phantoms and tests,
and a client for external trained models via a file-exchange protocol
(batch.json + 16-bit PGM in, 8-bit PGM out). The two-call bifurcation
strategy lives here as well.
"""

import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volume import CrossSection, PlanePose, plane_grid_world

BG, LUMEN, WALL = 0, 1, 2


class SegmenterError(Exception):
    pass


@dataclass(frozen=True)
class LabelMask2D:
    """2D label image {0=background, 1=lumen, 2=wall} with plane geometry."""

    pose: PlanePose
    spacing: float
    labels: np.ndarray  # (nu, nv) int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if not np.all(np.isin(lab, (BG, LUMEN, WALL))):
            raise SegmenterError("labels must be in {0, 1, 2}")
        lab = lab.astype(np.uint8)
        object.__setattr__(self, "labels", lab)
        lab.setflags(write=False)

    @property
    def size(self) -> tuple:
        return self.labels.shape

    def pixel_world(self) -> np.ndarray:
        return plane_grid_world(self.pose, self.size, self.spacing)

    def same_geometry(self, other: "LabelMask2D", tol: float = 1e-9) -> bool:
        return (self.size == other.size
                and abs(self.spacing - other.spacing) <= tol
                and np.allclose(self.pose.center, other.pose.center, atol=tol)
                and np.allclose(self.pose.axis_u, other.pose.axis_u, atol=tol)
                and np.allclose(self.pose.axis_v, other.pose.axis_v, atol=tol))


@dataclass(frozen=True)
class SegmenterBackend:
    kind: str  # "builtin_oracle" | "external_process"
    command: str = None
    io_dir: Path = None
    t_low: float = 200.0
    t_high: float = 700.0
    timeout: float = 120.0

    def __post_init__(self):
        if self.kind not in ("builtin_oracle", "external_process"):
            raise SegmenterError(f"unknown backend kind {self.kind!r}")
        if self.kind == "external_process" and (not self.command or self.io_dir is None):
            raise SegmenterError("external_process backend needs command and io_dir")


@dataclass
class SegmentationInfo:
    """Per-plane diagnostics recorded into pipeline provenance."""

    empty: bool = False
    extra_lumen_components: int = 0


# ---------------------------------------------------------------------------
# window quantization shared with the exchange protocol
#
# The oracle classifies the 16-bit-windowed intensities, not the raw floats,
# so an external model wrapper that inverts the recorded window reproduces
# the oracle bit-exactly.


def window_of(pixels: np.ndarray):
    lo = float(np.min(pixels))
    hi = float(np.max(pixels))
    return lo, hi


def quantize_u16(pixels: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros(pixels.shape, dtype=np.uint16)
    codes = np.rint((pixels - lo) / (hi - lo) * 65535.0)
    return np.clip(codes, 0, 65535).astype(np.uint16)


def dequantize_u16(codes: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return lo + codes.astype(np.float64) * (hi - lo) / 65535.0


# ---------------------------------------------------------------------------
# builtin oracle


def _border_component_ids(lab: np.ndarray) -> set:
    edge = np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]])
    return set(np.unique(edge)) - {0}


def _oracle_labels(values: np.ndarray, spacing: float, t_low: float, t_high: float):
    """Threshold classification + morphology. Returns (labels, info).

    Image-border lumen candidates are discarded (a centered vessel cannot
    touch the border; out-of-volume fill pixels would otherwise read as
    lumen). Unlabeled transition pixels between lumen and wall are assigned
    by the band midpoint so the wall ring stays closed on interpolated data.
    """
    lumen_cand = values <= t_low
    wall_cand = values >= t_high
    info = SegmentationInfo()
    labels = np.zeros(values.shape, dtype=np.uint8)

    lumen_lab, n_lumen = ndimage.label(lumen_cand)  # 4-connectivity default
    border = _border_component_ids(lumen_lab)
    interior_ids = [i for i in range(1, n_lumen + 1) if i not in border]
    if not interior_ids:
        info.empty = True
        return labels, info

    nu, nv = values.shape
    cu, cv = (nu - 1) / 2.0, (nv - 1) / 2.0
    center_id = lumen_lab[int(round(cu)), int(round(cv))]
    if center_id not in interior_ids:
        iu, iv = np.indices(values.shape)
        best, best_d = 0, np.inf
        for cid in interior_ids:
            m = lumen_lab == cid
            d = np.min((iu[m] - cu) ** 2 + (iv[m] - cv) ** 2)
            if d < best_d:
                best, best_d = cid, d
        center_id = best
    info.extra_lumen_components = len(interior_ids) - 1

    lumen = lumen_lab == center_id
    labels[lumen] = LUMEN

    wall_lab, n_wall = ndimage.label(wall_cand, structure=np.ones((3, 3)))
    wall = np.zeros_like(lumen)
    if n_wall:
        ring = ndimage.binary_dilation(lumen, structure=np.ones((3, 3)), iterations=2)
        touching = np.unique(wall_lab[ring & wall_cand])
        touching = touching[touching > 0]
        if touching.size:
            wall = np.isin(wall_lab, touching)
            labels[wall] = WALL

    # close the sub-pixel gap where interpolated values fall between the bands
    mid = 0.5 * (t_low + t_high)
    struct = np.ones((3, 3))
    for _ in range(2):
        gap = ((labels == BG)
               & ndimage.binary_dilation(labels == LUMEN, structure=struct)
               & ndimage.binary_dilation(labels == WALL, structure=struct,
                                         iterations=2))
        if not np.any(gap):
            break
        labels[gap & (values <= mid)] = LUMEN
        labels[gap & (values > mid)] = WALL
    return labels, info


def segment(backend: SegmenterBackend, cs: CrossSection):
    """Segment one cross-section. Returns (LabelMask2D, SegmentationInfo)."""
    if backend.kind == "external_process":
        masks, infos = segment_batch_external(backend, [cs])
        return masks[0], infos[0]
    lo, hi = window_of(cs.pixels)
    values = dequantize_u16(quantize_u16(cs.pixels, lo, hi), lo, hi)
    labels, info = _oracle_labels(values, cs.spacing, backend.t_low, backend.t_high)
    return LabelMask2D(cs.pose, cs.spacing, labels), info


def segment_batch(backend: SegmenterBackend, sections):
    """Segment many cross-sections; external backends get one invocation."""
    if backend.kind == "external_process":
        return segment_batch_external(backend, sections)
    results = [segment(backend, cs) for cs in sections]
    return [m for m, _ in results], [i for _, i in results]


def segment_bifurcation(backend: SegmenterBackend, plane: PlanePose,
                        ica_center, eca_center, size, spacing: float,
                        volume=None, sub_size=None):
    """Two-call strategy for bifurcation planes.

    Samples one cross-section centered on the ICA and one on the ECA (same
    orientation as `plane`), segments each, re-projects both onto the common
    plane grid and merges the wall areas.
    """
    from .volume import sample_plane
    from .contours import merge_wall_regions

    if volume is None:
        raise SegmenterError("segment_bifurcation needs the source volume")
    sub_size = sub_size or size
    centers = [np.asarray(ica_center, float), np.asarray(eca_center, float)]
    for c in centers:
        if abs(np.dot(c - plane.center, plane.normal)) > spacing:
            raise SegmenterError("vessel center does not lie on the plane")

    merged = None
    infos = []
    for c in centers:
        pose = PlanePose(c - np.dot(c - plane.center, plane.normal) * plane.normal,
                         plane.axis_u, plane.axis_v, plane.normal)
        cs = sample_plane(volume, pose, sub_size, spacing)
        mask, info = segment(backend, cs)
        infos.append(info)
        proj = reproject_mask(mask, plane, size, spacing)
        merged = proj if merged is None else merge_wall_regions(merged, proj)
    return merged, infos


def reproject_mask(mask: LabelMask2D, pose: PlanePose, size, spacing: float) -> LabelMask2D:
    """Nearest-neighbor re-projection of a label mask onto another coplanar grid."""
    pts = plane_grid_world(pose, size, spacing).reshape(-1, 3)
    rel = pts - mask.pose.center
    iu = rel @ mask.pose.axis_u / mask.spacing + (mask.size[0] - 1) / 2.0
    iv = rel @ mask.pose.axis_v / mask.spacing + (mask.size[1] - 1) / 2.0
    ui = np.rint(iu).astype(int)
    vi = np.rint(iv).astype(int)
    ok = (ui >= 0) & (ui < mask.size[0]) & (vi >= 0) & (vi < mask.size[1])
    out = np.zeros(len(pts), dtype=np.uint8)
    out[ok] = mask.labels[ui[ok], vi[ok]]
    return LabelMask2D(pose, spacing, out.reshape(size))


# ---------------------------------------------------------------------------
# external process protocol


def _write_pgm16(path: Path, codes: np.ndarray):
    nu, nv = codes.shape
    # row-major v-then-u: rows are v, columns are u
    body = codes.T.astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nu} {nv}\n65535\n".encode("ascii"))
        fh.write(body)


def _read_pgm8(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise SegmenterError(f"{path}: not a binary PGM")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise SegmenterError(f"{path}: mask PGM maxval must be 255")
    body = blob[pos:pos + width * height]
    if len(body) != width * height:
        raise SegmenterError(f"{path}: truncated PGM payload")
    rows = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return rows.T  # back to (nu, nv)


def segment_batch_external(backend: SegmenterBackend, sections):
    """Write the batch, invoke the external command once, read the masks back."""
    io_dir = Path(backend.io_dir)
    io_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, cs in enumerate(sections):
        item_id = f"{i:05d}"
        lo, hi = window_of(cs.pixels)
        codes = quantize_u16(cs.pixels, lo, hi)
        _write_pgm16(io_dir / f"{item_id}_img.pgm", codes)
        manifest.append({
            "id": item_id,
            "nu": cs.size[0],
            "nv": cs.size[1],
            "spacing_mm": cs.spacing,
            "window": [lo, hi],
        })
    (io_dir / "batch.json").write_text(json.dumps(manifest, indent=1),
                                       encoding="utf-8")
    try:
        proc = subprocess.run(backend.command.split() + [str(io_dir)],
                              capture_output=True, timeout=backend.timeout)
    except subprocess.TimeoutExpired as exc:
        raise SegmenterError(f"external segmenter timed out after {backend.timeout}s") from exc
    if proc.returncode != 0:
        raise SegmenterError(
            f"external segmenter exited with {proc.returncode}: "
            f"{proc.stderr.decode(errors='replace').strip()}")

    masks, infos = [], []
    for item, cs in zip(manifest, sections):
        mask_path = io_dir / f"{item['id']}_mask.pgm"
        if not mask_path.exists():
            raise SegmenterError(f"external segmenter wrote no mask for {item['id']}")
        labels = _read_pgm8(mask_path)
        if labels.shape != cs.size:
            raise SegmenterError(f"mask {item['id']} has wrong size {labels.shape}")
        if labels.max(initial=0) > 2:
            raise SegmenterError(f"mask {item['id']} has labels outside {{0,1,2}}")
        masks.append(LabelMask2D(cs.pose, cs.spacing, labels))
        lab, n = ndimage.label(labels == LUMEN)
        infos.append(SegmentationInfo(empty=(labels.max(initial=0) == 0),
                                      extra_lumen_components=max(0, n - 1)))
    return masks, infos
