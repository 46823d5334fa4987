import numpy as np
import pytest

from vesselwall.contours import (Contour2D, ContourError, ContourSet,
                                 lift_and_sample, load_annotations,
                                 mask_to_contours, merge_wall_regions,
                                 rasterize_contours, resample_contour,
                                 save_annotations, signed_area,
                                 annotation_to_doc)
from vesselwall.segmenter import BG, LUMEN, WALL, LabelMask2D
from vesselwall.volume import PlanePose


def axis_pose(center=(0.0, 0.0, 0.0)):
    return PlanePose(np.asarray(center, float), np.array([1.0, 0, 0]),
                     np.array([0, 1.0, 0]), np.array([0, 0, 1.0]))


def annulus_mask(nu=64, nv=64, spacing=0.3, r_lumen=3.0, r_outer=5.0,
                 center_uv=(0.0, 0.0)):
    iu = (np.arange(nu) - (nu - 1) / 2.0) * spacing
    iv = (np.arange(nv) - (nv - 1) / 2.0) * spacing
    uu, vv = np.meshgrid(iu, iv, indexing="ij")
    r = np.hypot(uu - center_uv[0], vv - center_uv[1])
    lab = np.where(r <= r_lumen, LUMEN, np.where(r <= r_outer, WALL, BG))
    return LabelMask2D(axis_pose(), spacing, lab)


def circle(r, n=256):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


def polygon_radii(vertices):
    return np.hypot(vertices[:, 0], vertices[:, 1])


class TestContour2D:
    def test_cw_rejected(self):
        cw = circle(2.0)[::-1]
        with pytest.raises(ContourError, match="CCW"):
            Contour2D(cw, "lumen_boundary")

    def test_area(self):
        c = Contour2D(circle(3.0, 512), "lumen_boundary")
        assert c.area == pytest.approx(np.pi * 9.0, rel=1e-3)

    def test_too_few_vertices(self):
        with pytest.raises(ContourError):
            Contour2D(np.array([[0.0, 0], [1, 0]]), "lumen_boundary")


class TestMaskToContours:
    def test_annulus_radii(self):
        cset = mask_to_contours(annulus_mask())
        assert len(cset.lumen) == 1 and len(cset.outer) == 1
        r_l = polygon_radii(cset.lumen[0].vertices)
        r_o = polygon_radii(cset.outer[0].vertices)
        # marching squares at 0.5 level on a 0.3 mm grid: half-pixel accuracy
        assert np.all(np.abs(r_l - 3.0) < 0.3)
        assert np.all(np.abs(r_o - 5.0) < 0.3)

    def test_orientation_ccw(self):
        cset = mask_to_contours(annulus_mask())
        for c in cset.lumen + cset.outer:
            assert signed_area(c.vertices) > 0

    def test_min_area_filter(self):
        mask = annulus_mask()
        lab = np.array(mask.labels)
        lab[2, 2] = WALL  # isolated speck, ~0.09 mm^2
        cset = mask_to_contours(LabelMask2D(mask.pose, mask.spacing, lab))
        assert len(cset.outer) == 1

    def test_empty_mask(self):
        mask = LabelMask2D(axis_pose(), 0.3, np.zeros((16, 16), int))
        cset = mask_to_contours(mask)
        assert cset.empty

    def test_two_disjoint_annuli(self):
        a = annulus_mask(nu=96, nv=96, r_lumen=1.6, r_outer=2.6,
                         center_uv=(-5.0, 0.0))
        b = annulus_mask(nu=96, nv=96, r_lumen=1.6, r_outer=2.6,
                         center_uv=(5.0, 0.0))
        merged = merge_wall_regions(a, b)
        cset = mask_to_contours(merged)
        assert len(cset.lumen) == 2
        assert len(cset.outer) == 2

    def test_overlapping_annuli_single_outer(self):
        a = annulus_mask(nu=96, nv=96, r_lumen=2.0, r_outer=4.0,
                         center_uv=(-2.5, 0.0))
        b = annulus_mask(nu=96, nv=96, r_lumen=2.0, r_outer=4.0,
                         center_uv=(2.5, 0.0))
        merged = merge_wall_regions(a, b)
        cset = mask_to_contours(merged)
        assert len(cset.lumen) == 2
        assert len(cset.outer) == 1


class TestMergeWallRegions:
    def test_lumen_priority(self):
        a = annulus_mask(center_uv=(-1.0, 0.0))
        b = annulus_mask(center_uv=(1.0, 0.0))
        merged = merge_wall_regions(a, b)
        lum = (a.labels == LUMEN) | (b.labels == LUMEN)
        assert np.array_equal(merged.labels == LUMEN, lum)
        assert not np.any((merged.labels == WALL) & lum)

    def test_commutative(self):
        a = annulus_mask(center_uv=(-1.0, 0.0))
        b = annulus_mask(center_uv=(1.0, 0.0))
        assert np.array_equal(merge_wall_regions(a, b).labels,
                              merge_wall_regions(b, a).labels)

    def test_idempotent(self):
        a = annulus_mask()
        assert np.array_equal(merge_wall_regions(a, a).labels, a.labels)

    def test_geometry_mismatch(self):
        a = annulus_mask()
        b = annulus_mask(spacing=0.4)
        with pytest.raises(ContourError):
            merge_wall_regions(a, b)


class TestResample:
    def test_uniform_step(self):
        out = resample_contour(circle(4.0, 300), 0.25)
        closed = np.vstack([out, out[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        assert np.allclose(seg, seg[0], rtol=1e-6)
        assert np.all(np.abs(polygon_radii(out) - 4.0) < 1e-3)

    def test_minimum_three(self):
        tri = np.array([[0.0, 0], [1, 0], [0, 1]])
        out = resample_contour(tri, 100.0)
        assert len(out) == 3


class TestLiftAndSample:
    def test_normals_in_plane_and_outward(self):
        cset = mask_to_contours(annulus_mask())
        lumen_cloud, outer_cloud = lift_and_sample(cset, 0.3)
        for cloud in (lumen_cloud, outer_cloud):
            assert np.allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-9)
            assert np.allclose(cloud.normals[:, 2], 0.0, atol=1e-9)
            rel = cloud.points - np.array([0.0, 0.0, 0.0])
            rel[:, 2] = 0.0
            rel /= np.linalg.norm(rel, axis=1, keepdims=True)
            # outward: normal roughly aligned with the radial direction
            # (marching-squares staircase allows some angular wobble)
            dots = np.einsum("ij,ij->i", rel, cloud.normals)
            assert np.all(dots > 0.5)
            assert np.mean(dots) > 0.95

    def test_points_on_plane(self):
        pose = PlanePose(np.array([1.0, 2.0, 3.0]),
                         np.array([0.0, 1.0, 0.0]),
                         np.array([0.0, 0.0, 1.0]),
                         np.array([1.0, 0.0, 0.0]))
        mask = annulus_mask()
        cset0 = mask_to_contours(mask)
        cset = ContourSet(pose, cset0.lumen, cset0.outer)
        lumen_cloud, outer_cloud = lift_and_sample(cset, 0.3)
        for cloud in (lumen_cloud, outer_cloud):
            d = (cloud.points - pose.center) @ pose.normal
            assert np.allclose(d, 0.0, atol=1e-9)

    def test_caps_added(self):
        cset = mask_to_contours(annulus_mask())
        l_plain, o_plain = lift_and_sample(cset, 0.3)
        l_cap, o_cap = lift_and_sample(cset, 0.3, end_caps=1.0)
        assert len(l_cap.points) > len(l_plain.points)
        extra = l_cap.normals[len(l_plain.points):]
        assert np.allclose(extra, [0.0, 0.0, 1.0])
        # cap fill count approximates the disk area
        n_extra = len(extra)
        assert n_extra * 0.3 ** 2 == pytest.approx(np.pi * 9.0, rel=0.1)


class TestRasterize:
    def test_roundtrip_pixels(self):
        mask = annulus_mask()
        cset = mask_to_contours(mask)
        back = rasterize_contours(cset, mask.size, mask.spacing)
        # per-label agreement away from the half-pixel contour band
        diff = (back.labels != mask.labels).mean()
        assert diff < 0.02


class TestAnnotationIO:
    def test_roundtrip(self, tmp_path):
        cset = mask_to_contours(annulus_mask())
        doc = annotation_to_doc(3, "CCA", cset, 0.3, (64, 64))
        save_annotations([doc], tmp_path / "ann.json")
        back = load_annotations(tmp_path / "ann.json")
        assert len(back) == 1
        plane_id, vessel, got, spacing, size = back[0]
        assert plane_id == 3 and vessel == "CCA"
        assert spacing == 0.3 and size == (64, 64)
        assert np.allclose(got.pose.center, cset.pose.center)
        assert len(got.lumen) == 1 and len(got.outer) == 1
        assert np.allclose(got.lumen[0].vertices, cset.lumen[0].vertices)
        assert np.allclose(got.outer[0].vertices, cset.outer[0].vertices)

    def test_phantom_annotations_load(self, tmp_path, phantom_bundle):
        from vesselwall.phantom import write_bundle
        write_bundle(phantom_bundle, tmp_path)
        anns = load_annotations(tmp_path / "annotations.json")
        assert len(anns) == len(phantom_bundle.annotations)
        for _, vessel, cset, spacing, size in anns:
            assert vessel in ("CCA", "ICA", "ECA")
            assert cset.lumen and cset.outer
