import numpy as np
import pytest

from vesselwall.contours import OrientedPointCloud
from vesselwall.phantom import PhantomSpec, generate, membership
from vesselwall.reconstruction import (PipelineConfig, build_pseudolabel,
                                       poisson_indicator,
                                       run_segmentation_stage)
from vesselwall.segmenter import SegmenterBackend


@pytest.fixture(scope="session")
def phantom_bundle():
    return generate(PhantomSpec())


@pytest.fixture(scope="session")
def builtin_backend():
    return SegmenterBackend("builtin_oracle")


@pytest.fixture(scope="session")
def pipeline_results(phantom_bundle, builtin_backend):
    """Full pseudo-label runs, bifurcation axis on, keyed by sampling distance.

    Shared across tests because each run solves two Poisson systems.
    """
    cache = {}

    def run(sd):
        if sd not in cache:
            cfg = PipelineConfig(sd=sd, use_bifurcation_axis=True)
            cache[sd] = build_pseudolabel(phantom_bundle.volume,
                                          phantom_bundle.tree,
                                          builtin_backend, cfg)
        return cache[sd]

    return run


@pytest.fixture(scope="session")
def segmentation_stats(phantom_bundle, builtin_backend):
    """Plane validity stats for the full SD x BA grid (no reconstruction)."""
    stats = {}
    for sd in (0.3, 0.6, 1.2):
        for ba in (True, False):
            cfg = PipelineConfig(sd=sd, use_bifurcation_axis=ba)
            _, s = run_segmentation_stage(phantom_bundle.volume,
                                          phantom_bundle.tree,
                                          builtin_backend, cfg)
            stats[(sd, ba)] = s
    return stats


def cylinder_cloud(radius=4.0, length=20.0, ring_spacing=0.6,
                   samples_per_ring=84, cap_step=0.3) -> OrientedPointCloud:
    """Oriented samples of a capped cylinder along +z starting at z=0."""
    pts, nrm = [], []
    for z in np.arange(0.0, length + 1e-9, ring_spacing):
        t = np.linspace(0, 2 * np.pi, samples_per_ring, endpoint=False)
        pts.append(np.column_stack([radius * np.cos(t), radius * np.sin(t),
                                    np.full_like(t, z)]))
        nrm.append(np.column_stack([np.cos(t), np.sin(t), np.zeros_like(t)]))
    g = np.arange(-radius, radius + cap_step, cap_step)
    gx, gy = np.meshgrid(g, g)
    m = gx ** 2 + gy ** 2 <= radius * radius
    for z, s in ((0.0, -1.0), (length, 1.0)):
        pts.append(np.column_stack([gx[m], gy[m], np.full(int(m.sum()), z)]))
        nrm.append(np.tile([0.0, 0.0, s], (int(m.sum()), 1)))
    return OrientedPointCloud(np.vstack(pts), np.vstack(nrm), "outer_solid")


@pytest.fixture(scope="session")
def cylinder_reconstruction():
    cloud = cylinder_cloud()
    grid, info = poisson_indicator(cloud, 0.3)
    return cloud, grid, info


def truth_on_grid(spec: PhantomSpec, mask_volume):
    """Analytic phantom labels evaluated at the voxel centers of a volume."""
    pts = mask_volume.voxel_centers_world().reshape(-1, 3)
    return membership(spec, pts).reshape(mask_volume.dims)


def dice(a, b) -> float:
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    s = int(a.sum()) + int(b.sum())
    return 1.0 if s == 0 else 2.0 * int((a & b).sum()) / s
