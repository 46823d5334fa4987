"""Dense 3D vessel-wall pseudo-labels from sparse clinical annotations, and
contour-based evaluation of 3D segmentations on sparse expert cross-sections.
"""

__version__ = "0.1.0"

from .volume import (Affine3, CrossSection, PlanePose, Volume3, load_volume,
                     resample_isotropic, sample_label_plane, sample_plane,
                     save_volume, trilinear)
from .centerline import (BifurcationAxis, CenterlineTree, PolyLine3,
                         SamplingPlan, bifurcation_axis, frames_along,
                         load_centerline, plan_cross_sections,
                         resample_polyline, save_centerline, tangent_at)
from .segmenter import (LabelMask2D, SegmenterBackend, segment,
                        segment_bifurcation)
from .contours import (Contour2D, ContourSet, OrientedPointCloud,
                       lift_and_sample, load_annotations, mask_to_contours,
                       merge_wall_regions, rasterize_contours,
                       save_annotations)
from .reconstruction import (PipelineConfig, PseudoLabelMask, ScalarGrid3,
                             TriangleMesh, build_pseudolabel,
                             extract_isosurface, poisson_indicator,
                             voxelize_solids)
from .metrics import (AggregateReport, EvalCase, MetricsRecord, acd,
                      aggregate, detect_failed, dsc, evaluate_case,
                      hausdorff, postprocess_eval_plane, select_configuration)
from .phantom import PhantomBundle, PhantomSpec, generate, membership
