"""Colored body-mesh recovery from image pairs.

A parametric body model, weak-perspective camera, deterministic software
rasterizer, visibility-aware vertex color recovery with reflection-group
propagation, appearance-consensus losses, and a hand-differentiated fitter
that recovers pose/shape/camera directly from an image pair.
"""

from .bodymodel import (
    BodyModel,
    PartTable,
    SymmetryGroups,
    load_model_json,
    regress_joints,
    save_model_json,
    skin,
    skin_with_jacobians,
    vertex_normals,
)
from .camera import CameraParams, camera_normals, project
from .colorrec import (
    ColoredMesh,
    PartPrototypes,
    VisibilityWeights,
    builtin_features,
    part_prototypes,
    pick_colors,
    propagate_symmetry,
    visibility,
)
from .errors import (
    ConsensusMeshError,
    DegenerateConfiguration,
    DegenerateFace,
    Diverged,
    InsufficientData,
    ModelFormatError,
    NoCommonParts,
    ResolutionMismatch,
)
from .fitter import (
    FitConfig,
    FitProblem,
    FitResult,
    ImageVars,
    LossWeights,
    finite_diff_check,
    fit_pair,
    total_loss,
)
from .images import DepthMap, FeatureMap, ImageRGB, Mask
from .metrics import mpjpe, pa_mpjpe, procrustes_align, seg_metrics
from .poseprior import PosePrior, fit_prior
from .raster import (
    rasterize_depth,
    render_colored,
    render_part_labels,
    sample_bilinear,
    soft_silhouette,
)
from .rotations import rodrigues, rodrigues_with_jacobian
from .synth import synth_model, synthetic_mocap

__version__ = "0.1.0"
