"""Shape-model-guided random-forest segmentation of 2-D grayscale images.

The package builds a PCA point-distribution model over contour landmarks,
trains a pixel-classification random forest whose split tests include signed
distances to model-generated contours, and fits the shape model to the
forest's probability map with bound-constrained pattern search; a temporal
penalty extends the fit to frame sequences.
"""

from .errors import ShapeForestError
from .fitting import (
    FitConfig,
    FitResult,
    PoseParams,
    apply_pose,
    energy_static,
    energy_temporal,
    fit_sequence,
    fit_shape,
    pattern_search,
)
from .features import (
    Axis,
    BoxDiff,
    BoxMean,
    BoxSpec,
    Branch,
    EvalContext,
    FeaturePoolConfig,
    Position,
    SMFeature,
    SMTableCache,
    SplitTest,
    apply_test,
    classic_pool,
    eval_feature,
    position_pool,
    sample_feature,
    sm_pool,
)
from .forest import (
    Forest,
    Leaf,
    Split,
    TrainConfig,
    information_gain,
    load_forest,
    predict_map,
    predict_map_depths,
    save_forest,
    train_forest,
)
from .imaging import (
    BinaryMask,
    BoundingBox,
    Image2D,
    box_mean,
    crop_resample,
    histogram_equalize,
    integral_image,
    load_pgm,
    map_contour_back,
    map_contour_to_box,
    points_inside,
    rasterize_mask,
    read_boxes,
    save_pgm,
    signed_distance_map,
    signed_distances,
    write_boxes,
)
from .metrics import (
    ContourPair,
    SummaryStats,
    areas,
    hausdorff,
    jaccard,
    mad,
    resample_contour,
    summarize,
)
from .pipeline import (
    ManifestEntry,
    PipelineConfig,
    perturb_box,
    read_manifest,
    segment_image,
    segment_sequence,
    sub_landmarks,
    training_pairs,
    write_manifest,
)
from .shape_model import (
    LandmarkSet,
    ShapeModel,
    ShapeParams,
    build_model,
    generate_shape,
    load_model,
    model_sha256,
    project_shape,
    read_landmarks,
    sample_params,
    save_model,
    write_landmarks,
)
from .synth import (
    KEY_INDICES,
    M_LANDMARKS,
    Sample,
    SynthConfig,
    band_contour,
    cycle_latents,
    generate_dataset,
    generate_sequence,
    tight_box,
)

__version__ = "0.1.0"
