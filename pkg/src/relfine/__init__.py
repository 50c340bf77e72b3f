"""relfine: spatial-relation calibration and fuzzy-logic segmentation refinement.

The pipeline: calibrate a set of <subject, relation, object> triplets
(bidirectional augmentation, polar validation, contradiction resolution),
compile the survivors into a differentiable constraint loss over per-category
probability maps, and refine noisy segmentations by test-time gradient
descent so the predicted masks respect the stated relations.
"""

from .errors import (
    FormatError,
    RelfineError,
    SceneSetMismatchError,
    SceneSpecError,
    UnknownCategoryError,
)
from .evaluate import (
    BucketDelta,
    EvalReport,
    compare_runs,
    constraint_satisfaction,
    evaluate_scene,
    iou_per_class,
    macc,
    miou,
    triplet_satisfied,
    write_bucket_csv,
)
from .gradcheck import GradCheckResult, check_instance, finite_difference_gradient, run_gradcheck
from .grid import (
    CoordinateMaps,
    LabelMap,
    ProbabilityMap,
    coordinate_maps,
    make_probability_map,
    read_grid,
    read_labels,
    read_rsgf,
    weighted_mean_coordinate,
    write_grid_json,
    write_labels_pgm,
    write_rsgf,
)
from .logic import (
    CompiledConstraint,
    ConstraintTerm,
    PseudoMask,
    SpatialLossConfig,
    compile_constraints,
    constraint_loss,
    constraint_weight,
    fuzzy_implication,
    half_plane_mask,
    pseudo_mask,
    spatial_loss,
    spatial_loss_logit_gradient,
)
from .refine import (
    AdamState,
    RefineConfig,
    RefineTrace,
    StepRecord,
    adam_step,
    evaluate_objective,
    fidelity_loss,
    refine,
)
from .relations import (
    CalibrationAudit,
    CalibrationOptions,
    CalibrationResult,
    ContradictionPair,
    Relation,
    RelationOracle,
    ScriptedOracle,
    SpatialTriplet,
    TripletSet,
    augment_bidirectional,
    calibrate,
    detect_contradictions,
    empty_triplet_set,
    geometric_oracle,
    load_scripted_oracle,
    load_triplets,
    opposite,
    resolve_contradictions,
    save_triplets,
    scripted_oracle,
    validate_polar,
)
from .scenes import (
    Confusion,
    Placement,
    Scene,
    SceneSpec,
    derive_gt_triplets,
    generate_scene,
    load_scene_bundle,
    random_grid_spec,
    save_scene_bundle,
)
from .state import SegmentationState, argmax_labels, init_state, log_softmax, softmax

__version__ = "0.1.0"
