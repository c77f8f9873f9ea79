"""Functional-connectivity mesh features for multi-voxel brain-state decoding."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    Dataset,
    SplitSpec,
    detrend_linear,
    load_dataset,
    save_dataset,
    shift_onsets,
    split_train_test,
)
from .patching import (  # noqa: F401
    Patching,
    build_local_scaling_affinity,
    kmeans_partition,
    spectral_partition,
    spectral_partition_coords,
)
from .connectivity import (  # noqa: F401
    ConnectivitySet,
    DiscriminativeSet,
    discriminative_entropy,
    discriminative_std,
    peak_correlation,
    per_class_fc,
    scan_correlation,
    within_cluster_fc,
    zero_order_correlation,
)
from .mesh import (  # noqa: F401
    FeatureMatrix,
    Neighborhood,
    WindowSpec,
    build_neighborhoods,
    estimate_arc_weights,
    extract_fc_lrf,
    load_features,
    neighborhood_ssd,
    neighbors_by_euclidean,
    neighbors_by_sign,
    neighbors_by_threshold,
    save_features,
)
from .classify import (  # noqa: F401
    Metrics,
    TrainedModel,
    cross_validate,
    evaluate,
    predict,
    train_knn,
    train_linear_svm,
)
from .synth import (  # noqa: F401
    GroundTruth,
    SynthSpec,
    generate_synthetic,
    oracle_all_pairs_correlation,
    oracle_least_squares,
)
from .pipeline import PipelineConfig, run_pipeline, run_sweep  # noqa: F401
