"""Cross-camera feature fusion and learned measure combination for
re-identification galleries."""

__version__ = "0.1.0"

from .amc import (
    MeasureVector,
    RepeatedFit,
    TripletDataset,
    build_triplet_dataset,
    cce,
    fit_weights,
    fit_weights_repeated,
    make_rng,
    sample_triplet,
)
from .fusion import RefinedFeature, cffm_fuse, uffm_fuse, uffm_fuse_all
from .pipeline import (
    EvalReport,
    RankingResult,
    baseline_weights,
    combined_score,
    evaluate,
    rank_all,
)
from .simkit import NeighborList, cosine, knn_cross_camera, similarity_matrix
from .store import (
    CombinationWeights,
    DataFormatError,
    FeatureRecord,
    FeatureSet,
    load_feature_set,
    load_feature_set_csv,
    load_weights,
    save_feature_set,
    save_weights,
)
from .synth import SynthConfig, generate

__all__ = [
    "CombinationWeights",
    "DataFormatError",
    "EvalReport",
    "FeatureRecord",
    "FeatureSet",
    "MeasureVector",
    "NeighborList",
    "RankingResult",
    "RefinedFeature",
    "RepeatedFit",
    "SynthConfig",
    "TripletDataset",
    "baseline_weights",
    "build_triplet_dataset",
    "cce",
    "cffm_fuse",
    "combined_score",
    "cosine",
    "evaluate",
    "fit_weights",
    "fit_weights_repeated",
    "generate",
    "knn_cross_camera",
    "load_feature_set",
    "load_feature_set_csv",
    "load_weights",
    "make_rng",
    "rank_all",
    "sample_triplet",
    "save_feature_set",
    "save_weights",
    "similarity_matrix",
    "uffm_fuse",
    "uffm_fuse_all",
]
