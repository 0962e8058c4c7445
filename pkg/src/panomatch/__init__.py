"""Panorama-to-panorama matching for location recognition.

Descriptors of the images taken at one location are aggregated into a
memory vector (sum or pseudo-inverse), and locations are matched by inner
products of those vectors.
"""

from .corpus import (
    Corpus,
    GeoPosition,
    ImageRecord,
    LocationGroup,
    SynthConfig,
    geo_distance,
    group_by_location,
    load_corpus,
    load_descriptors,
    save_corpus,
    save_descriptors,
    synth_benchmark,
)
from .evaluation import (
    RecallCurve,
    SampleEvalConfig,
    recall_at_n,
    sparse_eval,
    toy_demo,
)
from .exceptions import FormatError, PanomatchError, SingularityError, ValidationError
from .linalg import PCA, gram, pca_apply, pca_fit, solve_oracle, solve_spd
from .memvec import (
    MemoryVector,
    MemoryVectorEncoder,
    Method,
    cross_weight_matrix,
    pinv_vector,
    similarity_pinv,
    similarity_sum,
    sum_vector,
)
from .retrieval import (
    ImageIndex,
    MemoryIndex,
    PanoramaRetriever,
    RankedList,
    build_index,
    load_index,
    run_mode,
    save_index,
    search,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "FormatError",
    "GeoPosition",
    "ImageIndex",
    "ImageRecord",
    "LocationGroup",
    "MemoryIndex",
    "MemoryVector",
    "MemoryVectorEncoder",
    "Method",
    "PCA",
    "PanomatchError",
    "PanoramaRetriever",
    "RankedList",
    "RecallCurve",
    "SampleEvalConfig",
    "SingularityError",
    "SynthConfig",
    "ValidationError",
    "build_index",
    "cross_weight_matrix",
    "geo_distance",
    "gram",
    "group_by_location",
    "load_corpus",
    "load_descriptors",
    "load_index",
    "pca_apply",
    "pca_fit",
    "pinv_vector",
    "recall_at_n",
    "run_mode",
    "save_corpus",
    "save_descriptors",
    "save_index",
    "search",
    "similarity_pinv",
    "similarity_sum",
    "solve_oracle",
    "solve_spd",
    "sparse_eval",
    "sum_vector",
    "synth_benchmark",
    "toy_demo",
]
