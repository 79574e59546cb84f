"""flexparse: occlusion-aware part parsing with tree-structured models.

A person is scored as the best-scoring connected subtree (composition) of
a part tree; inference is exact max-product dynamic programming over all
compositions at once, with generalized distance transforms for the
quadratic deformation maximizations.
"""

from .gdt import QuadPenalty, dt1d_max, dt2d_max
from .infer import (
    Composition,
    MessageTable,
    PoseEstimate,
    backtrack,
    composition_from_visible,
    detect,
    score_composition,
    single_pass_messages,
    two_pass_messages,
)
from .model import (
    LabelSpace,
    ModelParams,
    PartGraph,
    build_label_space,
    load_model,
    params_to_vector,
    save_model,
    validate_model,
    vector_to_params,
)
from .oracle import brute_force_best, count_compositions, enumerate_compositions
from .scoremap import (
    LOG_FLOOR,
    ScoreMapSet,
    TermGrids,
    compute_terms,
    load_scoremaps,
    save_scoremaps,
)

__version__ = "0.1.0"
