"""Facts-to-story pipeline: salience ranking, spacing planner, cloze generation."""

from ._core import (
    AlignedExample,
    ClozeLM,
    ClozeTemplate,
    DataError,
    NumericError,
    Planner,
    Vocabulary,
    align_facts,
    apply_repetition_penalty,
    fact_adherence,
    make_aligned_example,
    normalize_whitespace,
    positions_to_spacings,
    rank_facts,
    sample_nucleus,
    sample_top_k,
    spacing_loss,
    spacings_to_template,
)

__all__ = [
    "AlignedExample",
    "ClozeLM",
    "ClozeTemplate",
    "DataError",
    "NumericError",
    "Planner",
    "Vocabulary",
    "align_facts",
    "apply_repetition_penalty",
    "fact_adherence",
    "make_aligned_example",
    "normalize_whitespace",
    "positions_to_spacings",
    "rank_facts",
    "sample_nucleus",
    "sample_top_k",
    "spacing_loss",
    "spacings_to_template",
]
