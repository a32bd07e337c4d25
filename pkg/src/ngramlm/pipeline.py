"""End-to-end plan generation: segment each document against the lexicon,
sample masked segments and build one plan per document."""

from __future__ import annotations

from .corpus import FineVocab, WordStream
from .errors import UsageError
from .lexicon import JointVocab, NGramLexicon
from .maskplan import (
    MaskPlan,
    Objective,
    RngState,
    plan_comprehensive,
    plan_contiguous,
    plan_explicit,
    sample_mask,
    segment_example,
)

DEFAULT_MASK_RATE = 0.15


def make_plans(stream: WordStream, lex: NGramLexicon, jv: JointVocab,
               objective: Objective, rate: float = DEFAULT_MASK_RATE,
               seed: int = 0, ngram_only: bool = False,
               max_positions: int | None = None) -> list[MaskPlan]:
    """One plan per document.  ``ngram_only`` restricts masking to
    multi-word segments (used for n-gram perplexity evaluation).

    Relation-objective plans use the comprehensive layout; generator
    samples are filled in at training time.
    """
    vocab = jv.fine
    rng = RngState(seed)
    plans = []
    for doc in stream:
        ex = segment_example(doc, lex, vocab)
        if ex.num_segments == 0:
            continue
        if max_positions is not None and len(ex.subword_ids) > max_positions:
            continue
        candidates = None
        if ngram_only:
            candidates = [j for j in range(1, ex.num_segments + 1)
                          if len(ex.segment_words(j)) > 1]
            if not candidates:
                continue
        masked = sample_mask(ex.boundaries, rate, rng, candidates)
        if objective == Objective.CONTIGUOUS:
            plans.append(plan_contiguous(ex, masked, vocab))
        elif objective == Objective.EXPLICIT:
            plans.append(plan_explicit(ex, masked, jv))
        elif objective in (Objective.COMPREHENSIVE, Objective.RELATION):
            plans.append(plan_comprehensive(ex, masked, jv))
        else:
            raise UsageError(f"unknown objective {objective}")
    return plans
