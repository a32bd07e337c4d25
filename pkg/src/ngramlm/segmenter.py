"""Maximum-matching segmentation: tile a word sequence into segments where
every multi-word segment belongs to the n-gram lexicon, choosing the path
with the fewest segments.  Ties prefer longer segments earlier
(leftmost-longest), which makes the result deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UsageError
from .lexicon import NGramLexicon

ENUMERATION_CAP = 24


@dataclass(frozen=True)
class BoundarySeq:
    """Starting boundaries b (1-based word indices, b_1 = 1, b_last = |x|+1)
    and the words they tile."""

    boundaries: tuple
    words: tuple

    def __post_init__(self):
        b = self.boundaries
        if not b or b[0] != 1 or b[-1] != len(self.words) + 1:
            raise UsageError(f"invalid boundary sequence {b} for {len(self.words)} words")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise UsageError(f"boundaries not strictly increasing: {b}")

    @property
    def num_segments(self) -> int:
        return len(self.boundaries) - 1

    def segments(self) -> list:
        b = self.boundaries
        return [tuple(self.words[b[i] - 1 : b[i + 1] - 1]) for i in range(len(b) - 1)]


def enumerate_paths(words, lex: NGramLexicon) -> list:
    """All valid tilings; single words are always valid segments.

    Testing utility, capped at ENUMERATION_CAP words to bound blowup.
    """
    words = tuple(words)
    if len(words) > ENUMERATION_CAP:
        raise UsageError(f"enumeration capped at {ENUMERATION_CAP} words")
    max_order = lex.max_order
    out = []

    def rec(i, acc):
        if i == len(words):
            out.append(BoundarySeq(tuple(acc), words))
            return
        for l in range(1, max_order + 1):
            if i + l > len(words):
                break
            if l == 1 or words[i : i + l] in lex:
                rec(i + l, acc + [i + 1 + l])

    if words:
        rec(0, [1])
    else:
        out.append(BoundarySeq((1,), words))
    return out


def extract_boundaries(words, lex: NGramLexicon) -> BoundarySeq:
    """Shortest tiling via dynamic programming, leftmost-longest on ties.

    Linear in len(words) * max lexicon order.
    """
    words = tuple(words)
    n = len(words)
    max_order = max(lex.max_order, 1)
    # minseg[i] = fewest segments tiling words[i:]
    minseg = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        best = 1 + minseg[i + 1]  # unigram always valid
        for l in range(2, min(max_order, n - i) + 1):
            if words[i : i + l] in lex:
                best = min(best, 1 + minseg[i + l])
        minseg[i] = best
    # walk left to right taking the longest segment consistent with minseg
    bounds = [1]
    i = 0
    while i < n:
        take = 1
        for l in range(min(max_order, n - i), 1, -1):
            if words[i : i + l] in lex and 1 + minseg[i + l] == minseg[i]:
                take = l
                break
        i += take
        bounds.append(i + 1)
    return BoundarySeq(tuple(bounds), words)
