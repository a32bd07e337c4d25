"""Mask plans: one training example per plan.

A plan fixes the context sequence (with masked segments collapsed,
replaced or blanked according to the objective), appended query symbols
[M1..Mn] sharing the owning slot's position id, the coarse/fine target
sets, optional replaced-token-detection labels, and (reconstructed on
demand) the additive {0, -inf} attention mask that hides n-gram length
from the context.
"""

from __future__ import annotations

import enum
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import FineVocab
from .errors import PlanError, PlanFormatError, UsageError, VersionError
from .lexicon import JointVocab
from .segmenter import BoundarySeq, extract_boundaries

log = logging.getLogger(__name__)

PLAN_VERSION = 1
FILE_MAGIC = b"NGPL"
NEG_INF = float("-inf")


class Objective(enum.IntEnum):
    CONTIGUOUS = 0
    EXPLICIT = 1
    COMPREHENSIVE = 2
    RELATION = 3


@dataclass
class RngState:
    """Deterministic draw source: (seed, counter) keys a fresh generator."""

    seed: int
    counter: int = 0

    def next_generator(self) -> np.random.Generator:
        g = np.random.default_rng([self.seed & 0xFFFFFFFFFFFFFFFF, self.counter])
        self.counter += 1
        return g


@dataclass
class SegmentedExample:
    """A word sequence with its n-gram boundaries and subword alignment."""

    words: tuple
    boundaries: BoundarySeq
    subword_ids: tuple
    word_spans: tuple  # per word: (lo, hi) into subword_ids

    @property
    def num_segments(self) -> int:
        return self.boundaries.num_segments

    def segment_words(self, j: int) -> tuple:
        """Words of segment j (1-based)."""
        b = self.boundaries.boundaries
        return self.words[b[j - 1] - 1 : b[j] - 1]

    def segment_subword_range(self, j: int) -> tuple:
        b = self.boundaries.boundaries
        wlo, whi = b[j - 1] - 1, b[j] - 1
        return (self.word_spans[wlo][0], self.word_spans[whi - 1][1])


def segment_example(words, lex, vocab: FineVocab) -> SegmentedExample:
    from .corpus import subword_tokenize

    b = extract_boundaries(words, lex)
    ids, spans = subword_tokenize(words, vocab)
    return SegmentedExample(tuple(words), b, tuple(ids), tuple(spans))


@dataclass
class MaskPlan:
    objective: Objective
    context_ids: tuple
    context_positions: tuple
    query_ids: tuple
    query_positions: tuple
    targets_coarse: tuple  # (context slot index, joint id)
    targets_fine: tuple  # (index into context+queries, fine id)
    rtd_labels: tuple | None = None
    # provenance only; not persisted in the binary format
    masked_set: tuple | None = field(default=None, compare=False)

    @property
    def T(self) -> int:
        return len(self.context_ids)

    @property
    def Q(self) -> int:
        return len(self.query_ids)

    def all_ids(self) -> tuple:
        return self.context_ids + self.query_ids

    def all_positions(self) -> tuple:
        return self.context_positions + self.query_positions


def sample_mask(b: BoundarySeq, rate: float, rng: RngState, candidates=None) -> tuple:
    """Sample segment indexes to mask: max(1, round(rate * num_segments)),
    uniform without replacement, never two adjacent segments.

    ``candidates`` restricts the eligible segment indexes (1-based); used
    e.g. to mask only multi-word segments during evaluation.
    """
    if not 0 < rate < 1:
        raise UsageError(f"mask rate must be in (0, 1), got {rate}")
    n = b.num_segments
    if n == 0:
        raise UsageError("empty boundary list")
    if candidates is None:
        candidates = list(range(1, n + 1))
    else:
        candidates = [j for j in candidates if 1 <= j <= n]
        if not candidates:
            raise UsageError("no maskable segments among candidates")
    quota = max(1, round(rate * n))
    g = rng.next_generator()
    perm = g.permutation(len(candidates))
    chosen: set = set()
    for idx in perm:
        j = candidates[idx]
        if j - 1 in chosen or j + 1 in chosen:
            continue
        chosen.add(j)
        if len(chosen) >= quota:
            break
    return tuple(sorted(chosen))


def _segment_info(ex: SegmentedExample, jv: JointVocab, j: int, max_query: int):
    """(joint_id or None, subword range) for segment j.

    joint_id is None when the segment has no single identity in the joint
    space (multi-subword single word, n-gram missing from the lexicon is
    an error instead) or when it exceeds the query budget.
    """
    words = ex.segment_words(j)
    lo, hi = ex.segment_subword_range(j)
    n_j = hi - lo
    if len(words) > 1:
        jid = jv.id_of_ngram(words)
        if jid is None:
            raise PlanError(f"masked n-gram {words} absent from lexicon")
    elif n_j == 1:
        jid = ex.subword_ids[lo]
    else:
        jid = None  # multi-subword single word: contiguous fallback
    if jid is not None and n_j > max_query:
        log.warning("segment %s has %d subwords > max query %d; contiguous fallback", words, n_j, max_query)
        jid = None
    return jid, (lo, hi)


def plan_contiguous(ex: SegmentedExample, masked: tuple, vocab: FineVocab) -> MaskPlan:
    """Each masked subword replaced by [M]; one fine target per subword."""
    _check_masked(ex, masked)
    ids = list(ex.subword_ids)
    fine = []
    for j in masked:
        lo, hi = ex.segment_subword_range(j)
        for p in range(lo, hi):
            fine.append((p, ex.subword_ids[p]))
            ids[p] = vocab.mask_id
    T = len(ids)
    return MaskPlan(
        Objective.CONTIGUOUS,
        tuple(ids),
        tuple(range(1, T + 1)),
        (),
        (),
        (),
        tuple(fine),
        masked_set=tuple(masked),
    )


def _explicit_layout(ex: SegmentedExample, masked: tuple, jv: JointVocab):
    """Context with masked segments collapsed to one [M] slot each.

    Returns (context ids, coarse targets, fallback fine targets,
    slot_meta) where slot_meta maps slot index -> subword length n_j of
    the owning masked segment.
    """
    _check_masked(ex, masked)
    vocab = jv.fine
    masked = set(masked)
    ids: list = []
    coarse: list = []
    fallback_fine: list = []
    slot_meta: list = []
    for j in range(1, ex.num_segments + 1):
        lo, hi = ex.segment_subword_range(j)
        if j not in masked:
            ids.extend(ex.subword_ids[lo:hi])
            continue
        jid, _ = _segment_info(ex, jv, j, vocab.max_query)
        if jid is None:
            for p in range(lo, hi):
                fallback_fine.append((len(ids), ex.subword_ids[p]))
                ids.append(vocab.mask_id)
        else:
            coarse.append((len(ids), jid))
            slot_meta.append((len(ids), hi - lo, lo))
            ids.append(vocab.mask_id)
    return ids, coarse, fallback_fine, slot_meta


def plan_explicit(ex: SegmentedExample, masked: tuple, jv: JointVocab) -> MaskPlan:
    """One [M] slot per masked segment; targets are joint identities."""
    ids, coarse, fallback_fine, _ = _explicit_layout(ex, masked, jv)
    T = len(ids)
    return MaskPlan(
        Objective.EXPLICIT,
        tuple(ids),
        tuple(range(1, T + 1)),
        (),
        (),
        tuple(coarse),
        tuple(fallback_fine),
        masked_set=tuple(masked),
    )


def plan_comprehensive(ex: SegmentedExample, masked: tuple, jv: JointVocab) -> MaskPlan:
    """Explicit layout plus [M1..Mn] queries sharing each slot's position."""
    vocab = jv.fine
    ids, coarse, fallback_fine, slot_meta = _explicit_layout(ex, masked, jv)
    T = len(ids)
    query_ids: list = []
    query_positions: list = []
    fine: list = list(fallback_fine)
    for slot, n_j, lo in slot_meta:
        for i in range(n_j):
            q_index = T + len(query_ids)
            query_ids.append(vocab.query_id(i + 1))
            query_positions.append(slot + 1)  # same position id as the slot
            fine.append((q_index, ex.subword_ids[lo + i]))
    return MaskPlan(
        Objective.COMPREHENSIVE,
        tuple(ids),
        tuple(range(1, T + 1)),
        tuple(query_ids),
        tuple(query_positions),
        tuple(coarse),
        tuple(fine),
        masked_set=tuple(masked),
    )


def relation_from_comprehensive(plan: MaskPlan, sampled) -> MaskPlan:
    """Fill each [M] slot with a sampled joint identity and derive RTD labels.

    ``sampled`` aligns with plan.targets_coarse.  Labels are per context
    position: 1 where the filled sequence matches the original-identity
    sequence, 0 at slots holding a wrong identity and at fallback [M]s.
    """
    if len(sampled) != len(plan.targets_coarse):
        raise UsageError(f"expected {len(plan.targets_coarse)} sampled ids, got {len(sampled)}")
    ids = list(plan.context_ids)
    labels = [1] * plan.T
    slot_of = {}
    for (slot, y), y_prime in zip(plan.targets_coarse, sampled):
        y_prime = int(y_prime)
        ids[slot] = y_prime
        labels[slot] = 1 if y_prime == y else 0
        slot_of[slot] = True
    for idx, _ in plan.targets_fine:
        if idx < plan.T and idx not in slot_of:
            labels[idx] = 0  # fallback [M] position, never the original
    return MaskPlan(
        Objective.RELATION,
        tuple(ids),
        plan.context_positions,
        plan.query_ids,
        plan.query_positions,
        plan.targets_coarse,
        plan.targets_fine,
        rtd_labels=tuple(labels),
        masked_set=plan.masked_set,
    )


def plan_relation(ex: SegmentedExample, masked: tuple, jv: JointVocab, sampled) -> MaskPlan:
    base = plan_comprehensive(ex, masked, jv)
    for y_prime in sampled:
        if not 0 <= int(y_prime) < len(jv):
            raise UsageError(f"sampled id {y_prime} outside joint range 0..{len(jv) - 1}")
    return relation_from_comprehensive(base, sampled)


def build_attention_mask(plan: MaskPlan, dtype=np.float32) -> np.ndarray:
    """Additive mask over {0, -inf}: context never sees queries; queries
    see the context and themselves only."""
    T, Q = plan.T, plan.Q
    n = T + Q
    m = np.zeros((n, n), dtype=dtype)
    if Q:
        m[:, T:] = NEG_INF
        for q in range(T, n):
            m[q, q] = 0.0
    return m


def _check_masked(ex: SegmentedExample, masked):
    if not masked:
        raise UsageError("masked set is empty")
    for j in masked:
        if not 1 <= j <= ex.num_segments:
            raise UsageError(f"masked index {j} outside 1..{ex.num_segments}")


# ---------------------------------------------------------------------------
# binary record format (little-endian, length-prefixed)

def serialize_plan(plan: MaskPlan) -> bytes:
    T, Q = plan.T, plan.Q
    parts = [struct.pack("<HBII", PLAN_VERSION, int(plan.objective), T, Q)]
    parts.append(struct.pack(f"<{T}I", *plan.context_ids))
    parts.append(struct.pack(f"<{T + Q}I", *plan.all_positions()))
    parts.append(struct.pack(f"<{Q}I", *plan.query_ids))
    parts.append(struct.pack("<I", len(plan.targets_coarse)))
    for slot, y in plan.targets_coarse:
        parts.append(struct.pack("<II", slot, y))
    parts.append(struct.pack("<I", len(plan.targets_fine)))
    for idx, x in plan.targets_fine:
        parts.append(struct.pack("<II", idx, x))
    if plan.rtd_labels is None:
        parts.append(b"\x00")
    else:
        bits = bytearray((T + 7) // 8)
        for i, lab in enumerate(plan.rtd_labels):
            if lab:
                bits[i // 8] |= 1 << (i % 8)
        parts.append(b"\x01" + bytes(bits))
    payload = b"".join(parts)
    return struct.pack("<I", len(payload)) + payload


class _Reader:
    def __init__(self, buf: bytes, base_offset: int = 0):
        self.buf = buf
        self.pos = 0
        self.base = base_offset

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise PlanFormatError("truncated plan record", self.base + self.pos)
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out


def parse_plan(data: bytes, base_offset: int = 0) -> MaskPlan:
    r = _Reader(data, base_offset)
    (payload_len,) = r.take("<I")
    if payload_len != len(data) - 4:
        raise PlanFormatError(
            f"record length {payload_len} does not match payload {len(data) - 4}", base_offset
        )
    version, objective, T, Q = r.take("<HBII")
    if version != PLAN_VERSION:
        raise VersionError(f"plan record version {version}, expected {PLAN_VERSION}")
    context_ids = r.take(f"<{T}I")
    positions = r.take(f"<{T + Q}I")
    query_ids = r.take(f"<{Q}I")
    (n_coarse,) = r.take("<I")
    coarse = tuple(r.take("<II") for _ in range(n_coarse))
    (n_fine,) = r.take("<I")
    fine = tuple(r.take("<II") for _ in range(n_fine))
    (has_rtd,) = r.take("<B")
    rtd = None
    if has_rtd:
        (raw,) = r.take(f"<{(T + 7) // 8}s")
        rtd = tuple((raw[i // 8] >> (i % 8)) & 1 for i in range(T))
    if r.pos != len(data):
        raise PlanFormatError("trailing bytes after plan record", base_offset + r.pos)
    return MaskPlan(
        Objective(objective),
        context_ids,
        positions[:T],
        query_ids,
        positions[T:],
        coarse,
        fine,
        rtd_labels=rtd,
    )


def write_plan_file(path, plans, provenance: dict | None = None):
    """Plan container: magic, file version, provenance JSON, then records."""
    header = json.dumps(provenance or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(FILE_MAGIC)
        f.write(struct.pack("<HI", PLAN_VERSION, len(header)))
        f.write(header)
        for plan in plans:
            f.write(serialize_plan(plan))


def read_plan_file(path):
    """Returns (provenance dict, list of plans)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FILE_MAGIC:
        raise PlanFormatError(f"{path}: bad magic, not a plan file", 0)
    version, header_len = struct.unpack_from("<HI", data, 4)
    if version != PLAN_VERSION:
        raise VersionError(f"plan file version {version}, expected {PLAN_VERSION}")
    pos = 10 + header_len
    provenance = json.loads(data[10:pos].decode("utf-8"))
    plans = []
    while pos < len(data):
        if pos + 4 > len(data):
            raise PlanFormatError("truncated record length prefix", pos)
        (payload_len,) = struct.unpack_from("<I", data, pos)
        end = pos + 4 + payload_len
        if end > len(data):
            raise PlanFormatError("truncated plan record", pos)
        plans.append(parse_plan(data[pos:end], pos))
        pos = end
    return provenance, plans


def plan_to_json(plan: MaskPlan) -> str:
    """Human-readable one-line JSON dump of a plan."""
    return json.dumps(
        {
            "objective": plan.objective.name.lower(),
            "context_ids": list(plan.context_ids),
            "context_positions": list(plan.context_positions),
            "query_ids": list(plan.query_ids),
            "query_positions": list(plan.query_positions),
            "targets_coarse": [list(t) for t in plan.targets_coarse],
            "targets_fine": [list(t) for t in plan.targets_fine],
            "rtd_labels": None if plan.rtd_labels is None else list(plan.rtd_labels),
        },
        sort_keys=True,
    )
