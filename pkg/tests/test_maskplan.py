"""Mask plan construction, sampling and the binary record format.

The six-word toy example (fixtures) mirrors the classic worked layout:
segments [x1][x2 x3][x4][x5][x6], masked set {2, 4}.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngramlm import (
    FineVocab,
    MaskPlan,
    Objective,
    RngState,
    build_attention_mask,
    build_joint_vocab,
    parse_plan,
    plan_comprehensive,
    plan_contiguous,
    plan_explicit,
    plan_relation,
    sample_mask,
    segment_example,
    serialize_plan,
)
from ngramlm.errors import PlanError, PlanFormatError, UsageError, VersionError
from ngramlm.maskplan import (
    read_plan_file,
    relation_from_comprehensive,
    write_plan_file,
)

from conftest import lex_from

MASKED = (2, 4)


def fid(vocab, tok):
    return vocab.index[tok]


# --- the four layouts on the toy example --------------------------------------

def test_contiguous_layout(toy_example, toy_vocab):
    plan = plan_contiguous(toy_example, MASKED, toy_vocab)
    m = toy_vocab.mask_id
    x = {i: fid(toy_vocab, f"x{i}") for i in range(1, 7)}
    # z = {x1, [M], [M], x4, [M], x6}
    assert plan.context_ids == (x[1], m, m, x[4], m, x[6])
    assert plan.context_positions == (1, 2, 3, 4, 5, 6)
    assert plan.Q == 0 and plan.targets_coarse == ()
    assert plan.targets_fine == ((1, x[2]), (2, x[3]), (4, x[5]))


def test_explicit_layout(toy_example, toy_vocab, toy_jv):
    plan = plan_explicit(toy_example, MASKED, toy_jv)
    m = toy_vocab.mask_id
    x = {i: fid(toy_vocab, f"x{i}") for i in range(1, 7)}
    y2 = toy_jv.id_of_ngram(("x2", "x3"))
    # z = {x1, [M], x4, [M], x6}; targets are joint identities y2, y4
    assert plan.context_ids == (x[1], m, x[4], m, x[6])
    assert plan.targets_coarse == ((1, y2), (3, x[5]))
    assert plan.targets_fine == ()
    assert y2 == len(toy_vocab)  # first n-gram id sits right after the fine ids


def test_comprehensive_layout(toy_example, toy_vocab, toy_jv):
    plan = plan_comprehensive(toy_example, MASKED, toy_jv)
    x = {i: fid(toy_vocab, f"x{i}") for i in range(1, 7)}
    assert plan.T == 5 and plan.Q == 3
    # [M1][M2] for the bigram slot, [M1] for the unigram slot
    assert plan.query_ids == (toy_vocab.query_id(1), toy_vocab.query_id(2),
                              toy_vocab.query_id(1))
    # queries share the owning slot's position id (slot index + 1)
    assert plan.query_positions == (2, 2, 4)
    assert plan.targets_coarse == ((1, toy_jv.id_of_ngram(("x2", "x3"))), (3, x[5]))
    assert plan.targets_fine == ((5, x[2]), (6, x[3]), (7, x[5]))


def test_relation_layout_and_rtd_labels(toy_example, toy_jv):
    base = plan_comprehensive(toy_example, MASKED, toy_jv)
    right = [y for _, y in base.targets_coarse]
    plan = relation_from_comprehensive(base, right)
    assert plan.objective == Objective.RELATION
    assert plan.rtd_labels == (1,) * plan.T  # correct identities everywhere
    assert plan.context_ids[1] == right[0] and plan.context_ids[3] == right[1]
    wrong = [right[0] + 1, right[1]]
    plan2 = relation_from_comprehensive(base, wrong)
    assert plan2.rtd_labels == (1, 0, 1, 1, 1)
    with pytest.raises(UsageError):
        relation_from_comprehensive(base, right[:1])


def test_plan_relation_validates_sampled_range(toy_example, toy_jv):
    with pytest.raises(UsageError):
        plan_relation(toy_example, MASKED, toy_jv, [len(toy_jv), 0])


def test_masked_set_is_provenance_only(toy_example, toy_vocab):
    plan = plan_contiguous(toy_example, MASKED, toy_vocab)
    assert plan.masked_set == MASKED
    clone = parse_plan(serialize_plan(plan))
    assert clone.masked_set is None
    assert clone == plan  # equality ignores the provenance field


def test_invalid_masked_sets(toy_example, toy_vocab):
    with pytest.raises(UsageError):
        plan_contiguous(toy_example, (), toy_vocab)
    with pytest.raises(UsageError):
        plan_contiguous(toy_example, (6,), toy_vocab)


def test_masked_ngram_missing_from_lexicon_is_an_error(toy_vocab, toy_jv):
    # force a multi-word segment that the joint vocab cannot identify
    ex = segment_example(tuple(f"x{i}" for i in range(1, 7)),
                         lex_from([("x2", "x3"), ("x5", "x6")]), toy_vocab)
    jv_small = toy_jv  # knows only ("x2","x3")
    with pytest.raises(PlanError):
        plan_explicit(ex, (4,), jv_small)


def test_multi_subword_word_falls_back_to_contiguous():
    # "ab" splits into two subwords -> no single fine identity
    vocab = FineVocab.from_subwords(["a", "##b", "c"])
    lex = lex_from([("c", "c")])
    ex = segment_example(("ab", "c"), lex, vocab)
    plan = plan_explicit(ex, (1,), build_joint_vocab(vocab, lex))
    m = vocab.mask_id
    assert plan.context_ids == (m, m, vocab.index["c"])
    assert plan.targets_coarse == ()
    assert plan.targets_fine == ((0, vocab.index["a"]), (1, vocab.index["##b"]))
    # relation labels mark fallback [M] positions as replaced
    comp = plan_comprehensive(ex, (1,), build_joint_vocab(vocab, lex))
    rel = relation_from_comprehensive(comp, [])
    assert rel.rtd_labels == (0, 0, 1)


# --- attention mask ------------------------------------------------------------

def test_attention_mask_structure(toy_example, toy_jv):
    plan = plan_comprehensive(toy_example, MASKED, toy_jv)
    m = build_attention_mask(plan)
    T, Q = plan.T, plan.Q
    assert m.shape == (T + Q, T + Q)
    assert np.all(m[:, :T] == 0.0)  # everyone sees the context
    assert np.all(m[:T, T:] == -np.inf)  # context never sees queries
    off_diag = m[T:, T:].copy()
    np.fill_diagonal(off_diag, -np.inf)
    assert np.all(off_diag == -np.inf)  # queries never see each other
    assert np.all(np.diag(m[T:, T:]) == 0.0)  # but do see themselves


def test_attention_mask_no_queries_is_all_zero(toy_example, toy_vocab):
    plan = plan_contiguous(toy_example, MASKED, toy_vocab)
    assert not build_attention_mask(plan).any()


# --- sampling ------------------------------------------------------------------

def test_sample_mask_quota_and_adjacency(toy_example):
    g = RngState(0)
    b = toy_example.boundaries
    for _ in range(200):
        chosen = sample_mask(b, 0.4, g)
        assert len(chosen) == 2  # round(0.4 * 5)
        assert all(1 <= j <= 5 for j in chosen)
        assert all(b2 - b1 >= 2 for b1, b2 in zip(chosen, chosen[1:]))


def test_sample_mask_minimum_one(toy_example):
    chosen = sample_mask(toy_example.boundaries, 0.05, RngState(1))
    assert len(chosen) == 1


def test_sample_mask_candidates_filter(toy_example):
    for seed in range(50):
        chosen = sample_mask(toy_example.boundaries, 0.15, RngState(seed),
                             candidates=[2])
        assert chosen == (2,)


def test_sample_mask_errors(toy_example):
    with pytest.raises(UsageError):
        sample_mask(toy_example.boundaries, 0.0, RngState(0))
    with pytest.raises(UsageError):
        sample_mask(toy_example.boundaries, 1.5, RngState(0))
    with pytest.raises(UsageError):
        sample_mask(toy_example.boundaries, 0.15, RngState(0), candidates=[99])


def test_rng_state_is_deterministic_and_advances():
    a, b = RngState(42), RngState(42)
    assert a.next_generator().integers(1 << 30) == b.next_generator().integers(1 << 30)
    assert a.counter == 1
    # different counters key different generators
    x = RngState(42, 0).next_generator().integers(1 << 30)
    y = RngState(42, 1).next_generator().integers(1 << 30)
    assert x != y


# --- binary format -------------------------------------------------------------

ids_st = st.lists(st.integers(min_value=0, max_value=2**32 - 1), min_size=1, max_size=10)


@st.composite
def plan_st(draw):
    T = draw(st.integers(min_value=1, max_value=10))
    Q = draw(st.integers(min_value=0, max_value=5))
    u32 = st.integers(min_value=0, max_value=2**32 - 1)
    ctx = tuple(draw(u32) for _ in range(T))
    qids = tuple(draw(u32) for _ in range(Q))
    cpos = tuple(range(1, T + 1))
    qpos = tuple(draw(st.integers(min_value=1, max_value=T)) for _ in range(Q))
    n_c = draw(st.integers(min_value=0, max_value=min(T, 3)))
    coarse = tuple((i, draw(u32)) for i in range(n_c))
    n_f = draw(st.integers(min_value=0, max_value=3))
    fine = tuple((draw(st.integers(min_value=0, max_value=T + Q - 1)), draw(u32))
                 for _ in range(n_f))
    rtd = None
    if draw(st.booleans()):
        rtd = tuple(draw(st.integers(min_value=0, max_value=1)) for _ in range(T))
    objective = draw(st.sampled_from(list(Objective)))
    return MaskPlan(objective, ctx, cpos, qids, qpos, coarse, fine, rtd_labels=rtd)


@settings(max_examples=120, deadline=None)
@given(plan_st())
def test_serialization_roundtrip(plan):
    assert parse_plan(serialize_plan(plan)) == plan


@settings(max_examples=60, deadline=None)
@given(plan_st(), st.integers(min_value=1, max_value=40))
def test_truncation_always_detected(plan, cut):
    data = serialize_plan(plan)
    cut = min(cut, len(data) - 1)
    with pytest.raises(PlanFormatError):
        parse_plan(data[:-cut])


def test_version_mismatch_detected(toy_example, toy_vocab):
    data = bytearray(serialize_plan(plan_contiguous(toy_example, MASKED, toy_vocab)))
    data[4] = 99  # version field follows the u32 length prefix
    with pytest.raises(VersionError):
        parse_plan(bytes(data))


def test_trailing_bytes_detected(toy_example, toy_vocab):
    data = serialize_plan(plan_contiguous(toy_example, MASKED, toy_vocab))
    # extend the payload by one byte and fix up the length prefix
    new_len = int.from_bytes(data[:4], "little") + 1
    corrupted = new_len.to_bytes(4, "little") + data[4:] + b"\x00"
    with pytest.raises(PlanFormatError):
        parse_plan(corrupted)


def test_plan_file_roundtrip(tmp_path, toy_example, toy_vocab, toy_jv):
    plans = [
        plan_contiguous(toy_example, MASKED, toy_vocab),
        plan_explicit(toy_example, MASKED, toy_jv),
        plan_comprehensive(toy_example, MASKED, toy_jv),
    ]
    path = tmp_path / "plans.bin"
    write_plan_file(path, plans, {"note": "toy"})
    prov, back = read_plan_file(path)
    assert prov == {"note": "toy"}
    assert back == plans


def test_plan_file_bad_magic(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"XXXX garbage")
    with pytest.raises(PlanFormatError):
        read_plan_file(p)
