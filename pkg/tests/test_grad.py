import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import gradcheck
from hyper2 import ball
from hyper2 import grad as G
from hyper2.graph import Fact, FactArrays
from hyper2.model import SCORING_VARIANTS, ScoreConfig, forward_scores, init_params, score
from hyper2.train import batch_gradients, corrupt_batch, _concat


def test_constant_loss_gives_empty_store():
    t = G.Tape()
    loss = G.mean_all(t.constant(np.array([1.0, 2.0])) * 3.0)
    store = t.backward(loss)
    assert len(store) == 0 and store.tables() == []


def test_quadratic_gradient():
    t = G.Tape()
    theta = t.gather("theta", np.array([3.0]), np.array([0]))
    store = t.backward(G.mean_all(theta * theta))
    assert store["theta", 0] == pytest.approx([6.0])


def test_repeated_rows_accumulate():
    t = G.Tape()
    table = np.array([[1.0, 2.0], [3.0, 4.0]])
    x = t.gather("w", table, np.array([0, 0, 1]))
    store = t.backward(G.mean_all(G.sum_last(x)) * 3.0)
    np.testing.assert_allclose(store["w", 0], [2.0, 2.0])
    np.testing.assert_allclose(store["w", 1], [1.0, 1.0])


def test_store_merge_is_additive():
    a, b = G.GradientStore(), G.GradientStore()
    a.accumulate("w", [0, 2], np.array([[1.0], [2.0]]))
    b.accumulate("w", [2, 3], np.array([[5.0], [7.0]]))
    b.accumulate("v", [1], np.array([[1.0]]))
    c = a + b
    assert c.touched() == {("w", 0), ("w", 2), ("w", 3), ("v", 1)}
    assert c["w", 2] == pytest.approx([7.0])
    np.testing.assert_array_equal(c.dense("w", (4, 1))[:, 0], [1.0, 0.0, 7.0, 7.0])


def test_backward_errors():
    t = G.Tape()
    x = t.gather("w", np.ones((2, 3)), np.array([0, 1]))
    with pytest.raises(G.TapeError):
        t.backward(x * 2.0)  # not a scalar
    with pytest.raises(G.TapeError):
        G.Tape().backward(G.mean_all(x))  # foreign tape
    with pytest.raises(G.TapeError):
        G.Tape(record=False).backward(G.Tape(record=False).constant(1.0))


def test_cycle_detected():
    t = G.Tape()
    x = t.gather("w", np.ones(2), np.array([0, 1]))
    y = x * 2.0
    loss = G.mean_all(y)
    # corrupt the record for y so that it reads its own output
    t._records[0].inputs = (y.id,)
    with pytest.raises(G.TapeError):
        t.backward(loss)


# min routing

def test_min_mask_single_input():
    m = G.min_subgradient_mask([np.array([0.3, -1.0, 2.0])])
    assert m.shape == (1, 3) and m.all()


def test_min_mask_strict_order():
    a = np.array([0.1, 0.5, -0.2])
    b = np.array([0.2, 0.4, -0.3])
    m = G.min_subgradient_mask([a, b])
    np.testing.assert_array_equal(m, [[True, False, False], [False, True, True]])


def test_min_mask_tie_goes_to_lowest_index():
    a = np.array([0.1, 0.5])
    m = G.min_subgradient_mask([a, a.copy(), a - np.array([0.0, 1.0])])
    np.testing.assert_array_equal(m, [[True, False], [False, False], [False, True]])
    assert np.all(m.sum(axis=0) == 1)


def test_min_mask_empty_raises():
    with pytest.raises(ValueError):
        G.min_subgradient_mask([])


@given(arrays(np.float64, (4, 3), elements=st.sampled_from([-1.0, 0.0, 0.5, 1.0])))
def test_reduce_min_routes_like_mask(x):
    t = G.Tape()
    v = t.gather("x", x, np.arange(4))
    out = G.reduce_slots(G.reshape(v, (1, 4, 3)), np.ones((1, 4), dtype=bool), "min")
    np.testing.assert_array_equal(out.value[0], x.min(axis=0))
    store = t.backward(G.mean_all(out) * 3.0)
    np.testing.assert_array_equal(store.dense("x", (4, 3)), G.min_subgradient_mask(list(x)).astype(float))


def test_reduce_respects_mask():
    t = G.Tape()
    x = t.constant(np.array([[[1.0], [-5.0], [3.0]], [[2.0], [0.0], [0.0]]]))
    mask = np.array([[True, False, True], [False, False, False]])
    assert G.reduce_slots(x, mask, "min").value.tolist() == [[1.0], [0.0]]
    assert G.reduce_slots(x, mask, "max").value.tolist() == [[3.0], [0.0]]
    assert G.reduce_slots(x, mask, "mean").value.tolist() == [[2.0], [0.0]]


# Riemannian rescale

def test_rescale_at_origin():
    g = np.array([1.0, -2.0, 4.0])
    np.testing.assert_array_equal(G.riemannian_rescale(g, np.zeros(3)), g / 4)


def test_rescale_half_radius():
    assert G.riemannian_rescale([1.0, 0.0], [0.5, 0.0])[0] == pytest.approx(0.140625, abs=1e-15)


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_rescale_vanishes_at_boundary(k):
    r = np.linspace(0, 1 - 1e-6, 200) / np.sqrt(k)
    f = np.array([G.riemannian_rescale([1.0], [x], k)[0] for x in r])
    assert np.all(np.diff(f) < 0) and f[-1] < 1e-10


# finite differences

@pytest.mark.parametrize("variant", SCORING_VARIANTS)
def test_gradients_match_finite_differences(variant):
    rng = np.random.default_rng(SCORING_VARIANTS.index(variant))
    cfg = ScoreConfig(variant)
    for _ in range(6):
        p, facts, labels = gradcheck.random_batch(rng, cfg)
        assert gradcheck.max_relative_error(p, facts, labels, cfg) < 1e-4


@pytest.mark.parametrize("combine,reduce", list(itertools.product(("addition", "concatenation"), G.REDUCERS)))
def test_gradients_match_finite_differences_aggregations(combine, reduce):
    rng = np.random.default_rng(7)
    cfg = ScoreConfig("full", combine, reduce)
    for _ in range(4):
        p, facts, labels = gradcheck.random_batch(rng, cfg, max_arity=5)
        assert gradcheck.max_relative_error(p, facts, labels, cfg) < 1e-4


def test_non_selected_affiliated_gets_no_gradient(rng):
    p = init_params(0, 4, 6, 2)
    p.entity_emb[:] = ball.project_to_ball(rng.normal(0, 0.1, (6, 4)))
    # entity 5 sits far out along +1 in every tangent coordinate, so the min never picks it
    p.entity_emb[5] = ball.expmap0(np.full(4, 0.6))
    fact = Fact(0, 0, 1, (2, 3, 5))
    t = G.Tape()
    loss = G.mean_all(forward_scores(t, p, FactArrays.from_facts([fact]), ScoreConfig()))
    store = t.backward(loss)
    np.testing.assert_array_equal(store["entity_emb", 5], np.zeros(4))
    assert np.any(store["entity_emb", 2] != 0) or np.any(store["entity_emb", 3] != 0)
    before = score(fact, p)
    for c in range(4):
        q = p.copy()
        q.entity_emb[5, c] += 1e-3
        assert score(fact, q) == before


@pytest.mark.parametrize("variant", SCORING_VARIANTS)
def test_backward_touches_exactly_referenced_rows(rng, variant):
    cfg = ScoreConfig(variant)
    p = init_params(1, 4, 30, 6, cfg=cfg)
    pos = FactArrays.from_facts([Fact(0, 1, 2, (3, 4)), Fact(2, 5, 6), Fact(3, 7, 8, (9,))])
    negs, _ = corrupt_batch(pos, 4, 30, 6, rng)
    facts = _concat(pos, negs)
    labels = np.r_[np.ones(3), np.zeros(12)]
    _, store = batch_gradients(p, facts, labels, cfg)
    ents = set(facts.head) | set(facts.tail) | set(facts.affiliated[facts.affiliated >= 0])
    rels = set(facts.relation)
    want = {("entity_emb", int(e)) for e in ents}
    want |= {("bias_head", int(e)) for e in facts.head} | {("bias_tail", int(e)) for e in facts.tail}
    if variant != "no_offset":
        want |= {("rel_emb", int(r)) for r in rels}
    if variant != "no_diag":
        want |= {("rel_diag", int(r)) for r in rels}
    if variant == "diag_both":
        want |= {("rel_diag_tail", int(r)) for r in rels}
    assert store.touched() == want


def test_worker_split_matches_single_tape(rng):
    cfg = ScoreConfig()
    p, facts, labels = gradcheck.random_batch(rng, cfg, n_pos=8, nneg=3)
    l1, s1 = batch_gradients(p, facts, labels, cfg, workers=1)
    l4, s4 = batch_gradients(p, facts, labels, cfg, workers=4)
    assert l1 == pytest.approx(l4, abs=1e-12)
    assert s1.touched() == s4.touched()
    for name in s1.tables():
        np.testing.assert_allclose(s1.table(name)[1], s4.table(name)[1], atol=1e-12)
