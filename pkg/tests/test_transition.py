"""Transition matrix semantics: init, re-scaling, accumulation, decoding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from m2d.transition import (
    CLIP_HI,
    CLIP_LO,
    ZeroMass,
    accumulate_transition,
    chain_pairs,
    greedy_chain,
    init_transition,
    momentum_update,
    path_score,
    pseudo_label_pass,
    rescale,
    viterbi_chain,
)


def test_init_single_style_all_ones():
    m = init_transition(np.zeros(5, dtype=np.int64))
    np.testing.assert_allclose(m, 1.0)


def test_init_two_style_blocks():
    m = init_transition(np.array([0, 0, 1, 1]))
    expect = np.full((4, 4), CLIP_LO)
    expect[:2, :2] = 1.0
    expect[2:, 2:] = 1.0
    np.testing.assert_allclose(m, expect)


def test_init_singleton_styles_diagonal():
    m = init_transition(np.arange(6))
    np.testing.assert_allclose(np.diag(m), 1.0)
    off = m[~np.eye(6, dtype=bool)]
    np.testing.assert_allclose(off, CLIP_LO)


def test_rescale_constant_row_is_identity():
    p = np.array([0.2, 0.5, 0.3])
    # power-of-two row constant: scaling and renormalization cancel bitwise
    m = np.full((3, 3), 0.5)
    np.testing.assert_array_equal(rescale(p, m, 1), p / p.sum())
    # arbitrary constants cancel to within a couple of ulps
    m2 = np.full((3, 3), 0.37)
    np.testing.assert_allclose(rescale(p, m2, 1), p / p.sum(), rtol=1e-15)


def test_rescale_closed_form():
    p = np.array([0.6, 0.4])
    m = np.array([[0.01, 1.0], [1.0, 1.0]])
    q = rescale(p, m, 0)
    np.testing.assert_allclose(q, np.array([0.006, 0.4]) / 0.406, atol=1e-12)


def test_rescale_zero_mass_guard():
    with pytest.raises(ZeroMass):
        rescale(np.array([0.0, 0.0]), np.ones((2, 2)), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 32), st.integers(0, 10_000))
def test_rescale_argmax_matches_bruteforce(k, seed):
    rng = np.random.default_rng(seed)
    p = rng.random(k)
    p /= p.sum()
    m = np.clip(rng.random((k, k)), CLIP_LO, CLIP_HI)
    prev = int(rng.integers(k))
    got = int(np.argmax(rescale(p, m, prev)))
    brute = max(range(k), key=lambda j: p[j] * m[prev, j])
    assert p[got] * m[prev, got] == p[brute] * m[prev, brute]


def test_accumulate_empty_is_zero():
    np.testing.assert_array_equal(accumulate_transition([], 4), np.zeros((4, 4)))


def test_accumulate_single_and_repeated_pairs():
    acc = accumulate_transition([(2, 5, 0.9, 0.8)], 8)
    assert acc[2, 5] == pytest.approx(0.72)
    assert acc.sum() == pytest.approx(0.72)
    acc2 = accumulate_transition([(2, 5, 0.9, 0.8), (2, 5, 0.9, 0.8)], 8)
    assert acc2[2, 5] == pytest.approx(1.44)  # pre-clip accumulation may exceed 1


def test_momentum_extremes_and_clip():
    m_k = np.full((2, 2), 1.0)
    assert np.array_equal(momentum_update(m_k, np.zeros((2, 2)), alpha=1.0), m_k)
    half = momentum_update(m_k, np.zeros((2, 2)), alpha=0.5)
    np.testing.assert_allclose(half, 0.5)
    ceil = momentum_update(np.full((2, 2), CLIP_LO), np.full((2, 2), 3.0), alpha=0.5)
    np.testing.assert_allclose(ceil, 1.0)  # clip(1.505) = 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_momentum_update_bounds(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 12))
    m_k = np.clip(rng.random((k, k)), CLIP_LO, CLIP_HI)
    acc = rng.random((k, k)) * 5.0
    out = momentum_update(m_k, acc, alpha=0.5)
    assert out.min() >= CLIP_LO and out.max() <= CLIP_HI


def test_pseudo_label_tau_extremes():
    rng = np.random.default_rng(0)
    seqs = []
    for _ in range(3):
        p = rng.random((5, 4))
        seqs.append(p / p.sum(axis=1, keepdims=True))
    m = init_transition(np.array([0, 0, 1, 1]))
    _, none_accepted = pseudo_label_pass(seqs, m, tau=1.0)
    assert none_accepted == []
    _, all_accepted = pseudo_label_pass(seqs, m, tau=0.0)
    assert len(all_accepted) == 15


def test_pseudo_label_order_independent():
    rng = np.random.default_rng(1)
    seqs = [rng.dirichlet(np.ones(6), size=4) for _ in range(5)]
    m = np.clip(rng.random((6, 6)), CLIP_LO, CLIP_HI)
    chains, _ = pseudo_label_pass(seqs, m, 0.5)
    chains_rev, _ = pseudo_label_pass(seqs[::-1], m, 0.5)
    for (ids, confs), (ids_r, confs_r) in zip(chains, chains_rev[::-1]):
        np.testing.assert_array_equal(ids, ids_r)
        np.testing.assert_array_equal(confs, confs_r)


def test_forbidden_transition_redirects_choice():
    # raw argmax at t=1 is class 1 (B) but the matrix forbids 0 -> 1
    m = np.full((3, 3), CLIP_LO)
    m[0, 0] = 1.0
    m[0, 2] = 1.0
    probs = np.array(
        [
            [0.90, 0.05, 0.05],  # t=0 picks 0
            [0.05, 0.50, 0.45],  # raw argmax 1, but 0->1 is forbidden
        ]
    )
    ids, confs = greedy_chain(probs, m)
    assert ids.tolist() == [0, 2]
    # hand-computed: q = [0.05*1, 0.5*0.01, 0.45*1] normalized
    q = np.array([0.05, 0.005, 0.45])
    assert confs[1] == pytest.approx(0.45 / q.sum(), abs=1e-12)


def test_three_phrase_hand_chain_exact():
    m = np.array([[1.0, 0.01, 0.5], [0.01, 1.0, 0.01], [0.5, 0.01, 1.0]])
    probs = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.4, 0.4, 0.2]])
    ids, confs = greedy_chain(probs, m)
    # t0: argmax raw = 0, conf 0.5
    assert ids[0] == 0 and confs[0] == pytest.approx(0.5, abs=1e-12)
    # t1: q = [0.1*1, 0.6*0.01, 0.3*0.5] = [0.1, 0.006, 0.15] -> argmax 2
    q1 = np.array([0.1, 0.006, 0.15])
    assert ids[1] == 2 and confs[1] == pytest.approx(0.15 / q1.sum(), abs=1e-9)
    # t2 from 2: q = [0.4*0.5, 0.4*0.01, 0.2*1] = [0.2, 0.004, 0.2] -> tie, argmax -> 0
    q2 = np.array([0.2, 0.004, 0.2])
    assert ids[2] == 0 and confs[2] == pytest.approx(0.2 / q2.sum(), abs=1e-9)


def exhaustive_best(probs, m):
    t, k = probs.shape
    best, best_score = None, -np.inf
    import itertools

    for path in itertools.product(range(k), repeat=t):
        s = path_score(probs, m, np.array(path))
        if s > best_score:
            best, best_score = path, s
    return np.array(best), best_score


@pytest.mark.parametrize("seed", range(12))
def test_viterbi_matches_exhaustive_and_dominates_greedy(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 9))
    t = int(rng.integers(2, 7))
    probs = rng.dirichlet(np.ones(k), size=t)
    m = np.clip(rng.random((k, k)) ** 2, CLIP_LO, CLIP_HI)
    vit = viterbi_chain(probs, m)
    _, best_score = exhaustive_best(probs, m)
    assert path_score(probs, m, vit) == pytest.approx(best_score, abs=1e-9)
    greedy_ids, _ = greedy_chain(probs, m)
    assert path_score(probs, m, vit) >= path_score(probs, m, greedy_ids) - 1e-12


def test_viterbi_beats_greedy_on_trap():
    # greedy grabs the high-probability class then pays a forbidden transition
    m = np.array([[1.0, CLIP_LO], [CLIP_LO, 1.0]])
    probs = np.array([[0.6, 0.4], [0.1, 0.9], [0.1, 0.9]])
    greedy_ids, _ = greedy_chain(probs, m)
    vit = viterbi_chain(probs, m)
    assert path_score(probs, m, vit) > path_score(probs, m, greedy_ids)
    assert vit.tolist() == [1, 1, 1]


def test_chain_pairs_adjacency():
    chains = [(np.array([1, 2]), np.array([0.5, 0.6])), (np.array([3]), np.array([0.9]))]
    pairs = list(chain_pairs(chains))
    assert pairs == [(1, 2, 0.5, 0.6)]  # singleton songs contribute nothing
