"""Dance-phrase transition priors and sequential decoding.

The K x K matrix M holds priors for consecutive dance phrases, clipped to
[0.01, 1] after every published update.  Inference re-scales each phrase's
class distribution by the row of the previously chosen class (renormalized so
confidences stay comparable to the acceptance threshold); pseudo-labeling and
the momentum matrix update implement the co-ascending refinement loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLIP_LO = 0.01
CLIP_HI = 1.0


class ZeroMass(ArithmeticError):
    """Re-scaled distribution summed to zero (impossible once M is clipped)."""


def init_transition(style_of: np.ndarray) -> np.ndarray:
    """Same-style transitions start at 1, everything else at the clip floor."""
    style_of = np.asarray(style_of)
    same = style_of[:, None] == style_of[None, :]
    return np.where(same, CLIP_HI, CLIP_LO).astype(np.float64)


def rescale(p: np.ndarray, m: np.ndarray, prev: int) -> np.ndarray:
    """Multiply by the previous class's transition row and renormalize."""
    q = np.asarray(p, dtype=np.float64) * m[prev]
    s = q.sum()
    if s <= 0.0:
        raise ZeroMass("re-scaled probabilities sum to zero")
    return q / s


def accumulate_transition(pairs, n_classes: int) -> np.ndarray:
    """Fresh accumulation of confidence products over adjacent pairs.

    ``pairs`` yields (prev_id, cur_id, prev_conf, cur_conf); only within-song
    adjacency should be fed in.  The result is unclipped (entries may exceed 1).
    """
    acc = np.zeros((n_classes, n_classes), dtype=np.float64)
    for i, j, ci, cj in pairs:
        acc[i, j] += ci * cj
    return acc


def momentum_update(m_k: np.ndarray, m_acc: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    if m_k.shape != m_acc.shape:
        raise ValueError("transition matrices must share a shape")
    return np.clip(alpha * m_k + (1.0 - alpha) * m_acc, CLIP_LO, CLIP_HI)


# ---------------------------------------------------------------------------
# sequential decoding


def greedy_chain(probs: np.ndarray, m: np.ndarray) -> tuple:
    """Left-to-right decode of one song.

    probs: [T, K] raw per-phrase distributions.  Step 0 uses the raw softmax;
    later steps re-scale by the row of the previous choice (whether or not
    that choice passed any acceptance threshold).  Returns (ids, confidences)
    where confidence is the renormalized probability of the chosen class.
    """
    ids = np.empty(len(probs), dtype=np.int64)
    confs = np.empty(len(probs), dtype=np.float64)
    for t, p in enumerate(probs):
        q = np.asarray(p, dtype=np.float64) if t == 0 else rescale(p, m, int(ids[t - 1]))
        ids[t] = int(np.argmax(q))
        confs[t] = q[ids[t]]
    return ids, confs


def viterbi_chain(probs: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Max-product path over the whole song: sum of log p + log M scores."""
    logp = np.log(np.maximum(np.asarray(probs, dtype=np.float64), 1e-300))
    logm = np.log(np.maximum(m, 1e-300))
    t_len, k = logp.shape
    score = logp[0].copy()
    back = np.zeros((t_len, k), dtype=np.int64)
    for t in range(1, t_len):
        cand = score[:, None] + logm  # [prev, cur]
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(k)] + logp[t]
    ids = np.empty(t_len, dtype=np.int64)
    ids[-1] = int(np.argmax(score))
    for t in range(t_len - 1, 0, -1):
        ids[t - 1] = back[t, ids[t]]
    return ids


def path_score(probs: np.ndarray, m: np.ndarray, ids: np.ndarray) -> float:
    """Log-score of a decoded path under the raw probabilities and M."""
    logp = np.log(np.maximum(np.asarray(probs, dtype=np.float64), 1e-300))
    logm = np.log(np.maximum(m, 1e-300))
    total = float(logp[0, ids[0]])
    for t in range(1, len(ids)):
        total += float(logm[ids[t - 1], ids[t]] + logp[t, ids[t]])
    return total


# ---------------------------------------------------------------------------
# pseudo-labeling


@dataclass
class PseudoLabeledPhrase:
    song_idx: int
    t: int
    dance_id: int
    confidence: float


def pseudo_label_pass(prob_seqs, m: np.ndarray, tau: float) -> tuple:
    """Greedy pseudo labels for every song plus the accepted subset.

    prob_seqs: list of [T, K] raw distributions, one per song.  Returns
    (chains, accepted) where chains[i] = (ids, confs) and accepted contains a
    PseudoLabeledPhrase for every phrase whose confidence exceeds tau.
    Deterministic and order-independent across songs.
    """
    chains = []
    accepted = []
    for si, probs in enumerate(prob_seqs):
        ids, confs = greedy_chain(probs, m)
        chains.append((ids, confs))
        for t, (d, c) in enumerate(zip(ids, confs)):
            if c > tau:
                accepted.append(PseudoLabeledPhrase(song_idx=si, t=t, dance_id=int(d), confidence=float(c)))
    return chains, accepted


def chain_pairs(chains):
    """Adjacent (prev, cur, conf_prev, conf_cur) within each song."""
    for ids, confs in chains:
        for t in range(1, len(ids)):
            yield int(ids[t - 1]), int(ids[t]), float(confs[t - 1]), float(confs[t])
