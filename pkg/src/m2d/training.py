"""Two-stage training plus the semi-supervised co-ascent loop.

Stage one pretrains the encoder and the three pretext decoders on unlabeled
phrases (weighted reconstruction + melody + rhythm loss).  Stage two freezes
the encoder and fits the predictor with cross-entropy; frozen-encoder
embeddings are computed once and reused, which is exactly equivalent to
re-running the frozen encoder every step.  Co-ascent then alternates
pseudo-labeling (re-scaled by the transition matrix), short predictor
fine-tunes, and momentum updates of the matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import transition
from .autodiff import SGD, Adam, Tensor, bce_loss, cross_entropy, l1_loss, no_grad, softmax
from .models import Models


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


class LabelOutOfRange(ValueError):
    pass


@dataclass
class TrainConfig:
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 10.0
    pretrain_lr: float = 1e-4
    pretrain_decay_every: int = 50  # epochs between x0.1 steps; 0 disables
    pretrain_epochs: int = 200
    finetune_lr: float = 1e-2
    finetune_momentum: float = 0.9
    finetune_weight_decay: float = 5e-4
    finetune_epochs: int = 500
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.beta3) < 0:
            raise ValueError("loss weights must be non-negative")
        if min(self.pretrain_lr, self.finetune_lr, self.batch_size, self.pretrain_epochs, self.finetune_epochs) <= 0:
            raise ValueError("learning rates, batch size, and epochs must be positive")


@dataclass
class CoascentConfig:
    tau: float = 0.9
    alpha: float = 0.5
    lr: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs_per_round: int = 5
    max_rounds: int = 20
    batch_size: int = 16
    seed: int = 0


def phrase_input(features) -> np.ndarray:
    """Mel as the network sees it: rows = time frames, columns = mel bands."""
    return features.mel.T[None].astype(np.float32)


def _batch_arrays(feats):
    x = np.stack([phrase_input(f) for f in feats])
    mel_t = x.copy()
    melody = np.stack([f.melody.astype(np.float32) for f in feats])
    rhythm = np.stack([f.rhythm.astype(np.float32) for f in feats])
    return x, mel_t, melody, rhythm


def pretrain(models: Models, phrases, cfg: TrainConfig, log=None) -> list:
    """Minimize the weighted pretext loss over minibatches with Adam.

    ``phrases`` is a sequence of PhraseFeatures.  Returns per-epoch history
    dicts; raises NonFiniteLoss with diagnostics if the loss diverges.
    """
    phrases = list(phrases)
    if not phrases:
        raise EmptyDataset("pretrain: no phrases")
    models.train(True)
    params = []
    for name in ("encoder", "dec_spec", "dec_melody", "dec_rhythm"):
        params += getattr(models, name).parameters()
    opt = Adam(params, lr=cfg.pretrain_lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.pretrain_epochs):
        if cfg.pretrain_decay_every > 0:
            opt.lr = cfg.pretrain_lr * 0.1 ** (epoch // cfg.pretrain_decay_every)
        order = rng.permutation(len(phrases))
        sums = np.zeros(4)
        n_batches = 0
        for ofs in range(0, len(order), cfg.batch_size):
            batch = [phrases[i] for i in order[ofs : ofs + cfg.batch_size]]
            x, mel_t, melody, rhythm = _batch_arrays(batch)
            out = models.encoder(Tensor(x))
            l_spe = l1_loss(models.dec_spec(out.embedding), mel_t)
            l_mld = l1_loss(models.dec_melody(out.temporal), melody)
            l_rym = bce_loss(models.dec_rhythm(out.temporal), rhythm)
            loss = cfg.beta1 * l_spe + cfg.beta2 * l_mld + cfg.beta3 * l_rym
            val = loss.item()
            if not np.isfinite(val):
                raise NonFiniteLoss(f"pretrain diverged at epoch {epoch}, batch {n_batches}: loss={val}")
            loss.backward()
            opt.step()
            sums += (val, l_spe.item(), l_mld.item(), l_rym.item())
            n_batches += 1
        rec = {
            "epoch": epoch,
            "loss": sums[0] / n_batches,
            "l_spe": sums[1] / n_batches,
            "l_mld": sums[2] / n_batches,
            "l_rym": sums[3] / n_batches,
            "lr": opt.lr,
        }
        history.append(rec)
        if log is not None:
            log(rec)
    models.eval()
    return history


def calibrate_encoder_stats(encoder, features_list, max_batch: int = 64) -> None:
    """Prime BatchNorm running stats of an untrained encoder.

    A scratch-initialized encoder frozen in eval mode would normalize with the
    virgin (0, 1) stats and its activations drift out of float32 range; one
    train-mode pass with momentum forced to 1 snapshots real batch statistics.
    Encoders that went through pretraining already carry converged stats.
    """
    feats = list(features_list)[:max_batch]
    if not feats:
        raise EmptyDataset("calibrate_encoder_stats: no phrases")
    bns = [m for _, m in _walk_modules(encoder) if hasattr(m, "running_mean")]
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.momentum = 1.0
    encoder.train(True)
    with no_grad():
        x = np.stack([phrase_input(f) for f in feats])
        encoder(Tensor(x))
    for bn, mom in zip(bns, saved):
        bn.momentum = mom
    encoder.eval()


def _walk_modules(module, prefix: str = ""):
    yield prefix, module
    for name, child in module._children.items():
        yield from _walk_modules(child, f"{prefix}{name}.")


def encode_phrases(encoder, features_list, batch_size: int = 32) -> np.ndarray:
    """Frozen eval-mode embeddings [N, C] for a list of PhraseFeatures."""
    encoder.eval()
    chunks = []
    with no_grad():
        for ofs in range(0, len(features_list), batch_size):
            x = np.stack([phrase_input(f) for f in features_list[ofs : ofs + batch_size]])
            chunks.append(encoder(Tensor(x)).embedding.data.copy())
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 0), dtype=np.float32)


def _check_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    return labels


def _predictor_top1(predictor, embeddings: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    hits = 0
    with no_grad():
        for ofs in range(0, len(embeddings), batch_size):
            logits = predictor(Tensor(embeddings[ofs : ofs + batch_size])).data
            hits += int((logits.argmax(axis=1) == labels[ofs : ofs + batch_size]).sum())
    return hits / max(len(embeddings), 1)


def _fit_predictor(predictor, embeddings, labels, epochs, lr, momentum, weight_decay, batch_size, rng, log=None):
    opt = SGD(predictor.parameters(), lr=lr, momentum=momentum, weight_decay=weight_decay)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(embeddings))
        total = 0.0
        n_batches = 0
        for ofs in range(0, len(order), batch_size):
            sel = order[ofs : ofs + batch_size]
            logits = predictor(Tensor(embeddings[sel]))
            loss = cross_entropy(logits, labels[sel])
            val = loss.item()
            if not np.isfinite(val):
                raise NonFiniteLoss(f"fine-tune diverged at epoch {epoch}")
            loss.backward()
            opt.step()
            total += val
            n_batches += 1
        rec = {"epoch": epoch, "loss": total / max(n_batches, 1), "top1": _predictor_top1(predictor, embeddings, labels), "lr": lr}
        history.append(rec)
        if log is not None:
            log(rec)
    return history


def finetune(models: Models, labeled, cfg: TrainConfig, log=None, unfreeze_encoder: bool = False, embeddings=None) -> list:
    """Supervised stage: cross-entropy on the predictor, encoder frozen.

    ``labeled`` is a sequence of LabeledExample.  With the default frozen
    encoder, embeddings are computed once (pass ``embeddings`` to reuse a
    cached matrix).  ``unfreeze_encoder=True`` trains the encoder too, at the
    cost of a full forward/backward per batch.
    """
    labeled = list(labeled)
    if not labeled:
        raise EmptyDataset("finetune: no labeled examples")
    labels = _check_labels([ex.dance_id for ex in labeled], models.cfg.n_classes)
    rng = np.random.default_rng(cfg.seed)
    if not unfreeze_encoder:
        if embeddings is None:
            embeddings = encode_phrases(models.encoder, [ex.phrase.features for ex in labeled], cfg.batch_size)
        models.predictor.set_input_scale(embeddings)
        models.predictor.train(True)
        history = _fit_predictor(
            models.predictor,
            embeddings,
            labels,
            cfg.finetune_epochs,
            cfg.finetune_lr,
            cfg.finetune_momentum,
            cfg.finetune_weight_decay,
            cfg.batch_size,
            rng,
            log,
        )
        models.predictor.eval()
        return history

    models.encoder.train(True)
    models.predictor.train(True)
    params = models.encoder.parameters() + models.predictor.parameters()
    opt = SGD(params, lr=cfg.finetune_lr, momentum=cfg.finetune_momentum, weight_decay=cfg.finetune_weight_decay)
    feats = [ex.phrase.features for ex in labeled]
    history = []
    for epoch in range(cfg.finetune_epochs):
        order = rng.permutation(len(labeled))
        total, n_batches = 0.0, 0
        for ofs in range(0, len(order), cfg.batch_size):
            sel = order[ofs : ofs + cfg.batch_size]
            x = np.stack([phrase_input(feats[i]) for i in sel])
            logits = models.predictor(models.encoder(Tensor(x)).embedding)
            loss = cross_entropy(logits, labels[sel])
            loss.backward()
            opt.step()
            total += loss.item()
            n_batches += 1
        embs = encode_phrases(models.encoder, feats, cfg.batch_size)
        models.encoder.train(True)
        rec = {"epoch": epoch, "loss": total / n_batches, "top1": _predictor_top1(models.predictor, embs, labels), "lr": cfg.finetune_lr}
        history.append(rec)
        if log is not None:
            log(rec)
    models.eval()
    return history


def balance_labeled(labeled, seed: int = 0) -> list:
    """Oversample with replacement until every represented class matches the
    largest class count.  Keeps all originals; deterministic given seed."""
    labeled = list(labeled)
    if not labeled:
        return []
    rng = np.random.default_rng(seed)
    by_class = {}
    for ex in labeled:
        by_class.setdefault(ex.dance_id, []).append(ex)
    target = max(len(v) for v in by_class.values())
    out = list(labeled)
    for dance_id in sorted(by_class):
        pool = by_class[dance_id]
        need = target - len(pool)
        if need > 0:
            out.extend(pool[i] for i in rng.integers(0, len(pool), size=need))
    return out


def evaluate_topk(models: Models, examples, ks=(1, 5, 10), embeddings=None) -> dict:
    """Top-k accuracy per k; ties broken toward the lower class index."""
    examples = list(examples)
    if not examples:
        raise EmptyDataset("evaluate_topk: empty test set")
    labels = _check_labels([ex.dance_id for ex in examples], models.cfg.n_classes)
    if embeddings is None:
        embeddings = encode_phrases(models.encoder, [ex.phrase.features for ex in examples])
    with no_grad():
        probs = softmax(models.predictor(Tensor(embeddings))).data.astype(np.float64)
    order = np.argsort(-probs, axis=1, kind="stable")  # stable keeps lower index first on ties
    out = {}
    for k in ks:
        kk = min(k, probs.shape[1])
        out[k] = float(np.mean([labels[i] in order[i, :kk] for i in range(len(labels))]))
    return out


def predictor_probs(predictor, embeddings: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Eval-mode softmax probabilities for an embedding matrix."""
    rows = []
    with no_grad():
        for ofs in range(0, len(embeddings), batch_size):
            rows.append(softmax(predictor(Tensor(embeddings[ofs : ofs + batch_size]))).data.astype(np.float64))
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, 0))


@dataclass
class _PseudoExample:
    dance_id: int


def coascent(models: Models, labeled, unlabeled_songs, m0: np.ndarray, cfg: CoascentConfig, train_cfg=None, log=None):
    """Alternate pseudo-labeling, predictor fine-tuning, and matrix updates.

    ``labeled``: LabeledExample list (the predictor must already be fine-tuned
    on it).  ``unlabeled_songs``: list of UnlabeledSong (ordered features per
    song).  Returns (M, reports); the predictor is refined in place.
    """
    labeled = list(labeled)
    labels = _check_labels([ex.dance_id for ex in labeled], models.cfg.n_classes)
    m = np.clip(np.asarray(m0, dtype=np.float64), transition.CLIP_LO, transition.CLIP_HI)
    reports = []
    if not unlabeled_songs:
        return m, reports

    labeled_emb = encode_phrases(models.encoder, [ex.phrase.features for ex in labeled])
    song_embs = [encode_phrases(models.encoder, song.features) for song in unlabeled_songs]
    total_unlabeled = sum(len(e) for e in song_embs)
    rng = np.random.default_rng(cfg.seed)

    for rnd in range(cfg.max_rounds):
        prob_seqs = [predictor_probs(models.predictor, e) for e in song_embs]
        chains, accepted = transition.pseudo_label_pass(prob_seqs, m, cfg.tau)

        if accepted:
            pseudo_emb = np.stack([song_embs[a.song_idx][a.t] for a in accepted])
            pseudo_lab = np.array([a.dance_id for a in accepted], dtype=np.int64)
            emb = np.concatenate([labeled_emb, pseudo_emb], axis=0)
            lab = np.concatenate([labels, pseudo_lab])
        else:
            emb, lab = labeled_emb, labels
        models.predictor.train(True)
        _fit_predictor(
            models.predictor, emb, lab, cfg.epochs_per_round, cfg.lr, cfg.momentum, cfg.weight_decay, cfg.batch_size, rng
        )
        models.predictor.eval()

        m_acc = transition.accumulate_transition(transition.chain_pairs(chains), models.cfg.n_classes)
        m = transition.momentum_update(m, m_acc, cfg.alpha)

        rec = {
            "round": rnd,
            "n_accepted": len(accepted),
            "n_unlabeled": total_unlabeled,
            "labeled_top1": _predictor_top1(models.predictor, labeled_emb, labels),
            "m_min": float(m.min()),
            "m_max": float(m.max()),
            "m_mean": float(m.mean()),
        }
        reports.append(rec)
        if log is not None:
            log(rec)
        if len(accepted) >= total_unlabeled:
            break
    return m, reports
