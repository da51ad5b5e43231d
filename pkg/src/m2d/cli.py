"""Batch command-line surface wiring the whole pipeline.

Commands: synth, segment, pretrain, finetune, coascent, translate, eval,
gradcheck.  Every command reads the shared config (plus profile and flags),
takes an advisory lock on its output directory, writes newline-terminated
UTF-8 JSON artifacts tagged "schema": "m2d/1", and exits 0 on success.
Checked failures print one machine-readable JSON object to stderr; invalid
configuration exits 2 with the offending key path.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import json
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA, checkpoint, transition
from .audio import EmptyAudio, MalformedHeader, UnsupportedEncoding, load_canonical
from .autodiff import ShapeMismatch
from .config import ConfigError, PipelineConfig, load_config
from .features_io import FeatureCacheError, write_feature_cache, write_phrase_index
from .models import ModelConfig, Models, build_models
from .segmentation import segment_song
from .synth import load_corpus, make_corpus
from .training import (
    CoascentConfig,
    EmptyDataset,
    LabelOutOfRange,
    NonFiniteLoss,
    balance_labeled,
    calibrate_encoder_stats,
    coascent,
    encode_phrases,
    evaluate_topk,
    finetune,
    predictor_probs,
    pretrain,
)

EXPECTED_ERRORS = (
    ConfigError,
    MalformedHeader,
    UnsupportedEncoding,
    EmptyAudio,
    FeatureCacheError,
    checkpoint.ChecksumMismatch,
    checkpoint.VersionUnsupported,
    checkpoint.MissingComponent,
    ShapeMismatch,
    EmptyDataset,
    NonFiniteLoss,
    LabelOutOfRange,
    transition.ZeroMass,
    FileNotFoundError,
)


@contextlib.contextmanager
def output_lock(out_dir: Path):
    """One writer per output directory (advisory flock, freed on exit)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / ".m2d.lock"
    with open(lock_path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _jsonl_logger(path: Path):
    fh = open(path, "w", encoding="utf-8")

    def log(rec: dict) -> None:
        fh.write(json.dumps({"schema": SCHEMA, **rec}) + "\n")
        fh.flush()

    log.close = fh.close  # type: ignore[attr-defined]
    return log


# ---------------------------------------------------------------------------
# checkpoint packing


def save_models(path, models: Models, m: np.ndarray | None = None, extra: dict | None = None) -> None:
    arrays = models.state_dict()
    cfg = models.cfg
    arrays["cfg.model"] = np.array([cfg.embed_dim, cfg.depth_multiplier, cfg.n_classes], dtype=np.float64)
    if m is not None:
        arrays["M.transition"] = np.asarray(m, dtype=np.float64)
    if extra:
        arrays.update(extra)
    checkpoint.save(path, arrays)


def load_models(path):
    """Returns (Models, transition matrix or None)."""
    arrays = checkpoint.load(path)
    if "cfg.model" not in arrays:
        raise checkpoint.MissingComponent("checkpoint lacks component 'cfg.model'")
    embed_dim, depth, n_classes = arrays["cfg.model"]
    cfg = ModelConfig(embed_dim=int(embed_dim), depth_multiplier=float(depth), n_classes=int(n_classes))
    models = build_models(cfg, seed=0)
    for prefix, module in models.components().items():
        checkpoint.require_prefix(arrays, prefix)
        module.load_state_dict(arrays, prefix + ".")
    models.eval()
    m = arrays.get("M.transition")
    return models, (None if m is None else np.asarray(m, dtype=np.float64))


def load_models_into(path, cfg: ModelConfig):
    """Load with an externally fixed config (K/C mismatches raise ShapeMismatch)."""
    arrays = checkpoint.load(path)
    models = build_models(cfg, seed=0)
    for prefix, module in models.components().items():
        checkpoint.require_prefix(arrays, prefix)
        module.load_state_dict(arrays, prefix + ".")
    models.eval()
    m = arrays.get("M.transition")
    return models, (None if m is None else np.asarray(m, dtype=np.float64))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    spec = cfg.synth.build(seed=args.seed)
    with output_lock(out):
        make_corpus(
            spec,
            cfg.synth.n_labeled_songs,
            cfg.synth.n_unlabeled_songs,
            out_dir=out,
            write_audio=cfg.synth.write_audio and not args.features_only,
        )
    print(json.dumps({"schema": SCHEMA, "out": str(out), "K": spec.n_classes}))
    return 0


def cmd_segment(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    audio_path = Path(args.audio)
    files = sorted(audio_path.glob("*.wav")) if audio_path.is_dir() else [audio_path]
    if not files:
        raise FileNotFoundError(f"no .wav files under {audio_path}")
    seg_cfg = cfg.segmentation.build()
    with output_lock(out):
        (out / "caches").mkdir(exist_ok=True)
        summary = []
        for f in files:
            sig = load_canonical(f, cfg.audio.sample_rate)
            phrases = segment_song(sig, seg_cfg, song_id=f.stem)
            write_feature_cache(out / "caches" / f"{f.stem}.m2df", phrases)
            write_phrase_index(out / f"{f.stem}.phrases.jsonl", phrases)
            summary.append({"song_id": f.stem, "n_phrases": len(phrases)})
    print(json.dumps({"schema": SCHEMA, "songs": summary}))
    return 0


def _corpus_and_models(args, cfg: PipelineConfig, corpus):
    model_cfg = cfg.model.build(n_classes=corpus.n_classes)
    return build_models(model_cfg, seed=args.seed)


def cmd_pretrain(args, cfg: PipelineConfig) -> int:
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    models = _corpus_and_models(args, cfg, corpus)
    phrases = [f for song in corpus.unlabeled for f in song.features]
    if cfg.training.pretrain_subset > 0:
        phrases = phrases[: cfg.training.pretrain_subset]
    train_cfg = cfg.training.build(seed=args.seed)
    with output_lock(out):
        log = _jsonl_logger(out / "pretrain_metrics.jsonl")
        try:
            history = pretrain(models, phrases, train_cfg, log=log)
        finally:
            log.close()
        save_models(out / "pretrained.m2dc", models)
    print(json.dumps({"schema": SCHEMA, "epochs": len(history), "final_loss": history[-1]["loss"]}))
    return 0


def cmd_finetune(args, cfg: PipelineConfig) -> int:
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    model_cfg = cfg.model.build(n_classes=corpus.n_classes)
    if args.ckpt:
        models, _ = load_models_into(args.ckpt, model_cfg)
    else:  # scratch baseline: prime BN stats so the frozen encoder is usable
        models = build_models(model_cfg, seed=args.seed)
        calibrate_encoder_stats(models.encoder, [ex.phrase.features for ex in corpus.train_set()])
    train = corpus.train_set()
    if args.balance or cfg.training.balance:
        train = balance_labeled(train, seed=args.seed)
    train_cfg = cfg.training.build(seed=args.seed)
    with output_lock(out):
        log = _jsonl_logger(out / "finetune_metrics.jsonl")
        try:
            history = finetune(models, train, train_cfg, log=log)
        finally:
            log.close()
        style_of = corpus.spec.style_map()
        m0 = transition.init_transition(style_of)
        save_models(out / "finetuned.m2dc", models, m=m0)
        topk = evaluate_topk(models, corpus.test_set(), ks=_parse_ks(args.k))
        _write_json(out / "eval.json", {"schema": SCHEMA, "topk": {str(k): v for k, v in topk.items()}})
    print(json.dumps({"schema": SCHEMA, "train_top1": history[-1]["top1"], "test_topk": {str(k): v for k, v in topk.items()}}))
    return 0


def cmd_coascent(args, cfg: PipelineConfig) -> int:
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    models, m0 = load_models(args.ckpt)
    if m0 is None:
        m0 = transition.init_transition(corpus.spec.style_map())
    co_cfg = cfg.coascent.build(seed=args.seed, batch_size=cfg.training.batch_size)
    if args.tau is not None:
        co_cfg.tau = args.tau
    if args.alpha is not None:
        co_cfg.alpha = args.alpha
    if args.rounds is not None:
        co_cfg.max_rounds = args.rounds
    with output_lock(out):
        log = _jsonl_logger(out / "coascent_rounds.jsonl")
        try:
            m, reports = coascent(models, corpus.train_set(), corpus.unlabeled, m0, co_cfg, log=log)
        finally:
            log.close()
        save_models(out / "coascent.m2dc", models, m=m)
        topk = evaluate_topk(models, corpus.test_set(), ks=_parse_ks(args.k))
        _write_json(out / "eval.json", {"schema": SCHEMA, "topk": {str(k): v for k, v in topk.items()}})
    last = reports[-1] if reports else {}
    print(json.dumps({"schema": SCHEMA, "rounds": len(reports), "final": last, "test_topk": {str(k): v for k, v in topk.items()}}))
    return 0


def cmd_translate(args, cfg: PipelineConfig) -> int:
    models, m = load_models(args.ckpt)
    if m is None:
        raise checkpoint.MissingComponent("checkpoint lacks component 'M.transition'")
    sig = load_canonical(args.audio, cfg.audio.sample_rate)
    phrases = segment_song(sig, cfg.segmentation.build(), song_id=Path(args.audio).stem)
    embeddings = encode_phrases(models.encoder, [p.features for p in phrases])
    probs = predictor_probs(models.predictor, embeddings)

    if args.viterbi:
        ids = transition.viterbi_chain(probs, m)
        confs = []
        for t in range(len(ids)):
            q = probs[t] if t == 0 else transition.rescale(probs[t], m, int(ids[t - 1]))
            confs.append(float(q[ids[t]]))
    else:
        ids, confs = transition.greedy_chain(probs, m)

    entries = []
    for t, p in enumerate(phrases):
        q = probs[t] if t == 0 else transition.rescale(probs[t], m, int(ids[t - 1]))
        order = np.argsort(-q, kind="stable")[: args.alternates]
        entries.append(
            {
                "start_sec": p.start_sec,
                "end_sec": p.end_sec,
                "dance_id": int(ids[t]),
                "confidence": float(confs[t]),
                "alternates": [[int(j), float(q[j])] for j in order],
            }
        )
    timeline = {
        "schema": SCHEMA,
        "song_id": Path(args.audio).stem,
        "decode": "viterbi" if args.viterbi else "greedy",
        "entries": entries,
    }
    text = json.dumps(timeline, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    corpus = load_corpus(args.corpus)
    models, _ = load_models(args.ckpt)
    topk = evaluate_topk(models, corpus.test_set(), ks=_parse_ks(args.k))
    print(json.dumps({"schema": SCHEMA, "topk": {str(k): v for k, v in topk.items()}, "n_test": len(corpus.test_idx)}))
    return 0


def cmd_gradcheck(args, cfg: PipelineConfig) -> int:
    # the validation suite runs a fixed deterministic fixture set
    from .validation import run_gradcheck

    results, layer_worst, composed_worst = run_gradcheck()
    report = {
        "schema": SCHEMA,
        "per_check": {k: float(v) for k, v in results.items()},
        "layer_max_rel_err": float(layer_worst),
        "composed_max_rel_err": float(composed_worst),
    }
    print(json.dumps(report, indent=1))
    return 0 if layer_worst < 1e-4 and composed_worst < 1e-3 else 1


def _parse_ks(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="m2d", description="music-to-dance retrieval pipeline")
    parser.add_argument("--config", default=None, help="YAML config path")
    parser.add_argument("--profile", default="desk", help="profile name (built-in: desk, paper)")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--features-only", action="store_true", help="skip writing song WAVs")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("segment", help="segment WAVs into phrase feature caches")
    p.add_argument("--audio", required=True, help="wav file or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised predictor fine-tuning")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", default=None, help="pretrained checkpoint (omit for scratch)")
    p.add_argument("--out", required=True)
    p.add_argument("--balance", action="store_true")
    p.add_argument("--k", default="1,5,10")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("coascent", help="semi-supervised co-ascent refinement")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--k", default="1,5,10")
    p.set_defaults(fn=cmd_coascent)

    p = sub.add_parser("translate", help="audio file -> dance timeline JSON")
    p.add_argument("--audio", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--viterbi", action="store_true")
    p.add_argument("--alternates", type=int, default=5)
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("eval", help="top-k accuracy on the corpus test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--k", default="1,5,10")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, profile=args.profile)
        return args.fn(args, cfg)
    except ConfigError as exc:
        sys.stderr.write(json.dumps({"schema": SCHEMA, "error": "ConfigError", "key": exc.key, "message": str(exc)}) + "\n")
        return 2
    except EXPECTED_ERRORS as exc:
        sys.stderr.write(json.dumps({"schema": SCHEMA, "error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
