"""Deterministic synthetic corpora with decodable class structure.

Each dance class is a (style, register, pulse-subdivision) triple rendered as
click-plus-harmonic-tone texture: the style picks a harmonic amplitude
profile (timbre), the class-within-style picks the tone register and how many
tone pulses subdivide each beat.  All three attributes survive feature
extraction, so a non-learned nearest-template oracle can label phrases
exactly; that oracle is the ground truth the learned pipeline is scored
against.  Consecutive phrases always differ in class, making splices timbre
discontinuities the structure detector can find.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .audio import AudioSignal
from .segmentation import MusicPhrase, PhraseFeatures, SongAnalysis, analyze_song, extract_phrase_features

DEFAULT_TIMBRES = (
    (1.0, 0.5, 0.33, 0.25, 0.2, 0.16),  # bright saw-like
    (1.0, 0.04, 0.6, 0.04, 0.4, 0.04),  # odd harmonics, hollow
    (0.4, 1.0, 0.3, 0.7, 0.1, 0.08),  # strong even partials
    (1.0, 0.05, 0.05, 0.55, 0.05, 0.45),  # sparse upper partials
    (0.2, 0.3, 1.0, 0.3, 0.2, 0.5),  # mid-heavy
    (1.0, 0.9, 0.1, 0.1, 0.6, 0.05),  # low cluster
    (0.6, 0.1, 0.9, 0.1, 0.1, 0.7),  # alternating
    (1.0, 0.7, 0.5, 0.05, 0.05, 0.3),  # warm
)

SUBDIVISIONS = (1, 2, 4, 8)
BASE_F0 = 220.0
CLICK_AMP = 0.9
TONE_AMP = 0.35
STYLE_STAY_PROB = 0.6


class OutOfDistribution(ValueError):
    """Phrase signature too far from every class template."""


@dataclass
class SynthSpec:
    n_styles: int = 4
    classes_per_style: int = 3
    tempo_range: tuple = (100.0, 160.0)
    beats_per_phrase: int = 16
    phrases_per_song: tuple = (8, 12)
    noise_snr_db: float = 12.0
    sample_rate: int = 22050
    seed: int = 0
    timbre_bank: tuple = DEFAULT_TIMBRES
    # within-class variation: every phrase redraws these, so one class spans a
    # wide acoustic neighborhood while the (register, timbre, subdivision)
    # identity stays decodable
    register_semitones: float = 5.0  # spacing between class registers
    register_jitter_cents: float = 60.0
    harmonic_jitter: float = 0.35
    tilt_range: float = 0.5  # random spectral tilt exponent, +- this
    click_jitter: float = 0.3

    def __post_init__(self):
        if self.n_styles * self.classes_per_style < 2 and self.n_styles * self.classes_per_style != 1:
            raise ValueError("need K >= 2 (or exactly 1 for degenerate fixtures)")
        if self.n_styles > len(self.timbre_bank):
            raise ValueError("not enough timbre profiles for n_styles")
        lo, hi = self.tempo_range
        if not (60.0 <= lo <= hi <= 200.0):
            raise ValueError("tempo_range must lie within [60, 200] BPM")

    @property
    def n_classes(self) -> int:
        return self.n_styles * self.classes_per_style

    def style_of(self, dance_id: int) -> int:
        return dance_id // self.classes_per_style

    def class_attrs(self, dance_id: int) -> tuple:
        """(timbre profile, fundamental Hz, pulses per beat) for a class."""
        style = self.style_of(dance_id)
        c = dance_id % self.classes_per_style
        f0 = BASE_F0 * 2.0 ** (c * self.register_semitones / 12.0)
        subdiv = SUBDIVISIONS[c % len(SUBDIVISIONS)]
        return self.timbre_bank[style], f0, subdiv

    def style_map(self) -> np.ndarray:
        return np.array([self.style_of(k) for k in range(self.n_classes)], dtype=np.int64)


@dataclass
class PhraseTruth:
    start_sec: float
    end_sec: float
    dance_id: int
    style_id: int


@dataclass
class GroundTruth:
    song_id: str
    tempo: float
    phrases: list


def _render_phrase(spec: SynthSpec, dance_id: int, tempo: float, rng: np.random.Generator) -> np.ndarray:
    """Clicks on beats plus register/timbre-coded tone pulses, with noise."""
    sr = spec.sample_rate
    profile, f0, subdiv = spec.class_attrs(dance_id)
    beat = 60.0 / tempo
    n = int(round(spec.beats_per_phrase * beat * sr))
    y = np.zeros(n)

    click_len = min(256, n)
    click_shape = np.exp(-np.arange(click_len) / 32.0) * np.sign(np.sin(2 * np.pi * 3000 * np.arange(click_len) / sr))
    for k in range(spec.beats_per_phrase):
        i = int(round(k * beat * sr))
        m = min(click_len, n - i)
        if m > 0:
            amp = CLICK_AMP * (1.0 + rng.uniform(-spec.click_jitter, spec.click_jitter))
            y[i : i + m] += amp * click_shape[:m]

    j = spec.register_jitter_cents
    f0_jit = f0 * 2.0 ** (rng.uniform(-j, j) / 1200.0)
    tilt = rng.uniform(-spec.tilt_range, spec.tilt_range)
    pulse_len = int(0.8 * beat / subdiv * sr)
    t = np.arange(pulse_len) / sr
    envelope = np.exp(-3.0 * t / (pulse_len / sr))
    tone = np.zeros(pulse_len)
    for h, amp in enumerate(profile, start=1):
        if f0_jit * h < sr / 2:
            a = amp * (1.0 + rng.uniform(-spec.harmonic_jitter, spec.harmonic_jitter)) * (h / 3.0) ** tilt
            tone += a * np.sin(2 * np.pi * f0_jit * h * t + rng.uniform(0, 2 * np.pi))
    tone *= TONE_AMP * envelope / max(np.max(np.abs(tone)), 1e-9)

    for j in range(spec.beats_per_phrase * subdiv):
        i = int(round(j * beat / subdiv * sr))
        m = min(pulse_len, n - i)
        if m > 0:
            y[i : i + m] += tone[:m]

    rms = np.sqrt(np.mean(y**2))
    noise_rms = rms * 10.0 ** (-spec.noise_snr_db / 20.0)
    y += noise_rms * rng.standard_normal(n)
    return np.clip(y, -1.0, 1.0)


def _class_chain(spec: SynthSpec, n_phrases: int, rng: np.random.Generator) -> list:
    """Style Markov chain; consecutive phrases always change class when K > 1."""
    ids = []
    style = int(rng.integers(spec.n_styles))
    prev = -1
    for _ in range(n_phrases):
        if ids and spec.n_styles > 1 and rng.random() > STYLE_STAY_PROB:
            others = [s for s in range(spec.n_styles) if s != style]
            style = int(others[rng.integers(len(others))])
        options = [style * spec.classes_per_style + c for c in range(spec.classes_per_style)]
        options = [d for d in options if d != prev] or [prev]
        dance = int(options[rng.integers(len(options))])
        ids.append(dance)
        prev = dance
    return ids


def generate_song(spec: SynthSpec, seed: int, song_id: str = "") -> tuple:
    """One deterministic song: (AudioSignal, GroundTruth)."""
    rng = np.random.default_rng([spec.seed, seed])
    tempo = float(rng.uniform(*spec.tempo_range))
    lo, hi = spec.phrases_per_song
    n_phrases = int(rng.integers(lo, hi + 1))
    ids = _class_chain(spec, n_phrases, rng)

    chunks = []
    truths = []
    cursor = 0
    sr = spec.sample_rate
    for dance_id in ids:
        y = _render_phrase(spec, dance_id, tempo, rng)
        start = cursor / sr
        cursor += len(y)
        truths.append(PhraseTruth(start, cursor / sr, dance_id, spec.style_of(dance_id)))
        chunks.append(y)
    sig = AudioSignal(np.concatenate(chunks), sr)
    return sig, GroundTruth(song_id=song_id, tempo=tempo, phrases=truths)


# ---------------------------------------------------------------------------
# the brute-force labeling oracle


SIG_W_REGISTER = 3.0
SIG_W_DENSITY = 1.0
OOD_THRESHOLD = 0.7  # clean/noisy synthetic stays under 0.5, real signals exceed 1.0
_TEMPLATE_TEMPI = (105.0, 130.0, 155.0)
_TEMPLATE_SEEDS = (0, 1, 2)


def class_signature(features: PhraseFeatures) -> np.ndarray:
    """Physically measurable class fingerprint: band profile, register, density.

    The band profile uses a per-band time median (clicks are sparse transients
    and wash out, sustained harmonic lines survive).  Mean and linear trend
    across bands are projected out: the per-phrase dB normalization shifts the
    floor, and random spectral tilt adds a quasi-linear ramp; both cancel
    under detrending while the harmonic line pattern survives.
    """
    profile = np.median(features.mel.astype(np.float64), axis=1)
    idx = np.arange(len(profile), dtype=np.float64)
    coeffs = np.polyfit(idx, profile, 1)
    profile = profile - np.polyval(coeffs, idx)
    profile = profile / max(np.linalg.norm(profile), 1e-12)
    voiced = features.melody[features.melody > 0]
    register = float(np.median(voiced)) if len(voiced) else 0.0
    density = float(np.mean(features.rhythm))
    return np.concatenate([profile, [SIG_W_REGISTER * register, SIG_W_DENSITY * density]])


def _template_features(spec: SynthSpec, dance_id: int, tempo: float, seed: int) -> PhraseFeatures:
    """Template phrases are rendered from the corpus distribution itself."""
    rng = np.random.default_rng([spec.seed, 7_777, dance_id, int(tempo), seed])
    y = _render_phrase(spec, dance_id, tempo, rng)
    analysis = analyze_song(AudioSignal(y, spec.sample_rate))
    return extract_phrase_features(analysis, 0.0, len(y) / spec.sample_rate)


class OracleLabeler:
    """Exhaustive nearest-template matcher over all K class signatures."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        sigs = []
        for dance_id in range(spec.n_classes):
            per = [
                class_signature(_template_features(spec, dance_id, t, s))
                for t in _TEMPLATE_TEMPI
                for s in _TEMPLATE_SEEDS
            ]
            sigs.append(np.mean(per, axis=0))
        self.templates = np.stack(sigs)

    def distances(self, features: PhraseFeatures) -> np.ndarray:
        sig = class_signature(features)
        return np.linalg.norm(self.templates - sig[None, :], axis=1)

    def label(self, features: PhraseFeatures) -> int:
        d = self.distances(features)
        best = int(np.argmin(d))
        if d[best] > OOD_THRESHOLD:
            raise OutOfDistribution(f"nearest template distance {d[best]:.3f} exceeds {OOD_THRESHOLD}")
        return best


def oracle_label(features: PhraseFeatures, spec: SynthSpec, _cache={}) -> int:
    """Module-level convenience with a per-spec template cache."""
    key = (
        spec.n_styles,
        spec.classes_per_style,
        spec.beats_per_phrase,
        spec.sample_rate,
        spec.seed,
        spec.timbre_bank,
        spec.noise_snr_db,
        spec.register_semitones,
        spec.register_jitter_cents,
        spec.harmonic_jitter,
        spec.tilt_range,
    )
    if key not in _cache:
        _cache[key] = OracleLabeler(spec)
    return _cache[key].label(features)


# ---------------------------------------------------------------------------
# corpus assembly


@dataclass
class LabeledExample:
    phrase: MusicPhrase
    dance_id: int
    style_id: int


@dataclass
class UnlabeledSong:
    song_id: str
    features: list  # ordered PhraseFeatures


@dataclass
class Corpus:
    spec: SynthSpec
    labeled: list  # LabeledExample
    train_idx: np.ndarray
    test_idx: np.ndarray
    unlabeled: list  # UnlabeledSong
    truth: dict  # song_id -> list of true dance ids (hidden sidecar)

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def train_set(self) -> list:
        return [self.labeled[i] for i in self.train_idx]

    def test_set(self) -> list:
        return [self.labeled[i] for i in self.test_idx]


def _song_phrases(spec: SynthSpec, sig: AudioSignal, truth: GroundTruth) -> list:
    """Features at the true boundaries (labels are attached to true phrases)."""
    analysis = analyze_song(sig, light=True)
    out = []
    for i, p in enumerate(truth.phrases):
        feats = extract_phrase_features(analysis, p.start_sec, p.end_sec)
        out.append(
            MusicPhrase(
                song_id=truth.song_id,
                index=i,
                start_sec=p.start_sec,
                end_sec=p.end_sec,
                beat_count=spec.beats_per_phrase,
                features=feats,
            )
        )
    return out


def make_corpus(
    spec: SynthSpec,
    n_labeled_songs: int,
    n_unlabeled_songs: int,
    out_dir=None,
    write_audio: bool = False,
    progress=None,
    workers: Optional[int] = None,
) -> Corpus:
    """Deterministic labeled/unlabeled corpus with a hidden truth sidecar.

    Labeled phrases carry oracle labels (exact on clean synthetic data by
    construction); unlabeled songs keep their truth only in ``corpus.truth``.
    With ``out_dir`` set, feature caches, the manifest, and the truth sidecar
    are written to disk (plus song WAVs when ``write_audio``).
    """
    import concurrent.futures as _fut
    import os

    from .audio import write_wav
    from .features_io import write_feature_cache

    total = n_labeled_songs + n_unlabeled_songs
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "caches").mkdir(parents=True, exist_ok=True)
        if write_audio:
            (out_dir / "songs").mkdir(exist_ok=True)

    def build_one(i: int):
        song_id = f"l{i:04d}" if i < n_labeled_songs else f"u{i - n_labeled_songs:04d}"
        sig, truth = generate_song(spec, seed=i, song_id=song_id)
        phrases = _song_phrases(spec, sig, truth)
        if out_dir is not None:
            write_feature_cache(out_dir / "caches" / f"{song_id}.m2df", phrases)
            if write_audio:
                write_wav(out_dir / "songs" / f"{song_id}.wav", sig)
        return i, song_id, truth, phrases

    if workers is None:
        workers = max(1, int(os.environ.get("M2D_THREADS", "1")))
    results = {}
    if workers > 1:
        with _fut.ThreadPoolExecutor(max_workers=workers) as pool:
            for i, song_id, truth, phrases in pool.map(build_one, range(total)):
                results[i] = (song_id, truth, phrases)
                if progress is not None:
                    progress(len(results), total)
    else:
        for i in range(total):
            _, song_id, truth, phrases = build_one(i)
            results[i] = (song_id, truth, phrases)
            if progress is not None:
                progress(len(results), total)

    labeled = []
    unlabeled = []
    truth_sidecar = {}
    manifest_songs = []
    for i in range(total):
        song_id, truth, phrases = results[i]
        if i < n_labeled_songs:
            for p, pt in zip(phrases, truth.phrases):
                labeled.append(LabeledExample(phrase=p, dance_id=pt.dance_id, style_id=pt.style_id))
            manifest_songs.append(
                {
                    "song_id": song_id,
                    "split": "labeled",
                    "cache": f"caches/{song_id}.m2df",
                    "audio": f"songs/{song_id}.wav" if (out_dir is not None and write_audio) else None,
                    "labels": [pt.dance_id for pt in truth.phrases],
                    "styles": [pt.style_id for pt in truth.phrases],
                }
            )
        else:
            unlabeled.append(UnlabeledSong(song_id=song_id, features=[p.features for p in phrases]))
            truth_sidecar[song_id] = [pt.dance_id for pt in truth.phrases]
            manifest_songs.append(
                {
                    "song_id": song_id,
                    "split": "unlabeled",
                    "cache": f"caches/{song_id}.m2df",
                    "audio": f"songs/{song_id}.wav" if (out_dir is not None and write_audio) else None,
                }
            )

    rng = np.random.default_rng([spec.seed, 90_10])
    order = rng.permutation(len(labeled))
    n_test = max(1, int(round(0.1 * len(labeled))))
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    corpus = Corpus(
        spec=spec, labeled=labeled, train_idx=train_idx, test_idx=test_idx, unlabeled=unlabeled, truth=truth_sidecar
    )

    if out_dir is not None:
        manifest = {
            "schema": "m2d/1",
            "K": spec.n_classes,
            "style_of": spec.style_map().tolist(),
            "spec": {
                "n_styles": spec.n_styles,
                "classes_per_style": spec.classes_per_style,
                "tempo_lo": spec.tempo_range[0],
                "tempo_hi": spec.tempo_range[1],
                "beats_per_phrase": spec.beats_per_phrase,
                "phrases_per_song_lo": spec.phrases_per_song[0],
                "phrases_per_song_hi": spec.phrases_per_song[1],
                "noise_snr_db": spec.noise_snr_db,
                "sample_rate": spec.sample_rate,
                "seed": spec.seed,
                "register_semitones": spec.register_semitones,
                "register_jitter_cents": spec.register_jitter_cents,
                "harmonic_jitter": spec.harmonic_jitter,
                "tilt_range": spec.tilt_range,
                "click_jitter": spec.click_jitter,
            },
            "test_phrases": [[labeled[i].phrase.song_id, labeled[i].phrase.index] for i in test_idx],
            "songs": manifest_songs,
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
        (out_dir / "truth.json").write_text(
            json.dumps({"schema": "m2d/1", "songs": truth_sidecar}, indent=1) + "\n", encoding="utf-8"
        )
    return corpus


def load_corpus(corpus_dir) -> Corpus:
    """Rebuild a Corpus from manifest + caches (+ truth sidecar if present)."""
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "manifest.json").read_text(encoding="utf-8"))
    sp = manifest["spec"]
    spec = SynthSpec(
        n_styles=sp["n_styles"],
        classes_per_style=sp["classes_per_style"],
        tempo_range=(sp["tempo_lo"], sp["tempo_hi"]),
        beats_per_phrase=sp["beats_per_phrase"],
        phrases_per_song=(sp["phrases_per_song_lo"], sp["phrases_per_song_hi"]),
        noise_snr_db=sp["noise_snr_db"],
        sample_rate=sp["sample_rate"],
        seed=sp["seed"],
        register_semitones=sp.get("register_semitones", 5.0),
        register_jitter_cents=sp.get("register_jitter_cents", 60.0),
        harmonic_jitter=sp.get("harmonic_jitter", 0.35),
        tilt_range=sp.get("tilt_range", 0.5),
        click_jitter=sp.get("click_jitter", 0.3),
    )
    from .features_io import read_feature_cache

    labeled = []
    unlabeled = []
    for song in manifest["songs"]:
        records = read_feature_cache(corpus_dir / song["cache"])
        if song["split"] == "labeled":
            for idx, ((start, end, feats), dance_id, style_id) in enumerate(
                zip(records, song["labels"], song["styles"])
            ):
                phrase = MusicPhrase(
                    song_id=song["song_id"],
                    index=idx,
                    start_sec=start,
                    end_sec=end,
                    beat_count=spec.beats_per_phrase,
                    features=feats,
                )
                labeled.append(LabeledExample(phrase=phrase, dance_id=dance_id, style_id=style_id))
        else:
            unlabeled.append(UnlabeledSong(song_id=song["song_id"], features=[r[2] for r in records]))

    truth = {}
    truth_path = corpus_dir / "truth.json"
    if truth_path.exists():
        truth = json.loads(truth_path.read_text(encoding="utf-8"))["songs"]

    test_keys = {tuple(t) for t in manifest["test_phrases"]}
    test_idx = np.array(
        sorted(i for i, ex in enumerate(labeled) if (ex.phrase.song_id, ex.phrase.index) in test_keys), dtype=np.int64
    )
    train_idx = np.array(sorted(set(range(len(labeled))) - set(test_idx.tolist())), dtype=np.int64)
    return Corpus(spec=spec, labeled=labeled, train_idx=train_idx, test_idx=test_idx, unlabeled=unlabeled, truth=truth)
