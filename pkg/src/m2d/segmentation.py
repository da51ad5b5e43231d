"""Slice songs into beat-aligned music phrases.

Breaking points are beats scored by three cues: proximity to a long-fragment
boundary, melody discontinuity, and onset weakness (phrases tend to break
where the texture breathes).  A greedy left-to-right pass cuts at the best
candidate inside the allowed phrase-length window, or at the window edge when
nothing qualifies.  Phrase intervals always tile [0, duration] exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dsp
from .audio import AudioSignal

FALLBACK_WINDOW_SEC = 8.0


@dataclass
class SegmentationConfig:
    min_beats: int = 8
    max_beats: int = 32
    melody_jump_threshold: float = 0.1
    onset_valley_quantile: float = 0.25
    weights: tuple = (2.0, 1.0, 1.0)  # fragment, melody, onset-valley

    def __post_init__(self):
        if not (1 <= self.min_beats < self.max_beats):
            raise ValueError("need 1 <= min_beats < max_beats")
        if not (0.0 < self.onset_valley_quantile < 1.0):
            raise ValueError("onset_valley_quantile must be in (0, 1)")


@dataclass
class PhraseFeatures:
    mel: np.ndarray  # [128, 128] float32, mel bands x frames, values in [0, 1]
    melody: np.ndarray  # [128] float32 in [0, 1]
    rhythm: np.ndarray  # [128] uint8 in {0, 1}


@dataclass
class MusicPhrase:
    song_id: str
    index: int
    start_sec: float
    end_sec: float
    beat_count: int
    features: Optional[PhraseFeatures] = None
    beat_aligned: bool = True  # False only for the no-beats fallback

    @property
    def duration(self) -> float:
        return self.end_sec - self.start_sec


@dataclass
class SongAnalysis:
    """Shared per-song analysis products, computed once."""

    signal: AudioSignal
    mel: dsp.MelSpectrogram
    env: np.ndarray
    beats: dsp.BeatGrid
    melody: dsp.MelodyContour
    fragments: np.ndarray  # structure boundaries incl. 0 and duration
    onset_times: np.ndarray  # seconds of onset envelope peaks


def analyze_song(sig: AudioSignal, light: bool = False) -> SongAnalysis:
    """Per-song analysis.  ``light=True`` skips the song-level melody and
    structure boundaries (only the breaking-point scorer needs them)."""
    power = dsp.stft_power(sig.samples)
    mel = dsp.mel_spectrogram(sig, power=power)
    env = dsp.onset_envelope(mel)
    try:
        beats = dsp.track_beats(env, mel.frame_rate)
    except dsp.DegenerateEnvelope:
        beats = dsp.BeatGrid(beat_times=np.array([]), tempo=0.0)
    if light:
        melody = dsp.MelodyContour(values=np.zeros(mel.n_frames), voicing=np.zeros(mel.n_frames, dtype=bool))
        fragments = np.array([0.0, sig.duration])
    else:
        melody = dsp.estimate_melody(sig, power=power)
        fragments = dsp.structure_segments(sig)
    onset_times = dsp.onset_peaks(env) / mel.frame_rate
    return SongAnalysis(sig, mel, env, beats, melody, fragments, onset_times)


def candidate_breakpoints(
    beats: dsp.BeatGrid,
    fragments: np.ndarray,
    melody: dsp.MelodyContour,
    env: np.ndarray,
    frame_rate: float,
    cfg: SegmentationConfig,
):
    """Score every beat as a potential breaking point.

    Returns (scores, is_candidate), one entry per beat.  A beat is a candidate
    if any cue fires: interior fragment boundary within half a beat, melody
    jump above threshold, or onset strength below the valley quantile.
    """
    times = np.asarray(beats.beat_times)
    n = len(times)
    if n < 2:
        return np.zeros(n), np.zeros(n, dtype=bool)
    w_frag, w_mel, w_env = cfg.weights
    half_beat = 0.5 * float(np.median(np.diff(times)))
    interior = fragments[(fragments > 1e-9) & (fragments < fragments.max() - 1e-9)]

    frag_hit = np.zeros(n, dtype=bool)
    if len(interior):
        for i, t in enumerate(times):
            frag_hit[i] = np.min(np.abs(interior - t)) <= half_beat

    frames = np.clip(np.round(times * frame_rate).astype(np.int64), 0, len(env) - 1)
    hb_frames = max(1, int(round(half_beat * frame_rate)))
    jumps = np.zeros(n)
    for i, f in enumerate(frames):
        before = melody.values[max(0, f - hb_frames) : f]
        after = melody.values[f : f + hb_frames]
        if len(before) and len(after):
            jumps[i] = abs(after.mean() - before.mean())
    jump_norm = jumps / jumps.max() if jumps.max() > 0 else jumps

    strength = env[frames].astype(np.float64)
    strength_norm = strength / strength.max() if strength.max() > 0 else strength

    scores = w_frag * frag_hit + w_mel * jump_norm + w_env * (1.0 - strength_norm)
    valley = strength < np.quantile(strength, cfg.onset_valley_quantile)
    is_candidate = frag_hit | (jumps > cfg.melody_jump_threshold) | valley
    return scores, is_candidate


def segment_phrases(
    analysis: SongAnalysis,
    cfg: SegmentationConfig,
    song_id: str = "",
    extract_features: bool = True,
) -> list:
    """Greedy beat-aligned segmentation of one analyzed song."""
    sig = analysis.signal
    duration = sig.duration
    if len(analysis.beats) == 0:
        return _fallback_phrases(analysis, song_id, extract_features)

    times = np.asarray(analysis.beats.beat_times)
    scores, cand = candidate_breakpoints(
        analysis.beats, analysis.fragments, analysis.melody, analysis.env, analysis.mel.frame_rate, cfg
    )
    cuts = []  # beat indices where phrases end
    s_idx = 0
    n = len(times)
    while n - s_idx > cfg.max_beats:
        lo, hi = s_idx + cfg.min_beats, s_idx + cfg.max_beats
        window = np.arange(lo, hi + 1)
        window = window[window < n]
        live = window[cand[window]]
        if len(live):
            c = int(live[np.argmax(scores[live])])  # argmax picks earliest tie
        else:
            c = s_idx + cfg.max_beats
        cuts.append(c)
        s_idx = c

    bounds = [0.0] + [float(times[c]) for c in cuts] + [duration]
    counts = []
    prev = 0
    for c in cuts:
        counts.append(c - prev)
        prev = c
    counts.append(n - prev)

    phrases = []
    for i in range(len(bounds) - 1):
        start, end = bounds[i], bounds[i + 1]
        feats = extract_phrase_features(analysis, start, end) if extract_features else None
        phrases.append(
            MusicPhrase(song_id=song_id, index=i, start_sec=start, end_sec=end, beat_count=counts[i], features=feats)
        )
    return phrases


def _fallback_phrases(analysis: SongAnalysis, song_id: str, extract_features: bool) -> list:
    """No beats anywhere: fixed windows, flagged via beat_aligned=False."""
    duration = analysis.signal.duration
    bounds = list(np.arange(0.0, duration, FALLBACK_WINDOW_SEC)) + [duration]
    if len(bounds) >= 2 and bounds[-1] - bounds[-2] < 1e-9:
        bounds.pop(-2)
    phrases = []
    for i in range(len(bounds) - 1):
        start, end = float(bounds[i]), float(bounds[i + 1])
        feats = extract_phrase_features(analysis, start, end) if extract_features else None
        phrases.append(
            MusicPhrase(
                song_id=song_id,
                index=i,
                start_sec=start,
                end_sec=end,
                beat_count=0,
                features=feats,
                beat_aligned=False,
            )
        )
    return phrases


def extract_phrase_features(analysis: SongAnalysis, start: float, end: float) -> PhraseFeatures:
    """Per-phrase mel / melody / rhythm, resized to the network-facing 128."""
    sig = analysis.signal
    sr = sig.sample_rate
    a = int(round(start * sr))
    b = max(int(round(end * sr)), a + dsp.HOP)
    seg = AudioSignal(sig.samples[a:b], sr)

    power = dsp.stft_power(seg.samples)
    mel = dsp.mel_spectrogram(seg, power=power)
    melody = dsp.estimate_melody(seg, power=power)
    rhythm = dsp.rhythm_target(analysis.beats, analysis.onset_times, (start, end), mel.frame_rate, mel.n_frames)
    return PhraseFeatures(
        mel=dsp.resize_2d(mel.values).astype(np.float32),
        melody=dsp.resize_1d(melody.values).astype(np.float32),
        rhythm=dsp.resize_rhythm(rhythm),
    )


def segment_song(sig: AudioSignal, cfg: SegmentationConfig, song_id: str = "", extract_features: bool = True) -> list:
    """Convenience wrapper: analyze then segment."""
    return segment_phrases(analyze_song(sig), cfg, song_id, extract_features)
