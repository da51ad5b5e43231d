"""Musical feature extraction: mel spectrogram, onsets, beats, melody, rhythm,
structure boundaries, and the fixed-size resizers feeding the networks.

Everything here is a deterministic function of (samples, sample_rate, config);
per-phrase extraction is safe to run concurrently.

Frame convention: STFT frames are zero-center-padded, hop 512 at 22050 Hz, so
n_frames = 1 + floor(n_samples / hop) and frame t is centered at t*hop/sr.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioSignal

N_FFT = 2048
HOP = 512
N_MELS = 128
DB_FLOOR = 1e-10
FEATURE_LEN = 128  # network-facing size for mel frames / melody / rhythm

MELODY_FMIN = 55.0
MELODY_FMAX = 1760.0
MELODY_HARMONICS = 5
MELODY_RMS_GATE = 0.01
MELODY_SALIENCE_RATIO = 2.0

TEMPO_MIN = 60.0
TEMPO_MAX = 200.0
BEAT_PENALTY = 100.0
IBI_MIN_SEC = 0.25
IBI_MAX_SEC = 2.0

NOVELTY_KERNEL_BEATS = 16


class DegenerateEnvelope(ValueError):
    """Onset envelope carries no energy; no beats can be tracked."""


@dataclass
class MelSpectrogram:
    values: np.ndarray  # [n_mels, n_frames], min-max normalized to [0, 1]
    hop: int
    sample_rate: int

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MelodyContour:
    values: np.ndarray  # [n_frames] in [0, 1]; 0 where unvoiced
    voicing: np.ndarray  # bool [n_frames]


@dataclass
class BeatGrid:
    beat_times: np.ndarray  # seconds, strictly increasing
    tempo: float  # BPM

    def __len__(self) -> int:
        return len(self.beat_times)


# ---------------------------------------------------------------------------
# STFT and mel filterbank


def hann_window(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(y: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Center-padded frames [n_frames, n_fft]; n_frames = 1 + len(y)//hop."""
    pad = n_fft // 2
    yp = np.concatenate([np.zeros(pad), np.asarray(y, dtype=np.float64), np.zeros(pad)])
    n_frames = 1 + len(y) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return yp[idx]


def stft_power(y: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Power spectrogram [n_frames, n_fft//2 + 1]."""
    frames = frame_signal(y, n_fft, hop) * hann_window(n_fft)[None, :]
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real**2 + spec.imag**2).astype(np.float64)


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    mel = f * 3.0 / 200.0
    log_region = f >= 1000.0
    mel = np.where(log_region, 15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / (np.log(6.4) / 27.0), mel)
    return mel


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = m * 200.0 / 3.0
    log_region = m >= 15.0
    return np.where(log_region, 1000.0 * np.exp((m - 15.0) * (np.log(6.4) / 27.0)), f)


def mel_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """n_mels + 2 band edge/center frequencies, equally spaced in mel."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


_FB_CACHE: dict = {}


def mel_filterbank(sr: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters [n_mels, n_bins], area-normalized (2 / bandwidth)."""
    key = (sr, n_fft, n_mels)
    if key in _FB_CACHE:
        return _FB_CACHE[key]
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    edges = mel_frequencies(n_mels, 0.0, sr / 2.0)
    fb = np.zeros((n_mels, len(freqs)))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / max(center - lo, 1e-12)
        down = (hi - freqs) / max(hi - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down)) * 2.0 / (hi - lo)
    _FB_CACHE[key] = fb
    return fb


def mel_spectrogram(
    sig: AudioSignal, n_fft: int = N_FFT, hop: int = HOP, n_mels: int = N_MELS, power=None
) -> MelSpectrogram:
    """Log-power mel spectrogram, min-max normalized per call to [0, 1]."""
    if power is None:
        power = stft_power(sig.samples, n_fft, hop)  # [T, bins]
    mel = mel_filterbank(sig.sample_rate, n_fft, n_mels) @ power.T  # [n_mels, T]
    db = 10.0 * np.log10(mel + DB_FLOOR)
    lo, hi = db.min(), db.max()
    if hi - lo < 1e-12:
        norm = np.zeros_like(db)
    else:
        norm = (db - lo) / (hi - lo)
    return MelSpectrogram(values=norm, hop=hop, sample_rate=sig.sample_rate)


# ---------------------------------------------------------------------------
# onsets and beats


def onset_envelope(mel: MelSpectrogram) -> np.ndarray:
    """Half-wave-rectified per-band flux summed over bands; env[0] = 0."""
    v = mel.values
    env = np.zeros(v.shape[1])
    if v.shape[1] > 1:
        env[1:] = np.maximum(v[:, 1:] - v[:, :-1], 0.0).sum(axis=0)
    return env


def onset_peaks(env: np.ndarray) -> np.ndarray:
    """Frames of local envelope maxima at least one sigma above the mean."""
    if len(env) < 3:
        return np.array([], dtype=np.int64)
    thresh = env.mean() + env.std()
    mask = (env[1:-1] > env[:-2]) & (env[1:-1] >= env[2:]) & (env[1:-1] >= thresh)
    return np.nonzero(mask)[0] + 1


def _autocorr_tempo(env: np.ndarray, frame_rate: float) -> float:
    """Tempo (BPM) from the envelope autocorrelation within the 60-200 window.

    A periodic envelope peaks at every multiple of its period, so among local
    maxima within 85% of the global one the smallest lag is the fundamental.
    """
    lag_min = max(1, int(np.ceil(60.0 * frame_rate / TEMPO_MAX)))
    lag_max = min(len(env) - 1, int(np.floor(60.0 * frame_rate / TEMPO_MIN)))
    if lag_max <= lag_min:
        return float(np.clip(60.0 * frame_rate / max(lag_min, 1), TEMPO_MIN, TEMPO_MAX))
    # mean-subtract (kills the DC pedestal under noise) and lightly smooth
    # (events split across adjacent frames otherwise dilute their own peak)
    z = env - env.mean()
    g = np.exp(-0.5 * (np.arange(-3, 4) / 1.0) ** 2)
    z = np.convolve(z, g / g.sum(), mode="same")
    ac = np.array([float(z[:-lag] @ z[lag:]) for lag in range(lag_min, lag_max + 1)])
    peaks = [k for k in range(1, len(ac) - 1) if ac[k] >= ac[k - 1] and ac[k] >= ac[k + 1]]
    if not peaks:
        peaks = [int(np.argmax(ac))]
    best = max(ac[k] for k in peaks)
    k = min(p for p in peaks if ac[p] >= 0.85 * best)
    lag = float(lag_min + k)
    if 0 < k < len(ac) - 1:
        denom = ac[k - 1] - 2.0 * ac[k] + ac[k + 1]
        if denom < 0:
            lag += float(np.clip(0.5 * (ac[k - 1] - ac[k + 1]) / denom, -0.5, 0.5))
    return 60.0 * frame_rate / lag


def track_beats(env: np.ndarray, frame_rate: float) -> BeatGrid:
    """Dynamic-programming beat tracker.

    Chooses the frame sequence maximizing sum(env) - penalty * sum of squared
    log deviations of inter-beat gaps from the autocorrelation period.
    """
    env = np.asarray(env, dtype=np.float64)
    if len(env) < 2 or env.max() <= 0.0:
        raise DegenerateEnvelope("onset envelope has no energy")
    env = env / env.max()
    tempo = _autocorr_tempo(env, frame_rate)
    period = 60.0 * frame_rate / tempo
    lo = max(1, int(np.round(period / 2)), int(np.ceil(IBI_MIN_SEC * frame_rate)))
    hi = max(lo, min(int(np.round(period * 2)), int(np.floor(IBI_MAX_SEC * frame_rate))))

    n = len(env)
    cum = env.copy()
    backlink = np.full(n, -1, dtype=np.int64)
    gaps = np.arange(lo, hi + 1)
    penalty = -BEAT_PENALTY * np.log(gaps / period) ** 2
    for t in range(lo, n):
        g_hi = min(hi, t)
        cand = cum[t - g_hi : t - lo + 1][::-1] + penalty[: g_hi - lo + 1]
        best = int(np.argmax(cand))
        if cand[best] > 0.0:
            cum[t] += cand[best]
            backlink[t] = t - lo - best
    end = int(np.argmax(cum))
    chain = [end]
    while backlink[chain[-1]] >= 0:
        chain.append(int(backlink[chain[-1]]))
    beats = np.array(chain[::-1], dtype=np.float64) / frame_rate
    return BeatGrid(beat_times=beats, tempo=float(tempo))


# ---------------------------------------------------------------------------
# melody


def estimate_melody(sig: AudioSignal, hop: int = HOP, n_fft: int = N_FFT, power=None) -> MelodyContour:
    """Dominant-pitch proxy via harmonic summation over the DFT.

    Per frame the pitch is the (interpolated) argmax over 55-1760 Hz of
    sum_h |X(h f)| / h; frames gate on RMS and on peak salience vs the mean.
    Values are log-frequency normalized so 55 Hz -> 0 and 1760 Hz -> 1.
    ``power`` short-circuits the STFT when the caller already has it.
    """
    frames = frame_signal(sig.samples, n_fft, hop)
    rms = np.sqrt((frames**2).mean(axis=1))
    if power is None:
        power = stft_power(sig.samples, n_fft, hop)
    spec = np.sqrt(power)
    df = sig.sample_rate / n_fft
    k_min = max(1, int(np.ceil(MELODY_FMIN / df)))
    k_max = min(int(np.floor(MELODY_FMAX / df)), (spec.shape[1] - 1) // MELODY_HARMONICS)
    if k_max <= k_min:
        z = np.zeros(frames.shape[0])
        return MelodyContour(values=z, voicing=np.zeros(frames.shape[0], dtype=bool))
    ks = np.arange(k_min, k_max + 1)
    sal = np.zeros((frames.shape[0], len(ks)))
    for h in range(1, MELODY_HARMONICS + 1):
        sal += spec[:, h * k_min : h * k_max + 1 : h] / h

    peak_idx = np.argmax(sal, axis=1)
    rows = np.arange(sal.shape[0])
    peak_val = sal[rows, peak_idx]
    voiced = (rms > MELODY_RMS_GATE) & (peak_val > MELODY_SALIENCE_RATIO * sal.mean(axis=1))

    # parabolic refinement toward the continuous argmax
    k_star = ks[peak_idx].astype(np.float64)
    interior = (peak_idx > 0) & (peak_idx < len(ks) - 1)
    i = np.where(interior, peak_idx, 1)
    sm1, s0, sp1 = sal[rows, i - 1], sal[rows, i], sal[rows, i + 1]
    denom = sm1 - 2.0 * s0 + sp1
    delta = np.where((denom < 0) & interior, 0.5 * (sm1 - sp1) / np.where(denom == 0, 1.0, denom), 0.0)
    k_star += np.clip(delta, -0.5, 0.5)

    freq = k_star * df
    values = np.log2(freq / MELODY_FMIN) / np.log2(MELODY_FMAX / MELODY_FMIN)
    values = np.clip(values, 0.0, 1.0)
    values[~voiced] = 0.0
    return MelodyContour(values=values, voicing=voiced)


# ---------------------------------------------------------------------------
# rhythm target


def rhythm_target(
    beats: BeatGrid,
    onset_times: np.ndarray,
    interval: tuple,
    frame_rate: float,
    n_frames: int,
) -> np.ndarray:
    """Binary per-frame vector: 1 at the frame nearest each beat/onset inside
    [start, end); frame indices are relative to the interval start."""
    start, end = interval
    out = np.zeros(n_frames, dtype=np.uint8)
    events = np.concatenate([np.asarray(beats.beat_times, dtype=np.float64), np.asarray(onset_times, dtype=np.float64)])
    for e in events:
        if start <= e < end:
            idx = int(np.round((e - start) * frame_rate))
            out[min(max(idx, 0), n_frames - 1)] = 1
    return out


# ---------------------------------------------------------------------------
# structure boundaries


def _checkerboard_kernel(size: int) -> np.ndarray:
    half = size // 2
    pos = np.arange(size) - (size - 1) / 2.0
    taper = np.exp(-0.5 * (pos / (size / 4.0)) ** 2)
    signs = np.where(np.arange(size) < half, -1.0, 1.0)
    return np.outer(taper * signs, taper * signs)


def structure_segments(sig: AudioSignal, kernel_beats: int = NOVELTY_KERNEL_BEATS) -> np.ndarray:
    """Long-fragment boundaries (seconds) via self-similarity novelty.

    Beat-synchronous mel features -> cosine self-similarity -> checkerboard
    novelty -> peaks above mean + 1 sigma.  Always includes 0 and duration.
    """
    duration = sig.duration
    trivial = np.array([0.0, duration])
    if duration < 4.0:
        return trivial
    mel = mel_spectrogram(sig)
    env = onset_envelope(mel)
    try:
        beats = track_beats(env, mel.frame_rate)
    except DegenerateEnvelope:
        return trivial
    bframes = np.round(beats.beat_times * mel.frame_rate).astype(np.int64)
    bframes = np.clip(bframes, 0, mel.n_frames - 1)
    n_seg = len(bframes) - 1
    if n_seg < kernel_beats + 1:
        return trivial

    feats = np.empty((n_seg, mel.values.shape[0]))
    for i in range(n_seg):
        a, b = bframes[i], max(bframes[i + 1], bframes[i] + 1)
        feats[i] = mel.values[:, a:b].mean(axis=1)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    feats = feats / np.maximum(norms, 1e-12)
    ssm = feats @ feats.T

    half = kernel_beats // 2
    kernel = _checkerboard_kernel(kernel_beats)
    novelty = np.zeros(n_seg)
    for i in range(half, n_seg - half):
        novelty[i] = float((ssm[i - half : i + half, i - half : i + half] * kernel).sum())
    valid = novelty[half : n_seg - half]
    if len(valid) == 0 or valid.std() == 0:
        return trivial
    thresh = valid.mean() + valid.std()
    times = []
    for i in range(half, n_seg - half):
        if novelty[i] >= thresh and novelty[i] >= novelty[i - 1] and novelty[i] >= novelty[i + 1 if i + 1 < n_seg else i]:
            times.append(beats.beat_times[i])
    return np.unique(np.concatenate([[0.0], times, [duration]]))


# ---------------------------------------------------------------------------
# fixed-size resizers


def resize_1d(v: np.ndarray, out_len: int = FEATURE_LEN) -> np.ndarray:
    """Linear interpolation with corner alignment (endpoints preserved)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("resize_1d: empty input")
    if v.size == 1:
        return np.full(out_len, v[0])
    src = np.linspace(0.0, v.size - 1, out_len)
    return np.interp(src, np.arange(v.size), v)


def resize_2d(m: np.ndarray, out_shape: tuple = (FEATURE_LEN, FEATURE_LEN)) -> np.ndarray:
    """Separable bilinear resize with corner alignment."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ValueError("resize_2d: empty input")

    def along_last(a: np.ndarray, n_out: int) -> np.ndarray:
        n_in = a.shape[-1]
        if n_in == 1:
            return np.repeat(a, n_out, axis=-1)
        idx = np.linspace(0.0, n_in - 1, n_out)
        i0 = np.floor(idx).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        t = idx - i0
        return a[..., i0] * (1.0 - t) + a[..., i1] * t

    out = along_last(m, out_shape[1])
    out = along_last(out.T, out_shape[0]).T
    return out


def resize_rhythm(v: np.ndarray, out_len: int = FEATURE_LEN) -> np.ndarray:
    """Resize then re-binarize at 0.5."""
    return (resize_1d(np.asarray(v, dtype=np.float64), out_len) >= 0.5).astype(np.uint8)
