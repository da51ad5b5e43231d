"""Audio loading and conditioning: WAV in, canonical mono signal out.

Only RIFF/WAVE is supported (8/16/24-bit PCM and 32-bit float, 1-2 channels).
Chunks other than "fmt " and "data" are skipped.  Everything downstream works
on :class:`AudioSignal`: float64 samples in [-1, 1] at a known rate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

CANONICAL_SR = 22050


class MalformedHeader(ValueError):
    """File is not a parseable RIFF/WAVE container."""


class UnsupportedEncoding(ValueError):
    """WAV is valid but uses an encoding outside the supported set."""


class EmptyAudio(ValueError):
    """Zero samples after decoding."""


@dataclass
class AudioSignal:
    samples: np.ndarray  # float64, range [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _decode_pcm(raw: bytes, bits: int, audio_format: int, n_channels: int) -> np.ndarray:
    bytes_per = bits // 8
    usable = len(raw) - len(raw) % (bytes_per * n_channels)
    raw = raw[:usable]
    if audio_format == 3:  # IEEE float
        if bits != 32:
            raise UnsupportedEncoding(f"float WAV must be 32-bit, got {bits}")
        x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        x = np.clip(x, -1.0, 1.0)
    elif audio_format == 1:
        if bits == 8:
            x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 24:
            b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
            val = b[:, 0].astype(np.int32) | (b[:, 1].astype(np.int32) << 8) | (b[:, 2].astype(np.int32) << 16)
            val = np.where(val >= 1 << 23, val - (1 << 24), val)
            x = val.astype(np.float64) / float(1 << 23)
        else:
            raise UnsupportedEncoding(f"unsupported PCM bit depth {bits}")
    else:
        raise UnsupportedEncoding(f"unsupported WAV format tag {audio_format}")
    return x.reshape(-1, n_channels)


def load_wav(path) -> AudioSignal:
    """Read a WAV file, mix to mono (channel mean), scale to [-1, 1]."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[0:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise MalformedHeader(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        pos += 8
        payload = blob[pos : pos + size]
        if cid == b"fmt ":
            if size < 16:
                raise MalformedHeader(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", payload, 0)
        elif cid == b"data":
            data = payload
        pos += size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise MalformedHeader(f"{path}: missing fmt or data chunk")
    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if n_channels not in (1, 2):
        raise UnsupportedEncoding(f"{path}: {n_channels} channels (only mono/stereo)")
    frames = _decode_pcm(data, bits, audio_format, n_channels)
    if frames.shape[0] == 0:
        raise EmptyAudio(f"{path}: no samples")
    mono = frames.mean(axis=1)
    return AudioSignal(mono, sample_rate)


def write_wav(path, sig: AudioSignal, bits: int = 16) -> None:
    """Write mono PCM WAV (16-bit) or IEEE float (32-bit)."""
    x = np.clip(sig.samples, -1.0, 1.0)
    if bits == 16:
        payload = (np.round(x * 32767.0).astype("<i2")).tobytes()
        audio_format, block = 1, 2
    elif bits == 32:
        payload = x.astype("<f4").tobytes()
        audio_format, block = 3, 4
    else:
        raise ValueError("write_wav supports 16-bit PCM or 32-bit float")
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        audio_format,
        1,
        sig.sample_rate,
        sig.sample_rate * block,
        block,
        bits,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(hdr + payload)


def resample(sig: AudioSignal, target_sr: int) -> AudioSignal:
    """Polyphase band-limited resampling to ``target_sr``."""
    if target_sr <= 0:
        raise ValueError("target_sr must be positive")
    if target_sr == sig.sample_rate:
        return sig
    g = gcd(target_sr, sig.sample_rate)
    out = resample_poly(sig.samples, target_sr // g, sig.sample_rate // g)
    want = round(len(sig.samples) * target_sr / sig.sample_rate)
    if len(out) > want:
        out = out[:want]
    elif len(out) < want:
        out = np.pad(out, (0, want - len(out)), mode="edge")
    return AudioSignal(np.clip(out, -1.0, 1.0), target_sr)


def peak_normalize(sig: AudioSignal) -> AudioSignal:
    peak = np.max(np.abs(sig.samples)) if len(sig.samples) else 0.0
    if peak == 0.0:
        return sig
    return AudioSignal(sig.samples / peak, sig.sample_rate)


def load_canonical(path, sr: int = CANONICAL_SR) -> AudioSignal:
    """load -> resample -> peak-normalize, the pipeline's standard intake."""
    return peak_normalize(resample(load_wav(path), sr))
