"""WAV loading, resampling, normalization."""

import struct

import numpy as np
import pytest

from m2d.audio import (
    AudioSignal,
    EmptyAudio,
    MalformedHeader,
    UnsupportedEncoding,
    load_canonical,
    load_wav,
    peak_normalize,
    resample,
    write_wav,
)

SR = 22050


def _pcm16(path, frames, sr=SR, channels=1):
    payload = np.asarray(frames, dtype="<i2").tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16, 1, channels, sr,
        sr * 2 * channels, 2 * channels, 16, b"data", len(payload),
    )
    path.write_bytes(hdr + payload)


def test_full_scale_arithmetic_16bit(tmp_path):
    p = tmp_path / "c.wav"
    _pcm16(p, np.full(100, 16384))
    sig = load_wav(p)
    np.testing.assert_allclose(sig.samples, 0.5)


def test_stereo_mixdown_is_channel_mean(tmp_path):
    p = tmp_path / "s.wav"
    left = np.full(50, round(0.2 * 32768))
    right = np.full(50, round(0.6 * 32768))
    _pcm16(p, np.stack([left, right], axis=1).reshape(-1), channels=2)
    sig = load_wav(p)
    np.testing.assert_allclose(sig.samples, 0.4, atol=1e-4)


def test_sine_write_read_round_trip(tmp_path):
    t = np.arange(SR) / SR
    x = 0.7 * np.sin(2 * np.pi * 440 * t)
    p = tmp_path / "sine.wav"
    write_wav(p, AudioSignal(x, SR))
    back = load_wav(p)
    assert back.sample_rate == SR
    np.testing.assert_allclose(back.samples, x, atol=1e-4)


def test_24bit_and_float_paths(tmp_path):
    # 24-bit PCM of value 2^22 -> 0.5
    val = 1 << 22
    raw = bytes([val & 0xFF, (val >> 8) & 0xFF, (val >> 16) & 0xFF]) * 10
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(raw), b"WAVE", b"fmt ", 16, 1, 1, SR, SR * 3, 3, 24, b"data", len(raw)
    )
    p = tmp_path / "p24.wav"
    p.write_bytes(hdr + raw)
    np.testing.assert_allclose(load_wav(p).samples, 0.5)

    x = np.linspace(-1.5, 1.5, 64)  # out-of-range floats get clamped
    pf = tmp_path / "f32.wav"
    write_wav(pf, AudioSignal(np.clip(x, -1, 1), SR), bits=32)
    back = load_wav(pf)
    np.testing.assert_allclose(back.samples, np.clip(x, -1, 1), atol=1e-7)


def test_extra_chunks_are_skipped(tmp_path):
    payload = np.full(10, 8192, dtype="<i2").tobytes()
    junk = b"LIST" + struct.pack("<I", 5) + b"abcde\x00"  # odd size + pad
    fmt = struct.pack("<4sIHHIIHH", b"fmt ", 16, 1, 1, SR, SR * 2, 2, 16)
    data = struct.pack("<4sI", b"data", len(payload)) + payload
    body = junk + fmt + data
    blob = struct.pack("<4sI4s", b"RIFF", len(body) + 4, b"WAVE") + body
    p = tmp_path / "x.wav"
    p.write_bytes(blob)
    np.testing.assert_allclose(load_wav(p).samples, 0.25)


def test_malformed_and_unsupported(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"OGGSxxxxxxxxxxxx")
    with pytest.raises(MalformedHeader):
        load_wav(bad)

    empty = tmp_path / "empty.wav"
    _pcm16(empty, np.zeros(0, dtype=np.int16))
    with pytest.raises(EmptyAudio):
        load_wav(empty)

    # unsupported: 32-bit int PCM
    payload = np.zeros(4, dtype="<i4").tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE", b"fmt ", 16, 1, 1, SR, SR * 4, 4, 32, b"data", len(payload)
    )
    u = tmp_path / "u.wav"
    u.write_bytes(hdr + payload)
    with pytest.raises(UnsupportedEncoding):
        load_wav(u)


def test_resample_identity_and_length():
    t = np.arange(SR) / SR
    sig = AudioSignal(0.5 * np.sin(2 * np.pi * 220 * t), SR)
    assert resample(sig, SR) is sig
    half = resample(AudioSignal(np.zeros(44100), 44100), 22050)
    assert abs(len(half.samples) - 22050) <= 1


def test_resample_preserves_tone_bin():
    sr = 44100
    t = np.arange(sr) / sr
    sig = AudioSignal(0.5 * np.sin(2 * np.pi * 220 * t), sr)
    down = resample(sig, 22050)
    spec = np.abs(np.fft.rfft(down.samples))
    peak_hz = np.argmax(spec) * 22050 / len(down.samples)
    assert abs(peak_hz - 220.0) <= 22050 / len(down.samples)  # within 1 bin


def test_antialias_round_trip_peak():
    t = np.arange(SR) / SR
    sig = AudioSignal(0.5 * np.sin(2 * np.pi * 990 * t), SR)
    back = resample(resample(sig, 2 * SR), SR)
    spec = np.abs(np.fft.rfft(back.samples))
    peak_hz = np.argmax(spec) * SR / len(back.samples)
    assert abs(peak_hz - 990.0) <= SR / len(back.samples)


def test_peak_normalize_cases():
    zero = AudioSignal(np.zeros(16), SR)
    assert peak_normalize(zero) is zero
    quarter = peak_normalize(AudioSignal(np.full(8, 0.25), SR))
    np.testing.assert_allclose(quarter.samples, 1.0)
    t = np.arange(100) / 100
    already = AudioSignal(np.sin(np.pi * t) / np.max(np.sin(np.pi * t)), SR)
    np.testing.assert_allclose(peak_normalize(already).samples, already.samples, atol=1e-7)


def test_load_pipeline_deterministic(tmp_path):
    p = tmp_path / "d.wav"
    rng = np.random.default_rng(0)
    write_wav(p, AudioSignal(rng.uniform(-0.5, 0.5, 44100), 44100))
    a = load_canonical(p)
    b = load_canonical(p)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.sample_rate == SR
