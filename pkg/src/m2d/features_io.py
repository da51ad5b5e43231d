"""Binary phrase-feature cache ("M2DF") and the human-readable phrase index.

Cache layout, little-endian, one file per song:
  magic "M2DF", version u32, then fixed-size records:
  start_sec f64, end_sec f64, mel 128x128 f32 row-major, melody 128 f32,
  rhythm 128 u8.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import FEATURE_LEN
from .segmentation import MusicPhrase, PhraseFeatures

MAGIC = b"M2DF"
VERSION = 1
_REC_SIZE = 16 + FEATURE_LEN * FEATURE_LEN * 4 + FEATURE_LEN * 4 + FEATURE_LEN


class FeatureCacheError(ValueError):
    """Cache file is malformed or from an unsupported version."""


def write_feature_cache(path, phrases: Sequence[MusicPhrase]) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    for p in phrases:
        if p.features is None:
            raise ValueError(f"phrase {p.index} has no features")
        buf += struct.pack("<dd", p.start_sec, p.end_sec)
        buf += np.ascontiguousarray(p.features.mel, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(p.features.melody, dtype="<f4").tobytes()
        buf += np.ascontiguousarray(p.features.rhythm, dtype=np.uint8).tobytes()
    Path(path).write_bytes(bytes(buf))


def read_feature_cache(path) -> list:
    """Returns [(start_sec, end_sec, PhraseFeatures), ...]."""
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FeatureCacheError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FeatureCacheError(f"{path}: unsupported version {version}")
    body = blob[8:]
    if len(body) % _REC_SIZE:
        raise FeatureCacheError(f"{path}: truncated record")
    out = []
    for ofs in range(0, len(body), _REC_SIZE):
        start, end = struct.unpack_from("<dd", body, ofs)
        pos = ofs + 16
        mel = np.frombuffer(body, dtype="<f4", count=FEATURE_LEN * FEATURE_LEN, offset=pos)
        pos += FEATURE_LEN * FEATURE_LEN * 4
        melody = np.frombuffer(body, dtype="<f4", count=FEATURE_LEN, offset=pos)
        pos += FEATURE_LEN * 4
        rhythm = np.frombuffer(body, dtype=np.uint8, count=FEATURE_LEN, offset=pos)
        out.append(
            (
                start,
                end,
                PhraseFeatures(
                    mel=mel.reshape(FEATURE_LEN, FEATURE_LEN).copy(),
                    melody=melody.copy(),
                    rhythm=rhythm.copy(),
                ),
            )
        )
    return out


def write_phrase_index(path, phrases: Sequence[MusicPhrase]) -> None:
    """JSON lines: one record per phrase."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in phrases:
            rec = {
                "song_id": p.song_id,
                "index": p.index,
                "start_sec": p.start_sec,
                "end_sec": p.end_sec,
                "beat_count": p.beat_count,
                "beat_aligned": p.beat_aligned,
            }
            fh.write(json.dumps(rec) + "\n")


def read_phrase_index(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
