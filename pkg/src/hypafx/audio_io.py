"""PCM WAV reading/writing and resampling."""

from __future__ import annotations

import os
import wave
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import FormatError


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read 16- or 24-bit PCM into float64 in [-1, 1); stereo is averaged to mono."""
    try:
        with wave.open(str(path), "rb") as f:
            n_ch = f.getnchannels()
            width = f.getsampwidth()
            sr = f.getframerate()
            raw = f.readframes(f.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a readable PCM WAV file ({exc})") from None
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif width == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        data = v.astype(np.float64) / float(1 << 23)
    else:
        raise FormatError(f"{path}: unsupported sample width {8 * width} bits")
    if n_ch > 1:
        data = data.reshape(-1, n_ch).mean(axis=1)
    return data, sr


def to_pcm16(x: np.ndarray) -> np.ndarray:
    """Quantise so that read_wav(write_wav(q)) reproduces q / 32768 exactly."""
    return np.clip(np.round(np.asarray(x, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, x: np.ndarray, sr: int) -> None:
    """Write mono 16-bit PCM."""
    pcm = to_pcm16(x)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(sr))
        f.writeframes(pcm.tobytes())


def write_wav_atomic(path, x: np.ndarray, sr: int) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    write_wav(tmp, x, sr)
    os.replace(tmp, path)


def quantize16(x: np.ndarray) -> np.ndarray:
    """The float signal a 16-bit round trip would return."""
    return to_pcm16(x).astype(np.float64) / 32768.0


def resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    """Polyphase resampling with scipy's default linear-phase Kaiser FIR."""
    if sr_in == sr_out:
        return np.asarray(x, dtype=np.float64)
    g = gcd(int(sr_in), int(sr_out))
    return resample_poly(np.asarray(x, dtype=np.float64), sr_out // g, sr_in // g)
