"""The exporter's audio frontend: load any PCM WAV, resample to 16 kHz,
detect voice activity at sample granularity, and compute the 40-bin mel
features the encoders consume.

VAD boundaries land on exact sample indices so the DVEC1 header's segment
durations reproduce the concatenated sample count bit-for-bit under the
reader's per-segment rounding.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
MEL_BINS = 40
WINDOW = 400  # 25 ms at 16 kHz
HOP = 160  # 10 ms

VAD_FRAME = 320  # 20 ms
VAD_RATIO = 0.08  # of the 95th-percentile frame RMS
VAD_MIN_SPEECH_FRAMES = 5  # 100 ms
VAD_MAX_GAP_FRAMES = 15  # 300 ms


class AudioError(ValueError):
    """Unreadable or unsupported input audio."""


def load_audio(path: str | Path) -> np.ndarray:
    """Mono float64 samples in [-1, 1] at 16 kHz (resampled if needed)."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise AudioError(f"{path}: unreadable WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if rate != SAMPLE_RATE:
        from math import gcd

        g = gcd(int(rate), SAMPLE_RATE)
        samples = resample_poly(samples, SAMPLE_RATE // g, int(rate) // g)
    return np.clip(samples, -1.0, 1.0)


def detect_speech(samples: np.ndarray) -> list[tuple[int, int]]:
    """Speech regions as [start, end) sample index pairs."""
    n = samples.size
    if n == 0:
        return []
    n_frames = (n + VAD_FRAME - 1) // VAD_FRAME
    rms = np.array([
        np.sqrt(np.mean(samples[i * VAD_FRAME : min((i + 1) * VAD_FRAME, n)] ** 2))
        for i in range(n_frames)
    ])
    threshold = VAD_RATIO * np.percentile(rms, 95)
    speech = rms > threshold

    runs: list[list[int]] = []
    for i, flag in enumerate(speech):
        if flag and runs and runs[-1][1] == i:
            runs[-1][1] = i + 1
        elif flag:
            runs.append([i, i + 1])
    runs = [r for r in runs if r[1] - r[0] >= VAD_MIN_SPEECH_FRAMES]
    bridged: list[list[int]] = []
    for a, b in runs:
        if bridged and a - bridged[-1][1] < VAD_MAX_GAP_FRAMES:
            bridged[-1][1] = b
        else:
            bridged.append([a, b])
    return [(a * VAD_FRAME, min(b * VAD_FRAME, n)) for a, b in bridged]


def _filterbank() -> np.ndarray:
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(8000.0), MEL_BINS + 2))
    freqs = np.fft.rfftfreq(WINDOW, d=1.0 / SAMPLE_RATE)
    bank = np.zeros((MEL_BINS, freqs.size))
    for k in range(MEL_BINS):
        left, center, right = points[k], points[k + 1], points[k + 2]
        bank[k] = np.clip(
            np.minimum((freqs - left) / (center - left), (right - freqs) / (right - center)),
            0.0,
            None,
        )
    return bank


def mel_frames(samples: np.ndarray) -> np.ndarray:
    """[n_frames x 40] power-mel features of the concatenated speech."""
    n = samples.size
    if n < WINDOW:
        return np.zeros((0, MEL_BINS))
    n_frames = 1 + (n - WINDOW) // HOP
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(n_frames)[:, None]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)
    spec = np.abs(np.fft.rfft(samples[idx] * hann, n=WINDOW, axis=1)) ** 2
    return spec @ _filterbank().T
