"""16 kHz audio frontend: WAV loading, energy-based voice activity
detection, speech concatenation, and the 40-bin mel spectrogram fed to
the embedder.

Everything here is deterministic; there is no resampling and no neural
VAD. Out-of-spec sample rates are rejected instead of converted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConstraintError, FormatError

SAMPLE_RATE = 16000
MEL_BINS = 40
WINDOW_MS = 25
HOP_MS = 10
FMAX_HZ = 8000.0


class WavFormatError(FormatError):
    """Unsupported codec/width, or not a RIFF WAV at all."""


class SampleRateError(FormatError):
    """WAV sample rate differs from the required 16 kHz."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio, amplitudes in [-1, 1], fixed 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise ConstraintError(f"sample_rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ConstraintError("samples must be one-dimensional")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ConstraintError("samples contain non-finite values")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class VadMap:
    """Speech segments in original time plus their offsets in concatenated
    time. ``concat_start`` of segment k is exactly the sum of the durations
    of segments 0..k-1 (left-to-right float accumulation)."""

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        acc = 0.0
        prev_end = -np.inf
        for orig_start, orig_end, concat_start in self.segments:
            if orig_end <= orig_start:
                raise ConstraintError(f"empty VAD segment [{orig_start}, {orig_end}]")
            if orig_start < prev_end:
                raise ConstraintError("VAD segments overlap or are unsorted")
            if concat_start != acc:
                raise ConstraintError(
                    f"concat_start {concat_start!r} inconsistent, expected {acc!r}"
                )
            acc += orig_end - orig_start
            prev_end = orig_end
        object.__setattr__(self, "segments", tuple(self.segments))

    @classmethod
    def from_intervals(cls, intervals: list[tuple[float, float]]) -> "VadMap":
        segs = []
        acc = 0.0
        for start, end in intervals:
            segs.append((start, end, acc))
            acc += end - start
        return cls(tuple(segs))

    @property
    def total_speech(self) -> float:
        if not self.segments:
            return 0.0
        start, end, concat = self.segments[-1]
        return concat + (end - start)

    def speech_sample_count(self, sample_rate: int = SAMPLE_RATE) -> int:
        """Samples after concatenation; each segment rounds independently."""
        return int(sum(round((e - s) * sample_rate) for s, e, _ in self.segments))

    def concat_to_orig(self, t: float) -> float:
        """Map concatenated time to original time (segment starts inclusive)."""
        return self._map(t, end_side=False)

    def concat_to_orig_end(self, t: float) -> float:
        """Map an interval *end* point: an exact segment boundary resolves to
        the end of the earlier segment rather than the start of the next."""
        return self._map(t, end_side=True)

    def _map(self, t: float, end_side: bool) -> float:
        if not self.segments:
            raise ConstraintError("empty VadMap has no time mapping")
        lo, hi = 0, len(self.segments) - 1
        while lo < hi:  # last segment with concat_start < t (or <= for starts)
            mid = (lo + hi + 1) // 2
            cs = self.segments[mid][2]
            if cs < t or (not end_side and cs <= t):
                lo = mid
            else:
                hi = mid - 1
        orig_start, orig_end, concat_start = self.segments[lo]
        return min(orig_start + (t - concat_start), orig_end)


@dataclass(frozen=True)
class VadConfig:
    """Energy VAD parameters. A frame is speech when its RMS exceeds
    ``energy_ratio`` times the 95th-percentile frame RMS."""

    frame_ms: int = 30
    energy_ratio: float = 0.05
    smooth_frames: int = 7
    min_speech_ms: float = 90.0
    max_gap_ms: float = 300.0

    def __post_init__(self):
        if self.frame_ms not in (10, 20, 30):
            raise ConstraintError(f"frame_ms must be 10, 20 or 30, got {self.frame_ms}")
        if not 0.0 < self.energy_ratio < 1.0:
            raise ConstraintError(f"energy_ratio must be in (0, 1), got {self.energy_ratio}")
        if self.smooth_frames < 1:
            raise ConstraintError("smooth_frames must be >= 1")


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-compressed mel energies, [n_frames x 40], 25 ms window / 10 ms hop."""

    frames: np.ndarray
    window_ms: int = WINDOW_MS
    hop_ms: int = HOP_MS

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != MEL_BINS:
            raise ConstraintError(f"mel frames must be [n x {MEL_BINS}], got {frames.shape}")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def load_wav(path: str | Path) -> AudioBuffer:
    """Load a PCM WAV (16-bit int or 32-bit float, mono or stereo).

    Stereo channels are averaged. The file must already be at 16 kHz.
    """
    from scipy.io import wavfile

    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise WavFormatError(f"{path}: unreadable WAV ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise SampleRateError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioBuffer(samples)


def detect_voice(buffer: AudioBuffer, cfg: VadConfig = VadConfig()) -> VadMap:
    """Deterministic energy VAD.

    Per-frame RMS is thresholded against cfg.energy_ratio x the 95th
    percentile, the binary mask is smoothed by a centered moving average
    (>= 0.5 counts as speech), short speech runs are dropped, then short
    gaps are bridged. The trailing partial frame, if any, is scored too and
    its end is the buffer end.
    """
    n = buffer.samples.size
    if n == 0:
        return VadMap(())
    frame_len = cfg.frame_ms * SAMPLE_RATE // 1000
    n_frames = (n + frame_len - 1) // frame_len
    bounds = [(i * frame_len, min((i + 1) * frame_len, n)) for i in range(n_frames)]
    rms = np.array([np.sqrt(np.mean(buffer.samples[a:b] ** 2)) for a, b in bounds])
    threshold = cfg.energy_ratio * np.percentile(rms, 95)
    mask = (rms > threshold).astype(np.float64)
    if cfg.smooth_frames > 1:
        kernel = np.ones(cfg.smooth_frames) / cfg.smooth_frames
        mask = np.convolve(mask, kernel, mode="same")
    speech = mask >= 0.5

    frame_s = cfg.frame_ms / 1000.0
    runs = _runs(speech)
    runs = [(a, b) for a, b in runs if (b - a) * cfg.frame_ms >= cfg.min_speech_ms]
    bridged: list[list[int]] = []
    for a, b in runs:
        if bridged and (a - bridged[-1][1]) * cfg.frame_ms < cfg.max_gap_ms:
            bridged[-1][1] = b
        else:
            bridged.append([a, b])

    duration = buffer.duration
    intervals = [(a * frame_s, min(b * frame_s, duration)) for a, b in bridged]
    return VadMap.from_intervals(intervals)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, end) index runs where mask is True."""
    out = []
    start = None
    for i, val in enumerate(mask):
        if val and start is None:
            start = i
        elif not val and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(mask)))
    return out


def concatenate_speech(buffer: AudioBuffer, vad: VadMap) -> AudioBuffer:
    """Drop non-speech and splice the VAD segments into one sequence.

    Each segment contributes round(duration * 16000) samples starting at
    round(orig_start * 16000); retained samples are copied bit-exactly.
    """
    pieces = []
    n = buffer.samples.size
    for orig_start, orig_end, _ in vad.segments:
        start = int(round(orig_start * SAMPLE_RATE))
        count = int(round((orig_end - orig_start) * SAMPLE_RATE))
        if start < 0 or start + count > n:
            raise ConstraintError(
                f"VAD segment [{orig_start}, {orig_end}] outside buffer of {n} samples"
            )
        pieces.append(buffer.samples[start : start + count])
    if not pieces:
        return AudioBuffer(np.zeros(0))
    return AudioBuffer(np.concatenate(pieces))


def mel_frame_count(n_samples: int) -> int:
    """Frames produced by a 25 ms window / 10 ms hop over n_samples (0 if short)."""
    window = WINDOW_MS * SAMPLE_RATE // 1000
    hop = HOP_MS * SAMPLE_RATE // 1000
    if n_samples < window:
        return 0
    return 1 + (n_samples - window) // hop


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers() -> np.ndarray:
    """Center frequencies (Hz) of the 40 triangular filters."""
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(FMAX_HZ), MEL_BINS + 2)
    return _mel_to_hz(mel_points)[1:-1]


def _mel_filterbank(n_fft: int) -> np.ndarray:
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(FMAX_HZ), MEL_BINS + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / SAMPLE_RATE)
    bank = np.zeros((MEL_BINS, bin_freqs.size))
    for k in range(MEL_BINS):
        left, center, right = hz_points[k], hz_points[k + 1], hz_points[k + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[k] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def mel_spectrogram(buffer: AudioBuffer) -> MelSpectrogram:
    """40-bin mel spectrogram: 25 ms Hann window, 10 ms hop, magnitude
    STFT, triangular filters on the HTK mel scale over 0-8000 Hz, then
    log(1 + x) compression."""
    window = WINDOW_MS * SAMPLE_RATE // 1000
    hop = HOP_MS * SAMPLE_RATE // 1000
    n = buffer.samples.size
    if n < window:
        raise ConstraintError(f"buffer too short for one {WINDOW_MS} ms window ({n} samples)")
    n_frames = mel_frame_count(n)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)
    frames = buffer.samples[idx] * hann
    magnitude = np.abs(np.fft.rfft(frames, n=window, axis=1))
    energies = magnitude @ _mel_filterbank(window).T
    return MelSpectrogram(np.log1p(energies))
