"""Export: WAV -> frontend (VAD, concatenation, mel) -> rate-controlled
windows -> encoder -> renormalized DVEC1 file.

Windowing follows the pipeline's semantics exactly: round(100 / rate) mel
frames per window, rates in [0.625, 100], trailing partial window dropped.
The DVEC1 header carries this frontend's true VAD map, and the window
count is trimmed to the reader's count formula so every exported file
validates downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dvec import (
    RATE_MAX,
    RATE_MIN,
    SAMPLE_RATE,
    expected_window_count,
    window_frames_for_rate,
    write_dvec,
)
from .encoders import load_encoder
from .frontend import detect_speech, load_audio, mel_frames


@dataclass(frozen=True)
class ExportConfig:
    wavs: tuple[str, ...]
    rate: float
    out_dir: str
    model: str
    dim: int = 256

    def __post_init__(self):
        if not RATE_MIN <= self.rate <= RATE_MAX:
            raise ValueError(f"rate out of bounds [{RATE_MIN:g},{RATE_MAX:g}]: {self.rate}")
        if not self.wavs:
            raise ValueError("no input WAVs")


def export_case(wav: str | Path, rate: float, out: str | Path, encoder, dim: int = 256) -> int:
    """Export one WAV to a DVEC1 file; returns the vector count."""
    samples = load_audio(wav)
    regions = detect_speech(samples)
    vad = [(a / SAMPLE_RATE, b / SAMPLE_RATE) for a, b in regions]
    speech = (
        np.concatenate([samples[a:b] for a, b in regions])
        if regions
        else np.zeros(0)
    )
    mel = mel_frames(speech)
    wf = window_frames_for_rate(rate)
    expected = expected_window_count(vad, rate)
    available = mel.shape[0] // wf
    if available < expected:
        raise RuntimeError(
            f"{wav}: frontend produced {available} windows, header implies {expected}"
        )
    if expected == 0:
        vectors = np.zeros((0, dim), dtype=np.float32)
    else:
        windows = mel[: expected * wf].reshape(expected, wf, mel.shape[1])
        raw = np.asarray(encoder.embed_windows(windows), dtype=np.float64)
        norms = np.sqrt((raw * raw).sum(axis=1, keepdims=True))
        if np.any(norms == 0.0):
            raise RuntimeError(f"{wav}: encoder produced a zero embedding")
        vectors = (raw / norms).astype(np.float32)
    file_id = Path(wav).stem
    write_dvec(out, file_id, rate, vectors, vad)
    return int(vectors.shape[0])


def run_export(cfg: ExportConfig) -> list[tuple[str, int]]:
    encoder = load_encoder(cfg.model, cfg.dim)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for wav in cfg.wavs:
        out = out_dir / (Path(wav).stem + ".dvec")
        results.append((str(out), export_case(wav, cfg.rate, out, encoder, cfg.dim)))
    return results
