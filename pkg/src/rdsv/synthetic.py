"""Deterministic synthetic corpora: speaker profiles with controlled
pairwise angles, turn-taking timelines, and a content-free embedder that
stands in for a real voice encoder.

All randomness comes from a counter-based SplitMix64 scheme keyed on
(seed, case index, window index), so regeneration is bit-identical
regardless of evaluation order or parallelism. The exact generator is
documented in the README for cross-language reproduction.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .audio import MEL_BINS, MelSpectrogram, VadMap, mel_frame_count
from .embedding import (
    DEFAULT_DIM,
    RATE_MAX,
    RATE_MIN,
    EmbeddingSequence,
    embed,
    unit,
    window_concat_interval,
    write_dvec,
)
from .errors import ConstraintError
from .rttm import Annotation, RttmSegment, serialize_rttm
from .util import atomic_write_text

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Stream tags keep the per-purpose key spaces disjoint.
_STREAM_PROFILE = 0x70
_STREAM_TURNS = 0x71
_STREAM_NOISE = 0x72
_STREAM_SILENCE = 0x73


def _mix(z: int) -> int:
    """SplitMix64 finalizer."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(*parts: int) -> int:
    """Fold integer parts into one 64-bit key (order-sensitive)."""
    h = 0
    for p in parts:
        h = _mix((h + _GOLDEN + (p & _MASK)) & _MASK)
    return h


class SplitMix:
    """Sequential SplitMix64 stream from a derived key."""

    def __init__(self, key: int):
        self.state = key & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        return _mix(self.state)

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, n: int) -> int:
        # Modulo bias is < 2**-50 for any practical n; irrelevant here.
        return self.next_u64() % n

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller (pairs; last value dropped if odd)."""
        out = np.empty(n)
        for i in range(0, n, 2):
            u1 = max(self.uniform(), 2.0**-53)
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
        return out

    def subset(self, n: int, k: int) -> np.ndarray:
        """First k entries of a Fisher-Yates shuffle of range(n)."""
        idx = np.arange(n)
        for i in range(min(k, n - 1)):
            j = i + self.randint(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]


@dataclass(frozen=True)
class SpeakerProfile:
    """A speaker's mean embedding direction and noise concentration."""

    name: str
    mean_direction: np.ndarray
    concentration: float

    def __post_init__(self):
        direction = unit(self.mean_direction)
        if np.any(direction < 0):
            raise ConstraintError(f"profile {self.name}: negative components")
        if not (self.concentration > 0):
            raise ConstraintError(f"profile {self.name}: concentration must be > 0")
        object.__setattr__(self, "mean_direction", direction)


@dataclass(frozen=True)
class CorpusConfig:
    n_speakers: int
    n_referenced: int
    dim: int = DEFAULT_DIM
    rate: float = 5.0
    cases: int = 5
    case_duration_s: float = 240.0
    turn_len_s: tuple[float, float] = (2.0, 6.0)
    seed: int = 1
    kappa: float = math.inf
    min_pairwise_angle_deg: float = 60.0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ConstraintError("need at least 2 speakers")
        if not 0 < self.n_referenced <= self.n_speakers:
            raise ConstraintError("n_referenced must be in (0, n_speakers]")
        if not RATE_MIN <= self.rate <= RATE_MAX:
            raise ConstraintError(f"rate out of bounds [{RATE_MIN:g},{RATE_MAX:g}]: {self.rate}")
        lo, hi = self.turn_len_s
        if not 0 < lo <= hi:
            raise ConstraintError(f"bad turn length range {self.turn_len_s}")
        if self.case_duration_s <= 0:
            raise ConstraintError("case_duration_s must be > 0")
        if not (self.kappa > 0):
            raise ConstraintError("kappa must be > 0 (math.inf for zero noise)")


def _draw_direction(rng: SplitMix, dim: int, support: np.ndarray) -> np.ndarray:
    g = np.abs(rng.gaussians(support.size))
    v = np.zeros(dim)
    v[support] = g
    return unit(v)


def gen_profiles(cfg: CorpusConfig) -> list[SpeakerProfile]:
    """Seeded profile directions in the non-negative orthant with pairwise
    angles >= cfg.min_pairwise_angle_deg.

    Near-orthogonal requests (cos below 0.05) use disjoint coordinate
    blocks, which is the only way to be orthogonal with non-negative
    components; otherwise sparse-support rejection sampling is used with a
    bounded retry budget.
    """
    cos_target = math.cos(math.radians(cfg.min_pairwise_angle_deg))
    names = [f"spk{i:02d}" for i in range(cfg.n_speakers)]
    directions: list[np.ndarray] = []
    if cos_target < 0.05:
        if cfg.n_speakers > cfg.dim:
            raise ConstraintError(
                f"cannot place {cfg.n_speakers} near-orthogonal non-negative "
                f"profiles in dimension {cfg.dim}"
            )
        block = cfg.dim // cfg.n_speakers
        for i in range(cfg.n_speakers):
            rng = SplitMix(derive_key(cfg.seed, _STREAM_PROFILE, i, 0))
            support = np.arange(i * block, (i + 1) * block)
            directions.append(_draw_direction(rng, cfg.dim, support))
    else:
        # Expected cosine of two sparse non-negative draws is roughly
        # support_fraction * 2/pi, so aim comfortably below the target.
        frac = min(1.0, max(2.0 / cfg.dim, 1.1 * cos_target))
        k = max(2, int(round(frac * cfg.dim)))
        budget = 200
        for i in range(cfg.n_speakers):
            for attempt in range(budget):
                rng = SplitMix(derive_key(cfg.seed, _STREAM_PROFILE, i, attempt))
                support = rng.subset(cfg.dim, k)
                cand = _draw_direction(rng, cfg.dim, support)
                cand64 = cand.astype(np.float64)
                if all(float(cand64 @ d) <= cos_target for d in directions):
                    directions.append(cand)
                    break
            else:
                raise ConstraintError(
                    f"could not place profile {i} at >= "
                    f"{cfg.min_pairwise_angle_deg} deg after {budget} attempts"
                )
    return [
        SpeakerProfile(name, direction, cfg.kappa)
        for name, direction in zip(names, directions)
    ]


class SyntheticEmbedder:
    """Content-free embedder: each window's vector is its midpoint
    speaker's mean direction plus seeded Gaussian noise, clamped to the
    non-negative orthant and renormalized.

    Noise is keyed on (case key, window index) only, so evaluation order
    does not matter. The per-component sigma is 1/sqrt(kappa * dim),
    giving the noise vector an expected norm of 1/sqrt(kappa).
    """

    def __init__(
        self,
        profiles: Sequence[SpeakerProfile] | Mapping[str, np.ndarray],
        assign: Callable[[float], str | None],
        rate: float,
        kappa: float,
        case_key: int,
        dim: int,
        vad: VadMap | None = None,
    ):
        if isinstance(profiles, Mapping):
            self._means = {name: unit(v) for name, v in profiles.items()}
        else:
            self._means = {p.name: p.mean_direction for p in profiles}
        self._assign = assign
        self._rate = rate
        self._kappa = kappa
        self._case_key = case_key
        self._vad = vad
        self.dim = dim
        silence_rng = SplitMix(derive_key(case_key, _STREAM_SILENCE))
        self._silence = unit(np.abs(silence_rng.gaussians(dim)))

    def embed_window(self, window: np.ndarray, index: int) -> np.ndarray:
        c0, c1 = window_concat_interval(index, self._rate)
        mid = (c0 + c1) / 2.0
        if self._vad is not None and self._vad.segments:
            mid = self._vad.concat_to_orig(mid)
        speaker = self._assign(mid)
        mean = self._means.get(speaker, self._silence) if speaker else self._silence
        if math.isinf(self._kappa):
            return mean
        sigma = 1.0 / math.sqrt(self._kappa * self.dim)
        rng = SplitMix(derive_key(self._case_key, _STREAM_NOISE, index))
        noisy = mean.astype(np.float64) + sigma * rng.gaussians(self.dim)
        return unit(np.clip(noisy, 0.0, None))


def synthetic_embedder(
    profiles: Sequence[SpeakerProfile],
    assign: Callable[[float], str | None],
    rate: float,
    kappa: float,
    case_key: int,
    dim: int,
    vad: VadMap | None = None,
) -> SyntheticEmbedder:
    return SyntheticEmbedder(profiles, assign, rate, kappa, case_key, dim, vad)


def _turn_timeline(cfg: CorpusConfig, names: Sequence[str], case_index: int):
    """Alternating speaker turns tiling [0, case_duration_s] exactly."""
    rng = SplitMix(derive_key(cfg.seed, _STREAM_TURNS, case_index))
    lo, hi = cfg.turn_len_s
    turns: list[tuple[float, float, str]] = []
    t = 0.0
    prev: int | None = None
    while t < cfg.case_duration_s:
        if prev is None:
            idx = rng.randint(len(names))
        else:
            idx = rng.randint(len(names) - 1)
            if idx >= prev:
                idx += 1
        end = min(t + rng.uniform_in(lo, hi), cfg.case_duration_s)
        if end > t:
            turns.append((t, end, names[idx]))
        t = end
        prev = idx
    return turns


def gen_case(
    cfg: CorpusConfig,
    profiles: Sequence[SpeakerProfile],
    case_index: int,
    file_id: str | None = None,
) -> tuple[EmbeddingSequence, Annotation]:
    """Generate one case: an embedding sequence and its ground truth."""
    file_id = file_id or f"case{case_index:03d}"
    names = [p.name for p in profiles]
    turns = _turn_timeline(cfg, names, case_index)
    annotation = Annotation(
        file_id,
        tuple(RttmSegment(file_id, start, end - start, spk) for start, end, spk in turns),
    )
    starts = [start for start, _, _ in turns]

    def assign(t: float) -> str | None:
        i = bisect.bisect_right(starts, t) - 1
        if i < 0:
            return None
        start, end, spk = turns[i]
        return spk if t < end else None

    vad = VadMap.from_intervals([(0.0, cfg.case_duration_s)])
    n_frames = mel_frame_count(vad.speech_sample_count())
    embedder = SyntheticEmbedder(
        profiles, assign, cfg.rate, cfg.kappa,
        derive_key(cfg.seed, case_index), cfg.dim, vad,
    )
    mel = MelSpectrogram(np.zeros((n_frames, MEL_BINS)))
    seq = embed(mel, cfg.rate, embedder, vad, file_id)
    return seq, annotation


def referenced_names(cfg: CorpusConfig, profiles: Sequence[SpeakerProfile]) -> list[str]:
    return [p.name for p in profiles[: cfg.n_referenced]]


def profiles_for_names(
    names: Sequence[str],
    dim: int,
    seed: int,
    kappa: float = math.inf,
    min_pairwise_angle_deg: float = 60.0,
) -> list[SpeakerProfile]:
    """Profiles for caller-chosen speaker names (sorted before pairing so
    the direction assignment is stable)."""
    cfg = CorpusConfig(
        n_speakers=max(2, len(names)),
        n_referenced=1,
        dim=dim,
        seed=seed,
        kappa=kappa,
        min_pairwise_angle_deg=min_pairwise_angle_deg,
    )
    generated = gen_profiles(cfg)
    return [
        SpeakerProfile(name, profile.mean_direction, profile.concentration)
        for name, profile in zip(sorted(names), generated)
    ]


def write_corpus(
    cfg: CorpusConfig,
    out_dir: str | Path,
    profiles: Sequence[SpeakerProfile] | None = None,
) -> dict:
    """Emit DVEC1 + RTTM pairs, an allowlist of referenced speakers, and a
    manifest. Fully deterministic from cfg (bit-identical on rerun)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = list(profiles) if profiles is not None else gen_profiles(cfg)
    referenced = referenced_names(cfg, profiles)
    case_files = []
    for case_index in range(cfg.cases):
        seq, ann = gen_case(cfg, profiles, case_index)
        write_dvec(seq, out_dir / f"{seq.file_id}.dvec")
        atomic_write_text(out_dir / f"{ann.file_id}.rttm", serialize_rttm(ann))
        case_files.append(seq.file_id)
    atomic_write_text(
        out_dir / "allowlist.txt",
        "# speakers covered by the reference library\n"
        + "".join(name + "\n" for name in referenced),
    )
    config = asdict(cfg)
    config["kappa"] = "inf" if math.isinf(cfg.kappa) else cfg.kappa
    manifest = {
        "speakers": [p.name for p in profiles],
        "referenced": referenced,
        "unreferenced": [p.name for p in profiles[cfg.n_referenced :]],
        "seed": cfg.seed,
        "cases": case_files,
        "config": config,
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
