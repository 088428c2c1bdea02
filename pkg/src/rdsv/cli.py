"""Command-line pipeline: embed, build-ral, diarize, eval, tune,
simulate, probe. Stages hand off through files (DVEC1, RAL1, RTTM) so the
reference set can be processed once and reused, and so real embeddings
from an external encoder can replace the `embed` stage.

Exit codes: 0 success, 2 usage, 3 data/format error, 4 constraint error.
Every produced output gets a small JSON run manifest next to it.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audio import VadConfig, concatenate_speech, detect_voice, load_wav, mel_spectrogram
from .analysis import (
    DEFAULT_PROBE_RATES,
    DEFAULT_PROBE_THRESHOLDS,
    DEFAULT_SCORE_GRID,
    DEFAULT_SIM_GRID,
    grid_search,
    labeled_windows,
    probe,
)
from .diarizer import DiarizerConfig, UNKNOWN_RULES, diarize, segment_dump
from .embedding import (
    EmbeddingSequence,
    embed,
    read_dvec,
    window_frames_for_rate,
    write_dvec,
)
from .errors import ConstraintError, FormatError, RdsvError
from .metrics import aggregate, der
from .ral import RalConfig, build_ral, load_allowlist, read_ral, write_ral
from .rttm import (
    Annotation,
    annotations_by_file,
    parse_rttm_file,
    relabel_unreferenced,
    serialize_rttm,
)
from .synthetic import CorpusConfig, SyntheticEmbedder, derive_key, profiles_for_names, write_corpus
from .util import atomic_write_text, format_table


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("RDSV_JOBS", "1")))
    except ValueError:
        return 1


def _json_safe(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _write_manifest(path: Path, args: argparse.Namespace, inputs, outputs, started: float):
    config = {
        k: _json_safe(v)
        for k, v in vars(args).items()
        if k not in ("func", "command") and not k.startswith("_")
    }
    manifest = {
        "command": args.command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_time_s": round(time.monotonic() - started, 6),
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_annotations(path: Path) -> dict[str, Annotation]:
    """*.rttm from a directory, or a single (possibly multi-case) file."""
    if path.is_dir():
        annotations = []
        for rttm in sorted(path.glob("*.rttm")):
            annotations.extend(parse_rttm_file(rttm))
    else:
        annotations = parse_rttm_file(path)
    return annotations_by_file(annotations)


def _load_sequences(path: Path) -> list[EmbeddingSequence]:
    if path.is_dir():
        files = sorted(path.glob("*.dvec"))
        if not files:
            raise FormatError(f"{path}: no .dvec files")
        return [read_dvec(f) for f in files]
    return [read_dvec(path)]


def _pair_by_file_id(
    sequences: list[EmbeddingSequence], annotations: dict[str, Annotation]
) -> list[tuple[EmbeddingSequence, Annotation]]:
    missing = [seq.file_id for seq in sequences if seq.file_id not in annotations]
    if missing:
        raise FormatError(f"no annotation for file_id(s): {', '.join(sorted(missing))}")
    return [(seq, annotations[seq.file_id]) for seq in sequences]


def _fmt_rate(rate: float) -> str:
    return f"{rate:g}"


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad comma-separated float list: {text!r}")


# ---------------------------------------------------------------- embed


def cmd_embed(args) -> int:
    started = time.monotonic()
    window_frames_for_rate(args.rate)  # reject bad rates before any I/O
    vad_cfg = VadConfig(
        frame_ms=args.vad_frame_ms,
        energy_ratio=args.vad_energy_ratio,
        smooth_frames=args.vad_smooth_frames,
        min_speech_ms=args.vad_min_speech_ms,
        max_gap_ms=args.vad_max_gap_ms,
    )
    buffer = load_wav(args.wav)
    vad = detect_voice(buffer, vad_cfg)
    mel = mel_spectrogram(concatenate_speech(buffer, vad)) if vad.segments else None

    file_id = args.file_id or Path(args.wav).stem
    if args.rttm:
        annotations = _load_annotations(Path(args.rttm))
        annotation = annotations.get(file_id)
        if annotation is None:
            raise FormatError(f"{args.rttm}: no annotation for file_id {file_id!r}")
        names = sorted(annotation.speakers())
        assign = annotation.speaker_at
    else:
        names = ["speaker0"]
        assign = lambda t: "speaker0"
    profiles = profiles_for_names(names, args.dim, args.profile_seed, args.kappa)
    embedder = SyntheticEmbedder(
        profiles, assign, args.rate, args.kappa,
        derive_key(args.profile_seed, 0), args.dim, vad,
    )
    if mel is None:  # no speech found: a valid, empty sequence
        seq = EmbeddingSequence(file_id, args.rate, args.dim, np.zeros((0, args.dim)), vad)
    else:
        seq = embed(mel, args.rate, embedder, vad, file_id)
    out = Path(args.out)
    write_dvec(seq, out)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), args,
                    [args.wav], [out], started)
    print(f"wrote {out} ({len(seq)} vectors, rate {_fmt_rate(args.rate)})")
    return 0


# ------------------------------------------------------------ build-ral


def cmd_build_ral(args) -> int:
    started = time.monotonic()
    allowlist = load_allowlist(args.allowlist) if args.allowlist else None
    if allowlist is not None and not allowlist:
        raise ConstraintError(f"{args.allowlist}: allowlist is empty")
    cfg = RalConfig(
        min_audio_len=args.min_audio_len,
        min_ref_count=args.min_ref_count,
        allowlist=allowlist,
    )
    sequences = _load_sequences(Path(args.dvec_dir))
    annotations = _load_annotations(Path(args.rttm))
    lib = build_ral(_pair_by_file_id(sequences, annotations), cfg)
    out = Path(args.out)
    write_ral(lib, out)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), args,
                    [args.dvec_dir, args.rttm], [out], started)
    counts = ", ".join(f"{s}:{lib.reference_count(s)}" for s in lib.speakers)
    print(f"wrote {out} ({len(lib.entries)} speakers; refs {counts})")
    return 0


# -------------------------------------------------------------- diarize


def cmd_diarize(args) -> int:
    started = time.monotonic()
    cfg = DiarizerConfig(
        score_thresh=args.score_thresh,
        sim_thresh=args.sim_thresh,
        unk_label=args.unk_label,
        min_segment_s=args.min_segment_s,
        unknown_rule=args.unknown_rule,
    )
    lib = read_ral(args.ral)
    outputs = []
    out = Path(args.out)
    sequences = _load_sequences(Path(args.dvec))
    multi = len(sequences) > 1 or out.is_dir()
    if multi:
        out.mkdir(parents=True, exist_ok=True)
    if args.jobs > 1 and len(sequences) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            hypotheses = list(pool.map(lambda s: diarize(lib, s, cfg), sequences))
    else:
        hypotheses = [diarize(lib, seq, cfg) for seq in sequences]
    for seq, hypothesis in zip(sequences, hypotheses):
        target = out / f"{seq.file_id}.rttm" if multi else out
        atomic_write_text(target, serialize_rttm(hypothesis))
        outputs.append(target)
        if args.dump:
            dump_dir = Path(args.dump)
            dump_dir.mkdir(parents=True, exist_ok=True)
            atomic_write_text(dump_dir / f"{seq.file_id}.segments.txt", segment_dump(hypothesis))
    manifest_path = (out / "manifest.json") if multi else out.with_suffix(out.suffix + ".manifest.json")
    _write_manifest(manifest_path, args, [args.ral, args.dvec], outputs, started)
    print(f"diarized {len(sequences)} case(s) -> {out}")
    return 0


# ----------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    started = time.monotonic()
    references = _load_annotations(Path(args.ref))
    hypotheses = _load_annotations(Path(args.hyp))
    roster = load_allowlist(args.roster) if args.roster else None

    missing = sorted(set(references) - set(hypotheses))
    if missing:
        raise FormatError(f"missing hypothesis for file_id(s): {', '.join(missing)}")

    reports, durations, rows = {}, [], []
    for file_id in sorted(references):
        reference = references[file_id]
        if roster is not None:
            reference = relabel_unreferenced(reference, set(roster), args.unk_label)
        report = der(reference, hypotheses[file_id], args.collar)
        reports[file_id] = report
        durations.append((reference.extent(), reference.speech_duration()))
        rows.append([
            file_id,
            f"{report.total_ref:.2f}",
            f"{report.missed:.2f}",
            f"{report.false_alarm:.2f}",
            f"{report.confusion:.2f}",
            f"{report.der * 100:.2f}%",
        ])
    agg = aggregate(list(reports.values()), durations)
    payload = {
        "cases": {fid: rep.to_json() for fid, rep in reports.items()},
        "aggregate": agg.to_json(),
    }
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(format_table(
            ["case", "total_ref_s", "missed_s", "false_alarm_s", "confusion_s", "DER"],
            rows,
        ), end="")
        print(
            f"mean DER {agg.mean_der * 100:.2f}%  std {agg.std_der * 100:.2f}%  "
            f"max {agg.max_der * 100:.2f}%  (n={agg.case_count})"
        )
    if args.out:
        out = Path(args.out)
        atomic_write_text(out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), args,
                        [args.ref, args.hyp], [out], started)
    return 0


# ----------------------------------------------------------------- tune


def cmd_tune(args) -> int:
    started = time.monotonic()
    lib = read_ral(args.ral)
    sequences = _load_sequences(Path(args.dev_dvec_dir))
    annotations = _load_annotations(Path(args.dev_rttm))
    dev = _pair_by_file_id(sequences, annotations)
    result = grid_search(
        dev, lib,
        score_grid=args.score_grid,
        sim_grid=args.sim_grid,
        collar=args.collar,
        unknown_rule=args.unknown_rule,
        unk_label=args.unk_label,
        jobs=args.jobs,
    )
    payload = {
        "grid": [
            {
                "score_thresh": c.score_thresh,
                "sim_thresh": c.sim_thresh,
                "mean_der": c.mean_der,
                "std_der": c.std_der,
            }
            for c in result.grid
        ],
        "best": {
            "score_thresh": result.best.score_thresh,
            "sim_thresh": result.best.sim_thresh,
            "mean_der": result.best.mean_der,
            "std_der": result.best.std_der,
        },
    }
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        rows = [
            [f"{c.score_thresh:g}", f"{c.sim_thresh:g}",
             f"{c.mean_der * 100:.2f}%", f"{c.std_der * 100:.2f}%"]
            for c in result.grid
        ]
        print(format_table(["score_thresh", "sim_thresh", "mean_DER", "std_DER"], rows), end="")
        print(
            f"best: score_thresh={result.best.score_thresh:g} "
            f"sim_thresh={result.best.sim_thresh:g} "
            f"mean DER {result.best.mean_der * 100:.2f}%"
        )
    if args.out:
        out = Path(args.out)
        atomic_write_text(out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
        _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), args,
                        [args.dev_dvec_dir, args.dev_rttm, args.ral], [out], started)
    return 0


# ------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    started = time.monotonic()
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    kappa = raw.get("kappa", "inf")
    raw["kappa"] = math.inf if kappa in ("inf", None) else float(kappa)
    if "turn_len_s" in raw:
        raw["turn_len_s"] = tuple(raw["turn_len_s"])
    cfg = CorpusConfig(**raw)
    out_dir = Path(args.out_dir)
    manifest = write_corpus(cfg, out_dir)
    # Fold the run info into the corpus manifest.
    config = {k: _json_safe(v) for k, v in vars(args).items() if k not in ("func", "command")}
    manifest["run"] = {
        "command": args.command,
        "config": config,
        "version": __version__,
        "wall_time_s": round(time.monotonic() - started, 6),
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"simulated {cfg.cases} case(s) -> {out_dir}")
    return 0


# ---------------------------------------------------------------- probe


def cmd_probe(args) -> int:
    def corpus_dir(base: Path, rate: float) -> Path:
        sub = base / f"rate_{_fmt_rate(rate)}"
        if sub.is_dir():
            return sub
        if len(args.rates) == 1 and any(base.glob("*.dvec")):
            return base
        raise FormatError(f"{base}: expected per-rate subdirectory {sub.name}")

    ral_base, dev_base = Path(args.ral_set), Path(args.dev_set)
    data_by_rate = {}
    for rate in args.rates:
        ral_dir, dev_dir = corpus_dir(ral_base, rate), corpus_dir(dev_base, rate)
        if args.allowlist:
            judges = load_allowlist(args.allowlist)
        elif (ral_dir / "allowlist.txt").exists():
            judges = load_allowlist(ral_dir / "allowlist.txt")
        elif (ral_base / "allowlist.txt").exists():
            judges = load_allowlist(ral_base / "allowlist.txt")
        else:
            raise FormatError(f"no allowlist for rate {rate}; pass --allowlist")

        def gather(directory: Path, judges_only: bool):
            pairs = _pair_by_file_id(_load_sequences(directory), _load_annotations(directory))
            xs, ys = [], []
            for seq, ann in pairs:
                if abs(seq.rate - rate) > 1e-9:
                    raise ConstraintError(
                        f"{directory}: {seq.file_id} has rate {seq.rate}, expected {rate}"
                    )
                X, y = labeled_windows(seq, ann, judges, judges_only=judges_only)
                xs.append(X)
                ys.extend(y)
            return np.vstack(xs), ys

        data_by_rate[rate] = (gather(ral_dir, True), gather(dev_dir, False))

    result = probe(data_by_rate, args.prob_thresholds)
    payload = {
        "cells": [
            {
                "rate": c.rate,
                "threshold": c.threshold,
                "accuracy": c.accuracy,
                "judge_recall": c.judge_recall,
            }
            for c in result.cells
        ]
    }
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        rows = [
            [f"{c.rate:g}", f"{c.threshold:g}", f"{c.accuracy:.4f}", f"{c.judge_recall:.4f}"]
            for c in result.cells
        ]
        print(format_table(["rate", "threshold", "accuracy", "judge_recall"], rows), end="")
    return 0


# ----------------------------------------------------------- arg wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdsv",
        description="Reference-dependent speaker diarization pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="WAV -> VAD -> mel -> synthetic embedding -> DVEC1")
    p.add_argument("--wav", required=True)
    p.add_argument("--rate", type=float, default=5.0, help="windows per second of speech")
    p.add_argument("--out", required=True)
    p.add_argument("--file-id", default=None, help="defaults to the WAV stem")
    p.add_argument("--rttm", default=None,
                   help="annotation that drives the synthetic embedder's speaker assignment")
    p.add_argument("--profile-seed", type=int, default=1)
    p.add_argument("--kappa", type=float, default=math.inf,
                   help="synthetic noise concentration (inf = none)")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--vad-frame-ms", type=int, default=30, choices=(10, 20, 30))
    p.add_argument("--vad-energy-ratio", type=float, default=0.05)
    p.add_argument("--vad-smooth-frames", type=int, default=7)
    p.add_argument("--vad-min-speech-ms", type=float, default=90.0)
    p.add_argument("--vad-max-gap-ms", type=float, default=300.0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("build-ral", help="build the reference library from DVEC1 + RTTM")
    p.add_argument("--dvec-dir", required=True)
    p.add_argument("--rttm", required=True)
    p.add_argument("--allowlist", default=None, help="speaker roster file (one name per line)")
    p.add_argument("--min-audio-len", type=float, default=1.0)
    p.add_argument("--min-ref-count", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_ral)

    p = sub.add_parser("diarize", help="label a case against the reference library")
    p.add_argument("--ral", required=True)
    p.add_argument("--dvec", required=True, help="a .dvec file or a directory of them")
    p.add_argument("--score-thresh", type=float, default=0.85)
    p.add_argument("--sim-thresh", type=float, default=0.1)
    p.add_argument("--unknown-rule", choices=UNKNOWN_RULES, default="paper_literal")
    p.add_argument("--unk-label", default="UNK")
    p.add_argument("--min-segment-s", type=float, default=0.0)
    p.add_argument("--dump", default=None, help="also write plain-text segment dumps here")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--out", required=True, help="output RTTM file (or directory for many cases)")
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("eval", help="score hypothesis RTTM against reference RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--roster", default=None,
                   help="relabel reference speakers outside this roster to the unknown label")
    p.add_argument("--collar", type=float, default=0.5, help="total collar in seconds")
    p.add_argument("--unk-label", default="UNK")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None, help="also save the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune", help="grid search diarizer thresholds on a dev set")
    p.add_argument("--dev-dvec-dir", required=True)
    p.add_argument("--dev-rttm", required=True)
    p.add_argument("--ral", required=True)
    p.add_argument("--score-grid", type=_float_list, default=list(DEFAULT_SCORE_GRID))
    p.add_argument("--sim-grid", type=_float_list, default=list(DEFAULT_SIM_GRID))
    p.add_argument("--collar", type=float, default=0.5)
    p.add_argument("--unknown-rule", choices=UNKNOWN_RULES, default="paper_literal")
    p.add_argument("--unk-label", default="UNK")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="generate a synthetic corpus")
    p.add_argument("--config", required=True, help="JSON corpus config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe", help="embedding separability probe over rates and thresholds")
    p.add_argument("--ral-set", required=True,
                   help="reference corpora; per-rate subdirectories rate_<r>")
    p.add_argument("--dev-set", required=True)
    p.add_argument("--rates", type=_float_list, default=list(DEFAULT_PROBE_RATES))
    p.add_argument("--prob-thresholds", type=_float_list, default=list(DEFAULT_PROBE_THRESHOLDS))
    p.add_argument("--allowlist", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except RdsvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
