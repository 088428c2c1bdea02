"""`export --wav a.wav b.wav --rate 5 --out dir --model lstm:weights.pt`"""

from __future__ import annotations

import argparse
import sys

from .encoders import ModelLoadError
from .export import ExportConfig, run_export
from .frontend import AudioError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvec-export",
        description="Run a voice encoder over WAV files and write DVEC1 embeddings",
    )
    parser.add_argument("--wav", nargs="+", required=True, help="input WAV file(s)")
    parser.add_argument("--rate", type=float, default=5.0,
                        help="embedding windows per second of speech")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--model", default="lstm:pretrained.pt",
                        help="encoder spec: lstm:<checkpoint.pt> or proj:<seed>")
    parser.add_argument("--dim", type=int, default=256)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExportConfig(tuple(args.wav), args.rate, args.out, args.model, args.dim)
        for path, count in run_export(cfg):
            print(f"wrote {path} ({count} vectors)")
        return 0
    except (FileNotFoundError, AudioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ModelLoadError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
