"""Bridge from real audio to the diarization pipeline: run a voice
encoder over WAV files and write DVEC1 embedding files."""

__version__ = "0.1.0"

from .export import ExportConfig, export_case  # noqa: F401
