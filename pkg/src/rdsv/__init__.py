"""Reference-dependent speaker diarization: build a library of speaker
embeddings from annotated audio, label unseen recordings by cosine
affinity with open-set rejection, and score the result with DER."""

__version__ = "0.1.0"

from .audio import AudioBuffer, MelSpectrogram, VadConfig, VadMap  # noqa: F401
from .diarizer import DiarizerConfig, diarize  # noqa: F401
from .embedding import EmbeddingSequence, embed, read_dvec, window_plan, write_dvec  # noqa: F401
from .errors import ConstraintError, FormatError, RdsvError  # noqa: F401
from .metrics import AggregateReport, DerReport, aggregate, der  # noqa: F401
from .ral import RalConfig, ReferenceAudioLibrary, build_ral, read_ral, write_ral  # noqa: F401
from .rttm import Annotation, RttmSegment, parse_rttm, relabel_unreferenced, serialize_rttm  # noqa: F401
