"""Scene-aware retrieval-augmented generation for long videos.

The engine segments timestamped transcripts into narrative scenes through
an LLM loop with deterministic refinement, grounds each scene into an
incremental knowledge graph plus an exact vector index, and answers
queries with token-budgeted scene retrieval.
"""

__version__ = "0.1.0"

from .config import EngineConfig, ProviderConfig, load_config
from .errors import (
    DataIntegrityError,
    EngineError,
    ExtractionError,
    InvalidInputError,
    PipelineError,
    PrerequisiteError,
    ProtocolError,
    StoreNotFoundError,
    StoreVersionError,
    TransportError,
)
from .ingest import (
    ChunkRange,
    SilenceInterval,
    TimedUtterance,
    Transcript,
    detect_silences,
    make_chunk_ranges,
    slice_transcript,
    transcribe,
)
from .refine import (
    SILENT_MARKER,
    Scene,
    SceneSet,
    align_boundaries,
    fill_time_gaps,
    merge_short_scenes,
    stitch_chunks,
)
from .segmenter import (
    FaultKind,
    RawScene,
    SegmentationFault,
    build_segmentation_prompt,
    check_time_ranges,
    choose_fix_prompt,
    parse_segmentation_response,
    segment_chunk,
)

__all__ = [name for name in dir() if not name.startswith("_")]
