"""Continuous speech separation with a speaker inventory built from the mixture itself."""

from .audio import Mask, Spectrogram, StftConfig, Waveform, istft, read_wav, stft, write_wav
from .embedder import Embedding, EmbeddingSequence, chunk_embeddings, embed_frames, mean_pool
from .inventory import (
    SpeakerInventory,
    build_inventory_from_enrollments,
    build_inventory_self,
    kmeans,
    purity,
)
from .metrics import eval_segment, eval_segments, eval_utterances, overlap_ratio, si_sdr, snr
from .pipeline import CssConfig, run_css, stitch_pair
from .selector import score, select, select_top2
from .separator import Affinity, OracleIRM, separate_segment
from .simulator import (
    OverlapPattern,
    SimulatedRecording,
    enrollment,
    generate_recording,
    generate_segment,
)

__version__ = "0.1.0"
