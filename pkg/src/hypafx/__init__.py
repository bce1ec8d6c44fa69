"""Audio-effect chain recognition with hyperbolic (Poincare ball) embeddings."""

from .errors import FormatError, TrainingError, UsageError

__version__ = "0.1.0"

SAMPLE_RATE = 44100
CLIP_SECONDS = 10.0

__all__ = ["FormatError", "TrainingError", "UsageError", "SAMPLE_RATE", "CLIP_SECONDS"]
