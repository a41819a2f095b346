"""EEG visual representation learning: encoders, metric learning, EEG-image
joint embeddings, EEG-conditioned image synthesis and evaluation."""

from eegvis.errors import ConfigError, DataError, GeometryError, LeakageError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "GeometryError", "LeakageError", "__version__"]
