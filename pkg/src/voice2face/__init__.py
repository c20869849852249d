"""Voice-to-face synthesis: adversarially trained face generation from
speaker embeddings, with quantitative cross-modal evaluation."""

__version__ = "0.1.0"

from voice2face.backend import backend_name

__all__ = ["backend_name", "__version__"]
