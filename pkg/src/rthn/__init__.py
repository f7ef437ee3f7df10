"""RNN-Transformer hierarchical network for clause-level emotion cause extraction."""

__version__ = "0.1.0"

from .config import ModelConfig, small_config  # noqa: E402

__all__ = ["ModelConfig", "small_config", "__version__"]
