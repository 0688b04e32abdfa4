__all__ = [
    "main",
    "resolve_config",
    "PipelineConfig",
]

__version__ = "0.1.0"

from .config import PipelineConfig, resolve_config
from .cli import main
