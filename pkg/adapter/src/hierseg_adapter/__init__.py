"""Reference inference server speaking the hierseg backend wire protocol."""

from .models import BUILTIN_MODELS, load_model
from .server import AdapterConfig, Stream, serve, serve_tcp

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "BUILTIN_MODELS", "Stream", "load_model", "serve", "serve_tcp"]
