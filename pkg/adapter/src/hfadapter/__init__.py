"""Log-probability wire-protocol backend over a causal language model."""

from .server import AdapterConfig, AdapterServer, LogProbService, serve
from .tinymodel import build_tiny_model

__version__ = "0.1.0"
