"""toolshim: reference implementation of the tool wire protocol."""

from .server import ShimConfig, ShimServer, serve
from .synth import fnv1a32, synthesize, to_wav_bytes

__version__ = "0.1.0"

__all__ = ["ShimConfig", "ShimServer", "serve", "fnv1a32", "synthesize", "to_wav_bytes"]
