"""Array-aware binaural reproduction from wearable microphone arrays.

Submodules are imported on first attribute access so that the command-line
entry point can configure thread counts before numpy is loaded.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("sh", "array_encoding", "hrtf", "renderer", "evaluation", "scene", "pipelines",
               "cli")
__all__ = list(_SUBMODULES)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
