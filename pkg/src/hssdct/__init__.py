"""Desk-scale hyperspectral/multispectral fusion.

Submodules load lazily so the CLI can pin BLAS thread env vars before numpy
first imports. ``import hssdct`` then ``hssdct.model`` etc. works as usual.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "backend",
    "bench",
    "blocks",
    "cli",
    "data",
    "errors",
    "gradcheck",
    "kernels",
    "losses",
    "metrics",
    "model",
    "rng",
    "tensor",
    "trainer",
)


def __getattr__(name):
    if name in _SUBMODULES:
        module = importlib.import_module(f".{name}", __name__)
        globals()[name] = module
        return module
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
