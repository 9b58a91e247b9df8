"""Kernel backend selection.

Two implementations exist for every hot kernel: a numba @njit version and a
pure-numpy version. HSSDCT_BACKEND picks one:

    auto   per-kernel choice of whichever runs faster, else numpy when
           numba is not importable (default)
    numba  require numba, error if unavailable
    numpy  force the numpy path even when numba is installed

HSSDCT_THREADS, when set, bounds the number of worker threads numba may use.
BLAS thread pinning for benchmarks is handled at CLI entry (the relevant env
vars must be exported before numpy is first imported).
"""

import os

from .errors import ConfigError

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAVE_NUMBA = False

_VALID = ("auto", "numba", "numpy")
_active = None


def _resolve(name):
    if name not in _VALID:
        raise ConfigError(
            f"invalid backend {name!r}: expected one of {', '.join(_VALID)}"
        )
    if name == "auto":
        return "auto" if HAVE_NUMBA else "numpy"
    if name == "numba" and not HAVE_NUMBA:
        raise ConfigError("backend 'numba' requested but numba is not importable")
    return name


def active():
    """Return the backend in use: 'numba', 'numpy', or 'auto'.

    'auto' means each kernel dispatcher picks per call; forcing a name pins
    every kernel to that implementation.
    """
    global _active
    if _active is None:
        _active = _resolve(os.environ.get("HSSDCT_BACKEND", "auto").lower())
    return _active


def set_backend(name):
    """Override the backend for this process. Returns the previous value."""
    global _active
    prev = active()
    _active = _resolve(name)
    return prev


def apply_thread_limit():
    """Clamp numba's thread count to HSSDCT_THREADS if the variable is set."""
    raw = os.environ.get("HSSDCT_THREADS")
    if raw is None or not HAVE_NUMBA:
        return None
    try:
        want = int(raw)
    except ValueError:
        raise ConfigError(f"HSSDCT_THREADS must be an integer, got {raw!r}") from None
    if want < 1:
        raise ConfigError(f"HSSDCT_THREADS must be >= 1, got {want}")
    limit = min(want, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(limit)
    return limit


apply_thread_limit()
