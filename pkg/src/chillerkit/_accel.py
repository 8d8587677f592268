"""JIT switch.

Numba is used when importable unless ``CHILLERKIT_NUMBA`` is set to ``0``,
``false`` or ``no``. Kernels decorated with :func:`njit` degrade to plain
Python functions otherwise, and the dispatching wrappers in
:mod:`chillerkit.kernels` pick the vectorised numpy path instead.
"""

import os

_flag = os.environ.get("CHILLERKIT_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    if not _wanted:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _wanted


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
