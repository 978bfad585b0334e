"""Backend selection for the per-step kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``GAZEATTN_PURE_PYTHON=1`` to force the fallback.
"""

import contextlib
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

if os.environ.get("GAZEATTN_PURE_PYTHON") or _compiled is None:
    _active = _kernels_py
else:
    _active = _compiled


def available():
    return sorted(_BACKENDS)


def active():
    """Return the module currently serving kernel calls."""
    return _active


def get(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available()}") from None


def set_backend(name):
    global _active
    _active = get(name)


@contextlib.contextmanager
def using(name):
    global _active
    prev = _active
    _active = get(name)
    try:
        yield _active
    finally:
        _active = prev
