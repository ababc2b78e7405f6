"""Backend selection for the size-spectrum inner loop.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``SSCALIB_BACKEND=python`` to force the fallback.
"""

import logging
import os

from . import _spectrum_py

logger = logging.getLogger(__name__)

_BACKENDS = {"python": _spectrum_py.advance_year}

try:
    from . import _spectrum_core
except ImportError:  # pragma: no cover - depends on the build
    _spectrum_core = None
else:
    _BACKENDS["compiled"] = _spectrum_core.advance_year


def available_backends():
    return sorted(_BACKENDS)


def _default_backend():
    requested = os.environ.get("SSCALIB_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            raise RuntimeError(
                f"SSCALIB_BACKEND={requested!r} unavailable; have {available_backends()}")
        return requested
    if "compiled" in _BACKENDS:
        return "compiled"
    logger.warning("compiled spectrum core not built; using the numpy fallback")
    return "python"


BACKEND = _default_backend()


def get_advance_year(backend=None):
    """Return the ``advance_year`` implementation for ``backend``."""
    return _BACKENDS[backend or BACKEND]
