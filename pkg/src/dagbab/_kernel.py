"""Selects the network kernel at import time.

The compiled kernel is used when it was built; set ``DAGBAB_PURE_PYTHON=1``
to force the pure-Python twin.  Both produce identical event sequences.
"""
import os

from . import _netkernel_py

if os.environ.get("DAGBAB_PURE_PYTHON") == "1":
    _impl = _netkernel_py
else:
    try:
        from . import _netkernel as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _netkernel_py

RbcNetwork = _impl.RbcNetwork
PyRbcNetwork = _netkernel_py.RbcNetwork
COMPILED = _impl is not _netkernel_py
EV_DELIVER = _netkernel_py.EV_DELIVER
EV_TIMER = _netkernel_py.EV_TIMER
MODE_HONEST = _netkernel_py.MODE_HONEST
MODE_SILENT = _netkernel_py.MODE_SILENT


def compiled_network():
    """The compiled ``RbcNetwork`` class, or None if it was not built."""
    try:
        from . import _netkernel
    except ImportError:
        return None
    return _netkernel.RbcNetwork
