"""Kernel backend selection.

The compiled extension ``bdmfilter._core`` is used when importable. Set
``BDMFILTER_BACKEND=python`` to force the numpy fallback, or
``BDMFILTER_BACKEND=compiled`` to fail loudly when the extension is missing.
"""
import contextlib
import importlib
import os
import sys

from . import _pykernels

_choice = os.environ.get("BDMFILTER_BACKEND", "").strip().lower()


def load(name):
    """Return the kernel module called ``name`` ("compiled" or "python")."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        return importlib.import_module("bdmfilter._core")
    raise ValueError(f"unknown backend {name!r}")


def available():
    names = ["python"]
    try:
        load("compiled")
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


_USERS = ("gaussian", "filter", "tracking", "pcrb")


@contextlib.contextmanager
def using(name):
    """Temporarily route every numerical module through backend ``name``."""
    mod = load(name)
    users = [sys.modules[f"{__package__}.{u}"] for u in _USERS if f"{__package__}.{u}" in sys.modules]
    saved = [u.kernels for u in users]
    try:
        for u in users:
            u.kernels = mod
        yield mod
    finally:
        for u, k in zip(users, saved):
            u.kernels = k


if _choice == "python":
    kernels, BACKEND = _pykernels, "python"
elif _choice == "compiled":
    kernels, BACKEND = load("compiled"), "compiled"
else:
    try:
        kernels, BACKEND = load("compiled"), "compiled"
    except ImportError:
        kernels, BACKEND = _pykernels, "python"
