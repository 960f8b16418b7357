"""The `version` module holds the version information for bmacopula."""

try:
    from bmacopula._version import __version__
except ImportError:  # pragma: no cover
    # source checkout without the version file written by hatch-vcs
    __version__ = "0.0.0"

__all__ = ["VERSION"]

VERSION: str = __version__
"""The version of bmacopula."""


def version_short() -> str:  # pragma: no cover
    """Return the `major.minor` part of bmacopula version.

    It returns '2.1' if bmacopula version is '2.1.1'.
    """
    return ".".join(VERSION.split(".")[:2])


def version_info() -> str:
    """Return complete version information for bmacopula and its numerical stack."""
    import platform  # pylint: disable=C0415
    import sys  # pylint: disable=C0415

    import numpy  # pylint: disable=C0415
    import pandas  # pylint: disable=C0415
    import scipy  # pylint: disable=C0415

    info = {
        "bmacopula version": VERSION,
        "numpy version": numpy.__version__,
        "scipy version": scipy.__version__,
        "pandas version": pandas.__version__,
        "python version": sys.version,
        "platform": platform.platform(),
    }
    info = {k: str(v).replace("\n", " ") for k, v in info.items()}
    return "\n".join(f"{k}: {v}" for k, v in info.items())
