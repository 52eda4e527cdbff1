from histo3d import monitor, colocation
from importlib.metadata import version, PackageNotFoundError

try:
    __version__ = version("histo3d")
except PackageNotFoundError:
    # package is not installed
    pass
__all__ = ['monitor', 'colocation']
