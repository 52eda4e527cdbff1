"""

.. currentmodule:: histo3d.core.errors

:synopsis: histo3d exception hierarchy

Every failure raised by histo3d derives from :class:`Histo3dException`.
:class:`InputError` covers bad or unparseable input (command line exit
code 1); :class:`NumericalError` covers geometric and numerical failures
on valid input (exit code 2).

.. contents:: Contents
    :local:
    :backlinks: top

"""
from typing import Any, Dict, Optional


class Histo3dException(Exception):
    """Base exception for histo3d"""

    def __init__(self, message: str = "", index: Optional[int] = None):
        super().__init__(message)
        #: The dissection (plane or slide) ordinal the failure belongs to, if any
        self.index = index

    def to_dict(self) -> Dict[str, Any]:
        detail: Dict[str, Any] = {"error": self.__class__.__name__, "detail": str(self)}
        if self.index is not None:
            detail["index"] = self.index
        return detail


class InputError(Histo3dException):
    """Invalid, inconsistent or unparseable input"""
    pass


class NumericalError(Histo3dException):
    """A computation failed on well formed input"""
    pass


# geometry
class TooFewPoints(InputError):
    pass


class DegenerateChord(InputError):
    pass


class InvalidTransform(InputError):
    pass


class StationaryPoint(NumericalError):
    pass


# plane assignment
class NoRoot(NumericalError):
    pass


class CoincidentAnchors(NumericalError):
    pass


class DegenerateTangents(NumericalError):
    pass


class TangentParallelToChord(NumericalError):
    pass


# histology placement
class InvalidSlide(InputError):
    pass


class DegenerateLandmarks(NumericalError):
    pass


class NegativeScale(NumericalError):
    pass


class LandmarkOffPlane(NumericalError):
    pass


# volume fusion
class EmptyMask(NumericalError):
    pass


class CollinearFiducials(NumericalError):
    pass


class TooFewPairs(InputError):
    pass


# validation statistics
class EdgeIntersectionMissing(NumericalError):
    pass


class InsufficientData(NumericalError):
    pass


class OutOfRangeN(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


# synthetic specimens
class InvalidParams(InputError):
    pass


# command line
class UsageError(InputError):
    pass


# file formats
class ParseError(InputError):
    pass


class UnknownCoordinateSystem(InputError):
    pass


class EmptyMarkup(InputError):
    pass


class DuplicateIndex(InputError):
    pass


class NegativeDistance(InputError):
    pass


class UnsupportedEncoding(InputError):
    pass


class HeaderMismatch(InputError):
    pass
