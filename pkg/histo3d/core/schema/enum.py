"""

.. currentmodule:: histo3d.core.schema.enum

:platform: Unix, Mac
:synopsis: histo3d Enumeration Schema

.. contents:: Contents
    :local:
    :backlinks: top


"""
from enum import Enum


class BaseEnum(Enum):
    """Base Enumeration Class that adds some helper methods"""

    @classmethod
    def values(cls):
        role_names = [member.value for role, member in cls.__members__.items()]
        return role_names

    @classmethod
    def names(cls):
        return cls._member_names_


class CoordinateSystemEnum(str, BaseEnum):
    """
    Patient coordinate conventions accepted at the file boundary.
    Internally everything is RAS millimetres.
    """
    #: Right, Anterior, Superior (viewer native)
    RAS = "RAS"

    #: Left, Posterior, Superior (DICOM)
    LPS = "LPS"


class MarkupTypeEnum(str, BaseEnum):
    """Markup entry types read from markup documents"""
    CURVE = "Curve"
    FIDUCIAL = "Fiducial"


class RootMethodEnum(str, BaseEnum):
    """How a curve/sphere intersection was found"""
    NEWTON = "newton"
    BISECTION_FALLBACK = "bisection-fallback"


class PlaneStatusEnum(str, BaseEnum):
    """Outcome of a single plane assignment"""
    ASSIGNED = "ASSIGNED"
    ABSENT = "ABSENT"


class BlendModeEnum(str, BaseEnum):
    """
    Overlap rule for stitching two volumes
    """
    #: Arithmetic mean of the contributing values
    MEAN = "mean"

    #: The fixed volume wins wherever it has data
    FIXED = "fixed"


class SpecimenShapeEnum(str, BaseEnum):
    """Synthetic specimen geometries"""
    PARALLEL_LINES = "parallel-lines"
    HALF_CYLINDER = "half-cylinder"
    BENT_PRISM = "bent-prism"


class NoiseModelEnum(str, BaseEnum):
    """
    How laboratory distance noise is drawn for synthetic specimens
    """
    #: Every distance gets its own Gaussian error
    INDEPENDENT = "independent"

    #: One Gaussian error per slab, carried forward to all later cuts of both edges
    CUMULATIVE = "cumulative"


class MessageLevelEnum(str, BaseEnum):
    """Enumeration of Message Levels"""

    WARN = "WARN"
    ERROR = "ERROR"
    CRITICAL = "CRITICAL"
