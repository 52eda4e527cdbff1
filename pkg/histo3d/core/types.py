"""

.. currentmodule:: histo3d.core.types

:platform: Unix, Mac
:synopsis: histo3d numeric constants and tolerances

.. contents:: Contents
    :local:
    :backlinks: top

"""

#: Orthonormality and planarity tolerance (unitless / mm)
GEOMETRY_TOL = 1e-9

#: Shortest allowed distance between consecutive markup control points (mm)
MIN_CHORD_MM = 1e-6

#: Shortest allowed total markup length (mm)
MIN_TOTAL_CHORD_MM = 1e-3

#: Tangent norms below this are stationary (mm)
STATIONARY_TANGENT_MM = 1e-9

#: Shortest allowed distance between the two anchors of a plane (mm)
MIN_ANCHOR_CHORD_MM = 1e-3

#: Norm below which averaged or projected directions are degenerate
DEGENERATE_DIRECTION = 1e-6

#: Default bone segmentation threshold (Hounsfield units)
DEFAULT_THRESHOLD_HU = 226.0

#: Air; value of voxels no source volume covers
BACKGROUND_HU = -1024.0


class PhantomHU(object):
    """
    Intensities of the analytic bone phantom
    """

    #: Cortical bone
    CORTICAL = 1200.0

    #: Marrow
    MARROW = 100.0

    #: Soft tissue
    SOFT = 40.0

    #: Air
    AIR = BACKGROUND_HU


class SlideLabels(object):
    """
    Default histology labelmap palette
    """

    BACKGROUND = 0
    BONE = 1
    TUMOUR = 2

    #: label value -> tissue class
    PALETTE = {BONE: "bone", TUMOUR: "tumour"}
