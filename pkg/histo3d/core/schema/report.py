"""

.. currentmodule:: histo3d.core.schema.report

:platform: Unix, Mac
:synopsis: histo3d report and diagnostic schema

.. contents:: Contents
    :local:
    :backlinks: top


"""
from typing import List, Optional

from pydantic import Field

from histo3d.core.schema.enum import MessageLevelEnum, PlaneStatusEnum, RootMethodEnum
from histo3d.core.schema.manifest import SchemaBase


class PipelineMessage(SchemaBase):
    """histo3d Pipeline Message """

    msg: str = Field(title="Msg", description="The pipeline message ")
    level: MessageLevelEnum = Field(title="Level", description="The severity level of the message.")
    where: Optional[List[str]] = Field([], title="Where",
                                       description="The place in histo3d where the message was generated "
                                                   "from. The first item is the pipeline stage, "
                                                   "the second the plane or slide index if there is one.")


class AnchorDiagnostics(SchemaBase):
    """How one plane anchor was solved"""

    t: float = Field(title="Curve parameter")
    residual: float = Field(title="Residual (mm)")
    iterations: int = Field(title="Iterations")
    method: RootMethodEnum = Field(title="Root method")
    bracket_count: int = Field(0, title="Bracket count",
                               description="Sign changes found on the scan grid; more than one means the "
                                           "ordering rule chose the root")
    extrapolated: bool = Field(False, title="Extrapolated",
                               description="The root lies in the extrapolation margin outside [0, 1]")


class PlaneDiagnostics(SchemaBase):
    """Outcome of assigning one dissection plane"""

    index: int = Field(title="Dissection index")
    status: PlaneStatusEnum = Field(title="Status")
    anchor_a: Optional[AnchorDiagnostics] = Field(None, title="Anchor on the first bisection edge")
    anchor_b: Optional[AnchorDiagnostics] = Field(None, title="Anchor on the second bisection edge")
    error: Optional[str] = Field(None, title="Error", description="Exception class name of a failed plane")
    detail: Optional[str] = Field(None, title="Error detail")


class SlidePlacementDiagnostics(SchemaBase):
    """Fit quality of one placed slide"""

    index: int = Field(title="Dissection index")
    scale: float = Field(title="In-plane scale")
    translation: List[float] = Field(title="In-plane translation (mm)")
    residual_rms: float = Field(title="Landmark residual RMS (mm)")
    composed: List[List[float]] = Field(title="Pixel to world matrix (4x4, row major)")


class FusionDiagnostics(SchemaBase):
    """Quality of one volume fusion"""

    fre: float = Field(title="Fiducial registration error (mm)")
    icp_rms: float = Field(title="Final ICP RMS (mm)")
    icp_iterations: int = Field(title="ICP iterations")
    icp_converged: bool = Field(title="ICP converged")
    icp_history: List[float] = Field([], title="ICP RMS per accepted iteration (mm)")
    fixed_points: int = Field(title="Fixed surface points")
    moving_points: int = Field(title="Moving surface points")
    overlap_voxels: int = Field(title="Overlap voxels")


class ChannelStats(SchemaBase):
    """Error statistics of one channel group"""

    n: int = Field(title="Count")
    mean: Optional[float] = Field(None, title="Mean difference (mm)")
    stdev: Optional[float] = Field(None, title="Sample standard deviation (mm)")


class ErrorReport(SchemaBase):
    """Estimated minus caliper distance statistics"""

    n: int = Field(title="Count", description="Included record-measurement count")
    mean: float = Field(title="Mean difference (mm)")
    stdev: float = Field(title="Sample standard deviation (mm)")
    pooled_d1_d3: ChannelStats = Field(title="d1 and d3 pooled")
    d2: ChannelStats = Field(title="d2")
    shapiro_w: Optional[float] = Field(None, title="Shapiro-Wilk W of the pooled differences")
    shapiro_p: Optional[float] = Field(None, title="Shapiro-Wilk p-value")
    excluded_curved: int = Field(0, title="Excluded curved records")
    differences: List[float] = Field([], title="Pooled differences (mm)")
    notes: List[str] = Field([], title="Notes")


class SensitivityReport(SchemaBase):
    """Plane response to a change of the input splines"""

    plane_indices: List[int] = Field([], title="Dissection indices compared")
    per_plane_rotation: List[float] = Field([], title="Angle between variant normals (degrees)")
    per_measurement_translation: List[float] = Field([], title="Differences of d1, d2, d3 estimates (mm)")
    max_rotation: float = Field(0.0, title="Maximum rotation (degrees)")
    mean_translation: float = Field(0.0, title="Mean translation (mm)")
    stdev_translation: float = Field(0.0, title="Translation standard deviation (mm)")
    messages: List[PipelineMessage] = Field([], title="Messages")
