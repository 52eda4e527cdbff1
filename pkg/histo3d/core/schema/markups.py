"""

.. currentmodule:: histo3d.core.schema.markups

:platform: Unix, Mac
:synopsis: The subset of the 3D Slicer markups JSON document histo3d reads and writes

.. contents:: Contents
    :local:
    :backlinks: top


"""
from typing import List, Optional

from pydantic import Field

from histo3d.core.schema.manifest import SchemaBase

#: Schema reference written into every markup document
MARKUPS_SCHEMA = "https://raw.githubusercontent.com/slicer/slicer/master/Modules/Loadable/Markups/Resources/" \
                 "Schema/markups-schema-v1.0.3.json#"


class MarkupsBase(SchemaBase):
    """Markup documents carry many display fields histo3d does not use"""

    class Config:
        extra = "ignore"


class ControlPoint(MarkupsBase):
    """One control point of a markup"""

    id: Optional[str] = Field(None, title="Identifier")
    label: str = Field("", title="Label")
    position: List[float] = Field(title="Position (mm)", min_items=3, max_items=3)
    position_status: str = Field("defined", title="Position status")


class Markup(MarkupsBase):
    """A curve or a set of fiducial points"""

    type: str = Field(title="Markup type", description="Curve or Fiducial")
    name: str = Field("", title="Node name")
    coordinate_system: Optional[str] = Field(None, title="Coordinate system",
                                             description="LPS or RAS; documents without one use the default")
    coordinate_units: str = Field("mm", title="Units")
    control_points: List[ControlPoint] = Field([], title="Control points")


class MarkupsDocument(MarkupsBase):
    """A markup document"""

    schema_url: str = Field(MARKUPS_SCHEMA, alias="@schema")
    markups: List[Markup] = Field(title="Markups")
