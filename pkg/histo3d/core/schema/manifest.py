"""

.. currentmodule:: histo3d.core.schema.manifest

:platform: Unix, Mac
:synopsis: histo3d configuration and case manifest schema

.. contents:: Contents
    :local:
    :backlinks: top


"""
import json
import os
from typing import Dict, List, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError, root_validator, validator

from histo3d.core.errors import ParseError
from histo3d.core.schema.enum import BlendModeEnum, CoordinateSystemEnum, NoiseModelEnum, SpecimenShapeEnum
from histo3d.core.types import BACKGROUND_HU, DEFAULT_THRESHOLD_HU


def _to_camelcase(string) -> str:
    """
        Change provided string with underscores to Javascript camelcase
        (e.g. to_camelcase -> toCamelcase)
        :param string: The string to transform
        :return:
        """
    return "".join(i and s[0].upper() + s[1:] or s for i, s in enumerate(string.split("_")))


class SchemaBase(BaseModel):
    """Schema Base Class. This sets `SchemaBase.Config` defaults"""

    class Config:
        # output fields to camelcase
        alias_generator = _to_camelcase
        # whether an aliased field may be populated by its name as given by the model attribute
        #  (allows bot camelcase and underscore fields)
        allow_population_by_field_name = True
        # Instead of using enum class use enum value (string object)
        use_enum_values = True
        # Validate all fields when initialized
        validate_all = True
        extra = "forbid"


class SolverSettings(SchemaBase):
    """Tolerances of the curve/sphere intersection solver"""

    newton_tol: float = Field(1e-9, gt=0, title="Newton tolerance",
                              description="Accept a Newton root when |g| is below this (mm)")
    max_newton_iter: int = Field(50, ge=1, title="Newton iterations")
    bisection_tol: float = Field(1e-9, gt=0, title="Bisection tolerance",
                                 description="Stop bisection once the bracket is narrower than this")
    bisection_residual: float = Field(1e-6, gt=0, title="Bisection residual (mm)")
    scan_samples: int = Field(4096, ge=16, title="Scan samples",
                              description="Dense samples used to bracket roots")
    extrapolation_margin: float = Field(0.05, ge=0, le=0.5, title="Extrapolation margin",
                                        description="Allowed parameter overshoot beyond [0, 1]")


class PlacementSettings(SchemaBase):
    """Histology placement options"""

    off_plane_tol_mm: float = Field(0.5, gt=0, title="Off plane tolerance (mm)",
                                    description="World landmarks further than this from the plane are rejected")
    allow_rotation: bool = Field(False, title="Allow in-plane rotation",
                                 description="Fit rotation + scale + translation instead of scale + translation")


class FusionSettings(SchemaBase):
    """Bisection volume fusion options"""

    threshold_hu: float = Field(DEFAULT_THRESHOLD_HU, title="Bone threshold (HU)")
    trim_fraction: float = Field(0.1, ge=0, lt=1, title="ICP trim fraction",
                                 description="Fraction of worst correspondences dropped per iteration")
    icp_tol: float = Field(1e-6, gt=0, title="ICP tolerance (mm)")
    icp_max_iter: int = Field(100, ge=1, title="ICP iterations")
    surface_stride: int = Field(1, ge=1, title="Surface stride")
    face_band_mm: Optional[float] = Field(0.5, gt=0, title="Bisection face band (mm)",
                                          description="Keep only surface points this close to the plane through "
                                                      "the fusion fiducials; null keeps the whole surface")
    blend: BlendModeEnum = Field(BlendModeEnum.MEAN, title="Overlap blending")
    background_hu: float = Field(BACKGROUND_HU, title="Background (HU)")


class SynthParams(SchemaBase):
    """Synthetic specimen generator parameters"""

    shape: SpecimenShapeEnum = Field(SpecimenShapeEnum.PARALLEL_LINES, title="Shape")
    extent_mm: float = Field(100.0, gt=0, title="Edge extent (mm)")
    width_mm: float = Field(10.0, gt=0, title="Distance between the bisection edges (mm)")
    radius_mm: float = Field(40.0, gt=0, title="Bend radius (mm)")
    cut_count: int = Field(3, ge=1, title="Cut count")
    control_points: int = Field(6, ge=4, title="Markup control points per edge")
    noise_sigma_mm: float = Field(0.0, ge=0, title="Distance noise sigma (mm)")
    noise_model: NoiseModelEnum = Field(NoiseModelEnum.INDEPENDENT, title="Distance noise model")
    landmark_sigma_mm: float = Field(0.0, ge=0, title="Landmark pick noise sigma (mm)")
    jitter: float = Field(0.0, ge=0, lt=0.5, title="Cut position jitter",
                          description="Random shift of each cut as a fraction of the cut spacing")
    cut_positions: Optional[List[float]] = Field(None, title="Cut positions",
                                                 description="Explicit edge parameters of the cuts")
    slides: bool = Field(False, title="Render slides")
    shrink_factor: float = Field(1.0, gt=0, title="Slide shrink factor",
                                 description="Slide millimetres per tissue millimetre")
    variant_jitter_mm: float = Field(0.0, ge=0, title="Variant markup jitter (mm)",
                                     description="When positive, also emit a second markup placement "
                                                 "with each control point shifted uniformly by up to this")
    seed: int = Field(0, title="Seed")

    @validator("cut_positions")
    def _increasing(cls, value):
        if value is not None and any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("cut positions must be strictly increasing")
        return value


class PhantomParams(SchemaBase):
    """Voxel bone phantom parameters"""

    length_mm: float = Field(60.0, gt=0, title="Shaft length (mm)")
    outer_radius_mm: float = Field(10.0, gt=0, title="Cortex outer radius (mm)")
    inner_radius_mm: float = Field(6.0, gt=0, title="Cortex inner radius (mm)")
    soft_radius_mm: float = Field(14.0, gt=0, title="Soft tissue radius (mm)")
    voxel_mm: float = Field(1.0, gt=0, title="Voxel size (mm)")
    rotation_deg: float = Field(0.0, ge=0, lt=180, title="Truth rotation (degrees)")
    translation_mm: float = Field(0.0, ge=0, title="Truth translation (mm)")
    fiducial_sigma_mm: float = Field(0.0, ge=0, title="Fiducial noise sigma (mm)")
    seed: int = Field(0, title="Seed")

    @root_validator(skip_on_failure=True)
    def _nested_radii(cls, values):
        if not values["inner_radius_mm"] < values["outer_radius_mm"] < values["soft_radius_mm"]:
            raise ValueError("radii must satisfy inner < outer < soft")
        return values


class MarkupRoles(SchemaBase):
    """Which markups in a markup document play which role"""

    path: str = Field(title="Markup document")
    curve_a: str = Field(title="First bisection edge curve label")
    curve_b: str = Field(title="Second bisection edge curve label")
    edge: Optional[str] = Field(None, title="Outer contour curve label",
                                description="Needed for d2 validation estimates")
    fiducial: str = Field("f_ref", title="Fiducial reference label")


class VolumeInputs(SchemaBase):
    """Bisection CT volumes and the fiducials that pair them"""

    fixed: str = Field(title="Fixed bisection volume (NRRD)")
    moving: str = Field(title="Moving bisection volume (NRRD)")
    fixed_fiducials: str = Field(title="Markup document of fiducials on the fixed bisection face")
    moving_fiducials: str = Field(title="Markup document of the matching moving fiducials")


class SlideSidecar(SchemaBase):
    """Metadata stored next to a slide labelmap image"""

    index: int = Field(title="Dissection ordinal")
    image: str = Field(title="Labelmap image (PGM)", description="Relative to the sidecar")
    pixel_spacing: List[float] = Field(title="Pixel spacing (mm)", description="(row, column)",
                                       min_items=2, max_items=2)
    landmarks_image: List[List[float]] = Field(title="Landmark pixels", description="(row, column) per landmark")
    landmarks_world: List[List[float]] = Field(title="Landmark world positions (mm)")
    coordinate_system: Optional[CoordinateSystemEnum] = Field(None, title="Coordinate system of the world landmarks")
    palette: Dict[int, str] = Field({}, title="Label value to tissue class")


class CaseManifest(SchemaBase):
    """
    Everything one specimen bisection run needs. Relative paths are resolved
    against the directory of the manifest file.
    """

    specimen_id: str = Field(title="Specimen identifier")
    bisection_id: str = Field("", title="Bisection identifier")
    coordinate_system: CoordinateSystemEnum = Field(CoordinateSystemEnum.RAS, title="Coordinate system",
                                                    description="Used for inputs that do not declare one")
    markups: MarkupRoles = Field(title="Markups")
    variant_markups: Optional[MarkupRoles] = Field(None, title="Alternative markups",
                                                   description="Second spline placement for sensitivity analysis")
    measurements: Optional[str] = Field(None, title="Measurement table (CSV)")
    slides: List[str] = Field([], title="Slide metadata sidecars")
    volumes: Optional[VolumeInputs] = Field(None, title="Volumes")
    solver: SolverSettings = Field(SolverSettings(), title="Solver settings")
    placement: PlacementSettings = Field(PlacementSettings(), title="Placement settings")
    fusion: FusionSettings = Field(FusionSettings(), title="Fusion settings")
    base_dir: str = Field("", title="Directory relative paths are resolved against")

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def referenced_files(self) -> List[str]:
        files = [self.markups.path]
        if self.variant_markups:
            files.append(self.variant_markups.path)
        if self.measurements:
            files.append(self.measurements)
        files.extend(self.slides)
        if self.volumes:
            files.extend([self.volumes.fixed, self.volumes.moving,
                          self.volumes.fixed_fiducials, self.volumes.moving_fiducials])
        return [self.resolve(f) for f in files]

    @classmethod
    def load(cls, path: str) -> "CaseManifest":
        """
        Read a YAML or JSON manifest and check that every referenced file exists

        :raises ParseError: unreadable document, invalid fields or missing files
        """
        try:
            with open(path, "r") as f:
                if path.endswith(".json"):
                    document: Dict = json.load(f)
                else:
                    document = yaml.safe_load(f)
        except (OSError, ValueError, yaml.YAMLError) as e:
            raise ParseError(f"Unable to read manifest {path}: {e}")
        if not isinstance(document, dict):
            raise ParseError(f"Manifest {path} is not a mapping")

        document.setdefault("baseDir", os.path.dirname(os.path.abspath(path)))
        try:
            manifest = cls(**document)
        except ValidationError as e:
            raise ParseError(f"Invalid manifest {path}: {e}")

        missing = [f for f in manifest.referenced_files() if not os.path.exists(f)]
        if missing:
            raise ParseError(f"Manifest {path} references missing files: {', '.join(missing)}")
        return manifest
