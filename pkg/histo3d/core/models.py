"""

.. currentmodule:: histo3d.core.models

:synopsis: The histo3d domain models

All models are immutable after construction. Positions are RAS millimetres
held in :class:`numpy.ndarray` objects.

.. contents:: Contents
    :local:
    :backlinks: top

"""
import enum
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from histo3d.core import monitor
from histo3d.core.errors import DuplicateIndex, InvalidSlide, InvalidTransform, ParseError, TooFewPairs
from histo3d.core.schema.enum import RootMethodEnum, SpecimenShapeEnum
from histo3d.core.types import GEOMETRY_TOL, SlideLabels

logger = monitor.get_logger(__name__)


def as_points(values, dim: int = 3) -> np.ndarray:
    """Coerce to a read-only float array of shape (n, dim)"""
    array = np.array(values, dtype=float).reshape(-1, dim)
    array.setflags(write=False)
    return array


def as_vector(values, dim: int = 3) -> np.ndarray:
    """Coerce to a read-only float array of shape (dim,)"""
    array = np.array(values, dtype=float).reshape(dim)
    array.setflags(write=False)
    return array


class JSONSerializable:
    """
    Make a Data class serializable to json
    """

    def to_json(self):
        def props(o):
            """Convert object to dict.  If prefixed with, _ remove it"""
            if isinstance(o, np.ndarray):
                return o.tolist()
            if isinstance(o, np.generic):
                return o.item()
            if isinstance(o, enum.Enum):
                return o.value
            try:
                map = {}
                for k in o.__dict__.keys():
                    if not k.startswith("__"):
                        if k.startswith("_"):
                            map[k[1:]] = o.__dict__[k]
                        else:
                            map[k] = o.__dict__[k]
                return map
            except Exception:
                # There is not __dict__, return a string representation
                return str(o)

        return json.dumps(self, default=props,
                          sort_keys=True, indent=4)

    def to_dict(self):
        return json.loads(self.to_json())


@dataclass(frozen=True, eq=False)
class MarkupCurve(JSONSerializable):
    """
    Ordered control points of a markup curve placed along a bisection edge

    Fields:
        - *label:* string
        - *points:* (n, 3) array
    """
    label: str
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))


@dataclass(frozen=True, eq=False)
class FiducialReference(JSONSerializable):
    """
    The landmark laboratory distances are measured from (f_ref)

    Fields:
        - *position:* (3,) array
        - *label:* string
    """
    position: np.ndarray
    label: str = "f_ref"

    def __post_init__(self):
        object.__setattr__(self, "position", as_vector(self.position))
        if not np.all(np.isfinite(self.position)):
            raise ParseError(f"Fiducial {self.label} position is not finite")


@dataclass(frozen=True, eq=False)
class MarkupSet(JSONSerializable):
    """
    The curves and fiducials of one markup document, in document order
    """
    curves: List[MarkupCurve] = field(default_factory=list)
    fiducials: List[FiducialReference] = field(default_factory=list)

    def curve(self, label: str) -> MarkupCurve:
        for c in self.curves:
            if c.label == label:
                return c
        raise ParseError(f"No curve labelled '{label}', found {[c.label for c in self.curves]}")

    def fiducial(self, label: str) -> FiducialReference:
        for f in self.fiducials:
            if f.label == label:
                return f
        raise ParseError(f"No fiducial labelled '{label}', found {[f.label for f in self.fiducials]}")


@dataclass(frozen=True, eq=False)
class ParametricCubic(JSONSerializable):
    """
    Per axis cubic polynomial C(t) over the normalized parameter interval [0, 1]

    Fields:
        - *coefficients:* (3, 4) array; ``coefficients[axis, k]`` multiplies t**k
        - *chord_params:* parameter of each fitted control point
        - *residual_rms:* fit residual (mm)
        - *label:* string
    """
    coefficients: np.ndarray
    chord_params: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    residual_rms: float = 0.0
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coefficients", as_points(self.coefficients, dim=4).reshape(3, 4))
        object.__setattr__(self, "chord_params", as_vector(self.chord_params, dim=len(self.chord_params)))


@dataclass(frozen=True, eq=False)
class RigidTransform(JSONSerializable):
    """
    4x4 homogeneous rigid transform (rotation + translation in mm)
    """
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.shape != (4, 4) or not np.all(np.isfinite(matrix)):
            raise InvalidTransform(f"Expected a finite 4x4 matrix, got shape {matrix.shape}")
        rotation = matrix[:3, :3]
        if not np.allclose(rotation.T @ rotation, np.eye(3), rtol=0, atol=GEOMETRY_TOL):
            raise InvalidTransform("Rotation block is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > GEOMETRY_TOL:
            raise InvalidTransform("Rotation block is a reflection")
        if not np.array_equal(matrix[3], [0.0, 0.0, 0.0, 1.0]):
            raise InvalidTransform("Last row must be (0, 0, 0, 1)")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> "RigidTransform":
        matrix = np.eye(4)
        matrix[:3, :3] = rotation
        matrix[:3, 3] = translation
        return cls(matrix)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def apply(self, points) -> np.ndarray:
        """Map (n, 3) or (3,) points"""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        """Rotate (n, 3) or (3,) direction vectors"""
        return np.asarray(vectors, dtype=float) @ self.rotation.T


@dataclass(frozen=True, eq=False)
class SimilarityTransform2D(JSONSerializable):
    """
    In-plane map q = scale * R p + translation

    The rotation is the identity unless the rotation-enabled fit was requested.
    """
    scale: float
    translation: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(2))
    residual_rms: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidTransform(f"Scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "translation", as_vector(self.translation, dim=2))
        rotation = np.array(self.rotation, dtype=float).reshape(2, 2)
        rotation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)

    @classmethod
    def identity(cls) -> "SimilarityTransform2D":
        return cls(1.0, np.zeros(2))

    @property
    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix"""
        matrix = np.eye(3)
        matrix[:2, :2] = self.scale * self.rotation
        matrix[:2, 2] = self.translation
        return matrix

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class DissectionPlane(JSONSerializable):
    """
    One flat bandsaw cut (P_i)

    Fields:
        - *index:* dissection ordinal
        - *origin:* midpoint of the anchors
        - *normal*, *u_axis*, *v_axis:* right handed orthonormal frame, ``normal = u_axis x v_axis``
        - *anchor_a*, *anchor_b:* intersections with the two bisection edges
        - *param_a*, *param_b:* curve parameters of the anchors
    """
    index: int
    origin: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    anchor_a: np.ndarray
    anchor_b: np.ndarray
    param_a: float
    param_b: float

    def __post_init__(self):
        for name in ("origin", "normal", "u_axis", "v_axis", "anchor_a", "anchor_b"):
            object.__setattr__(self, name, as_vector(getattr(self, name)))

    def signed_distance(self, points) -> np.ndarray:
        """Signed distance of (n, 3) points along the normal"""
        return (np.asarray(points, dtype=float) - self.origin) @ self.normal

    def to_plane_coords(self, points) -> np.ndarray:
        """Orthogonal projection of (n, 3) points into (u, v) plane coordinates"""
        offsets = np.asarray(points, dtype=float) - self.origin
        return np.stack([offsets @ self.u_axis, offsets @ self.v_axis], axis=-1)


@dataclass(frozen=True, eq=False)
class DissectionMeasurement(JSONSerializable):
    """
    Laboratory distances for one dissection cut

    Fields:
        - *index:* dissection ordinal
        - *d_a*, *d_b:* f_ref to the corner on each bisection edge (mm)
        - *curved_cut:* the pathologist recorded the cut as curved
        - *offset:* signed shift along the plane normal (mm), e.g. microtome shavings
        - *d1_phy*, *d2_phy*, *d3_phy:* optional caliper widths of the slab ending at this cut (mm)
    """
    index: int
    d_a: float
    d_b: float
    curved_cut: bool = False
    offset: float = 0.0
    d1_phy: Optional[float] = None
    d2_phy: Optional[float] = None
    d3_phy: Optional[float] = None


@dataclass(frozen=True, eq=False)
class IntersectionSolution(JSONSerializable):
    """
    Root of ``|C(t) - f_ref| - d``

    Fields:
        - *t:* curve parameter
        - *point:* C(t)
        - *residual:* mm
        - *iterations:* Newton or bisection iterations spent
        - *method:* :class:`RootMethodEnum`
        - *bracket_count:* sign changes found on the scan grid
        - *extrapolated:* t lies outside [0, 1]
    """
    t: float
    point: np.ndarray
    residual: float
    iterations: int
    method: RootMethodEnum
    bracket_count: int = 0
    extrapolated: bool = False


@dataclass(frozen=True, eq=False)
class HistologySlide(JSONSerializable):
    """
    A digitized histology labelmap (H_i)

    Fields:
        - *index:* dissection ordinal
        - *pixels:* 2D label grid, rows along the plane u axis
        - *pixel_spacing:* (row, column) mm per pixel
        - *landmarks_image:* (n, 2) pixel (row, column) coordinates, n >= 3
        - *landmarks_world:* (n, 3) matching positions picked on CT
        - *palette:* label value -> tissue class
    """
    index: int
    pixels: np.ndarray
    pixel_spacing: np.ndarray
    landmarks_image: np.ndarray
    landmarks_world: np.ndarray
    palette: Dict[int, str] = field(default_factory=lambda: dict(SlideLabels.PALETTE))

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise InvalidSlide(f"Slide {self.index} pixels must be 2D", index=self.index)
        object.__setattr__(self, "pixel_spacing", as_vector(self.pixel_spacing, dim=2))
        object.__setattr__(self, "landmarks_image", as_points(self.landmarks_image, dim=2))
        object.__setattr__(self, "landmarks_world", as_points(self.landmarks_world))
        if np.any(self.pixel_spacing <= 0):
            raise InvalidSlide(f"Slide {self.index} pixel spacing must be positive", index=self.index)
        if len(self.landmarks_image) != len(self.landmarks_world):
            raise InvalidSlide(f"Slide {self.index} landmark lists differ in length", index=self.index)
        if len(self.landmarks_image) < 3:
            raise TooFewPairs(f"Slide {self.index} needs at least 3 landmark pairs", index=self.index)
        unknown = set(np.unique(pixels).tolist()) - set(self.palette) - {SlideLabels.BACKGROUND}
        if unknown:
            raise InvalidSlide(f"Slide {self.index} has labels outside the palette: {sorted(unknown)}",
                               index=self.index)

    def image_mm(self, pixel_coords) -> np.ndarray:
        """Pixel (row, column) coordinates to slide millimetres"""
        return np.asarray(pixel_coords, dtype=float) * self.pixel_spacing


@dataclass(frozen=True, eq=False)
class PlacedSlide(JSONSerializable):
    """
    A slide posed on its dissection plane

    Fields:
        - *slide:* the :class:`HistologySlide`
        - *plane:* the :class:`DissectionPlane` it sits on
        - *plane_pose:* plane coordinates -> world
        - *in_plane:* slide mm -> plane coordinates
        - *composed:* 4x4 matrix mapping pixel (row, column, 0, 1) -> world mm
        - *residual_rms:* landmark reprojection RMS against the world landmarks (mm)
    """
    slide: HistologySlide
    plane: DissectionPlane
    plane_pose: RigidTransform
    in_plane: SimilarityTransform2D
    composed: np.ndarray
    residual_rms: float

    def pixel_to_world(self, pixel_coords) -> np.ndarray:
        """Map (n, 2) pixel coordinates to world points"""
        rc = np.asarray(pixel_coords, dtype=float).reshape(-1, 2)
        homogeneous = np.column_stack([rc, np.zeros(len(rc)), np.ones(len(rc))])
        return (homogeneous @ self.composed.T)[:, :3]


@dataclass(frozen=True, eq=False)
class HistologyVolume(JSONSerializable):
    """
    The ordered placed slides of one bisection (H_vol)
    """
    slides: List[PlacedSlide]
    specimen_id: str = ""
    bisection_id: str = ""

    def __post_init__(self):
        indices = [placed.slide.index for placed in self.slides]
        if len(set(indices)) != len(indices):
            raise DuplicateIndex(f"Duplicate slide indices in histology volume: {indices}")
        object.__setattr__(self, "slides", sorted(self.slides, key=lambda p: p.slide.index))


@dataclass(frozen=True, eq=False)
class VolumeGrid(JSONSerializable):
    """
    A scalar voxel grid

    ``world = origin + direction @ (spacing * ijk)``; voxels are indexed ``[i, j, k]``.
    """
    voxels: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        voxels = np.asarray(self.voxels)
        if voxels.ndim != 3:
            raise InvalidTransform(f"Volume must be 3D, got {voxels.ndim} dimensions")
        object.__setattr__(self, "spacing", as_vector(self.spacing))
        object.__setattr__(self, "origin", as_vector(self.origin))
        direction = np.array(self.direction, dtype=float).reshape(3, 3)
        if np.any(self.spacing <= 0):
            raise InvalidTransform("Voxel spacing must be positive")
        if not np.allclose(direction.T @ direction, np.eye(3), rtol=0, atol=GEOMETRY_TOL):
            raise InvalidTransform("Volume direction is not orthonormal")
        direction.setflags(write=False)
        object.__setattr__(self, "direction", direction)

    @property
    def dims(self) -> Tuple[int, int, int]:
        nx, ny, nz = self.voxels.shape
        return nx, ny, nz

    @property
    def affine(self) -> np.ndarray:
        """4x4 index -> world matrix"""
        matrix = np.eye(4)
        matrix[:3, :3] = self.direction * self.spacing
        matrix[:3, 3] = self.origin
        return matrix

    def index_to_world(self, ijk) -> np.ndarray:
        return np.asarray(ijk, dtype=float) @ (self.direction * self.spacing).T + self.origin

    def world_to_index(self, points) -> np.ndarray:
        offsets = np.asarray(points, dtype=float) - self.origin
        return (offsets @ self.direction) / self.spacing

    def with_voxels(self, voxels: np.ndarray) -> "VolumeGrid":
        return VolumeGrid(voxels, self.spacing, self.origin, self.direction)


@dataclass(frozen=True, eq=False)
class PointCloud(JSONSerializable):
    """
    World points with optional normals
    """
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "points", as_points(self.points))
        if self.normals is not None:
            object.__setattr__(self, "normals", as_points(self.normals))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class RegistrationResult(JSONSerializable):
    """
    A rigid registration and how well it fits

    Fields:
        - *transform:* moving -> fixed
        - *rms:* RMS distance of the (kept) pairs after alignment (mm); the FRE for fiducials
        - *iterations:* ICP iterations run (0 for closed form fiducial registration)
        - *converged:* stopping criterion met
        - *history:* RMS after each accepted iterate, starting with the initial RMS
    """
    transform: RigidTransform
    rms: float
    iterations: int = 0
    converged: bool = True
    history: List[float] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class ValidationRecord(JSONSerializable):
    """
    Estimated and caliper widths of one dissection slab

    Fields:
        - *dissection_index:* ordinal of the cut closing the slab
        - *d1_est*, *d2_est*, *d3_est:* computed widths (mm)
        - *d1_phy*, *d2_phy*, *d3_phy:* caliper widths (mm) where measured
        - *curved_cut:* either bounding cut was recorded as curved
    """
    dissection_index: int
    d1_est: float
    d2_est: Optional[float]
    d3_est: float
    d1_phy: Optional[float] = None
    d2_phy: Optional[float] = None
    d3_phy: Optional[float] = None
    curved_cut: bool = False


@dataclass(frozen=True, eq=False)
class SlabEstimate(JSONSerializable):
    """
    Widths between two successive planes

    Fields:
        - *index_from*, *index_to:* the bounding plane ordinals
        - *d1*, *d3:* anchor to anchor distances on the two bisection edges
        - *d2:* distance between the plane crossings of the outer contour, if one was given
    """
    index_from: int
    index_to: int
    d1: float
    d2: Optional[float]
    d3: float


@dataclass(frozen=True, eq=False)
class SyntheticSpecimen(JSONSerializable):
    """
    A generated specimen and its exact ground truth

    Fields:
        - *shape:* generator geometry
        - *seed:* random seed
        - *markups:* control points of the two bisection edges and the outer contour
        - *curves:* exact cubics of edge a, edge b and the outer contour
        - *f_ref:* fiducial reference
        - *planes:* ground truth planes
        - *measurements:* laboratory distances (noisy if sigma > 0)
        - *truth_measurements:* the noise free distances
        - *slides:* rendered slides (empty unless requested)
        - *truth_slide_transforms:* the composed pixel -> world matrices the slides were rendered from
        - *variant_markups:* an independently jittered second placement of the markups, if requested
    """
    shape: SpecimenShapeEnum
    seed: int
    markups: Tuple[MarkupCurve, MarkupCurve, MarkupCurve]
    curves: Tuple[ParametricCubic, ParametricCubic, ParametricCubic]
    f_ref: FiducialReference
    planes: List[DissectionPlane]
    measurements: List[DissectionMeasurement]
    truth_measurements: List[DissectionMeasurement]
    slides: List[HistologySlide] = field(default_factory=list)
    truth_slide_transforms: List[np.ndarray] = field(default_factory=list)
    variant_markups: Optional[Tuple[MarkupCurve, MarkupCurve, MarkupCurve]] = None


@dataclass(frozen=True, eq=False)
class PhantomPair(JSONSerializable):
    """
    A voxelized bone phantom split into two bisection volumes

    Fields:
        - *whole:* the unsplit phantom
        - *fixed*, *moving:* the halves; the moving half is displaced by the inverse of ``t_fuse``
        - *t_fuse:* moving world -> fixed world (ground truth)
        - *fiducials_fixed*, *fiducials_moving:* paired landmarks on the bisection face
        - *cortical_voxels:* cortical voxel count of ``whole``
    """
    whole: VolumeGrid
    fixed: VolumeGrid
    moving: VolumeGrid
    t_fuse: RigidTransform
    fiducials_fixed: np.ndarray
    fiducials_moving: np.ndarray
    cortical_voxels: int
