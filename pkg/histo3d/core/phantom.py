"""

.. currentmodule:: histo3d.core.phantom

:synopsis: Synthetic specimens and voxel phantoms with exact ground truth

Synthetic bisection edges are exact cubics whose markup control points sit
at parameters equal to their own normalized chord length, so fitting them
reproduces the generating cubic. Truth planes are built with the same rule
plane assignment uses.

Functions
----------------
* :func:`generate` - a synthetic specimen: markups, truth planes, measurements, optional slides
* :func:`render_phantom` - a voxelized bone shaft split into two displaced bisection volumes

.. contents:: Contents
    :local:
    :backlinks: top

"""
import math
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy import optimize
from scipy.spatial.transform import Rotation

from histo3d.core import monitor
from histo3d.core.errors import InvalidParams
from histo3d.core.geometry import chord_parameters, curve_eval, curve_tangent, invert
from histo3d.core.histology import plane_pose
from histo3d.core.models import (DissectionMeasurement, DissectionPlane, FiducialReference, HistologySlide,
                                 MarkupCurve, ParametricCubic, PhantomPair, RigidTransform, SyntheticSpecimen,
                                 VolumeGrid)
from histo3d.core.planes import plane_from_anchors
from histo3d.core.schema.enum import NoiseModelEnum, SpecimenShapeEnum
from histo3d.core.schema.manifest import PhantomParams, SynthParams, SolverSettings
from histo3d.core.types import PhantomHU, SlideLabels
from histo3d.core.validation import compute_estimates

logger = monitor.get_logger(__name__)

#: Rendered slide resolution (mm per pixel)
SLIDE_PIXEL_MM = 0.2

#: Tissue margin around the rendered cross-section (mm)
SLIDE_MARGIN_MM = 2.0

#: Bezier handle length of a quarter circle
QUARTER_ARC_HANDLE = 4.0 / 3.0 * (math.sqrt(2.0) - 1.0)


def _params(params, model):
    if isinstance(params, model):
        return params
    try:
        return model(**(params or {}))
    except ValidationError as e:
        raise InvalidParams(f"Invalid {model.__name__}: {e}")


def _bezier_to_power(control: np.ndarray) -> np.ndarray:
    """(4, 3) Bezier control points -> (3, 4) power basis coefficients"""
    p0, p1, p2, p3 = control
    return np.column_stack([p0, 3 * (p1 - p0), 3 * (p0 - 2 * p1 + p2), -p0 + 3 * p1 - 3 * p2 + p3])


def _edges(p: SynthParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Power basis coefficients of edge a, edge b, the outer contour and the fiducial position"""
    width, depth = p.width_mm, p.width_mm
    if p.shape == SpecimenShapeEnum.PARALLEL_LINES:
        length = p.extent_mm
        a = np.array([[0, length, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
        b = np.array([[0, length, 0, 0], [width, 0, 0, 0], [0, 0, 0, 0]], dtype=float)
        edge = np.array([[0, length, 0, 0], [width / 2, 0, 0, 0], [-depth, 0, 0, 0]], dtype=float)
        return a, b, edge, np.zeros(3)

    if p.shape == SpecimenShapeEnum.HALF_CYLINDER:
        radius = p.radius_mm
        k = QUARTER_ARC_HANDLE
        unit = np.array([[1, 0, 0], [1, k, 0], [k, 1, 0], [0, 1, 0]], dtype=float)
        a = _bezier_to_power(radius * unit)
        b = _bezier_to_power((radius + width) * unit)
        edge = _bezier_to_power((radius + width / 2) * unit - [0, 0, depth])
        return a, b, edge, np.array([radius, 0.0, 0.0])

    # bent prism: an S-bend in z, the second edge diverging in y
    length, rise, spread = p.extent_mm, p.radius_mm / 2, width / 2
    a = np.array([[0, length, 0, 0], [0, 0, 0, 0], [0, 0, 3 * rise, -2 * rise]], dtype=float)
    b = np.array([[0, length, 0, 0], [width, spread, 0, 0], [0, 0, 3 * rise, -2 * rise]], dtype=float)
    edge = np.array([[0, length, 0, 0], [width / 2, spread / 2, 0, 0], [-depth, 0, 3 * rise, -2 * rise]],
                    dtype=float)
    return a, b, edge, np.zeros(3)


def _chord_consistent(coefficients: np.ndarray, count: int) -> np.ndarray:
    """
    Parameters s (first 0, last 1) at which the cubic's points have
    normalized chord length s
    """
    cubic = ParametricCubic(coefficients)

    def mismatch(interior):
        s = np.concatenate([[0.0], interior, [1.0]])
        return chord_parameters(curve_eval(cubic, s))[1:-1] - interior

    guess = np.linspace(0.0, 1.0, count)[1:-1]
    interior, _, ier, message = optimize.fsolve(mismatch, guess, xtol=1e-14, full_output=True)
    if ier != 1:
        logger.debug(f"Chord parameter solve: {message}")
    return np.concatenate([[0.0], interior, [1.0]])


def _curve(coefficients: np.ndarray, count: int, label: str) -> Tuple[ParametricCubic, MarkupCurve]:
    s = _chord_consistent(coefficients, count)
    cubic = ParametricCubic(coefficients, s, 0.0, label)
    return cubic, MarkupCurve(label, curve_eval(cubic, s))


def _cut_positions(p: SynthParams, rng: np.random.Generator) -> np.ndarray:
    if p.cut_positions is not None:
        positions = np.array(p.cut_positions, dtype=float)
        if positions[0] <= 0.0 or positions[-1] > 1.0:
            raise InvalidParams("Cut positions must lie in (0, 1]")
        return positions
    spacing = 1.0 / (p.cut_count + 1)
    positions = spacing * np.arange(1, p.cut_count + 1)
    if p.jitter > 0:
        positions = positions + p.jitter * spacing * rng.uniform(-1.0, 1.0, p.cut_count)
    return positions


def _render_slide(plane: DissectionPlane, depth: float, shrink: float, index: int, landmark_sigma: float,
                  rng: np.random.Generator) -> Tuple[HistologySlide, np.ndarray]:
    """
    Label the cross-section of a slab face: bone between the anchors down
    to ``depth`` and a tumour disc in it. Slide millimetres are ``shrink``
    times tissue millimetres.
    """
    half = float(np.linalg.norm(plane.anchor_b - plane.anchor_a)) / 2
    # plane coordinates of pixel (0, 0)
    corner = np.array([-half - SLIDE_MARGIN_MM, -depth - SLIDE_MARGIN_MM])
    rows = int(math.ceil((2 * half + 2 * SLIDE_MARGIN_MM) * shrink / SLIDE_PIXEL_MM)) + 1
    cols = int(math.ceil((depth + 2 * SLIDE_MARGIN_MM) * shrink / SLIDE_PIXEL_MM)) + 1

    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    u = corner[0] + r * SLIDE_PIXEL_MM / shrink
    v = corner[1] + c * SLIDE_PIXEL_MM / shrink
    pixels = np.zeros((rows, cols), dtype=np.uint8)
    pixels[(np.abs(u) <= half) & (v >= -depth) & (v <= 0)] = SlideLabels.BONE
    pixels[(u - half / 3) ** 2 + (v + depth / 2) ** 2 <= (min(half, depth) / 4) ** 2] = SlideLabels.TUMOUR

    pixel_to_plane = np.eye(4)
    pixel_to_plane[0, 0] = pixel_to_plane[1, 1] = SLIDE_PIXEL_MM / shrink
    pixel_to_plane[:2, 3] = corner
    truth = plane_pose(plane).matrix @ pixel_to_plane

    landmarks_image = np.array([[0, 0], [rows - 1, 0], [0, cols - 1], [rows - 1, cols - 1]], dtype=float)
    landmarks_world = (np.column_stack([landmarks_image, np.zeros(4), np.ones(4)]) @ truth.T)[:, :3]
    if landmark_sigma > 0:
        in_plane = rng.normal(0.0, landmark_sigma, (4, 2))
        landmarks_world = landmarks_world + in_plane[:, :1] * plane.u_axis + in_plane[:, 1:] * plane.v_axis

    slide = HistologySlide(index=index, pixels=pixels, pixel_spacing=np.full(2, SLIDE_PIXEL_MM),
                           landmarks_image=landmarks_image, landmarks_world=landmarks_world)
    return slide, truth


def generate(params: Union[SynthParams, Dict, None] = None) -> SyntheticSpecimen:
    """
    Generate a synthetic specimen. The same parameters and seed always
    produce the same specimen.

    :param params: :class:`SynthParams` or a dictionary of its fields
    :raises InvalidParams: invalid parameters
    """
    p = _params(params, SynthParams)
    rng = np.random.default_rng(p.seed)

    a, b, edge, fiducial = _edges(p)
    curve_a, markup_a = _curve(a, p.control_points, "edge_a")
    curve_b, markup_b = _curve(b, p.control_points, "edge_b")
    curve_edge, markup_edge = _curve(edge, p.control_points, "edge_outer")
    f_ref = FiducialReference(fiducial)

    planes: List[DissectionPlane] = []
    for index, t in enumerate(_cut_positions(p, rng), start=1):
        planes.append(plane_from_anchors(index, curve_eval(curve_a, t), curve_eval(curve_b, t),
                                         curve_tangent(curve_a, t), curve_tangent(curve_b, t), t, t))

    widths = {e.index_to: e for e in compute_estimates(planes, c_edge=curve_edge, settings=SolverSettings())}
    distances = [(float(np.linalg.norm(pl.anchor_a - f_ref.position)),
                  float(np.linalg.norm(pl.anchor_b - f_ref.position))) for pl in planes]

    truth_measurements = []
    for pl, (d_a, d_b) in zip(planes, distances):
        slab = widths.get(pl.index)
        truth_measurements.append(DissectionMeasurement(index=pl.index, d_a=d_a, d_b=d_b,
                                                        d1_phy=slab.d1 if slab else None,
                                                        d2_phy=slab.d2 if slab else None,
                                                        d3_phy=slab.d3 if slab else None))

    sigma = p.noise_sigma_mm
    measurements = truth_measurements
    if sigma > 0:
        count = len(planes)
        if p.noise_model == NoiseModelEnum.CUMULATIVE:
            shift = np.cumsum(rng.normal(0.0, sigma, count))
            noise_a = noise_b = shift
        else:
            noise_a = rng.normal(0.0, sigma, count)
            noise_b = rng.normal(0.0, sigma, count)
        caliper = rng.normal(0.0, sigma, (count, 3))
        measurements = []
        for k, m in enumerate(truth_measurements):
            measurements.append(DissectionMeasurement(
                index=m.index, d_a=max(m.d_a + noise_a[k], 0.0), d_b=max(m.d_b + noise_b[k], 0.0),
                d1_phy=m.d1_phy + caliper[k, 0] if m.d1_phy is not None else None,
                d2_phy=m.d2_phy + caliper[k, 1] if m.d2_phy is not None else None,
                d3_phy=m.d3_phy + caliper[k, 2] if m.d3_phy is not None else None))

    slides: List[HistologySlide] = []
    truth_slide_transforms: List[np.ndarray] = []
    if p.slides:
        for pl in planes:
            slide, truth = _render_slide(pl, p.width_mm, p.shrink_factor, pl.index, p.landmark_sigma_mm, rng)
            slides.append(slide)
            truth_slide_transforms.append(truth)

    variant_markups: Optional[Tuple[MarkupCurve, MarkupCurve, MarkupCurve]] = None
    if p.variant_jitter_mm > 0:
        j = p.variant_jitter_mm
        jittered_a, jittered_b, jittered_edge = (MarkupCurve(m.label, m.points + rng.uniform(-j, j, m.points.shape))
                                                 for m in (markup_a, markup_b, markup_edge))
        variant_markups = (jittered_a, jittered_b, jittered_edge)

    logger.info(f"Generated {p.shape} specimen with {len(planes)} cuts (seed {p.seed})")
    return SyntheticSpecimen(shape=p.shape, seed=p.seed,
                             markups=(markup_a, markup_b, markup_edge),
                             curves=(curve_a, curve_b, curve_edge),
                             f_ref=f_ref, planes=planes, measurements=measurements,
                             truth_measurements=truth_measurements,
                             slides=slides, truth_slide_transforms=truth_slide_transforms,
                             variant_markups=variant_markups)


def _truth_displacement(p: PhantomParams, rng: np.random.Generator) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    rotation = Rotation.from_rotvec(math.radians(p.rotation_deg) * axis).as_matrix()
    return RigidTransform.from_rotation_translation(rotation, p.translation_mm * direction)


def render_phantom(params: Union[PhantomParams, Dict, None] = None) -> PhantomPair:
    """
    Voxelize a hollow bone shaft along x in soft tissue and split it at
    z = 0 into two bisection volumes. Both halves keep the z = 0 slice. The
    moving half is displaced by a random rigid transform of the requested
    angle and distance; ``t_fuse`` undoes it. Fiducials are placed on the
    cortex of the z = 0 face.

    :param params: :class:`PhantomParams` or a dictionary of its fields
    :raises InvalidParams: invalid parameters
    """
    p = _params(params, PhantomParams)
    rng = np.random.default_rng(p.seed)
    h = p.voxel_mm
    spacing = np.full(3, h)

    margin = int(math.ceil(p.soft_radius_mm / h)) + 2
    nx = int(round(p.length_mm / h)) + 5
    origin = np.array([-2 * h, -margin * h, -margin * h])
    x, y, z = np.meshgrid(origin[0] + h * np.arange(nx), origin[1] + h * np.arange(2 * margin + 1),
                          origin[2] + h * np.arange(2 * margin + 1), indexing="ij")

    radius = np.sqrt(y ** 2 + z ** 2)
    shaft = (x >= 0) & (x <= p.length_mm)
    voxels = np.full(x.shape, PhantomHU.AIR, dtype=np.int16)
    voxels[shaft & (radius <= p.soft_radius_mm)] = PhantomHU.SOFT
    voxels[shaft & (radius < p.inner_radius_mm)] = PhantomHU.MARROW
    voxels[shaft & (radius >= p.inner_radius_mm) & (radius <= p.outer_radius_mm)] = PhantomHU.CORTICAL
    whole = VolumeGrid(voxels, spacing, origin)

    displacement = _truth_displacement(p, rng)
    fixed = VolumeGrid(voxels[:, :, :margin + 1], spacing, origin)
    moving_origin = np.array([origin[0], origin[1], 0.0])
    moving = VolumeGrid(voxels[:, :, margin:], spacing, displacement.apply(moving_origin),
                        displacement.rotation)

    mid = (p.inner_radius_mm + p.outer_radius_mm) / 2
    length = p.length_mm
    fiducials_fixed = np.array([[0.2 * length, mid, 0.0], [0.8 * length, mid, 0.0],
                                [0.5 * length, -mid, 0.0], [0.3 * length, -mid, 0.0]])
    fiducials_moving = displacement.apply(fiducials_fixed)
    if p.fiducial_sigma_mm > 0:
        fiducials_moving = fiducials_moving + rng.normal(0.0, p.fiducial_sigma_mm, fiducials_moving.shape)

    cortical = int(np.count_nonzero(voxels == PhantomHU.CORTICAL))
    logger.info(f"Rendered phantom {voxels.shape}, {cortical} cortical voxels")
    return PhantomPair(whole=whole, fixed=fixed, moving=moving, t_fuse=invert(displacement),
                       fiducials_fixed=fiducials_fixed, fiducials_moving=fiducials_moving,
                       cortical_voxels=cortical)
