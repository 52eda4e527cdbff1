"""

.. currentmodule:: histo3d.core.histology

:synopsis: Histology slide placement on dissection planes

A slide is first rigidly posed on its plane, then scaled and translated
in-plane so that its landmark pixels land on the matching CT landmarks.

Functions
----------------
* :func:`plane_pose` - plane coordinates (u, v, 0) to world
* :func:`fit_inplane_similarity` - least squares scale and translation from landmark pairs
* :func:`place_slide` - compose both into a pixel to world transform
* :func:`place_all_slides` - place every slide that has a plane
* :func:`rasterize_histology_volume` - write placed labels into a CT shaped label grid

.. contents:: Contents
    :local:
    :backlinks: top

"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np
from scipy import linalg

from histo3d.core import monitor
from histo3d.core.errors import DegenerateLandmarks, Histo3dException, LandmarkOffPlane, NegativeScale, TooFewPairs
from histo3d.core.models import (DissectionPlane, HistologySlide, HistologyVolume, PlacedSlide, RigidTransform,
                                 SimilarityTransform2D, VolumeGrid)
from histo3d.core.schema.manifest import PlacementSettings
from histo3d.core.schema.report import PipelineMessage, SlidePlacementDiagnostics
from histo3d.core.types import SlideLabels

logger = monitor.get_logger(__name__)

#: Landmark spread (mm^2) below which the landmarks are coincident
MIN_LANDMARK_SPREAD = 1e-12


def plane_pose(p: DissectionPlane) -> RigidTransform:
    """
    Rigid transform with columns (u_axis, v_axis, normal) and translation origin

    >>> from histo3d.core.models import DissectionPlane
    >>> plane = DissectionPlane(0, [0, 0, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [1, 0, 0], 0, 0)
    >>> bool((plane_pose(plane).matrix == np.eye(4)).all())
    True
    """
    return RigidTransform.from_rotation_translation(np.column_stack([p.u_axis, p.v_axis, p.normal]), p.origin)


def fit_inplane_similarity(image_points, plane_points, allow_rotation: bool = False) -> SimilarityTransform2D:
    """
    Least squares map ``q = s R p + tau`` from slide millimetres to plane coordinates.
    ``R`` is the identity unless ``allow_rotation``.

    :param image_points: (n, 2) slide points (mm)
    :param plane_points: (n, 2) matching plane coordinates (mm)
    :param allow_rotation: also fit an in-plane rotation
    :return: the :class:`SimilarityTransform2D` with its residual RMS
    :raises TooFewPairs: fewer than 3 pairs
    :raises DegenerateLandmarks: the slide points coincide
    :raises NegativeScale: the landmarks are mirrored (the slide is flipped)
    """
    p = np.asarray(image_points, dtype=float).reshape(-1, 2)
    q = np.asarray(plane_points, dtype=float).reshape(-1, 2)
    if len(p) != len(q) or len(p) < 3:
        raise TooFewPairs(f"In-plane fit needs at least 3 landmark pairs, got {len(p)} and {len(q)}")

    p_mean, q_mean = p.mean(axis=0), q.mean(axis=0)
    p_centered, q_centered = p - p_mean, q - q_mean
    spread = float(np.sum(p_centered ** 2))
    if spread <= MIN_LANDMARK_SPREAD:
        raise DegenerateLandmarks("Slide landmarks coincide")

    rotation = np.eye(2)
    if allow_rotation:
        u, singular, vt = linalg.svd(q_centered.T @ p_centered)
        if linalg.det(u @ vt) < 0:
            raise NegativeScale("Slide landmarks are mirrored; the slide is flipped")
        rotation = u @ vt
        scale = float(singular.sum()) / spread
    else:
        scale = float(np.sum(p_centered * q_centered)) / spread
    if scale <= 0:
        raise NegativeScale(f"Slide landmarks are anti-correlated (scale {scale:.6g}); the slide is flipped")

    translation = q_mean - scale * rotation @ p_mean
    fitted = scale * p @ rotation.T + translation
    residual = float(np.sqrt(np.mean(np.sum((fitted - q) ** 2, axis=1))))
    return SimilarityTransform2D(scale, translation, rotation, residual)


def place_slide(slide: HistologySlide, plane: DissectionPlane,
                settings: Optional[PlacementSettings] = None) -> PlacedSlide:
    """
    Pose a slide on its plane. World landmarks are projected into the plane
    and the in-plane similarity is fitted to the projections.

    :param slide: the slide with at least 3 landmark pairs
    :param plane: its dissection plane
    :param settings: off plane tolerance and the rotation switch
    :return: the :class:`PlacedSlide`
    :raises LandmarkOffPlane: a world landmark is further from the plane than the tolerance
    """
    settings = settings or PlacementSettings()
    distances = np.abs(plane.signed_distance(slide.landmarks_world))
    if np.any(distances > settings.off_plane_tol_mm):
        worst = int(np.argmax(distances))
        raise LandmarkOffPlane(f"Slide {slide.index} landmark {worst} is {distances[worst]:.3g} mm off its plane",
                               index=slide.index)

    try:
        in_plane = fit_inplane_similarity(slide.image_mm(slide.landmarks_image),
                                          plane.to_plane_coords(slide.landmarks_world),
                                          allow_rotation=settings.allow_rotation)
    except Histo3dException as e:
        e.index = slide.index
        raise

    pose = plane_pose(plane)
    # pixel (row, column, 0, 1) -> plane (u, v, 0, 1)
    pixel_to_plane = np.eye(4)
    pixel_to_plane[:2, :2] = in_plane.scale * in_plane.rotation @ np.diag(slide.pixel_spacing)
    pixel_to_plane[:2, 3] = in_plane.translation
    composed = pose.matrix @ pixel_to_plane
    composed.setflags(write=False)

    landmarks = np.column_stack([slide.landmarks_image, np.zeros(len(slide.landmarks_image)),
                                 np.ones(len(slide.landmarks_image))])
    mapped = (landmarks @ composed.T)[:, :3]
    residual = float(np.sqrt(np.mean(np.sum((mapped - slide.landmarks_world) ** 2, axis=1))))

    logger.debug(f"Placed slide {slide.index}: scale {in_plane.scale:.6g}, residual {residual:.3g} mm")
    return PlacedSlide(slide=slide, plane=plane, plane_pose=pose, in_plane=in_plane, composed=composed,
                       residual_rms=residual)


@dataclass
class SlidePlacement(object):
    """Placed slides of one bisection and what went wrong"""
    volume: HistologyVolume
    diagnostics: List[SlidePlacementDiagnostics] = field(default_factory=list)
    messages: List[PipelineMessage] = field(default_factory=list)
    errors: List[Histo3dException] = field(default_factory=list)


class SlidePlacer(monitor.MonitorMixin):
    """
    Place slides on the planes with matching indices
    """

    def __init__(self, planes: Iterable[Optional[DissectionPlane]], settings: Optional[PlacementSettings] = None):
        self.planes: Dict[int, DissectionPlane] = {p.index: p for p in planes if p is not None}
        self.settings = settings or PlacementSettings()

    def place(self, slides: Iterable[HistologySlide], specimen_id: str = "", bisection_id: str = "") -> SlidePlacement:
        placed: List[PlacedSlide] = []
        diagnostics: List[SlidePlacementDiagnostics] = []
        messages: List[PipelineMessage] = []
        errors: List[Histo3dException] = []

        for slide in slides:
            where = ["histology", str(slide.index)]
            plane = self.planes.get(slide.index)
            if plane is None:
                message = self.error(f"Slide {slide.index} has no assigned plane", where)
                if message:
                    messages.append(message)
                continue
            try:
                result = place_slide(slide, plane, self.settings)
            except Histo3dException as e:
                errors.append(e)
                message = self.error(f"Slide {slide.index} was not placed: {e.__class__.__name__} {e}", where)
                if message:
                    messages.append(message)
                continue

            placed.append(result)
            diagnostics.append(SlidePlacementDiagnostics(index=slide.index,
                                                         scale=result.in_plane.scale,
                                                         translation=result.in_plane.translation.tolist(),
                                                         residual_rms=result.residual_rms,
                                                         composed=result.composed.tolist()))

        volume = HistologyVolume(placed, specimen_id=specimen_id, bisection_id=bisection_id)
        diagnostics.sort(key=lambda d: d.index)
        return SlidePlacement(volume, diagnostics, messages, errors)


def place_all_slides(slides: Iterable[HistologySlide], planes: Iterable[Optional[DissectionPlane]],
                     specimen_id: str = "", bisection_id: str = "",
                     settings: Optional[PlacementSettings] = None) -> SlidePlacement:
    """
    Place every slide on the plane with its index. Slides without a plane or
    whose fit fails are left out and reported.
    """
    return SlidePlacer(planes, settings).place(slides, specimen_id, bisection_id)


def rasterize_histology_volume(vol: HistologyVolume, grid: VolumeGrid) -> VolumeGrid:
    """
    Write every labelled pixel of the placed slides into the nearest voxel
    of a label grid with the geometry of ``grid``. Later slides overwrite
    earlier ones.

    :param vol: the placed slides
    :param grid: the reference geometry, usually the fused CT
    :return: a uint8 label :class:`VolumeGrid`
    """
    labels = np.full(grid.voxels.shape, SlideLabels.BACKGROUND, dtype=np.uint8)
    dims = np.array(labels.shape)

    for placed in vol.slides:
        rows, cols = np.nonzero(placed.slide.pixels)
        if len(rows) == 0:
            continue
        world = placed.pixel_to_world(np.column_stack([rows, cols]))
        ijk = np.rint(grid.world_to_index(world)).astype(int)
        inside = np.all((ijk >= 0) & (ijk < dims), axis=1)
        if not np.all(inside):
            logger.warning(f"Slide {placed.slide.index}: {int(np.sum(~inside))} labelled pixels fall outside the grid")
        ijk = ijk[inside]
        labels[ijk[:, 0], ijk[:, 1], ijk[:, 2]] = placed.slide.pixels[rows[inside], cols[inside]]

    return grid.with_voxels(labels)
