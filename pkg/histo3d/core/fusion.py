"""

.. currentmodule:: histo3d.core.fusion

:synopsis: Bisection CT fusion

The two bisection volumes are thresholded to bone, aligned by paired
fiducials on the bisection face, refined by trimmed point-to-point ICP on
the bone surface near the face and stitched onto one grid.

Functions
----------------
* :func:`threshold_segment` - bone mask
* :func:`mask_surface_points` - boundary voxels of a mask
* :func:`face_points` - surface points near the plane through the fiducials
* :func:`fiducial_register` - closed form rigid registration of paired points
* :func:`icp_refine` - trimmed point-to-point ICP
* :func:`stitch_volumes` - resample and blend two volumes on one grid
* :func:`fuse_volumes` - the whole fusion

.. contents:: Contents
    :local:
    :backlinks: top

"""
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, ndimage
from scipy.spatial import cKDTree

from histo3d.core import monitor
from histo3d.core.errors import CollinearFiducials, EmptyMask, NumericalError, TooFewPairs
from histo3d.core.geometry import invert
from histo3d.core.models import PointCloud, RegistrationResult, RigidTransform, VolumeGrid
from histo3d.core.schema.enum import BlendModeEnum
from histo3d.core.schema.manifest import FusionSettings
from histo3d.core.schema.report import FusionDiagnostics
from histo3d.core.types import BACKGROUND_HU, DEFAULT_THRESHOLD_HU

logger = monitor.get_logger(__name__)

#: Relative second singular value below which points are collinear
COLLINEAR_TOL = 1e-9

#: Index slack when deciding whether a sample falls inside a grid
INDEX_SLACK = 1e-6


def threshold_segment(v: VolumeGrid, threshold_hu: float = DEFAULT_THRESHOLD_HU) -> VolumeGrid:
    """Binary uint8 mask of the voxels at or above ``threshold_hu``"""
    return v.with_voxels((np.asarray(v.voxels) >= threshold_hu).astype(np.uint8))


def mask_surface_points(mask: VolumeGrid, stride: int = 1) -> PointCloud:
    """
    World centres of the foreground voxels with at least one background
    6-neighbour. Voxels on the grid border count as boundary.

    :param mask: binary mask
    :param stride: keep every ``stride``-th boundary voxel
    :raises EmptyMask: no foreground
    """
    foreground = np.asarray(mask.voxels) > 0
    if not foreground.any():
        raise EmptyMask("Mask has no foreground voxels")
    interior = ndimage.binary_erosion(foreground, structure=ndimage.generate_binary_structure(3, 1),
                                      border_value=0)
    ijk = np.argwhere(foreground & ~interior)[::stride]
    return PointCloud(mask.index_to_world(ijk))


def fit_plane(points) -> np.ndarray:
    """Least squares plane through points as (centroid, unit normal) rows"""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    centroid = pts.mean(axis=0)
    _, _, vt = linalg.svd(pts - centroid)
    return np.vstack([centroid, vt[-1]])


def face_points(cloud: PointCloud, fiducials, band_mm: Optional[float]) -> PointCloud:
    """
    Surface points within ``band_mm`` of the plane through the fiducials,
    which sit on the bisection face. The whole cloud is kept when
    ``band_mm`` is None or fewer than 3 points fall in the band.
    """
    if band_mm is None:
        return cloud
    centroid, normal = fit_plane(fiducials)
    keep = np.abs((cloud.points - centroid) @ normal) <= band_mm
    if np.count_nonzero(keep) < 3:
        logger.warning(f"Only {np.count_nonzero(keep)} surface points lie within {band_mm} mm of the "
                       f"bisection face; using the whole surface")
        return cloud
    return PointCloud(cloud.points[keep])


def fiducial_register(moving, fixed) -> RegistrationResult:
    """
    Least squares rigid transform taking ``moving`` onto ``fixed`` from the
    SVD of their cross covariance, with the reflection removed.

    :param moving: (n, 3) points, n >= 3
    :param fixed: (n, 3) paired points
    :return: :class:`RegistrationResult` whose ``rms`` is the fiducial registration error
    :raises TooFewPairs: fewer than 3 pairs or unequal lists
    :raises CollinearFiducials: the moving points are collinear
    """
    moving = np.asarray(moving, dtype=float).reshape(-1, 3)
    fixed = np.asarray(fixed, dtype=float).reshape(-1, 3)
    if len(moving) != len(fixed) or len(moving) < 3:
        raise TooFewPairs(f"Registration needs at least 3 point pairs, got {len(moving)} and {len(fixed)}")

    moving_mean, fixed_mean = moving.mean(axis=0), fixed.mean(axis=0)
    moving_centered, fixed_centered = moving - moving_mean, fixed - fixed_mean
    spread = linalg.svd(moving_centered, compute_uv=False)
    if spread[1] <= COLLINEAR_TOL * max(spread[0], 1.0):
        raise CollinearFiducials("Registration points are collinear")

    u, _, vt = linalg.svd(moving_centered.T @ fixed_centered)
    reflection = 1.0 if linalg.det(vt.T @ u.T) > 0 else -1.0
    rotation = vt.T @ np.diag([1.0, 1.0, reflection]) @ u.T
    transform = RigidTransform.from_rotation_translation(rotation, fixed_mean - rotation @ moving_mean)

    rms = float(np.sqrt(np.mean(np.sum((transform.apply(moving) - fixed) ** 2, axis=1))))
    return RegistrationResult(transform, rms)


def icp_refine(moving: PointCloud, fixed_surface: PointCloud, init: Optional[RigidTransform] = None,
               trim_fraction: float = 0.1, tol: float = 1e-6, max_iter: int = 100) -> RegistrationResult:
    """
    Trimmed point-to-point ICP. Every iteration pairs each moved point with
    its nearest fixed point, drops the worst ``trim_fraction`` of the pairs
    and re-solves the rigid transform from the kept ones. An iterate that
    would raise the RMS is rejected.

    :param moving: moving surface points
    :param fixed_surface: fixed surface points
    :param init: initial moving -> fixed transform
    :param trim_fraction: fraction of pairs dropped each iteration
    :param tol: stop once the RMS improves by less than this (mm)
    :param max_iter: iteration cap
    :return: :class:`RegistrationResult`; ``converged`` is False when the cap was hit
    """
    if len(moving) == 0 or len(fixed_surface) == 0:
        raise TooFewPairs("ICP needs non-empty point clouds")

    tree = cKDTree(fixed_surface.points)
    keep = min(len(moving), max(3, int(np.ceil((1.0 - trim_fraction) * len(moving)))))

    def correspondences(transform: RigidTransform):
        distances, indices = tree.query(transform.apply(moving.points))
        kept = np.argsort(distances, kind="stable")[:keep]
        return float(np.sqrt(np.mean(distances[kept] ** 2))), kept, indices[kept]

    transform = init or RigidTransform.identity()
    rms, kept, matches = correspondences(transform)
    history = [rms]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        try:
            candidate = fiducial_register(moving.points[kept], fixed_surface.points[matches]).transform
        except NumericalError as e:
            logger.warning(f"ICP stopped at iteration {iterations}: {e}")
            break
        candidate_rms, candidate_kept, candidate_matches = correspondences(candidate)
        if candidate_rms > rms:
            converged = True
            break

        improvement = rms - candidate_rms
        transform, rms, kept, matches = candidate, candidate_rms, candidate_kept, candidate_matches
        history.append(rms)
        if improvement < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"ICP did not converge in {max_iter} iterations, RMS {rms:.3g} mm")
    return RegistrationResult(transform, rms, iterations=iterations, converged=converged, history=history)


@dataclass
class StitchResult(object):
    """A stitched volume and the number of voxels both sources covered"""
    volume: VolumeGrid
    overlap_voxels: int


def stitch(fixed: VolumeGrid, moving: VolumeGrid, t_fuse: RigidTransform,
           blend: BlendModeEnum = BlendModeEnum.MEAN, background_hu: float = BACKGROUND_HU) -> StitchResult:
    """
    Stitch ``moving`` onto the grid of ``fixed`` extended to the union of
    both volumes. The moving volume is sampled trilinearly through the
    inverse of ``t_fuse``; fixed voxels are copied unchanged.
    """
    fixed_dims = np.array(fixed.dims)
    moving_dims = np.array(moving.dims)
    corners = np.array(list(itertools.product(*[(0, n - 1) for n in moving_dims])), dtype=float)
    moving_corners = fixed.world_to_index(t_fuse.apply(moving.index_to_world(corners)))
    bounds = np.vstack([moving_corners, np.zeros(3), fixed_dims - 1])
    lower = np.floor(bounds.min(axis=0) + INDEX_SLACK).astype(int)
    upper = np.ceil(bounds.max(axis=0) - INDEX_SLACK).astype(int)
    dims = upper - lower + 1

    output = VolumeGrid(np.zeros(tuple(dims)), fixed.spacing, fixed.index_to_world(lower), fixed.direction)

    fixed_values = np.zeros(tuple(dims))
    fixed_covered = np.zeros(tuple(dims), dtype=bool)
    offset = -lower
    region = tuple(slice(o, o + n) for o, n in zip(offset, fixed_dims))
    fixed_values[region] = fixed.voxels
    fixed_covered[region] = True

    ijk = np.indices(tuple(dims)).reshape(3, -1).T
    sample = moving.world_to_index(invert(t_fuse).apply(output.index_to_world(ijk)))
    moving_covered = np.all((sample >= -INDEX_SLACK) & (sample <= moving_dims - 1 + INDEX_SLACK), axis=1)
    moving_values = np.zeros(len(ijk))
    moving_values[moving_covered] = ndimage.map_coordinates(np.asarray(moving.voxels, dtype=float),
                                                            sample[moving_covered].T, order=1, mode="nearest")
    moving_values = moving_values.reshape(tuple(dims))
    moving_covered = moving_covered.reshape(tuple(dims))

    overlap = fixed_covered & moving_covered
    voxels = np.full(tuple(dims), float(background_hu))
    voxels[fixed_covered] = fixed_values[fixed_covered]
    moving_only = moving_covered & ~fixed_covered
    voxels[moving_only] = moving_values[moving_only]
    if blend == BlendModeEnum.MEAN:
        voxels[overlap] = (fixed_values[overlap] + moving_values[overlap]) / 2.0

    overlap_voxels = int(np.count_nonzero(overlap))
    if overlap_voxels == 0:
        logger.warning("Stitched volumes do not overlap")
    logger.debug(f"Stitched grid {tuple(dims)}, {overlap_voxels} overlap voxels")
    return StitchResult(output.with_voxels(voxels), overlap_voxels)


def stitch_volumes(fixed: VolumeGrid, moving: VolumeGrid, t_fuse: RigidTransform,
                   blend: BlendModeEnum = BlendModeEnum.MEAN, background_hu: float = BACKGROUND_HU) -> VolumeGrid:
    """
    Stitched volume of ``fixed`` and ``moving``. Overlapping voxels are
    averaged, or taken from ``fixed`` with ``BlendModeEnum.FIXED``; voxels
    neither volume covers are background.

    :param t_fuse: moving world -> fixed world
    """
    return stitch(fixed, moving, t_fuse, blend, background_hu).volume


@dataclass
class FusionResult(object):
    """Outcome of fusing two bisection volumes"""
    volume: VolumeGrid
    t_fuse: RigidTransform
    fiducial: RegistrationResult
    icp: RegistrationResult
    diagnostics: FusionDiagnostics


def fuse_volumes(fixed: VolumeGrid, moving: VolumeGrid, fiducials_fixed, fiducials_moving,
                 settings: Optional[FusionSettings] = None) -> FusionResult:
    """
    Fuse two bisection volumes: fiducial registration, ICP refinement on the
    bone surface near the bisection face, stitching.

    :param fixed: fixed bisection volume
    :param moving: moving bisection volume
    :param fiducials_fixed: (n, 3) fiducials on the fixed bisection face
    :param fiducials_moving: the matching (n, 3) moving fiducials
    :param settings: fusion settings
    """
    settings = settings or FusionSettings()

    token = monitor.set_ctx_histo3d_where(["fusion", "fiducials"])
    try:
        fiducial = fiducial_register(fiducials_moving, fiducials_fixed)
        logger.info(f"Fiducial registration error {fiducial.rms:.3g} mm")

        monitor.set_ctx_histo3d_where(["fusion", "surface"])
        fixed_surface = face_points(mask_surface_points(threshold_segment(fixed, settings.threshold_hu),
                                                        settings.surface_stride),
                                    fiducials_fixed, settings.face_band_mm)
        moving_surface = face_points(mask_surface_points(threshold_segment(moving, settings.threshold_hu),
                                                         settings.surface_stride),
                                     fiducials_moving, settings.face_band_mm)

        monitor.set_ctx_histo3d_where(["fusion", "icp"])
        icp = icp_refine(moving_surface, fixed_surface, fiducial.transform, settings.trim_fraction,
                         settings.icp_tol, settings.icp_max_iter)
        logger.info(f"ICP RMS {icp.history[0]:.3g} -> {icp.rms:.3g} mm in {icp.iterations} iterations")

        monitor.set_ctx_histo3d_where(["fusion", "stitch"])
        stitched = stitch(fixed, moving, icp.transform, settings.blend, settings.background_hu)
    finally:
        monitor.histo3d_where.reset(token)

    diagnostics = FusionDiagnostics(fre=fiducial.rms, icp_rms=icp.rms, icp_iterations=icp.iterations,
                                    icp_converged=icp.converged, icp_history=icp.history,
                                    fixed_points=len(fixed_surface), moving_points=len(moving_surface),
                                    overlap_voxels=stitched.overlap_voxels)
    return FusionResult(stitched.volume, icp.transform, fiducial, icp, diagnostics)
