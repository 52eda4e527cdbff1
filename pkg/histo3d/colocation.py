"""

.. currentmodule:: histo3d.colocation

:synopsis: histo3d Co-location API

Functions
----------------
* :func:`open_case` - Load a case manifest and return a :class:`CaseColocator` for it


Classes
--------
* :class:`CaseColocator` - Co-location API for one specimen bisection

colocation.CaseColocator Functions
-----------------------------------

* :func:`CaseColocator.fit_curves` - Fit the bisection edge cubics of the case markups (or their variant)
* :func:`CaseColocator.assign_planes` - Compute every dissection plane from the laboratory distances
* :func:`CaseColocator.place_histology` - Pose every slide on its plane
* :func:`CaseColocator.fuse` - Register and stitch the two bisection CT volumes
* :func:`CaseColocator.validate` - Compare slab widths against the caliper measurements
* :func:`CaseColocator.sensitivity` - Compare the planes produced by two spline placements

----------------------------------
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import pandas as pd

from histo3d.core import monitor
from histo3d.core.errors import ParseError
from histo3d.core.fileio import read_markups, read_measurements, read_slide, read_volume
from histo3d.core.fusion import FusionResult, fuse_volumes
from histo3d.core.geometry import fit_parametric_cubic
from histo3d.core.histology import SlidePlacement, place_all_slides, rasterize_histology_volume
from histo3d.core.models import (DissectionMeasurement, FiducialReference, SlabEstimate, ValidationRecord,
                                 VolumeGrid)
from histo3d.core.planes import PlaneAssignment, assign_all_planes
from histo3d.core.schema.manifest import CaseManifest, MarkupRoles
from histo3d.core.schema.report import ErrorReport, PipelineMessage, SensitivityReport
from histo3d.core.validation import (EdgeCurves, compute_estimates, error_report, sensitivity_analysis,
                                     slab_summary, validation_records)

logger = monitor.get_logger(__name__)


@dataclass
class ValidationResult(object):
    """Slab widths of a case and how they compare to the caliper widths"""
    estimates: List[SlabEstimate]
    records: List[ValidationRecord]
    report: ErrorReport
    summary: pd.DataFrame
    messages: List[PipelineMessage] = field(default_factory=list)


def open_case(manifest_path: str, offset_mm: float = 0.0) -> "CaseColocator":
    """
    Load a case manifest

    :param manifest_path: YAML or JSON case manifest
    :param offset_mm: global plane offset added to every measurement offset, e.g. half the blade kerf
    :return: CaseColocator(manifest)
    :raises ParseError: invalid manifest or missing files
    """
    manifest = CaseManifest.load(manifest_path)
    logger.info(f"Loaded case {manifest.specimen_id} from {manifest_path}")
    return CaseColocator(manifest, offset_mm)


class CaseColocator(monitor.MonitorMixin):
    """
    Co-location API
    """

    def __init__(self, manifest: CaseManifest, offset_mm: float = 0.0):
        self._manifest = manifest
        self._offset_mm = offset_mm
        self._measurements: Optional[List[DissectionMeasurement]] = None

    @property
    def manifest(self) -> CaseManifest:
        return self._manifest

    def measurements(self) -> List[DissectionMeasurement]:
        """The laboratory measurements of the case, read once"""
        if self._measurements is None:
            if not self._manifest.measurements:
                raise ParseError(f"Case {self._manifest.specimen_id} lists no measurement table")
            self._measurements = read_measurements(self._manifest.resolve(self._manifest.measurements))
        return self._measurements

    def _fit(self, roles: MarkupRoles) -> Tuple[EdgeCurves, Optional[FiducialReference]]:
        markups = read_markups(self._manifest.resolve(roles.path), self._manifest.coordinate_system)
        edge = fit_parametric_cubic(markups.curve(roles.edge)) if roles.edge else None
        curves = EdgeCurves(fit_parametric_cubic(markups.curve(roles.curve_a)),
                            fit_parametric_cubic(markups.curve(roles.curve_b)), edge)
        f_ref = markups.fiducial(roles.fiducial) if any(f.label == roles.fiducial for f in markups.fiducials) \
            else None
        return curves, f_ref

    def fit_curves(self, variant: bool = False) -> Tuple[EdgeCurves, FiducialReference]:
        """
        Fit the bisection edges (and the outer contour, if the manifest names
        one) to the case markups

        :param variant: fit the alternative spline placement instead
        :return: the fitted curves and the fiducial reference
        :raises ParseError: a named markup is missing
        """
        curves, f_ref = self._fit(self._manifest.markups)
        if variant:
            if self._manifest.variant_markups is None:
                raise ParseError(f"Case {self._manifest.specimen_id} lists no variant markups")
            curves, variant_f_ref = self._fit(self._manifest.variant_markups)
            f_ref = variant_f_ref or f_ref
        if f_ref is None:
            raise ParseError(f"No fiducial labelled '{self._manifest.markups.fiducial}' in "
                             f"{self._manifest.markups.path}")
        logger.info(f"Fitted edges with residual RMS {curves.ca.residual_rms:.3g} and {curves.cb.residual_rms:.3g} mm")
        return curves, f_ref

    @monitor.ctx_case
    def assign_planes(self) -> PlaneAssignment:
        """
        Assign the dissection planes of the case. Failed planes are recorded as
        absent and processing continues.

        :return: the :class:`histo3d.core.planes.PlaneAssignment`
        """
        return self._assign_planes()

    def _assign_planes(self) -> PlaneAssignment:
        curves, f_ref = self.fit_curves()
        return assign_all_planes(curves.ca, curves.cb, f_ref, self.measurements(), self._manifest.solver,
                                 self._offset_mm)

    @monitor.ctx_case
    def place_histology(self, assignment: Optional[PlaneAssignment] = None) -> SlidePlacement:
        """
        Place the case slides on their planes

        :param assignment: previously assigned planes; assigned anew if not given
        :return: the :class:`histo3d.core.histology.SlidePlacement`
        """
        assignment = assignment or self._assign_planes()
        slides = [read_slide(self._manifest.resolve(path), self._manifest.coordinate_system)
                  for path in self._manifest.slides]
        if not slides:
            logger.warning(f"Case {self._manifest.specimen_id} lists no slides")
        placement = place_all_slides(slides, assignment.planes, self._manifest.specimen_id,
                                     self._manifest.bisection_id, self._manifest.placement)
        placement.messages = assignment.messages + placement.messages
        return placement

    def histology_volume(self, placement: SlidePlacement, grid: VolumeGrid) -> VolumeGrid:
        """Labels of the placed slides on the voxel grid of ``grid``"""
        return rasterize_histology_volume(placement.volume, grid)

    @monitor.ctx_case
    def fuse(self) -> FusionResult:
        """
        Fuse the two bisection volumes of the case

        :return: the :class:`histo3d.core.fusion.FusionResult`
        :raises ParseError: the manifest lists no volumes
        """
        volumes = self._manifest.volumes
        if volumes is None:
            raise ParseError(f"Case {self._manifest.specimen_id} lists no volumes")
        default = self._manifest.coordinate_system
        fixed_fiducials = read_markups(self._manifest.resolve(volumes.fixed_fiducials), default).fiducials
        moving_fiducials = read_markups(self._manifest.resolve(volumes.moving_fiducials), default).fiducials
        return fuse_volumes(read_volume(self._manifest.resolve(volumes.fixed)),
                            read_volume(self._manifest.resolve(volumes.moving)),
                            [f.position for f in fixed_fiducials], [f.position for f in moving_fiducials],
                            self._manifest.fusion)

    @monitor.ctx_case
    def validate(self, exclude_curved: bool = False) -> ValidationResult:
        """
        Compare the slab widths between successive planes with the caliper
        widths recorded on the measurements

        :param exclude_curved: leave out slabs bounded by a cut recorded as curved
        :raises InsufficientData: fewer than 2 differences
        """
        curves, f_ref = self.fit_curves()
        assignment = assign_all_planes(curves.ca, curves.cb, f_ref, self.measurements(), self._manifest.solver,
                                       self._offset_mm)
        estimates = compute_estimates(assignment.planes, curves.ca, curves.cb, curves.edge, self._manifest.solver)
        records = validation_records(estimates, self.measurements())
        report = error_report(records, exclude_curved)
        messages = list(assignment.messages)
        if not any(r.d2_phy is not None for r in records) and curves.edge is not None:
            message = self.warn("Outer contour given but no d2 caliper widths recorded", ["validate"])
            if message:
                messages.append(message)
        return ValidationResult(estimates, records, report, slab_summary(estimates), messages)

    @monitor.ctx_case
    def sensitivity(self) -> SensitivityReport:
        """
        Assign planes from both spline placements of the case and compare them

        :raises ParseError: the manifest lists no variant markups
        """
        curves, f_ref = self.fit_curves()
        variant, _ = self.fit_curves(variant=True)
        return sensitivity_analysis(curves, variant, f_ref, self.measurements(), self._manifest.solver)
