"""

.. currentmodule:: histo3d.core.validation

:synopsis: Plane assignment validation and sensitivity statistics

Slab widths are estimated between successive planes on both bisection
edges (d1, d3) and on the outer contour (d2), and compared with caliper
measurements of the same slabs.

Functions
----------------
* :func:`compute_estimates` - d1, d2, d3 between successive planes
* :func:`slab_summary` - the estimates as a table
* :func:`validation_records` - pair estimates with caliper measurements
* :func:`error_report` - difference statistics with curved cut exclusion
* :func:`shapiro_wilk`, :func:`shapiro_wilk_pvalue` - normality of the differences
* :func:`sensitivity_analysis` - plane response to two placements of the input splines

.. contents:: Contents
    :local:
    :backlinks: top

"""
import math
import warnings
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, stats

from histo3d.core import monitor
from histo3d.core.errors import EdgeIntersectionMissing, InsufficientData, NumericalError, OutOfRangeN, ZeroVariance
from histo3d.core.geometry import curve_derivative, curve_eval
from histo3d.core.models import (DissectionMeasurement, DissectionPlane, FiducialReference, ParametricCubic,
                                 SlabEstimate, ValidationRecord)
from histo3d.core.planes import assign_all_planes
from histo3d.core.schema.manifest import SolverSettings
from histo3d.core.schema.report import ChannelStats, ErrorReport, SensitivityReport

logger = monitor.get_logger(__name__)

# Royston polynomial coefficients, highest power first
_C1 = [-2.706056, 4.434685, -2.07119, -0.147981, 0.221157, 0.0]
_C2 = [-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0]
_C3 = [-0.0006714, 0.025054, -0.39978, 0.544]
_C4 = [-0.0020322, 0.062767, -0.77857, 1.3822]
_C5 = [0.0038915, -0.083751, -0.31082, -1.5861]
_C6 = [0.0030302, -0.082676, -0.4803]
_GAMMA = [0.459, -2.273]

#: Smallest sample range treated as non-constant
_SMALL = 1e-19


class EdgeCurves(NamedTuple):
    """Fitted bisection edges and, optionally, the outer contour"""
    ca: ParametricCubic
    cb: ParametricCubic
    edge: Optional[ParametricCubic] = None


def _edge_crossing(plane: DissectionPlane, c_edge: ParametricCubic, settings: SolverSettings) -> np.ndarray:
    """
    Point of ``c_edge`` on ``plane``: the scan sample with the smallest
    plane distance refined by Newton on the signed distance, or bisection
    of the surrounding bracket

    :raises EdgeIntersectionMissing: the curve does not cross the plane
    """
    margin = settings.extrapolation_margin
    ts = np.linspace(-margin, 1.0 + margin, settings.scan_samples)
    values = plane.signed_distance(curve_eval(c_edge, ts))
    nearest = int(np.argmin(np.abs(values)))
    if values[nearest] == 0.0:
        return curve_eval(c_edge, ts[nearest])

    changes = np.flatnonzero(values[:-1] * values[1:] < 0)
    if len(changes) == 0:
        raise EdgeIntersectionMissing(f"Curve '{c_edge.label}' does not cross plane {plane.index}",
                                      index=plane.index)
    k = int(changes[np.argmin(np.abs(changes + 0.5 - nearest))])
    lower, upper = float(ts[k]), float(ts[k + 1])

    def h(t):
        return float(plane.signed_distance(curve_eval(c_edge, t)))

    def h_prime(t):
        return float(curve_derivative(c_edge, t) @ plane.normal)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        root, result = optimize.newton(h, float(ts[nearest]), fprime=h_prime, tol=1e-12,
                                       maxiter=settings.max_newton_iter, full_output=True, disp=False)
    root = float(root)
    if not (result.converged and np.isfinite(root) and lower <= root <= upper
            and abs(h(root)) < settings.newton_tol):
        root = float(optimize.bisect(h, lower, upper, xtol=settings.bisection_tol, maxiter=200))
    return curve_eval(c_edge, root)


def compute_estimates(planes: Iterable[Optional[DissectionPlane]], ca: Optional[ParametricCubic] = None,
                      cb: Optional[ParametricCubic] = None, c_edge: Optional[ParametricCubic] = None,
                      settings: Optional[SolverSettings] = None) -> List[SlabEstimate]:
    """
    Slab widths between successive assigned planes. Absent planes are skipped.

    :param planes: planes in index order
    :param ca: first bisection edge (the anchors already lie on it)
    :param cb: second bisection edge
    :param c_edge: outer contour; without it ``d2`` is None
    :param settings: solver tolerances of the contour crossing
    :return: one :class:`SlabEstimate` per consecutive pair
    """
    settings = settings or SolverSettings()
    assigned = [p for p in planes if p is not None]
    crossings = [_edge_crossing(p, c_edge, settings) for p in assigned] if c_edge is not None and \
        len(assigned) > 1 else None

    estimates = []
    for k, (first, second) in enumerate(zip(assigned, assigned[1:])):
        d2 = float(np.linalg.norm(crossings[k + 1] - crossings[k])) if crossings is not None else None
        estimates.append(SlabEstimate(index_from=first.index, index_to=second.index,
                                      d1=float(np.linalg.norm(second.anchor_a - first.anchor_a)),
                                      d2=d2,
                                      d3=float(np.linalg.norm(second.anchor_b - first.anchor_b))))
    return estimates


def slab_summary(estimates: Iterable[SlabEstimate]) -> pd.DataFrame:
    """Slab widths per plane pair, one row per slab"""
    rows = [{"index_from": e.index_from, "index_to": e.index_to,
             "d1_mm": e.d1, "d2_mm": e.d2 if e.d2 is not None else np.nan, "d3_mm": e.d3}
            for e in estimates]
    summary = pd.DataFrame(rows, columns=["index_from", "index_to", "d1_mm", "d2_mm", "d3_mm"])
    summary["mean_mm"] = summary[["d1_mm", "d2_mm", "d3_mm"]].mean(axis=1)
    return summary


def validation_records(estimates: Iterable[SlabEstimate],
                       measurements: Iterable[DissectionMeasurement]) -> List[ValidationRecord]:
    """
    Pair each slab estimate with the caliper widths recorded on the
    measurement of the cut closing the slab. A slab is curved when either
    of its cuts was recorded as curved.
    """
    by_index: Dict[int, DissectionMeasurement] = {m.index: m for m in measurements}
    records = []
    for e in estimates:
        closing = by_index.get(e.index_to)
        opening = by_index.get(e.index_from)
        curved = bool((closing and closing.curved_cut) or (opening and opening.curved_cut))
        records.append(ValidationRecord(dissection_index=e.index_to,
                                        d1_est=e.d1, d2_est=e.d2, d3_est=e.d3,
                                        d1_phy=closing.d1_phy if closing else None,
                                        d2_phy=closing.d2_phy if closing else None,
                                        d3_phy=closing.d3_phy if closing else None,
                                        curved_cut=curved))
    return records


def _channel_stats(differences: Sequence[float]) -> ChannelStats:
    n = len(differences)
    return ChannelStats(n=n,
                        mean=float(np.mean(differences)) if n else None,
                        stdev=float(np.std(differences, ddof=1)) if n > 1 else None)


def error_report(records: Iterable[ValidationRecord], exclude_curved: bool = False) -> ErrorReport:
    """
    Statistics of estimated minus caliper widths. d1 and d3 are pooled; d2
    is reported separately and included in the overall figures. The
    Shapiro-Wilk statistic is left empty, with a note, when it is undefined.

    >>> from histo3d.core.models import ValidationRecord
    >>> records = [ValidationRecord(i, 10.0 + i, None, 10.0, d1_phy=10.0) for i in (1, 2, 3)]
    >>> report = error_report(records)
    >>> report.mean, report.stdev
    (2.0, 1.0)

    :raises InsufficientData: fewer than 2 differences remain
    """
    pooled: List[float] = []
    d2: List[float] = []
    differences: List[float] = []
    excluded = 0
    for record in records:
        if exclude_curved and record.curved_cut:
            excluded += 1
            continue
        for estimate, physical, channel in ((record.d1_est, record.d1_phy, pooled),
                                            (record.d2_est, record.d2_phy, d2),
                                            (record.d3_est, record.d3_phy, pooled)):
            if estimate is not None and physical is not None:
                channel.append(estimate - physical)
                differences.append(estimate - physical)

    if len(differences) < 2:
        raise InsufficientData(f"{len(differences)} differences; at least 2 are needed")

    notes = []
    shapiro_w: Optional[float] = None
    shapiro_p: Optional[float] = None
    try:
        shapiro_w, shapiro_p = shapiro_wilk_pvalue(differences)
    except NumericalError as e:
        notes.append(f"Shapiro-Wilk W not computed: {e.__class__.__name__} {e}")

    return ErrorReport(n=len(differences),
                       mean=float(np.mean(differences)),
                       stdev=float(np.std(differences, ddof=1)),
                       pooled_d1_d3=_channel_stats(pooled),
                       d2=_channel_stats(d2),
                       shapiro_w=shapiro_w,
                       shapiro_p=shapiro_p,
                       excluded_curved=excluded,
                       differences=differences,
                       notes=notes)


def _prepare(samples) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(x)
    if n < 3 or n > 5000:
        raise OutOfRangeN(f"Shapiro-Wilk needs 3 to 5000 samples, got {n}")
    if x[-1] - x[0] < _SMALL:
        raise ZeroVariance("Samples are constant")
    return x


def _coefficients(n: int) -> np.ndarray:
    """Antisymmetric Shapiro-Wilk coefficients, ascending order"""
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])

    m = np.asarray(stats.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25)), dtype=float)
    summ2 = float(np.sum(m ** 2))
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)

    a_last = float(np.polyval(_C1, rsn)) + m[-1] / ssumm2
    if n > 5:
        a_second = float(np.polyval(_C2, rsn)) + m[-2] / ssumm2
        phi = (summ2 - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * a_last ** 2 - 2 * a_second ** 2)
        a = m / math.sqrt(phi)
        a[-1], a[-2] = a_last, a_second
        a[0], a[1] = -a_last, -a_second
    else:
        phi = (summ2 - 2 * m[-1] ** 2) / (1 - 2 * a_last ** 2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = a_last, -a_last
    return a


def shapiro_wilk(samples) -> float:
    """
    Shapiro-Wilk W using Royston's approximation of the coefficients

    :param samples: 3 to 5000 values
    :return: W in (0, 1]
    :raises OutOfRangeN: fewer than 3 or more than 5000 values
    :raises ZeroVariance: all values equal
    """
    x = _prepare(samples)
    a = _coefficients(len(x))
    centered = (x - x.mean()) / (x[-1] - x[0])
    w = float(np.dot(a, centered) ** 2 / np.sum(centered ** 2))
    return min(w, 1.0)


def shapiro_wilk_pvalue(samples) -> Tuple[float, float]:
    """
    W and its p-value from Royston's normalizing transformation
    (exact for 3 samples)

    :return: (W, p)
    """
    x = _prepare(samples)
    n = len(x)
    w = shapiro_wilk(x)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, float(min(max(p, 0.0), 1.0))

    y = math.log(1.0 - w) if w < 1.0 else -math.inf
    if n <= 11:
        gamma = float(np.polyval(_GAMMA, n))
        if y >= gamma:
            return w, _SMALL
        y = -math.log(gamma - y) if y > -math.inf else -math.inf
        m = float(np.polyval(_C3, n))
        s = math.exp(float(np.polyval(_C4, n)))
    else:
        log_n = math.log(n)
        m = float(np.polyval(_C5, log_n))
        s = math.exp(float(np.polyval(_C6, log_n)))
    return w, float(stats.norm.sf((y - m) / s))


def rotation_between(normal_a: np.ndarray, normal_b: np.ndarray) -> float:
    """Angle between two unit normals in degrees, 0 for identical normals"""
    return math.degrees(2.0 * math.atan2(float(np.linalg.norm(normal_a - normal_b)),
                                         float(np.linalg.norm(normal_a + normal_b))))


class SensitivityAnalysis(monitor.MonitorMixin):
    """
    Compare the planes and slab widths of two placements of the input splines
    """

    def __init__(self, f_ref: FiducialReference, settings: Optional[SolverSettings] = None):
        self.f_ref = f_ref
        self.settings = settings or SolverSettings()

    def run(self, variant_a: EdgeCurves, variant_b: EdgeCurves,
            measurements: Sequence[DissectionMeasurement]) -> SensitivityReport:
        assignment_a = assign_all_planes(variant_a.ca, variant_a.cb, self.f_ref, measurements, self.settings)
        assignment_b = assign_all_planes(variant_b.ca, variant_b.cb, self.f_ref, measurements, self.settings)
        report = SensitivityReport(messages=assignment_a.messages + assignment_b.messages)

        planes_a = {p.index: p for p in assignment_a.assigned}
        planes_b = {p.index: p for p in assignment_b.assigned}
        common = sorted(set(planes_a) & set(planes_b))
        for index in sorted(set(planes_a) ^ set(planes_b)):
            message = self.warn(f"Plane {index} is assigned in one variant only", ["sensitivity", str(index)])
            if message:
                report.messages.append(message)

        report.plane_indices = common
        report.per_plane_rotation = [rotation_between(planes_a[i].normal, planes_b[i].normal) for i in common]

        both_edges = variant_a.edge is not None and variant_b.edge is not None
        estimates_a = compute_estimates([planes_a[i] for i in common], c_edge=variant_a.edge if both_edges else None,
                                        settings=self.settings)
        estimates_b = compute_estimates([planes_b[i] for i in common], c_edge=variant_b.edge if both_edges else None,
                                        settings=self.settings)
        translations = []
        for a, b in zip(estimates_a, estimates_b):
            translations.append(abs(a.d1 - b.d1))
            if a.d2 is not None and b.d2 is not None:
                translations.append(abs(a.d2 - b.d2))
            translations.append(abs(a.d3 - b.d3))
        report.per_measurement_translation = translations

        report.max_rotation = max(report.per_plane_rotation, default=0.0)
        if translations:
            report.mean_translation = float(np.mean(translations))
            report.stdev_translation = float(np.std(translations, ddof=1)) if len(translations) > 1 else 0.0
        logger.info(f"Sensitivity over {len(common)} planes: max rotation {report.max_rotation:.3g} degrees, "
                    f"mean translation {report.mean_translation:.3g} mm")
        return report


def sensitivity_analysis(variant_a: EdgeCurves, variant_b: EdgeCurves, f_ref: FiducialReference,
                         measurements: Sequence[DissectionMeasurement],
                         settings: Optional[SolverSettings] = None) -> SensitivityReport:
    """
    Assign planes from two placements of the input splines and report how
    far the planes rotate and the slab widths change between them.
    """
    return SensitivityAnalysis(f_ref, settings).run(variant_a, variant_b, measurements)
