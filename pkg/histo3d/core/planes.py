"""

.. currentmodule:: histo3d.core.planes

:synopsis: Dissection plane assignment from laboratory distance measurements

Each bandsaw cut is modelled as a flat plane through the two points of the
bisection edges that lie at the measured distances from the fiducial
reference. The plane contains the chord between those anchors and is
perpendicular to the local direction of the bisection.

Functions
----------------
* :func:`solve_intersection` - root of ``|C(t) - f_ref| - d`` on a fitted edge
* :func:`plane_from_anchors` - plane through two anchors, perpendicular to the averaged edge tangents
* :func:`assign_plane` - one plane from one measurement
* :func:`assign_all_planes` - every plane of a measurement set, seeded in index order

.. contents:: Contents
    :local:
    :backlinks: top

"""
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy import optimize

from histo3d.core import monitor
from histo3d.core.errors import (CoincidentAnchors, DegenerateTangents, Histo3dException, NegativeDistance, NoRoot,
                                 TangentParallelToChord)
from histo3d.core.geometry import curve_derivative, curve_eval, curve_tangent, offset_plane
from histo3d.core.models import (DissectionMeasurement, DissectionPlane, FiducialReference, IntersectionSolution,
                                 ParametricCubic)
from histo3d.core.schema.enum import PlaneStatusEnum, RootMethodEnum
from histo3d.core.schema.manifest import SolverSettings
from histo3d.core.schema.report import AnchorDiagnostics, PipelineMessage, PlaneDiagnostics
from histo3d.core.types import DEGENERATE_DIRECTION, MIN_ANCHOR_CHORD_MM

logger = monitor.get_logger(__name__)

#: Derivatives of g below this stop Newton iteration
FLAT_DERIVATIVE = 1e-12

#: Newton roots this far before the seed still count as after it
SEED_TOL = 1e-12


def _scan_brackets(c: ParametricCubic, position: np.ndarray, d: float,
                   settings: SolverSettings) -> Tuple[List[Tuple[float, float]], float]:
    """
    Sign changes of g on a dense grid over the domain and its margin

    :return: ordered (lower, upper) parameter brackets and the grid step
    """
    margin = settings.extrapolation_margin
    ts = np.linspace(-margin, 1.0 + margin, settings.scan_samples)
    values = np.linalg.norm(curve_eval(c, ts) - position, axis=1) - d

    brackets = []
    for k in np.flatnonzero(values == 0.0):
        brackets.append((float(ts[k]), float(ts[k])))
    for k in np.flatnonzero(values[:-1] * values[1:] < 0):
        brackets.append((float(ts[k]), float(ts[k + 1])))
    brackets.sort()
    return brackets, float(ts[1] - ts[0])


def _newton(c: ParametricCubic, position: np.ndarray, d: float, t_seed: float,
            settings: SolverSettings) -> Tuple[float, int, bool]:
    """Newton iteration on g with the analytic derivative"""

    def g(t):
        return float(np.linalg.norm(curve_eval(c, t) - position)) - d

    def g_prime(t):
        offset = curve_eval(c, t) - position
        distance = np.linalg.norm(offset)
        if distance == 0.0:
            return 0.0
        slope = float(offset @ curve_derivative(c, t) / distance)
        return slope if abs(slope) >= FLAT_DERIVATIVE else 0.0

    with warnings.catch_warnings():
        # zero derivative and divergence are reported through the convergence flag
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            root, result = optimize.newton(g, t_seed, fprime=g_prime, tol=1e-12,
                                           maxiter=settings.max_newton_iter, full_output=True, disp=False)
        except (ArithmeticError, ValueError):
            return float("nan"), settings.max_newton_iter, False

    root = float(root)
    converged = bool(np.isfinite(root)) and abs(g(root)) < settings.newton_tol
    return root, int(result.iterations), converged


def solve_intersection(c: ParametricCubic, f_ref: FiducialReference, d: float, t_seed: float = 0.0,
                       settings: Optional[SolverSettings] = None) -> IntersectionSolution:
    """
    Find the point on ``c`` at distance ``d`` from ``f_ref``.

    Newton iteration from ``t_seed`` is tried first. Its root is kept when it
    lies in the domain, at or after the seed and no later than the first
    scanned bracket that ends at or after the seed. Otherwise Newton is
    restarted once from inside that bracket, and if that fails too the
    bracket is bisected. When several roots exist the smallest one after the seed is
    returned.

    >>> from histo3d.core.models import FiducialReference, ParametricCubic
    >>> line = ParametricCubic([[0, 100, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]])
    >>> round(solve_intersection(line, FiducialReference([0, 0, 0]), 25.0).t, 6)
    0.25

    :param c: fitted edge
    :param f_ref: fiducial reference
    :param d: laboratory distance (mm)
    :param t_seed: parameter to search from, typically the previous plane's
    :param settings: solver tolerances
    :return: the :class:`IntersectionSolution`
    :raises NoRoot: ``d`` is not reachable on the domain and its extrapolation margin
    """
    settings = settings or SolverSettings()
    if d < 0:
        raise NegativeDistance(f"Distance {d} mm is negative")

    position = f_ref.position
    lower, upper = -settings.extrapolation_margin, 1.0 + settings.extrapolation_margin
    brackets, step = _scan_brackets(c, position, d, settings)
    expected = next((b for b in brackets if b[1] >= t_seed), None)

    def accepted(root: float, converged: bool) -> bool:
        return converged and lower <= root <= upper and root >= t_seed - SEED_TOL and \
            (expected is None or root <= expected[1] + step)

    root, iterations, converged = _newton(c, position, d, t_seed, settings)
    newton_ok = accepted(root, converged)
    if not newton_ok and expected is not None:
        # restart inside the first bracket after the seed
        restart = max((expected[0] + expected[1]) / 2.0, t_seed)
        root, restart_iterations, converged = _newton(c, position, d, restart, settings)
        iterations += restart_iterations
        newton_ok = accepted(root, converged)
        if newton_ok:
            logger.debug(f"Newton on curve '{c.label}' restarted from t={restart:.6g}")

    if newton_ok:
        t, method = root, RootMethodEnum.NEWTON
    else:
        if expected is None:
            if not brackets:
                raise NoRoot(f"Distance {d:.6g} mm is not reachable on curve '{c.label}'")
            expected = brackets[-1]
            logger.warning(f"No root of curve '{c.label}' at d={d:.6g} mm lies after t={t_seed:.6g}; "
                           f"using the last root before it")
        t, iterations = _bisect(c, position, d, expected, settings)
        method = RootMethodEnum.BISECTION_FALLBACK
        logger.debug(f"Bisection fallback on curve '{c.label}' in [{expected[0]:.6g}, {expected[1]:.6g}]")

    point = curve_eval(c, t)
    residual = abs(float(np.linalg.norm(point - position)) - d)
    tolerance = settings.newton_tol if method == RootMethodEnum.NEWTON else settings.bisection_residual
    if residual >= tolerance:
        raise NoRoot(f"Root of curve '{c.label}' at d={d:.6g} mm has residual {residual:.3g} mm")

    extrapolated = not 0.0 <= t <= 1.0
    if extrapolated:
        logger.warning(f"Root t={t:.6g} of curve '{c.label}' at d={d:.6g} mm lies outside the marked curve")
    if len(brackets) > 1:
        logger.debug(f"{len(brackets)} roots of curve '{c.label}' at d={d:.6g} mm; kept t={t:.6g}")

    return IntersectionSolution(t=t, point=point, residual=residual, iterations=iterations, method=method,
                                bracket_count=len(brackets), extrapolated=extrapolated)


def _bisect(c: ParametricCubic, position: np.ndarray, d: float, bracket: Tuple[float, float],
            settings: SolverSettings) -> Tuple[float, int]:
    a, b = bracket
    if a == b:
        return a, 0

    def g(t):
        return float(np.linalg.norm(curve_eval(c, t) - position)) - d

    root, result = optimize.bisect(g, a, b, xtol=settings.bisection_tol, maxiter=200,
                                   full_output=True, disp=False)
    return float(root), int(result.iterations)


def plane_from_anchors(index: int, anchor_a: np.ndarray, anchor_b: np.ndarray,
                       tangent_a: np.ndarray, tangent_b: np.ndarray,
                       param_a: float = 0.0, param_b: float = 0.0) -> DissectionPlane:
    """
    Plane through both anchors whose normal is the averaged unit tangent
    made orthogonal to the chord. ``u_axis`` runs along the chord.

    :raises CoincidentAnchors: the anchors are closer than 1e-3 mm
    :raises DegenerateTangents: the unit tangents cancel
    :raises TangentParallelToChord: the averaged tangent runs along the chord
    """
    anchor_a = np.asarray(anchor_a, dtype=float)
    anchor_b = np.asarray(anchor_b, dtype=float)
    chord = anchor_b - anchor_a
    length = np.linalg.norm(chord)
    if length <= MIN_ANCHOR_CHORD_MM:
        raise CoincidentAnchors(f"Plane {index} anchors are {length:.3g} mm apart", index=index)
    u_axis = chord / length

    average = tangent_a / np.linalg.norm(tangent_a) + tangent_b / np.linalg.norm(tangent_b)
    if np.linalg.norm(average) < DEGENERATE_DIRECTION:
        raise DegenerateTangents(f"Plane {index} edge tangents oppose each other", index=index)
    average = average / np.linalg.norm(average)

    projected = average - (average @ u_axis) * u_axis
    if np.linalg.norm(projected) < DEGENERATE_DIRECTION:
        raise TangentParallelToChord(f"Plane {index} averaged tangent is parallel to the anchor chord", index=index)
    normal = projected / np.linalg.norm(projected)

    return DissectionPlane(index=index,
                           origin=(anchor_a + anchor_b) / 2.0,
                           normal=normal,
                           u_axis=u_axis,
                           v_axis=np.cross(normal, u_axis),
                           anchor_a=anchor_a,
                           anchor_b=anchor_b,
                           param_a=float(param_a),
                           param_b=float(param_b))


def _solve_plane(ca: ParametricCubic, cb: ParametricCubic, f_ref: FiducialReference, m: DissectionMeasurement,
                 seed_a: float, seed_b: float, settings: Optional[SolverSettings],
                 offset_mm: float) -> Tuple[DissectionPlane, IntersectionSolution, IntersectionSolution]:
    try:
        solution_a = solve_intersection(ca, f_ref, m.d_a, seed_a, settings)
        solution_b = solve_intersection(cb, f_ref, m.d_b, seed_b, settings)
        plane = plane_from_anchors(m.index, solution_a.point, solution_b.point,
                                   curve_tangent(ca, solution_a.t), curve_tangent(cb, solution_b.t),
                                   solution_a.t, solution_b.t)
    except Histo3dException as e:
        e.index = m.index
        raise

    offset = m.offset + offset_mm
    if offset != 0.0:
        plane = offset_plane(plane, offset)
    return plane, solution_a, solution_b


def assign_plane(ca: ParametricCubic, cb: ParametricCubic, f_ref: FiducialReference, m: DissectionMeasurement,
                 seed_a: float = 0.0, seed_b: float = 0.0, settings: Optional[SolverSettings] = None,
                 offset_mm: float = 0.0) -> DissectionPlane:
    """
    Assign the plane of one dissection cut

    :param ca: first bisection edge
    :param cb: second bisection edge
    :param f_ref: fiducial reference the distances are measured from
    :param m: the measurement
    :param seed_a: parameter to search for the anchor on ``ca`` from
    :param seed_b: parameter to search for the anchor on ``cb`` from
    :param settings: solver tolerances
    :param offset_mm: offset added to the measurement's own offset (e.g. half the blade kerf)
    :return: the :class:`DissectionPlane`, shifted along its normal by the total offset
    """
    plane, _, _ = _solve_plane(ca, cb, f_ref, m, seed_a, seed_b, settings, offset_mm)
    return plane


def _anchor_diagnostics(solution: IntersectionSolution) -> AnchorDiagnostics:
    return AnchorDiagnostics(t=solution.t, residual=solution.residual, iterations=solution.iterations,
                             method=solution.method, bracket_count=solution.bracket_count,
                             extrapolated=solution.extrapolated)


@dataclass
class PlaneAssignment(object):
    """
    Planes of a measurement set, in measurement order. Failed planes are ``None``.
    """
    planes: List[Optional[DissectionPlane]] = field(default_factory=list)
    diagnostics: List[PlaneDiagnostics] = field(default_factory=list)
    messages: List[PipelineMessage] = field(default_factory=list)
    errors: List[Histo3dException] = field(default_factory=list)

    @property
    def assigned(self) -> List[DissectionPlane]:
        """The planes that were solved"""
        return [p for p in self.planes if p is not None]


class PlaneAssigner(monitor.MonitorMixin):
    """
    Assign planes in index order, seeding every solve with the parameters of
    the last plane that succeeded
    """

    def __init__(self, ca: ParametricCubic, cb: ParametricCubic, f_ref: FiducialReference,
                 settings: Optional[SolverSettings] = None, offset_mm: float = 0.0):
        self.ca = ca
        self.cb = cb
        self.f_ref = f_ref
        self.settings = settings or SolverSettings()
        self.offset_mm = offset_mm

    def assign(self, measurements: Iterable[DissectionMeasurement]) -> PlaneAssignment:
        assignment = PlaneAssignment()
        seed_a, seed_b = 0.0, 0.0

        for m in sorted(measurements, key=lambda x: x.index):
            where = ["planes", str(m.index)]
            token = monitor.set_ctx_histo3d_where(where)
            try:
                plane, solution_a, solution_b = _solve_plane(self.ca, self.cb, self.f_ref, m, seed_a, seed_b,
                                                             self.settings, self.offset_mm)
            except Histo3dException as e:
                assignment.planes.append(None)
                assignment.errors.append(e)
                assignment.diagnostics.append(PlaneDiagnostics(index=m.index, status=PlaneStatusEnum.ABSENT,
                                                               error=e.__class__.__name__, detail=str(e)))
                message = self.error(f"Plane {m.index} is absent: {e.__class__.__name__} {e}", where)
                if message:
                    assignment.messages.append(message)
                continue
            finally:
                monitor.histo3d_where.reset(token)

            for solution in (solution_a, solution_b):
                if solution.extrapolated:
                    message = self.warn(f"Plane {m.index} anchor at t={solution.t:.6g} is extrapolated", where)
                    if message:
                        assignment.messages.append(message)

            seed_a, seed_b = solution_a.t, solution_b.t
            assignment.planes.append(plane)
            assignment.diagnostics.append(PlaneDiagnostics(index=m.index, status=PlaneStatusEnum.ASSIGNED,
                                                           anchor_a=_anchor_diagnostics(solution_a),
                                                           anchor_b=_anchor_diagnostics(solution_b)))

        logger.info(f"Assigned {len(assignment.assigned)} of {len(assignment.planes)} planes")
        return assignment


def assign_all_planes(ca: ParametricCubic, cb: ParametricCubic, f_ref: FiducialReference,
                      measurements: Iterable[DissectionMeasurement], settings: Optional[SolverSettings] = None,
                      offset_mm: float = 0.0) -> PlaneAssignment:
    """
    Assign every plane of a measurement set. Processing continues past a
    failed plane; it is recorded as absent with its error.

    :return: the :class:`PlaneAssignment`
    """
    return PlaneAssigner(ca, cb, f_ref, settings, offset_mm).assign(measurements)
