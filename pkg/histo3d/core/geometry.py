"""

.. currentmodule:: histo3d.core.geometry

:synopsis: Curve fitting, curve evaluation and rigid transform algebra

Functions
----------------
* :func:`fit_parametric_cubic` - least squares cubic through markup control points
* :func:`curve_eval` - evaluate a :class:`ParametricCubic`
* :func:`curve_tangent` - analytic derivative of a :class:`ParametricCubic`
* :func:`compose`, :func:`invert`, :func:`chain_transforms` - rigid transform algebra
* :func:`transform_plane`, :func:`offset_plane` - move dissection planes

.. contents:: Contents
    :local:
    :backlinks: top

"""
from functools import reduce
from typing import Iterable, Union

import numpy as np
from numpy.polynomial import polynomial as P

from histo3d.core import monitor
from histo3d.core.errors import DegenerateChord, StationaryPoint, TooFewPoints
from histo3d.core.models import DissectionPlane, MarkupCurve, ParametricCubic, RigidTransform
from histo3d.core.types import MIN_CHORD_MM, MIN_TOTAL_CHORD_MM, STATIONARY_TANGENT_MM

logger = monitor.get_logger(__name__)


def chord_parameters(points: np.ndarray) -> np.ndarray:
    """
    Normalized cumulative chord length of ordered points

    :param points: (n, 3) control points
    :return: (n,) parameters, first 0 and last exactly 1
    :raises DegenerateChord: coincident consecutive points or a vanishing total length
    """
    chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if np.any(chords <= MIN_CHORD_MM):
        first = int(np.argmax(chords <= MIN_CHORD_MM))
        raise DegenerateChord(f"Control points {first} and {first + 1} coincide")
    total = chords.sum()
    if total <= MIN_TOTAL_CHORD_MM:
        raise DegenerateChord(f"Total chord length {total:.3g} mm is too short to fit")
    params = np.concatenate([[0.0], np.cumsum(chords)]) / total
    params[-1] = 1.0
    return params


def fit_parametric_cubic(curve: MarkupCurve) -> ParametricCubic:
    """
    Fit one cubic per axis to the markup control points by ordinary least
    squares against their normalized cumulative chord length.

    >>> from histo3d.core.models import MarkupCurve
    >>> cubic = fit_parametric_cubic(MarkupCurve("a", [[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]))
    >>> round(float(curve_eval(cubic, 0.5)[0]), 12)
    1.5

    :param curve: the markup curve, at least 4 points
    :return: the fitted :class:`ParametricCubic` with its chord parameters and residual RMS
    """
    points = curve.points
    if len(points) < 4:
        raise TooFewPoints(f"Curve '{curve.label}' has {len(points)} control points; a cubic needs 4")

    params = chord_parameters(points)
    # polyfit returns (4, 3): row k multiplies t**k
    coefficients = P.polyfit(params, points, 3)
    fitted = P.polyval(params, coefficients).T
    residual = float(np.sqrt(np.mean(np.sum((fitted - points) ** 2, axis=1))))

    logger.debug(f"Fitted curve '{curve.label}' to {len(points)} points, residual RMS {residual:.3g} mm")
    return ParametricCubic(coefficients.T, params, residual, curve.label)


def curve_eval(c: ParametricCubic, t: Union[float, np.ndarray]) -> np.ndarray:
    """
    Evaluate the cubic at t (scalar -> (3,), array of m -> (m, 3)).
    Extrapolation outside [0, 1] is allowed; callers decide whether it is acceptable.
    """
    values = P.polyval(t, c.coefficients.T)
    return np.asarray(values).T


def curve_derivative(c: ParametricCubic, t: Union[float, np.ndarray]) -> np.ndarray:
    """Unnormalized derivative dC/dt without the stationary check"""
    derivative = P.polyder(c.coefficients.T)
    return np.asarray(P.polyval(t, derivative)).T


def curve_tangent(c: ParametricCubic, t: float) -> np.ndarray:
    """
    Analytic derivative dC/dt at t, not normalized

    :raises StationaryPoint: the derivative vanishes
    """
    tangent = curve_derivative(c, t)
    if np.linalg.norm(tangent) <= STATIONARY_TANGENT_MM:
        raise StationaryPoint(f"Curve '{c.label}' is stationary at t={t}")
    return tangent


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a`` after ``b``: x -> a(b(x))"""
    return RigidTransform(a.matrix @ b.matrix)


def invert(a: RigidTransform) -> RigidTransform:
    """Closed form inverse (R^T, -R^T t)"""
    rotation = a.rotation.T
    return RigidTransform.from_rotation_translation(rotation, -rotation @ a.translation)


def chain_transforms(transforms: Iterable[RigidTransform]) -> RigidTransform:
    """
    Compose a chain applied left to right, e.g. bisection -> fused CT -> pre-surgical CT -> MR

    :param transforms: the transforms in the order they are applied
    :return: the total transform (identity for an empty chain)
    """
    return reduce(lambda total, step: compose(step, total), transforms, RigidTransform.identity())


def transform_plane(p: DissectionPlane, t: RigidTransform) -> DissectionPlane:
    """Carry a dissection plane through a rigid transform"""
    return DissectionPlane(index=p.index,
                           origin=t.apply(p.origin),
                           normal=t.apply_vectors(p.normal),
                           u_axis=t.apply_vectors(p.u_axis),
                           v_axis=t.apply_vectors(p.v_axis),
                           anchor_a=t.apply(p.anchor_a),
                           anchor_b=t.apply(p.anchor_b),
                           param_a=p.param_a,
                           param_b=p.param_b)


def offset_plane(p: DissectionPlane, delta_mm: float) -> DissectionPlane:
    """Shift origin and anchors by ``delta_mm`` along the normal"""
    shift = delta_mm * p.normal
    return DissectionPlane(index=p.index,
                           origin=p.origin + shift,
                           normal=p.normal,
                           u_axis=p.u_axis,
                           v_axis=p.v_axis,
                           anchor_a=p.anchor_a + shift,
                           anchor_b=p.anchor_b + shift,
                           param_a=p.param_a,
                           param_b=p.param_b)
