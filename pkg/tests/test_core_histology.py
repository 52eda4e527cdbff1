import math

import numpy as np
import pytest

from histo3d.core.errors import DegenerateLandmarks, LandmarkOffPlane, NegativeScale, TooFewPairs
from histo3d.core.histology import (fit_inplane_similarity, place_all_slides, place_slide, plane_pose,
                                    rasterize_histology_volume)
from histo3d.core.models import DissectionPlane, HistologySlide, HistologyVolume, VolumeGrid
from histo3d.core.schema.manifest import PlacementSettings
from histo3d.core.types import SlideLabels

SQUARE = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)


@pytest.fixture
def plane():
    """Cut at x = 30 mm across edges at y = 0 and y = 10"""
    return DissectionPlane(index=1, origin=[30, 5, 0], normal=[1, 0, 0], u_axis=[0, 1, 0], v_axis=[0, 0, 1],
                           anchor_a=[30, 0, 0], anchor_b=[30, 10, 0], param_a=0.3, param_b=0.3)


def _square_slide(plane, world_shift=(0, 0, 0)):
    """3x3 bone slide, 1 mm pixels, row along u and column along v"""
    image = np.array([[0, 0], [2, 0], [0, 2]], dtype=float)
    world = plane.origin + image[:, :1] * plane.u_axis + image[:, 1:] * plane.v_axis + np.asarray(world_shift)
    return HistologySlide(index=plane.index, pixels=np.full((3, 3), SlideLabels.BONE, dtype=np.uint8),
                          pixel_spacing=[1.0, 1.0], landmarks_image=image, landmarks_world=world)


def test_plane_pose(plane):
    pose = plane_pose(plane)

    assert np.allclose(pose.apply([0, 0, 0]), [30, 5, 0])
    assert np.allclose(pose.apply([2, 3, 0]), [30, 7, 3])
    assert np.allclose(pose.apply([0, 0, 1]), [31, 5, 0])
    assert np.isclose(np.linalg.det(pose.rotation), 1.0)


def test_fit_inplane_identity():
    similarity = fit_inplane_similarity(SQUARE, SQUARE)

    assert similarity.scale == pytest.approx(1.0)
    assert np.allclose(similarity.translation, [0, 0], atol=1e-12)
    assert similarity.residual_rms < 1e-12


def test_fit_inplane_scale_translation():
    similarity = fit_inplane_similarity(SQUARE, 2 * SQUARE + [5, 0])

    assert similarity.scale == pytest.approx(2.0)
    assert np.allclose(similarity.translation, [5, 0])
    assert np.array_equal(similarity.rotation, np.eye(2))
    assert np.allclose(similarity.apply(SQUARE), 2 * SQUARE + [5, 0])


def test_fit_inplane_grid_noise():
    """Least squares on a noisy grid stays close to the generating map"""
    rng = np.random.default_rng(8)
    grid = np.stack(np.meshgrid(np.arange(5.0), np.arange(4.0), indexing="ij"), axis=-1).reshape(-1, 2) * 3
    target = 0.9 * grid + [-4, 2] + rng.normal(0, 0.01, grid.shape)

    similarity = fit_inplane_similarity(grid, target)

    assert similarity.scale == pytest.approx(0.9, abs=1e-3)
    assert np.allclose(similarity.translation, [-4, 2], atol=0.02)
    assert similarity.residual_rms < 0.03


def test_fit_inplane_rotation():
    angle = math.radians(30)
    rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    target = 1.5 * SQUARE @ rotation.T + [1, -2]

    similarity = fit_inplane_similarity(SQUARE, target, allow_rotation=True)

    assert similarity.scale == pytest.approx(1.5)
    assert np.allclose(similarity.rotation, rotation)
    assert np.allclose(similarity.translation, [1, -2])
    assert similarity.residual_rms < 1e-9


@pytest.mark.parametrize("image, target, allow_rotation, error", [
    (SQUARE, -SQUARE, False, NegativeScale),
    (SQUARE, SQUARE * [-1, 1], True, NegativeScale),
    (np.ones((4, 2)), SQUARE, False, DegenerateLandmarks),
    (SQUARE[:2], SQUARE[:2], False, TooFewPairs),
    (SQUARE, SQUARE[:3], False, TooFewPairs),
], ids=["anti-correlated", "mirrored", "coincident", "two-pairs", "unpaired"])
def test_fit_inplane_errors(image, target, allow_rotation, error):
    with pytest.raises(error):
        fit_inplane_similarity(image, target, allow_rotation=allow_rotation)


def test_place_slide_square(plane):
    placed = place_slide(_square_slide(plane), plane)

    assert placed.in_plane.scale == pytest.approx(1.0)
    assert placed.residual_rms < 1e-9
    assert np.allclose(placed.pixel_to_world([[1, 1], [2, 2]]), [[30, 6, 1], [30, 7, 2]])
    assert not placed.composed.flags.writeable


def test_place_slide_matches_rendering(half_cylinder_specimen):
    """Noise free landmarks reproduce the transform each slide was rendered with"""
    for slide, plane, truth in zip(half_cylinder_specimen.slides, half_cylinder_specimen.planes,
                                   half_cylinder_specimen.truth_slide_transforms):
        placed = place_slide(slide, plane)

        assert np.allclose(placed.composed, truth, rtol=0, atol=1e-9)
        assert placed.residual_rms < 1e-9


def test_place_slide_shrink():
    """A slide shrunk by k gets an in-plane scale of 1 / k"""
    from histo3d.core.phantom import generate
    specimen = generate({"shape": "parallel-lines", "cut_count": 2, "slides": True, "shrink_factor": 2.0})

    for slide, plane in zip(specimen.slides, specimen.planes):
        assert place_slide(slide, plane).in_plane.scale == pytest.approx(0.5)


def test_place_slide_off_plane(plane):
    slide = _square_slide(plane, world_shift=(2.0, 0, 0))

    with pytest.raises(LandmarkOffPlane) as e:
        place_slide(slide, plane)
    assert e.value.index == 1

    placed = place_slide(slide, plane, PlacementSettings(off_plane_tol_mm=2.5))
    assert np.allclose(placed.pixel_to_world([[0, 0]]), [[30, 5, 0]])


def test_place_all_slides_missing_plane(half_cylinder_specimen):
    planes = list(half_cylinder_specimen.planes)
    planes[1] = None

    placement = place_all_slides(half_cylinder_specimen.slides, planes, specimen_id="s1",
                                 bisection_id="half-cylinder")

    assert [p.slide.index for p in placement.volume.slides] == [1, 3, 4, 5]
    assert [d.index for d in placement.diagnostics] == [1, 3, 4, 5]
    assert placement.volume.specimen_id == "s1"
    assert placement.errors == []
    assert placement.messages[0].level == "ERROR"
    assert placement.messages[0].where == ["histology", "2"]


def test_place_all_slides_failed_fit(plane):
    """A slide whose fit fails is reported and left out"""
    placement = place_all_slides([_square_slide(plane, world_shift=(3.0, 0, 0))], [plane])

    assert placement.volume.slides == []
    assert isinstance(placement.errors[0], LandmarkOffPlane)
    assert "LandmarkOffPlane" in placement.messages[0].msg


def test_rasterize(plane):
    placed = place_slide(_square_slide(plane), plane)
    grid = VolumeGrid(np.zeros((40, 20, 10), dtype=np.int16), [1, 1, 1], [0, 0, 0])

    labels = rasterize_histology_volume(HistologyVolume([placed]), grid)

    assert labels.voxels.dtype == np.uint8
    assert np.count_nonzero(labels.voxels) == 9
    assert np.all(labels.voxels[30, 5:8, 0:3] == SlideLabels.BONE)
    assert np.array_equal(labels.origin, grid.origin)


def test_rasterize_outside_grid(plane, caplog):
    placed = place_slide(_square_slide(plane), plane)
    grid = VolumeGrid(np.zeros((10, 10, 10)), [1, 1, 1], [0, 0, 0])

    labels = rasterize_histology_volume(HistologyVolume([placed]), grid)

    assert np.count_nonzero(labels.voxels) == 0
    assert any("outside the grid" in m for m in caplog.messages)
