import json
import logging

import nrrd
import numpy as np
import pytest

from histo3d.core.errors import (DuplicateIndex, EmptyMarkup, HeaderMismatch, InvalidTransform, NegativeDistance,
                                 ParseError, UnknownCoordinateSystem, UnsupportedEncoding)
from histo3d.core.fileio import (read_markups, read_measurements, read_slide, read_transform, read_volume,
                                 write_case, write_markups, write_measurements, write_slide, write_transform,
                                 write_volume)
from histo3d.core.models import (DissectionMeasurement, FiducialReference, HistologySlide, MarkupCurve, MarkupSet,
                                 RigidTransform, VolumeGrid)
from histo3d.core.schema.manifest import CaseManifest
from histo3d.core.types import SlideLabels
from tests.utilities import random_rotation, resource_path


def _markups_document(path, markups):
    with open(path, "w") as f:
        json.dump({"markups": markups}, f)
    return str(path)


def test_read_markups_lps(caplog):
    with caplog.at_level(logging.WARNING, logger="histo3d"):
        markups = read_markups(resource_path("specimen_lps.mrk.json"))

    assert [c.label for c in markups.curves] == ["edge_a", "edge_b"]
    assert np.array_equal(markups.curve("edge_a").points[0], [1, 2, 3])
    assert np.array_equal(markups.curve("edge_b").points[-1], [31, 12, 3])
    assert np.array_equal(markups.fiducial("f_ref").position, [1, 2, 3])
    assert any("ClosedCurve" in m for m in caplog.messages)

    with pytest.raises(ParseError):
        markups.curve("edge_c")


def test_read_markups_default_system(tmp_path):
    """Markups without a coordinate system take the manifest default"""
    path = _markups_document(tmp_path / "plain.mrk.json", [
        {"type": "Curve", "name": "c", "controlPoints": [{"position": [1.0, 2.0, 3.0]}]}])

    assert np.array_equal(read_markups(path).curves[0].points, [[1, 2, 3]])
    assert np.array_equal(read_markups(path, default_system="LPS").curves[0].points, [[-1, -2, 3]])


@pytest.mark.parametrize("markups, error", [
    ([], EmptyMarkup),
    ([{"type": "Curve", "name": "c", "coordinateSystem": "RAS", "controlPoints": []}], EmptyMarkup),
    ([{"type": "Curve", "name": "c", "coordinateSystem": "IJK",
       "controlPoints": [{"position": [0.0, 0.0, 0.0]}]}], UnknownCoordinateSystem),
    ([{"type": "Curve", "name": "c", "controlPoints": [{"position": [0.0, 0.0]}]}], ParseError),
], ids=["no-markups", "no-points", "ijk", "short-position"])
def test_read_markups_errors(tmp_path, markups, error):
    with pytest.raises(error):
        read_markups(_markups_document(tmp_path / "bad.mrk.json", markups))


def test_read_markups_not_json(tmp_path):
    path = tmp_path / "bad.mrk.json"
    path.write_text("controlPoints: [")

    with pytest.raises(ParseError):
        read_markups(str(path))


def test_write_markups_lps(tmp_path):
    markups = MarkupSet([MarkupCurve("edge_a", [[1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12]])],
                        [FiducialReference([1, 2, 3])])
    path = str(tmp_path / "out.mrk.json")

    write_markups(path, markups, coordinate_system="LPS")

    with open(path) as f:
        document = json.load(f)
    assert "@schema" in document
    curve = document["markups"][0]
    assert curve["coordinateSystem"] == "LPS"
    assert curve["controlPoints"][1]["position"] == [-4, -5, 6]
    assert curve["controlPoints"][1]["label"] == "edge_a-2"
    assert document["markups"][1]["type"] == "Fiducial"
    assert document["markups"][1]["controlPoints"][0]["label"] == "f_ref"

    again = read_markups(path)
    assert np.array_equal(again.curves[0].points, markups.curves[0].points)
    assert np.array_equal(again.fiducial("f_ref").position, [1, 2, 3])


def test_read_measurements():
    measurements = read_measurements(resource_path("measurements.csv"))

    assert [m.index for m in measurements] == [1, 2, 3]
    first, second, third = measurements
    assert (first.d_a, first.d_b, first.curved_cut, first.offset) == (10.25, 14.5, True, -0.5)
    assert first.d1_phy is None and first.d2_phy is None
    assert not second.curved_cut
    assert (second.d1_phy, second.d2_phy, second.d3_phy) == (10.1, None, 10.3)
    assert (third.d1_phy, third.d2_phy, third.d3_phy) == (9.9, 10.0, 10.2)


def test_read_measurements_minimal(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("index,d_a_mm,d_b_mm,curved,offset_mm\n1,30,30,0,0\n")

    measurements = read_measurements(str(path))

    assert len(measurements) == 1
    m = measurements[0]
    assert (m.index, m.d_a, m.d_b, m.curved_cut, m.offset) == (1, 30.0, 30.0, False, 0.0)
    assert m.d1_phy is None and m.d2_phy is None and m.d3_phy is None


@pytest.mark.parametrize("content, error", [
    ("index,d_a_mm,d_b_mm,curved,offset_mm\n1,30,30,0,0\n1,40,40,0,0\n", DuplicateIndex),
    ("index,d_a_mm,d_b_mm,curved,offset_mm\n1,30,-1,0,0\n", NegativeDistance),
    ("index,d_a_mm,d_b_mm,curved\n1,30,30,0\n", ParseError),
    ("index,d_a_mm,d_b_mm,curved,offset_mm\n1,thirty,30,0,0\n", ParseError),
    ("index,d_a_mm,d_b_mm,curved,offset_mm\n1,30,30,maybe,0\n", ParseError),
    ("index,d_a_mm,d_b_mm,curved,offset_mm\n1,,30,0,0\n", ParseError),
    ("", ParseError),
], ids=["duplicate", "negative", "missing-column", "text", "flag", "empty-cell", "empty-file"])
def test_read_measurements_errors(tmp_path, content, error):
    path = tmp_path / "m.csv"
    path.write_text(content)

    with pytest.raises(error) as e:
        read_measurements(str(path))
    if error in (DuplicateIndex, NegativeDistance):
        assert e.value.index == 1


def test_read_measurements_decreasing(tmp_path, caplog):
    path = tmp_path / "m.csv"
    path.write_text("index,d_a_mm,d_b_mm,curved,offset_mm\n1,30,30,0,0\n2,20,20,0,0\n")

    with caplog.at_level(logging.WARNING, logger="histo3d"):
        assert len(read_measurements(str(path))) == 2
    assert any("shorter than cut 1" in m for m in caplog.messages)


def test_write_measurements(tmp_path):
    path = str(tmp_path / "m.csv")
    write_measurements(path, [DissectionMeasurement(2, 20.5, 21.0), DissectionMeasurement(1, 10.125, 11.0,
                                                                                           curved_cut=True)])

    with open(path) as f:
        assert f.readline().strip() == "index,d_a_mm,d_b_mm,curved,offset_mm"
    measurements = read_measurements(path)
    assert [m.index for m in measurements] == [1, 2]
    assert measurements[0].d_a == 10.125 and measurements[0].curved_cut

    write_measurements(path, [DissectionMeasurement(1, 10.0, 11.0, d2_phy=5.5)])
    assert read_measurements(path)[0].d2_phy == 5.5


def test_volume_float_bit_exact(tmp_path):
    rng = np.random.default_rng(31)
    voxels = rng.normal(0, 100, (8, 8, 8)).astype(np.float32)
    grid = VolumeGrid(voxels, [0.5, 0.75, 1.25], [10, -20, 30], random_rotation(rng))
    path = str(tmp_path / "v.nrrd")

    write_volume(path, grid)
    read = read_volume(path)

    assert read.voxels.dtype == np.float32
    assert np.array_equal(read.voxels, voxels)
    assert np.allclose(read.spacing, grid.spacing)
    assert np.allclose(read.direction, grid.direction)
    assert np.allclose(read.origin, grid.origin)


def test_volume_short(tmp_path):
    voxels = np.arange(24, dtype=np.int16).reshape(2, 3, 4) - 1024
    path = str(tmp_path / "v.nrrd")

    write_volume(path, VolumeGrid(voxels, [1, 1, 2], [0, 0, 0]))
    read = read_volume(path)

    assert read.voxels.dtype == np.int16
    assert np.array_equal(read.voxels, voxels)
    assert read.voxels[1, 2, 3] == voxels[1, 2, 3]


@pytest.mark.parametrize("value", [40000, -40000], ids=["above", "below"])
def test_volume_short_overflow(tmp_path, value):
    voxels = np.zeros((2, 2, 2), dtype=np.int32)
    voxels[1, 0, 1] = value
    path = tmp_path / "v.nrrd"

    with pytest.raises(UnsupportedEncoding):
        write_volume(str(path), VolumeGrid(voxels, [1, 1, 1], [0, 0, 0]))
    assert not path.exists()


def test_volume_lps(tmp_path):
    """An LPS volume has its first two axes and origin negated"""
    path = str(tmp_path / "lps.nrrd")
    nrrd.write(path, np.zeros((2, 2, 2), dtype=np.int16),
               {"encoding": "raw", "space": "left-posterior-superior",
                "space directions": np.diag([2.0, 2.0, 2.0]), "space origin": np.array([5.0, 6.0, 7.0])},
               index_order="F")

    grid = read_volume(path)

    assert np.allclose(grid.origin, [-5, -6, 7])
    assert np.allclose(grid.index_to_world([1, 1, 1]), [-7, -8, 9])


@pytest.mark.parametrize("data, header, error", [
    (np.zeros((2, 2, 2), dtype=np.int16), {"encoding": "gzip"}, UnsupportedEncoding),
    (np.zeros((2, 2, 2), dtype=np.uint8), {"encoding": "raw"}, UnsupportedEncoding),
    (np.zeros((2, 2, 2), dtype=">f4"), {"encoding": "raw"}, UnsupportedEncoding),
    (np.zeros((2, 2), dtype=np.int16), {"encoding": "raw", "space directions": np.eye(2), "space dimension": 2},
     HeaderMismatch),
    (np.zeros((2, 2, 2), dtype=np.int16), {"encoding": "raw"}, HeaderMismatch),
], ids=["gzip", "uchar", "big-endian", "2d", "no-directions"])
def test_volume_errors(tmp_path, data, header, error):
    path = str(tmp_path / "bad.nrrd")
    if "space directions" not in header and error is not HeaderMismatch:
        header = {**header, "space": "right-anterior-superior", "space directions": np.eye(3)}
    nrrd.write(path, data, header, index_order="F")

    with pytest.raises(error):
        read_volume(path)


def test_volume_truncated(tmp_path):
    path = str(tmp_path / "v.nrrd")
    write_volume(path, VolumeGrid(np.zeros((4, 4, 4), dtype=np.int16), [1, 1, 1], [0, 0, 0]))
    with open(path, "rb") as f:
        content = f.read()
    with open(path, "wb") as f:
        f.write(content[:-10])

    with pytest.raises(HeaderMismatch):
        read_volume(path)


def test_volume_not_nrrd(tmp_path):
    path = tmp_path / "v.nrrd"
    path.write_text("not a volume\n")

    with pytest.raises(HeaderMismatch):
        read_volume(str(path))


def test_transform(tmp_path):
    rng = np.random.default_rng(5)
    transform = RigidTransform.from_rotation_translation(random_rotation(rng), [1.5, -2.25, 3])
    path = str(tmp_path / "t.txt")

    write_transform(path, transform)

    assert np.array_equal(read_transform(path).matrix, transform.matrix)


def test_transform_identity(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")

    assert np.array_equal(read_transform(str(path)).matrix, np.eye(4))


@pytest.mark.parametrize("content, error", [
    ("1 0 0\n0 1 0\n0 0 1\n", ParseError),
    ("1 0 0 0\n0 1 0 0\n0 0 1 x\n0 0 0 1\n", ParseError),
    ("2 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n", InvalidTransform),
], ids=["3x3", "text", "scaled"])
def test_transform_errors(tmp_path, content, error):
    path = tmp_path / "t.txt"
    path.write_text(content)

    with pytest.raises(error):
        read_transform(str(path))


def test_slide(tmp_path, half_cylinder_specimen):
    slide = half_cylinder_specimen.slides[0]
    path = str(tmp_path / "slide_001.json")

    write_slide(path, slide)
    read = read_slide(path)

    assert (tmp_path / "slide_001.pgm").exists()
    assert read.index == slide.index
    assert np.array_equal(read.pixels, slide.pixels)
    assert np.allclose(read.landmarks_world, slide.landmarks_world)
    assert np.array_equal(read.pixel_spacing, slide.pixel_spacing)
    assert read.palette == slide.palette


def test_slide_lps_landmarks(tmp_path, half_cylinder_specimen):
    slide = half_cylinder_specimen.slides[0]
    path = str(tmp_path / "slide.json")
    write_slide(path, slide)
    with open(path) as f:
        sidecar = json.load(f)
    sidecar["coordinateSystem"] = "LPS"
    with open(path, "w") as f:
        json.dump(sidecar, f)

    read = read_slide(path)

    assert np.allclose(read.landmarks_world, slide.landmarks_world * [-1, -1, 1])


def test_slide_missing_image(tmp_path):
    path = tmp_path / "slide.json"
    path.write_text(json.dumps({"index": 1, "image": "missing.pgm", "pixelSpacing": [1, 1],
                                "landmarksImage": [[0, 0], [1, 0], [0, 1]],
                                "landmarksWorld": [[0, 0, 0], [1, 0, 0], [0, 1, 0]]}))

    with pytest.raises(ParseError):
        read_slide(str(path))


def test_write_case(tmp_path, phantom):
    from histo3d.core.phantom import generate
    specimen = generate({"shape": "half-cylinder", "cut_count": 2, "slides": True, "variant_jitter_mm": 0.1})

    path = write_case(specimen, str(tmp_path / "case"), phantom=phantom, specimen_id="S-01")
    manifest = CaseManifest.load(path)

    assert manifest.specimen_id == "S-01"
    assert manifest.bisection_id == "half-cylinder"
    assert manifest.slides == ["slide_001.json", "slide_002.json"]
    assert manifest.markups.curve_a == "edge_a" and manifest.markups.edge == "edge_outer"
    assert manifest.variant_markups.path == "markups_variant.mrk.json"
    assert manifest.volumes.fixed == "fixed.nrrd"

    markups = read_markups(manifest.resolve(manifest.markups.path))
    assert np.allclose(markups.curve("edge_a").points, specimen.markups[0].points)
    assert np.allclose(markups.fiducial("f_ref").position, specimen.f_ref.position)
    assert [m.d_a for m in read_measurements(manifest.resolve(manifest.measurements))] == \
        [m.d_a for m in specimen.measurements]
    fiducials = read_markups(manifest.resolve(manifest.volumes.moving_fiducials)).fiducials
    assert [f.label for f in fiducials] == ["F1", "F2", "F3", "F4"]
    assert np.array_equal(read_volume(manifest.resolve(manifest.volumes.fixed)).voxels, phantom.fixed.voxels)


@pytest.mark.integration
@pytest.mark.parametrize("system", ["RAS", "LPS"])
def test_markups_random_round_trip(tmp_path, system):
    rng = np.random.default_rng(101)
    path = str(tmp_path / "m.mrk.json")
    for _ in range(200):
        curves = [MarkupCurve(f"edge_{k}", rng.uniform(-200, 200, (rng.integers(4, 20), 3)))
                  for k in range(rng.integers(1, 4))]
        fiducials = [FiducialReference(rng.uniform(-200, 200, 3), f"f_{k}") for k in range(rng.integers(1, 4))]

        write_markups(path, MarkupSet(curves, fiducials), coordinate_system=system)
        read = read_markups(path)

        assert [c.label for c in read.curves] == [c.label for c in curves]
        for written, again in zip(curves, read.curves):
            assert np.array_equal(again.points, written.points)
        assert [f.label for f in read.fiducials] == [f.label for f in fiducials]
        for written_f, again_f in zip(fiducials, read.fiducials):
            assert np.array_equal(again_f.position, written_f.position)


def _maybe(rng, low, high):
    return float(rng.uniform(low, high)) if rng.random() < 0.5 else None


@pytest.mark.integration
def test_measurements_random_round_trip(tmp_path):
    rng = np.random.default_rng(103)
    path = str(tmp_path / "m.csv")
    for _ in range(200):
        measurements = [DissectionMeasurement(index, float(rng.uniform(0, 150)), float(rng.uniform(0, 150)),
                                              curved_cut=bool(rng.random() < 0.3),
                                              offset=float(rng.normal(0, 1)) if rng.random() < 0.5 else 0.0,
                                              d1_phy=_maybe(rng, 1, 30), d2_phy=_maybe(rng, 1, 30),
                                              d3_phy=_maybe(rng, 1, 30))
                        for index in range(1, rng.integers(2, 12))]

        write_measurements(path, measurements)
        read = read_measurements(path)

        assert len(read) == len(measurements)
        for written, again in zip(measurements, read):
            assert (again.index, again.d_a, again.d_b, again.curved_cut, again.offset) == \
                (written.index, written.d_a, written.d_b, written.curved_cut, written.offset)
            assert (again.d1_phy, again.d2_phy, again.d3_phy) == (written.d1_phy, written.d2_phy, written.d3_phy)


@pytest.mark.integration
@pytest.mark.parametrize("dtype", [np.int16, np.float32], ids=["short", "float"])
def test_volume_random_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(107)
    path = str(tmp_path / "v.nrrd")
    for _ in range(200):
        shape = tuple(int(s) for s in rng.integers(2, 10, 3))
        if dtype == np.int16:
            voxels = rng.integers(-32768, 32768, shape).astype(np.int16)
        else:
            voxels = rng.normal(0, 1000, shape).astype(np.float32)
        grid = VolumeGrid(voxels, rng.uniform(0.1, 3, 3), rng.uniform(-300, 300, 3), random_rotation(rng))

        write_volume(path, grid)
        read = read_volume(path)

        assert read.voxels.dtype == dtype
        assert np.array_equal(read.voxels, voxels)
        assert np.allclose(read.spacing, grid.spacing, rtol=0, atol=1e-12)
        assert np.allclose(read.direction, grid.direction, rtol=0, atol=1e-12)
        assert np.array_equal(read.origin, grid.origin)


@pytest.mark.integration
def test_slide_random_round_trip(tmp_path):
    rng = np.random.default_rng(109)
    labels = [SlideLabels.BACKGROUND] + list(SlideLabels.PALETTE)
    path = str(tmp_path / "slide.json")
    for index in range(1, 201):
        n = int(rng.integers(3, 8))
        rows, columns = int(rng.integers(2, 40)), int(rng.integers(2, 40))
        slide = HistologySlide(index=index,
                               pixels=rng.choice(labels, (rows, columns)).astype(np.uint8),
                               pixel_spacing=rng.uniform(0.01, 1, 2),
                               landmarks_image=rng.uniform(0, 40, (n, 2)),
                               landmarks_world=rng.uniform(-200, 200, (n, 3)))

        write_slide(path, slide)
        read = read_slide(path)

        assert read.index == index
        assert np.array_equal(read.pixels, slide.pixels)
        assert np.array_equal(read.pixel_spacing, slide.pixel_spacing)
        assert np.array_equal(read.landmarks_image, slide.landmarks_image)
        assert np.array_equal(read.landmarks_world, slide.landmarks_world)
        assert read.palette == slide.palette


@pytest.mark.integration
def test_transform_random_round_trip(tmp_path):
    rng = np.random.default_rng(113)
    path = str(tmp_path / "t.txt")
    for _ in range(200):
        transform = RigidTransform.from_rotation_translation(random_rotation(rng), rng.uniform(-500, 500, 3))

        write_transform(path, transform)

        assert np.array_equal(read_transform(path).matrix, transform.matrix)
