"""

.. currentmodule:: histo3d.core.fileio

:synopsis: Readers and writers for the histo3d file formats

Everything is converted to RAS millimetres on the way in. LPS inputs
negate their first two coordinates.

Formats
----------------
* Markups - 3D Slicer markups JSON (``.mrk.json``) with Curve and Fiducial entries
* Measurements - CSV with the header ``index,d_a_mm,d_b_mm,curved,offset_mm[,d1_phy_mm,d2_phy_mm,d3_phy_mm]``
* Volumes - NRRD, raw little endian ``short`` or ``float`` voxels
* Slides - a JSON sidecar next to a binary PGM (P5) labelmap
* Transforms - a 4x4 row major text matrix

.. contents:: Contents
    :local:
    :backlinks: top

"""
import json
import os
from typing import Any, Dict, Iterable, List, Optional

import imageio.v2 as imageio
import nrrd
import numpy as np
import pandas as pd
import yaml

from histo3d.core import monitor
from histo3d.core.errors import (DuplicateIndex, EmptyMarkup, HeaderMismatch, NegativeDistance, ParseError,
                                 UnknownCoordinateSystem, UnsupportedEncoding)
from histo3d.core.models import (DissectionMeasurement, FiducialReference, HistologySlide, MarkupCurve, MarkupSet,
                                 PhantomPair, RigidTransform, SyntheticSpecimen, VolumeGrid)
from histo3d.core.schema.enum import CoordinateSystemEnum, MarkupTypeEnum
from histo3d.core.schema.manifest import CaseManifest, MarkupRoles, SlideSidecar, VolumeInputs
from histo3d.core.schema.markups import ControlPoint, Markup, MarkupsDocument

logger = monitor.get_logger(__name__)

#: RAS <-> LPS
LPS_FLIP = np.diag([-1.0, -1.0, 1.0])

MEASUREMENT_COLUMNS = ["index", "d_a_mm", "d_b_mm", "curved", "offset_mm"]
CALIPER_COLUMNS = ["d1_phy_mm", "d2_phy_mm", "d3_phy_mm"]

NRRD_SPACES = {"right-anterior-superior": CoordinateSystemEnum.RAS, "RAS": CoordinateSystemEnum.RAS,
               "left-posterior-superior": CoordinateSystemEnum.LPS, "LPS": CoordinateSystemEnum.LPS}
NRRD_SHORT = {"short", "short int", "signed short", "signed short int", "int16", "int16_t"}
NRRD_FLOAT = {"float"}
SHORT_RANGE = np.iinfo(np.int16)


def _coordinate_system(value: Optional[str], default: str) -> CoordinateSystemEnum:
    name = value or default
    try:
        return CoordinateSystemEnum(name)
    except ValueError:
        raise UnknownCoordinateSystem(f"Unknown coordinate system '{name}', expected one of "
                                      f"{CoordinateSystemEnum.values()}")


def _to_ras(points, system: CoordinateSystemEnum) -> np.ndarray:
    """Also maps RAS to LPS; the flip is its own inverse"""
    pts = np.asarray(points, dtype=float)
    return pts @ LPS_FLIP if system == CoordinateSystemEnum.LPS else pts


def read_markups(path: str, default_system: str = CoordinateSystemEnum.RAS) -> MarkupSet:
    """
    Read the curves and fiducials of a markups document

    :param path: the ``.mrk.json`` file
    :param default_system: coordinate system of markups that do not declare one
    :raises ParseError: the document is not a markups document
    :raises UnknownCoordinateSystem: a markup declares neither LPS nor RAS
    :raises EmptyMarkup: the document or one of its markups has no control points
    """
    try:
        with open(path, "r") as f:
            document = MarkupsDocument(**json.load(f))
    except (OSError, ValueError, TypeError) as e:
        # pydantic's ValidationError is a ValueError
        raise ParseError(f"Unable to read markups {path}: {e}")
    if not document.markups:
        raise EmptyMarkup(f"Markups {path} holds no markups")

    curves: List[MarkupCurve] = []
    fiducials: List[FiducialReference] = []
    for markup in document.markups:
        system = _coordinate_system(markup.coordinate_system, default_system)
        if not markup.control_points:
            raise EmptyMarkup(f"Markup '{markup.name}' in {path} has no control points")
        points = _to_ras([cp.position for cp in markup.control_points], system)
        if markup.type == MarkupTypeEnum.CURVE:
            curves.append(MarkupCurve(markup.name, points))
        elif markup.type == MarkupTypeEnum.FIDUCIAL:
            fiducials.extend(FiducialReference(p, cp.label) for p, cp in zip(points, markup.control_points))
        else:
            logger.warning(f"Skipping markup '{markup.name}' of type {markup.type} in {path}")

    logger.debug(f"Read {len(curves)} curves and {len(fiducials)} fiducials from {path}")
    return MarkupSet(curves, fiducials)


def write_markups(path: str, markups: MarkupSet, coordinate_system: str = CoordinateSystemEnum.RAS):
    """
    Write curves and fiducials as a markups document. All fiducials go into
    one Fiducial markup.
    """
    system = _coordinate_system(coordinate_system, CoordinateSystemEnum.RAS)
    entries: List[Markup] = []
    for curve in markups.curves:
        points = _to_ras(curve.points, system)
        entries.append(Markup(type=MarkupTypeEnum.CURVE, name=curve.label, coordinate_system=system,
                              control_points=[ControlPoint(id=str(i + 1), label=f"{curve.label}-{i + 1}",
                                                           position=p.tolist()) for i, p in enumerate(points)]))
    if markups.fiducials:
        points = _to_ras([f.position for f in markups.fiducials], system)
        entries.append(Markup(type=MarkupTypeEnum.FIDUCIAL, name="fiducials", coordinate_system=system,
                              control_points=[ControlPoint(id=str(i + 1), label=f.label, position=p.tolist())
                                              for i, (f, p) in enumerate(zip(markups.fiducials, points))]))

    with open(path, "w") as f:
        json.dump(MarkupsDocument(markups=entries).dict(by_alias=True, exclude_none=True), f, indent=2)


def _optional(value) -> Optional[float]:
    return None if value is None or pd.isna(value) else float(value)


def _flag(value) -> bool:
    if value is None or pd.isna(value):
        return False
    text = str(value).strip().lower()
    if text in ("1", "1.0", "true", "yes", "y"):
        return True
    if text in ("0", "0.0", "false", "no", "n", ""):
        return False
    raise ParseError(f"Invalid curved flag '{value}'")


def read_measurements(path: str) -> List[DissectionMeasurement]:
    """
    Read a measurement table. Caliper columns are optional; empty cells are
    missing values.

    >>> import tempfile
    >>> with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as f:
    ...     _ = f.write("index,d_a_mm,d_b_mm,curved,offset_mm\\n1,30,30,0,0\\n")
    >>> read_measurements(f.name)[0].d_a
    30.0

    :return: measurements sorted by index
    :raises ParseError: unreadable table, missing columns or non numeric values
    :raises DuplicateIndex: an index appears twice
    :raises NegativeDistance: a distance is negative
    """
    try:
        pdf = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip", dtype={"curved": str},
                          keep_default_na=False, na_values=[""])
    except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"Unable to read measurements {path}: {e}")

    pdf.columns = [c.strip() for c in pdf.columns]
    missing = [c for c in MEASUREMENT_COLUMNS if c not in pdf.columns]
    if missing:
        raise ParseError(f"Measurements {path} lack columns {missing}")
    numeric = ["index", "d_a_mm", "d_b_mm", "offset_mm"] + [c for c in CALIPER_COLUMNS if c in pdf.columns]
    try:
        pdf[numeric] = pdf[numeric].apply(pd.to_numeric)
    except (ValueError, TypeError) as e:
        raise ParseError(f"Measurements {path} hold non numeric values: {e}")
    if pdf[["index", "d_a_mm", "d_b_mm"]].isna().any(axis=None):
        raise ParseError(f"Measurements {path} have empty index or distance cells")

    duplicated = pdf["index"][pdf["index"].duplicated()].tolist()
    if duplicated:
        raise DuplicateIndex(f"Measurements {path} repeat indices {duplicated}", index=int(duplicated[0]))

    measurements = []
    for row in pdf.sort_values("index").to_dict("records"):
        index = int(row["index"])
        if row["d_a_mm"] < 0 or row["d_b_mm"] < 0:
            raise NegativeDistance(f"Measurement {index} has a negative distance", index=index)
        measurements.append(DissectionMeasurement(index=index, d_a=float(row["d_a_mm"]), d_b=float(row["d_b_mm"]),
                                                  curved_cut=_flag(row["curved"]),
                                                  offset=_optional(row["offset_mm"]) or 0.0,
                                                  d1_phy=_optional(row.get("d1_phy_mm")),
                                                  d2_phy=_optional(row.get("d2_phy_mm")),
                                                  d3_phy=_optional(row.get("d3_phy_mm"))))

    for previous, current in zip(measurements, measurements[1:]):
        if current.d_a < previous.d_a:
            logger.warning(f"Measurement {current.index} d_a {current.d_a} is shorter than cut {previous.index}")
    return measurements


def write_measurements(path: str, measurements: Iterable[DissectionMeasurement]):
    """Write a measurement table; caliper columns only when some value is present"""
    rows: List[Dict] = []
    for m in sorted(measurements, key=lambda m: m.index):
        rows.append({"index": m.index, "d_a_mm": m.d_a, "d_b_mm": m.d_b, "curved": int(m.curved_cut),
                     "offset_mm": m.offset, "d1_phy_mm": m.d1_phy, "d2_phy_mm": m.d2_phy, "d3_phy_mm": m.d3_phy})
    pdf = pd.DataFrame(rows, columns=MEASUREMENT_COLUMNS + CALIPER_COLUMNS)
    if pdf[CALIPER_COLUMNS].isna().all(axis=None):
        pdf = pdf[MEASUREMENT_COLUMNS]
    pdf.to_csv(path, index=False)


def read_volume(path: str) -> VolumeGrid:
    """
    Read an NRRD volume in RAS

    :raises UnsupportedEncoding: compressed, big endian or of a type other than short or float
    :raises HeaderMismatch: not 3D, no space directions or a voxel count that does not match the sizes
    """
    try:
        header = nrrd.read_header(path)
    except (OSError, nrrd.NRRDError) as e:
        raise HeaderMismatch(f"Unable to read NRRD header {path}: {e}")

    if header.get("encoding") != "raw":
        raise UnsupportedEncoding(f"NRRD {path} encoding {header.get('encoding')} is not raw")
    if header.get("type") not in NRRD_SHORT | NRRD_FLOAT:
        raise UnsupportedEncoding(f"NRRD {path} type {header.get('type')} is neither short nor float")
    if header.get("endian", "little") != "little":
        raise UnsupportedEncoding(f"NRRD {path} is {header.get('endian')} endian")
    if header.get("dimension") != 3:
        raise HeaderMismatch(f"NRRD {path} has dimension {header.get('dimension')}, expected 3")
    if "space directions" not in header:
        raise HeaderMismatch(f"NRRD {path} has no space directions")

    try:
        voxels, header = nrrd.read(path, index_order="F")
    except (OSError, ValueError, nrrd.NRRDError) as e:
        raise HeaderMismatch(f"Unable to read NRRD voxels {path}: {e}")

    system = NRRD_SPACES.get(header.get("space", "RAS"))
    if system is None:
        raise UnknownCoordinateSystem(f"NRRD {path} space {header.get('space')} is neither LPS nor RAS")
    axes = np.asarray(header["space directions"], dtype=float)
    origin = np.asarray(header.get("space origin", np.zeros(3)), dtype=float)
    spacing = np.linalg.norm(axes, axis=1)
    direction = (axes / spacing[:, None]).T
    if system == CoordinateSystemEnum.LPS:
        direction, origin = LPS_FLIP @ direction, LPS_FLIP @ origin

    logger.debug(f"Read NRRD {path} {voxels.shape} {voxels.dtype} in {system}")
    return VolumeGrid(voxels, spacing, origin, direction)


def write_volume(path: str, v: VolumeGrid):
    """
    Write an NRRD volume in RAS; integer voxels as short, others as float

    :raises UnsupportedEncoding: integer voxels outside the short range
    """
    voxels = np.asarray(v.voxels)
    dtype = "<i2" if np.issubdtype(voxels.dtype, np.integer) else "<f4"
    if dtype == "<i2" and voxels.size and (voxels.min() < SHORT_RANGE.min or voxels.max() > SHORT_RANGE.max):
        raise UnsupportedEncoding(f"NRRD {path} voxels span [{voxels.min()}, {voxels.max()}], "
                                  f"outside the short range")
    header = {"encoding": "raw", "space": "right-anterior-superior",
              "space directions": (v.direction * v.spacing).T, "space origin": np.asarray(v.origin)}
    nrrd.write(path, voxels.astype(dtype), header, index_order="F")


def read_slide(path: str, default_system: str = CoordinateSystemEnum.RAS) -> HistologySlide:
    """
    Read a slide from its JSON sidecar and the labelmap image it names

    :raises ParseError: unreadable sidecar or image
    """
    try:
        with open(path, "r") as f:
            sidecar = SlideSidecar(**json.load(f))
        image = os.path.join(os.path.dirname(path), sidecar.image)
        pixels = np.asarray(imageio.imread(image))
    except (OSError, ValueError, TypeError) as e:
        raise ParseError(f"Unable to read slide {path}: {e}")
    if pixels.ndim == 3:
        # grayscale stored as RGB
        pixels = pixels[..., 0]

    system = _coordinate_system(sidecar.coordinate_system, default_system)
    slide_args: Dict[str, Any] = dict(index=sidecar.index, pixels=pixels, pixel_spacing=sidecar.pixel_spacing,
                                      landmarks_image=sidecar.landmarks_image,
                                      landmarks_world=_to_ras(sidecar.landmarks_world, system))
    if sidecar.palette:
        slide_args["palette"] = sidecar.palette
    return HistologySlide(**slide_args)


def write_slide(path: str, slide: HistologySlide):
    """Write a slide sidecar and its labelmap next to it with the extension ``.pgm``"""
    image = os.path.splitext(os.path.basename(path))[0] + ".pgm"
    imageio.imwrite(os.path.join(os.path.dirname(path), image), np.asarray(slide.pixels, dtype=np.uint8))
    sidecar = SlideSidecar(index=slide.index, image=image, pixel_spacing=slide.pixel_spacing.tolist(),
                           landmarks_image=slide.landmarks_image.tolist(),
                           landmarks_world=slide.landmarks_world.tolist(),
                           coordinate_system=CoordinateSystemEnum.RAS, palette=slide.palette)
    with open(path, "w") as f:
        json.dump(sidecar.dict(by_alias=True), f, indent=2)


def read_transform(path: str) -> RigidTransform:
    """
    Read a 4x4 row major transform

    :raises ParseError: not a 4x4 numeric matrix
    :raises InvalidTransform: not rigid
    """
    try:
        matrix = np.loadtxt(path, dtype=float, ndmin=2)
    except (OSError, ValueError) as e:
        raise ParseError(f"Unable to read transform {path}: {e}")
    if matrix.shape != (4, 4):
        raise ParseError(f"Transform {path} has shape {matrix.shape}, expected (4, 4)")
    return RigidTransform(matrix)


def write_transform(path: str, t: RigidTransform):
    np.savetxt(path, t.matrix, fmt="%.17g")


def write_case(specimen: SyntheticSpecimen, directory: str, phantom: Optional[PhantomPair] = None,
               specimen_id: str = "synthetic") -> str:
    """
    Write a synthetic specimen as a case directory with a manifest

    :param specimen: the generated specimen
    :param directory: created if missing
    :param phantom: also write the bisection volumes and their fiducials
    :param specimen_id: identifier written into the manifest
    :return: the manifest path
    """
    os.makedirs(directory, exist_ok=True)
    roles = dict(curve_a=specimen.markups[0].label, curve_b=specimen.markups[1].label,
                 edge=specimen.markups[2].label, fiducial=specimen.f_ref.label)

    write_markups(os.path.join(directory, "markups.mrk.json"), MarkupSet(list(specimen.markups), [specimen.f_ref]))
    variant = None
    if specimen.variant_markups:
        write_markups(os.path.join(directory, "markups_variant.mrk.json"),
                      MarkupSet(list(specimen.variant_markups), [specimen.f_ref]))
        variant = MarkupRoles(path="markups_variant.mrk.json", **roles)
    write_measurements(os.path.join(directory, "measurements.csv"), specimen.measurements)

    slides = []
    for slide in specimen.slides:
        name = f"slide_{slide.index:03d}.json"
        write_slide(os.path.join(directory, name), slide)
        slides.append(name)

    volumes = None
    if phantom is not None:
        write_volume(os.path.join(directory, "fixed.nrrd"), phantom.fixed)
        write_volume(os.path.join(directory, "moving.nrrd"), phantom.moving)
        write_markups(os.path.join(directory, "fiducials_fixed.mrk.json"),
                      MarkupSet(fiducials=[FiducialReference(p, f"F{i + 1}")
                                           for i, p in enumerate(phantom.fiducials_fixed)]))
        write_markups(os.path.join(directory, "fiducials_moving.mrk.json"),
                      MarkupSet(fiducials=[FiducialReference(p, f"F{i + 1}")
                                           for i, p in enumerate(phantom.fiducials_moving)]))
        volumes = VolumeInputs(fixed="fixed.nrrd", moving="moving.nrrd",
                               fixed_fiducials="fiducials_fixed.mrk.json",
                               moving_fiducials="fiducials_moving.mrk.json")

    manifest = CaseManifest(specimen_id=specimen_id, bisection_id=getattr(specimen.shape, "value", specimen.shape),
                            markups=MarkupRoles(path="markups.mrk.json", **roles), variant_markups=variant,
                            measurements="measurements.csv", slides=slides, volumes=volumes)
    path = os.path.join(directory, "manifest.yaml")
    with open(path, "w") as f:
        yaml.safe_dump(manifest.dict(by_alias=True, exclude={"base_dir"}, exclude_none=True), f, sort_keys=False)
    logger.info(f"Wrote case {specimen_id} to {directory}")
    return path
