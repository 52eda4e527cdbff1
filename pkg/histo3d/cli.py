"""

.. currentmodule:: histo3d.cli

:synopsis: The histo3d command line

Usage::

    histo3d assign-planes --manifest case/manifest.yaml --out planes.json
    histo3d synth --out case --seed 7 --shape half-cylinder --slides --phantom

Exit codes: 0 success, 1 invalid or unparseable input, 2 numerical failure.
Failures are reported on standard error as a JSON object with the keys
``error``, ``detail`` and, for plane or slide failures, ``index``.

.. contents:: Contents
    :local:
    :backlinks: top

"""
import argparse
import json
import os
import sys
from typing import Dict, List, NoReturn, Optional

from histo3d.core import monitor
from histo3d.core.errors import Histo3dException, InputError, UsageError
from histo3d.core.fileio import read_volume, write_case, write_transform, write_volume
from histo3d.core.phantom import generate, render_phantom
from histo3d.core.schema.enum import SpecimenShapeEnum
from histo3d.core.types import DEFAULT_THRESHOLD_HU
from histo3d.colocation import CaseColocator, open_case

logger = monitor.get_logger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


def _write_json(path: str, document: Dict):
    with open(path, "w") as f:
        json.dump(document, f, sort_keys=True, indent=2)
        f.write("\n")


def _messages(messages) -> List[Dict]:
    return [m.dict(by_alias=True) for m in messages]


def _open(args) -> CaseColocator:
    colocator = open_case(args.manifest, args.offset_mm)
    fusion = colocator.manifest.fusion
    if args.trim_fraction is not None:
        fusion.trim_fraction = args.trim_fraction
    if args.threshold_hu is not None:
        fusion.threshold_hu = args.threshold_hu
    return colocator


def fit_curves(args) -> Dict:
    colocator = _open(args)
    curves, f_ref = colocator.fit_curves()
    return {"specimenId": colocator.manifest.specimen_id,
            "curves": [{"label": c.label, "coefficients": c.coefficients.tolist(),
                        "chordParams": c.chord_params.tolist(), "residualRms": c.residual_rms}
                       for c in curves if c is not None],
            "fRef": f_ref.position.tolist()}


def assign_planes(args) -> Dict:
    colocator = _open(args)
    assignment = colocator.assign_planes()
    return {"specimenId": colocator.manifest.specimen_id,
            "planes": [p.to_dict() if p is not None else None for p in assignment.planes],
            "diagnostics": [d.dict(by_alias=True) for d in assignment.diagnostics],
            "messages": _messages(assignment.messages)}


def place_histology(args) -> Dict:
    colocator = _open(args)
    placement = colocator.place_histology()
    if args.histology_volume:
        volumes = colocator.manifest.volumes
        if volumes is None:
            raise InputError("A histology volume needs the fixed volume of the case as its grid")
        grid = read_volume(colocator.manifest.resolve(volumes.fixed))
        write_volume(args.histology_volume, colocator.histology_volume(placement, grid))
    return {"specimenId": colocator.manifest.specimen_id,
            "slides": [d.dict(by_alias=True) for d in placement.diagnostics],
            "messages": _messages(placement.messages)}


def fuse(args) -> Dict:
    colocator = _open(args)
    result = colocator.fuse()
    base = os.path.splitext(args.out)[0]
    write_volume(f"{base}.nrrd", result.volume)
    write_transform(f"{base}_t_fuse.txt", result.t_fuse)
    return {"specimenId": colocator.manifest.specimen_id,
            "volume": f"{base}.nrrd", "tFuse": result.t_fuse.matrix.tolist(),
            "diagnostics": result.diagnostics.dict(by_alias=True)}


def validate(args) -> Dict:
    colocator = _open(args)
    result = colocator.validate(args.exclude_curved)
    return {"specimenId": colocator.manifest.specimen_id,
            "report": result.report.dict(by_alias=True),
            "slabs": json.loads(result.summary.to_json(orient="records")),
            "messages": _messages(result.messages)}


def sensitivity(args) -> Dict:
    colocator = _open(args)
    report = colocator.sensitivity()
    return {"specimenId": colocator.manifest.specimen_id, "report": report.dict(by_alias=True)}


def synth(args) -> Dict:
    specimen = generate({"shape": args.shape, "cut_count": args.cut_count, "noise_sigma_mm": args.noise_sigma,
                         "landmark_sigma_mm": args.landmark_sigma, "slides": args.slides,
                         "shrink_factor": args.shrink_factor, "variant_jitter_mm": args.variant_jitter,
                         "seed": args.seed})
    phantom = render_phantom({"rotation_deg": args.phantom_rotation, "translation_mm": args.phantom_translation,
                              "seed": args.seed}) if args.phantom else None
    manifest = write_case(specimen, args.out, phantom, specimen_id=f"synthetic-{args.seed}")
    return {"manifest": manifest, "planes": [p.to_dict() for p in specimen.planes],
            "tFuse": phantom.t_fuse.matrix.tolist() if phantom else None}


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as :class:`UsageError` instead of exiting"""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="histo3d",
                     description="Co-locate histology dissection planes in ex-vivo CT")
    parser.add_argument("--log-config", dest="log_config", default=None,
                        help="YAML logging configuration (default: the packaged one)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def case_command(name: str, handler, description: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=description, description=description)
        sub.add_argument("--manifest", required=True, help="Case manifest (YAML or JSON)")
        sub.add_argument("--out", required=True, help="Output path")
        sub.add_argument("--offset-mm", dest="offset_mm", type=float, default=0.0,
                         help="Global plane offset added to every measurement offset (mm)")
        sub.add_argument("--trim-fraction", dest="trim_fraction", type=float, default=None,
                         help="ICP trim fraction (default: manifest, 0.1)")
        sub.add_argument("--threshold-hu", dest="threshold_hu", type=float, default=None,
                         help=f"Bone threshold in HU (default: manifest, {DEFAULT_THRESHOLD_HU:g})")
        sub.set_defaults(handler=handler)
        return sub

    case_command("fit-curves", fit_curves, "Fit the bisection edge cubics")
    case_command("assign-planes", assign_planes, "Assign the dissection planes")
    place = case_command("place-histology", place_histology, "Place the histology slides on their planes")
    place.add_argument("--histology-volume", dest="histology_volume", default=None,
                       help="Also write the slide labels on the fixed volume grid to this NRRD file")
    case_command("fuse", fuse, "Fuse the bisection volumes; --out names the fused NRRD")
    checks = case_command("validate", validate, "Compare slab widths with the caliper widths")
    checks.add_argument("--exclude-curved", dest="exclude_curved", action="store_true",
                        help="Leave out slabs bounded by a curved cut")
    case_command("sensitivity", sensitivity, "Compare planes from the two spline placements")

    sub = subparsers.add_parser("synth", help="Write a synthetic case directory",
                                description="Write a synthetic case directory")
    sub.add_argument("--out", required=True, help="Case directory")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--shape", choices=SpecimenShapeEnum.values(), default=SpecimenShapeEnum.PARALLEL_LINES.value)
    sub.add_argument("--cut-count", dest="cut_count", type=int, default=3)
    sub.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.0,
                     help="Distance noise sigma (mm)")
    sub.add_argument("--landmark-sigma", dest="landmark_sigma", type=float, default=0.0,
                     help="Slide landmark noise sigma (mm)")
    sub.add_argument("--slides", action="store_true", help="Render slides")
    sub.add_argument("--shrink-factor", dest="shrink_factor", type=float, default=1.0)
    sub.add_argument("--variant-jitter", dest="variant_jitter", type=float, default=0.0,
                     help="Also write a second markup placement jittered by up to this (mm)")
    sub.add_argument("--phantom", action="store_true", help="Write bisection volumes")
    sub.add_argument("--phantom-rotation", dest="phantom_rotation", type=float, default=2.0)
    sub.add_argument("--phantom-translation", dest="phantom_translation", type=float, default=2.0)
    sub.set_defaults(handler=synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one histo3d command

    :param argv: arguments without the program name; ``sys.argv[1:]`` if not given
    :return: the exit code
    """
    try:
        args = _parser().parse_args(argv)
    except UsageError as e:
        print(json.dumps(e.to_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_INPUT

    monitor.configure(args.log_config)
    try:
        document = args.handler(args)
        if args.command == "synth":
            out = os.path.join(args.out, "truth.json")
        elif args.command == "fuse":
            out = f"{os.path.splitext(args.out)[0]}_diagnostics.json"
        else:
            out = args.out
        _write_json(out, document)
    except Histo3dException as e:
        print(json.dumps(e.to_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_INPUT if isinstance(e, InputError) else EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
