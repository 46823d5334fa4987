"""Command-line orchestration: pseudo-label generation, evaluation against
sparse annotations, the SD x bifurcation-axis ablation grid, phantom
generation, and table-shaped reports."""

import argparse
import csv
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .centerline import load_centerline
from .contours import load_annotations, rasterize_contours
from .metrics import (ABLATION_CSV_HEADER, EvalCase, aggregate, evaluate_case,
                      read_case_csv, select_configuration, write_aggregate_csv,
                      write_case_csv)
from .phantom import PhantomSpec, generate, write_bundle
from .reconstruction import (PipelineConfig, ReconstructionError,
                             build_pseudolabel, extract_isosurface,
                             poisson_indicator, run_segmentation_stage)
from .segmenter import LabelMask2D, SegmenterBackend, SegmenterError
from .volume import Volume3, load_volume, sample_label_plane, save_volume

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


def _atomic_write(path: Path, writer):
    """Write via temp file + rename so partial output never lands."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    os.close(fd)
    try:
        writer(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _backend_from_arg(arg: str, io_dir=None) -> SegmenterBackend:
    if arg == "builtin":
        return SegmenterBackend("builtin_oracle")
    if arg.startswith("cmd:"):
        io_dir = Path(io_dir or tempfile.mkdtemp(prefix="segio_"))
        return SegmenterBackend("external_process", command=arg[4:], io_dir=io_dir)
    raise SystemExit(f"error: unknown segmenter {arg!r} (use builtin or cmd:<command>)")


def _load_config_file(path):
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        sd=args.sd,
        use_bifurcation_axis=args.bifurcation_axis,
        bif_region=args.bif_region,
        branch_offset=args.branch_offset,
        grid_spacing=args.grid,
    )


def cmd_pseudolabel(args) -> int:
    for name in ("volume", "centerline"):
        p = Path(getattr(args, name))
        if not p.exists():
            print(f"error: missing {name} file: {p}", file=sys.stderr)
            return EXIT_ERROR
    volume = load_volume(args.volume)
    tree = load_centerline(args.centerline)
    backend = _backend_from_arg(args.segmenter)
    cfg = _pipeline_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = build_pseudolabel(volume, tree, backend, cfg)
    except (ReconstructionError, SegmenterError) as exc:
        print(f"error: pseudo-label pipeline: {exc}", file=sys.stderr)
        return EXIT_ERROR
    # .rvol writes a header/payload pair, so the atomic temp+rename helper
    # does not apply; the header is written last and names the payload
    save_volume(result.mask, out / "pseudolabel.rvol", "u8")
    provenance = dict(result.provenance)
    provenance["version"] = __version__
    provenance["config"] = vars(args).copy()
    provenance["config"].pop("func", None)
    _atomic_write(out / "provenance.json", lambda p: p.write_text(
        json.dumps(provenance, indent=1, default=str) + "\n", encoding="utf-8"))
    print(f"pseudo-label written to {out} "
          f"({provenance['failed']} failed of {provenance['planes']} planes)")
    return EXIT_PARTIAL if provenance["failed"] > 0 else EXIT_OK


def _evaluate_records(mask: Volume3, annotations, case_prefix: str,
                      failed_radius: float):
    records = []
    for plane_id, vessel, cset, spacing, size in annotations:
        labels = sample_label_plane(mask, cset.pose, size, spacing)
        pred = LabelMask2D(cset.pose, spacing, labels)
        expert_mask = rasterize_contours(cset, size, spacing)
        case = EvalCase(f"{case_prefix}/plane{plane_id}", plane_id, vessel,
                        pred, cset, expert_mask)
        records.append(evaluate_case(case, failed_radius=failed_radius))
    return records


def cmd_evaluate(args) -> int:
    for name in ("mask", "annotations"):
        p = Path(getattr(args, name))
        if not p.exists():
            print(f"error: missing {name} file: {p}", file=sys.stderr)
            return EXIT_ERROR
    mask = load_volume(args.mask)
    annotations = load_annotations(args.annotations)
    records = _evaluate_records(mask, annotations, args.case_id, args.failed_radius)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "cases.csv", lambda p: write_case_csv(records, p))
    _atomic_write(out / "per_plane.csv",
                  lambda p: write_aggregate_csv(aggregate(records, "plane"), p))
    failed = sum(r.failed for r in records)
    print(f"evaluated {len(records)} planes, {failed} failed")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.fixture:
        rows = list(csv.DictReader(open(args.fixture, newline="", encoding="utf-8")))
        best = select_configuration(rows)
        print(f"selected: SD {best['sd']} BA {best['ba']}")
        if args.out:
            Path(args.out).write_text(json.dumps(best, indent=1) + "\n",
                                      encoding="utf-8")
        return EXIT_OK

    volume = load_volume(args.volume)
    tree = load_centerline(args.centerline)
    annotations = load_annotations(args.annotations) if args.annotations else None
    backend = _backend_from_arg(args.segmenter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for sd in (0.3, 0.6, 1.2):
        for ba in (True, False):
            cfg = PipelineConfig(sd=sd, use_bifurcation_axis=ba,
                                 bif_region=args.bif_region,
                                 branch_offset=args.branch_offset,
                                 grid_spacing=args.grid)
            result = build_pseudolabel(volume, tree, backend, cfg)
            row = {"sd": f"{sd:g}", "ba": "yes" if ba else "no",
                   "failed_slices": result.provenance["failed"]
                   + result.provenance["invalid"],
                   "num_slices": result.provenance["planes"]}
            if annotations:
                records = _evaluate_records(result.mask, annotations,
                                            f"sd{sd:g}-ba{int(ba)}",
                                            args.failed_radius)
                agg = aggregate(records, "plane")[-1]
                row.update({
                    "lumen_acd": f"{agg.lumen.acd:.3f}",
                    "lumen_hd": f"{agg.lumen.hd:.3f}",
                    "lumen_dsc": f"{agg.lumen.dsc:.3f}",
                    "wall_acd": f"{agg.wall.acd:.3f}",
                    "wall_hd": f"{agg.wall.hd:.3f}",
                    "wall_dsc": f"{agg.wall.dsc:.3f}",
                })
            else:
                for k in ("lumen_acd", "lumen_hd", "lumen_dsc",
                          "wall_acd", "wall_hd", "wall_dsc"):
                    row[k] = ""
            rows.append(row)

    def write_rows(p):
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=ABLATION_CSV_HEADER)
            w.writeheader()
            w.writerows(rows)

    _atomic_write(out / "ablation.csv", write_rows)
    selectable = [r for r in rows if r["wall_hd"] != ""]
    if selectable:
        best = select_configuration(selectable)
        print(f"selected: SD {best['sd']} BA {best['ba']}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    spec = PhantomSpec(noise_sigma=args.noise_sigma, seed=args.seed,
                       voxel_spacing=args.spacing)
    bundle = generate(spec)
    write_bundle(bundle, args.out)
    print(f"phantom bundle written to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    inputs = []
    for path in args.cases:
        p = Path(path)
        if not p.exists():
            print(f"error: missing case CSV: {p}", file=sys.stderr)
            return EXIT_ERROR
        inputs.append((p.stem, read_case_csv(p)))
    if not inputs:
        print("error: no case CSVs given", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    merged = []
    for name, records in inputs:
        for r in records:
            merged.append(type(r)(f"{name}/{r.case_id}", r.plane_id, r.vessel,
                                  lumen=r.lumen, wall=r.wall, failed=r.failed))
    _atomic_write(out / "per_plane.csv",
                  lambda p: write_aggregate_csv(aggregate(merged, "plane"), p))
    _atomic_write(out / "per_dataset.csv",
                  lambda p: write_aggregate_csv(aggregate(merged, "dataset"), p))
    print(f"report written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesselwall",
        description="Sparse carotid annotations -> dense 3D pseudo-labels, "
                    "plus contour-based evaluation of 3D segmentations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_pipeline(p):
        p.add_argument("--volume", required=True)
        p.add_argument("--centerline", required=True)
        p.add_argument("--segmenter", default="builtin",
                       help="builtin or cmd:<command>")
        p.add_argument("--bif-region", dest="bif_region", type=float, default=4.0)
        p.add_argument("--branch-offset", dest="branch_offset", type=float,
                       default=4.0)
        p.add_argument("--grid", type=float, default=0.3,
                       help="pseudo-label grid spacing in mm")
        p.add_argument("--failed-radius", dest="failed_radius", type=float,
                       default=5.0)
        p.add_argument("--out", required=True)

    p = sub.add_parser("pseudolabel", help="create a 3D pseudo-label mask")
    common_pipeline(p)
    p.add_argument("--sd", type=float, default=0.6)
    ba = p.add_mutually_exclusive_group()
    ba.add_argument("--bifurcation-axis", dest="bifurcation_axis",
                    action="store_true", default=True)
    ba.add_argument("--no-bifurcation-axis", dest="bifurcation_axis",
                    action="store_false")
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("evaluate", help="evaluate a 3D mask on sparse contours")
    p.add_argument("--mask", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--case-id", dest="case_id", default="case")
    p.add_argument("--failed-radius", dest="failed_radius", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the SD x BA grid or select from a CSV")
    common_pipeline(p)
    p.add_argument("--annotations")
    p.add_argument("--fixture", help="pre-computed ablation CSV to select from")
    for a in p._actions:  # fixture mode needs no inputs
        if a.dest in ("volume", "centerline", "out"):
            a.required = False
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("phantom", help="emit an analytic phantom bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spacing", type=float, default=0.6)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("report", help="merge per-case CSVs into table reports")
    p.add_argument("--out", required=True)
    p.add_argument("cases", nargs="*")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # stable exit-code contract for harnesses
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
