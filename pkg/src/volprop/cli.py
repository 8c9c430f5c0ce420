"""Command-line entry point: run, ablate, report, phantom.

run executes one configuration over a manifest and writes records plus an
aggregate report; ablate expands a config grid and runs each cell into
out/<config_id>/, skipping cells whose report already exists so
interrupted sweeps resume; report consolidates completed runs into
summary tables; phantom writes a synthetic dataset the other commands can
consume. Reports are byte-stable: profiling is opt-in and lands in a
separate file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import dataharness, profiler as profmod
from .config import (
    config_id,
    expand_grid,
    make_backend,
    resolve_config,
    to_run_config,
)
from .engine import maybe_cache_backend, run_case
from .errors import NoResults, VolpropError
from .metrics import MetricsRecord, aggregate, dice, hausdorff_mm, iou
from .phantoms import write_phantom_suite
from .profiler import StageProfiler
from .volgrid import VolumeKind, load_volume

_REPORT_SCHEMA = 1
_PRETTY = {"np": "NP", "baseline": "Base", "sps": "SPS", "is": "IS", "is+sps": "IS+SPS"}


def _evaluate_entry(
    entry: dataharness.ManifestEntry,
    cfg: dict,
    backend,
    profile: bool,
) -> tuple[MetricsRecord, list[profmod.StageTiming]]:
    volume = load_volume(entry.volume_path, VolumeKind.INTENSITY)
    gt = load_volume(entry.mask_path, VolumeKind.BINARY_MASK)
    cid = config_id(cfg)
    prof = StageProfiler(run_id=f"{cid}/{entry.case_id}") if profile else profmod.NULL_PROFILER
    pred, gt_eval = run_case(volume, gt, to_run_config(cfg), backend, profiler=prof)

    d = dice(pred.data, gt_eval.data)
    j = iou(pred.data, gt_eval.data)
    try:
        hd = hausdorff_mm(pred.data, gt_eval.data, gt_eval.spacing)
    except VolpropError:
        hd = None
    timings: dict[str, float] = {}
    for t in prof.timings:
        timings[t.stage.value] = timings.get(t.stage.value, 0.0) + t.duration_ms
    rec = MetricsRecord(
        structure=entry.target_class, dice=d, iou=j, hausdorff_mm=hd,
        config_id=cid, case_id=entry.case_id, timings=timings,
    )
    return rec, list(prof.timings)


_POOL: dict = {}


def _pool_init(cfg: dict, backend_override: str | None) -> None:
    _POOL["cfg"] = cfg
    _POOL["backend"] = maybe_cache_backend(make_backend(cfg, backend_override))


def _pool_entry(entry_fields: tuple) -> tuple:
    entry = dataharness.ManifestEntry(*entry_fields)
    try:
        rec, _ = _evaluate_entry(entry, _POOL["cfg"], _POOL["backend"], profile=False)
        return ("ok", rec.__dict__)
    except Exception as e:  # surfaced per keep_going on the parent side
        return ("error", {"case_id": entry.case_id, "error": f"{type(e).__name__}: {e}"})


def _write_json_atomic(path: Path, payload) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    os.replace(tmp, path)


def _report_csv(cid: str, agg: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["config_id", "structure_class", "n", "dice_mean", "dice_std",
                "iou_mean", "iou_std", "hd_mm_mean", "hd_mm_std", "hd_excluded"])

    def fmt(v):
        return "" if v is None else f"{v:.6f}"

    rows = list(agg["classes"].items())
    if agg["overall"] is not None:
        rows.append(("ALL", agg["overall"]))
    for name, s in rows:
        w.writerow([cid, name, s["n"], fmt(s["dice_mean"]), fmt(s["dice_std"]),
                    fmt(s["iou_mean"]), fmt(s["iou_std"]), fmt(s["hd_mm_mean"]),
                    fmt(s["hd_mm_std"]), s["hd_excluded"]])
    return buf.getvalue()


def _run_config_over_manifest(
    cfg: dict,
    manifest: dataharness.Manifest,
    out_dir: Path,
    *,
    workers: int = 1,
    keep_going: bool = False,
    profile: bool = False,
    backend_override: str | None = None,
) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    cid = config_id(cfg)
    records: list[MetricsRecord] = []
    failures: list[dict] = []
    all_timings: list[profmod.StageTiming] = []

    if workers > 1 and not profile and len(manifest.entries) > 1:
        fields = [(e.case_id, e.target_class, e.volume_path, e.mask_path)
                  for e in manifest.entries]
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_pool_init, initargs=(cfg, backend_override)
        ) as pool:
            for status, payload in pool.map(_pool_entry, fields):
                if status == "ok":
                    records.append(MetricsRecord(**payload))
                elif keep_going:
                    failures.append(payload)
                else:
                    raise VolpropError(f"{payload['case_id']}: {payload['error']}")
    else:
        backend = maybe_cache_backend(make_backend(cfg, backend_override))
        for entry in manifest.entries:
            try:
                rec, timings = _evaluate_entry(entry, cfg, backend, profile)
                records.append(rec)
                all_timings.extend(timings)
            except Exception as e:
                if not keep_going:
                    raise
                failures.append({"case_id": entry.case_id,
                                 "error": f"{type(e).__name__}: {e}"})

    with (out_dir / "records.jsonl").open("w") as f:
        for r in records:
            row = dict(r.__dict__)
            f.write(json.dumps(row, sort_keys=True) + "\n")
    if failures:
        with (out_dir / "failures.jsonl").open("w") as f:
            for row in failures:
                f.write(json.dumps(row, sort_keys=True) + "\n")
    if profile and all_timings:
        profmod.write_raw_csv(all_timings, out_dir / "timings.csv")
        profmod.report(all_timings, "csv", out_dir / "timings_summary.csv")

    agg = aggregate(records)
    (out_dir / "report.csv").write_text(_report_csv(cid, agg))
    _write_json_atomic(out_dir / "config.json", cfg)
    # report.json is the completion marker; written last, atomically.
    _write_json_atomic(out_dir / "report.json", {
        "schema_version": _REPORT_SCHEMA,
        "config_id": cid,
        "config_name": cfg.get("name", ""),
        "n_records": len(records),
        "n_failures": len(failures),
        "hd_unit": "mm",
        "metrics": agg,
    })
    return 0


def cmd_run(args) -> int:
    cfg = resolve_config(args.config)
    manifest = dataharness.read_manifest(args.manifest)
    return _run_config_over_manifest(
        cfg, manifest, Path(args.out),
        workers=args.workers, keep_going=args.keep_going,
        profile=args.profile, backend_override=args.backend,
    )


def cmd_ablate(args) -> int:
    grid_path = Path(args.grid)
    try:
        grid_doc = json.loads(grid_path.read_text())
    except FileNotFoundError:
        raise NoResults(f"grid file not found: {grid_path}") from None
    except json.JSONDecodeError as e:
        from .errors import GridInvalid

        raise GridInvalid(f"grid {grid_path} is not valid JSON: {e}") from e
    configs = expand_grid(grid_doc)
    manifest = dataharness.read_manifest(args.manifest)
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    statuses = []
    for cfg in configs:
        cid = config_id(cfg)
        cfg_dir = out_root / cid
        if (cfg_dir / "report.json").exists():
            statuses.append({"config_id": cid, "name": cfg.get("name", ""), "status": "skipped"})
            continue
        _run_config_over_manifest(
            cfg, manifest, cfg_dir,
            workers=args.workers, keep_going=args.keep_going,
            profile=args.profile, backend_override=args.backend,
        )
        statuses.append({"config_id": cid, "name": cfg.get("name", ""), "status": "completed"})
    _write_json_atomic(out_root / "grid_summary.json", {
        "n_configs": len(configs),
        "runs": sorted(statuses, key=lambda s: s["config_id"]),
    })
    for s in statuses:
        print(f"{s['config_id']}  {s['status']:9s}  {s['name']}")
    return 0


def _load_completed(out_root: Path) -> list[dict]:
    rows = []
    for report_path in sorted(out_root.glob("*/report.json")):
        with report_path.open() as f:
            rows.append(json.load(f))
    if not rows:
        raise NoResults(f"no completed runs under {out_root}")
    return rows


def cmd_report(args) -> int:
    out_root = Path(args.out)
    rows = _load_completed(out_root)
    by_key = {}
    for r in rows:
        key = r.get("config_name") or r["config_id"]
        by_key[key] = r

    baseline_key = args.baseline or ("baseline" if "baseline" in by_key else next(iter(by_key)))
    if baseline_key not in by_key:
        raise NoResults(f"baseline {baseline_key!r} not among completed runs: {sorted(by_key)}")
    non_base = [k for k in by_key if k != baseline_key]
    variant_key = args.variant or ("is+sps" if "is+sps" in by_key else (non_base[-1] if non_base else baseline_key))
    if variant_key not in by_key:
        raise NoResults(f"variant {variant_key!r} not among completed runs: {sorted(by_key)}")

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["config_id", "name", "n", "dice_mean", "dice_std", "iou_mean",
                "iou_std", "hd_mm_mean", "hd_mm_std", "hd_excluded"])
    for key in sorted(by_key):
        r = by_key[key]
        o = r["metrics"]["overall"]
        if o is None:
            w.writerow([r["config_id"], key, 0, "", "", "", "", "", "", 0])
            continue
        w.writerow([
            r["config_id"], key, o["n"],
            f"{o['dice_mean']:.6f}", f"{o['dice_std']:.6f}",
            f"{o['iou_mean']:.6f}", f"{o['iou_std']:.6f}",
            "" if o["hd_mm_mean"] is None else f"{o['hd_mm_mean']:.6f}",
            "" if o["hd_mm_std"] is None else f"{o['hd_mm_std']:.6f}",
            o["hd_excluded"],
        ])
    summary_csv = buf.getvalue()
    (out_root / "summary.csv").write_text(summary_csv)

    classes = sorted({c for r in by_key.values() for c in r["metrics"]["classes"]})
    ordered = [k for k in ("np", "baseline", "sps", "is", "is+sps") if k in by_key]
    ordered += [k for k in sorted(by_key) if k not in ordered]
    buf2 = io.StringIO()
    w2 = csv.writer(buf2)
    w2.writerow(["structure_class"] + [_PRETTY.get(k, k) for k in ordered]
                + [f"delta_dice({_PRETTY.get(variant_key, variant_key)}-{_PRETTY.get(baseline_key, baseline_key)})"])
    for cls in classes:
        row = [cls]
        for key in ordered:
            s = by_key[key]["metrics"]["classes"].get(cls)
            row.append("" if s is None else f"{s['dice_mean']:.6f}")
        vb = by_key[variant_key]["metrics"]["classes"].get(cls)
        bb = by_key[baseline_key]["metrics"]["classes"].get(cls)
        delta = "" if (vb is None or bb is None) else f"{vb['dice_mean'] - bb['dice_mean']:+.6f}"
        row.append(delta)
        w2.writerow(row)
    per_class_csv = buf2.getvalue()
    (out_root / "per_class.csv").write_text(per_class_csv)

    print(summary_csv, end="")
    print()
    print(per_class_csv, end="")
    return 0


def cmd_phantom(args) -> int:
    manifest = write_phantom_suite(
        args.out, count=args.count, kind=args.kind, size=args.size, seed=args.seed
    )
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="volprop",
        description="Volume-aware segmentation propagation and evaluation harness.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one config over a manifest")
    run.add_argument("--config", required=True,
                     help="config JSON path or preset name (np, baseline, sps, is, is+sps, three-axis-9)")
    run.add_argument("--manifest", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--keep-going", action="store_true",
                     help="record per-entry failures and continue")
    run.add_argument("--profile", action="store_true",
                     help="collect stage timings (runs serially; extra files)")
    run.add_argument("--backend", default=None, metavar="{synthetic,onnx:<dir>}")
    run.set_defaults(func=cmd_run)

    ab = sub.add_parser("ablate", help="expand a config grid and run every cell")
    ab.add_argument("--grid", required=True)
    ab.add_argument("--manifest", required=True)
    ab.add_argument("--out", required=True)
    ab.add_argument("--workers", type=int, default=1)
    ab.add_argument("--keep-going", action="store_true")
    ab.add_argument("--profile", action="store_true")
    ab.add_argument("--backend", default=None, metavar="{synthetic,onnx:<dir>}")
    ab.set_defaults(func=cmd_ablate)

    rep = sub.add_parser("report", help="consolidate completed runs into tables")
    rep.add_argument("--out", required=True, help="directory holding per-config run dirs")
    rep.add_argument("--baseline", default=None, help="baseline config name or id")
    rep.add_argument("--variant", default=None, help="variant for the delta column")
    rep.set_defaults(func=cmd_report)

    ph = sub.add_parser("phantom", help="write a synthetic phantom dataset")
    ph.add_argument("--out", required=True)
    ph.add_argument("--count", type=int, default=10)
    ph.add_argument("--kind", choices=["sphere", "adversarial"], default="sphere")
    ph.add_argument("--size", type=int, default=64)
    ph.add_argument("--seed", type=int, default=0)
    ph.set_defaults(func=cmd_phantom)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VolpropError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
