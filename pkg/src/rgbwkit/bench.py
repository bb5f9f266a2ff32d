"""Dataset ingestion, benchmark orchestration, runtime measurement and
extrapolation, and leaderboard report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import platform
import statistics
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .cfa import BAYER_GBRG, RGBW_PATTERNS, MrawError, RawImage, read_mraw
from .isp import IspConfig
from .metrics import (
    METRIC_COLUMNS,
    AggregateRow,
    MetricRecord,
    aggregate,
    evaluate_pair,
    format_record,
    gain_key,
)
from .remosaic import RemosaicAlgo, RemosaicFailure, apply_builtin, run_remosaic, validate_output

log = logging.getLogger(__name__)

TARGET_PIXELS = 64_000_000
TIMING_REPEATS = 3
THREADS_ENV = "RGBWKIT_THREADS"


class DatasetError(ValueError):
    pass


def extrapolate_runtime(measured: float, width: int, height: int) -> float:
    """Runtime at 64 MP assuming cost linear in pixel count."""
    if measured <= 0:
        raise ValueError(f"measured runtime must be positive, got {measured}")
    return measured * TARGET_PIXELS / (width * height)


# -- dataset ------------------------------------------------------------------

@dataclass
class SceneEntry:
    scene_id: str
    split: str = "train"
    inputs: dict[str, Path] = field(default_factory=dict)  # gain key -> path
    gt: Path | None = None
    gt_hidden: bool = False


@dataclass
class DatasetManifest:
    root: Path
    scenes: list[SceneEntry]
    gains: list[str]
    seed: int | None = None
    noise: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def select(self, split: str | None) -> list[SceneEntry]:
        return [s for s in self.scenes if split is None or s.split == split]


def _validate_raw(path: Path, want_bayer: bool) -> RawImage:
    img = read_mraw(path)
    if want_bayer and img.pattern != BAYER_GBRG:
        raise MrawError(f"{path}: expected BAYER_GBRG, found {img.pattern.name}")
    if not want_bayer and img.pattern not in RGBW_PATTERNS:
        raise MrawError(f"{path}: expected an RGBW pattern, found {img.pattern.name}")
    return img


def ingest(root: str | Path) -> DatasetManifest:
    """Scan and validate a dataset directory. Unreadable files are listed in
    ``failures`` rather than raised."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    meta: dict = {}
    mpath = root / "manifest.json"
    if mpath.exists():
        try:
            meta = json.loads(mpath.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{mpath}: invalid JSON ({exc})") from None

    splits: dict[str, str] = {}
    for entry in meta.get("scenes", []):
        if isinstance(entry, str):
            splits[entry] = "train"
        else:
            splits[entry["id"]] = entry.get("split", "train")
    gains = [gain_key(g) for g in meta.get("gains", [])]
    if not gains:
        found = {p.name[len("rgbw_"):-len("db.rgbw")] for p in root.glob("*/rgbw_*db.rgbw")}
        gains = sorted(found, key=float)

    ids = set(splits) | {p.parent.name for p in root.glob("*/rgbw_*db.rgbw")}
    manifest = DatasetManifest(root, [], gains, meta.get("seed"), meta.get("noise", {}))
    for scene_id in sorted(ids):
        scene = SceneEntry(scene_id, splits.get(scene_id, "train"))
        size = None
        for g in gains:
            path = root / scene_id / f"rgbw_{g}db.rgbw"
            try:
                img = _validate_raw(path, want_bayer=False)
            except (OSError, MrawError) as exc:
                manifest.failures.append(f"{path}: {exc}" if isinstance(exc, OSError) else str(exc))
                continue
            scene.inputs[g] = path
            size = img.size
        gt = root / scene_id / "gt.bayer"
        if gt.exists():
            try:
                gimg = _validate_raw(gt, want_bayer=True)
                if size is not None and gimg.size != size:
                    raise MrawError(f"{gt}: GT is {gimg.width}x{gimg.height}, inputs are {size[0]}x{size[1]}")
                scene.gt = gt
            except MrawError as exc:
                manifest.failures.append(str(exc))
        elif scene.split == "test":
            scene.gt_hidden = True
        else:
            manifest.failures.append(f"{gt}: missing ground truth")
        if scene.inputs:
            manifest.scenes.append(scene)
    if not manifest.scenes:
        raise DatasetError(f"no usable scenes under {root}")
    return manifest


# -- benchmark ----------------------------------------------------------------

@dataclass
class AlgoResult:
    name: str
    kind: str
    records: list[MetricRecord] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)
    aggregates: dict[str, AggregateRow] | None = None
    runtime_measured: float | None = None
    measured_size: tuple[int, int] | None = None

    @property
    def runtime_64m_estimated(self) -> float | None:
        if self.runtime_measured is None or self.measured_size is None:
            return None
        return extrapolate_runtime(self.runtime_measured, *self.measured_size)


@dataclass
class BenchmarkReport:
    results: list[AlgoResult]
    environment: str = ""
    notes: list[str] = field(default_factory=list)

    def ranked(self) -> list[AlgoResult]:
        scored = [r for r in self.results if r.aggregates]
        return sorted(scored, key=lambda r: (-r.aggregates["all"].m4,
                                             -r.aggregates["all"].psnr, r.name))


def environment_note() -> str:
    return f"{platform.node()} {platform.machine()} {platform.system()} {platform.release()}, " \
           f"python {platform.python_version()}"


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return 1


def _time_builtin(algo: RemosaicAlgo, rgbw: RawImage, repeats: int) -> float:
    apply_builtin(algo, rgbw)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        apply_builtin(algo, rgbw)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _lpips_for(lpips: Mapping | None, scene_id: str, g: str) -> float | None:
    if lpips is None:
        return None
    return lpips.get((scene_id, g))


def _finish(result: AlgoResult, report: BenchmarkReport) -> None:
    result.records.sort(key=lambda r: (r.scene_id, float(r.gain_db)))
    result.failures.sort()
    if result.records:
        result.aggregates = aggregate(result.records)
        absent = sum(r.lpips_source == "absent" for r in result.records)
        if absent:
            report.notes.append(f"{result.name}: LPIPS absent on {absent} row(s); M4 is partial there")
        clamped = sum(r.m4_clamped for r in result.records)
        if clamped:
            report.notes.append(f"{result.name}: M4 clamped to [0, 100] on {clamped} row(s)")
    else:
        report.notes.append(f"{result.name}: every scene failed, excluded from the leaderboard")


def run_benchmark(manifest: DatasetManifest, algos: Sequence[RemosaicAlgo],
                  isp_config: IspConfig | None = None,
                  lpips: Mapping[str, Mapping] | None = None,
                  split: str | None = None, workers: int | None = None,
                  repeats: int = TIMING_REPEATS, work_dir: str | Path | None = None) -> BenchmarkReport:
    """Remosaic and score every (algorithm, scene, gain).

    ``lpips`` maps algorithm name to an LPIPS score table; the key ``"*"``
    applies to every algorithm without its own table. Builtins are scored in parallel and
    timed separately (one warm-up, median of ``repeats``) on the first
    input; plugins run serially and are timed per subprocess.
    """
    isp_config = isp_config or IspConfig()
    workers = workers or default_workers()
    report = BenchmarkReport([], environment_note())
    scenes = [s for s in manifest.select(split) if s.gt is not None]
    hidden = [s.scene_id for s in manifest.select(split) if s.gt_hidden]
    if hidden:
        report.notes.append(f"ground truth hidden for {len(hidden)} scene(s); not scored")
    if not scenes:
        raise DatasetError("no scenes with ground truth to benchmark")
    jobs = [(s, g) for s in scenes for g in manifest.gains if g in s.inputs]

    tmp = tempfile.TemporaryDirectory(prefix="rgbwkit-") if work_dir is None else None
    out_root = Path(work_dir) if work_dir is not None else Path(tmp.name)
    try:
        for algo in algos:
            table = (lpips or {}).get(algo.name, (lpips or {}).get("*"))
            result = AlgoResult(algo.name, algo.kind)
            adir = out_root / algo.name
            adir.mkdir(parents=True, exist_ok=True)

            def job(item, algo=algo, adir=adir, table=table):
                scene, g = item
                try:
                    rgbw = read_mraw(scene.inputs[g])
                    gt = read_mraw(scene.gt)
                    if algo.kind == "plugin":
                        out_path = adir / f"{scene.scene_id}_{g}db.bayer"
                        elapsed = run_remosaic(algo, scene.inputs[g], out_path)
                        pred = read_mraw(out_path)
                    else:
                        t0 = time.perf_counter()
                        pred = apply_builtin(algo, rgbw)
                        elapsed = time.perf_counter() - t0
                        validate_output(pred, rgbw)
                    rec = evaluate_pair(pred, gt, isp_config, _lpips_for(table, scene.scene_id, g),
                                        scene.scene_id, float(g))
                    return rec, elapsed, rgbw.size, None
                except (RemosaicFailure, MrawError, OSError, ValueError) as exc:
                    return None, None, None, f"{scene.scene_id} @ {g} dB: {exc}"

            width = 1 if algo.kind == "plugin" else workers
            with ThreadPoolExecutor(max_workers=width) as pool:
                outcomes = list(pool.map(job, jobs))
            plugin_times = []
            for rec, elapsed, size, err in outcomes:
                if err:
                    result.failures.append(err)
                    log.warning("%s failed on %s", algo.name, err)
                    continue
                result.records.append(rec)
                plugin_times.append(elapsed)
                result.measured_size = result.measured_size or size
            if result.records:
                if algo.kind == "plugin":
                    result.runtime_measured = statistics.median(plugin_times)
                else:
                    first = next(s for s, _ in jobs)
                    g0 = next(g for s, g in jobs if s is first)
                    rgbw = read_mraw(first.inputs[g0])
                    result.measured_size = rgbw.size
                    result.runtime_measured = _time_builtin(algo, rgbw, repeats)
            _finish(result, report)
            report.results.append(result)
    finally:
        if tmp is not None:
            tmp.cleanup()
    return report


def score_predictions(manifest: DatasetManifest, predictions: str | Path, name: str = "submission",
                      isp_config: IspConfig | None = None, lpips: Mapping | None = None,
                      split: str | None = "test") -> BenchmarkReport:
    """Score externally produced Bayers laid out as
    ``<predictions>/<scene_id>/<gain>db.bayer`` against the dataset GT."""
    predictions = Path(predictions)
    report = BenchmarkReport([], environment_note())
    result = AlgoResult(name, "external")
    for scene in manifest.select(split):
        if scene.gt is None:
            report.notes.append(f"{scene.scene_id}: no ground truth available, skipped")
            continue
        gt = read_mraw(scene.gt)
        for g in manifest.gains:
            if g not in scene.inputs:
                continue
            path = predictions / scene.scene_id / f"{g}db.bayer"
            try:
                pred = read_mraw(path)
                validate_output(pred, gt)
                result.records.append(evaluate_pair(pred, gt, isp_config,
                                                    _lpips_for(lpips, scene.scene_id, g),
                                                    scene.scene_id, float(g)))
            except (OSError, MrawError, RemosaicFailure, ValueError) as exc:
                result.failures.append(f"{scene.scene_id} @ {g} dB: {exc}")
    _finish(result, report)
    report.results.append(result)
    report.notes.append("runtime not measured for externally produced predictions")
    return report


# -- report emission ------------------------------------------------------------

CONVENTIONS = (
    "KLD = KL(gt || pred) in nats over 256-bin value histograms of the raw Bayer, eps 1e-8",
    "PSNR/SSIM on 8-bit RGB from the simple ISP; PSNR capped at 100 dB",
    "M4 = PSNR * SSIM * 2^(1 - LPIPS - KLD) per image, then averaged; clamped to [0, 100]",
)

RUNTIME_FOOTNOTE = (
    "Builtins: algorithm only, median of 3 runs after 1 warm-up, file I/O excluded. "
    "Plugins: full subprocess wall-clock including start-up and model loading. "
    "64M column = measured x 64e6 / (width x height). Runtime is reported, never ranked."
)


def _fmt_seconds(s: float | None) -> str:
    if s is None:
        return "n/a"
    return f"{s:.4g}s"


def render_markdown(report: BenchmarkReport) -> str:
    lines = ["# RGBW remosaic benchmark", ""]
    lines += [f"- {c}" for c in CONVENTIONS]
    lines += ["", "## Leaderboard", "",
              "| Rank | Algorithm | PSNR | SSIM | LPIPS | KLD | M4 |",
              "|---:|---|---:|---:|---:|---:|---:|"]
    for rank, r in enumerate(report.ranked(), 1):
        a = r.aggregates["all"]
        lines.append(f"| {rank} | {r.name} | {a.psnr:.3f} | {a.ssim:.4f} | {a.lpips:.4f} "
                     f"| {a.kld:.4f} | {a.m4:.2f} |")
    lines += ["", "## Per gain", "",
              "| Algorithm | Gain (dB) | Images | PSNR | SSIM | LPIPS | KLD | M4 |",
              "|---|---:|---:|---:|---:|---:|---:|---:|"]
    for r in report.ranked():
        for key, a in r.aggregates.items():
            if key == "all":
                continue
            lines.append(f"| {r.name} | {key} | {a.n} | {a.psnr:.3f} | {a.ssim:.4f} "
                         f"| {a.lpips:.4f} | {a.kld:.4f} | {a.m4:.2f} |")
    lines += ["", "## Runtime", "",
              "| Algorithm | Measured size | Measured | 64M (estimated) |",
              "|---|---|---:|---:|"]
    for r in report.results:
        size = f"{r.measured_size[0]}x{r.measured_size[1]}" if r.measured_size else "n/a"
        lines.append(f"| {r.name} | {size} | {_fmt_seconds(r.runtime_measured)} "
                     f"| {_fmt_seconds(r.runtime_64m_estimated)} |")
    lines += ["", RUNTIME_FOOTNOTE]
    failures = [(r.name, f) for r in report.results for f in r.failures]
    if failures:
        lines += ["", "## Failures", ""] + [f"- {name}: {f}" for name, f in failures]
    if report.notes:
        lines += ["", "## Notes", ""] + [f"- {n}" for n in report.notes]
    if report.environment:
        lines += ["", f"Environment: {report.environment}"]
    return "\n".join(lines) + "\n"


def render_metrics_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("algo",) + METRIC_COLUMNS)
    for r in report.results:
        for rec in r.records:
            w.writerow([r.name] + format_record(rec))
    return buf.getvalue()


def render_runtime_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algo", "kind", "width", "height", "runtime_measured_s", "runtime_64m_estimated_s"])
    for r in report.results:
        size = r.measured_size or ("", "")
        w.writerow([r.name, r.kind, size[0], size[1],
                    "" if r.runtime_measured is None else f"{r.runtime_measured:.6f}",
                    "" if r.runtime_64m_estimated is None else f"{r.runtime_64m_estimated:.6f}"])
    return buf.getvalue()


def emit_report(report: BenchmarkReport, fmt: str, out_dir: str | Path) -> list[Path]:
    """Write ``report.md`` (markdown) or ``metrics.csv`` + ``runtime.csv``
    (csv) into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt in ("md", "markdown"):
        path = out_dir / "report.md"
        path.write_text(render_markdown(report), encoding="utf-8")
        return [path]
    if fmt == "csv":
        paths = [out_dir / "metrics.csv", out_dir / "runtime.csv"]
        paths[0].write_text(render_metrics_csv(report), encoding="utf-8")
        paths[1].write_text(render_runtime_csv(report), encoding="utf-8")
        return paths
    raise ValueError(f"unknown report format {fmt!r}")
