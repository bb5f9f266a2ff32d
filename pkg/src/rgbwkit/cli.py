"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .bench import DatasetError, emit_report, ingest, run_benchmark, score_predictions
from .cfa import MrawError, RawImage, read_mraw, write_mraw
from .datagen import (
    CHALLENGE_GAINS,
    calibrate_noise,
    generate_scene_pair,
    noise_table_from_config,
    write_dataset,
)
from .isp import IspConfig, run_isp, write_ppm
from .metrics import LpipsCsvError, evaluate_pair, lpips_ingest, records_to_csv
from .remosaic import BUILTIN_KINDS, DEFAULT_PLUGIN_TIMEOUT, RemosaicAlgo, RemosaicFailure, run_remosaic

log = logging.getLogger("rgbwkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with exit status 1 for usage errors and flag suggestions."""

    known_options: set[str] = set()

    def error(self, message):
        hint = ""
        m = re.search(r"unrecognized arguments: (.*)", message)
        if m:
            for arg in m.group(1).split():
                if arg.startswith("-"):
                    close = difflib.get_close_matches(arg.split("=")[0], sorted(self.known_options), n=1)
                    if close:
                        hint = f"\ndid you mean {close[0]}?"
                        break
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}{hint}\n")

    def add_argument(self, *args, **kwargs):
        _Parser.known_options.update(a for a in args if a.startswith("-"))
        return super().add_argument(*args, **kwargs)


def _size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)[xX](\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _gains(text: str) -> list[float]:
    try:
        values = [float(g) for g in text.split(",") if g.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated gains in dB, got {text!r}") from None
    return [int(g) if g.is_integer() else g for g in values]


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON config ({exc})") from None


def _isp_config(cfg: dict) -> IspConfig:
    if "isp" in cfg:
        return IspConfig.from_dict(cfg["isp"])
    if any(k in cfg for k in ("wb", "ccm", "gamma")):
        return IspConfig.from_dict(cfg)
    return IspConfig()


# -- subcommands ----------------------------------------------------------------

def cmd_datagen(args, cfg) -> int:
    if not args.out:
        raise UsageError("datagen needs --out DIR")
    gains = args.gains or cfg.get("gains") or list(CHALLENGE_GAINS)
    table = noise_table_from_config(cfg.get("noise", {}), gains)
    upsample = args.upsample or cfg.get("upsample", "nearest")
    if args.capture:
        out = Path(args.out)
        for path in args.capture:
            capture = read_mraw(path)
            scene_id = Path(path).stem
            for pair in generate_scene_pair(capture, gains, table, args.seed, scene_id, upsample):
                sdir = out / scene_id
                sdir.mkdir(parents=True, exist_ok=True)
                write_mraw(sdir / f"rgbw_{pair.gain_db:g}db.rgbw", pair.input_rgbw)
                write_mraw(sdir / "gt.bayer", pair.gt_bayer)
        return EXIT_OK
    width, height = args.size or tuple(cfg.get("size", (480, 320)))
    write_dataset(args.out, args.scenes, width=width, height=height, gains=gains,
                  noise_table=table, seed=args.seed, upsample=upsample,
                  hide_test_gt=args.hide_test_gt)
    print(f"wrote {args.scenes} scene(s) to {args.out}")
    return EXIT_OK


def _algo_from_args(name: str, args, cfg) -> RemosaicAlgo:
    plugins = dict(cfg.get("plugins", {}))
    for spec in getattr(args, "plugin", None) or []:
        if "=" not in spec:
            raise UsageError(f"--plugin expects NAME=COMMAND, got {spec!r}")
        pname, command = spec.split("=", 1)
        plugins[pname] = {"command": command}
    if name in BUILTIN_KINDS:
        params = {}
        if getattr(args, "denoise", None):
            params["denoise"] = args.denoise
        return RemosaicAlgo(name, name, None, params)
    if name in plugins:
        entry = plugins[name]
        entry = {"command": entry} if isinstance(entry, str) else entry
        return RemosaicAlgo.plugin(name, entry["command"],
                                   float(entry.get("timeout", DEFAULT_PLUGIN_TIMEOUT)))
    raise UsageError(f"unknown algorithm {name!r}; builtins are {', '.join(BUILTIN_KINDS)}")


def cmd_remosaic(args, cfg) -> int:
    if not (args.input and args.out):
        raise UsageError("remosaic needs --in and --out")
    if args.algo == "plugin":
        if not args.cmd:
            raise UsageError("--algo plugin needs --cmd")
        algo = RemosaicAlgo.plugin("plugin", args.cmd, args.timeout)
    else:
        algo = _algo_from_args(args.algo, args, cfg)
    elapsed = run_remosaic(algo, args.input, args.out)
    print(f"{algo.name}: {elapsed:.4f} s")
    return EXIT_OK


def cmd_isp(args, cfg) -> int:
    if not (args.input and args.out):
        raise UsageError("isp needs --in and --out")
    write_ppm(args.out, run_isp(read_mraw(args.input), _isp_config(cfg)))
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    if not (args.pred and args.gt):
        raise UsageError("eval needs --pred and --gt")
    pred, gt = read_mraw(args.pred), read_mraw(args.gt)
    if pred.size != gt.size:
        raise DatasetError(
            f"size mismatch: prediction {args.pred} is {pred.width}x{pred.height}, "
            f"ground truth {args.gt} is {gt.width}x{gt.height}"
        )
    rec = evaluate_pair(pred, gt, _isp_config(cfg), args.lpips, args.scene, args.gain)
    text = records_to_csv([rec])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _lpips_tables(specs: list[str] | None) -> dict | None:
    if not specs:
        return None
    tables = {}
    for spec in specs:
        name, _, path = spec.rpartition("=") if "=" in spec else ("*", "", spec)
        table = lpips_ingest(path)
        if table is None:
            log.warning("LPIPS file %s not found; LPIPS marked absent", path)
            continue
        tables[name] = table
    return tables or None


def cmd_bench(args, cfg) -> int:
    if not args.dataset:
        raise UsageError("bench needs --dataset DIR")
    manifest = ingest(args.dataset)
    for failure in manifest.failures:
        log.warning("dataset: %s", failure)
    isp_config = _isp_config(cfg)
    lpips = _lpips_tables(args.lpips)
    if args.predictions:
        lp = (lpips or {}).get("submission", (lpips or {}).get("*"))
        report = score_predictions(manifest, args.predictions, "submission", isp_config, lp,
                                   args.split or "test")
    else:
        names = args.algo or ["nearest", "bilinear", "wguided"]
        algos = [_algo_from_args(n, args, cfg) for n in names]
        workers = args.workers or cfg.get("threads")
        report = run_benchmark(manifest, algos, isp_config, lpips, args.split, workers,
                               args.repeats)
    out = Path(args.out or ".")
    formats = ["md", "csv"] if args.report == "both" else [args.report]
    for fmt in formats:
        for path in emit_report(report, fmt, out):
            print(f"wrote {path}")
    return EXIT_OK


def cmd_calibrate(args, cfg) -> int:
    if not args.patch:
        raise UsageError("calibrate needs at least two --patch FILE[@MEAN]")
    patches = []
    for spec in args.patch:
        path, _, mean = spec.partition("@")
        img: RawImage = read_mraw(path)
        level = float(mean) if mean else float(img.data.mean())
        patches.append((level, img))
    params = calibrate_noise(patches, args.gain)
    text = json.dumps({"gain_db": params.gain_db, "sigma_s_sq": params.sigma_s_sq,
                       "sigma_c_sq": params.sigma_c_sq}, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="JSON config (noise table, ISP, plugins)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="rgbwkit", description="RGBW remosaic challenge toolkit")
    parser.add_argument("--version", action="version", version=f"rgbwkit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("datagen", parents=[common], help="generate a paired RGBW/Bayer dataset")
    p.add_argument("--scenes", type=int, default=3, help="number of procedural scenes")
    p.add_argument("--size", type=_size, help="scene size WIDTHxHEIGHT (default 480x320)")
    p.add_argument("--gains", type=_gains, help="comma-separated gains in dB (default 0,24,42)")
    p.add_argument("--upsample", choices=("nearest", "bilinear"))
    p.add_argument("--capture", action="append", help="use an RGBW MRAW1 capture instead of "
                   "a procedural scene (repeatable)")
    p.add_argument("--hide-test-gt", action="store_true", help="omit gt.bayer for test scenes")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("remosaic", parents=[common], help="remosaic one RGBW file to Bayer")
    p.add_argument("--algo", default="wguided", help="nearest, bilinear, wguided, plugin "
                   "or a plugin name from --config")
    p.add_argument("--cmd", help="plugin command; invoked as CMD <in> <out>")
    p.add_argument("--in", dest="input", help="input .rgbw file")
    p.add_argument("--denoise", type=float, default=0.0, help="prefilter strength (sigma)")
    p.add_argument("--timeout", type=float, default=DEFAULT_PLUGIN_TIMEOUT)
    p.set_defaults(func=cmd_remosaic)

    p = sub.add_parser("isp", parents=[common], help="render a Bayer file to PPM")
    p.add_argument("--in", dest="input", help="input .bayer file")
    p.set_defaults(func=cmd_isp)

    p = sub.add_parser("eval", parents=[common], help="score one prediction against GT")
    p.add_argument("--pred", help="predicted .bayer file")
    p.add_argument("--gt", help="ground-truth .bayer file")
    p.add_argument("--lpips", type=float, help="externally computed LPIPS for this pair")
    p.add_argument("--scene", default="", help="scene id written to the CSV row")
    p.add_argument("--gain", type=float, default=0.0, help="gain written to the CSV row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="benchmark algorithms on a dataset")
    p.add_argument("--dataset", help="dataset root")
    p.add_argument("--algo", action="append", help="algorithm to run (repeatable)")
    p.add_argument("--plugin", action="append", help="NAME=COMMAND plugin definition (repeatable)")
    p.add_argument("--report", choices=("md", "csv", "both"), default="md")
    p.add_argument("--lpips", action="append", help="LPIPS CSV, or NAME=CSV per algorithm")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--predictions", help="score precomputed predictions laid out as "
                   "DIR/<scene>/<gain>db.bayer instead of running algorithms")
    p.add_argument("--workers", type=int, help="scene-level worker threads")
    p.add_argument("--repeats", type=int, default=3, help="timed runs per builtin")
    p.add_argument("--denoise", type=float, default=0.0, help="prefilter strength for builtins")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("calibrate", parents=[common], help="fit shot/read noise from flat patches")
    p.add_argument("--patch", action="append", help="flat-field MRAW1 file, optionally FILE@MEAN")
    p.add_argument("--gain", type=float, default=0.0, help="gain the patches were taken at")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"rgbwkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, MrawError, LpipsCsvError, RemosaicFailure, FileNotFoundError,
            ValueError, OSError) as exc:
        print(f"rgbwkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
