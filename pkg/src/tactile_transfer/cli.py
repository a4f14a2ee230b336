"""Command-line interface: ``tactile-transfer <subcommand> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
Progress goes to standard error; results are written to files only, each
through a temporary file renamed into place on success.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from . import formats, pipeline, render
from .contact import N_ELECTRODES, generate_paired_dataset

log = logging.getLogger("tactile_transfer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tactile-transfer", description="Translate BioTac signals into DIGIT tactile images.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a paired BioTac/DIGIT contact dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output .tds file")
    p.add_argument("--ranges", help="key = value file with sampling ranges")

    p = sub.add_parser("train", help="train one network or the whole chain")
    p.add_argument("--net", required=True, choices=pipeline.NETS + ("all",))
    p.add_argument("--data", help="training dataset (.tds)")
    p.add_argument("--out", help="model directory; also read for already trained dependencies")
    p.add_argument("--config", help="key = value training configuration")

    p = sub.add_parser("fit-calib", help="fit the polynomial rendering table")
    p.add_argument("--out", required=True, help="output .tcal file")

    p = sub.add_parser("convert", help="convert electrode frames to tactile images")
    p.add_argument("--signal", required=True, help=f"CSV file, {N_ELECTRODES} values per line")
    p.add_argument("--models", required=True, help="directory with the five .tnet files")
    p.add_argument("--calib", required=True, help="calibration table (.tcal)")
    p.add_argument("--out", required=True, help="output .ppm; lines after the first get an index suffix")
    p.add_argument("--dump-intermediates", metavar="DIR", help="also write fields and height maps here")
    p.add_argument("--direct", action="store_true", help="chain S2MPN into M2MPN without re-encoding")

    p = sub.add_parser("eval", help="evaluate trained models on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--report", required=True, help="tab-delimited report; figures are written beside it")
    p.add_argument("--split", choices=("test", "all"), default="test",
                   help="score the held-out test split of the training seed, or every record")
    p.add_argument("--seed", type=int, default=0, help="split seed used for training")
    p.add_argument("--no-figures", action="store_true")
    return parser


# -- model directories --------------------------------------------------------


def model_path(directory, name: str) -> Path:
    return Path(directory) / f"{name}.tnet"


def load_model(directory, name: str):
    model, role = formats.read_model(model_path(directory, name))
    if role != name:
        raise formats.FormatError(f"{model_path(directory, name)} holds a {role} network, expected {name}")
    return model


def load_models(directory) -> pipeline.PipelineModels:
    return pipeline.PipelineModels(**{name: load_model(directory, name) for name in pipeline.NETS})


def load_available(directory, names) -> dict:
    return {n: load_model(directory, n) for n in names if model_path(directory, n).exists()}


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(args) -> None:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    ranges = cfg.read_ranges(args.ranges) if args.ranges else None
    log.info("generating %d samples with seed %d", args.count, args.seed)
    samples = generate_paired_dataset(args.count, args.seed, ranges)
    formats.write_dataset(args.out, samples)
    log.info("wrote %s", args.out)


def pipeline_config(values: dict) -> pipeline.PipelineConfig:
    hypers, hidden, latent = {}, {}, dict(pipeline.DEFAULT_LATENT)
    for net in pipeline.NETS:
        hypers[net] = cfg.hyper_for(net, values, pipeline.DEFAULT_HYPERS[net])
        hidden[net] = cfg.hidden_for(net, values) or pipeline.DEFAULT_HIDDEN[net]
        if net in cfg.VAE_NETS:
            latent[net] = cfg.latent_for(net, values) or latent[net]
    return pipeline.PipelineConfig(hypers=hypers, hidden=hidden, latent=latent, seed=cfg.seed_from(values))


def _path_arg(args, values: dict, flag: str, key: str) -> str:
    value = getattr(args, flag) or values.get(key)
    if value is None:
        raise UsageError(f"--{flag} is required (or set {key} in the config)")
    return value


def cmd_train(args) -> None:
    values = cfg.read_config(args.config) if args.config else {}
    data = _path_arg(args, values, "data", "data")
    out = Path(_path_arg(args, values, "out", "models"))
    config = pipeline_config(values)
    nets = pipeline.NETS if args.net == "all" else (args.net,)
    samples = formats.read_dataset(data)
    log.info("read %d samples from %s", len(samples), data)
    existing = load_available(out, [n for n in ("svb", "mvb", "mvd") if n not in nets])
    report = pipeline.TrainReport()
    models = pipeline.train_pipeline(samples, config, nets=nets, models=existing, report=report)
    out.mkdir(parents=True, exist_ok=True)
    for name in nets:
        formats.write_model(model_path(out, name), models[name], name)
        log.info("wrote %s", model_path(out, name))
    for name, r2 in report.r2.items():
        log.info("%s held-out R2 %.4f", name, r2)


def cmd_fit_calib(args) -> None:
    log.info("fitting calibration table")
    table = render.fit_calibration(render.generate_calibration_set(render.LightRig()))
    formats.write_calibration(args.out, table)
    log.info("wrote %s", args.out)


def read_signals(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            values = [float(v) for v in line.split(",")]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value") from None
        if len(values) != N_ELECTRODES:
            raise ValueError(f"{path}:{lineno}: expected {N_ELECTRODES} values, got {len(values)}")
        rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no signal lines")
    return np.array(rows)


def indexed(path: Path, i: int, n: int) -> Path:
    return path if n == 1 else path.with_name(f"{path.stem}_{i:03d}{path.suffix}")


def cmd_convert(args) -> None:
    signals = read_signals(args.signal)
    models = load_models(args.models)
    calib = formats.read_calibration(args.calib)
    out = Path(args.out)
    dump = Path(args.dump_intermediates) if args.dump_intermediates else None
    if dump:
        dump.mkdir(parents=True, exist_ok=True)
    for i, signal in enumerate(signals):
        result = pipeline.convert(models, calib, signal, direct=args.direct)
        formats.write_ppm(indexed(out, i, len(signals)), result.image)
        if dump:
            tag = f"{i:03d}"
            formats.write_field(dump / f"biotac_{tag}.dfld", result.biotac_field)
            formats.write_field(dump / f"digit_{tag}.dfld", result.digit_field)
            formats.write_heightmap(dump / f"height_{tag}.thmp", result.heightmap)
    log.info("converted %d signal(s)", len(signals))


def cmd_eval(args) -> None:
    from . import plotting

    samples = formats.read_dataset(args.data)
    if args.split == "test":
        _, _, test_idx = pipeline.split_indices(len(samples), args.seed)
        samples = [samples[i] for i in sorted(test_idx)]
    models = load_models(args.models)
    calib = formats.read_calibration(args.calib)
    log.info("evaluating %d samples", len(samples))
    report = pipeline.evaluate(models, samples)
    renders = pipeline.render_checks(models, calib, samples[:5])
    text = pipeline.format_report(report, renders)
    report_path = Path(args.report)
    with formats.atomic_write(report_path) as fh:
        fh.write(text.encode())
    log.info("wrote %s", report_path)
    if not args.no_figures:
        for path in plotting.write_eval_figures(report_path, models, calib, samples[:5], report):
            log.info("wrote %s", path)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "fit-calib": cmd_fit_calib,
    "convert": cmd_convert,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tactile-transfer: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"tactile-transfer: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
