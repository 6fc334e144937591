"""Command line entry point: ``nnhacore <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import core, modelio
from .config import RunConfig
from .errors import (ConfigError, DataError, ModelFormatError, SampleRateError, ShapeError,
                     SpecError, TrainingError)
from .filterbank import FilterBank
from .prescription import (Mlp, forward, grid_levels, midpoint_levels, oracle_grid,
                           personalize, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
    flags = {name: getattr(args, name, None)
             for name in ("input", "output", "trace", "model", "seed", "engine", "loss_log",
                          "anchor_weight")}
    return cfg.override(**flags)


def _require(cfg, name, what):
    path = cfg.path(name)
    if path is None:
        raise UsageError(f"missing {what} (use --{name.replace('_', '-')} or the config file)")
    return path


def _emit(doc):
    print(json.dumps(doc, indent=2, sort_keys=True, default=_json_default))


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def cmd_design_filters(cfg) -> int:
    out_dir = _require(cfg, "output", "output directory")
    bank = FilterBank(cfg.filterbank())
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "taps.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "tap_index", "value"])
        for fir in bank.filters:
            for i, value in enumerate(fir.taps):
                writer.writerow([fir.band, i, repr(float(value))])
    with open(out_dir / "response.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "bin", "freq_hz", "magnitude"])
        for fir in bank.filters:
            for k, mag in enumerate(fir.magnitude_response()):
                writer.writerow([fir.band, k, repr(k * fir.dft_resolution_hz), repr(float(mag))])
    spec = bank.spec
    print(f"N = {bank.length} taps ({1000.0 * bank.length / spec.sample_rate_hz:g} ms)")
    print(f"f_t = {bank.filters[0].dft_resolution_hz:g} Hz")
    print("band  centre_hz  lo_hz  hi_hz")
    for b in bank.bands:
        print(f"{b.index:4d}  {b.center_hz:9g}  {b.lo_hz:5g}  {b.hi_hz:5g}")
    return EXIT_OK


def _core_config(cfg) -> core.HaCoreConfig:
    engine = cfg.engine()
    b = cfg.doc["baseline"]
    kwargs = dict(filterbank=cfg.filterbank(), slm=cfg.slm(), engine=engine,
                  attack_ms=float(b["attack_ms"]), release_ms=float(b["release_ms"]))
    if engine == "neural":
        model_path = _require(cfg, "model", "model file")
        if not model_path.is_file():
            raise DataError(f"model file not found: {model_path}")
        kwargs["model"] = modelio.load_model(model_path)
    else:
        kwargs["rule"] = cfg.rule()
    try:
        return core.HaCoreConfig(**kwargs)
    except (ValueError, ShapeError) as exc:
        raise DataError(str(exc)) from exc


def cmd_process(cfg) -> int:
    in_path = _require(cfg, "input", "input WAV")
    out_path = _require(cfg, "output", "output WAV")
    trace_path = cfg.path("trace")
    core_cfg = _core_config(cfg)
    if not in_path.is_file():
        raise DataError(f"input file not found: {in_path}")
    summary = core.process_file(core_cfg, in_path, out_path, trace_path)
    doc = summary.as_dict()
    doc["engine"] = core_cfg.engine
    _emit(doc)
    return EXIT_OK


def _write_loss_log(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_db2"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(float(loss))])


def cmd_train(cfg) -> int:
    model_out = _require(cfg, "output", "model output path")
    loss_log = cfg.path("loss_log") or model_out.with_suffix(".loss.csv")
    trainer = cfg.trainer()
    rule = cfg.rule()
    start, stop, step = cfg.oracle_levels()
    dataset_path = cfg.path("input")
    if dataset_path is not None:
        if not dataset_path.is_file():
            raise DataError(f"dataset file not found: {dataset_path}")
        data = modelio.read_dataset(dataset_path, cfg.num_bands)
        if len(data) == 0:
            raise DataError(f"{dataset_path}: no training rows")
        held = None
    else:
        data = oracle_grid(rule, grid_levels(start, stop, step))
        held = oracle_grid(rule, midpoint_levels(start, stop, step))
    initial = Mlp.initialize(cfg.layer_sizes(), seed=trainer.seed, **cfg.network_kwargs())
    result = train(initial, data, trainer)
    modelio.save_model(result.model, model_out)
    _write_loss_log(result.loss_history, loss_log)
    report = {
        "model": str(model_out),
        "loss_log": str(loss_log),
        "epochs": trainer.epochs,
        "train_max_error_db": float(np.max(np.abs(forward(result.model, data.inputs) - data.targets))),
    }
    if held is not None:
        report["heldout_max_error_db"] = float(
            np.max(np.abs(forward(result.model, held.inputs) - held.targets)))
    _emit(report)
    return EXIT_OK


def cmd_personalize(cfg) -> int:
    model_in = _require(cfg, "model", "anchor model")
    prefs_path = _require(cfg, "input", "preference CSV")
    model_out = _require(cfg, "output", "model output path")
    trainer = cfg.personalize_trainer()
    if not trainer.anchor_weight > 0:
        raise ConfigError("personalize.anchor_weight must be > 0")
    if not model_in.is_file():
        raise DataError(f"model file not found: {model_in}")
    if not prefs_path.is_file():
        raise DataError(f"preference file not found: {prefs_path}")
    anchor = modelio.load_model(model_in)
    prefs = modelio.read_dataset(prefs_path, anchor.num_bands)
    if len(prefs) == 0:
        raise DataError(f"{prefs_path}: empty preference set")
    before = forward(anchor, prefs.inputs)
    result = personalize(anchor, prefs, trainer)
    after = forward(result.model, prefs.inputs)
    modelio.save_model(result.model, model_out)
    _emit({
        "model": str(model_out),
        "anchor_weight": trainer.anchor_weight,
        "max_parameter_change": float(np.max(np.abs(result.model.parameters() - anchor.parameters()))),
        "preferences": [
            {"levels_db_spl": x.tolist(), "requested_delta_db": (t - b).tolist(),
             "achieved_delta_db": (a - b).tolist()}
            for x, t, b, a in zip(prefs.inputs, prefs.targets, before, after)
        ],
    })
    return EXIT_OK


COMMANDS = {
    "design-filters": cmd_design_filters,
    "process": cmd_process,
    "train": cmd_train,
    "personalize": cmd_personalize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nnhacore", description="Neural-network hearing aid core.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, *flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        for flag in flags:
            flag(p)
        return p

    def io(p):
        p.add_argument("--input", help="input file")
        p.add_argument("--output", help="output file or directory")

    def model(p):
        p.add_argument("--model", help="prescription model file")

    def seed(p):
        p.add_argument("--seed", type=int, help="random seed")

    def trace(p):
        p.add_argument("--trace", help="gain trace CSV output")

    def engine(p):
        p.add_argument("--engine", choices=["neural", "baseline"], help="processing engine")

    def loss_log(p):
        p.add_argument("--loss-log", dest="loss_log", help="per-epoch loss CSV output")

    def anchor(p):
        p.add_argument("--anchor-weight", dest="anchor_weight", type=float,
                       help="weight of the pull toward the starting model")

    def out_only(p):
        p.add_argument("--output", help="directory for taps.csv and response.csv")

    add("design-filters", "write filter taps and magnitude responses", out_only)
    add("process", "process a mono WAV file", io, model, trace, engine)
    add("train", "train a prescription network", io, seed, loss_log)
    add("personalize", "fine-tune a model toward preference targets", io, model, seed, anchor)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SampleRateError, ModelFormatError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
