"""Command-line entry point and run configuration.

Configuration is plain text, one dotted key per line (`attack.lr = 0.01`);
CLI `--set key=value` flags override file values and `--paper-defaults`
swaps in the documented paper-scale hyperparameters. Every stage derives
its seeds from the single `seed` key through the hash chain in
ura.seeding, so one seed reproduces the entire pipeline.

Commands: synth, train-derain, train-attack, export-flow, apply, evaluate,
histogram. Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import harness, metrics, nets, trainer
from .errors import (ConfigError, DataError, FormatError, GeometryError,
                     NumericError, UraError)
from .imaging import load_image, load_paired_dataset, save_image
from .metrics import SsimParams
from .nets import DerainConfig, GeneratorConfig
from .rain_synth import MODES, SynthParams, synth_pair
from .seeding import derive_seed
from .trainer import AttackHyper, DerainHyper
from .warp import load_flow, save_flow, spatial_transform

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


@dataclasses.dataclass
class RunConfig:
    """Every tunable of the pipeline, with documented defaults."""

    seed: int = 0
    dataset_root: str = "data"
    output_dir: str = "out"
    synth_count: int = 200
    synth_mode: str = "combined"
    synth_height: int = 64
    synth_width: int = 64
    synth: SynthParams = dataclasses.field(default_factory=SynthParams)
    derain: DerainHyper = dataclasses.field(default_factory=DerainHyper)
    attack: AttackHyper = dataclasses.field(default_factory=AttackHyper)
    ssim: SsimParams = dataclasses.field(default_factory=SsimParams)
    derain_net: DerainConfig = dataclasses.field(default_factory=DerainConfig)
    generator: GeneratorConfig = dataclasses.field(
        default_factory=GeneratorConfig)
    detector_bins: int = 8
    histogram_bins: int = 32
    eval_jobs: int = 1
    dump_qualitative: bool = False
    checkpoint_every: int = 0


_SECTIONS = ("synth", "derain", "attack", "ssim", "derain_net", "generator")


# flat key registry: dotted name -> (section attr or None, field name)
def _key_map() -> dict:
    keys = {}
    for f in dataclasses.fields(RunConfig):
        if f.name in _SECTIONS:
            for inner in dataclasses.fields(f.default_factory()):
                keys[f"{f.name}.{inner.name}"] = (f.name, inner.name)
        else:
            keys[f.name] = (None, f.name)
    return keys


_KEYS = _key_map()

# Table-2-scale hyperparameters, selectable with --paper-defaults
PAPER_DEFAULTS = {
    "derain.learning_rate": 1e-3,
    "derain.min_learning_rate": 1e-5,
    "derain.epochs": 100,
    "derain.batch_size": 16,
    "attack.learning_rate": 0.01,
    "attack.batch_size": 100,
    "attack.epochs": 200,
    "attack.l2_weight": 1e-3,
    "attack.adam_beta1": 0.5,
    "attack.adam_beta2": 0.9,
    "ssim.c1": 1e-4,
    "ssim.c2": 9e-4,
    "ssim.c3": 4.5e-4,
}


def _get(cfg: RunConfig, key: str):
    section, name = _KEYS[key]
    holder = getattr(cfg, section) if section else cfg
    return getattr(holder, name)


def _set(cfg: RunConfig, key: str, value) -> RunConfig:
    if key not in _KEYS:
        raise ConfigError(f"unknown config key: {key!r}")
    section, name = _KEYS[key]
    if section is None:
        return dataclasses.replace(cfg, **{name: value})
    holder = dataclasses.replace(getattr(cfg, section), **{name: value})
    return dataclasses.replace(cfg, **{section: holder})


def _parse_value(key: str, text: str):
    current = _get(RunConfig(), key)
    text = text.strip()
    try:
        if isinstance(current, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if all(isinstance(v, int) for v in current):
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) if isinstance(v, int) else repr(float(v))
                         for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: RunConfig) -> str:
    lines = [f"{key} = {_format_value(_get(cfg, key))}"
             for key in sorted(_KEYS)]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown config key: {key!r}")
        cfg = _set(cfg, key, _parse_value(key, value))
    return cfg


def load_config(path=None, overrides=(), paper_defaults: bool = False
                ) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg = parse_config_text(Path(path).read_text(), cfg)
    if paper_defaults:
        for key, value in PAPER_DEFAULTS.items():
            cfg = _set(cfg, key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"unknown config key: {key!r}")
        cfg = _set(cfg, key, _parse_value(key, value))
    return cfg


def _echo_config(cfg: RunConfig, sections: tuple = ()):
    for key in sorted(_KEYS):
        if sections and key != "seed" and not any(
                key.startswith(s + ".") for s in sections):
            continue
        print(f"config: {key} = {_format_value(_get(cfg, key))}")


# -- commands -----------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.synth_mode not in MODES:
        raise ConfigError(f"unknown synth mode {cfg.synth_mode!r}")
    root = Path(cfg.dataset_root)
    (root / "rain").mkdir(parents=True, exist_ok=True)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    synth_seed = derive_seed(cfg.seed, "synth")
    entries = []
    for i in range(cfg.synth_count):
        sample_seed = derive_seed(synth_seed, f"sample-{i:06d}")
        params = dataclasses.replace(cfg.synth, seed=sample_seed)
        obs, bg = synth_pair(params, cfg.synth_mode, cfg.synth_height,
                             cfg.synth_width)
        name = f"{i:06d}.png"
        save_image(obs, root / "rain" / name)
        save_image(bg, root / "clean" / name)
        entries.append({"id": Path(name).stem, "seed": sample_seed})
    manifest = {
        "seed": cfg.seed,
        "synth_seed": synth_seed,
        "mode": cfg.synth_mode,
        "count": cfg.synth_count,
        "height": cfg.synth_height,
        "width": cfg.synth_width,
        "params": {f.name: getattr(cfg.synth, f.name)
                   for f in dataclasses.fields(cfg.synth)
                   if f.name != "seed"},
        "samples": entries,
    }
    (root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {cfg.synth_count} pairs to {root}")
    return EXIT_OK


def cmd_train_derain(cfg: RunConfig) -> int:
    _echo_config(cfg, ("derain", "ssim"))
    dataset = load_paired_dataset(cfg.dataset_root)
    hyper = dataclasses.replace(cfg.derain,
                                seed=derive_seed(cfg.seed, "derain-train"))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, log = trainer.train_derain(
        dataset, hyper, net_config=cfg.derain_net, ssim_params=cfg.ssim,
        checkpoint_dir=out, checkpoint_every=cfg.checkpoint_every)
    nets.save_params(params, out / "derain.urap")
    log.write_csv(out / "derain_log.csv")
    print(f"derain model -> {out / 'derain.urap'}")
    return EXIT_OK


def cmd_train_attack(cfg: RunConfig, theta_path) -> int:
    _echo_config(cfg, ("attack", "ssim"))
    dataset = load_paired_dataset(cfg.dataset_root)
    theta = nets.load_params(theta_path)
    hyper = dataclasses.replace(cfg.attack,
                                seed=derive_seed(cfg.seed, "attack-train"),
                                canonical_z_seed=derive_seed(cfg.seed,
                                                             "canonical-z"))
    h = dataset[0].observation.height
    w = dataset[0].observation.width
    gen_cfg = dataclasses.replace(cfg.generator, image_height=h,
                                  image_width=w)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen_params, log = trainer.train_attack(
        dataset, theta, hyper, gen_config=gen_cfg, ssim_params=cfg.ssim,
        checkpoint_dir=out, checkpoint_every=cfg.checkpoint_every)
    nets.save_params(gen_params, out / "generator.urap")
    log.write_csv(out / "attack_log.csv")
    flow = trainer.export_universal_flow(gen_params, hyper, h, w)
    save_flow(flow, out / "universal.uraf")
    print(f"generator -> {out / 'generator.urap'}")
    print(f"universal flow -> {out / 'universal.uraf'}")
    return EXIT_OK


def cmd_export_flow(cfg: RunConfig, gen_path, out_path) -> int:
    gen_params = nets.load_params(gen_path)
    gcfg = gen_params.build_config()
    hyper = dataclasses.replace(cfg.attack,
                                canonical_z_seed=derive_seed(cfg.seed,
                                                             "canonical-z"))
    flow = trainer.export_universal_flow(gen_params, hyper,
                                         gcfg.image_height, gcfg.image_width)
    save_flow(flow, out_path)
    print(f"universal flow -> {out_path}")
    return EXIT_OK


def cmd_apply(flow_path, image_paths, out_dir) -> int:
    flow = load_flow(flow_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in image_paths:
        img = load_image(path)
        if (img.height, img.width) != (flow.height, flow.width):
            raise GeometryError(
                f"{path}: image is {img.height}x{img.width}, flow is "
                f"{flow.height}x{flow.width}")
        warped = spatial_transform(img, flow)
        save_image(warped, out / Path(path).name)
    print(f"wrote {len(image_paths)} perturbed images to {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, theta_path, flow_path) -> int:
    testset = load_paired_dataset(cfg.dataset_root)
    theta = nets.load_params(theta_path)
    flow = load_flow(flow_path)
    random_seed = derive_seed(cfg.seed, "eval-random")
    report = harness.evaluate(theta, flow, testset, random_seed,
                              ssim_params=cfg.ssim, jobs=cfg.eval_jobs)
    detector = harness.mock_detector(cfg.detector_bins)
    perception = harness.perception_eval(detector, theta, flow, testset,
                                         random_seed)
    harness.attach_perception(report, perception)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    if cfg.dump_qualitative:
        harness.dump_qualitative(theta, flow, testset[:8],
                                 out / "qualitative",
                                 histogram_bins=cfg.histogram_bins)
    print(f"report -> {out / 'report.csv'}")
    for line in report.to_csv().strip().splitlines():
        print(line)
    return EXIT_OK


def cmd_histogram(image_path, bins, out_path) -> int:
    img = load_image(image_path)
    metrics.write_histogram_csv(img, bins, out_path)
    print(f"histogram -> {out_path}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def _add_config_args(sub):
    sub.add_argument("--config", help="config file (key = value lines)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a single config key")
    sub.add_argument("--paper-defaults", action="store_true",
                     help="use the documented paper-scale hyperparameters")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ura",
        description="universal rain-removal attack pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("synth", "train-derain"):
        p = sub.add_parser(name)
        _add_config_args(p)

    p = sub.add_parser("train-attack")
    _add_config_args(p)
    p.add_argument("--theta", required=True,
                   help="trained derain parameter file")

    p = sub.add_parser("export-flow")
    _add_config_args(p)
    p.add_argument("--generator", required=True,
                   help="trained generator parameter file")
    p.add_argument("--out", required=True, help="output flow path")

    p = sub.add_parser("apply")
    p.add_argument("--flow", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("evaluate")
    _add_config_args(p)
    p.add_argument("--theta", required=True)
    p.add_argument("--flow", required=True)

    p = sub.add_parser("histogram")
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--out", required=True)
    p.add_argument("image")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command in ("synth", "train-derain", "train-attack",
                            "export-flow", "evaluate"):
            cfg = load_config(args.config, args.set, args.paper_defaults)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train-derain":
            return cmd_train_derain(cfg)
        if args.command == "train-attack":
            return cmd_train_attack(cfg, args.theta)
        if args.command == "export-flow":
            return cmd_export_flow(cfg, args.generator, args.out)
        if args.command == "apply":
            return cmd_apply(args.flow, args.images, args.out_dir)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.theta, args.flow)
        if args.command == "histogram":
            return cmd_histogram(args.image, args.bins, args.out)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, GeometryError, UraError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
