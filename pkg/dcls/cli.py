from __future__ import annotations

import argparse
import json
import sys
from typing import Dict, List

from .config import PREDEFINED_PRESETS, field_type, override_keys, resolve_config
from .console import Color, failure, paint, setup_logging, success, supports_color
from .errors import ConfigError, DclsError, StageError
from .pipeline import COMMANDS, cmd_presets

COMMAND_HELP = {
    "synth-data": "Write the synthetic train/test corpus",
    "stats": "Dataset statistics (size, labels, avg. length, label S/D)",
    "train-proxy": "Fine-tune the proxy classifier that supplies token weights",
    "train-generator": "Train the diffusion sample generator",
    "augment": "Generate pseudo samples with the B/D or G/E policy",
    "train-classifier": "Noise-resistant classifier training with reflective augmentation",
    "evaluate": "Evaluate the classifier checkpoint on the test split",
    "sweep-groups": "Classifier quality per step group (plot-ready CSV)",
    "ablation": "Full method vs. w/o D.A., w/o L.A.P., w/o N.R.T. and raw baseline",
    "sweep-fractions": "Full method vs. raw baseline on partial training data",
    "few-shot": "Full method vs. raw baseline in k-shot settings",
    "project": "2D projection of originals and pseudo samples",
}
SKIP_FLAGS = {"preset", "output_dir"}
USAGE_EXIT = 1


class DclsArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the config-error code."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, metavar="PATH", help="Config file: YAML (flat dotted or nested keys) or key=value lines")
    common.add_argument("-p", "--preset", type=str, metavar="NAME",
                        help=f"Preset ({', '.join(PREDEFINED_PRESETS)}, or custom)")
    common.add_argument("-o", "--output-dir", type=str, metavar="DIR", help="Run directory (default: runs/dcls)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any config key, e.g. --set schedule.T=16 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    common.add_argument("--progress", action="store_true", help="Show progress bars")
    common.add_argument("--json", action="store_true", help="Print the run report as JSON")
    common.add_argument("--no-color", action="store_true", help="Disable colored output")
    for key in override_keys():
        if key in SKIP_FLAGS:
            continue
        common.add_argument(f"--{key}", dest=f"override:{key}", default=None, metavar="VALUE",
                            help=argparse.SUPPRESS)
    return common


def parse_args(argv: List[str]) -> argparse.Namespace:
    common = _common_parser()
    parser = DclsArgumentParser(
        prog="dcls",
        description="Diffusion-based data augmentation for low-resource text classification.",
        epilog="Every config key is also a flag: --schedule.T 16, --training.use_nrt false, --seeds 0,1,2.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, text in COMMAND_HELP.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    presets = sub.add_parser("presets", parents=[common], help="List, save or delete presets")
    presets.add_argument("action", nargs="?", default="list", choices=["list", "save", "delete"])
    presets.add_argument("name", nargs="?", help="Preset name for save/delete")
    presets.add_argument("--description", default="", help="Description for a saved preset")
    return parser.parse_args(argv)


def collect_overrides(ns: argparse.Namespace) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    for key, value in vars(ns).items():
        if key.startswith("override:") and value is not None:
            overrides[key.split(":", 1)[1]] = value
    if getattr(ns, "output_dir", None):
        overrides["output_dir"] = ns.output_dir
    for item in ns.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        field_type(key.strip())
        overrides[key.strip()] = value
    return overrides


def _print_presets(presets, color_on: bool) -> None:
    print(paint("Available Presets:", Color.BOLD, enable=color_on))
    print()
    for name, preset in presets.items():
        style = Color.GREEN if name in PREDEFINED_PRESETS else Color.YELLOW
        print(f"  {paint(name, style, Color.BOLD, enable=color_on):<24} - {preset.description}")
        for key, value in sorted(preset.overrides.items()):
            print(paint(f"    {key} = {value}", Color.DIM, enable=color_on))
    print()


def _print_summary(command: str, report: dict, color_on: bool) -> None:
    summary = report.get("summary", {})
    if "macro_f1" in summary:
        print(f"  macro-F1 {summary['macro_f1']:.4f}   accuracy {summary['accuracy']:.4f}")
    if command == "sweep-groups":
        for row in summary["rows"]:
            print(f"  group {row['group']}  steps {row['first_step']:>2}-{row['last_step']:<2}  "
                  f"macro-F1 {row['macro_f1_mean']:.4f} ± {row['macro_f1_std']:.4f}")
        print(f"  peak group: {summary['peak_group']}")
    elif command == "ablation":
        for row in summary["rows"]:
            flag = "" if row["full_dominates"] else paint("  (full method below this row)", Color.YELLOW, enable=color_on)
            print(f"  {row['variant']:<12} macro-F1 {row['macro_f1_mean']:.4f} ± {row['macro_f1_std']:.4f}{flag}")
    elif command in ("sweep-fractions", "few-shot"):
        key = "fraction" if command == "sweep-fractions" else "shots"
        for row in summary["rows"]:
            print(f"  {key} {row[key]!s:<6} full {row['full_macro_f1']:.4f}  raw {row['raw_macro_f1']:.4f}  "
                  f"dF {row['delta_f1']:+.4f}  dAcc {row['delta_acc']:+.4f}")
    elif command == "stats":
        for split, stats in summary.items():
            print(f"  {split:<5} size {stats['size']:>5}  labels {stats['num_labels']}  "
                  f"avg. length {stats['avg_length']:.2f}  S/D {stats['label_sd']:.4f}")
    elif command == "augment":
        print(f"  {summary['policy']}: {summary['pseudo']} pseudo samples for {summary['originals']} originals")
        print(f"  class counts: {summary['class_counts']}")
    elif command == "project":
        for row in summary["group_distances"]:
            print(f"  group {row['group']}  mean distance {row['mean_distance']:.4f}  ({row['pairs']} pairs)")


def main(argv: List[str] | None = None) -> int:
    try:
        ns = parse_args(argv if argv is not None else sys.argv[1:])
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 0 if e.code is None else USAGE_EXIT
    color_on = supports_color() and not ns.no_color
    setup_logging(-1 if ns.quiet else 1 if ns.verbose else 0, color=supports_color(sys.stderr) and not ns.no_color)

    try:
        overrides = collect_overrides(ns)
        if ns.command == "presets":
            config = resolve_config(None, ns.config, {})
            overrides.pop("output_dir", None)
            presets = cmd_presets(config, ns.action, ns.name, ns.description, overrides)
            if ns.action == "list":
                _print_presets(presets, color_on)
            else:
                success(f"Preset '{ns.name}' {'saved' if ns.action == 'save' else 'deleted'}", enable=color_on)
            return 0

        config = resolve_config(ns.preset, ns.config, overrides)
        report = COMMANDS[ns.command](config, progress=ns.progress)
    except (ConfigError, StageError) as e:
        failure(str(e), enable=color_on)
        return 1
    except DclsError as e:
        failure(str(e), enable=color_on)
        return 2

    if ns.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        _print_summary(ns.command, report, color_on)
        success(f"{ns.command} finished, outputs in {config.output_dir}", enable=color_on)
    return 0
