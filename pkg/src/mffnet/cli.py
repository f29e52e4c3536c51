"""Command-line entry point: ``mffnet {synth,train,eval,gradcheck,inspect,ablate}``.

Every command resolves its configuration from defaults, then an optional JSON
file of flat dotted keys (``--config``), then ``--section.key value`` flags.
Machine-readable results go to stdout as JSON; human tables to stdout as text.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import mfft
from .config import HELP, ConfigError, RunConfig, build_config, field_type, load_config_file
from .data import DatasetError, FeatureSet, generate_synth, read_manifest, read_sidecar
from .gradcheck import run_gradcheck
from .metrics import evaluate, render_report, reports_to_json
from .model import ABLATION_LABELS, ABLATIONS, Ablation, ablation_parameter_groups
from .plotting import plot_inconsistency, plot_reports, plot_training_log
from .tensor import Tensor, no_grad
from .training import (CheckpointMismatchError, NonFiniteLossError, TrainingError, build_model,
                       checkpoint_load, checkpoint_save, train)

logger = logging.getLogger("mffnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# config sections each subcommand accepts as flags
SECTIONS = {
    "synth": ("synth", "paths"),
    "train": ("model", "ablation", "train", "paths"),
    "eval": ("model", "ablation", "eval", "paths"),
    "gradcheck": ("gradcheck", "train"),
    "inspect": ("model", "ablation", "paths"),
    "ablate": ("model", "train", "eval", "paths"),
}

DESCRIPTIONS = {
    "synth": "generate the synthetic corpus (train/test manifests, MFFT features, sidecar)",
    "train": "train a model and write checkpoint, epoch log and loss-curve figure",
    "eval": "evaluate one or more checkpoints; prints the metrics table and writes JSON + figure",
    "gradcheck": "compare backprop gradients with central differences, per module and end to end",
    "inspect": "emit per-sample diagnostics (prediction, similarity, consistency scores) as JSON",
    "ablate": "train the full model and every ablation variant, then tabulate them",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mffnet", description=__doc__.split("\n\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, sections in SECTIONS.items():
        p = sub.add_parser(name, help=DESCRIPTIONS[name], description=DESCRIPTIONS[name])
        p.add_argument("--config", metavar="PATH",
                       help="JSON file of flat dotted keys, e.g. {\"train.epochs\": 5}")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "eval":
            p.add_argument("--checkpoints", nargs="+", metavar="PATH",
                           help="checkpoints to evaluate, one table row each "
                                "(default: paths.checkpoint)")
        if name == "inspect":
            p.add_argument("--id", required=True, dest="sample_id", help="sample id to inspect")
            p.add_argument("--no-figure", action="store_true",
                           help="skip writing the inconsistency-score figure")
        if name == "ablate":
            p.add_argument("--seeds", type=int, default=1,
                           help="training seeds per variant; accuracies are averaged")
        for key, text in HELP.items():
            section = key.split(".")[0]
            if section not in sections:
                continue
            kind = field_type(key)
            meta = "BOOL" if kind.startswith("bool") else kind.split()[0].upper()
            p.add_argument(f"--{key}", dest=key, metavar=meta, default=argparse.SUPPRESS,
                           nargs="?" if kind.startswith("bool") else None,
                           const="true" if kind.startswith("bool") else None,
                           help=f"{text} [{kind}]")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = load_config_file(args.config) if args.config else {}
    overrides.update({k: v for k, v in vars(args).items() if k in HELP})
    cfg = build_config(overrides)
    logger.info("resolved config: %s", json.dumps(cfg.flat(), sort_keys=True))
    return cfg


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _with_data_dims(cfg: RunConfig, manifest: Path, args: argparse.Namespace) -> RunConfig:
    """Model sequence/feature dims follow the dataset unless set explicitly."""
    header, _ = read_manifest(manifest)
    dims = header["dims"]
    model = dict(cfg.model)
    for key, value in dims.items():
        explicit = f"model.{key}" in vars(args) or key in model
        if explicit and model.get(key, value) != value:
            raise DatasetError(f"model.{key}={model[key]} but {manifest} has {key}={value}")
        model[key] = value
    return replace(cfg, model=model)


# -- commands --------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    paths = generate_synth(cfg.synth, cfg.paths.data_dir)
    _emit({"train": cfg.synth.train_real + cfg.synth.train_fake,
           "test": cfg.synth.test_real + cfg.synth.test_fake,
           "paths": {k: str(v) for k, v in paths.items()}})
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    cfg = _with_data_dims(cfg, cfg.paths.train_path(), args)
    data = FeatureSet.load(cfg.paths.train_path())
    run_dir = Path(cfg.paths.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "resolved_config.json", cfg.flat())
    log_path = run_dir / "train_log.jsonl"
    log_path.write_text("", encoding="utf-8")
    model_cfg = cfg.model_config()
    full = build_model(replace(model_cfg, ablation=Ablation()), cfg.train)
    groups = ablation_parameter_groups(full)
    result = train(data, model_cfg, cfg.train, log_path=log_path)
    checkpoint_save(cfg.paths.checkpoint_path(), result, model_cfg, cfg.train)
    plot_training_log(result.log, run_dir / "loss_curve.png")
    summary = {
        "checkpoint": str(cfg.paths.checkpoint_path()),
        "log": str(log_path),
        "figure": str(run_dir / "loss_curve.png"),
        "num_parameters": result.model.num_parameters(),
        "full_num_parameters": full.num_parameters(),
        "ablation": model_cfg.ablation.active(),
        "removed_parameters": {a: groups[a] for a in model_cfg.ablation.active()},
        "final": result.log[-1] if result.log else None,
    }
    _write_json(run_dir / "run.json", summary)
    _emit(summary)
    return EXIT_OK


def _load_checkpoint(path: Path, cfg: RunConfig, args):
    if not path.is_file():
        raise DatasetError(f"checkpoint not found: {path}")
    explicit = any(k.startswith(("model.", "ablation.")) for k in vars(args)) or args.config
    if explicit:
        # compare against the requested architecture, with dims taken from the checkpoint
        header, _ = mfft.decode_container(path.read_bytes())
        stored = header["model_config"]
        model = {k: stored[k] for k in ("n", "p", "d_t", "d_i", "d_g")}
        model.update(cfg.model)
        return checkpoint_load(path, replace(cfg, model=model).model_config())
    return checkpoint_load(path)


def cmd_eval(cfg: RunConfig, args) -> int:
    data = FeatureSet.load(cfg.paths.eval_path())
    paths = [Path(p) for p in args.checkpoints] if args.checkpoints else [cfg.paths.checkpoint_path()]
    reports = []
    for path in paths:
        result, model_cfg, _ = _load_checkpoint(path, cfg, args)
        name = model_cfg.ablation.label() if len(paths) > 1 else "MFF-Net"
        reports.append(evaluate(result.model, data.astype(result.model.parameters()[0].dtype),
                                cfg.eval.threshold, name=name))
    run_dir = Path(cfg.paths.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "metrics.json").write_text(reports_to_json(reports) + "\n", encoding="utf-8")
    plot_reports(reports, run_dir / "metrics.png")
    print(render_report(reports))
    _emit({"reports": [r.to_dict() for r in reports], "json": str(run_dir / "metrics.json"),
           "figure": str(run_dir / "metrics.png")})
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    report = run_gradcheck(cfg.gradcheck, cfg.train.precision)
    for row in report["checks"]:
        status = "PASS" if row["passed"] else "FAIL"
        print(f"{status}  {row['name']:<24} max rel. error {row['max_rel_error']:.3e}"
              f"  (tol {report['tolerance']:.0e})")
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def cmd_inspect(cfg: RunConfig, args) -> int:
    result, model_cfg, train_cfg = _load_checkpoint(cfg.paths.checkpoint_path(), cfg, args)
    sample = None
    for manifest in (cfg.paths.eval_path(), cfg.paths.train_path()):
        if not manifest.is_file():
            continue
        data = FeatureSet.load(manifest, dtype=train_cfg.dtype)
        if args.sample_id in data.ids:
            sample = data.subset([data.index_of(args.sample_id)])
            break
    if sample is None:
        raise KeyError(f"unknown sample id {args.sample_id!r}")
    with no_grad():
        y, diag = result.model(Tensor(sample.R_T), Tensor(sample.R_I), Tensor(sample.C_T),
                               Tensor(sample.C_I), strict=False)
    first = lambda a: None if a is None else a[0].tolist()  # noqa: E731
    out = {"id": args.sample_id, "y_pred": float(y.data[0]), "sim": float(diag.sim[0]),
           "label": int(sample.labels[0]), "r_is_text": first(diag.r_is_text),
           "r_is_image": first(diag.r_is_image)}
    sidecar = cfg.paths.sidecar_path()
    if sidecar.is_file():
        truth = read_sidecar(sidecar).get(args.sample_id)
        if truth is not None:
            out["perturbed_patches"] = truth.get("perturbed_patches", [])
            out["perturbed_tokens"] = truth.get("perturbed_tokens", [])
    if not args.no_figure:
        run_dir = Path(cfg.paths.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        out["figure"] = str(plot_inconsistency(out, run_dir / f"inspect_{args.sample_id}.png"))
    _emit(out)
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    cfg = _with_data_dims(cfg, cfg.paths.train_path(), args)
    train_data = FeatureSet.load(cfg.paths.train_path())
    test_data = FeatureSet.load(cfg.paths.eval_path())
    run_dir = Path(cfg.paths.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for variant in (None,) + ABLATIONS:
        model_cfg = replace(cfg.model_config(), ablation=Ablation.only(variant))
        runs = []
        for seed in range(args.seeds):
            tc = replace(cfg.train, seed=cfg.train.seed + seed)
            result = train(train_data, model_cfg, tc)
            runs.append(evaluate(result.model, test_data, cfg.eval.threshold,
                                 name=ABLATION_LABELS[variant]))
            if seed == 0:
                checkpoint_save(run_dir / f"{variant or 'full'}.mfft", result, model_cfg, tc)
        reports.append(_average(runs) if len(runs) > 1 else runs[0])
        logger.info("%s: accuracy %.3f", reports[-1].name, reports[-1].accuracy)
    (run_dir / "ablation.json").write_text(reports_to_json(reports) + "\n", encoding="utf-8")
    plot_reports(reports, run_dir / "ablation.png")
    print(render_report(reports))
    _emit({"json": str(run_dir / "ablation.json"), "figure": str(run_dir / "ablation.png"),
           "accuracy": {r.name: r.accuracy for r in reports}})
    return EXIT_OK


def _average(reports):
    from .metrics import ClassMetrics, MetricsReport
    mean = lambda xs: float(np.mean(xs))  # noqa: E731
    cls = lambda attr: ClassMetrics(*(mean([getattr(getattr(r, attr), f) for r in reports])  # noqa: E731
                                      for f in ("precision", "recall", "f1")))
    return MetricsReport(reports[0].name, mean([r.accuracy for r in reports]), cls("fake"),
                         cls("real"), *(sum(getattr(r, k) for r in reports) for k in ("tp", "fp", "tn", "fn")),
                         reports[0].threshold)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "inspect": cmd_inspect, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already printed
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"mffnet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, mfft.FormatError, CheckpointMismatchError, KeyError,
            FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"mffnet: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"mffnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TrainingError as exc:
        print(f"mffnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
