"""advtransfer command line: every harness workflow behind one config file plus key=value overrides."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .harness import config as cfgmod
from .harness import pool as pools
from .harness.config import ConfigError, ExperimentConfig
from .harness.dataset import export_dataset, import_dataset
from .harness.experiments import (
    PrecisionCurve,
    TransferMatrix,
    evaluate_transfer,
    precision_sweep_config,
    prefix_attack_config,
    run_attack_batch,
    run_precision_sweep,
    run_prefix_experiment,
)
from .harness.report import UnknownFormatError, render_report
from .models.registry import UnknownModelError
from .models.synthetic import make_speech_dataset
from .models.training import classifier_accuracy, ctc_error_rate
from .targets import TargetCorpus

log = logging.getLogger("advtransfer")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

NOTES = {
    "attack.linf_radius": "L-inf bound on the waveform perturbation",
    "attack.learning_rate": "plain SGD step; the reference settings print '0005', read as 5e-4",
    "attack.iterations": "attack steps per utterance",
    "attack.reg_const": "weight c of the squared-L2 penalty",
    "attack.checkpoint_every": "validation-proxy checkpoint cadence",
    "model_cache": f"directory for trained toy checkpoints (env {cfgmod.CACHE_ENV})",
}


def _keys_epilog() -> str:
    lines = ["configuration keys (set in --config YAML or as KEY=VALUE overrides):"]
    for key, default in cfgmod.describe_keys():
        note = NOTES.get(key)
        lines.append(f"  {key} = {default!r}" + (f"    # {note}" if note else ""))
    return "\n".join(lines)


def parse_ks(text: str) -> list[int]:
    """``1..10`` or ``1,3,5``."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}; use 1..10 or 1,2,3") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: configuration error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advtransfer", description="Transferable audio adversarial example experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=_keys_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("overrides", nargs="*", metavar="KEY=VALUE", help="config overrides, e.g. attack.iterations=1000")
        p.add_argument("--config", type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--out", type=Path, help=f"output directory (default runs/{name})")
        p.add_argument("--workers", type=int, default=1, help="parallel workers, each with its own model copies")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("train-toys", "train (or load from cache) the toy recognizer pool and classifier pair")
    p.add_argument("--kind", choices=("ctc", "classifier", "all"), default="all")
    add("attack", "targeted attack on synthetic utterances; writes a dataset directory")
    p = add("evaluate", "transcribe an exported dataset with every model and tabulate transfer")
    p.add_argument("--dataset", type=Path, required=True)
    add("matrix", "each pool model attacks as proxy, every model is evaluated")
    p = add("precision-sweep", "top-k targeted attacks on the toy classifier pair as k varies")
    p.add_argument("--ks", type=parse_ks, help="k values, e.g. 1..10")
    p.add_argument("--repeats", type=int)
    p.add_argument("--n-inputs", type=int)
    p = add("prefix-attack", "prepend a word to transcripts; pool x pool transfer matrix")
    p.add_argument("--word")
    p = add("export", "re-export a dataset directory (e.g. after import or filtering)")
    p.add_argument("--dataset", type=Path, required=True)
    p = add("import", "validate a dataset directory and summarise it")
    p.add_argument("--dataset", type=Path, required=True)
    p = add("report", "render a saved matrix/curve/trace JSON as csv, md or png")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--format", dest="fmt", default="csv")
    return parser


def _resolve(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "ks", None):
        overrides.append(f"precision.ks={json.dumps(args.ks)}")
    if getattr(args, "repeats", None) is not None:
        overrides.append(f"precision.repeats={args.repeats}")
    if getattr(args, "n_inputs", None) is not None:
        overrides.append(f"precision.n_inputs={args.n_inputs}")
    if getattr(args, "word", None):
        overrides.append(f"prefix.word={json.dumps(args.word)}")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfgmod.load_config(args.config, overrides)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _emit(out: Path, stem: str, obj, formats=("csv", "md", "png")) -> None:
    for fmt in formats:
        render_report(obj, out / f"{stem}.{fmt}")


def _corpus(cfg: ExperimentConfig) -> TargetCorpus:
    return TargetCorpus.from_file(cfg.run.corpus) if cfg.run.corpus else TargetCorpus.default()


def cmd_train_toys(cfg, args, out) -> int:
    summary = {}
    if args.kind in ("ctc", "all"):
        held_out = make_speech_dataset(50, seed=cfg.data.train_seed + 1000, prefix="heldout")
        for m in pools.ctc_pool(cfg):
            summary[m.name] = {"heldout_cer": ctc_error_rate(m, held_out)}
    if args.kind in ("classifier", "all"):
        _, (xt, yt) = pools.image_sets(cfg)
        for m in pools.classifier_pair(cfg):
            summary[m.name] = {"test_accuracy": classifier_accuracy(m, xt, yt)}
    _write_json(out / "models.json", {"cache": str(cfg.cache_dir()), "models": summary})
    for name, stats in summary.items():
        print(name, " ".join(f"{k}={v:.4f}" for k, v in stats.items()))
    return EXIT_OK


def _attack(cfg, args):
    pool = pools.ctc_pool(cfg)
    proxies = pools.select(pool, cfg.run.proxies)
    validation = pools.select(pool, [cfg.run.validation])[0] if cfg.run.validation else None
    samples = pools.attack_samples(cfg)
    return pool, run_attack_batch(samples, proxies, validation, _corpus(cfg), cfg.resolved_attack(),
                                  workers=args.workers)


def _warn_failures(examples) -> None:
    for e in examples:
        if not e.ok:
            print(f"warning: {e.id}: attack failed: {e.error}", file=sys.stderr)


def cmd_attack(cfg, args, out) -> int:
    _, examples = _attack(cfg, args)
    _warn_failures(examples)
    export_dataset(examples, out / "dataset")
    traces = {e.id: {"proxy": e.proxy_loss_trace, "validation": e.validation_loss_trace,
                     "best_iteration": e.best_iteration} for e in examples if e.ok}
    _write_json(out / "traces.json", traces)
    snrs = [e.achieved_snr for e in examples if e.ok and math.isfinite(e.achieved_snr)]
    summary = {"examples": len(examples), "failed": sum(not e.ok for e in examples),
               "mean_snr_db": float(np.mean(snrs)) if snrs else None}
    _write_json(out / "summary.json", summary)
    print(f"{summary['examples'] - summary['failed']}/{summary['examples']} examples, "
          f"mean SNR {summary['mean_snr_db']} dB -> {out / 'dataset'}")
    return EXIT_OK


def _eval_models(cfg, pool):
    return pools.select(pool, cfg.run.evaluate) if cfg.run.evaluate else pool


def _report_matrix(matrix: TransferMatrix, out: Path, stem: str) -> None:
    _write_json(out / f"{stem}.json", matrix.to_dict())
    _emit(out, stem, matrix)
    bad = [(p, m) for (p, m), c in matrix.cells.items() if not c.valid]
    for p, m in bad:
        print(f"warning: cell ({p}, {m}) invalid: {matrix.cell(p, m).error}", file=sys.stderr)
    print((out / f"{stem}.md").read_text(encoding="utf-8"))


def cmd_evaluate(cfg, args, out) -> int:
    examples = import_dataset(args.dataset)
    models = _eval_models(cfg, pools.ctc_pool(cfg))
    _report_matrix(evaluate_transfer(models, examples, workers=args.workers), out, "matrix")
    return EXIT_OK


def cmd_matrix(cfg, args, out) -> int:
    pool = pools.ctc_pool(cfg)
    models = _eval_models(cfg, pool)
    samples = pools.attack_samples(cfg)
    examples = []
    for proxy in models:
        batch = run_attack_batch(samples, [proxy], None, _corpus(cfg), cfg.resolved_attack(), workers=args.workers)
        _warn_failures(batch)
        examples.extend(batch)
    _report_matrix(evaluate_transfer(models, examples, workers=args.workers), out, "matrix")
    return EXIT_OK


def cmd_precision_sweep(cfg, args, out) -> int:
    proxy, private = pools.classifier_pair(cfg)
    _, (images, _) = pools.image_sets(cfg)
    p = cfg.precision
    attack = precision_sweep_config(learning_rate=p.learning_rate, l2_radius=p.l2_radius,
                                    lr_schedule=p.lr_schedule, seed=cfg.seed)

    def progress(k, r, wb, tr):
        log.info("k=%d repeat %d: white-box %.3f transfer %.3f", k, r, wb, tr)

    curve = run_precision_sweep(proxy, private, p.ks, p.n_inputs, p.repeats, attack, images,
                                steps_per_k=p.steps_per_k, on_progress=progress)
    _write_json(out / "curve.json", curve.to_dict())
    _emit(out, "curve", curve)
    print((out / "curve.md").read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_prefix_attack(cfg, args, out) -> int:
    pool = _eval_models(cfg, pools.ctc_pool(cfg))
    p = cfg.prefix
    samples = make_speech_dataset(p.n_samples, seed=p.data_seed)
    attack = prefix_attack_config(snr_bound=p.snr_bound, iterations=p.iterations,
                                  learning_rate=p.learning_rate, seed=cfg.seed)
    matrix = run_prefix_experiment(pool, samples, p.word, attack, workers=args.workers)
    _report_matrix(matrix, out, "prefix_matrix")
    return EXIT_OK


def cmd_export(cfg, args, out) -> int:
    examples = import_dataset(args.dataset)
    path = export_dataset(examples, out / "dataset")
    print(f"{len(examples)} examples -> {path}")
    return EXIT_OK


def cmd_import(cfg, args, out) -> int:
    examples = import_dataset(args.dataset)
    snrs = [e.achieved_snr for e in examples if math.isfinite(e.achieved_snr)]
    summary = {"dataset": str(args.dataset), "examples": len(examples),
               "proxies": sorted({e.proxy_key for e in examples}),
               "mean_snr_db": float(np.mean(snrs)) if snrs else None,
               "max_abs_delta": float(max((np.abs(e.delta).max() for e in examples), default=0.0))}
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def load_result(path: Path):
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict) and "cells" in data:
        return TransferMatrix.from_dict(data)
    if isinstance(data, dict) and "ks" in data:
        return PrecisionCurve.from_dict(data)
    if isinstance(data, dict) and all(isinstance(v, list) for v in data.values()):
        return {k: [tuple(p) for p in v] for k, v in data.items()}
    raise ConfigError(f"{path}: not a matrix, curve or trace file")


def cmd_report(cfg, args, out) -> int:
    try:
        obj = load_result(args.input)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from exc
    try:
        path = render_report(obj, out / args.input.with_suffix("").name, args.fmt)
    except UnknownFormatError as exc:
        raise ConfigError(str(exc)) from exc
    print(path)
    return EXIT_OK


COMMANDS = {
    "train-toys": cmd_train_toys,
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "matrix": cmd_matrix,
    "precision-sweep": cmd_precision_sweep,
    "prefix-attack": cmd_prefix_attack,
    "export": cmd_export,
    "import": cmd_import,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        out = args.out or Path("runs") / args.command
        out.mkdir(parents=True, exist_ok=True)
        cfg.dump(out / "config.yaml")
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, UnknownModelError, FileNotFoundError) as exc:
        print(f"advtransfer: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"advtransfer: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
