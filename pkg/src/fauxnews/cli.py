"""Command-line entry point.

Subcommands: forge, train, eval, reason, report. Options come from an optional
flat key=value config file, overridden by repeatable --set k=v pairs, in turn
overridden by dedicated flags. Every run writes a manifest so identical
configs replay to byte-identical outputs.

Exit codes: 0 success, 1 usage/config error, 2 data or schema error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

import torch

from . import evalkit, report
from .data_model import Dataset, SchemaError, load_dataset, save_dataset
from .forge import ForgeConfig, ForgeError, compute_forge_stats, default_lexicon, forge_dataset, load_lexicon
from .model import ModelConfig, NewsModel
from .training import (
    LossWeights,
    NumericalAbort,
    StagePlan,
    ablate,
    reasoning_overfit,
    train_stage,
    write_loss_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse failures onto exit code 1
        raise UsageError(message)


def _parse_config_file(path: Path) -> Dict[str, str]:
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    options: Dict[str, str] = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"bad config line (expected key=value): {line!r}")
        key, value = line.split("=", 1)
        options[key.strip()] = value.strip()
    return options


def _gather_options(args) -> Dict[str, str]:
    options: Dict[str, str] = {}
    if getattr(args, "config", None):
        options.update(_parse_config_file(Path(args.config)))
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        options[key.strip()] = value.strip()
    return options


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(path: Path, entries: List[tuple]) -> None:
    lines = [f"{k}={v}" for k, v in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_from_options(options: Dict[str, str], seed: int) -> NewsModel:
    preset = options.get("model", "default")
    try:
        config = ModelConfig.preset(preset)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return NewsModel(config, seed=seed)


def _weights_from_options(options: Dict[str, str]) -> LossWeights:
    kwargs = {}
    for name in ("alpha", "beta", "gamma", "delta"):
        if name in options:
            kwargs[name] = float(options[name])
    return LossWeights(**kwargs)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_forge(args) -> int:
    options = _gather_options(args)
    if args.n is not None:
        options["n_samples"] = str(args.n)
    if args.seed is not None:
        options["seed"] = str(args.seed)
    cfg = ForgeConfig.from_mapping(options)
    lex = load_lexicon(options["lexicon"]) if "lexicon" in options else default_lexicon()
    split = options.get("split", args.split)
    out = _out_dir(args)
    ds = forge_dataset(cfg, lex, split=split)
    dataset_path = out / f"{split}.jsonl"
    save_dataset(ds, dataset_path)
    stats = compute_forge_stats(ds)
    (out / "forge_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(
        out / "forge_manifest.txt",
        [
            ("seed", cfg.seed),
            ("n_samples", cfg.n_samples),
            ("manip_rate", cfg.manip_rate),
            ("multimodal_rate", cfg.multimodal_rate),
            ("domain_mix", ",".join(f"{w:.6f}" for w in cfg.domain_mix)),
            ("consistency_threshold", cfg.consistency_threshold),
            ("split", split),
            ("dataset", dataset_path.name),
            ("dataset_sha256", _sha256(dataset_path)),
        ],
    )
    print(f"forged {len(ds)} samples -> {dataset_path} (manipulation rate {stats['manip_rate']:.3f})")
    return EXIT_OK


_STAGE_CHOICES = ("all", "detection", "reasoning", "pretrain")


def cmd_train(args) -> int:
    options = _gather_options(args)
    seed = args.seed if args.seed is not None else int(options.get("seed", 0))
    dataset_path = Path(args.dataset or options.get("dataset", ""))
    if not str(dataset_path):
        raise UsageError("train requires --dataset (or dataset= in config)")
    ds = load_dataset(dataset_path)
    out = _out_dir(args)
    model = _model_from_options(options, seed)
    drop = frozenset(x for x in options.get("ablate", "").split(",") if x)
    if drop:
        model = ablate(model, drop)
    if args.checkpoint_in:
        model.load_checkpoints(args.checkpoint_in)
    weights = _weights_from_options(options)
    lr = float(options.get("lr", 1e-3))
    batch_size = int(options.get("batch_size", 16))
    stages = ("detection", "reasoning") if args.stage == "all" else (args.stage,)

    ckpt_dir = out / "checkpoints"
    for stage in stages:
        if stage == "pretrain":
            steps = int(options.get("pretrain_steps", 2000))
            pre_lr = float(options.get("pretrain_lr", 1.0))
            curve = reasoning_overfit(model, ds.samples[0], steps=steps, lr=pre_lr)
            (out / "loss_pretrain.csv").write_text(
                "step,L_LLM\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(curve)), encoding="utf-8"
            )
            continue
        epochs = int(options.get(f"{stage}_epochs", options.get("epochs", 1)))
        plan = StagePlan(stage=stage, dataset=ds, epochs=epochs, lr=lr, batch_size=batch_size, weights=weights)
        reports = train_stage(model, plan, seed)
        write_loss_csv(out / f"loss_{stage}.csv", reports)
    model.save_checkpoints(ckpt_dir)
    _write_manifest(
        out / "run_manifest.txt",
        [
            ("seed", seed),
            ("stage", args.stage),
            ("lr", lr),
            ("batch_size", batch_size),
            ("alpha", weights.alpha),
            ("beta", weights.beta),
            ("gamma", weights.gamma),
            ("delta", weights.delta),
            ("model", options.get("model", "default")),
            ("ablate", ",".join(sorted(drop))),
            ("dataset", str(dataset_path)),
            ("dataset_sha256", _sha256(dataset_path)),
            ("checkpoints", str(ckpt_dir)),
        ],
    )
    print(f"trained stages {stages} -> {ckpt_dir}")
    return EXIT_OK


_ABLATION_LABELS = {"image": "w.o I", "text": "w.o T", "face": "w.o F"}


def cmd_eval(args) -> int:
    options = _gather_options(args)
    seed = args.seed if args.seed is not None else int(options.get("seed", 0))
    model = _model_from_options(options, seed)
    if not args.checkpoint:
        raise UsageError("eval requires --checkpoint")
    model.load_checkpoints(args.checkpoint)
    test_set = load_dataset(args.dataset)
    out = _out_dir(args)
    method = options.get("method_name", "model")

    preds, labels, domains, _ = evalkit.predict_dataset(model, test_set)
    base_report = evalkit.compute_metrics(preds, labels, domains)
    evalkit.write_metrics_csv(out / "metrics.csv", {method: base_report})
    written = ["metrics.csv"]

    if args.fewshot:
        if not args.train_dataset:
            raise UsageError("--fewshot requires --train-dataset for exemplar sampling")
        train_set = load_dataset(args.train_dataset)
        try:
            ks = [int(k) for k in args.fewshot.split(",") if k.strip() != ""]
        except ValueError:
            raise UsageError(f"bad --fewshot list: {args.fewshot!r}") from None
        rows = evalkit.run_fewshot_sweep(model, ks, train_set, test_set, seed=seed, cot=args.cot)
        evalkit.write_fewshot_csv(out / "fewshot.csv", rows)
        written.append("fewshot.csv")

    if args.ablate:
        drops = [d.strip() for d in args.ablate.split(",") if d.strip()]
        unknown = [d for d in drops if d not in _ABLATION_LABELS]
        if unknown:
            raise UsageError(f"unknown ablation modalities: {unknown}")
        reports = {method: base_report}
        for dropped in drops:
            variant = ablate(model, {dropped})
            p, y, d, _ = evalkit.predict_dataset(variant, test_set)
            reports[f"{method} {_ABLATION_LABELS[dropped]}"] = evalkit.compute_metrics(p, y, d)
        evalkit.write_ablation_csv(out / "ablation.csv", reports)
        written.append("ablation.csv")

    _write_manifest(
        out / "eval_manifest.txt",
        [
            ("seed", seed),
            ("model", options.get("model", "default")),
            ("method", method),
            ("checkpoint", str(args.checkpoint)),
            ("dataset", str(args.dataset)),
            ("dataset_sha256", _sha256(Path(args.dataset))),
            ("fewshot", args.fewshot or ""),
            ("cot", int(args.cot)),
            ("ablate", args.ablate or ""),
        ],
    )
    print(f"wrote {', '.join(written)} (accuracy {base_report.accuracy:.3f})")
    return EXIT_OK


def cmd_reason(args) -> int:
    options = _gather_options(args)
    seed = args.seed if args.seed is not None else int(options.get("seed", 0))
    model = _model_from_options(options, seed)
    if not args.checkpoint:
        raise UsageError("reason requires --checkpoint")
    model.load_checkpoints(args.checkpoint)
    ds = load_dataset(args.dataset)
    try:
        sample = ds.by_id(args.id)
    except KeyError:
        raise SchemaError(f"unknown sample id {args.id!r}") from None
    result = model.analyze_sample(sample, use_gt_bbox=False)
    reasoning = model.generate(sample.image, sample.text, max_len=args.max_len)
    payload = {
        "p": float(result.head.p),
        "bbox": [float(v) for v in result.head.bbox],
        "reasoning": reasoning.text,
    }
    if args.json:
        print(json.dumps(payload))
    else:
        print(f"sample {sample.id}: p(fake)={payload['p']:.4f}")
        print(f"predicted box: {['%.3f' % v for v in payload['bbox']]}")
        print(f"reasoning: {reasoning.text}")
    return EXIT_OK


def cmd_report(args) -> int:
    options = _gather_options(args)
    run_dir = Path(args.run)
    if not run_dir.exists():
        raise UsageError(f"run directory not found: {run_dir}")
    summaries = {}
    for pair in args.ratings or []:
        if "=" not in pair:
            raise UsageError(f"--ratings expects name=path, got {pair!r}")
        name, path = pair.split("=", 1)
        summaries[name] = evalkit.aggregate_ratings(evalkit.load_ratings_csv(path))
    if summaries:
        evalkit.write_ratings_csv(run_dir / "ratings.csv", summaries)
    rendered = report.render_run_figures(run_dir)
    for source, target in rendered.items():
        print(f"rendered {source} -> {target.name}")
    if not rendered:
        print("no known artifacts found to render")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int, default=None, help="run seed (overrides config)")
    sub.add_argument("--out", default="runs/out", help="output directory")
    sub.add_argument("--set", action="append", metavar="K=V", help="override a config key")


def build_parser() -> _Parser:
    parser = _Parser(prog="fauxnews", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p_forge = subs.add_parser("forge", help="generate a synthetic benchmark dataset")
    _add_common(p_forge)
    p_forge.add_argument("--n", type=int, default=None, help="number of samples")
    p_forge.add_argument("--split", default="train", choices=("train", "test"))
    p_forge.set_defaults(func=cmd_forge)

    p_train = subs.add_parser("train", help="run the two-stage training schedule")
    _add_common(p_train)
    p_train.add_argument("--dataset", help="training dataset (.jsonl)")
    p_train.add_argument("--stage", default="all", choices=_STAGE_CHOICES)
    p_train.add_argument("--checkpoint-in", dest="checkpoint_in", help="warm-start checkpoint directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = subs.add_parser("eval", help="score a checkpoint on a test split")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint directory")
    p_eval.add_argument("--dataset", required=True, help="test dataset (.jsonl)")
    p_eval.add_argument("--train-dataset", dest="train_dataset", help="train split for exemplar sampling")
    p_eval.add_argument("--fewshot", help="comma list of shot counts, e.g. 0,1,2,4")
    p_eval.add_argument("--cot", action="store_true", help="include summary+clue steps in exemplar blocks")
    p_eval.add_argument("--ablate", help="comma list from {image,text,face} for an eval-time ablation sweep")
    p_eval.set_defaults(func=cmd_eval)

    p_reason = subs.add_parser("reason", help="generate reasoning for one sample")
    _add_common(p_reason)
    p_reason.add_argument("--checkpoint", help="checkpoint directory")
    p_reason.add_argument("--dataset", required=True)
    p_reason.add_argument("--id", required=True, help="sample id")
    p_reason.add_argument("--max-len", dest="max_len", type=int, default=256)
    p_reason.add_argument("--json", action="store_true")
    p_reason.set_defaults(func=cmd_reason)

    p_report = subs.add_parser("report", help="render figures from a run directory")
    _add_common(p_report)
    p_report.add_argument("--run", required=True, help="run directory with delimited outputs")
    p_report.add_argument("--ratings", action="append", metavar="NAME=CSV", help="aggregate a ratings file")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    torch.set_num_threads(1)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ForgeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
