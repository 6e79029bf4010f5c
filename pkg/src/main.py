"""
src/main.py
Command-line entry point: train, eval, explain, aopc, attack, perturb, ablate, params.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import dotenv
import pandas as pd

from src.services.checkpoint_service import Checkpoint, load_checkpoint, save_checkpoint
from src.services.export_service import (
    atomic_write_text,
    contact_sheet,
    pixels_to_gray8,
    to_gray8,
    write_csv,
    write_matrix_csv,
    write_pgm,
)
from src.types.config import AggregationMode, ExplanationMethod, RunConfig
from src.types.dataset import LabeledImageSet
from src.types.errors import ContractError, UnsupportedModeError
from src.utils.attacks import success_rate
from src.utils.capsules import GraphCapsuleNetwork, count_parameters
from src.utils.commands import (
    ConfigSources,
    EXIT_VALIDATION,
    CommandResult,
    execute_command,
    resolve_run_config,
)
from src.utils.data.datasets import load_dataset
from src.utils.helpers import dump_key_values, parse_index_list
from src.utils.interpret import aopc, explain
from src.utils.training import (
    CompositeHooks,
    JSONLTraceHooks,
    PrintingTrainerHooks,
    Trainer,
    correct_indices,
    evaluate,
    perturb_capsule_sweep,
)

dotenv.load_dotenv()

CHECKPOINT_NAME = "checkpoint.bin"
Outputs = Tuple[Any, List[str]]


class CliArgumentError(ContractError):
    """Malformed command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with status 2
        raise CliArgumentError(f"{self.prog}: {message}")


# ---- argument parsing ---------------------------------------------------------
def _common(parser: argparse.ArgumentParser, checkpoint: bool = True) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--preset", help="bundled preset: mnist, fashion-mnist, desk, tiny")
    parser.add_argument("--dataset", help="mnist or fashion-mnist")
    parser.add_argument("--data-dir", help="root holding one directory per dataset")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--test-limit", type=int)
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key"
    )
    if checkpoint:
        parser.add_argument("--checkpoint", help=f"defaults to <out>/{CHECKPOINT_NAME}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphcaps", description="Graph capsule networks on MNIST-style data.")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train a model and write a checkpoint")
    _common(train, checkpoint=False)
    train.add_argument("--heads", type=int, help="number of heads L (L*D_in is kept)")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--aggregation", help="graph-pool, dynamic-routing or average")
    train.add_argument("--train-limit", type=int)

    evaluate_cmd = commands.add_parser("eval", help="accuracy of a checkpoint on the test split")
    _common(evaluate_cmd)

    explain_cmd = commands.add_parser("explain", help="relevance maps for test images")
    _common(explain_cmd)
    explain_cmd.add_argument("--images", help="index list such as 0..9 or 1,4,7")
    explain_cmd.add_argument("--methods", help="comma list of att, grad, ig, random")
    explain_cmd.add_argument("--ig-steps", type=int)

    aopc_cmd = commands.add_parser("aopc", help="AOPC curves per explanation method")
    _common(aopc_cmd)
    aopc_cmd.add_argument("--images", type=int, help="correctly classified images to score")
    aopc_cmd.add_argument("--methods", help="comma list of att, grad, ig, random")
    aopc_cmd.add_argument("--steps", type=int)
    aopc_cmd.add_argument("--patch", type=int)

    attack = commands.add_parser("attack", help="FGSM success rates over the epsilon grid")
    _common(attack)
    attack.add_argument("--mode", help="untargeted, targeted or a comma list")
    attack.add_argument("--epsilons", help="comma list of epsilons")
    attack.add_argument("--images", type=int, help="attack at most this many samples")

    perturb = commands.add_parser("perturb", help="reconstructions under capsule perturbations")
    _common(perturb)
    perturb.add_argument("--image", type=int)
    perturb.add_argument("--dims", help="index list such as 0..15")

    ablate = commands.add_parser("ablate", help="train one model per head count")
    _common(ablate, checkpoint=False)
    ablate.add_argument("--heads-list", help="comma list of head counts")
    ablate.add_argument("--aggregations", help="comma list of aggregation modes")
    ablate.add_argument("--epochs", type=int)
    ablate.add_argument("--train-limit", type=int)

    params = commands.add_parser("params", help="parameter counts per component")
    _common(params, checkpoint=False)
    params.add_argument("--heads", type=int)
    params.add_argument("--aggregation")
    return parser


FLAG_KEYS = {
    "dataset": "dataset",
    "data_dir": "data_dir",
    "out": "output_dir",
    "seed": "seed",
    "checkpoint": "checkpoint",
    "train_limit": "train_limit",
    "test_limit": "test_limit",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "lr": "train.lr",
    "aggregation": "model.aggregation",
    "ig_steps": "explain.ig_steps",
    "steps": "aopc.steps",
    "patch": "aopc.patch",
    "mode": "attack.modes",
    "epsilons": "attack.epsilons",
    "image": "perturb.image",
    "dims": "perturb.dims",
    "heads_list": "ablate.heads",
    "aggregations": "ablate.aggregations",
}

PER_COMMAND_KEYS = {
    "explain": {"images": "explain.images", "methods": "explain.methods"},
    "aopc": {"images": "aopc.images", "methods": "aopc.methods"},
    "attack": {"images": "attack.images"},
}


def config_sources(args: argparse.Namespace) -> ConfigSources:
    keys = dict(FLAG_KEYS, **PER_COMMAND_KEYS.get(args.command, {}))
    flags = {key: getattr(args, name) for name, key in keys.items() if hasattr(args, name)}
    return ConfigSources(
        preset=args.preset,
        config_path=args.config,
        flags=flags,
        heads=getattr(args, "heads", None),
        overrides=args.set,
    )


# ---- shared plumbing ----------------------------------------------------------
def _out(run: RunConfig, name: str) -> str:
    os.makedirs(run.output_dir, exist_ok=True)
    return os.path.join(run.output_dir, name)


def write_resolved_config(run: RunConfig, command: str) -> str:
    path = _out(run, "config.txt" if command == "train" else f"config_{command}.txt")
    atomic_write_text(path, dump_key_values(run))
    return path


def _split(run: RunConfig, split: str) -> LabeledImageSet:
    limit = run.train_limit if split == "train" else run.test_limit
    return load_dataset(run.dataset, run.data_dir, split, limit)


def restore(run: RunConfig, explicit_model: bool) -> Tuple[RunConfig, GraphCapsuleNetwork]:
    """Load the run's checkpoint; its embedded model config wins unless one was given."""
    path = run.checkpoint or os.path.join(run.output_dir, CHECKPOINT_NAME)
    checkpoint = load_checkpoint(path, expected_config=run.model if explicit_model else None)
    run = run.model_copy(update={"model": checkpoint.config, "checkpoint": path})
    return run, checkpoint.build_model()


# ---- subcommands --------------------------------------------------------------
def cmd_train(run: RunConfig) -> Outputs:
    outputs = [write_resolved_config(run, "train")]
    train_set, test_set = _split(run, "train"), _split(run, "test")
    model = GraphCapsuleNetwork(run.model)
    trace_path = _out(run, "traces.jsonl")
    if os.path.exists(trace_path):
        os.remove(trace_path)
    hooks = CompositeHooks([PrintingTrainerHooks(), JSONLTraceHooks(trace_path, flush_every=20)])
    trainer = Trainer(model, run.train, seed=run.seed, hooks=hooks)
    state = trainer.fit(train_set, test_set=test_set)

    checkpoint_path = _out(run, CHECKPOINT_NAME)
    save_checkpoint(Checkpoint.from_model(model, state), checkpoint_path)
    metrics_path = _out(run, "metrics.csv")
    write_csv(metrics_path, state.metric_rows(), columns=["epoch", "split", "loss", "accuracy"])
    outputs += [checkpoint_path, metrics_path, trace_path]
    final = state.last("test")
    if final is not None:
        print(f"Final test accuracy: {final.accuracy:.4f}")
    return state, outputs


def cmd_eval(run: RunConfig, explicit_model: bool = False) -> Outputs:
    run, model = restore(run, explicit_model)
    outputs = [write_resolved_config(run, "eval")]
    dataset = _split(run, "test")
    report = evaluate(model, dataset, run.train.eval_batch_size, run.train.reconstruction_weight)
    rows = [{"class": "all", "count": report.n_samples, "accuracy": report.accuracy}]
    rows += [{**row, "class": str(row["class"])} for row in report.rows()]
    path = _out(run, "eval.csv")
    write_csv(path, rows, columns=["class", "count", "accuracy"])
    print(f"Accuracy on {report.n_samples} {run.dataset} test images: {report.accuracy:.4f}")
    for row in report.rows():
        print(f"  class {row['class']}: {row['accuracy']:.4f} ({row['count']} images)")
    return report, outputs + [path]


def _require_attention(model: GraphCapsuleNetwork, methods: Sequence[ExplanationMethod]) -> None:
    if (
        ExplanationMethod.ATTENTION in methods
        and model.config.aggregation != AggregationMode.GRAPH_POOL
    ):
        raise UnsupportedModeError(
            f"method 'att' needs a graph-pool checkpoint, this one uses "
            f"'{model.config.aggregation.value}'"
        )


def cmd_explain(run: RunConfig, explicit_model: bool = False) -> Outputs:
    run, model = restore(run, explicit_model)
    methods = run.explain.methods
    _require_attention(model, methods)
    dataset = _split(run, "test")
    indices = parse_index_list(run.explain.images, upper=len(dataset))
    outputs = [write_resolved_config(run, "explain")]
    maps = []
    for index in indices:
        image = dataset.images[index]
        target = int(model.predict(image))
        for method in methods:
            explanation = explain(
                model, image, target, method, seed=[run.seed, index], ig_steps=run.explain.ig_steps
            )
            stem = _out(run, f"explain_{index:05d}_{method.value}")
            gray, lo, hi = to_gray8(explanation.values)
            write_pgm(stem + ".pgm", gray)
            atomic_write_text(
                stem + ".txt",
                f"method={method.value} image={index} label={int(dataset.labels[index])} "
                f"target={target} min={lo:.6f} max={hi:.6f}\n",
            )
            write_matrix_csv(stem + ".csv", explanation.values)
            outputs += [stem + ".pgm", stem + ".txt", stem + ".csv"]
            maps.append(explanation)
    print(f"Wrote {len(maps)} explanation maps to {run.output_dir}")
    return maps, outputs


def cmd_aopc(run: RunConfig, explicit_model: bool = False) -> Outputs:
    run, model = restore(run, explicit_model)
    options = run.aopc
    _require_attention(model, options.methods)
    dataset = _split(run, "test")
    ids = correct_indices(model, dataset, run.train.eval_batch_size)[: options.images]
    if ids.size == 0:
        raise ContractError("no correctly classified test images to score")
    images = dataset.images[ids]
    targets = [int(model.predict(image)) for image in images]
    outputs = [write_resolved_config(run, "aopc")]
    results, summary = [], []
    for method in options.methods:
        maps = [
            explain(model, image, target, method, seed=[run.seed, int(i)], ig_steps=options.ig_steps).values
            for image, target, i in zip(images, targets, ids)
        ]
        result = aopc(
            model,
            images,
            maps,
            options.steps,
            patch=options.patch,
            seed=run.seed,
            method=method.value,
            image_ids=ids,
        )
        path = _out(run, f"aopc_{method.value}.csv")
        write_csv(
            path,
            ({"step": k + 1, "mean_drop": float(d)} for k, d in enumerate(result.curve)),
            columns=["step", "mean_drop"],
        )
        outputs.append(path)
        results.append(result)
        summary.append(
            {"method": method.value, "n_images": result.n_images, "steps": result.steps, "aopc": result.aopc}
        )
        print(f"AOPC[{method.value}] over {result.n_images} images: {result.aopc:.6f}")
    path = _out(run, "aopc_summary.csv")
    write_csv(path, summary, columns=["method", "n_images", "steps", "aopc"])
    return results, outputs + [path]


def cmd_attack(run: RunConfig, explicit_model: bool = False) -> Outputs:
    run, model = restore(run, explicit_model)
    dataset = _split(run, "test")
    outputs = [write_resolved_config(run, "attack")]
    reports = []
    for mode in run.attack.modes:
        report = success_rate(
            model,
            dataset,
            run.attack.epsilons,
            mode,
            seed=run.seed,
            limit=run.attack.images,
            batch_size=run.train.eval_batch_size,
        )
        path = _out(run, f"attack_{mode.value}.csv")
        write_csv(
            path,
            (
                {
                    "mode": report.mode,
                    "epsilon": row.epsilon,
                    "n_evaluated": row.n_evaluated,
                    "n_success": row.n_success,
                    "success_rate": row.success_rate,
                }
                for row in report.rows
            ),
            columns=["mode", "epsilon", "n_evaluated", "n_success", "success_rate"],
        )
        outputs.append(path)
        reports.append(report)
        rates = ", ".join(f"{r.epsilon:g}:{r.success_rate:.4f}" for r in report.rows)
        print(f"FGSM {report.mode} on {report.n_samples} samples: {rates}")
    return reports, outputs


def cmd_perturb(run: RunConfig, explicit_model: bool = False) -> Outputs:
    run, model = restore(run, explicit_model)
    dataset = _split(run, "test")
    if run.perturb.image >= len(dataset):
        raise ContractError(
            f"image index {run.perturb.image} is out of range, expected [0, {len(dataset)})"
        )
    dims = parse_index_list(run.perturb.dims, upper=model.config.capsule_dim_out)
    image = dataset.images[run.perturb.image]
    outputs = [write_resolved_config(run, "perturb")]
    tiles, layout = [], ["row col dim delta file"]
    sweeps = []
    for row, dim in enumerate(dims):
        sweep = perturb_capsule_sweep(model, image, dim)
        tiles.append([])
        for col, (delta, decoded) in enumerate(zip(sweep.deltas, sweep.images)):
            name = f"perturb_dim{dim:02d}_{col:02d}.pgm"
            gray = pixels_to_gray8(decoded[0])
            write_pgm(_out(run, name), gray)
            tiles[-1].append(gray)
            layout.append(f"{row} {col} {dim} {delta:+.2f} {name}")
            outputs.append(_out(run, name))
        sweeps.append(sweep)
    sheet_path, layout_path = _out(run, "perturb_sheet.pgm"), _out(run, "perturb_layout.txt")
    write_pgm(sheet_path, contact_sheet(tiles))
    atomic_write_text(layout_path, "\n".join(layout) + "\n")
    print(f"Wrote {sum(len(t) for t in tiles)} reconstructions for dims {dims}")
    return sweeps, outputs + [sheet_path, layout_path]


def cmd_ablate(run: RunConfig) -> Outputs:
    outputs = [write_resolved_config(run, "ablate")]
    train_set, test_set = _split(run, "train"), _split(run, "test")
    rows = []
    for aggregation in run.ablate.aggregations:
        for heads in run.ablate.heads:
            config = run.model.with_heads(heads).model_copy(update={"aggregation": aggregation})
            print(f"Ablation: {aggregation.value}, L={heads}, D_in={config.capsule_dim_in}")
            model = GraphCapsuleNetwork(config)
            Trainer(model, run.train, seed=run.seed, hooks=PrintingTrainerHooks()).fit(train_set)
            report = evaluate(model, test_set, run.train.eval_batch_size)
            rows.append(
                {
                    "heads": heads,
                    "aggregation": aggregation.value,
                    "capsule_dim_in": config.capsule_dim_in,
                    "test_accuracy": report.accuracy,
                    "transform_params": count_parameters(config).transform,
                }
            )
    path = _out(run, "ablation.csv")
    frame = write_csv(
        path,
        rows,
        columns=["heads", "aggregation", "capsule_dim_in", "test_accuracy", "transform_params"],
    )
    print(frame.to_string(index=False))
    return frame, outputs + [path]


def cmd_params(run: RunConfig) -> Outputs:
    table = count_parameters(run.model)
    frame = pd.DataFrame(table.rows())
    print(frame.to_string(index=False))
    return table, []


# commands that build a model from the resolved config
CONFIG_COMMANDS: Dict[str, Callable[[RunConfig], Outputs]] = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "params": cmd_params,
}
# commands that restore a checkpoint and check it against an explicit model config
CHECKPOINT_COMMANDS: Dict[str, Callable[[RunConfig, bool], Outputs]] = {
    "eval": cmd_eval,
    "explain": cmd_explain,
    "aopc": cmd_aopc,
    "attack": cmd_attack,
    "perturb": cmd_perturb,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> CommandResult:
    try:
        args = build_parser().parse_args(argv)
    except CliArgumentError as exc:
        return CommandResult(
            command="", exit_code=EXIT_VALIDATION, error=exc, error_type=type(exc).__name__
        )

    def invoke() -> Outputs:
        run, explicit_model = resolve_run_config(config_sources(args))
        if args.command in CHECKPOINT_COMMANDS:
            return CHECKPOINT_COMMANDS[args.command](run, explicit_model)
        return CONFIG_COMMANDS[args.command](run)

    return execute_command(args.command, invoke)


def main(argv: Optional[Sequence[str]] = None) -> int:
    result = run_cli(argv)
    if result.error is not None:
        print(f"Error ({result.error_type}): {result.error}", file=sys.stderr)
    return result.exit_code
