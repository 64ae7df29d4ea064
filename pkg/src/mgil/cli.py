"""Operator entry point: train, eval, gradcheck, and ablate commands.

Exit codes: 0 success, 2 config error, 3 NaN abort during training,
4 checkpoint magic/version mismatch, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .blocks import MgilConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import Sample, load_cifar10, lowres_transform, synth_keypoint_dataset, write_synthetic_cifar
from .gradcheck import TOLERANCE, run_suite
from .nets import NetSpec, build_net
from .rng import Xoshiro256StarStar, derive_seed
from .tensor import Module
from .training import (
    Optimizer,
    OptimConfig,
    TrainingDiverged,
    ablate,
    component_grid,
    evaluate,
    summarize,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_CHECKPOINT = 4
EXIT_GRADCHECK = 5


def net_spec_from_config(cfg: RunConfig) -> NetSpec:
    mgil = MgilConfig(
        in_channels=cfg.net.base_width,
        lie_depth_flie=cfg.mgil.lie_depth_flie,
        lie_depth_cii=cfg.mgil.lie_depth_cii,
        dilation_rates=tuple(cfg.mgil.dilation_rates),
        fusion=cfg.mgil.fusion,
        cii_enabled=cfg.mgil.cii_enabled,
        cii_input=cfg.mgil.cii_input,
        normalize=cfg.mgil.normalize,
    )
    return NetSpec(
        task=cfg.task,
        base_width=cfg.net.base_width,
        stage_blocks=tuple(cfg.net.stage_blocks),
        downsampler=cfg.downsampler,
        mgil=mgil,
        num_classes=cfg.net.num_classes,
        num_keypoints=cfg.net.num_keypoints,
        input_size=cfg.data.image_size // cfg.data.lowres_factor,
    )


def build_dataset(cfg: RunConfig) -> tuple[list[Sample], list[Sample]]:
    d = cfg.data
    if d.kind == "synthetic_keypoint":
        size = d.image_size
        train_set = synth_keypoint_dataset(d.train_count, size,
                                           derive_seed(cfg.seed, "kp-train"))
        test_set = synth_keypoint_dataset(d.test_count, size,
                                          derive_seed(cfg.seed, "kp-test"))
    else:
        path = d.path
        if d.kind == "synthetic_cifar":
            if not path:
                raise ConfigError("data.path is required for synthetic_cifar", key="data.path")
            if not os.path.exists(os.path.join(path, "data_batch_1.bin")):
                write_synthetic_cifar(path, d.train_count, d.test_count,
                                      derive_seed(cfg.seed, "synth-cifar"))
        train_set = load_cifar10(path, "train")[:d.train_count]
        test_set = load_cifar10(path, "test")[:d.test_count]
    if d.lowres_factor > 1:
        train_set = [lowres_transform(s, d.lowres_factor) for s in train_set]
        test_set = [lowres_transform(s, d.lowres_factor) for s in test_set]
    return train_set, test_set


def optim_from_config(cfg: RunConfig) -> OptimConfig:
    o = cfg.optim
    return OptimConfig(kind=o.kind, lr=o.lr, momentum=o.momentum, beta1=o.beta1,
                       beta2=o.beta2, eps=o.eps, batch_size=o.batch_size,
                       schedule=o.schedule)


def apply_model_tensors(net: Module, tensors: dict[str, np.ndarray]) -> None:
    for name, t in net.named_tensors():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        if tensors[name].shape != t.data.shape:
            raise CheckpointError(
                f"tensor {name}: checkpoint shape {tensors[name].shape} "
                f"!= model shape {t.data.shape}")
        t.data = tensors[name].astype(np.float32).copy()


def _checkpoint_path(output_dir: str, epoch: int) -> str:
    return os.path.join(output_dir, f"checkpoint_epoch_{epoch:03d}.bin")


def cmd_train(config_path: str, resume: str | None = None) -> int:
    cfg = load_config(config_path)
    config_json = cfg.to_json()
    os.makedirs(cfg.output_dir, exist_ok=True)
    train_set, eval_set = build_dataset(cfg)
    spec = net_spec_from_config(cfg)
    net = build_net(spec, cfg.seed)
    optim_cfg = optim_from_config(cfg)
    optimizer = Optimizer(list(net.named_parameters()), optim_cfg)
    shuffle_rng = Xoshiro256StarStar(cfg.seed)
    start_epoch = 0

    if resume is not None:
        ckpt = load_checkpoint(resume)
        apply_model_tensors(net, ckpt["model_tensors"])
        optimizer.load_state(ckpt["optim_tensors"], ckpt["optim_steps"])
        shuffle_rng.set_state(ckpt["rng_state"])
        start_epoch = ckpt["epoch"]

    csv_path = os.path.join(cfg.output_dir, "metrics.csv")
    mode = "a" if (resume is not None and os.path.exists(csv_path)) else "w"
    csv_file = open(csv_path, mode, newline="", encoding="utf-8")
    writer = csv.writer(csv_file)
    if mode == "w":
        writer.writerow(["epoch", "train_loss", "eval_metric", "seconds"])
        csv_file.flush()

    def on_epoch(epoch, net_, optimizer_, rng_, record_):
        writer.writerow([epoch, f"{record_.train_losses[-1]:.6f}",
                         f"{record_.eval_metrics[-1]:.6f}",
                         f"{record_.seconds:.3f}"])
        csv_file.flush()
        save_checkpoint(
            _checkpoint_path(cfg.output_dir, epoch + 1),
            config_json=config_json, epoch=epoch + 1,
            optim_steps=optimizer_.step_count, rng_state=rng_.get_state(),
            model_tensors=[(n, t.data) for n, t in net_.named_tensors()],
            optim_tensors=optimizer_.state_tensors(),
        )

    if cfg.epochs == 0:
        save_checkpoint(
            _checkpoint_path(cfg.output_dir, 0),
            config_json=config_json, epoch=0,
            optim_steps=0, rng_state=shuffle_rng.get_state(),
            model_tensors=[(n, t.data) for n, t in net.named_tensors()],
            optim_tensors=optimizer.state_tensors(),
        )
        csv_file.close()
        return EXIT_OK

    try:
        record = train(net, train_set, eval_set, task=cfg.task, optim=optim_cfg,
                       epochs=cfg.epochs, seed=cfg.seed,
                       start_epoch=start_epoch, optimizer=optimizer,
                       shuffle_rng=shuffle_rng, epoch_callback=on_epoch)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        csv_file.close()
        return EXIT_NAN
    csv_file.close()
    print(f"final metric: {record.final_metric:.4f}")
    return EXIT_OK


def cmd_eval(ckpt_path: str, data_path: str | None = None) -> int:
    import json

    ckpt = load_checkpoint(ckpt_path)
    cfg = RunConfig.parse(json.loads(ckpt["config_json"]))
    if data_path is not None:
        cfg.data.path = data_path
    _, eval_set = build_dataset(cfg)
    net = build_net(net_spec_from_config(cfg), cfg.seed)
    apply_model_tensors(net, ckpt["model_tensors"])
    metric = "top1" if cfg.task == "classify" else "pck"
    value = evaluate(net, eval_set, metric)
    print(f"{value:.4f}")
    return EXIT_OK


def cmd_gradcheck() -> int:
    results = run_suite()
    failures = []
    for name, err in results:
        status = "PASS" if err < TOLERANCE else "FAIL"
        print(f"{name:>20s}  max_rel_err={err:.3e}  {status}")
        if err >= TOLERANCE:
            failures.append(name)
    if failures:
        print(f"gradient check failed for: {', '.join(failures)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_ablate(config_path: str) -> int:
    cfg = load_config(config_path)
    os.makedirs(cfg.output_dir, exist_ok=True)
    train_set, eval_set = build_dataset(cfg)
    spec = net_spec_from_config(cfg)
    if cfg.ablation.grid == "components":
        entries = component_grid(cfg.net.base_width)
    else:
        entries = [{"name": kind, "downsampler": kind,
                    "mgil": spec.mgil if kind == "mgil" else None}
                   for kind in ("strided_conv", "max_pool", "spd_conv", "mgil")]
    rows = ablate(spec, entries, list(cfg.ablation.seeds), train_set, eval_set,
                  optim=optim_from_config(cfg), epochs=cfg.epochs,
                  progress=lambda row: print(
                      f"  {row.name} seed={row.seed} metric={row.metric:.4f}"))

    csv_path = os.path.join(cfg.output_dir, "ablation.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["downsampler", "flie_depth", "cii_depth", "fusion",
                         "seed", "metric"])
        for row in rows:
            writer.writerow([row.downsampler,
                             "" if row.flie_depth is None else row.flie_depth,
                             "" if row.cii_depth is None else row.cii_depth,
                             "" if row.fusion is None else row.fusion,
                             row.seed, f"{row.metric:.6f}"])

    lines = ["entry                      mean    std     n",
             "-" * 46]
    for agg in summarize(rows):
        lines.append(f"{agg['name']:<24s} {agg['mean']:.4f}  {agg['std']:.4f}  {agg['n']}")
    table = "\n".join(lines)
    with open(os.path.join(cfg.output_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mgil", description="Multi-granular downsampling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--resume", default=None,
                         help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", default=None)

    sub.add_parser("gradcheck", help="run the finite-difference suite")

    p_ablate = sub.add_parser("ablate", help="run an ablation grid")
    p_ablate.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args.config, args.resume)
        if args.command == "eval":
            return cmd_eval(args.ckpt, args.data)
        if args.command == "gradcheck":
            return cmd_gradcheck()
        if args.command == "ablate":
            return cmd_ablate(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    parser.error(f"unknown command {args.command}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
