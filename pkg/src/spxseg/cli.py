"""Command-line surface: train, eval, diagnose-spc, export-superpixels, cost."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import spc
from .checkpoint import load_checkpoint, restore_parameters, save_checkpoint
from .config import (
    RunConfig,
    build_dataset,
    build_head,
    build_net,
    build_sampler_config,
    build_train_config,
    config_to_ini,
    describe_defaults,
    load_config,
)
from .cost import cost_report
from .dataset import save_label_png
from .heads import HeadConfig
from .network import NetConfig
from .figures import (
    save_control_chart_figure,
    save_iu_bars,
    save_loss_curves,
    save_superpixel_overlay,
)
from .metrics import confusion_matrix, report_from_confusion
from .sampling import draw_samples, save_samples_csv
from .spc import LearningRatePolicy
from .superpixel import save_superpixel_csv, save_superpixel_png, slic
from .training import Trainer, run_spc_diagnosis, run_training

POLICY_CHOICES = ("all-low", "all-high", "hybrid1", "hybrid2", "auto")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spxseg",
        description="Superpixel-sampled semantic segmentation engine",
        epilog=describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", type=Path, default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="override trainer seed")
        p.add_argument("--budget", type=int, default=None, help="override sample budget")
        p.add_argument("--superpixels", type=int, default=None, help="override region target")
        p.add_argument("--head", choices=("fc", "resblock"), default=None, help="override head variant")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")

    p_train = sub.add_parser("train", help="train a model and save checkpoints")
    common(p_train)
    p_train.add_argument("--policy", choices=POLICY_CHOICES, default="all-low",
                         help="per-layer learning-rate policy for the head")
    p_train.add_argument("--policy-file", type=Path, default=None,
                         help="policy JSON from diagnose-spc (required for --policy auto)")
    p_train.add_argument("--epochs", type=int, default=None, help="override total epochs")
    p_train.add_argument("--checkpoint-every", type=int, default=10,
                         help="save a checkpoint every N epochs")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the eval split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file to load")

    p_diag = sub.add_parser("diagnose-spc", help="baseline + high-rate runs, charts, derived policy")
    common(p_diag)
    p_diag.add_argument("--policy", choices=("hybrid1", "hybrid2"), default="hybrid2",
                        help="reduced-multiplier variant for the derived policy")
    p_diag.add_argument("--epochs", type=int, default=None, help="override diagnostic epochs")

    p_export = sub.add_parser("export-superpixels", help="superpixel maps as PNG + CSV")
    common(p_export)
    p_export.add_argument("--images", type=int, default=1, help="how many images to export")

    p_cost = sub.add_parser("cost", help="dense vs sampled operation counts")
    common(p_cost, out_required=False)

    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.budget is not None:
        cfg.budget = args.budget
    if args.superpixels is not None:
        cfg.superpixels = args.superpixels
    if getattr(args, "head", None) is not None:
        cfg.head = args.head
    if getattr(args, "epochs", None) is not None:
        cfg.total_epochs = args.epochs
    return cfg


def _prepare_out(args: argparse.Namespace, cfg: RunConfig) -> Path:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(config_to_ini(cfg))
    return out


def _make_policy(cfg: RunConfig, name: str, layer_order: list[str], policy_file: Path | None) -> LearningRatePolicy:
    if name == "all-low":
        return spc.all_low_policy(layer_order)
    if name == "all-high":
        return spc.all_high_policy(layer_order, cfg.high_multiplier)
    if name == "auto":
        if policy_file is None:
            raise SystemExit("--policy auto needs --policy-file from a diagnose-spc run")
        return LearningRatePolicy.load(policy_file)
    reduced = cfg.hybrid1_multiplier if name == "hybrid1" else cfg.hybrid2_multiplier
    if policy_file is not None:
        flagged = LearningRatePolicy.load(policy_file).flagged_layers
    else:
        flagged = {layer_order[-1]}  # default: reduce the layer nearest the loss
    return spc.derive_policy(layer_order, flagged, cfg.high_multiplier, reduced)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    dataset = build_dataset(cfg, "train")
    net = build_net(cfg)
    head = build_head(cfg, net.config.hypercolumn_length())
    policy = _make_policy(cfg, args.policy, head.layer_order, args.policy_file)

    def on_epoch(stats):
        print(f"epoch {stats.epoch:3d}  loss {stats.mean_loss:.4f}", flush=True)
        if args.checkpoint_every and stats.epoch % args.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_{stats.epoch:04d}.ckpt",
                            net.parameters() + head.parameters())

    result = run_training(
        dataset, net, head, build_train_config(cfg), build_sampler_config(cfg),
        policy, monitor_epochs=False, log_path=out / "train_log.jsonl",
        epoch_callback=on_epoch,
    )
    save_checkpoint(out / "checkpoint_final.ckpt", net.parameters() + head.parameters())
    save_loss_curves({"train": result.losses}, out / "loss_curve.png")
    print(f"final loss {result.losses[-1]:.4f}; outputs in {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    dataset = build_dataset(cfg, "eval")
    net = build_net(cfg)
    head = build_head(cfg, net.config.hypercolumn_length())
    restore_parameters(net.parameters() + head.parameters(), load_checkpoint(args.checkpoint))

    trainer = Trainer(net, head, build_train_config(cfg), build_sampler_config(cfg),
                      dataset.class_count)
    confusion = np.zeros((dataset.class_count, dataset.class_count), dtype=np.int64)
    pred_dir = out / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for item in dataset.items:
        pred = trainer.predict_dense(item, seed=cfg.seed)
        confusion += confusion_matrix(pred, item.labels, dataset.class_count, cfg.ignore_label)
        save_label_png(pred, pred_dir / f"{item.name}.png")

    report = report_from_confusion(confusion)
    report.save(out / "metrics.json")
    save_iu_bars(report, out / "per_class_iu.png")
    np.savetxt(out / "confusion.csv", confusion, fmt="%d", delimiter=",")
    print(f"pixel_acc {report.pixel_acc:.4f}  mean_acc {report.mean_acc:.4f}  "
          f"mean_iu {report.mean_iu:.4f}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    dataset = build_dataset(cfg, "train")

    def make_net_head():
        net = build_net(cfg)
        head = build_head(cfg, net.config.hypercolumn_length())
        return net, head

    reduced = cfg.hybrid1_multiplier if args.policy == "hybrid1" else cfg.hybrid2_multiplier
    result = run_spc_diagnosis(
        dataset, make_net_head, build_train_config(cfg), build_sampler_config(cfg),
        high_multiplier=cfg.high_multiplier, reduced_multiplier=reduced,
        c=cfg.control_c, threshold=cfg.violation_threshold,
        window=cfg.consecutive_window,
    )

    result.baseline.save(out / "baseline.json")
    result.policy.save(out / "policy.json")
    chart_dir = out / "charts"
    spc.save_chart_csvs(result.monitor.history, chart_dir)
    for layer_id in sorted({s.layer_id for s, _ in result.monitor.history}):
        save_control_chart_figure(
            layer_id, result.monitor.history,
            chart_dir / f"chart_{layer_id.replace('.', '_')}.png",
        )
    save_loss_curves(
        {"all-low": result.baseline_losses, "all-high": result.high_losses},
        out / "diagnostic_losses.png",
    )
    summary = {
        "flagged_layers": sorted(result.high_flags),
        "baseline_flags": sorted(result.baseline_flags),
        "final_loss_all_low": result.baseline_losses[-1],
        "final_loss_all_high": result.high_losses[-1],
    }
    (out / "diagnosis.json").write_text(json.dumps(summary, indent=2))
    print(f"flagged layers: {sorted(result.high_flags) or 'none'}; policy in {out / 'policy.json'}")
    return 0


def cmd_export_superpixels(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _prepare_out(args, cfg)
    dataset = build_dataset(cfg, "train")
    for item in dataset.items[: args.images]:
        spmap = slic(item.image, cfg.superpixels, cfg.compactness)
        save_superpixel_png(spmap, out / f"{item.name}_regions.png")
        save_superpixel_csv(spmap, out / f"{item.name}_regions.csv")
        save_superpixel_overlay(item.image, spmap.labels, out / f"{item.name}_overlay.png")
        budget = min(cfg.budget, 2 * spmap.n_regions)
        samples = draw_samples(spmap, item.labels, budget, cfg.seed, cfg.ignore_label)
        save_samples_csv(samples, out / f"{item.name}_samples.csv")
        print(f"{item.name}: {spmap.n_regions} regions")
    return 0


def cmd_cost(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    net_cfg = NetConfig(
        stage_channels=cfg.stage_channels,
        convs_per_stage=cfg.convs_per_stage,
        branch_channels=cfg.branch_channels,
    )
    head_cfg = HeadConfig(
        variant=cfg.head,
        n_classes=cfg.class_count,
        input_dim=net_cfg.hypercolumn_length(),
        width_factor=cfg.width_factor,
    )
    report = cost_report((cfg.height, cfg.width), cfg.budget, head_cfg)
    print(report.to_json())
    print(f"sampled fraction: {report.fraction_percent()} of all pixels")
    if args.out is not None:
        out = _prepare_out(args, cfg)
        report.save(out / "cost.json")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "diagnose-spc": cmd_diagnose,
        "export-superpixels": cmd_export_superpixels,
        "cost": cmd_cost,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
