"""Command line: ``snnguard {train,attack,analyze,verify,report}``.

Exit codes: 0 success, 1 usage, 2 configuration, 3 data (including missing
or corrupt checkpoints), 4 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import analysis, checkpoint, verification
from .attacks import AttackConfig, fgsm
from .config import ConfigError, ExperimentConfig, build
from .data import IdxFormatError
from .experiment import (as_image, check_compatible, load_data, metrics_rows, read_csv, run_training,
                         write_csv, write_matrix, write_pgm)
from .training import METRIC_COLUMNS, TrainingDivergedError, evaluate, recorded_forward, stream

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3, 4
log = logging.getLogger("snnguard")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snnguard", description="Train, attack and analyse spiking networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp, needs_checkpoint=False):
        sp.add_argument("--config", help="JSON experiment config (defaults when omitted)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.epochs=5")
        sp.add_argument("--out", help="output directory (default: config, then $SNNGUARD_OUT, then ./runs)")
        if needs_checkpoint:
            sp.add_argument("--checkpoint", help="model checkpoint (default: <out>/model.spkg)")

    common(sub.add_parser("train", help="train a model and write metrics.csv and model.spkg"))
    common(sub.add_parser("attack", help="evaluate a checkpoint under the attack suite"), True)
    an = sub.add_parser("analyze", help="histograms, gradient heatmaps, landscapes, flip tables")
    common(an, True)
    an.add_argument("--samples", type=int, default=200, help="test samples to analyse")
    ver = sub.add_parser("verify", help="run the theory checks on the shipped fixtures")
    ver.add_argument("--quick", action="store_true", help="smaller sample counts")
    ver.add_argument("--out", help="also write verify.csv here")
    rep = sub.add_parser("report", help="collate the CSV files of an output directory")
    rep.add_argument("--out", help="directory to collate (default: $SNNGUARD_OUT, then ./runs)")
    return p


def _config(args) -> ExperimentConfig:
    return build(args.config, args.set)


def _checkpoint_path(args, out: Path) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else out / "model.spkg"
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    return path


def _load_model(args, cfg, out):
    from .experiment import build_model
    model, _ = checkpoint.load(_checkpoint_path(args, out), expected=build_model(cfg))
    return model


# ---------------------------------------------------------------- commands
def cmd_train(args) -> int:
    cfg = _config(args)
    out = cfg.resolve_output_dir(args.out)
    train, _ = load_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    every = cfg.train.checkpoint_every

    def on_epoch(model, row):
        log.info("epoch %d loss %.4f acc %.4f", row["epoch"], row["loss"], row["clean_acc"])
        if every and (row["epoch"] + 1) % every == 0:
            checkpoint.save(out / f"epoch{row['epoch'] + 1:04d}.spkg", model)

    model, opt, rows = run_training(cfg, train, on_epoch)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics_rows(rows))
    checkpoint.save(out / "model.spkg", model, opt)
    print(f"wrote {out / 'metrics.csv'} and {out / 'model.spkg'}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _config(args)
    out = cfg.resolve_output_dir(args.out)
    _, test = load_data(cfg)
    check_compatible(cfg, test)
    model = _load_model(args, cfg, out)
    table = evaluate(model, test, cfg.attacks, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    header = ["model"] + list(table)
    write_csv(out / "attack.csv", header, [[cfg.train.mode] + [table[k] for k in table]])
    print("  ".join(f"{k}={v:.2f}" for k, v in table.items()))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    out = cfg.resolve_output_dir(args.out)
    _, test = load_data(cfg)
    check_compatible(cfg, test)
    model = _load_model(args, cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    sub = test.subset(np.arange(min(args.samples, len(test))))
    margin, v_th = cfg.tgo.margin, cfg.model.v_th

    rec = recorded_forward(model, sub.x, stream(cfg.seed, 2000, 0))
    hist = analysis.membrane_histogram(rec, bins=40, value_range=(-1.0, 3.0), v_th=v_th, margin=margin)
    rows = [["underflow", "-inf", hist.edges[0], hist.underflow]]
    rows += [["bin", lo, hi, c] for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts)]
    rows += [["overflow", hist.edges[-1], "inf", hist.overflow]]
    write_csv(out / "histogram.csv", ["kind", "low", "high", "count"], rows)

    heat = analysis.gradient_heatmap(model, sub.x[0], sub.y[0], stream(cfg.seed, 2000, 1))
    image = as_image(heat.grad)
    write_matrix(out / "heatmap.csv", image, range(image.shape[0]), range(image.shape[1]))
    write_pgm(out / "heatmap.pgm", image)
    spars = analysis.batch_sparsity(model, sub.x, sub.y, seed=cfg.seed)
    write_csv(out / "sparsity.csv", ["sample", "sparsity"], list(zip(range(len(spars)), spars)))

    batch = sub.subset(np.arange(min(32, len(sub))))
    land = analysis.loss_landscape(model, batch.x, batch.y, extent=1.0, points=11, seed=cfg.seed)
    write_matrix(out / "landscape.csv", land.losses, land.alphas, land.betas, corner="alpha\\beta")

    eps = cfg.attacks[0].epsilon if cfg.attacks else 8 / 255
    adv = fgsm(model, sub.x, sub.y, AttackConfig("fgsm", eps), stream(cfg.seed, 2000, 2))
    flips = analysis.flip_rate_under_attack(model, sub.x, adv, shared_seed=cfg.seed, margin=margin)
    rows = [[lo, hi, n, f, r] for lo, hi, n, f, r in zip(flips.bin_edges[:-1], flips.bin_edges[1:],
                                                         flips.bin_entries, flips.bin_flips, flips.bin_rates)]
    write_csv(out / "flips.csv", ["distance_low", "distance_high", "entries", "flips", "flip_rate"], rows)
    print(f"neighbor fraction {hist.neighbor_fraction:.4f}, median sparsity {np.median(spars):.3f}, "
          f"flip rate {flips.rate:.4f}; wrote analysis files to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verification.run_all(quick=args.quick)
    for r in results:
        print(r.line())
    if args.out:
        write_csv(Path(args.out) / "verify.csv", ["suite", "passed", "summary", "seconds"],
                  [[r.name, r.passed, r.summary, r.seconds] for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_report(args) -> int:
    out = ExperimentConfig().resolve_output_dir(args.out)
    files = sorted(p for p in out.glob("*.csv"))
    if not files:
        raise DataError(f"no CSV files in {out}")
    lines = [f"# Summary of {out}", ""]
    for path in files:
        try:
            header, rows = read_csv(path)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        lines += [f"## {path.name}", "", "| " + " | ".join(header) + " |",
                  "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        lines.append("")
    (out / "summary.md").write_text("\n".join(lines))
    print(f"collated {len(files)} CSV files into {out / 'summary.md'}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "analyze": cmd_analyze,
            "verify": cmd_verify, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, TrainingDivergedError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IdxFormatError, checkpoint.CheckpointError, FileNotFoundError, ImportError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
