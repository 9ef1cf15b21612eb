"""Command-line front door: reproducible quantize / train / eval / restrict /
visualize / compare runs.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure. Every
run writes ``run.json`` with the fully resolved configuration next to its
outputs, and all outputs are bit-identical across reruns for fixed inputs
and seed.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio, metrics, viz
from .maps import SaliencyMap, quantize, restrict, to_display
from .train import (
    Checkpoint,
    TrainConfig,
    TrainingDiverged,
    compare_convergence,
    load_dataset,
    synthesize_dataset,
    train,
    write_comparison,
)

USAGE_ERROR = 2
NUMERICAL_ERROR = 3

CLI_LOSS_FORMS = {
    "categorical": "categorical",
    "eq2": "eq2-literal",
    "regression": "euclidean-regression",
}


class CliError(Exception):
    pass


def write_run_json(out_dir, subcommand, resolved) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"v": 1, "subcommand": subcommand, "config": resolved}
    with open(out_dir / "run.json", "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        base_lr=args.lr,
        step_size=args.step_size,
        gamma=args.gamma,
        max_iters=args.iters,
        batch_size=args.batch_size,
        num_levels=args.levels,
        decoder_mode=args.decoder,
        loss_form=CLI_LOSS_FORMS[args.loss],
        seed=args.seed,
    )


def _add_train_flags(p):
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--sigma", type=float, default=None, help="fixation blur sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoder", choices=["unpool", "deconv"], default="unpool")
    p.add_argument("--loss", choices=sorted(CLI_LOSS_FORMS), default="categorical")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--step-size", type=int, default=500)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--synthetic", type=int, default=None, metavar="N",
                   help="train on N generated samples instead of a dataset dir")
    p.add_argument("--synthetic-size", type=int, default=32)


def _load_training_data(args):
    if args.synthetic is not None:
        sigma = args.sigma if args.sigma is not None else args.synthetic_size / 8.0
        return synthesize_dataset(
            args.synthetic,
            size=args.synthetic_size,
            seed=args.seed,
            num_levels=args.levels,
            sigma=sigma,
        )
    if args.dataset is None:
        raise CliError("either a dataset directory or --synthetic N is required")
    sigma = args.sigma if args.sigma is not None else 19.0
    return load_dataset(args.dataset, num_levels=args.levels, sigma=sigma)


def cmd_quantize(args) -> int:
    sm = fileio.read_saliency(args.input)
    srm = quantize(sm, args.levels)
    out = Path(args.output)
    fileio.write_region_map(out, srm)
    write_run_json(
        out.parent,
        "quantize",
        {"input": str(args.input), "output": str(out), "levels": args.levels},
    )
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    dataset = _load_training_data(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt, log = train(dataset, cfg)
    ckpt.loss_log_ref = "loss.csv"
    log.write_csv(out_dir / "loss.csv")
    ckpt.save(out_dir / "model.ckpt")
    write_run_json(
        out_dir,
        "train",
        {
            **cfg.to_dict(),
            "dataset": str(args.dataset) if args.dataset else None,
            "synthetic": args.synthetic,
            "synthetic_size": args.synthetic_size,
            "sigma": args.sigma,
        },
    )
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    if not pred_dir.is_dir() or not gt_dir.is_dir():
        raise CliError("prediction and ground-truth arguments must be directories")

    stems = sorted(
        p.name[: -len(".fix.csv")] for p in gt_dir.glob("*.fix.csv")
    )
    if not stems:
        raise CliError(f"no *.fix.csv ground truth in {gt_dir}")

    preds, fms, accs = {}, {}, []
    for stem in stems:
        pred_path = pred_dir / f"{stem}.pgm"
        if not pred_path.exists():
            raise CliError(f"missing prediction {pred_path}")
        values = fileio.read_pgm(pred_path)
        h, w = values.shape
        preds[stem] = values
        fms[stem] = fileio.read_fixations(gt_dir / f"{stem}.fix.csv", w, h)

    report = metrics.EvalReport()
    per_map_acc = {}
    for stem in stems:
        others = [fms[s] for s in stems if s != stem]
        row = {"name": stem}
        for metric, fn in (
            ("auc_judd", lambda: metrics.auc_judd(preds[stem], fms[stem])),
            ("nss", lambda: metrics.nss(preds[stem], fms[stem])),
            (
                "auc_shuffled",
                lambda: metrics.auc_shuffled(
                    preds[stem], fms[stem], others, args.splits, args.seed
                ),
            ),
        ):
            try:
                row[metric] = fn()
            except ValueError:
                row[metric] = None  # e.g. constant prediction or empty pool
        report.per_map.append(row)

        gt_srm_path = gt_dir / f"{stem}.srm.pgm"
        pred_sidecar = Path(str(pred_dir / f"{stem}.pgm") + ".json")
        if gt_srm_path.exists() and pred_sidecar.exists():
            accs.append(
                metrics.classification_accuracy(
                    fileio.read_region_map(pred_dir / f"{stem}.pgm"),
                    fileio.read_region_map(gt_srm_path),
                )
            )
            per_map_acc[stem] = accs[-1].to_dict()
    report.finalize()

    result = report.to_dict()
    if accs:
        k = len(accs[0].per_class)
        result["accuracy"] = {
            "overall": float(np.mean([a.overall for a in accs])),
            "per_class": [
                float(np.mean([a.per_class[c] for a in accs])) for c in range(k)
            ],
            "per_map": per_map_acc,
        }

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "eval.json", "w") as f:
        json.dump(result, f, indent=2, sort_keys=True)
        f.write("\n")
    write_run_json(
        out_dir,
        "eval",
        {
            "pred": str(pred_dir),
            "gt": str(gt_dir),
            "splits": args.splits,
            "seed": args.seed,
        },
    )
    print(json.dumps(result["means"], sort_keys=True))
    return 0


def cmd_restrict(args) -> int:
    quantized = fileio.read_region_map(args.quantized)
    binary = fileio.read_region_map(args.binary)
    out = Path(args.output)
    fileio.write_region_map(out, restrict(quantized, binary))
    write_run_json(
        out.parent,
        "restrict",
        {
            "quantized": str(args.quantized),
            "binary": str(args.binary),
            "output": str(out),
        },
    )
    return 0


def cmd_visualize(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    grid = viz.visualize_grid(ckpt, args.layer, args.n)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fileio.write_pgm(out_dir / viz.grid_filename(args.layer, args.n), grid)
    write_run_json(
        out_dir,
        "visualize",
        {"checkpoint": str(args.checkpoint), "layer": args.layer, "n": args.n},
    )
    return 0


def cmd_compare(args) -> int:
    cfg = _train_config(args)
    dataset = _load_training_data(args)
    results = compare_convergence(dataset, cfg)
    out_dir = Path(args.out)
    write_comparison(results, out_dir)
    write_run_json(
        out_dir,
        "compare",
        {
            **cfg.to_dict(),
            "dataset": str(args.dataset) if args.dataset else None,
            "synthetic": args.synthetic,
            "synthetic_size": args.synthetic_size,
            "sigma": args.sigma,
        },
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salseg",
        description="Salient region segmentation experiments",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("quantize", help="quantize a saliency map into K levels")
    p.add_argument("input", help="saliency map PGM/PNG")
    p.add_argument("output", help="output region-map PGM (sidecar JSON added)")
    p.add_argument("--levels", type=int, default=3)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("train", help="train a segmentation or regression model")
    p.add_argument("dataset", nargs="?", default=None, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score predictions against fixations")
    p.add_argument("pred", help="directory of <stem>.pgm predictions")
    p.add_argument("gt", help="directory of <stem>.fix.csv (+ optional <stem>.srm.pgm)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--splits", type=int, default=100, help="sAUC negative splits")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("restrict", help="mask a multi-level map with a binary one")
    p.add_argument("quantized", help="multi-level region-map PGM")
    p.add_argument("binary", help="2-level region-map PGM")
    p.add_argument("output", help="output region-map PGM")
    p.set_defaults(fn=cmd_restrict)

    p = sub.add_parser("visualize", help="export a receptive-field grid")
    p.add_argument("checkpoint")
    p.add_argument("--layer", type=int, default=1, help="0-based encoder stage")
    p.add_argument("--n", type=int, default=64, help="number of neurons")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_visualize)

    p = sub.add_parser("compare", help="segmentation vs regression convergence")
    p.add_argument("dataset", nargs="?", default=None, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse uses its own exit codes
        return USAGE_ERROR if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (CliError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
