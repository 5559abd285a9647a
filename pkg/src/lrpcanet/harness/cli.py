"""Command-line entry point: ``lrpcanet <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..model import count_parameters
from ..nn import GradCheckError, NonFiniteGradient, ShapeError
from ..rpca import RPCAError
from ..scenes import DatasetError, PlacementError, read_gray, save_dataset, synthetic_dataset
from .ablation import GRIDS, ablation_grid
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, apply_pairs, read_config_file
from .diagnostics import run_gradcheck
from .evaluation import decompose, evaluate, evaluate_baseline, robustness_sweep
from .rawio import RawFormatError
from .training import NumericalError, build_datasets, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("lrpcanet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="lrpcanet", description="Unfolded low-rank + sparse infrared target detector.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt")

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes eval.csv")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("decompose", help="dump per-stage B/T/N/D maps")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--image", help="grayscale PNG")
    g.add_argument("--index", type=int, help="index into the evaluation split")

    p = sub.add_parser("sweep", help="noise robustness sweep; writes sweep_<protocol>.csv")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=("gaussian", "salt_pepper"), required=True)
    p.add_argument("--levels", type=float, nargs="+", help="override the default noise grid")

    p = sub.add_parser("synth", help="write a synthetic dataset (images/ and masks/)")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("baseline", help="classical low-rank + sparse baseline; writes baseline.csv")
    _common(p)

    p = sub.add_parser("ablate", help="enumerate (or train and score) an ablation grid")
    _common(p)
    p.add_argument("--grid", choices=GRIDS, required=True)
    p.add_argument("--run", action="store_true", help="train and evaluate every entry")
    return parser


def resolve_config(args, mode):
    cfg = RunConfig(mode=mode)
    pairs = {}
    if args.config:
        try:
            pairs.update(read_config_file(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    pairs["mode"] = mode
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    if args.out is not None:
        pairs["out"] = args.out
    return apply_pairs(cfg, pairs)


def _eval_samples(cfg):
    train_set, val_set = build_datasets(cfg)
    return train_set + val_set if cfg.eval_split == "all" else val_set


def _load_model(path):
    return load_checkpoint(path).build_model()


def _summary_line(name, s):
    # Fa is shown in units of 1e-5, as is customary for this metric
    return (f"{name}: miou={s.miou:.4f} f1={s.f1:.4f} pd={s.pd:.4f} "
            f"fa={s.fa * 1e5:.3f}e-5 auc={s.auc:.4f}")


def cmd_train(args, cfg):
    res = train(cfg, resume=args.resume)
    rows = res.train_rows
    print(f"trained {len(rows)} epochs; last total loss {rows[-1][3] if rows else 'n/a'}; "
          f"artifacts in {res.output_dir}")


def cmd_eval(args, cfg):
    model = _load_model(args.checkpoint)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev = evaluate(model, _eval_samples(cfg), cfg.loss.binarize_threshold, cfg.batch_size, out / "eval.csv")
    print(_summary_line("model", ev.summary))


def cmd_decompose(args, cfg):
    model = _load_model(args.checkpoint)
    if args.image:
        try:
            image = read_gray(args.image)
        except OSError as exc:
            raise DatasetError(f"cannot read image: {exc}") from exc
    else:
        samples = _eval_samples(cfg)
        if not 0 <= args.index < len(samples):
            raise UsageError(f"--index must lie in [0, {len(samples) - 1}]")
        image = samples[args.index].image
    rows = decompose(model, image, cfg.output_dir)
    print(f"wrote {len(rows)} map pairs and manifest.csv to {cfg.output_dir}")


def cmd_sweep(args, cfg):
    model = _load_model(args.checkpoint)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = robustness_sweep(model, _eval_samples(cfg), args.protocol, args.levels, cfg.seed,
                            cfg.loss.binarize_threshold, out / f"sweep_{args.protocol}.csv")
    for r in rows:
        print(f"{r[0]} level={r[1]:g} miou={r[2]:.4f} f1={r[3]:.4f} pd={r[4]:.4f} fa={r[5] * 1e5:.3f}e-5 auc={r[6]:.4f}")


def cmd_synth(args, cfg):
    samples = synthetic_dataset(cfg.n_scenes, cfg.scene, cfg.seed, cfg.target_count_range)
    save_dataset(samples, cfg.output_dir)
    print(f"wrote {len(samples)} scenes to {cfg.output_dir}")


def cmd_gradcheck(args, cfg):
    results = run_gradcheck(cfg.seed, tolerance=args.tolerance)
    failed = False
    for name, r in results:
        ok = r.passed(args.tolerance)
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:20s} max_rel_error={r.max_rel_error:.3e} ({r.worst})")
    if failed:
        raise GradCheckError(f"gradient check exceeded tolerance {args.tolerance}")


def cmd_baseline(args, cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev = evaluate_baseline(_eval_samples(cfg), cfg.loss.binarize_threshold, csv_path=out / "baseline.csv")
    print(_summary_line("baseline", ev.summary))


def cmd_ablate(args, cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = ablation_grid(args.grid, cfg.model, cfg.loss)
    columns = ["grid", "label", "K", "BC", "C", "se_flags", "eta", "parameters"]
    if args.run:
        columns += ["miou", "f1", "pd", "fa", "auc"]
        datasets = build_datasets(cfg)
    rows = []
    for e in entries:
        row = [e.grid, e.label, e.model.K, e.model.BC, e.model.C,
               "".join("1" if f else "0" for f in e.model.se_enabled), e.loss.eta, count_parameters(e.model)]
        if args.run:
            run_cfg = replace(cfg, model=e.model, loss=e.loss,
                              output_dir=str(out / e.label.replace("=", "").replace(",", "_").replace("+", "_")))
            res = train(run_cfg, datasets=datasets)
            s = evaluate(res.model, datasets[1], cfg.loss.binarize_threshold).summary
            row += [repr(s.miou), repr(s.f1), repr(s.pd), repr(s.fa), repr(s.auc)]
        rows.append(row)
        print(" ".join(str(v) for v in row))
    with open(out / f"ablation_{args.grid}.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "decompose": cmd_decompose, "sweep": cmd_sweep,
    "synth": cmd_synth, "gradcheck": cmd_gradcheck, "baseline": cmd_baseline, "ablate": cmd_ablate,
}
# ablate has no RunConfig mode of its own; it trains like train
_MODE = {"ablate": "train"}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args, _MODE.get(args.command, args.command))
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, PlacementError, CheckpointError, RawFormatError, ShapeError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, NonFiniteGradient, GradCheckError, RPCAError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
