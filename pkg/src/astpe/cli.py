"""Command-line entry point: train, eval, inspect-pe, count-params, gen-data.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import features
from . import numerics as nx
from . import synthdata as sd
from .config import ConfigError, RunConfig
from .evaluation import (NoPositionTableError, accuracy, mean_average_precision, pe_similarity,
                         write_matrix_csv)
from .posenc import PEVariant
from .training import Checkpoint, config_hash, fit, read_checkpoint, write_checkpoint
from .transformer import AudioSpectrogramTransformer, count_params

log = logging.getLogger("astpe")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- data


def load_data(cfg: RunConfig, run_dir: Path | None = None):
    """(train, eval) datasets plus metadata; corpus stats are fitted on train folds."""
    if cfg.corpus:
        corpus = sd.load_corpus(cfg.corpus)
        folds = corpus.folds
        eval_fold = cfg.eval_fold or int(folds.max())
        if eval_fold not in set(folds.tolist()):
            raise sd.CorpusError(f"eval_fold {eval_fold} not in corpus folds {sorted(set(folds))}")
        train_idx = np.flatnonzero(folds != eval_fold)
        log_mels = corpus.log_mels(cfg.layout.n_mels)
        stats = features.fit_stats([log_mels[i] for i in train_idx])
        ds = corpus.to_dataset(cfg.layout, stats)
        meta = {"stats": [stats.min, stats.max], "classes": corpus.class_names, "eval_fold": eval_fold}
        return ds.subset(train_idx), ds.subset(np.flatnonzero(folds == eval_fold)), meta
    layout = cfg.layout
    train = sd.generate(sd.SynthTask(cfg.task, layout, cfg.n_train, cfg.noise,
                                     n_classes=cfg.n_classes or None, seed=2 * cfg.data_seed))
    test = sd.generate(sd.SynthTask(cfg.task, layout, cfg.n_test, cfg.noise,
                                    n_classes=cfg.n_classes or None, seed=2 * cfg.data_seed + 1))
    return train, test, {}


def score(model: AudioSpectrogramTransformer, ds: sd.Dataset, layout) -> tuple[str, float]:
    probs = model.predict(ds.patches(layout))
    if ds.multilabel:
        return "mAP", mean_average_precision(probs, ds.y).value
    return "accuracy", accuracy(probs, ds.y)


def build_model(cfg: RunConfig, train: sd.Dataset, params=None) -> AudioSpectrogramTransformer:
    mcfg = cfg.model_config(train.n_classes, train.multilabel)
    return AudioSpectrogramTransformer(mcfg, params, seed=cfg.seed, dtype=np.float32)


# ---------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    text = cfg.dumps()
    digest = config_hash(text)
    (out / "config.txt").write_text(text)

    train, test, meta = load_data(cfg)
    model = build_model(cfg, train)
    tcfg = cfg.train_config(train.multilabel)
    layout = cfg.layout
    x_train = train.patches(layout)
    saved = []

    def save(ckpt: Checkpoint):
        path = out / "checkpoints" / f"step_{ckpt.step:07d}.ckpt"
        write_checkpoint(path, ckpt)
        saved.append(path.name)

    result = fit(model, x_train, train.y, tcfg, evaluate=lambda m: score(m, test, layout)[1],
                 on_checkpoint=save, config_digest=digest)
    write_checkpoint(out / "swa.ckpt", result.swa)
    swa_model = build_model(cfg, train, read_checkpoint(out / "swa.ckpt").to_params())
    metric, value = score(swa_model, test, layout)

    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "lr", metric])
        for row in result.history:
            m = "" if row["metric"] is None else repr(row["metric"])
            w.writerow([row["step"], repr(row["loss"]), repr(row["lr"]), m])
    with open(out / "final_metrics.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([["metric", "value"], [metric, repr(value)]])
    run = {"config_hash": digest, "metric": metric, "value": value, "checkpoints": saved,
           "swa": "swa.ckpt", "swa_of": saved[-min(tcfg.swa_count, len(saved)):],
           "n_classes": train.n_classes, "multilabel": train.multilabel, **meta}
    (out / "run.json").write_text(json.dumps(run, indent=2))
    print(f"{metric} {value:.6f} (SWA of {len(run['swa_of'])} checkpoints) -> {out}")
    return out


def _load_run(run_dir: Path) -> tuple[RunConfig, dict]:
    cfg_path = run_dir / "config.txt"
    if not cfg_path.exists():
        raise FileNotFoundError(f"no config.txt in run directory {run_dir}")
    cfg = RunConfig.read(cfg_path)
    run = json.loads((run_dir / "run.json").read_text()) if (run_dir / "run.json").exists() else {}
    if run.get("config_hash") and run["config_hash"] != config_hash(cfg_path.read_text()):
        print(f"warning: {cfg_path} does not match the config hash recorded at training time",
              file=sys.stderr)
    return cfg, run


def _resolve_checkpoint(args) -> tuple[Path, Path]:
    run_dir = Path(args.run) if args.run else None
    ckpt = Path(args.checkpoint) if args.checkpoint else None
    if run_dir is None and ckpt is not None:
        run_dir = ckpt.parent if (ckpt.parent / "config.txt").exists() else ckpt.parent.parent
    if run_dir is None:
        raise UsageError("give --run DIR or --checkpoint FILE")
    return run_dir, ckpt or run_dir / "swa.ckpt"


def cmd_eval(run_dir: Path, ckpt_path: Path, out: Path | None = None) -> tuple[str, float]:
    cfg, run = _load_run(run_dir)
    ckpt = read_checkpoint(ckpt_path)
    train, test, _ = load_data(cfg)
    model = build_model(cfg, train, ckpt.to_params())
    metric, value = score(model, test, cfg.layout)
    out = out or run_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval_metrics.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([["checkpoint", "step", "metric", "value"],
                                  [ckpt_path.name, ckpt.step, metric, repr(value)]])
    print(f"{metric} {value:.6f} ({ckpt_path.name}, step {ckpt.step})")
    return metric, value


def cmd_inspect_pe(run_dir: Path, ckpt_path: Path, out: Path | None = None, block: int = 0) -> list[Path]:
    cfg, _ = _load_run(run_dir)
    ckpt = read_checkpoint(ckpt_path)
    out = out or run_dir
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for axis in ("time", "freq"):
        sim = pe_similarity(ckpt.tensors, cfg.layout, axis, block)
        path = out / f"similarity_{axis}.csv"
        write_matrix_csv(path, sim)
        written.append(path)
        print(f"{axis}: {sim.shape[0]}x{sim.shape[1]} -> {path}")
    return written


def cmd_count_params(cfg: RunConfig, variants=None) -> dict[str, dict[str, int]]:
    variants = variants or [cfg.pe]
    tables = {}
    for pe in variants:
        mcfg = cfg.model_config(cfg.n_classes or 2)
        mcfg = type(mcfg)(**{**{f.name: getattr(mcfg, f.name) for f in fields(mcfg)},
                             "pe": PEVariant.parse(pe)})
        tables[PEVariant.parse(pe).value] = count_params(mcfg)
    names = list(next(iter(tables.values())))
    width = max(len(n) for n in names) + 2
    print("component".ljust(width) + "".join(v.rjust(22) for v in tables))
    for n in names:
        print(n.ljust(width) + "".join(f"{t[n]:>22,}" for t in tables.values()))
    return tables


def cmd_gen_data(cfg: RunConfig, wav: bool = False) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if wav:
        path = sd.write_tone_corpus(out, cfg.layout, seed=cfg.data_seed)
        print(f"wrote WAV corpus -> {path}")
        return path
    train, test, _ = load_data(cfg)
    path = out / f"{cfg.task}.npz"
    np.savez(path, x_train=train.x, y_train=train.y, x_test=test.x, y_test=test.y)
    cfg.write(out / "config.txt")
    print(f"wrote {len(train)} train / {len(test)} test samples -> {path}")
    return path


# ---------------------------------------------------------------- parsing


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kw = {"dest": f.name, "default": None, "metavar": f.name.upper()}
        if f.name == "steps":
            p.add_argument(flag, "--total-steps", **kw)
        else:
            p.add_argument(flag, **kw)


def _config_from(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return RunConfig.resolve(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="astpe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a run directory")
    _add_config_flags(p)

    for name, helptext in (("eval", "evaluate a checkpoint of a run"),
                           ("inspect-pe", "export positional-embedding similarity CSVs")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--run", help="run directory written by train")
        p.add_argument("--checkpoint", help="checkpoint file (default: RUN/swa.ckpt)")
        p.add_argument("--out", help="output directory (default: the run directory)")
        if name == "inspect-pe":
            p.add_argument("--block", type=int, default=0, help="block whose relative tables to use")

    p = sub.add_parser("count-params", help="per-component parameter counts")
    _add_config_flags(p)
    p.add_argument("--all", action="store_true", help="tabulate all seven PE variants")

    p = sub.add_parser("gen-data", help="write a synthetic dataset (npz) or a WAV corpus")
    _add_config_flags(p)
    p.add_argument("--wav", action="store_true", help="write a WAV tone corpus with manifest.csv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cmd_train(_config_from(args))
        elif args.command == "eval":
            run_dir, ckpt = _resolve_checkpoint(args)
            cmd_eval(run_dir, ckpt, Path(args.out) if args.out else None)
        elif args.command == "inspect-pe":
            run_dir, ckpt = _resolve_checkpoint(args)
            cmd_inspect_pe(run_dir, ckpt, Path(args.out) if args.out else None, args.block)
        elif args.command == "count-params":
            cfg = _config_from(args)
            cmd_count_params(cfg, [v.value for v in PEVariant] if args.all else None)
        elif args.command == "gen-data":
            cmd_gen_data(_config_from(args), args.wav)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoPositionTableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except nx.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, features.AudioFormatError, sd.CorpusError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
