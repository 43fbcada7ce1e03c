"""Command-line entry point: ``pathdistill <command> --config run.json``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, dump_config, load_config, replace
from .data import DataError, dataset_from_config
from .search_space import SpaceError, build_space, count_flops, decode, encode

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathdistill", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="run configuration (JSON)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory (overrides config 'out')")
        sp.add_argument("--mode", choices=("cream", "spos"), help="override train.mode")
        return sp

    s = add("search", "train the supernet and pick a path from the board")
    s.add_argument("--resume", help="checkpoint to resume from")
    add("rank", "Kendall tau between supernet and stand-alone accuracies")
    a = add("ablate", "sweep one knob and emit a CSV table")
    a.add_argument("--knob", choices=("board.size", "board.val_subset"), required=True)
    a.add_argument("--values", required=True, help="comma separated, 'full' allowed for board.val_subset")
    a.add_argument("--seeds", default="0", help="comma separated search seeds")
    sc = add("scratch", "train one path from scratch")
    sc.add_argument("--path", required=True, help="path encoding such as 0-2-1")
    e = add("export", "print the final path encoding and its flops")
    e.add_argument("--resume", help="checkpoint to read when the run has no final record")
    add("plot-data", "write accuracy-vs-flops CSVs from the metrics log")
    return p


def _load(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.mode is not None:
        overrides["train.mode"] = args.mode
    return replace(cfg, **overrides) if overrides else cfg


def _parse_values(text):
    out = []
    for v in text.split(","):
        v = v.strip()
        out.append("full" if v == "full" else int(v))
    return out


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        space = build_space(cfg.space)
    except (ConfigError, SpaceError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from . import evaluator, metrics, trainer

    out = Path(cfg.out)
    try:
        if args.command == "export":
            final = None
            mpath = out / "metrics.jsonl"
            if mpath.exists():
                final = next((r for r in reversed(metrics.read_metrics(mpath)) if r.get("event") == "final"), None)
            if final is None:
                ds = dataset_from_config(cfg.data)
                state = trainer.load_checkpoint(args.resume or out / "checkpoint.crm", cfg)
                from .board import final_selection
                path, _ = final_selection(state.board, state.net, ds.val_x, ds.val_y)
                final = {"path": encode(path), "flops": count_flops(space, path)}
            print(f"{final['path']} {final['flops']}")
            return EXIT_OK

        if args.command == "plot-data":
            recs = metrics.read_metrics(out / "metrics.jsonl")
            n = metrics.emit_plot_data(recs, out / "plot.csv")
            last = next((r for r in reversed(recs) if r.get("event") == "step"), None)
            if last is not None:
                metrics.write_table(last["board"], out / "board.csv")
            print(f"wrote {n} rows to {out / 'plot.csv'}")
            return EXIT_OK

        ds = dataset_from_config(cfg.data)
        trainer.check_compatible(space, ds)
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "search":
            dump_config(cfg, out / "config.json")
            res = trainer.run_search(cfg, ds, out_dir=out, resume=args.resume)
            print(f"{encode(res.final_path)} {count_flops(space, res.final_path)}")
        elif args.command == "rank":
            rep = evaluator.rank_experiment(cfg, ds)
            metrics.write_table(rep.rows(), out / "rank.csv")
            with open(out / "rank.jsonl", "a") as fh:
                fh.write(json.dumps({"seed": rep.seed, "tau": rep.tau,
                                     "mean_supernet_acc": rep.mean_supernet_acc}) + "\n")
            print(f"kendall_tau {rep.tau:.4f}")
        elif args.command == "ablate":
            seeds = [int(s) for s in args.seeds.split(",")]
            rows = evaluator.ablation_driver(cfg, args.knob, _parse_values(args.values), ds, seeds)
            metrics.write_table(rows, out / "ablation.csv")
            for r in rows:
                print(f"{r[args.knob]} tau={r['tau']:.4f} runtime={r['runtime_s']:.1f}s")
        elif args.command == "scratch":
            path = decode(args.path, space)
            accs = [evaluator.train_from_scratch(space, path, ds, cfg.eval.scratch, s) for s in cfg.eval.scratch.seeds]
            print(" ".join(f"{a:.4f}" for a in accs))
    except (ConfigError, SpaceError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
