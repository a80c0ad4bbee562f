"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 compute error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .attacks import evaluate
from .circuits import CATALOG_IDS
from .classical import load_checkpoint, save_checkpoint
from .data import subset
from .errors import ArgumentError, CatalogLookupError, ConfigError, IngestionError, QunnError
from .metrics import DEFAULT_BINS, DEFAULT_PAIRS, DEFAULT_SAMPLES
from .render import render_curves

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_COMPUTE = 0, 2, 3, 4

log = logging.getLogger("qunnbench")


def _ids(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated ansatz ids") from None


def _config(args) -> ex.ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ex.load_config(args.config)
    if args.desk:
        cfg = cfg.with_desk()
    if args.seed is not None:
        cfg.base_seed = args.seed
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_metrics(args) -> int:
    seed = args.seed if args.seed is not None else 0
    text = ex.metrics_report(args.ids, seed, args.pairs, args.bins, args.samples)
    out = _out(args, "results/metrics")
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    model, test, seed = ex.train_run(cfg, args.run)
    out = _out(args, cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"checkpoint-{cfg.backend_name}-seed{seed}.json"
    save_checkpoint(path, model, cfg.train_config(seed), seed)
    acc = evaluate(model, test.images, test.labels)
    print(f"{path}\tclean_acc={acc:.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _config(args)
    model, _, seed = load_checkpoint(args.checkpoint)
    seed = cfg.base_seed if seed is None else seed
    _, test_ds = ex.load_datasets(cfg)
    test = subset(test_ds, cfg.n_test, [seed, ex.STREAM_TEST_SUBSET])
    rows = [("clean", 0.0, evaluate(model, test.images, test.labels))]
    for sweep in cfg.sweeps():
        for eps in sweep.epsilons:
            rows.append((sweep.method, eps, evaluate(model, test.images, test.labels, sweep.attack(eps))))
    text = "method,epsilon,accuracy\n" + "".join(f"{m},{e:g},{a:.6f}\n" for m, e, a in rows)
    out = _out(args, cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "attack.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _finish(result, out: Path, title: str) -> int:
    render_curves(result, out, title=title)
    sys.stdout.write(result.results_csv())
    if result.agm:
        sys.stdout.write(result.agm_csv())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg.output_dir)
    result = ex.run_experiment(cfg, out, args.workers, args.cache)
    return _finish(result, out, cfg.label)


def _recipe_configs(args, name):
    configs = ex.recipe(name, args.dataset, args.desk, args.seed or 0)
    return configs


def cmd_recipe(args) -> int:
    configs = _recipe_configs(args, args.name)
    if args.dry_run:
        print(json.dumps([c.to_dict() for c in configs], indent=1))
        return EXIT_OK
    out = _out(args, f"results/{args.name}")
    result = ex.run_experiments(configs, out, args.workers, args.cache)
    return _finish(result, out, args.name)


def cmd_agm(args) -> int:
    configs = _recipe_configs(args, "agm")
    out = _out(args, "results/agm")
    result = ex.run_experiments(configs, out, args.workers, args.cache)
    sys.stdout.write(result.agm_csv())
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        text = Path(args.csv).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.csv}: {exc}") from None
    out = _out(args, str(Path(args.csv).parent))
    csv_path, svg_path = render_curves(text, out, args.stem, args.title)
    print(svg_path or csv_path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="base seed override")
    common.add_argument("--desk", action="store_true", help="200 train / 200 test, 10 epochs, 3 runs")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, default=1, help="process pool size over runs")
    common.add_argument("--cache", default=None, help="feature cache directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qunnbench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("metrics", parents=[common], help="expressibility / entanglement table")
    m.add_argument("--ids", type=_ids, default=list(CATALOG_IDS), help="comma-separated ansatz ids")
    m.add_argument("--pairs", type=int, default=DEFAULT_PAIRS, help="fidelity pairs (>= 1000)")
    m.add_argument("--bins", type=int, default=DEFAULT_BINS, help="histogram bins")
    m.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="entanglement samples")
    m.set_defaults(func=cmd_metrics)

    t = sub.add_parser("train", parents=[common], help="train one model and write a checkpoint")
    t.add_argument("--run", type=int, default=0, help="run index (seed = base seed + run)")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", parents=[common], help="attack a checkpoint with the config's sweeps")
    a.add_argument("--checkpoint", required=True)
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep", parents=[common], help="multi-seed sweep of one config")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("recipe", parents=[common], help="run a named study")
    r.add_argument("name", choices=ex.RECIPES)
    r.add_argument("--dataset", default="mnist", choices=["mnist", "fmnist"])
    r.add_argument("--dry-run", action="store_true", help="print the configs only")
    r.set_defaults(func=cmd_recipe)

    g = sub.add_parser("agm", parents=[common], help="average gradient magnitude table")
    g.add_argument("--dataset", default="mnist", choices=["mnist", "fmnist"])
    g.set_defaults(func=cmd_agm)

    v = sub.add_parser("render", parents=[common], help="re-render curves from a results CSV")
    v.add_argument("csv")
    v.add_argument("--stem", default="curves")
    v.add_argument("--title", default="")
    v.set_defaults(func=cmd_render)
    return p


def _report(code: int, exc: BaseException) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.workers < 1:
        return _report(EXIT_CONFIG, ArgumentError("--workers must be >= 1"))
    try:
        return args.func(args)
    except (ConfigError, CatalogLookupError, ArgumentError) as exc:
        return _report(EXIT_CONFIG, exc)
    except (IngestionError, FileNotFoundError) as exc:
        return _report(EXIT_DATA, exc)
    except (QunnError, ArithmeticError, MemoryError) as exc:
        return _report(EXIT_COMPUTE, exc)


if __name__ == "__main__":
    sys.exit(main())
