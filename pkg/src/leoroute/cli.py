"""Command line: validate, train, run, plot, bench.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure, 3 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import POLICY_NAMES, validate_config
from .errors import DivergenceError, LeoRouteError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIVERGENCE = 0, 1, 2, 3
MANIFEST = "manifest.json"

log = logging.getLogger("leoroute")


def _load(args):
    cfg, diags = validate_config(args.config)
    if cfg is None:
        for d in diags:
            print(f"{args.config}: {d}", file=sys.stderr)
        return None
    if getattr(args, "policies", None):
        pols = [p.strip() for p in args.policies.split(",") if p.strip()]
        bad = [p for p in pols if p not in POLICY_NAMES]
        if bad or not pols:
            print(f"--policies: unknown or empty selection {bad or pols}", file=sys.stderr)
            return None
        cfg.tree["policies"] = pols
    if getattr(args, "seed", None) is not None:
        cfg.tree["seeds"] = [args.seed]
    return cfg


def _out_dir(args, cfg):
    return Path(args.out if args.out else cfg.path(cfg["output"]))


def cmd_validate(args):
    cfg = _load(args)
    if cfg is None:
        return EXIT_CONFIG
    echo = cfg.echo()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved.yaml").write_text(echo)
    else:
        sys.stdout.write(echo)
    print(f"ok: config hash {cfg.hash}", file=sys.stderr)
    return EXIT_OK


def _save_models(models, out, seed, cfg_hash):
    from .learning.nets import save_mlp

    for name, (net, res) in models.items():
        save_mlp(net, out / f"{name}-seed{seed}.qnet", seed=seed, step=res.steps if res else 0,
                 extra={"config_hash": cfg_hash, "policy": name})
        if res is not None:
            (out / f"{name}-seed{seed}-curve.csv").write_text(res.curve_csv())


def cmd_train(args):
    from .learning.nets import save_mlp
    from .simcore import train_models

    cfg = _load(args)
    if cfg is None:
        return EXIT_CONFIG
    names = [p for p in cfg.policies if p != "dijkstra"]
    if not names:
        print("train: select madrl and/or sarsa", file=sys.stderr)
        return EXIT_CONFIG
    out = _out_dir(args, cfg) / "models"
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        try:
            models = train_models(cfg, seed, names)
        except DivergenceError as err:
            ck = getattr(err, "checkpoint", None)
            if ck is not None:
                save_mlp(ck, out / f"checkpoint-seed{seed}.qnet", seed=seed, extra={"config_hash": cfg.hash})
            print(f"train: diverged: {err}", file=sys.stderr)
            return EXIT_DIVERGENCE
        _save_models(models, out, seed, cfg.hash)
        print(f"trained {', '.join(names)} for seed {seed} -> {out}", file=sys.stderr)
    return EXIT_OK


def _seed_job(config_path, tree, seed, model_dir):
    """One seed: train learned policies, run every level and policy, sweep intervals."""
    from .config import ExperimentConfig
    from .simcore import interval_sweep, run_experiment, train_models

    cfg = ExperimentConfig(tree, Path(config_path).parent)
    learned = [p for p in cfg.policies if p != "dijkstra"]
    models = train_models(cfg, seed, learned) if learned else {}
    if model_dir is not None and models:
        _save_models(models, Path(model_dir), seed, cfg.hash)
    results, _ = run_experiment(cfg, {seed: models}, seeds=[seed])
    runs = []
    for k, r in enumerate(results):
        level_idx = cfg.levels.index(r.level_bps)
        runs.append({"name": f"{r.policy}-seed{seed}-level{level_idx}.csv", "csv": r.csv(), "summary": r.summary})
    sweep = []
    if "dijkstra" in cfg.policies and cfg["dijkstra"]["sweep_intervals_s"]:
        sweep = interval_sweep(cfg, cfg["dijkstra"]["sweep_intervals_s"], seeds=[seed])
    return runs, sweep


def cmd_run(args):
    from .plots import make_plots
    from .simcore import summary_csv

    cfg = _load(args)
    if cfg is None:
        return EXIT_CONFIG
    out = _out_dir(args, cfg)
    manifest_path = out / MANIFEST
    if manifest_path.exists() and not args.force:
        old = json.loads(manifest_path.read_text())
        print(f"run: {out} already holds results for config {old.get('config_hash')}; use --force to overwrite",
              file=sys.stderr)
        return EXIT_RUNTIME
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)
    (out / "resolved.yaml").write_text(cfg.echo())
    workers = args.workers or os.cpu_count() or 1
    jobs = {}
    statuses = {}
    rows, sweep_rows = [], []
    manifest = {"config_hash": cfg.hash, "seeds": cfg.seeds, "policies": cfg.policies, "levels_bps": cfg.levels,
                "runs": [], "failures": []}
    t0 = time.time()
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cfg.seeds))) as pool:
            for seed in cfg.seeds:
                jobs[seed] = pool.submit(_seed_job, args.config, cfg.tree, seed, out / "models")
            for seed in cfg.seeds:
                try:
                    statuses[seed] = jobs[seed].result()
                except Exception as err:  # noqa: BLE001 - recorded in the manifest
                    statuses[seed] = err
    else:
        for seed in cfg.seeds:
            try:
                statuses[seed] = _seed_job(args.config, cfg.tree, seed, out / "models")
            except Exception as err:  # noqa: BLE001
                statuses[seed] = err
    diverged = False
    for seed in cfg.seeds:
        st = statuses[seed]
        if isinstance(st, Exception):
            diverged |= isinstance(st, DivergenceError)
            manifest["failures"].append({"seed": seed, "error": f"{type(st).__name__}: {st}"})
            log.error("seed %s failed: %s", seed, "".join(traceback.format_exception_only(type(st), st)).strip())
            continue
        runs, sweep = st
        for r in runs:
            (out / "runs" / r["name"]).write_text(r["csv"])
            rows.append(r["summary"])
            manifest["runs"].append({"file": f"runs/{r['name']}", "policy": r["summary"]["policy"], "seed": seed,
                                     "level_bps": r["summary"]["level_bps"], "status": "ok"})
        sweep_rows.extend(sweep)
    (out / "summary.csv").write_text(summary_csv(rows))
    if sweep_rows:
        (out / "sweep.csv").write_text(summary_csv(sweep_rows))
    manifest["wallclock_s"] = round(time.time() - t0, 3)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if rows:
        make_plots(out)
    print(f"run: {len(manifest['runs'])} runs, {len(manifest['failures'])} failed -> {out}", file=sys.stderr)
    if manifest["failures"]:
        return EXIT_DIVERGENCE if diverged else EXIT_RUNTIME
    return EXIT_OK


def cmd_plot(args):
    from .plots import make_plots

    out = Path(args.out)
    if not (out / "summary.csv").exists():
        print(f"plot: {out}/summary.csv not found", file=sys.stderr)
        return EXIT_RUNTIME
    for p in make_plots(out):
        print(p)
    return EXIT_OK


def cmd_bench(args):
    """Per-decision inference cost: modeled (FLOPs / onboard rate) and measured on this host."""
    from .learning.nets import MLP, load_mlp
    from .learning.state import N_ACTIONS, STATE_DIM

    cfg = _load(args)
    if cfg is None:
        return EXIT_CONFIG
    m = cfg["madrl"]
    net = load_mlp(cfg.path(m["model"]))[0] if m["model"] else MLP((STATE_DIM, *m["hidden"], N_ACTIONS), seed=0)
    x = np.random.default_rng(0).uniform(-1, 1, STATE_DIM)
    n = args.repeat
    t0 = time.perf_counter()
    for _ in range(n):
        net(x)
    measured = (time.perf_counter() - t0) / n
    modeled = net.flops() / cfg["cost"]["onboard_flops_per_s"]
    print(f"flops_per_decision,{net.flops()}")
    print(f"modeled_s,{modeled!r}")
    print(f"measured_host_s,{measured!r}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="leoroute", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="experiment YAML")
        sp.add_argument("--out", help="output directory (default: config 'output')")

    sp = sub.add_parser("validate", help="check a config and print the resolved echo")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("train", help="train learned policies and save models + curves")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--policies", help="comma list among madrl,sarsa")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("run", help="run the configured study")
    common(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--policies", help="comma list among dijkstra,sarsa,madrl")
    sp.add_argument("--force", action="store_true", help="overwrite an existing output directory")
    sp.add_argument("--workers", type=int, default=None, help="parallel seeds (default: CPU count)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("plot", help="rebuild figures from an output directory's CSVs")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("bench", help="inference cost micro-benchmark")
    common(sp)
    sp.add_argument("--repeat", type=int, default=2000)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except LeoRouteError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
