"""Command-line entry point.

Subcommands: gen-data, train, gradcheck, compare, ablate, report. Exit 0 on
success, 1 with a one-line diagnostic on invalid config or runtime failure,
2 on unknown subcommands or flags (argparse). gradcheck exits nonzero when
any gradient entry is out of tolerance.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import artifact, plots
from .baselines import init_moe_ffn, init_multihead, train_moe_ffn, train_multihead
from .config import ConfigError, ExperimentConfig, load_config
from .data import build_corpus
from .experiments import _seed_streams, run_ablation_schedule, run_comparison
from .losses import gradient_check_suite
from .metrics import fit_convergence_rate
from .model import init_model
from .signals import build_dictionary
from .training import train

OUT_ENV_VAR = "MOT_LAB_OUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mot-lab", description=__doc__)
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed list with one seed")
    parser.add_argument("--out", help=f"output directory (default ${OUT_ENV_VAR} or config out_dir)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="materialize the dictionary and corpus")
    train_p = sub.add_parser("train", help="train one architecture")
    train_p.add_argument("--arch", choices=["mot", "multihead", "moe-ffn"], default="mot")
    gradcheck_p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gradcheck_p.add_argument("--instances", type=int, default=20)
    sub.add_parser("compare", help="three-architecture comparison over the seed ladder")
    ablate_p = sub.add_parser("ablate", help="stage-boundary (t1, t2) grid")
    ablate_p.add_argument("--t1-grid", required=True, help="comma-separated t1 values")
    ablate_p.add_argument("--t2-grid", required=True, help="comma-separated t2 values")
    report_p = sub.add_parser("report", help="render reports from stored trajectories")
    report_p.add_argument("--run-dir", required=True, help="seed directory holding trajectory CSVs")
    return parser


def _load_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.seeds = [args.seed]
    out = args.out or os.environ.get(OUT_ENV_VAR)
    if out:
        config.out_dir = out
    return config


def _cmd_gen_data(config: ExperimentConfig, quiet: bool) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seeds[0]
    streams = _seed_streams(seed)
    dictionary = build_dictionary(config.dim, config.num_classes, streams["dict"])
    corpus = build_corpus(
        dictionary, config.num_tokens, config.noise_std, config.samples_per_type, streams["corpus"]
    )
    corpus.seed = seed
    artifact.write_json(out / "corpus.json", artifact.corpus_to_jsonable(corpus))
    counts = np.bincount(corpus.class_indices, minlength=config.num_classes)
    summary = [
        f"samples: {len(corpus)}",
        f"mixture types: {4 * config.num_classes * (config.num_classes - 1)}",
        f"samples per type: {config.samples_per_type}",
        f"classes: {config.num_classes}  dim: {config.dim}  tokens: {config.num_tokens}",
        f"noise_std: {config.noise_std}",
        f"seed: {seed}",
        "per-class counts: " + ", ".join(f"{n}:{c}" for n, c in enumerate(counts)),
    ]
    (out / "corpus_summary.txt").write_text("\n".join(summary) + "\n")
    if not quiet:
        print("\n".join(summary))
        print(f"wrote {out / 'corpus.json'}")
    return 0


def _cmd_train(config: ExperimentConfig, arch: str, quiet: bool) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seeds[0]
    streams = _seed_streams(seed)
    sched = config.schedule()
    dictionary = build_dictionary(config.dim, config.num_classes, streams["dict"])
    corpus = build_corpus(
        dictionary, config.num_tokens, config.noise_std, config.samples_per_type, streams["corpus"]
    )
    if arch == "mot":
        model = init_model(config.dim, config.num_experts, config.init_std, streams["mot_init"])
        result = train(model, corpus, sched, streams["mot_noise"])
        for epoch, state in result.checkpoints.items():
            artifact.write_json(out / f"mot_checkpoint_t{epoch}.json", artifact.model_to_jsonable(state))
        csv_path = out / "mot.csv"
    elif arch == "multihead":
        params = init_multihead(config.dim, config.num_heads, config.init_std, streams["mh_init"])
        result = train_multihead(params, corpus, sched)
        csv_path = out / "multihead.csv"
    else:
        params = init_moe_ffn(config.dim, config.num_experts, config.init_std, streams["moe_init"])
        result = train_moe_ffn(params, corpus, sched, streams["moe_noise"])
        csv_path = out / "moe_ffn.csv"
    artifact.write_trajectory_csv(csv_path, result.records)
    if not quiet:
        print(f"{arch}: {len(result.records)} epochs, final loss {result.final_expert_loss:.6f}")
        print(f"wrote {csv_path}")
    return 0


def _cmd_gradcheck(instances: int, seed: int | None, quiet: bool) -> int:
    results = gradient_check_suite(num_instances=instances, seed=seed if seed is not None else 0)
    worst = 0.0
    all_ok = True
    for r in results:
        worst = max(worst, r.max_rel_theta, r.max_rel_w, r.max_rel_wkq)
        all_ok = all_ok and r.passed
        if not quiet:
            d, L, m, k = r.dims
            print(
                f"instance {r.instance:2d} (d={d} L={L} M={m} K={k}): "
                f"theta {r.max_rel_theta:.2e}  w {r.max_rel_w:.2e}  wkq {r.max_rel_wkq:.2e}  "
                f"{'ok' if r.passed else 'FAIL'}"
            )
    if all_ok:
        print(f"PASS max_rel_err <= 1e-5 over {len(results)} instances (worst {worst:.2e})")
        return 0
    print(f"FAIL gradient mismatch (worst relative error {worst:.2e})")
    return 1


def _cmd_report(run_dir: str, out_dir: str, quiet: bool) -> int:
    run = Path(run_dir)
    expected = [run / "mot.csv", run / "multihead.csv", run / "moe_ffn.csv"]
    for f in expected:
        if not f.exists():
            print(f"error: missing trajectory file: {f}", file=sys.stderr)
            return 1
    out = Path(out_dir) if out_dir else run
    out.mkdir(parents=True, exist_ok=True)
    series = {}
    fits = []
    for f in expected:
        records = artifact.read_trajectory_csv(f)
        name = f.stem
        series[name] = ([r.epoch for r in records], [r.expert_loss for r in records])
        stage3 = [r.epoch for r in records if r.stage == "III"]
        if stage3:
            try:
                fit = fit_convergence_rate(records, (min(stage3), max(stage3)))
                fits.append((name, fit.slope, fit.r_squared))
            except ValueError:
                fits.append((name, float("nan"), float("nan")))
    plots.line_chart(
        out / "report_loss_curves.svg", series,
        title="training loss", x_label="epoch", y_label="loss", log_y=True,
    )
    lines = ["arch,stage3_slope,stage3_r2"]
    for name, slope, r2 in fits:
        lines.append(f"{name},{artifact.fmt_float(slope)},{artifact.fmt_float(r2)}")
    (out / "report_rates.csv").write_text("\n".join(lines) + "\n")
    if not quiet:
        for name, slope, r2 in fits:
            print(f"{name}: stage-III slope {slope:.5f}, R^2 {r2:.4f}")
        print(f"wrote {out / 'report_loss_curves.svg'} and {out / 'report_rates.csv'}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return _cmd_gradcheck(args.instances, args.seed, args.quiet)
        config = _load_config(args)
        if args.command == "gen-data":
            return _cmd_gen_data(config, args.quiet)
        if args.command == "train":
            return _cmd_train(config, args.arch, args.quiet)
        if args.command == "compare":
            bundle = run_comparison(config)
            if not args.quiet:
                for name, (hits, total) in bundle.pass_rates().items():
                    print(f"{name}: {hits}/{total}")
                print(f"artifacts under {bundle.root}")
            failed = [o for o in bundle.outcomes if o.status != "ok"]
            if failed:
                print(f"error: {len(failed)} seed(s) failed; see seed_status.csv", file=sys.stderr)
                return 1
            return 0
        if args.command == "ablate":
            t1_grid = [int(x) for x in args.t1_grid.split(",") if x.strip()]
            t2_grid = [int(x) for x in args.t2_grid.split(",") if x.strip()]
            rows = run_ablation_schedule(config, t1_grid, t2_grid)
            if not args.quiet:
                for r in rows:
                    print(f"t1={r['t1']} t2={r['t2']} T={r['t_total']}: final loss {r['final_loss']:.6f}")
            return 0
        if args.command == "report":
            return _cmd_report(args.run_dir, args.out or "", args.quiet)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
