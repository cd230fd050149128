"""Canned experiment recipes: the three-architecture comparison on a shared
corpus and the stage-boundary ablation grid.

Each seed gets its own directory of artifacts (trajectories, checkpoints,
reports, plots); the bundle root carries a summary table, per-property
pass rates over the seed ladder, a checksum manifest, and the run
descriptor. A failed seed aborts only itself.
"""

from __future__ import annotations

import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifact, plots
from .baselines import init_moe_ffn, init_multihead, train_moe_ffn, train_multihead
from .config import ExperimentConfig
from .data import build_corpus
from .metrics import (
    attention_probe,
    fit_convergence_rate,
    routing_histogram,
    signal_projection_probe,
    specialization_report,
)
from .model import init_model
from .signals import build_dictionary
from .training import TrainResult, train

ROUTING_TRIALS = 50

PROPERTY_NAMES = [
    "margin_growth_3x",
    "routing_concentration",
    "attention_concentration",
    "final_loss_below_0.05",
    "stage3_log_linear_r2",
    "projection_dominance_10x",
    "rate_separation_3x",
    "loss_ordering",
    "moe_floor_2x",
]


@dataclass
class SeedOutcome:
    seed: int
    status: str  # "ok" or "failed"
    error: str = ""
    final_losses: dict = field(default_factory=dict)  # arch -> float
    slopes: dict = field(default_factory=dict)  # arch -> float
    properties: dict = field(default_factory=dict)  # name -> bool
    files: list = field(default_factory=list)


@dataclass
class ComparisonBundle:
    config: ExperimentConfig
    outcomes: list[SeedOutcome]
    root: Path

    def pass_rates(self) -> dict[str, tuple[int, int]]:
        ok = [o for o in self.outcomes if o.status == "ok"]
        return {
            name: (sum(1 for o in ok if o.properties.get(name, False)), len(ok))
            for name in PROPERTY_NAMES
        }


def _seed_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    children = np.random.SeedSequence(seed).spawn(8)
    names = ["dict", "corpus", "mot_init", "mh_init", "moe_init", "mot_noise", "moe_noise", "probe"]
    return dict(zip(names, children))


def _active_experts(counts: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.asarray(counts) > 0)


def evaluate_seed_properties(
    config: ExperimentConfig,
    mot: TrainResult,
    mh: TrainResult,
    moe: TrainResult,
    margins_epoch0: float,
    routing_mass: np.ndarray,
    routing_ratios: np.ndarray,
    probe_report,
    projections: np.ndarray,
    best_class: np.ndarray,
) -> tuple[dict[str, bool], float, float]:
    """Boolean verdicts for the theory-probe properties on one seed, plus
    the two Stage-III log-loss slopes."""
    sched = config.schedule()
    out: dict[str, bool] = {}

    margin_t1 = mot.records[sched.t1 - 1].mean_margin
    out["margin_growth_3x"] = bool(margin_t1 >= 3.0 * margins_epoch0) if margins_epoch0 > 0 else True

    out["routing_concentration"] = bool(
        np.all(routing_mass >= 0.9) and np.all(routing_ratios <= 2.0)
    )

    two_over_l = 2.0 / config.num_tokens
    active_t2 = _active_experts(mot.records[sched.t2 - 1].routed_counts)
    pvv = probe_report.p_signal_signal[active_t2]
    others = np.concatenate(
        [
            probe_report.p_signal_class[active_t2],
            probe_report.p_class_signal[active_t2],
            probe_report.p_signal_noise[active_t2],
        ]
    )
    others = others[~np.isnan(others)]
    out["attention_concentration"] = bool(
        active_t2.size > 0
        and np.all(pvv >= 0.5)
        and (others.size == 0 or np.all(others <= two_over_l))
    )

    mot_final = mot.final_expert_loss
    out["final_loss_below_0.05"] = bool(mot_final <= 0.05)

    window = (sched.t2 + 1, sched.t_total)
    try:
        mot_fit = fit_convergence_rate(mot.records, window)
        out["stage3_log_linear_r2"] = bool(mot_fit.r_squared >= 0.95)
    except ValueError:
        mot_fit = None
        out["stage3_log_linear_r2"] = False

    active_final = _active_experts(mot.records[-1].routed_counts)
    dominance = []
    num_classes = config.num_classes
    for i in active_final:
        own = projections[i, num_classes + int(best_class[i])]
        rest = np.delete(np.abs(projections[i]), num_classes + int(best_class[i]))
        dominance.append(own >= 10.0 * rest.max())
    out["projection_dominance_10x"] = bool(active_final.size > 0 and all(dominance))

    try:
        mh_fit = fit_convergence_rate(mh.records, window)
        out["rate_separation_3x"] = bool(
            mot_fit is not None and abs(mot_fit.slope) >= 3.0 * abs(mh_fit.slope)
        )
    except ValueError:
        mh_fit = None
        out["rate_separation_3x"] = False

    mh_final = mh.final_expert_loss
    moe_final = moe.final_expert_loss
    out["loss_ordering"] = bool(mot_final < mh_final < moe_final)

    quarter = max(1, sched.t_total // 4)
    moe_floor = min(r.expert_loss for r in moe.records[-quarter:])
    out["moe_floor_2x"] = bool(moe_floor >= 2.0 * mot_final)

    return out, (mot_fit.slope if mot_fit else float("nan")), (mh_fit.slope if mh_fit else float("nan"))


def run_seed(config: ExperimentConfig, seed: int, seed_dir: Path) -> SeedOutcome:
    """Train all three architectures on one shared corpus and write artifacts."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    streams = _seed_streams(seed)
    sched = config.schedule()
    outcome = SeedOutcome(seed=seed, status="ok")
    files: list[Path] = []

    dictionary = build_dictionary(config.dim, config.num_classes, streams["dict"])
    corpus = build_corpus(
        dictionary, config.num_tokens, config.noise_std, config.samples_per_type, streams["corpus"]
    )
    corpus.seed = seed
    files.append(artifact.write_json(seed_dir / "corpus.json", artifact.corpus_to_jsonable(corpus)))

    mot_model = init_model(config.dim, config.num_experts, config.init_std, streams["mot_init"])
    margins_epoch0 = float(specialization_report(mot_model, dictionary).margins.mean())
    mot = train(mot_model, corpus, sched, streams["mot_noise"])
    files.append(artifact.write_trajectory_csv(seed_dir / "mot.csv", mot.records))
    for epoch, state in mot.checkpoints.items():
        files.append(
            artifact.write_json(
                seed_dir / f"mot_checkpoint_t{epoch}.json", artifact.model_to_jsonable(state)
            )
        )

    mh_params = init_multihead(config.dim, config.num_heads, config.init_std, streams["mh_init"])
    mh = train_multihead(mh_params, corpus, sched)
    files.append(artifact.write_trajectory_csv(seed_dir / "multihead.csv", mh.records))

    moe_params = init_moe_ffn(config.dim, config.num_experts, config.init_std, streams["moe_init"])
    moe = train_moe_ffn(moe_params, corpus, sched, streams["moe_noise"])
    files.append(artifact.write_trajectory_csv(seed_dir / "moe_ffn.csv", moe.records))

    probe_corpus = build_corpus(
        dictionary, config.num_tokens, config.noise_std, config.samples_per_type, streams["probe"]
    )

    # Stage-I probes on the t1 checkpoint
    t1_state = mot.checkpoints[sched.t1]
    rep_t1 = specialization_report(t1_state, dictionary)
    hist = routing_histogram(
        t1_state, corpus, ROUTING_TRIALS, streams["probe"].spawn(1)[0],
        noise_scale=sched.noise_scale_by_stage[0],
    )
    mass = np.zeros(config.num_classes)
    ratios = np.zeros(config.num_classes)
    for n in range(config.num_classes):
        own = rep_t1.sets[n]
        if own:
            mass[n] = hist[n, own].sum()
            ratios[n] = hist[n, own].max() / max(hist[n, own].min(), 1e-300)
        else:
            mass[n] = 0.0
            ratios[n] = np.inf

    # Stage-II probe on the t2 checkpoint, held-out corpus
    t2_state = mot.checkpoints[sched.t2]
    probe_rep = attention_probe(t2_state, dictionary, probe_corpus)

    final_rep = specialization_report(mot.model, dictionary)
    projections = signal_projection_probe(mot.model, dictionary)

    lines = ["class," + ",".join(f"expert_{i}" for i in range(config.num_experts))]
    for n in range(config.num_classes):
        lines.append(f"{n}," + ",".join(artifact.fmt_float(v) for v in hist[n]))
    (seed_dir / "routing_histogram.csv").write_text("\n".join(lines) + "\n")
    files.append(seed_dir / "routing_histogram.csv")

    lines = ["expert,best_class,margin," + ",".join(
        [f"proj_c{n}" for n in range(config.num_classes)]
        + [f"proj_v{n}" for n in range(config.num_classes)]
    )]
    for i in range(config.num_experts):
        row = [str(i), str(int(final_rep.best_class[i])), artifact.fmt_float(final_rep.margins[i])]
        row += [artifact.fmt_float(v) for v in projections[i]]
        lines.append(",".join(row))
    (seed_dir / "specialization.csv").write_text("\n".join(lines) + "\n")
    files.append(seed_dir / "specialization.csv")

    lines = ["expert,best_class,p_signal_signal,p_signal_class,p_class_signal,p_signal_noise"]
    for i in range(config.num_experts):
        lines.append(
            ",".join(
                [
                    str(i),
                    str(int(probe_rep.best_class[i])),
                    artifact.fmt_float(probe_rep.p_signal_signal[i]),
                    artifact.fmt_float(probe_rep.p_signal_class[i]),
                    artifact.fmt_float(probe_rep.p_class_signal[i]),
                    artifact.fmt_float(probe_rep.p_signal_noise[i]),
                ]
            )
        )
    (seed_dir / "attention_probe.csv").write_text("\n".join(lines) + "\n")
    files.append(seed_dir / "attention_probe.csv")

    epochs = [r.epoch for r in mot.records]
    plots.line_chart(
        seed_dir / "loss_curves.svg",
        {
            "routed": (epochs, [r.expert_loss for r in mot.records]),
            "multihead": (epochs, [r.expert_loss for r in mh.records]),
            "moe_ffn": (epochs, [r.expert_loss for r in moe.records]),
        },
        title=f"training loss, seed {seed}",
        x_label="epoch",
        y_label="loss",
        log_y=True,
    )
    files.append(seed_dir / "loss_curves.svg")
    plots.heat_map(
        seed_dir / "routing_heatmap.svg",
        hist.tolist(),
        title=f"routing frequency by class at t1, seed {seed}",
        row_label="class",
        col_label="expert",
    )
    files.append(seed_dir / "routing_heatmap.svg")
    plots.line_chart(
        seed_dir / "margin_curves.svg",
        {"mean margin": (epochs, [r.mean_margin for r in mot.records]),
         "mean p_vv": (epochs, [r.mean_pvv for r in mot.records])},
        title=f"specialization probes, seed {seed}",
        x_label="epoch",
        y_label="value",
    )
    files.append(seed_dir / "margin_curves.svg")

    properties, mot_slope, mh_slope = evaluate_seed_properties(
        config, mot, mh, moe, margins_epoch0, mass, ratios,
        probe_rep, projections, final_rep.best_class,
    )
    outcome.properties = properties
    outcome.final_losses = {
        "mot": mot.final_expert_loss,
        "multihead": mh.final_expert_loss,
        "moe_ffn": moe.final_expert_loss,
    }
    outcome.slopes = {"mot": mot_slope, "multihead": mh_slope}
    outcome.files = files
    return outcome


def run_comparison(config: ExperimentConfig) -> ComparisonBundle:
    """Train the three architectures per seed, write all artifacts and the
    bundle-level summary, properties table, and checksum manifest."""
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    outcomes = []
    all_files: list[Path] = []
    for seed in config.seeds:
        seed_dir = root / f"seed_{seed}"
        try:
            outcome = run_seed(config, seed, seed_dir)
        except Exception as exc:  # noqa: BLE001 - seed isolation is the contract
            outcome = SeedOutcome(seed=seed, status="failed", error=f"{exc}\n{traceback.format_exc()}")
        outcomes.append(outcome)
        all_files.extend(outcome.files)

    lines = ["seed,arch,final_loss,stage3_slope"]
    for o in outcomes:
        if o.status != "ok":
            continue
        for arch in ("mot", "multihead", "moe_ffn"):
            slope = o.slopes.get(arch, float("nan"))
            lines.append(
                f"{o.seed},{arch},{artifact.fmt_float(o.final_losses[arch])},{artifact.fmt_float(slope)}"
            )
    (root / "summary.csv").write_text("\n".join(lines) + "\n")
    all_files.append(root / "summary.csv")

    header = ["property"] + [f"seed_{o.seed}" for o in outcomes] + ["pass_rate"]
    lines = [",".join(header)]
    ok_outcomes = [o for o in outcomes if o.status == "ok"]
    for name in PROPERTY_NAMES:
        row = [name]
        for o in outcomes:
            row.append("" if o.status != "ok" else str(int(o.properties.get(name, False))))
        hits = sum(1 for o in ok_outcomes if o.properties.get(name, False))
        row.append(f"{hits}/{len(ok_outcomes)}" if ok_outcomes else "0/0")
        lines.append(",".join(row))
    (root / "properties.csv").write_text("\n".join(lines) + "\n")
    all_files.append(root / "properties.csv")

    status_lines = ["seed,status,error"]
    for o in outcomes:
        err = o.error.splitlines()[0] if o.error else ""
        status_lines.append(f"{o.seed},{o.status},{err}")
    (root / "seed_status.csv").write_text("\n".join(status_lines) + "\n")
    all_files.append(root / "seed_status.csv")

    artifact.write_run_artifact(
        root / "run.json",
        config_echo=config.to_dict(),
        seeds=config.seeds,
        referenced_files=all_files,
        base_dir=root,
    )
    all_files.append(root / "run.json")
    artifact.write_manifest(root / "manifest.txt", all_files, root)
    return ComparisonBundle(config=config, outcomes=outcomes, root=root)


def run_ablation_schedule(
    config: ExperimentConfig,
    t1_grid: list[int],
    t2_grid: list[int],
) -> list[dict]:
    """Retrain the routed model over a (t1, t2) grid on one shared corpus.

    Stage III keeps its configured length, so t_total = t2 + (config.t_total
    - config.t2) for each grid point. Returns and writes the final-loss
    table.
    """
    if not t1_grid or not t2_grid:
        raise ValueError("ablation grids must be nonempty")
    root = Path(config.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    seed = config.seeds[0]
    streams = _seed_streams(seed)
    dictionary = build_dictionary(config.dim, config.num_classes, streams["dict"])
    corpus = build_corpus(
        dictionary, config.num_tokens, config.noise_std, config.samples_per_type, streams["corpus"]
    )
    stage3 = config.t_total - config.t2
    rows = []
    for t1 in t1_grid:
        for t2 in t2_grid:
            if not (0 < t1 < t2):
                raise ValueError(f"invalid grid point (t1={t1}, t2={t2})")
            sched = config.schedule()
            sched = type(sched)(
                t1=t1,
                t2=t2,
                t_total=t2 + stage3,
                eta=sched.eta,
                eta_a=sched.eta_a,
                eta_r=sched.eta_r,
                noise_scale_by_stage=sched.noise_scale_by_stage,
            )
            model = init_model(config.dim, config.num_experts, config.init_std, streams["mot_init"])
            result = train(model, corpus, sched, streams["mot_noise"])
            rows.append(
                {
                    "t1": t1,
                    "t2": t2,
                    "t_total": sched.t_total,
                    "final_loss": result.final_expert_loss,
                }
            )
    lines = ["t1,t2,t_total,final_loss"]
    for r in rows:
        lines.append(f"{r['t1']},{r['t2']},{r['t_total']},{artifact.fmt_float(r['final_loss'])}")
    (root / "ablation.csv").write_text("\n".join(lines) + "\n")
    return rows
