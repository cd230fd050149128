"""Three-stage full-batch training loop with a continuously trained router.

Stage I (epochs 1..t1) moves only the expert heads, by normalized gradient
descent so every updated expert takes a step of length exactly eta. Stage
II (t1+1..t2) moves only the key-query matrices by plain GD. Stage III
(t2+1..t_total) fine-tunes the heads by plain GD. The gating matrix is
updated every epoch, after the expert update, from the same epoch's frozen
routing decisions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Corpus
from .model import ExpertParams, GatingParams, ModelState, softmax
from .losses import (
    attention_reuse_forward,
    forward_routed,
    grad_theta_arrays,
    grad_w_arrays,
    grad_wkq_arrays,
    loss_arrays,
)

DEFAULT_NOISE_BY_STAGE = (1.0, 1.0, 0.0)


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class StageSchedule:
    """Stage boundaries and learning rates for one training run."""

    t1: int
    t2: int
    t_total: int
    eta: float
    eta_a: float
    eta_r: float
    noise_scale_by_stage: tuple[float, float, float] = DEFAULT_NOISE_BY_STAGE

    def __post_init__(self):
        if not (0 < self.t1 < self.t2 < self.t_total):
            raise ScheduleError(
                f"need 0 < t1 < t2 < t_total, got ({self.t1}, {self.t2}, {self.t_total})"
            )
        if min(self.eta, self.eta_a, self.eta_r) <= 0:
            raise ScheduleError("learning rates must be positive")
        if len(self.noise_scale_by_stage) != 3 or min(self.noise_scale_by_stage) < 0:
            raise ScheduleError("noise_scale_by_stage must be three nonnegative reals")

    def stage_of(self, epoch: int) -> int:
        """1, 2, or 3 for a 1-based epoch index."""
        if epoch <= self.t1:
            return 1
        if epoch <= self.t2:
            return 2
        return 3

    def noise_scale(self, epoch: int) -> float:
        return self.noise_scale_by_stage[self.stage_of(epoch) - 1]


STAGE_LABELS = {1: "I", 2: "II", 3: "III"}


@dataclass
class TrainRecord:
    """One metrics row per epoch, taken after the epoch's updates."""

    epoch: int
    stage: str
    expert_loss: float
    router_loss: float
    routed_counts: np.ndarray  # (M,) ints
    mean_margin: float
    mean_pvv: float


@dataclass
class TrainResult:
    records: list[TrainRecord]
    model: ModelState
    checkpoints: dict[int, ModelState] = field(default_factory=dict)

    @property
    def final_expert_loss(self) -> float:
        return self.records[-1].expert_loss


def specialization_margins(w_stack: np.ndarray, cls_signals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-expert best class and margin over the runner-up projection."""
    proj = w_stack @ cls_signals.T  # (M, N)
    best = np.argmax(proj, axis=1)
    sorted_proj = np.sort(proj, axis=1)
    margins = sorted_proj[:, -1] - sorted_proj[:, -2]
    return best, margins


class _SignalProbeIndex:
    """Per-class indices of label=+1 samples, for the attention probe."""

    def __init__(self, corpus: Corpus):
        labels = corpus.labels
        classes = corpus.class_indices
        self.pos_signal = np.array([s.pos_signal for s in corpus.samples], dtype=int)
        self.by_class = {
            n: np.flatnonzero((classes == n) & (labels > 0))
            for n in range(corpus.dictionary.num_classes)
        }


def mean_signal_attention(
    wkq_stack: np.ndarray,
    best_class: np.ndarray,
    corpus: Corpus,
    probe: _SignalProbeIndex,
) -> float:
    """Mean attention weight each expert's own classification signal places
    on its token, over that expert's class (positive-label samples)."""
    v = corpus.dictionary.cls_signals
    scores = []
    for i in range(wkq_stack.shape[0]):
        n = int(best_class[i])
        idx = probe.by_class[n]
        if idx.size == 0:
            continue
        logits = np.einsum("kdl,d->kl", corpus.tokens[idx], wkq_stack[i] @ v[n])
        p = softmax(logits, axis=1)
        scores.append(p[np.arange(idx.size), probe.pos_signal[idx]].mean())
    return float(np.mean(scores)) if scores else float("nan")


def _rebuild_state(theta, w_stack, wkq_stack, epoch: int) -> ModelState:
    experts = [ExpertParams(w=w_stack[i].copy(), w_kq=wkq_stack[i].copy()) for i in range(w_stack.shape[0])]
    return ModelState(gating=GatingParams(theta=theta.copy()), experts=experts, epoch=epoch)


def train(model: ModelState, corpus: Corpus, schedule: StageSchedule, seed) -> TrainResult:
    """Run the full three-stage schedule, one record per epoch.

    Per epoch: route every sample with stage-specific noise, update the
    stage's expert parameters, then update the gating matrix from the same
    routes against the just-updated experts. Experts whose head gradient is
    zero (in particular, unrouted ones) are skipped by the normalized
    update. Checkpoints are cloned at the ends of epochs t1, t2, t_total.
    """
    rng = np.random.default_rng(seed)
    tokens = corpus.tokens
    token_sums = corpus.token_sums
    labels = corpus.labels
    num_experts = model.num_experts
    kcount = len(corpus)

    theta = model.gating.theta.copy()
    w_stack = model.w_stack()
    wkq_stack = model.wkq_stack()
    probe = _SignalProbeIndex(corpus)
    cls_signals = corpus.dictionary.cls_signals

    records: list[TrainRecord] = []
    checkpoints: dict[int, ModelState] = {}

    for epoch in range(1, schedule.t_total + 1):
        stage = schedule.stage_of(epoch)
        scale = schedule.noise_scale(epoch)

        # Top-1 routing with exploration noise; the draw is consumed even at
        # scale 0 so the noise stream stays aligned across stages.
        h_all = token_sums @ theta
        noise = scale * rng.uniform(size=(kcount, num_experts))
        selected = np.argmax(h_all + noise, axis=1)
        probs = softmax(h_all, axis=1)

        f, p, a = forward_routed(w_stack, wkq_stack, tokens, selected)

        if stage == 1:
            gw = grad_w_arrays(tokens, labels, selected, f, p, num_experts)
            norms = np.linalg.norm(gw, axis=1)
            active = norms > 0
            w_stack[active] -= schedule.eta * gw[active] / norms[active, None]
            f, a = attention_reuse_forward(w_stack, tokens, selected, p)
        elif stage == 2:
            gkq = grad_wkq_arrays(tokens, labels, selected, f, p, a, num_experts)
            wkq_stack -= schedule.eta_a * gkq
            f, p, a = forward_routed(w_stack, wkq_stack, tokens, selected)
        else:
            gw = grad_w_arrays(tokens, labels, selected, f, p, num_experts)
            w_stack -= schedule.eta * gw
            f, a = attention_reuse_forward(w_stack, tokens, selected, p)

        gtheta = grad_theta_arrays(token_sums, labels, selected, f, probs)
        theta -= schedule.eta_r * gtheta

        probs_after = softmax(token_sums @ theta, axis=1)
        breakdown = loss_arrays(labels, selected, f, probs_after, num_experts)
        best_class, margins = specialization_margins(w_stack, cls_signals)
        records.append(
            TrainRecord(
                epoch=epoch,
                stage=STAGE_LABELS[stage],
                expert_loss=breakdown.expert_loss,
                router_loss=breakdown.router_loss,
                routed_counts=np.bincount(selected, minlength=num_experts),
                mean_margin=float(margins.mean()),
                mean_pvv=mean_signal_attention(wkq_stack, best_class, corpus, probe),
            )
        )

        if epoch in (schedule.t1, schedule.t2, schedule.t_total):
            checkpoints[epoch] = _rebuild_state(theta, w_stack, wkq_stack, epoch)

    final = _rebuild_state(theta, w_stack, wkq_stack, schedule.t_total)
    return TrainResult(records=records, model=final, checkpoints=checkpoints)
