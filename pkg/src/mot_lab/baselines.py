"""Comparison architectures: multi-head transformer and attention-free MoE.

The multi-head model sums the outputs of H expert-shaped heads and trains
every head on every sample (no gating, no routing). The attention-free MoE
keeps the gating network and top-1 routing but reduces each expert to a
plain token-sum head, which is exactly the routed model with the key-query
matrices pinned at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Corpus, Sample
from .model import ExpertParams, GatingParams, ModelState, expert_forward, softmax
from .losses import logistic_loss, logistic_loss_grad
from .training import (
    StageSchedule,
    STAGE_LABELS,
    TrainRecord,
    TrainResult,
    _SignalProbeIndex,
    loss_arrays,
    mean_signal_attention,
    specialization_margins,
)


@dataclass
class MultiHeadParams:
    """H heads with the same per-head shapes and init law as routed experts."""

    heads: list[ExpertParams]

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def w_stack(self) -> np.ndarray:
        return np.stack([h.w for h in self.heads])

    def wkq_stack(self) -> np.ndarray:
        return np.stack([h.w_kq for h in self.heads])


@dataclass
class MoeFfnParams:
    """Gated experts without attention: each head is a single vector."""

    gating: GatingParams
    heads: np.ndarray  # (M, d)

    @property
    def num_experts(self) -> int:
        return self.heads.shape[0]


def init_multihead(dim: int, num_heads: int, init_std: float, seed) -> MultiHeadParams:
    rng = np.random.default_rng(seed)
    scale = init_std / np.sqrt(dim)
    return MultiHeadParams(
        heads=[
            ExpertParams(
                w=rng.normal(0.0, scale, size=dim),
                w_kq=rng.normal(0.0, scale, size=(dim, dim)),
            )
            for _ in range(num_heads)
        ]
    )


def init_moe_ffn(dim: int, num_experts: int, init_std: float, seed) -> MoeFfnParams:
    rng = np.random.default_rng(seed)
    scale = init_std / np.sqrt(dim)
    return MoeFfnParams(
        gating=GatingParams.zeros(dim, num_experts),
        heads=rng.normal(0.0, scale, size=(num_experts, dim)),
    )


def multihead_forward(params: MultiHeadParams, sample: Sample) -> float:
    """Sum of the per-head transformer outputs; all heads see all data."""
    return float(sum(expert_forward(h, sample) for h in params.heads))


def moe_ffn_forward(params: MoeFfnParams, sample: Sample, expert_index: int) -> float:
    """Token-sum head output for the given expert."""
    return float(params.heads[expert_index] @ sample.token_sum())


def _attention_all_heads(wkq_stack: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """(H, K, L, L) attention with [g, k, i, j] = weight query j puts on key i."""
    proj = np.einsum("gde,kej->gkdj", wkq_stack, tokens)
    logits = np.einsum("kdi,gkdj->gkij", tokens, proj)
    return softmax(logits, axis=2)


def train_multihead(params: MultiHeadParams, corpus: Corpus, schedule: StageSchedule) -> TrainResult:
    """Same three-stage schedule on the ungated sum-of-heads model.

    Every head trains on the full corpus; the gradient formulas are the
    routed ones with the routed subset widened to all samples and the loss
    slope taken at the summed output. With no router, the recorded router
    loss equals the expert loss (one implicit route of probability one) and
    every head counts all K samples. Attention is recomputed only in Stage
    II, where the key-query matrices actually move.
    """
    tokens = corpus.tokens
    labels = corpus.labels
    kcount = len(corpus)
    num_heads = params.num_heads
    w_stack = params.w_stack()
    wkq_stack = params.wkq_stack()
    probe = _SignalProbeIndex(corpus)
    cls_signals = corpus.dictionary.cls_signals

    records: list[TrainRecord] = []
    p = None  # (H, K, L, L); valid while wkq_stack is frozen

    for epoch in range(1, schedule.t_total + 1):
        stage = schedule.stage_of(epoch)
        if p is None:
            p = _attention_all_heads(wkq_stack, tokens)
            psum = p.sum(axis=3)  # (H, K, L)
        a = np.einsum("kdi,gd->gki", tokens, w_stack)
        f = np.einsum("gki,gki->k", a, psum)
        coeff = logistic_loss_grad(labels * f) * labels  # (K,)

        if stage == 1:
            gw = np.einsum("k,kdi,gki->gd", coeff, tokens, psum) / kcount
            norms = np.linalg.norm(gw, axis=1)
            active = norms > 0
            w_stack[active] -= schedule.eta * gw[active] / norms[active, None]
        elif stage == 2:
            b = np.einsum("gki,gkij->gkj", a, p)
            u = p * (a[:, :, :, None] - b[:, :, None, :])
            xu = np.einsum("kdi,gkij->gkdj", tokens, u)
            gkq = np.einsum("gkdj,kej->gde", xu * coeff[None, :, None, None], tokens) / kcount
            wkq_stack -= schedule.eta_a * gkq
            p = _attention_all_heads(wkq_stack, tokens)
            psum = p.sum(axis=3)
        else:
            gw = np.einsum("k,kdi,gki->gd", coeff, tokens, psum) / kcount
            w_stack -= schedule.eta * gw

        a = np.einsum("kdi,gd->gki", tokens, w_stack)
        f = np.einsum("gki,gki->k", a, psum)
        loss = float(np.mean(logistic_loss(labels * f)))
        best_class, margins = specialization_margins(w_stack, cls_signals)
        records.append(
            TrainRecord(
                epoch=epoch,
                stage=STAGE_LABELS[stage],
                expert_loss=loss,
                router_loss=loss,
                routed_counts=np.full(num_heads, kcount, dtype=int),
                mean_margin=float(margins.mean()),
                mean_pvv=mean_signal_attention(wkq_stack, best_class, corpus, probe),
            )
        )

    final_heads = [ExpertParams(w=w_stack[i].copy(), w_kq=wkq_stack[i].copy()) for i in range(num_heads)]
    params.heads = final_heads
    model = ModelState(
        gating=GatingParams.zeros(tokens.shape[1], num_heads),
        experts=final_heads,
        epoch=schedule.t_total,
    )
    return TrainResult(records=records, model=model, checkpoints={})


def train_moe_ffn(params: MoeFfnParams, corpus: Corpus, schedule: StageSchedule, seed) -> TrainResult:
    """Routed token-sum experts: normalized GD through t1, plain GD after.

    There is no attention stage; epochs t1+1..t_total all fine-tune the
    heads. The router trains every epoch exactly as in the full model, and
    the routing-noise schedule follows the same stage boundaries. The
    recorded attention score is the structural uniform value 1/L.
    """
    rng = np.random.default_rng(seed)
    token_sums = corpus.token_sums
    labels = corpus.labels
    kcount = len(corpus)
    num_experts = params.num_experts
    dim = token_sums.shape[1]

    theta = params.gating.theta.copy()
    heads = params.heads.copy()
    cls_signals = corpus.dictionary.cls_signals
    uniform_attention = 1.0 / corpus.samples[0].num_tokens

    records: list[TrainRecord] = []

    for epoch in range(1, schedule.t_total + 1):
        stage = schedule.stage_of(epoch)
        scale = schedule.noise_scale(epoch)

        h_all = token_sums @ theta
        noise = scale * rng.uniform(size=(kcount, num_experts))
        selected = np.argmax(h_all + noise, axis=1)
        probs = softmax(h_all, axis=1)

        f = np.einsum("kd,kd->k", token_sums, heads[selected])
        coeff = logistic_loss_grad(labels * f) * labels
        gw = np.zeros((num_experts, dim))
        np.add.at(gw, selected, coeff[:, None] * token_sums)
        gw /= kcount

        if stage == 1:
            norms = np.linalg.norm(gw, axis=1)
            active = norms > 0
            heads[active] -= schedule.eta * gw[active] / norms[active, None]
        else:
            heads -= schedule.eta * gw

        f = np.einsum("kd,kd->k", token_sums, heads[selected])
        pi_sel = probs[np.arange(kcount), selected]
        gcoeff = labels * f * logistic_loss_grad(labels * f * pi_sel) * pi_sel
        gtheta = token_sums.T @ (gcoeff[:, None] * (np.eye(num_experts)[selected] - probs)) / kcount
        theta -= schedule.eta_r * gtheta

        probs_after = softmax(token_sums @ theta, axis=1)
        breakdown = loss_arrays(labels, selected, f, probs_after, num_experts)
        _, margins = specialization_margins(heads, cls_signals)
        records.append(
            TrainRecord(
                epoch=epoch,
                stage=STAGE_LABELS[stage],
                expert_loss=breakdown.expert_loss,
                router_loss=breakdown.router_loss,
                routed_counts=np.bincount(selected, minlength=num_experts),
                mean_margin=float(margins.mean()),
                mean_pvv=uniform_attention,
            )
        )

    params.gating = GatingParams(theta=theta.copy())
    params.heads = heads.copy()
    experts = [ExpertParams(w=heads[i].copy(), w_kq=np.zeros((dim, dim))) for i in range(num_experts)]
    model = ModelState(gating=GatingParams(theta=theta.copy()), experts=experts, epoch=schedule.t_total)
    return TrainResult(records=records, model=model, checkpoints={})
