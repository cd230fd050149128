"""Mixture-of-transformers model state, routing, and forward pass.

Each expert is a single-layer transformer reduced to two trainable blocks:
a merged key-query matrix w_kq (d x d) and a merged value/FFN head w (d,).
A linear gating network scores experts from the token sum of a sample;
top-1 routing picks the expert with the highest noise-perturbed score.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .data import Corpus, Sample


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax; mathematically identical, overflow-free."""
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class GatingParams:
    """Linear gating network; column i of theta scores expert i."""

    theta: np.ndarray  # (d, M)

    @property
    def num_experts(self) -> int:
        return self.theta.shape[1]

    @staticmethod
    def zeros(dim: int, num_experts: int) -> "GatingParams":
        return GatingParams(theta=np.zeros((dim, num_experts)))


@dataclass
class ExpertParams:
    """One transformer expert: merged value/FFN head and key-query matrix."""

    w: np.ndarray  # (d,)
    w_kq: np.ndarray  # (d, d)


@dataclass
class ModelState:
    gating: GatingParams
    experts: list[ExpertParams]
    epoch: int = 0

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    @property
    def dim(self) -> int:
        return self.gating.theta.shape[0]

    def w_stack(self) -> np.ndarray:
        """(M, d) copy of all expert heads."""
        return np.stack([e.w for e in self.experts])

    def wkq_stack(self) -> np.ndarray:
        """(M, d, d) copy of all key-query matrices."""
        return np.stack([e.w_kq for e in self.experts])

    def clone(self) -> "ModelState":
        return copy.deepcopy(self)


@dataclass
class RoutingOutcome:
    """Routing decision for one sample: selected expert plus gate diagnostics."""

    selected: int
    gate_outputs: np.ndarray  # (M,)
    gate_probs: np.ndarray  # (M,)
    noise: np.ndarray  # (M,)


def init_model(dim: int, num_experts: int, init_std: float, seed) -> ModelState:
    """Zero gating; expert entries i.i.d. normal with variance init_std^2 / dim."""
    rng = np.random.default_rng(seed)
    scale = init_std / np.sqrt(dim)
    experts = [
        ExpertParams(
            w=rng.normal(0.0, scale, size=dim),
            w_kq=rng.normal(0.0, scale, size=(dim, dim)),
        )
        for _ in range(num_experts)
    ]
    return ModelState(gating=GatingParams.zeros(dim, num_experts), experts=experts)


def gate_outputs(gating: GatingParams, sample: Sample) -> np.ndarray:
    """Gate scores h = theta^T (sum of tokens)."""
    token_sum = sample.tokens.sum(axis=1)
    if token_sum.shape[0] != gating.theta.shape[0]:
        raise ValueError(
            f"sample dim {token_sum.shape[0]} does not match gating dim {gating.theta.shape[0]}"
        )
    return gating.theta.T @ token_sum


def softmax_gate_probs(gate_out: np.ndarray) -> np.ndarray:
    """Softmax gating probabilities over the expert scores."""
    return softmax(np.asarray(gate_out, dtype=float))


def route(
    gating: GatingParams,
    sample: Sample,
    rng: np.random.Generator,
    noise_scale: float,
) -> RoutingOutcome:
    """Top-1 routing: argmax of gate score plus uniform [0, noise_scale] noise.

    Ties go to the lowest expert index. The noise draw is consumed from the
    RNG even when noise_scale is 0 so trajectories stay stream-aligned
    across stages.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    rng = np.random.default_rng(rng)
    h = gate_outputs(gating, sample)
    noise = noise_scale * rng.uniform(size=h.shape[0])
    selected = int(np.argmax(h + noise))
    return RoutingOutcome(
        selected=selected,
        gate_outputs=h,
        gate_probs=softmax_gate_probs(h),
        noise=noise,
    )


def route_corpus(
    gating: GatingParams,
    corpus: Corpus,
    rng: np.random.Generator,
    noise_scale: float,
) -> list[RoutingOutcome]:
    """Route every corpus sample with one vectorized noise draw.

    Equivalent to per-sample `route` calls against a (K, M) uniform noise
    block drawn row-major.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    rng = np.random.default_rng(rng)
    h_all = corpus.token_sums @ gating.theta  # (K, M)
    noise_all = noise_scale * rng.uniform(size=h_all.shape)
    selected_all = np.argmax(h_all + noise_all, axis=1)
    probs_all = softmax(h_all, axis=1)
    return [
        RoutingOutcome(
            selected=int(selected_all[k]),
            gate_outputs=h_all[k],
            gate_probs=probs_all[k],
            noise=noise_all[k],
        )
        for k in range(len(corpus))
    ]


def attention_probs(w_kq: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """(L, L) attention matrix P with P[:, l] = softmax(X^T w_kq X_l).

    Column l holds the attention distribution of query token l over all
    key tokens.
    """
    logits = tokens.T @ w_kq @ tokens  # [h, l] = X_h^T w_kq X_l
    return softmax(logits, axis=0)


def expert_forward(expert: ExpertParams, sample: Sample) -> float:
    """Scalar output: sum over query tokens of the head applied to the
    attention-weighted token mix."""
    tokens = sample.tokens
    if tokens.shape[0] != expert.w.shape[0]:
        raise ValueError(
            f"sample dim {tokens.shape[0]} does not match expert dim {expert.w.shape[0]}"
        )
    p = attention_probs(expert.w_kq, tokens)
    head_scores = expert.w @ tokens  # (L,)
    return float(head_scores @ p.sum(axis=1))


def attention_score(
    expert: ExpertParams,
    sample: Sample,
    key: np.ndarray,
    query_position: int,
) -> float:
    """Softmax weight that query vector ``key`` places on the token at
    ``query_position``: softmax(X^T w_kq key)[query_position]."""
    tokens = sample.tokens
    if not 0 <= query_position < tokens.shape[1]:
        raise IndexError(f"query_position {query_position} out of range for L={tokens.shape[1]}")
    logits = tokens.T @ (expert.w_kq @ key)
    return float(softmax(logits)[query_position])
