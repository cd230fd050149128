"""Router and expert losses with hand-derived closed-form gradients.

Routing decisions are constants when differentiating: gradients flow
through the gating probabilities (router loss) and through the expert
output (expert loss) but never through the discrete argmax. The
finite-difference oracle at the bottom is the independent check for all
three gradient paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import Corpus
from .model import ModelState, RoutingOutcome, softmax


def logistic_loss(z):
    """log(1 + exp(-z)) in the overflow-free form max(-z, 0) + log1p(exp(-|z|))."""
    z = np.asarray(z, dtype=float)
    out = np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return float(out) if out.ndim == 0 else out


def logistic_loss_grad(z):
    """Derivative -1 / (1 + exp(z)), computed branch-wise to avoid overflow."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    ez = np.exp(-z[pos])
    out[pos] = -ez / (1.0 + ez)
    out[~pos] = -1.0 / (1.0 + np.exp(z[~pos]))
    return float(out) if out.ndim == 0 else out


@dataclass
class LossBreakdown:
    """Loss snapshot for one (model, corpus, routes) triple.

    per_expert_loss holds NaN for experts with no routed samples (absent,
    not zero). margins are the per-sample label * output values.
    """

    router_loss: float
    expert_loss: float
    per_expert_loss: np.ndarray  # (M,)
    margins: np.ndarray  # (K,)


@dataclass
class GradientSet:
    d_theta: np.ndarray  # (d, M)
    d_w: np.ndarray  # (M, d)
    d_wkq: np.ndarray  # (M, d, d)


def selected_array(routes: Sequence[RoutingOutcome]) -> np.ndarray:
    return np.array([r.selected for r in routes], dtype=int)


# ---------------------------------------------------------------------------
# Batched core on raw arrays. The trainer drives these directly; the public
# (model, corpus, routes) operations below are thin wrappers.
# ---------------------------------------------------------------------------


def forward_routed(
    w_stack: np.ndarray,
    wkq_stack: np.ndarray,
    tokens: np.ndarray,
    selected: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward pass of every sample through its routed expert.

    Returns (f, p, a): scalar outputs (K,), attention tensors (K, L, L)
    with p[k, h, l] the weight query l places on key h, and head scores
    a[k, l] = w^T X_l.
    """
    wkq_g = wkq_stack[selected]  # (K, d, d)
    proj = np.matmul(wkq_g, tokens)  # (K, d, L), column l = w_kq X_l
    logits = np.matmul(tokens.transpose(0, 2, 1), proj)  # (K, L, L)
    p = softmax(logits, axis=1)
    a = np.einsum("kdl,kd->kl", tokens, w_stack[selected])
    f = np.einsum("kh,khl->k", a, p)
    return f, p, a


def attention_reuse_forward(
    w_stack: np.ndarray,
    tokens: np.ndarray,
    selected: np.ndarray,
    p: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Recompute (f, a) for new heads while attention p is unchanged."""
    a = np.einsum("kdl,kd->kl", tokens, w_stack[selected])
    f = np.einsum("kh,khl->k", a, p)
    return f, a


def grad_w_arrays(
    tokens: np.ndarray,
    labels: np.ndarray,
    selected: np.ndarray,
    f: np.ndarray,
    p: np.ndarray,
    num_experts: int,
) -> np.ndarray:
    """(M, d) expert-head gradients: (1/K) sum over routed k of
    l'(y f) y X (sum_l p_l)."""
    k = tokens.shape[0]
    coeff = logistic_loss_grad(labels * f) * labels  # (K,)
    contrib = np.einsum("kdh,kh->kd", tokens, p.sum(axis=2))
    out = np.zeros((num_experts, tokens.shape[1]))
    np.add.at(out, selected, coeff[:, None] * contrib)
    return out / k


def grad_wkq_arrays(
    tokens: np.ndarray,
    labels: np.ndarray,
    selected: np.ndarray,
    f: np.ndarray,
    p: np.ndarray,
    a: np.ndarray,
    num_experts: int,
) -> np.ndarray:
    """(M, d, d) key-query gradients via the softmax Jacobian:
    (1/K) sum over routed k, queries l of X [diag(p_l) - p_l p_l^T] X^T w X_l^T."""
    k, d, _ = tokens.shape
    coeff = logistic_loss_grad(labels * f) * labels  # (K,)
    b = np.einsum("kh,khl->kl", a, p)  # per-query attention-weighted head score
    u = p * (a[:, :, None] - b[:, None, :])  # (K, L, L)
    xu = np.einsum("kdh,khl->kdl", tokens, u)
    v = np.einsum("kdl,kel->kde", xu, tokens)
    out = np.zeros((num_experts, d, d))
    np.add.at(out, selected, coeff[:, None, None] * v)
    return out / k


def grad_theta_arrays(
    token_sums: np.ndarray,
    labels: np.ndarray,
    selected: np.ndarray,
    f: np.ndarray,
    probs: np.ndarray,
) -> np.ndarray:
    """(d, M) router gradient: (1/K) sum_k y f l'(y f pi_m) pi_m
    (1{i=m} - pi_i) sum_l X_l."""
    k, m = probs.shape
    pi_sel = probs[np.arange(k), selected]
    coeff = labels * f * logistic_loss_grad(labels * f * pi_sel) * pi_sel  # (K,)
    weights = coeff[:, None] * (np.eye(m)[selected] - probs)  # (K, M)
    return token_sums.T @ weights / k


def loss_arrays(
    labels: np.ndarray,
    selected: np.ndarray,
    f: np.ndarray,
    probs: np.ndarray,
    num_experts: int,
) -> LossBreakdown:
    k = labels.shape[0]
    margins = labels * f
    per_sample = logistic_loss(margins)
    pi_sel = probs[np.arange(k), selected]
    router = float(np.mean(logistic_loss(margins * pi_sel)))
    per_expert = np.full(num_experts, np.nan)
    for i in range(num_experts):
        mask = selected == i
        if mask.any():
            per_expert[i] = float(per_sample[mask].mean())
    return LossBreakdown(
        router_loss=router,
        expert_loss=float(per_sample.mean()),
        per_expert_loss=per_expert,
        margins=margins,
    )


# ---------------------------------------------------------------------------
# Spec-level operations on (model, corpus, routes).
# ---------------------------------------------------------------------------


def _eval_model(model: ModelState, corpus: Corpus, routes: Sequence[RoutingOutcome]):
    if len(routes) != len(corpus):
        raise ValueError("routes must have one entry per corpus sample")
    selected = selected_array(routes)
    f, p, a = forward_routed(model.w_stack(), model.wkq_stack(), corpus.tokens, selected)
    probs = softmax(corpus.token_sums @ model.gating.theta, axis=1)
    return selected, f, p, a, probs


def router_loss(model: ModelState, corpus: Corpus, routes: Sequence[RoutingOutcome]) -> float:
    """Mean logistic loss of y * f * pi_m over the corpus.

    Gating probabilities are recomputed from the model's current theta with
    the selections in `routes` held fixed; at the parameters that produced
    the routes this equals the stored gate_probs exactly.
    """
    selected, f, _, _, probs = _eval_model(model, corpus, routes)
    breakdown = loss_arrays(corpus.labels, selected, f, probs, model.num_experts)
    return breakdown.router_loss


def expert_loss(model: ModelState, corpus: Corpus, routes: Sequence[RoutingOutcome]) -> LossBreakdown:
    """Mean logistic loss of y * f over the corpus, with per-expert means."""
    selected, f, _, _, probs = _eval_model(model, corpus, routes)
    return loss_arrays(corpus.labels, selected, f, probs, model.num_experts)


def grad_theta(model: ModelState, corpus: Corpus, routes: Sequence[RoutingOutcome]) -> np.ndarray:
    """(d, M) gradient of the router loss w.r.t. the gating matrix."""
    selected, f, _, _, probs = _eval_model(model, corpus, routes)
    return grad_theta_arrays(corpus.token_sums, corpus.labels, selected, f, probs)


def grad_w(model: ModelState, corpus: Corpus, routes: Sequence[RoutingOutcome]) -> np.ndarray:
    """(M, d) gradient of the expert loss w.r.t. each expert head."""
    selected, f, p, _, _ = _eval_model(model, corpus, routes)
    return grad_w_arrays(corpus.tokens, corpus.labels, selected, f, p, model.num_experts)


def grad_wkq(model: ModelState, corpus: Corpus, routes: Sequence[RoutingOutcome]) -> np.ndarray:
    """(M, d, d) gradient of the expert loss w.r.t. each key-query matrix."""
    selected, f, p, a, _ = _eval_model(model, corpus, routes)
    return grad_wkq_arrays(corpus.tokens, corpus.labels, selected, f, p, a, model.num_experts)


def gradients(model: ModelState, corpus: Corpus, routes: Sequence[RoutingOutcome]) -> GradientSet:
    """All three gradients from one shared forward pass."""
    selected, f, p, a, probs = _eval_model(model, corpus, routes)
    return GradientSet(
        d_theta=grad_theta_arrays(corpus.token_sums, corpus.labels, selected, f, probs),
        d_w=grad_w_arrays(corpus.tokens, corpus.labels, selected, f, p, model.num_experts),
        d_wkq=grad_wkq_arrays(corpus.tokens, corpus.labels, selected, f, p, a, model.num_experts),
    )


@dataclass
class GradCheckResult:
    """One instance's worst-entry agreement per parameter family."""

    instance: int
    dims: tuple  # (d, L, M, K)
    max_rel_theta: float
    max_rel_w: float
    max_rel_wkq: float
    passed: bool


def _fd_agreement(analytic: np.ndarray, fd: np.ndarray, rel_tol: float, abs_floor: float):
    """Max relative error and pass flag; differences under abs_floor pass."""
    diff = np.abs(analytic - fd)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), abs_floor)
    rel = diff / denom
    ok = bool(np.all((diff <= abs_floor) | (rel <= rel_tol)))
    return float(rel.max()), ok


def gradient_check_suite(
    num_instances: int = 20,
    seed=0,
    step: float = 1e-5,
    rel_tol: float = 1e-5,
    abs_floor: float = 1e-9,
) -> list[GradCheckResult]:
    """Check all three closed-form gradients against central differences on
    random small instances with frozen routes."""
    from .data import build_corpus
    from .model import init_model, route_corpus
    from .signals import build_dictionary

    rng = np.random.default_rng(seed)
    results = []
    for idx in range(num_instances):
        num_classes = 2
        d = int(rng.integers(num_classes * 2, 9))
        L = int(rng.integers(3, 6))
        m = int(rng.integers(1, 5))
        dictionary = build_dictionary(d, num_classes, rng.integers(2**32))
        corpus = build_corpus(dictionary, L, 0.1, 1, rng.integers(2**32))
        model = init_model(d, m, 0.8, rng.integers(2**32))
        model.gating.theta += rng.normal(0.0, 0.5, size=model.gating.theta.shape)
        routes = route_corpus(model.gating, corpus, np.random.default_rng(rng.integers(2**32)), 1.0)

        def router_loss_of(theta_block):
            model.gating.theta[...] = theta_block
            return router_loss(model, corpus, routes)

        theta0 = model.gating.theta.copy()
        fd_theta = finite_diff_oracle(router_loss_of, theta0, step)
        model.gating.theta[...] = theta0
        rel_t, ok_t = _fd_agreement(grad_theta(model, corpus, routes), fd_theta, rel_tol, abs_floor)

        an_w = grad_w(model, corpus, routes)
        an_kq = grad_wkq(model, corpus, routes)
        rel_w_max, rel_kq_max = 0.0, 0.0
        ok_w = ok_kq = True
        for i in range(m):
            def expert_loss_of_w(block, i=i):
                model.experts[i].w[...] = block
                return expert_loss(model, corpus, routes).expert_loss

            w0 = model.experts[i].w.copy()
            fd_w = finite_diff_oracle(expert_loss_of_w, w0, step)
            model.experts[i].w[...] = w0
            rel, ok = _fd_agreement(an_w[i], fd_w, rel_tol, abs_floor)
            rel_w_max, ok_w = max(rel_w_max, rel), ok_w and ok

            def expert_loss_of_kq(block, i=i):
                model.experts[i].w_kq[...] = block
                return expert_loss(model, corpus, routes).expert_loss

            kq0 = model.experts[i].w_kq.copy()
            fd_kq = finite_diff_oracle(expert_loss_of_kq, kq0, step)
            model.experts[i].w_kq[...] = kq0
            rel, ok = _fd_agreement(an_kq[i], fd_kq, rel_tol, abs_floor)
            rel_kq_max, ok_kq = max(rel_kq_max, rel), ok_kq and ok

        results.append(
            GradCheckResult(
                instance=idx,
                dims=(d, L, m, len(corpus)),
                max_rel_theta=rel_t,
                max_rel_w=rel_w_max,
                max_rel_wkq=rel_kq_max,
                passed=ok_t and ok_w and ok_kq,
            )
        )
    return results


def finite_diff_oracle(
    loss_fn: Callable[[np.ndarray], float],
    block: np.ndarray,
    step: float,
) -> np.ndarray:
    """Central-difference gradient of a scalar loss over one parameter block.

    The block is perturbed entry by entry in place and restored; loss_fn
    must read the array contents on every call (and must hold routing
    decisions fixed for the comparison with the closed forms to be valid).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    block = np.array(block, dtype=float)
    grad = np.zeros_like(block)
    for idx in np.ndindex(block.shape):
        orig = block[idx]
        block[idx] = orig + step
        up = loss_fn(block)
        block[idx] = orig - step
        down = loss_fn(block)
        block[idx] = orig
        grad[idx] = (up - down) / (2.0 * step)
    return grad
