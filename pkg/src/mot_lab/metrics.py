"""Measurable quantities the training dynamics are predicted to produce:
expert specialization, routing concentration, attention alignment, signal
projections, and log-loss convergence-rate fits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Corpus
from .model import ModelState, softmax
from .signals import SignalDictionary
from .training import TrainRecord


@dataclass
class SpecializationReport:
    """Partition of experts by the classification signal their head tracks."""

    best_class: np.ndarray  # (M,) class index per expert
    margins: np.ndarray  # (M,) best minus runner-up projection
    sets: list[list[int]]  # sets[n] = experts specialized to class n
    full_coverage: bool  # every class has at least one expert

    @property
    def set_sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.sets])


@dataclass
class RateFit:
    """Least-squares line through (epoch, log loss) over a window."""

    window: tuple[int, int]
    slope: float
    intercept: float
    r_squared: float


@dataclass
class AttentionProbeReport:
    """Mean attention scores per expert for the four probed query/key pairs.

    Rows follow expert order; values average over held-out positive-label
    samples of the expert's own class, so every probed token is literally
    present. p_signal_noise is NaN when the probe corpus has no noise slots.
    """

    best_class: np.ndarray  # (M,)
    p_signal_signal: np.ndarray  # query v_n, token v_n
    p_signal_class: np.ndarray  # query v_n, token c_n
    p_class_signal: np.ndarray  # query c_n, token v_n
    p_signal_noise: np.ndarray  # query v_n, noise tokens (mean)


def specialization_report(model: ModelState, dictionary: SignalDictionary) -> SpecializationReport:
    """Assign every expert to its best-aligned classification signal.

    Ties go to the lowest class index. The margin is the gap to the best
    competing projection (0 for a zero head).
    """
    w = model.w_stack()
    proj = w @ dictionary.cls_signals.T  # (M, N)
    best = np.argmax(proj, axis=1)
    n = dictionary.num_classes
    if n >= 2:
        sorted_proj = np.sort(proj, axis=1)
        margins = sorted_proj[:, -1] - sorted_proj[:, -2]
    else:
        margins = proj[:, 0]
    sets = [[int(i) for i in np.flatnonzero(best == c)] for c in range(n)]
    return SpecializationReport(
        best_class=best,
        margins=margins,
        sets=sets,
        full_coverage=all(len(s) > 0 for s in sets),
    )


def routing_histogram(
    model: ModelState,
    corpus: Corpus,
    num_trials: int,
    seed,
    noise_scale: float = 1.0,
) -> np.ndarray:
    """(N, M) empirical routing frequencies by sample class.

    Each corpus sample is routed num_trials times with fresh exploration
    noise; rows are normalized to sum to one.
    """
    if num_trials < 1:
        raise ValueError("num_trials must be >= 1")
    rng = np.random.default_rng(seed)
    num_classes = corpus.dictionary.num_classes
    num_experts = model.num_experts
    h_all = corpus.token_sums @ model.gating.theta  # (K, M)
    classes = corpus.class_indices
    counts = np.zeros((num_classes, num_experts))
    for _ in range(num_trials):
        noise = noise_scale * rng.uniform(size=h_all.shape)
        chosen = np.argmax(h_all + noise, axis=1)
        np.add.at(counts, (classes, chosen), 1.0)
    return counts / counts.sum(axis=1, keepdims=True)


def attention_probe(
    model: ModelState,
    dictionary: SignalDictionary,
    probe_corpus: Corpus,
) -> AttentionProbeReport:
    """Average the four predicted attention scores over a held-out corpus.

    For an expert specialized to class n, only positive-label class-n
    samples are probed: there the classification token equals v_n exactly,
    so the softmax entries are read at true token positions.
    """
    report = specialization_report(model, dictionary)
    labels = probe_corpus.labels
    classes = probe_corpus.class_indices
    num_experts = model.num_experts
    L = probe_corpus.samples[0].num_tokens

    out = {
        "p_signal_signal": np.full(num_experts, np.nan),
        "p_signal_class": np.full(num_experts, np.nan),
        "p_class_signal": np.full(num_experts, np.nan),
        "p_signal_noise": np.full(num_experts, np.nan),
    }
    pos_signal = np.array([s.pos_signal for s in probe_corpus.samples])
    pos_class = np.array([s.pos_class for s in probe_corpus.samples])
    pos_distractor = np.array([s.pos_distractor for s in probe_corpus.samples])

    for i in range(num_experts):
        n = int(report.best_class[i])
        idx = np.flatnonzero((classes == n) & (labels > 0))
        if idx.size == 0:
            continue
        wkq = model.experts[i].w_kq
        toks = probe_corpus.tokens[idx]  # (S, d, L)
        rows = np.arange(idx.size)

        p_sig = softmax(np.einsum("kdl,d->kl", toks, wkq @ dictionary.cls_signals[n]), axis=1)
        p_cls = softmax(np.einsum("kdl,d->kl", toks, wkq @ dictionary.class_signals[n]), axis=1)

        out["p_signal_signal"][i] = p_sig[rows, pos_signal[idx]].mean()
        out["p_signal_class"][i] = p_sig[rows, pos_class[idx]].mean()
        out["p_class_signal"][i] = p_cls[rows, pos_signal[idx]].mean()
        if L > 3:
            planted = np.stack([pos_class[idx], pos_signal[idx], pos_distractor[idx]], axis=1)
            noise_mask = np.ones((idx.size, L), dtype=bool)
            noise_mask[rows[:, None], planted] = False
            out["p_signal_noise"][i] = p_sig[noise_mask].mean()

    return AttentionProbeReport(best_class=report.best_class, **out)


def signal_projection_probe(model: ModelState, dictionary: SignalDictionary) -> np.ndarray:
    """(M, 2N) table of head projections onto every dictionary signal.

    Columns 0..N-1 are the class signals, N..2N-1 the classification
    signals.
    """
    return model.w_stack() @ dictionary.all_signals.T


def fit_convergence_rate(
    trajectory: Sequence[TrainRecord],
    window: tuple[int, int],
) -> RateFit:
    """Fit log(expert_loss) linearly in the epoch over [window[0], window[1]].

    Geometric decay shows up as a steep negative slope with R^2 near one;
    algebraic decay fits flat. Raises on empty windows or nonpositive
    losses.
    """
    lo, hi = window
    epochs = np.array([r.epoch for r in trajectory if lo <= r.epoch <= hi], dtype=float)
    losses = np.array([r.expert_loss for r in trajectory if lo <= r.epoch <= hi])
    if epochs.size == 0:
        raise ValueError(f"window [{lo}, {hi}] selects no epochs")
    if np.any(losses <= 0):
        raise ValueError("expert loss must be strictly positive inside the fit window")
    logloss = np.log(losses)
    slope, intercept = np.polyfit(epochs, logloss, 1)
    fitted = slope * epochs + intercept
    ss_res = float(np.sum((logloss - fitted) ** 2))
    ss_tot = float(np.sum((logloss - logloss.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RateFit(window=(lo, hi), slope=float(slope), intercept=float(intercept), r_squared=r_squared)
