"""Synthetic N-mixture classification data.

A sample is a d x L token matrix carrying three planted tokens at random
distinct positions: the class signal c_n, the labeled classification signal
y * v_n, and a sign-flipped distractor eps * v_{n'}. The remaining L - 3
tokens are isotropic Gaussian noise with per-coordinate variance
noise_std^2 / d.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .signals import SignalDictionary


@dataclass
class Sample:
    """One labeled token matrix plus its full generation metadata.

    Indices are 0-based: ``class_index`` and ``distractor_index`` index the
    dictionary rows, the ``pos_*`` fields index token columns.
    """

    tokens: np.ndarray  # (d, L)
    label: int  # +1 or -1
    class_index: int
    distractor_index: int
    distractor_sign: int  # +1 or -1
    pos_class: int
    pos_signal: int
    pos_distractor: int
    noise_std: float

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[1]

    def token_sum(self) -> np.ndarray:
        return self.tokens.sum(axis=1)


@dataclass
class Corpus:
    """Ordered, immutable list of samples drawn over one dictionary."""

    samples: list[Sample]
    dictionary: SignalDictionary
    seed: int

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def tokens(self) -> np.ndarray:
        """(K, d, L) stack of all sample token matrices."""
        return np.stack([s.tokens for s in self.samples])

    @cached_property
    def labels(self) -> np.ndarray:
        """(K,) vector of +/-1 labels."""
        return np.array([s.label for s in self.samples], dtype=float)

    @cached_property
    def class_indices(self) -> np.ndarray:
        return np.array([s.class_index for s in self.samples], dtype=int)

    @cached_property
    def token_sums(self) -> np.ndarray:
        """(K, d) per-sample token sums, the gating network input."""
        return self.tokens.sum(axis=2)


def mixture_type_count(num_classes: int) -> int:
    """Number of distinct (y, eps, n, n') mixture types: 2*2*N*(N-1)."""
    return 4 * num_classes * (num_classes - 1)


def _uniform_excluding(rng: np.random.Generator, bound: int, taken: tuple[int, ...]) -> int:
    """Uniform draw from range(bound) excluding the sorted-out ``taken`` values."""
    j = int(rng.integers(bound - len(taken)))
    for t in sorted(taken):
        if j >= t:
            j += 1
    return j


def _assemble_sample(
    dictionary: SignalDictionary,
    num_tokens: int,
    noise_std: float,
    rng: np.random.Generator,
    label: int,
    distractor_sign: int,
    class_index: int,
    distractor_index: int,
) -> Sample:
    """Place the three planted tokens at fresh random positions, fill the rest with noise."""
    d, L = dictionary.dim, num_tokens
    pos_class = int(rng.integers(L))
    pos_signal = _uniform_excluding(rng, L, (pos_class,))
    pos_distractor = _uniform_excluding(rng, L, (pos_class, pos_signal))

    tokens = rng.normal(0.0, noise_std / np.sqrt(d), size=(d, L))
    tokens[:, pos_class] = dictionary.class_signals[class_index]
    tokens[:, pos_signal] = label * dictionary.cls_signals[class_index]
    tokens[:, pos_distractor] = distractor_sign * dictionary.cls_signals[distractor_index]
    return Sample(
        tokens=tokens,
        label=label,
        class_index=class_index,
        distractor_index=distractor_index,
        distractor_sign=distractor_sign,
        pos_class=pos_class,
        pos_signal=pos_signal,
        pos_distractor=pos_distractor,
        noise_std=noise_std,
    )


def draw_sample(
    dictionary: SignalDictionary,
    num_tokens: int,
    noise_std: float,
    rng: np.random.Generator,
) -> Sample:
    """Draw one sample from the mixture distribution.

    y and eps are uniform on {-1, +1}, n uniform on the classes, n' uniform
    on the other classes, and the three planted positions are uniform
    without replacement. Requires num_tokens >= 3 and at least two classes.
    """
    if num_tokens < 3:
        raise ValueError(f"num_tokens={num_tokens} leaves no room for the three planted tokens")
    if dictionary.num_classes < 2:
        raise ValueError("need at least two classes to draw a distractor")
    rng = np.random.default_rng(rng)
    label = 1 if rng.integers(2) else -1
    distractor_sign = 1 if rng.integers(2) else -1
    class_index = int(rng.integers(dictionary.num_classes))
    distractor_index = _uniform_excluding(rng, dictionary.num_classes, (class_index,))
    return _assemble_sample(
        dictionary, num_tokens, noise_std, rng, label, distractor_sign, class_index, distractor_index
    )


def build_corpus(
    dictionary: SignalDictionary,
    num_tokens: int,
    noise_std: float,
    samples_per_type: int,
    seed,
) -> Corpus:
    """Materialize a stratified corpus of K = samples_per_type * 4*N*(N-1) samples.

    Every (y, eps, n, n') mixture type appears exactly samples_per_type
    times, so the sign conflicts the training dynamics rely on cancel
    exactly instead of only in expectation. Positions and noise are freshly
    randomized per sample; the final order is a seeded shuffle.
    """
    if num_tokens < 3:
        raise ValueError(f"num_tokens={num_tokens} leaves no room for the three planted tokens")
    if dictionary.num_classes < 2:
        raise ValueError("need at least two classes to build a corpus")
    if samples_per_type < 1:
        raise ValueError("samples_per_type must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(samples_per_type):
        for class_index in range(dictionary.num_classes):
            for distractor_index in range(dictionary.num_classes):
                if distractor_index == class_index:
                    continue
                for label in (1, -1):
                    for distractor_sign in (1, -1):
                        samples.append(
                            _assemble_sample(
                                dictionary,
                                num_tokens,
                                noise_std,
                                rng,
                                label,
                                distractor_sign,
                                class_index,
                                distractor_index,
                            )
                        )
    order = rng.permutation(len(samples))
    samples = [samples[i] for i in order]
    seed_value = seed if isinstance(seed, int) else -1
    return Corpus(samples=samples, dictionary=dictionary, seed=seed_value)
