"""Orthonormal signal dictionaries for the synthetic mixture-classification task.

Each task instance is defined over two families of unit vectors in R^d:
N class signals (which class a sample belongs to) and N classification
signals (whose sign carries the label). All 2N vectors are mutually
orthogonal, which requires d >= 2N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-12


class DimensionTooSmallError(ValueError):
    """Ambient dimension cannot hold 2N orthonormal vectors."""


@dataclass(frozen=True)
class SignalDictionary:
    """Immutable bundle of class signals and classification signals.

    ``class_signals`` and ``cls_signals`` are (N, d) arrays; row ``n`` holds
    the n-th signal vector. The union of all 2N rows is orthonormal.
    """

    dim: int
    num_classes: int
    class_signals: np.ndarray
    cls_signals: np.ndarray

    def __post_init__(self):
        if self.dim < 2 * self.num_classes:
            raise DimensionTooSmallError(
                f"dim={self.dim} cannot hold {2 * self.num_classes} orthonormal signals"
            )
        if self.class_signals.shape != (self.num_classes, self.dim):
            raise ValueError("class_signals must have shape (num_classes, dim)")
        if self.cls_signals.shape != (self.num_classes, self.dim):
            raise ValueError("cls_signals must have shape (num_classes, dim)")

    @property
    def all_signals(self) -> np.ndarray:
        """(2N, d) array: class signals stacked over classification signals."""
        return np.vstack([self.class_signals, self.cls_signals])

    def gram(self) -> np.ndarray:
        """Gram matrix of all 2N signals; identity for a valid dictionary."""
        s = self.all_signals
        return s @ s.T

    def max_orthogonality_defect(self) -> float:
        """Largest absolute deviation of the Gram matrix from the identity."""
        g = self.gram()
        return float(np.max(np.abs(g - np.eye(2 * self.num_classes))))

    def validate(self, tol: float = ORTHO_TOL) -> None:
        if self.max_orthogonality_defect() > tol:
            raise ValueError("signal dictionary is not orthonormal within tolerance")


def build_dictionary(dim: int, num_classes: int, seed) -> SignalDictionary:
    """Draw a random orthonormal dictionary of 2N signals in R^dim.

    A dim x 2N standard Gaussian matrix is drawn from the seeded RNG and its
    columns are orthonormalized; the first N columns become the class
    signals, the next N the classification signals. Identical (dim,
    num_classes, seed) inputs produce bitwise-identical dictionaries.
    """
    if dim < 2 * num_classes:
        raise DimensionTooSmallError(
            f"dim={dim} is too small for num_classes={num_classes}; need dim >= {2 * num_classes}"
        )
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((dim, 2 * num_classes))
    q, _ = np.linalg.qr(raw)
    cols = q.T  # (2N, d), orthonormal rows
    return SignalDictionary(
        dim=dim,
        num_classes=num_classes,
        class_signals=cols[:num_classes].copy(),
        cls_signals=cols[num_classes:].copy(),
    )


def canonical_basis_dictionary(num_classes: int) -> SignalDictionary:
    """Deterministic fixture: d = 2N, c_n = e_n, v_n = e_{N+n}."""
    n = num_classes
    eye = np.eye(2 * n)
    return SignalDictionary(
        dim=2 * n,
        num_classes=n,
        class_signals=eye[:n].copy(),
        cls_signals=eye[n:].copy(),
    )
