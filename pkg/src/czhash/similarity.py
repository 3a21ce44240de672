"""Semi-supervised composite similarity between training instances.

Within a modality, the feature similarity ``1 / (1 + ||x_i - x_j||)`` is
boosted (or damped) by the Jaccard overlap of the two label sets when both
instances are labeled.  Across modalities, the average of the two
within-modality composites plays the role of the feature similarity and the
cross-modal Jaccard overlap is blended in the same way.

The scalar functions are the reference definitions; :func:`build_all`
evaluates them for whole matrices at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import CrossModalDataset, ScenarioSplit
from .errors import ShapeError, UndefinedSimilarityError

MODES = ("composite", "label", "feature")


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a or not b:
        raise UndefinedSimilarityError("Jaccard similarity needs two non-empty label sets")
    return len(a & b) / len(a | b)


def feature_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return 1.0 / (1.0 + float(np.linalg.norm(x - y)))


def blend(base, supplement):
    """``base * (1 + supplement - base)``, the form shared by both composites.

    Works elementwise on arrays; stays in [0, 1] for inputs in [0, 1].
    """
    return base * (1.0 + (supplement - base))


def intra_composite(feat_sim: float, a, b) -> float:
    if a and b:
        return blend(feat_sim, jaccard(a, b))
    return feat_sim


def inter_composite(jacc12, s11_ij: float, s22_ij: float) -> float:
    """Cross-modal composite; ``jacc12`` is ``None`` unless both sides are labeled."""
    mean = 0.5 * (s11_ij + s22_ij)
    if jacc12 is None:
        return mean
    return blend(jacc12, mean)


@dataclass(frozen=True, eq=False)
class SimilarityMatrices:
    s11: np.ndarray
    s22: np.ndarray
    s12: np.ndarray
    mode: str = "composite"

    @property
    def n(self) -> int:
        return self.s11.shape[0]


def _indicator(label_sets: Sequence[frozenset], vocab: dict[str, int]) -> np.ndarray:
    out = np.zeros((len(label_sets), len(vocab)))
    for i, labels in enumerate(label_sets):
        for lab in labels:
            out[i, vocab[lab]] = 1.0
    return out


def jaccard_matrix(rows: Sequence[frozenset], cols: Sequence[frozenset]) -> np.ndarray:
    """Pairwise Jaccard overlap; entries involving an empty set are 0."""
    vocab = {lab: k for k, lab in enumerate(sorted(set().union(*rows, *cols)))}
    a = _indicator(rows, vocab)
    b = _indicator(cols, vocab)
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return out


def feature_similarity_matrix(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + cdist(x, x))


def composite_matrices(
    x1: np.ndarray,
    x2: np.ndarray,
    labels1: Sequence[frozenset],
    labels2: Sequence[frozenset],
    mode: str = "composite",
) -> SimilarityMatrices:
    """Similarity matrices for explicit features and (visible) label sets.

    ``mode="label"`` keeps only the Jaccard terms (0 where undefined);
    ``mode="feature"`` ignores labels altogether.
    """
    if mode not in MODES:
        raise ValueError(f"unknown similarity mode {mode!r}")
    if not (x1.shape[0] == x2.shape[0] == len(labels1) == len(labels2)):
        raise ShapeError("features and label sets must describe the same instances")
    lab1 = np.array([bool(s) for s in labels1])
    lab2 = np.array([bool(s) for s in labels2])
    j11 = jaccard_matrix(labels1, labels1)
    j22 = jaccard_matrix(labels2, labels2)
    j12 = jaccard_matrix(labels1, labels2)

    if mode == "label":
        return SimilarityMatrices(j11, j22, j12, mode)

    f11 = feature_similarity_matrix(x1)
    f22 = feature_similarity_matrix(x2)
    if mode == "feature":
        return SimilarityMatrices(f11, f22, 0.5 * (f11 + f22), mode)

    both11 = lab1[:, None] & lab1[None, :]
    both22 = lab2[:, None] & lab2[None, :]
    both12 = lab1[:, None] & lab2[None, :]
    s11 = np.where(both11, blend(f11, j11), f11)
    s22 = np.where(both22, blend(f22, j22), f22)
    mean = 0.5 * (s11 + s22)
    s12 = np.where(both12, blend(j12, mean), mean)
    return SimilarityMatrices(s11, s22, s12, mode)


def build_all(
    ds: CrossModalDataset, split: ScenarioSplit, mode: str = "composite"
) -> SimilarityMatrices:
    """Similarity matrices over the split's training instances.

    Masked instances and categories a modality has not seen are invisible.
    """
    if not split.train:
        raise ValueError("split has no training instances")
    idx = np.asarray(split.train)
    return composite_matrices(
        ds.modality1.features[idx],
        ds.modality2.features[idx],
        split.visible_labels(ds, 1),
        split.visible_labels(ds, 2),
        mode,
    )


def save_similarity(sims: SimilarityMatrices, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("s11", "s22", "s12"):
        np.savetxt(out / f"{name}.csv", getattr(sims, name), delimiter=",", fmt="%.17g")
