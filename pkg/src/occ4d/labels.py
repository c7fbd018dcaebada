"""Semantic label spaces: caption-embedding clustering and palettes.

Label ids are 1-based; 0 is reserved for background everywhere in the
package. Centroid ``j`` (0-based row) therefore carries label ``j + 1``.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import InputError
from .validation import as_float_array, require

# Hue advances by the golden-ratio conjugate per label, giving maximally
# spread hues without knowing k in advance.
GOLDEN_HUE_STEP = 0.618034
PALETTE_SATURATION = 0.75
PALETTE_VALUE = 0.95


def build_palette(k: int) -> np.ndarray:
    """Return a (k, 3) uint8 palette for labels 1..k.

    Row ``i`` uses hue ``(i * 0.618034) mod 1`` at fixed saturation 0.75 and
    value 0.95; channels are truncated (not rounded) to 8 bits.
    """
    k = int(k)
    require(k >= 1, f"palette size must be >= 1, got {k}")
    out = np.empty((k, 3), dtype=np.uint8)
    for i in range(k):
        hue = (i * GOLDEN_HUE_STEP) % 1.0
        rgb = colorsys.hsv_to_rgb(hue, PALETTE_SATURATION, PALETTE_VALUE)
        out[i] = [int(c * 255.0) for c in rgb]
    return out


@dataclass(frozen=True)
class LabelSpace:
    """A fitted set of k labels: centroids, display names, palette."""

    centroids: np.ndarray
    names: tuple[str, ...]
    palette: np.ndarray

    def __post_init__(self):
        c = as_float_array(self.centroids, "centroids", ndim=2, allow_empty=False)
        names = tuple(str(n) for n in self.names)
        require(len(names) == c.shape[0], "need one name per centroid")
        pal = np.asarray(self.palette)
        require(
            pal.ndim == 2 and pal.shape == (c.shape[0], 3),
            f"palette must have shape ({c.shape[0]}, 3)",
        )
        require(pal.dtype.kind in "iu", "palette must be integer RGB")
        require(
            pal.size and int(pal.min()) >= 0 and int(pal.max()) <= 255,
            "palette entries must be 8-bit",
        )
        pal = pal.astype(np.uint8)
        if len({tuple(int(v) for v in row) for row in pal}) != len(pal):
            raise InputError("palette rows must be pairwise distinct")
        c.setflags(write=False)
        pal.setflags(write=False)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "palette", pal)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "dim": self.dim,
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "names": list(self.names),
            "palette": [[int(v) for v in row] for row in self.palette],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSpace":
        try:
            space = cls(
                np.asarray(d["centroids"], dtype=np.float64),
                tuple(d["names"]),
                np.asarray(d["palette"]),
            )
        except KeyError as exc:
            raise InputError(f"label space dict missing key {exc}") from None
        if "k" in d:
            require(int(d["k"]) == space.k, "stored k does not match centroid count")
        if "dim" in d:
            require(int(d["dim"]) == space.dim, "stored dim does not match centroids")
        return space

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "LabelSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))


def assign_label(embedding, space: LabelSpace) -> int:
    """Nearest-centroid label (1-based) for one embedding vector.

    Distances are computed as an explicit per-centroid Euclidean vector;
    exact ties go to the lower label id.
    """
    e = as_float_array(embedding, "embedding", ndim=1)
    require(
        e.shape[0] == space.dim,
        f"embedding dim {e.shape[0]} does not match label space dim {space.dim}",
    )
    distances = np.linalg.norm(space.centroids - e[None, :], axis=1)
    return int(np.argmin(distances)) + 1


class KMeansResult(NamedTuple):
    centroids: np.ndarray
    assignment: np.ndarray  # 1-based labels, shape (n,)
    inertia_history: list[float]
    n_iter: int


def _seed_plus_plus(x_sorted: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x_sorted.shape[0]
    centroids = np.empty((k, x_sorted.shape[1]))
    centroids[0] = x_sorted[int(rng.integers(n))]
    d2 = ((x_sorted - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centroids[j] = x_sorted[idx]
        d2 = np.minimum(d2, ((x_sorted - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans_fit(
    X, k: int, *, seed: int = 0, max_iter: int = 100, tol: float = 1e-6
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Seeding draws from the lexicographically sorted rows of ``X``, so the
    result depends only on the multiset of rows and the seed, not on row
    order. Iterations stop when the largest per-centroid shift of a mean
    update drops below ``tol`` or after ``max_iter`` assignments. Empty
    clusters are reseeded at the point farthest from its assigned centroid
    (deterministically, one empty cluster at a time).

    Returns
    -------
    KMeansResult
        Final centroids, the 1-based assignment under those centroids, the
        inertia recorded at every assignment iteration (non-increasing),
        and the number of assignment iterations run.
    """
    X = as_float_array(X, "X", ndim=2, allow_empty=False)
    n = X.shape[0]
    k = int(k)
    require(1 <= k <= n, f"k must lie in [1, n={n}], got {k}")
    max_iter = int(max_iter)
    require(max_iter >= 1, "max_iter must be >= 1")
    tol = float(tol)
    require(np.isfinite(tol) and tol >= 0.0, "tol must be finite and >= 0")

    rng = np.random.default_rng(seed)
    x_sorted = X[np.lexsort(X.T[::-1])]
    centroids = _seed_plus_plus(x_sorted, k, rng)

    def _assign(c: np.ndarray) -> np.ndarray:
        # Expanded form, dropping the per-point ||x||^2 term; np.argmin
        # breaks exact ties toward the lower centroid index.
        d2 = (c**2).sum(axis=1)[None, :] - 2.0 * (X @ c.T)
        return np.argmin(d2, axis=1)

    history: list[float] = []
    for _ in range(max_iter):
        assign = _assign(centroids)
        diff = X - centroids[assign]
        history.append(float(np.einsum("ij,ij->", diff, diff)))

        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, X)
        new_centroids = centroids.copy()
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            point_d2 = (diff**2).sum(axis=1)
            for j in np.flatnonzero(~nonempty):
                far = int(np.argmax(point_d2))
                new_centroids[j] = X[far]
                point_d2[far] = 0.0
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break

    return KMeansResult(
        centroids=centroids,
        assignment=_assign(centroids) + 1,
        inertia_history=history,
        n_iter=len(history),
    )


def kmeans(
    X,
    k: int,
    *,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-6,
    captions: Sequence[str] | None = None,
) -> LabelSpace:
    """Cluster embeddings into a :class:`LabelSpace` (see :func:`kmeans_fit`).

    Names come from the caption of the training row nearest each centroid,
    or are generated as ``label-NN`` when no captions are supplied.
    """
    est = SemanticLabelSpace(k=k, seed=seed, max_iter=max_iter, tol=tol)
    est.fit(X, captions=captions)
    return est.label_space_


class SemanticLabelSpace(BaseEstimator):
    """Estimator that clusters caption embeddings into a label space.

    Parameters
    ----------
    k : int
        Number of labels (centroids). Label ids run 1..k.
    seed : int
        RNG seed for k-means++ and reseeding.
    max_iter : int
        Assignment-iteration cap for Lloyd's algorithm.
    tol : float
        Centroid-shift threshold that ends iteration.

    Attributes
    ----------
    label_space_ : LabelSpace
        Centroids, names, and palette after :meth:`fit`.
    assignments_ : ndarray
        1-based training assignment.
    inertia_history_ : list of float
        Inertia at every assignment iteration, non-increasing.
    inertia_ : float
        Final inertia.
    n_iter_ : int
        Number of assignment iterations run.
    """

    def __init__(self, k: int = 50, seed: int = 0, max_iter: int = 100, tol: float = 1e-6):
        self.k = k
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, captions: Sequence[str] | None = None):
        X = as_float_array(X, "X", ndim=2, allow_empty=False)
        if captions is not None:
            captions = [str(c) for c in captions]
            require(
                len(captions) == X.shape[0],
                f"{len(captions)} captions for {X.shape[0]} embeddings",
            )
        result = kmeans_fit(
            X, self.k, seed=self.seed, max_iter=self.max_iter, tol=self.tol
        )

        if captions is None:
            names = tuple(f"label-{j + 1:02d}" for j in range(self.k))
        else:
            picks = []
            for c in result.centroids:
                d = np.linalg.norm(X - c[None, :], axis=1)
                picks.append(captions[int(np.argmin(d))])
            names = tuple(picks)

        self.label_space_ = LabelSpace(result.centroids, names, build_palette(self.k))
        self.centroids_ = result.centroids
        self.assignments_ = result.assignment
        self.inertia_history_ = result.inertia_history
        self.inertia_ = result.inertia_history[-1]
        self.n_iter_ = result.n_iter
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "label_space_"):
            raise NotFittedError("SemanticLabelSpace must be fitted before predict")
        X = as_float_array(X, "X", ndim=2, allow_empty=False)
        require(
            X.shape[1] == self.label_space_.dim,
            f"embedding dim {X.shape[1]} does not match fitted dim {self.label_space_.dim}",
        )
        space = self.label_space_
        d = np.linalg.norm(X[:, None, :] - space.centroids[None, :, :], axis=2)
        return np.argmin(d, axis=1).astype(np.int64) + 1
