"""Feature math: normalization, weighted fusion, cosine similarity, ranking.

Everything here is pure and side-effect free. Query features combine up to
three embedded terms (mental image, generated target description, raw
modification text); gallery features combine up to four (real photo,
synthetic counterpart, detailed and brief descriptions). Each input is
expected to be L2-normalized by the caller before fusion; fused outputs are
deliberately not re-normalized because cosine ranking is scale invariant.

Ranking is an exact scan. Ties are broken by ascending image id, which makes
every ordering total: partitioned scoring merged on (score desc, id asc)
reproduces the single-pass result bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .config import AblationConfig
from .errors import (
    DegenerateVectorWarning,
    DimensionMismatch,
    EmptyGallery,
    EmptyTermSet,
    NonFiniteInput,
    UnknownImageId,
    ZeroVector,
)

if TYPE_CHECKING:
    from .store import FeatureStore

QUERY_TERMS = ("mental_image", "query_description", "modification_text")
GALLERY_TERMS = ("real_image", "synthetic_counterpart", "detailed_text", "brief_text")


def encoder_family(encoder_id: str) -> str:
    """Family prefix of an encoder id ("clip-vit-l14:text" -> "clip-vit-l14")."""
    return encoder_id.split(":", 1)[0]


@dataclass(frozen=True)
class EmbeddingVector:
    """A fixed-dimension real vector tagged with the encoder that produced it."""

    values: np.ndarray
    encoder_id: str

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise DimensionMismatch(f"expected a 1-D vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput(f"vector for encoder {self.encoder_id!r} has NaN/Inf")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class QueryFeature:
    """Fused query-side vector plus the weights and terms that built it."""

    q: EmbeddingVector
    lam: float
    terms_used: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class GalleryFeature:
    """Fused gallery-side vector for one database image."""

    phi: EmbeddingVector
    image_id: str
    beta: float
    terms_used: frozenset = field(default_factory=frozenset)


@dataclass(frozen=True)
class RankedResult:
    image_id: str
    score: float
    rank: int  # 1-based, consecutive


def l2_normalize(v: EmbeddingVector) -> EmbeddingVector:
    """Scale to unit Euclidean norm; the zero vector passes through with a warning."""
    n = v.norm
    if n == 0.0:
        warnings.warn(
            f"normalizing a zero vector (encoder {v.encoder_id!r})",
            DegenerateVectorWarning,
            stacklevel=2,
        )
        return v
    return EmbeddingVector(v.values / n, v.encoder_id)


def _check_dims(vectors: Iterable[EmbeddingVector]) -> int:
    dims = {v.dim for v in vectors}
    if len(dims) > 1:
        raise DimensionMismatch(f"fusion inputs disagree on dim: {sorted(dims)}")
    return dims.pop()


def fuse_query(
    mental: EmbeddingVector | None = None,
    desc: EmbeddingVector | None = None,
    mod_text: EmbeddingVector | None = None,
    *,
    lam: float | None = None,
    config: AblationConfig,
) -> QueryFeature:
    """Fuse query-side terms into a single vector.

    With generated terms and the modification text both active the result is
    lam * (mental + desc) + (1 - lam) * mod_text. When the modification text
    is inactive the surviving terms are summed with unit weight (lam does not
    apply); when it is the only active term it passes through unweighted.

    Active means: enabled in ``config.query_terms`` and actually provided.
    """
    lam = config.lam if lam is None else float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")

    provided = {"mental_image": mental, "query_description": desc, "modification_text": mod_text}
    active = {t: v for t, v in provided.items() if t in config.query_terms and v is not None}
    if not active:
        raise EmptyTermSet(
            f"no active query terms (enabled: {sorted(config.query_terms)}, "
            f"provided: {sorted(t for t, v in provided.items() if v is not None)})"
        )
    _check_dims(active.values())

    generated = [active[t] for t in ("mental_image", "query_description") if t in active]
    mod = active.get("modification_text")

    if mod is not None and generated:
        q = lam * sum(v.values for v in generated) + (1.0 - lam) * mod.values
    elif mod is not None:
        q = mod.values
    else:
        q = sum(v.values for v in generated)

    fused = EmbeddingVector(q, next(iter(active.values())).encoder_id)
    if fused.norm == 0.0:
        raise ZeroVector("fused query vector is zero; refusing to rank with it")
    return QueryFeature(q=fused, lam=lam, terms_used=frozenset(active))


def fuse_gallery(
    real: EmbeddingVector | None = None,
    syn: EmbeddingVector | None = None,
    detailed_text: EmbeddingVector | None = None,
    brief_text: EmbeddingVector | None = None,
    *,
    beta: float | None = None,
    config: AblationConfig,
    image_id: str,
) -> GalleryFeature:
    """Fuse gallery-side terms for one database image.

    With both image terms active the result is beta * real + (1 - beta) * syn;
    beta = 0.5 reproduces the plain sum up to a factor of exactly 0.5, which is
    ranking-equivalent under cosine. A lone image term passes through with unit
    weight, and active text terms are always added with unit weight.
    """
    beta = config.beta if beta is None else float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")

    provided = {
        "real_image": real,
        "synthetic_counterpart": syn,
        "detailed_text": detailed_text,
        "brief_text": brief_text,
    }
    active = {t: v for t, v in provided.items() if t in config.gallery_terms and v is not None}
    if not active:
        raise EmptyTermSet(
            f"no active gallery terms for image {image_id!r} "
            f"(enabled: {sorted(config.gallery_terms)})"
        )
    _check_dims(active.values())

    r, s = active.get("real_image"), active.get("synthetic_counterpart")
    if r is not None and s is not None:
        phi = beta * r.values + (1.0 - beta) * s.values
    elif r is not None:
        phi = r.values.copy()
    elif s is not None:
        phi = s.values.copy()
    else:
        phi = None

    for t in ("detailed_text", "brief_text"):
        if t in active:
            phi = active[t].values if phi is None else phi + active[t].values

    fused = EmbeddingVector(phi, next(iter(active.values())).encoder_id)
    if fused.norm == 0.0:
        raise ZeroVector(f"fused gallery vector for {image_id!r} is zero")
    return GalleryFeature(phi=fused, image_id=image_id, beta=beta, terms_used=frozenset(active))


def cosine_similarity(q: EmbeddingVector, phi: EmbeddingVector) -> float:
    """q . phi / (||q|| ||phi||); raises on zero vectors or dim mismatch."""
    if q.dim != phi.dim:
        raise DimensionMismatch(f"cosine over dims {q.dim} vs {phi.dim}")
    qn, pn = q.norm, phi.norm
    if qn == 0.0 or pn == 0.0:
        raise ZeroVector("cosine similarity is undefined for zero vectors")
    return float(np.dot(q.values, phi.values) / (qn * pn))


def score_rows(q_values: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Cosine of one query vector against every matrix row (float64)."""
    q = np.asarray(q_values, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ZeroVector("query vector is zero")
    row_norms = np.linalg.norm(np.asarray(matrix, dtype=np.float64), axis=1)
    if np.any(row_norms == 0.0):
        raise ZeroVector("gallery matrix contains a zero row")
    return (matrix @ q) / (row_norms * qn)


def rank_rows(
    q_values: np.ndarray, ids: Sequence[str], matrix: np.ndarray, k: int
) -> list[RankedResult]:
    """Rank matrix rows by cosine against q (score desc, image id asc)."""
    if len(ids) == 0:
        raise EmptyGallery("cannot rank an empty gallery")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = score_rows(q_values, matrix)
    id_arr = np.asarray(ids, dtype=str)
    order = np.lexsort((id_arr, -scores))
    take = order[: min(k, len(ids))]
    return [
        RankedResult(image_id=str(id_arr[i]), score=float(scores[i]), rank=r + 1)
        for r, i in enumerate(take)
    ]


def rank_topk(q: QueryFeature, gallery: Sequence[GalleryFeature], k: int) -> list[RankedResult]:
    """Top-k exact scan over a list of fused gallery features."""
    if not gallery:
        raise EmptyGallery("cannot rank an empty gallery")
    dims = {g.phi.dim for g in gallery} | {q.q.dim}
    if len(dims) > 1:
        raise DimensionMismatch(f"gallery/query dims disagree: {sorted(dims)}")
    matrix = np.stack([g.phi.values for g in gallery])
    return rank_rows(q.q.values, [g.image_id for g in gallery], matrix, k)


def rank_subset(
    q: QueryFeature,
    gallery: "FeatureStore | Sequence[GalleryFeature]",
    subset_ids: Sequence[str],
) -> list[RankedResult]:
    """Rank only the named subset members, with the global scoring and tie-break.

    ``gallery`` is either a FeatureStore (``ids`` + ``matrix``) or a feature
    list. Relative order of shared members always matches the global ranking
    because scores and the tie-break are identical.
    """
    if hasattr(gallery, "matrix"):
        ids = list(gallery.ids)
        matrix = gallery.matrix
    else:
        ids = [g.image_id for g in gallery]
        matrix = np.stack([g.phi.values for g in gallery]) if gallery else np.empty((0, q.q.dim))

    index = {image_id: i for i, image_id in enumerate(ids)}
    missing = [s for s in subset_ids if s not in index]
    if missing:
        raise UnknownImageId(f"subset ids not in gallery: {missing[:5]}")
    rows = [index[s] for s in subset_ids]
    sub_matrix = np.asarray(matrix)[rows]
    return rank_rows(q.q.values, list(subset_ids), sub_matrix, k=len(rows))
