"""Orchestration: offline gallery preprocessing and online query processing.

Both halves are driven by one AblationConfig. Disabling a term provably
eliminates every backend call that exists only to serve it, and all backend
traffic flows through the content-addressed cache, so interrupted
preprocessing resumes for free and ablation replays cost nothing.

One deliberate asymmetry: the generated target description is captioned from
the edited query image, so enabling ``query_description`` generates that
image even in configurations that exclude its embedding from the fusion.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .backends import Backends, ImageArtifact, text_digest
from .config import AblationConfig
from .datasets import QueryRecord
from .errors import (
    EmptyGallery,
    EncoderMismatch,
    FailureThresholdExceeded,
    MissingModificationText,
)
from .fusion import (
    EmbeddingVector,
    QueryFeature,
    RankedResult,
    encoder_family,
    fuse_query,
    l2_normalize,
    rank_rows,
)
from .prompts import (
    render_brief_caption,
    render_detailed_caption,
    render_query_edit,
    template_digests,
)
from .store import FeatureStore, assemble_store, persist_store

DEFAULT_WORKERS = 8
DEFAULT_FAILURE_THRESHOLD = 0.01


@dataclass
class CostReport:
    """Accounting for one preprocessing run: wall time and per-stage traffic."""

    wall_s: float = 0.0
    n_images: int = 0
    n_failures: int = 0
    transport_calls: dict[str, int] = field(default_factory=dict)
    cache_hits: int = 0
    cache_misses: int = 0
    failure_ledger: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "wall_s": round(self.wall_s, 3),
            "n_images": self.n_images,
            "n_failures": self.n_failures,
            "transport_calls": dict(sorted(self.transport_calls.items())),
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "failure_ledger": [list(x) for x in self.failure_ledger],
        }

    def format_text(self) -> str:
        lines = [
            f"processed {self.n_images} images in {self.wall_s:.2f}s "
            f"({self.n_failures} failures)",
            f"backend calls: {sum(self.transport_calls.values())} "
            f"({', '.join(f'{k}={v}' for k, v in sorted(self.transport_calls.items())) or 'none'})",
            f"cache: {self.cache_hits} hits, {self.cache_misses} misses",
        ]
        for item_id, msg in self.failure_ledger[:10]:
            lines.append(f"  failed {item_id}: {msg}")
        return "\n".join(lines)


@dataclass
class QueryBundle:
    """Everything derived for one query: artifacts, per-term vectors, fusion."""

    record: QueryRecord
    feature: QueryFeature
    term_vectors: dict[str, EmbeddingVector]
    mental: ImageArtifact | None = None
    query_description: str | None = None
    timings: dict[str, float] = field(default_factory=dict)  # wall-clock ms per stage


def _now_ms() -> float:
    return time.perf_counter() * 1000.0


def gallery_terms_for_image(
    image: ImageArtifact,
    backends: Backends,
    config: AblationConfig,
    dataset_kind: str = "generic",
) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Run the per-image stage chain for every enabled gallery term.

    Returns (term -> normalized embedding, term -> source content digest).
    The detailed caption is produced whenever the synthetic counterpart or
    its own embedding needs it; nothing else is ever called.
    """
    terms = config.gallery_terms
    vectors: dict[str, np.ndarray] = {}
    digests: dict[str, str] = {}

    detailed = None
    if "synthetic_counterpart" in terms or "detailed_text" in terms:
        detailed = backends.caption(image, render_detailed_caption(dataset_kind))
    brief = None
    if "brief_text" in terms:
        brief = backends.caption(image, render_brief_caption(dataset_kind))
    syn = None
    if "synthetic_counterpart" in terms:
        syn = backends.generate_image(detailed, parent_id=image.image_id)

    if "real_image" in terms:
        vectors["real_image"] = l2_normalize(backends.embed_image(image)).values
        digests["real_image"] = image.digest
    if syn is not None:
        vectors["synthetic_counterpart"] = l2_normalize(backends.embed_image(syn)).values
        digests["synthetic_counterpart"] = syn.digest
    if "detailed_text" in terms:
        vectors["detailed_text"] = l2_normalize(backends.embed_text(detailed)).values
        digests["detailed_text"] = text_digest(detailed)
    if brief is not None:
        vectors["brief_text"] = l2_normalize(backends.embed_text(brief)).values
        digests["brief_text"] = text_digest(brief)
    return vectors, digests


def preprocess_gallery(
    images: Sequence[ImageArtifact],
    backends: Backends,
    config: AblationConfig,
    *,
    dataset_kind: str = "generic",
    workers: int = DEFAULT_WORKERS,
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD,
    out_dir=None,
) -> tuple[FeatureStore, CostReport]:
    """Build the gallery feature store: caption, generate, embed, fuse, persist.

    Per-image failures land in the cost report's ledger; the run only fails
    once more than ``failure_threshold`` of the items failed. Row order is the
    input order (minus failed items), so identical inputs and caches yield a
    byte-identical store.
    """
    start = time.perf_counter()
    calls_before = backends.transport_calls()
    hits_before = backends.cache.hits if backends.cache else 0
    misses_before = backends.cache.misses if backends.cache else 0

    def job(image: ImageArtifact):
        return gallery_terms_for_image(image, backends, config, dataset_kind)

    results: dict[int, tuple[dict[str, np.ndarray], dict[str, str]]] = {}
    failures: list[tuple[str, str]] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {i: pool.submit(job, img) for i, img in enumerate(images)}
        for i, fut in futures.items():
            try:
                results[i] = fut.result()
            except Exception as exc:  # ledger + threshold, not fail-fast
                failures.append((images[i].image_id, f"{type(exc).__name__}: {exc}"))

    if images and len(failures) / len(images) > failure_threshold:
        raise FailureThresholdExceeded(
            f"{len(failures)}/{len(images)} gallery items failed "
            f"(threshold {failure_threshold:.1%})",
            failures=failures,
        )

    ok_indices = sorted(results)
    image_ids = [images[i].image_id for i in ok_indices]
    term_names = sorted(config.gallery_terms)
    dim = backends.descriptors["embed_image"].dim or (
        len(next(iter(results.values()))[0][term_names[0]]) if results else 0
    )
    term_matrices = {
        t: np.ascontiguousarray(
            np.stack([results[i][0][t] for i in ok_indices])
            if ok_indices
            else np.empty((0, dim)),
            dtype="<f4",
        )
        for t in term_names
    }
    source_digests = {images[i].image_id: results[i][1] for i in ok_indices}

    encoder = encoder_family(backends.descriptors["embed_image"].model_name)
    store = assemble_store(
        image_ids,
        term_matrices,
        config,
        encoder_id=encoder,
        source_digests=source_digests,
        template_digests=template_digests(),
        dataset_kind=dataset_kind,
    )
    if out_dir is not None:
        store = persist_store(store, out_dir)

    calls_after = backends.transport_calls()
    report = CostReport(
        wall_s=time.perf_counter() - start,
        n_images=len(images),
        n_failures=len(failures),
        transport_calls={
            k: calls_after.get(k, 0) - calls_before.get(k, 0)
            for k in set(calls_before) | set(calls_after)
            if calls_after.get(k, 0) - calls_before.get(k, 0)
        },
        cache_hits=(backends.cache.hits - hits_before) if backends.cache else 0,
        cache_misses=(backends.cache.misses - misses_before) if backends.cache else 0,
        failure_ledger=failures,
    )
    return store, report


def query_term_vectors(
    record: QueryRecord,
    backends: Backends,
    terms: frozenset | set,
    *,
    ref_image: ImageArtifact | None = None,
    dataset_kind: str = "generic",
) -> tuple[dict[str, EmbeddingVector], ImageArtifact | None, str | None, dict[str, float]]:
    """Generate artifacts and normalized embeddings for the given query terms.

    Returns (term vectors, edited image, generated description, stage timings).
    """
    vectors: dict[str, EmbeddingVector] = {}
    timings: dict[str, float] = {}
    mental: ImageArtifact | None = None
    description: str | None = None

    needs_mod_text = bool(terms)  # every term consumes it: as prompt or directly
    if needs_mod_text and not record.modification_text.strip():
        raise MissingModificationText(f"query {record.query_id!r} has no modification text")

    needs_mental = "mental_image" in terms or "query_description" in terms
    if needs_mental:
        if ref_image is None:
            raise ValueError(
                f"query {record.query_id!r} needs its reference image to generate from"
            )
        prompt = render_query_edit(dataset_kind, record.modification_text, record.shared_concept)
        t0 = _now_ms()
        mental = backends.edit_image(ref_image, prompt)
        timings["edit_ms"] = _now_ms() - t0

    if "query_description" in terms:
        t0 = _now_ms()
        description = backends.caption(mental, render_brief_caption(dataset_kind))
        timings["caption_ms"] = _now_ms() - t0

    t0 = _now_ms()
    if "mental_image" in terms:
        vectors["mental_image"] = l2_normalize(backends.embed_image(mental))
    if "query_description" in terms:
        vectors["query_description"] = l2_normalize(backends.embed_text(description))
    if "modification_text" in terms:
        vectors["modification_text"] = l2_normalize(
            backends.embed_text(record.modification_text)
        )
    timings["embed_ms"] = _now_ms() - t0
    return vectors, mental, description, timings


def fuse_bundle_terms(
    term_vectors: Mapping[str, EmbeddingVector],
    config: AblationConfig,
    lam: float | None = None,
) -> QueryFeature:
    return fuse_query(
        mental=term_vectors.get("mental_image"),
        desc=term_vectors.get("query_description"),
        mod_text=term_vectors.get("modification_text"),
        lam=lam,
        config=config,
    )


def process_query(
    record: QueryRecord,
    backends: Backends,
    config: AblationConfig,
    *,
    ref_image: ImageArtifact | None = None,
    dataset_kind: str = "generic",
    lam: float | None = None,
) -> QueryBundle:
    """Run the online half for one query and fuse its feature."""
    vectors, mental, description, timings = query_term_vectors(
        record,
        backends,
        config.query_terms,
        ref_image=ref_image,
        dataset_kind=dataset_kind,
    )
    t0 = _now_ms()
    feature = fuse_bundle_terms(vectors, config, lam)
    timings["fuse_ms"] = _now_ms() - t0
    return QueryBundle(
        record=record,
        feature=feature,
        term_vectors=vectors,
        mental=mental,
        query_description=description,
        timings=timings,
    )


def retrieve(bundle: QueryBundle, store: FeatureStore, k: int) -> list[RankedResult]:
    """Rank the full store against one processed query."""
    if store.n == 0:
        raise EmptyGallery("store has no gallery features")
    store_family = encoder_family(store.manifest.encoder_id)
    query_family = encoder_family(bundle.feature.q.encoder_id)
    if store_family != query_family:
        raise EncoderMismatch(
            f"store encoder {store_family!r} vs query encoder {query_family!r}"
        )
    return rank_rows(bundle.feature.q.values, store.ids, store.matrix, k)


def process_queries(
    records: Sequence[QueryRecord],
    images_by_id: Mapping[str, ImageArtifact],
    backends: Backends,
    config: AblationConfig,
    *,
    dataset_kind: str = "generic",
) -> list[QueryBundle]:
    """Process queries in order, resolving reference images from a mapping."""
    bundles = []
    for record in records:
        ref = images_by_id.get(record.reference_image_id)
        bundles.append(
            process_query(
                record, backends, config, ref_image=ref, dataset_kind=dataset_kind
            )
        )
    return bundles


def run_manifest(
    config: AblationConfig,
    backends: Backends,
    *,
    dataset_kind: str = "generic",
    cost: CostReport | None = None,
    extra: Mapping | None = None,
) -> dict:
    """Provenance record for one run: config, templates, backends, telemetry."""
    manifest = {
        "config": config.canonical(),
        "config_digest": config.digest(extra={"templates": template_digests()}),
        "dataset_kind": dataset_kind,
        "template_digests": template_digests(),
        "backends": backends.describe(),
    }
    if cost is not None:
        manifest["cost"] = cost.to_json()
    if extra:
        manifest.update(extra)
    return manifest
