"""Benchmark annotation loaders and the seeded toy benchmark.

The three public benchmarks ship JSON annotations with mutually different
field names; the loaders here are the only schema-aware code and normalize
everything into QueryRecord. A record that cannot be normalized raises
SchemaError naming the offending field path — nothing is silently dropped.

The toy benchmark is the desk-scale stand-in for GPU-scale evaluation:
deterministic raster images, deterministic queries, and an optional planted
fraction whose generated artifacts are registered with the mock embedder so
their targets become provable rank-1 retrievals.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

from .backends import Backends, ImageArtifact, content_digest, text_digest
from .backends.mock import mock_caption_text, mock_edit_png, mock_t2i_png
from .errors import InvalidRate, SchemaError
from .prompts import (
    join_fashioniq_captions,
    render_brief_caption,
    render_detailed_caption,
    render_query_edit,
)

FASHIONIQ_CATEGORIES = ("shirt", "dress", "toptee")


@dataclass(frozen=True)
class QueryRecord:
    """One normalized multimodal query."""

    query_id: str
    reference_image_id: str
    modification_text: str
    gt_target_ids: tuple[str, ...]
    shared_concept: str | None = None
    subset_ids: tuple[str, ...] | None = None
    category: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "gt_target_ids", tuple(self.gt_target_ids))
        if self.subset_ids is not None:
            object.__setattr__(self, "subset_ids", tuple(self.subset_ids))
        if not self.gt_target_ids:
            raise ValueError(f"query {self.query_id!r} has no ground-truth targets")
        if set(self.gt_target_ids) <= {self.reference_image_id}:
            raise ValueError(
                f"query {self.query_id!r}: every target equals the reference image"
            )

    def to_json(self) -> dict[str, Any]:
        data = asdict(self)
        data["gt_target_ids"] = list(self.gt_target_ids)
        if self.subset_ids is not None:
            data["subset_ids"] = list(self.subset_ids)
        return data

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "QueryRecord":
        return cls(
            query_id=data["query_id"],
            reference_image_id=data["reference_image_id"],
            modification_text=data["modification_text"],
            gt_target_ids=tuple(data["gt_target_ids"]),
            shared_concept=data.get("shared_concept"),
            subset_ids=tuple(data["subset_ids"]) if data.get("subset_ids") is not None else None,
            category=data.get("category"),
        )


def save_records(records: Iterable[QueryRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def load_records(path: str | Path) -> list[QueryRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(QueryRecord.from_json(json.loads(line)))
    return out


# --- shared loader plumbing ---------------------------------------------------


def _load_json_list(path: str | Path) -> list[Any]:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"not valid JSON: {exc}", field=str(p))
    if not isinstance(data, list) or not data:
        raise SchemaError("expected a non-empty JSON list of records", field=str(p))
    return data


def _need(record: dict, key: str, where: str) -> Any:
    if key not in record or record[key] in (None, ""):
        raise SchemaError("missing or empty", field=f"{where}.{key}")
    return record[key]


def _check_closure(ids: Iterable[str], gallery: set[str], where: str) -> None:
    missing = sorted(set(ids) - gallery)
    if missing:
        raise SchemaError(f"ids absent from gallery: {missing[:5]}", field=where)


def _sibling_split_file(annotation_path: Path, names: list[str]) -> Path | None:
    for base in (annotation_path.parent, annotation_path.parent.parent):
        for name in names:
            candidate = base / "image_splits" / name
            if candidate.is_file():
                return candidate
    return None


# --- CIRR ---------------------------------------------------------------------


def load_cirr(annotation_path: str | Path, split: str = "val") -> tuple[list[QueryRecord], list[str]]:
    """Load CIRR captions; subsets keep the target and drop the reference.

    Expects the released caption list (pairid / reference / target_hard /
    caption / img_set.members). Gallery ids come from the released
    ``image_splits/split.rc2.<split>.json`` when it sits in the usual place,
    otherwise from the union of every image mentioned.
    """
    annotation_path = Path(annotation_path)
    raw = _load_json_list(annotation_path)

    records: list[QueryRecord] = []
    mentioned: set[str] = set()
    for i, rec in enumerate(raw):
        where = f"records[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError("record is not an object", field=where)
        pairid = _need(rec, "pairid", where)
        reference = str(_need(rec, "reference", where))
        target = str(_need(rec, "target_hard", where))
        caption = str(_need(rec, "caption", where))
        img_set = _need(rec, "img_set", where)
        members = img_set.get("members") if isinstance(img_set, dict) else None
        if not isinstance(members, list) or not members:
            raise SchemaError("missing or empty", field=f"{where}.img_set.members")
        members = [str(m) for m in members]
        if target not in members:
            raise SchemaError(
                f"target {target!r} not among subset members", field=f"{where}.img_set.members"
            )
        subset = tuple(m for m in members if m != reference)
        records.append(
            QueryRecord(
                query_id=str(pairid),
                reference_image_id=reference,
                modification_text=caption,
                gt_target_ids=(target,),
                subset_ids=subset,
            )
        )
        mentioned.update(members)
        mentioned.add(reference)
        mentioned.add(target)

    split_file = _sibling_split_file(annotation_path, [f"split.rc2.{split}.json"])
    if split_file is not None:
        gallery = sorted(json.loads(split_file.read_text(encoding="utf-8")).keys())
    else:
        gallery = sorted(mentioned)
    gallery_set = set(gallery)
    for i, r in enumerate(records):
        _check_closure(r.gt_target_ids, gallery_set, f"records[{i}].target_hard")
        _check_closure(r.subset_ids or (), gallery_set, f"records[{i}].img_set.members")
    return records, gallery


# --- CIRCO --------------------------------------------------------------------


def load_circo(annotation_path: str | Path, split: str = "val") -> tuple[list[QueryRecord], list[str]]:
    """Load CIRCO annotations: multi-target queries with a shared concept."""
    annotation_path = Path(annotation_path)
    raw = _load_json_list(annotation_path)

    records: list[QueryRecord] = []
    mentioned: set[str] = set()
    for i, rec in enumerate(raw):
        where = f"records[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError("record is not an object", field=where)
        qid = rec.get("id", i)
        reference = str(_need(rec, "reference_img_id", where))
        caption = str(_need(rec, "relative_caption", where))
        concept = str(_need(rec, "shared_concept", where))
        gt = rec.get("gt_img_ids")
        if not isinstance(gt, list) or not gt:
            raise SchemaError("missing or empty", field=f"{where}.gt_img_ids")
        gt_ids = tuple(dict.fromkeys(str(g) for g in gt))  # dedupe, keep order
        if set(gt_ids) <= {reference}:
            raise SchemaError("all targets equal the reference", field=f"{where}.gt_img_ids")
        records.append(
            QueryRecord(
                query_id=str(qid),
                reference_image_id=reference,
                modification_text=caption,
                gt_target_ids=gt_ids,
                shared_concept=concept,
            )
        )
        mentioned.update(gt_ids)
        mentioned.add(reference)

    gallery_file = annotation_path.parent / "gallery_ids.json"
    if gallery_file.is_file():
        gallery = sorted(str(g) for g in json.loads(gallery_file.read_text(encoding="utf-8")))
    else:
        gallery = sorted(mentioned)
    gallery_set = set(gallery)
    for i, r in enumerate(records):
        _check_closure(r.gt_target_ids, gallery_set, f"records[{i}].gt_img_ids")
    return records, gallery


# --- Fashion IQ -----------------------------------------------------------------


def load_fashioniq(
    annotation_path: str | Path, category: str
) -> tuple[list[QueryRecord], list[str]]:
    """Load one Fashion IQ category; the two human captions are joined."""
    if category not in FASHIONIQ_CATEGORIES:
        raise SchemaError(
            f"unknown category {category!r}, expected one of {FASHIONIQ_CATEGORIES}",
            field="category",
        )
    annotation_path = Path(annotation_path)
    raw = _load_json_list(annotation_path)

    records: list[QueryRecord] = []
    mentioned: set[str] = set()
    for i, rec in enumerate(raw):
        where = f"records[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError("record is not an object", field=where)
        candidate = str(_need(rec, "candidate", where))
        target = str(_need(rec, "target", where))
        captions = rec.get("captions")
        if not isinstance(captions, list) or len(captions) < 2:
            raise SchemaError(
                "expected two human captions", field=f"{where}.captions"
            )
        records.append(
            QueryRecord(
                query_id=f"{category}-{i:05d}",
                reference_image_id=candidate,
                modification_text=join_fashioniq_captions([str(c) for c in captions]),
                gt_target_ids=(target,),
                category=category,
            )
        )
        mentioned.add(candidate)
        mentioned.add(target)

    split_file = _sibling_split_file(annotation_path, [f"split.{category}.val.json"])
    if split_file is not None:
        gallery = sorted(str(g) for g in json.loads(split_file.read_text(encoding="utf-8")))
    else:
        gallery = sorted(mentioned)
    gallery_set = set(gallery)
    for i, r in enumerate(records):
        _check_closure(r.gt_target_ids, gallery_set, f"records[{i}].target")
    return records, gallery


# --- toy benchmark ---------------------------------------------------------------


def _toy_png(seed: int, image_id: str, size: int) -> bytes:
    material = hashlib.sha256(f"toyimg:{seed}:{image_id}".encode()).digest()
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(material[:8], "little")))
    pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def planted_digests_for_query(
    record: QueryRecord,
    ref_png: bytes,
    target_png: bytes,
    *,
    seed: int,
    generation_size: int,
    dataset_kind: str = "generic",
) -> list[str]:
    """Content digests of everything the pipeline will derive from this query
    and its target: the edited query image and its brief description, the raw
    modification text, the target photo, its synthetic counterpart, and both
    of its generated descriptions. Registering them under one plant key makes
    every fused variant of query and target collapse to the same direction.
    """
    edit_prompt = render_query_edit(dataset_kind, record.modification_text, record.shared_concept)
    brief_prompt = render_brief_caption(dataset_kind)
    detailed_prompt = render_detailed_caption(dataset_kind)

    mental_png = mock_edit_png(seed, content_digest(ref_png), edit_prompt, generation_size)
    t_query = mock_caption_text(content_digest(mental_png), brief_prompt)

    target_digest = content_digest(target_png)
    target_detailed = mock_caption_text(target_digest, detailed_prompt)
    target_brief = mock_caption_text(target_digest, brief_prompt)
    syn_png = mock_t2i_png(seed, target_detailed, generation_size)

    return [
        content_digest(mental_png),
        text_digest(t_query),
        text_digest(record.modification_text),
        target_digest,
        content_digest(syn_png),
        text_digest(target_detailed),
        text_digest(target_brief),
    ]


def generate_toy_benchmark(
    seed: int,
    n_queries: int,
    n_gallery: int,
    plant_rate: float,
    *,
    backends: Backends | None = None,
    image_size: int = 16,
    dataset_kind: str = "generic",
) -> tuple[list[QueryRecord], list[ImageArtifact], dict[str, list[str]]]:
    """Deterministic synthetic benchmark with controllable ground truth.

    Query i targets gallery image i and references image i+1 (mod n). The
    first round(plant_rate * n_queries) queries are planted: their derived
    artifacts are registered with the mock embedder of ``backends`` so the
    target is the exact nearest neighbor under any term configuration.
    """
    if not 0.0 <= plant_rate <= 1.0:
        raise InvalidRate(f"plant_rate must be in [0, 1], got {plant_rate}")
    if n_queries < 1 or n_gallery < 2:
        raise ValueError("need at least 1 query and 2 gallery images")
    if n_queries > n_gallery:
        raise ValueError("toy benchmark assigns distinct targets: n_queries <= n_gallery")

    images = [
        ImageArtifact(
            image_id=f"g{i:05d}",
            pixel_data=_toy_png(seed, f"g{i:05d}", image_size),
            width=image_size,
            height=image_size,
        )
        for i in range(n_gallery)
    ]
    by_id = {im.image_id: im for im in images}

    records = [
        QueryRecord(
            query_id=f"q{i:04d}",
            reference_image_id=images[(i + 1) % n_gallery].image_id,
            modification_text=f"toy edit {i}: give item {i} a new style (seed {seed})",
            gt_target_ids=(images[i].image_id,),
        )
        for i in range(n_queries)
    ]

    n_planted = int(round(plant_rate * n_queries))
    planted: dict[str, list[str]] = {}
    if n_planted > 0:
        if backends is None or backends.mock_transport is None:
            raise ValueError("plant_rate > 0 needs a mock-backed Backends pool to register plants")
        transport = backends.mock_transport
        for record in records[:n_planted]:
            digests = planted_digests_for_query(
                record,
                by_id[record.reference_image_id].pixel_data,
                by_id[record.gt_target_ids[0]].pixel_data,
                seed=transport.seed,
                generation_size=backends.generation_size,
                dataset_kind=dataset_kind,
            )
            transport.plant(record.query_id, digests)
            planted[record.query_id] = digests
    return records, images, planted
