"""Persisted gallery features: a binary matrix plus a provenance manifest.

Directory layout of one store:

    store.pcsm            fused feature matrix
    manifest.json         provenance: rows, config, digests
    terms/<term>.pcsm     per-term embedding matrices, same row order

The .pcsm format is a fixed 16-byte header — magic ``PCSM``, version u32,
row count u32, dim u32, all little-endian — followed by row-major
little-endian IEEE-754 float32. Keeping the per-term matrices beside the
fused one is what lets a new term weighting be replayed without calling any
backend: re-fusion is a couple of matrix operations over files already on
disk.

Fused rows are always computed from the float32 per-term matrices (see
``fuse_term_matrices``), never from higher-precision intermediates, so a
store built by preprocessing and a store re-fused from its own term files
agree byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .config import AblationConfig
from .errors import (
    CorruptStore,
    DimensionMismatch,
    DuplicateImageId,
    MissingTermEmbedding,
    VersionUnsupported,
)

MAGIC = b"PCSM"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIII")

MATRIX_FILE = "store.pcsm"
MANIFEST_FILE = "manifest.json"
TERMS_DIR = "terms"


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_matrix(path: Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise DimensionMismatch(f"matrix must be 2-D, got shape {m.shape}")
    header = _HEADER.pack(MAGIC, STORE_VERSION, m.shape[0], m.shape[1])
    _write_atomic(path, header + m.tobytes(order="C"))


def read_matrix(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptStore(f"{path}: shorter than the fixed header")
    magic, version, n, dim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptStore(f"{path}: bad magic {magic!r}")
    if version != STORE_VERSION:
        raise VersionUnsupported(f"{path}: version {version}, supported: {STORE_VERSION}")
    payload = data[_HEADER.size :]
    expected = n * dim * 4
    if len(payload) != expected:
        raise CorruptStore(f"{path}: payload {len(payload)} bytes, header promises {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()


@dataclass(frozen=True)
class StoreManifest:
    encoder_id: str
    dim: int
    n: int
    rows: tuple[dict[str, Any], ...]  # {image_id, row_index, terms_used, source_digests}
    config: dict[str, Any]
    config_digest: str
    template_digests: dict[str, str] = field(default_factory=dict)
    dataset_kind: str = "generic"
    terms_stored: tuple[str, ...] = ()
    store_version: int = STORE_VERSION

    def to_json(self) -> str:
        payload = {
            "store_version": self.store_version,
            "encoder_id": self.encoder_id,
            "dim": self.dim,
            "n": self.n,
            "dataset_kind": self.dataset_kind,
            "config": self.config,
            "config_digest": self.config_digest,
            "template_digests": self.template_digests,
            "terms_stored": sorted(self.terms_stored),
            "rows": list(self.rows),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StoreManifest":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptStore(f"manifest is not valid JSON: {exc}") from exc
        if data.get("store_version") != STORE_VERSION:
            raise VersionUnsupported(
                f"manifest version {data.get('store_version')}, supported: {STORE_VERSION}"
            )
        return cls(
            encoder_id=data["encoder_id"],
            dim=int(data["dim"]),
            n=int(data["n"]),
            rows=tuple(data["rows"]),
            config=data["config"],
            config_digest=data["config_digest"],
            template_digests=dict(data.get("template_digests", {})),
            dataset_kind=data.get("dataset_kind", "generic"),
            terms_stored=tuple(data.get("terms_stored", ())),
        )

    @property
    def image_ids(self) -> list[str]:
        return [r["image_id"] for r in self.rows]

    def ablation_config(self) -> AblationConfig:
        return AblationConfig.from_mapping(self.config)


class FeatureStore:
    """In-memory view of one published store (immutable once loaded)."""

    def __init__(
        self,
        manifest: StoreManifest,
        matrix: np.ndarray,
        term_matrices: Mapping[str, np.ndarray] | None = None,
        path: Path | None = None,
    ):
        if matrix.shape != (manifest.n, manifest.dim):
            raise CorruptStore(
                f"matrix shape {matrix.shape} disagrees with manifest ({manifest.n}, {manifest.dim})"
            )
        self.manifest = manifest
        self.matrix = matrix
        self.term_matrices = dict(term_matrices or {})
        self.path = path

    @property
    def ids(self) -> list[str]:
        return self.manifest.image_ids

    @property
    def n(self) -> int:
        return self.manifest.n

    @property
    def dim(self) -> int:
        return self.manifest.dim

    def __len__(self) -> int:
        return self.n


def fuse_term_matrices(
    term_matrices: Mapping[str, np.ndarray],
    config: AblationConfig,
    beta: float | None = None,
) -> np.ndarray:
    """Vectorized gallery fusion over whole per-term matrices (float32 out).

    Same weighting as fusion.fuse_gallery: beta * real + (1 - beta) * syn for
    the image pair, unit weight for a lone image term and for text terms.
    """
    beta = config.beta if beta is None else float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    enabled = sorted(config.gallery_terms)
    missing = [t for t in enabled if t not in term_matrices]
    if missing:
        raise MissingTermEmbedding(f"store lacks per-term embeddings for: {missing}")

    def f64(term: str) -> np.ndarray:
        return np.asarray(term_matrices[term], dtype=np.float64)

    have_real = "real_image" in enabled
    have_syn = "synthetic_counterpart" in enabled
    if have_real and have_syn:
        fused = beta * f64("real_image") + (1.0 - beta) * f64("synthetic_counterpart")
    elif have_real:
        fused = f64("real_image").copy()
    elif have_syn:
        fused = f64("synthetic_counterpart").copy()
    else:
        fused = None
    for t in ("detailed_text", "brief_text"):
        if t in enabled:
            fused = f64(t) if fused is None else fused + f64(t)
    return np.ascontiguousarray(fused, dtype="<f4")


def assemble_store(
    image_ids: list[str],
    term_matrices: Mapping[str, np.ndarray],
    config: AblationConfig,
    *,
    encoder_id: str,
    source_digests: Mapping[str, Mapping[str, str]] | None = None,
    template_digests: Mapping[str, str] | None = None,
    dataset_kind: str = "generic",
) -> FeatureStore:
    """Fuse per-term matrices into an in-memory store with its manifest.

    ``source_digests`` maps image_id -> {term: content digest} and records
    what generation each row was derived from.
    """
    if len(set(image_ids)) != len(image_ids):
        dupes = sorted({i for i in image_ids if image_ids.count(i) > 1})
        raise DuplicateImageId(f"duplicate image ids in store: {dupes[:5]}")
    dims = {m.shape[1] for m in term_matrices.values()}
    heights = {m.shape[0] for m in term_matrices.values()}
    if len(dims) > 1:
        raise DimensionMismatch(f"term matrices disagree on dim: {sorted(dims)}")
    if heights and heights != {len(image_ids)}:
        raise DimensionMismatch(
            f"term matrices have {sorted(heights)} rows for {len(image_ids)} image ids"
        )

    fused = fuse_term_matrices(term_matrices, config)
    dim = fused.shape[1] if fused.size else (dims.pop() if dims else 0)

    tdigests = dict(template_digests or {})
    config_digest = config.digest(extra={"templates": tdigests})
    rows = tuple(
        {
            "image_id": image_id,
            "row_index": i,
            "terms_used": sorted(config.gallery_terms),
            "source_digests": dict((source_digests or {}).get(image_id, {})),
        }
        for i, image_id in enumerate(image_ids)
    )
    manifest = StoreManifest(
        encoder_id=encoder_id,
        dim=int(dim),
        n=len(image_ids),
        rows=rows,
        config=config.canonical(),
        config_digest=config_digest,
        template_digests=tdigests,
        dataset_kind=dataset_kind,
        terms_stored=tuple(sorted(term_matrices)),
    )
    return FeatureStore(manifest, fused, term_matrices)


def persist_store(store: FeatureStore, out_dir: str | Path) -> FeatureStore:
    """Write matrix + term matrices + manifest (atomically, manifest last)."""
    out = Path(out_dir)
    write_matrix(out / MATRIX_FILE, store.matrix)
    for term, matrix in sorted(store.term_matrices.items()):
        write_matrix(out / TERMS_DIR / f"{term}.pcsm", matrix)
    _write_atomic(out / MANIFEST_FILE, store.manifest.to_json().encode("utf-8"))
    return FeatureStore(store.manifest, store.matrix, store.term_matrices, path=out)


def write_store(
    out_dir: str | Path,
    image_ids: list[str],
    term_matrices: Mapping[str, np.ndarray],
    config: AblationConfig,
    *,
    encoder_id: str,
    source_digests: Mapping[str, Mapping[str, str]] | None = None,
    template_digests: Mapping[str, str] | None = None,
    dataset_kind: str = "generic",
) -> FeatureStore:
    """assemble_store followed by persist_store."""
    store = assemble_store(
        image_ids,
        term_matrices,
        config,
        encoder_id=encoder_id,
        source_digests=source_digests,
        template_digests=template_digests,
        dataset_kind=dataset_kind,
    )
    return persist_store(store, out_dir)


def read_store(path: str | Path, *, load_terms: bool = True) -> FeatureStore:
    """Load and validate a published store directory."""
    root = Path(path)
    manifest_path = root / MANIFEST_FILE
    if not manifest_path.is_file():
        raise CorruptStore(f"{root}: no {MANIFEST_FILE}")
    manifest = StoreManifest.from_json(manifest_path.read_text(encoding="utf-8"))
    matrix = read_matrix(root / MATRIX_FILE)
    if matrix.shape != (manifest.n, manifest.dim):
        raise CorruptStore(
            f"{root}: matrix shape {matrix.shape} vs manifest ({manifest.n}, {manifest.dim})"
        )
    terms: dict[str, np.ndarray] = {}
    if load_terms:
        for term in manifest.terms_stored:
            term_path = root / TERMS_DIR / f"{term}.pcsm"
            if term_path.is_file():
                terms[term] = read_matrix(term_path)
    return FeatureStore(manifest, matrix, terms, path=root)


def refuse_gallery(
    store: FeatureStore,
    config: AblationConfig,
    *,
    beta: float | None = None,
    out_dir: str | Path | None = None,
) -> FeatureStore:
    """Re-fuse a store under a new configuration from cached per-term matrices.

    Touches no backend by construction; raises MissingTermEmbedding when the
    store lacks a term the new configuration enables. Writes a new store
    directory when ``out_dir`` is given, otherwise stays in memory.
    """
    effective = config.with_weights(beta=beta) if beta is not None else config
    fused = fuse_term_matrices(store.term_matrices, effective)
    config_digest = effective.digest(extra={"templates": store.manifest.template_digests})
    rows = tuple(
        {**row, "terms_used": sorted(effective.gallery_terms)} for row in store.manifest.rows
    )
    manifest = StoreManifest(
        encoder_id=store.manifest.encoder_id,
        dim=store.manifest.dim,
        n=store.manifest.n,
        rows=rows,
        config=effective.canonical(),
        config_digest=config_digest,
        template_digests=store.manifest.template_digests,
        dataset_kind=store.manifest.dataset_kind,
        terms_stored=store.manifest.terms_stored,
    )
    if out_dir is not None:
        out = Path(out_dir)
        write_matrix(out / MATRIX_FILE, fused)
        for term, matrix in sorted(store.term_matrices.items()):
            write_matrix(out / TERMS_DIR / f"{term}.pcsm", matrix)
        _write_atomic(out / MANIFEST_FILE, manifest.to_json().encode("utf-8"))
        return FeatureStore(manifest, fused, store.term_matrices, path=out)
    return FeatureStore(manifest, fused, store.term_matrices, path=store.path)
