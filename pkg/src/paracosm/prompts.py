"""Prompt templates for the three generation stages.

Templates are UTF-8 data files under ``templates/``, named
``<dataset_kind>__<stage>.txt`` with ``{placeholder}`` slots. They are data,
not code, so wording can be audited and swapped without touching logic.
Lookup falls back from the dataset-specific file to the ``generic`` one, so
only stages whose wording actually varies per dataset carry extra files.

Rendered prompt text feeds straight into backend cache keys, so editing a
template automatically invalidates the affected cached generations. The
per-file digests additionally go into run manifests and store provenance.
"""

from __future__ import annotations

import hashlib
from importlib import resources

from .errors import MissingSharedConcept, UnknownDataset

DATASET_KINDS = ("cirr", "circo", "fashioniq", "generic")
STAGES = ("query_edit", "brief_caption", "detailed_caption")

# FashionIQ ships two human captions per query; they are merged into one
# modification text with this joiner before any template sees them.
FASHIONIQ_CAPTION_JOINER = " and "


def _template_dir():
    return resources.files(__package__) / "templates"


def template_text(dataset_kind: str, stage: str) -> str:
    """Raw template body for (dataset_kind, stage), falling back to generic."""
    if dataset_kind not in DATASET_KINDS:
        raise UnknownDataset(f"no templates for dataset kind {dataset_kind!r}")
    if stage not in STAGES:
        raise UnknownDataset(f"unknown prompt stage {stage!r}")
    for kind in (dataset_kind, "generic"):
        candidate = _template_dir() / f"{kind}__{stage}.txt"
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8").strip()
    raise UnknownDataset(f"no template file for ({dataset_kind}, {stage})")


def render_query_edit(
    dataset_kind: str, modification_text: str, shared_concept: str | None = None
) -> str:
    """Edit instruction that turns a reference image into the implied target."""
    if not modification_text or not modification_text.strip():
        raise ValueError("modification_text must be non-empty")
    body = template_text(dataset_kind, "query_edit")
    if dataset_kind == "circo":
        if not shared_concept or not shared_concept.strip():
            raise MissingSharedConcept(
                "circo query prompts need a shared concept alongside the relative caption"
            )
        return body.format(
            modification_text=modification_text.strip(), shared_concept=shared_concept.strip()
        )
    return body.format(modification_text=modification_text.strip())


def render_brief_caption(dataset_kind: str = "generic") -> str:
    """Single-sentence, visual-content-only description instruction."""
    return template_text(dataset_kind, "brief_caption")


def render_detailed_caption(dataset_kind: str = "generic") -> str:
    """Exhaustive description instruction used as the image-generation prompt."""
    return template_text(dataset_kind, "detailed_caption")


def join_fashioniq_captions(captions: list[str]) -> str:
    return FASHIONIQ_CAPTION_JOINER.join(c.strip() for c in captions)


def template_digests() -> dict[str, str]:
    """SHA-256 of every shipped template file, keyed by file stem."""
    out: dict[str, str] = {}
    for entry in sorted(_template_dir().iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".txt"):
            data = entry.read_bytes()
            out[entry.name[: -len(".txt")]] = hashlib.sha256(data).hexdigest()
    return out
