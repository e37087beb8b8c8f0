"""Run configuration: which terms are fused, with which weights.

A config is the single switchboard for the whole system. Every term the
query or gallery side may contribute can be toggled independently, which is
how the component-ablation grids are expressed: one config per grid row.

Configs serialize to TOML (files) and to a canonical JSON digest used for
store provenance and cache scoping.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

QUERY_TERM_NAMES = frozenset({"mental_image", "query_description", "modification_text"})
GALLERY_TERM_NAMES = frozenset(
    {"real_image", "synthetic_counterpart", "detailed_text", "brief_text"}
)

DEFAULT_LAMBDA = 0.3
DEFAULT_BETA = 0.5


@dataclass(frozen=True)
class AblationConfig:
    """On/off matrix of fusion terms plus the lambda / beta weights."""

    query_terms: frozenset = field(
        default_factory=lambda: frozenset(
            {"mental_image", "query_description", "modification_text"}
        )
    )
    gallery_terms: frozenset = field(
        default_factory=lambda: frozenset({"real_image", "synthetic_counterpart"})
    )
    lam: float = DEFAULT_LAMBDA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        object.__setattr__(self, "query_terms", frozenset(self.query_terms))
        object.__setattr__(self, "gallery_terms", frozenset(self.gallery_terms))
        bad_q = self.query_terms - QUERY_TERM_NAMES
        bad_g = self.gallery_terms - GALLERY_TERM_NAMES
        if bad_q or bad_g:
            raise ValueError(f"unknown terms: {sorted(bad_q | bad_g)}")
        if not self.query_terms:
            raise ValueError("query_terms must not be empty")
        if not self.gallery_terms:
            raise ValueError("gallery_terms must not be empty")
        for name, value in (("lambda", self.lam), ("beta", self.beta)):
            if not 0.0 <= float(value) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")

    def canonical(self) -> dict[str, Any]:
        return {
            "query_terms": sorted(self.query_terms),
            "gallery_terms": sorted(self.gallery_terms),
            "lambda": float(self.lam),
            "beta": float(self.beta),
        }

    def digest(self, extra: Mapping[str, Any] | None = None) -> str:
        """SHA-256 over the canonical form, optionally salted with extras
        (e.g. prompt-template digests) that should also invalidate a store."""
        payload: dict[str, Any] = self.canonical()
        if extra:
            payload["extra"] = {str(k): extra[k] for k in sorted(extra)}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def with_weights(self, lam: float | None = None, beta: float | None = None) -> "AblationConfig":
        return replace(
            self,
            lam=self.lam if lam is None else float(lam),
            beta=self.beta if beta is None else float(beta),
        )

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "AblationConfig":
        kwargs: dict[str, Any] = {}
        if "query_terms" in data:
            kwargs["query_terms"] = frozenset(data["query_terms"])
        if "gallery_terms" in data:
            kwargs["gallery_terms"] = frozenset(data["gallery_terms"])
        if "lambda" in data:
            kwargs["lam"] = float(data["lambda"])
        if "beta" in data:
            kwargs["beta"] = float(data["beta"])
        return cls(**kwargs)


def load_run_config(path: str | Path) -> dict[str, Any]:
    """Parse a TOML run-config file into a plain dict.

    Top-level keys configure fusion (see AblationConfig.from_mapping); the
    optional [backends] table configures model endpoints (see backends.pool).
    """
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_ablation_grid(path: str | Path, base: AblationConfig | None = None) -> list[tuple[str, AblationConfig]]:
    """Parse a grid file: ``[[rows]]`` tables, each one config.

    Rows inherit lambda/beta from ``base`` (or the defaults) unless they
    override them. Returns (row_name, config) pairs in file order.
    """
    base = base or AblationConfig()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    rows = data.get("rows")
    if not rows:
        raise ValueError(f"grid file {path} has no [[rows]] entries")
    out: list[tuple[str, AblationConfig]] = []
    for i, row in enumerate(rows):
        name = str(row.get("name", f"row{i:02d}"))
        cfg = AblationConfig(
            query_terms=frozenset(row.get("query_terms", sorted(base.query_terms))),
            gallery_terms=frozenset(row.get("gallery_terms", sorted(base.gallery_terms))),
            lam=float(row.get("lambda", base.lam)),
            beta=float(row.get("beta", base.beta)),
        )
        out.append((name, cfg))
    return out
