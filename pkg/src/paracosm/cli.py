"""Command-line interface: toy, preprocess, query, eval, ablate, serve.

Exit codes: 0 success, 1 usage error, 2 runtime failure (including a
preprocessing run that breached its failure threshold).

Anything that enters a cache key (endpoints, weights, term sets, generation
parameters) lives in a TOML run-config file rather than flags, so run
manifests capture full provenance; flags cover per-invocation knobs like
paths, k, and the seed. Toy dataset directories pin their own backend world
(seed, dim, generation size) in dataset.json and those values win, because
the planted ground truth is only valid in that world.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import click

from . import report as report_mod
from .backends import Backends, ImageArtifact, build_backends, image_from_file
from .config import AblationConfig, load_ablation_grid, load_run_config
from .datasets import (
    QueryRecord,
    generate_toy_benchmark,
    load_circo,
    load_cirr,
    load_fashioniq,
    load_records,
    save_records,
)
from .errors import ParacosmError
from .fusion import rank_rows
from .metrics import evaluate
from .pipeline import (
    fuse_bundle_terms,
    preprocess_gallery,
    process_query,
    query_term_vectors,
    retrieve,
    run_manifest,
)
from .store import read_store, refuse_gallery


@dataclass
class DatasetContext:
    kind: str
    records: list[QueryRecord]
    gallery_ids: list[str]
    images_dir: Path | None
    plants: dict[str, str]
    meta: dict[str, Any]

    def image(self, image_id: str) -> ImageArtifact:
        if self.images_dir is None:
            raise click.UsageError("this dataset has no image directory")
        for ext in (".png", ".jpg", ".jpeg"):
            candidate = self.images_dir / f"{image_id}{ext}"
            if candidate.is_file():
                return image_from_file(candidate, image_id)
        raise FileNotFoundError(f"no image file for id {image_id!r} under {self.images_dir}")


def _load_dataset(
    path: str,
    kind: str | None,
    category: str | None,
    split: str,
    images_dir: str | None = None,
) -> DatasetContext:
    p = Path(path)
    meta_file = p / "dataset.json" if p.is_dir() else None
    if meta_file is not None and meta_file.is_file():
        meta = json.loads(meta_file.read_text(encoding="utf-8"))
        plants_file = p / "plants.json"
        plants = (
            json.loads(plants_file.read_text(encoding="utf-8")) if plants_file.is_file() else {}
        )
        return DatasetContext(
            kind=meta.get("dataset_kind", "generic"),
            records=load_records(p / "queries.jsonl"),
            gallery_ids=json.loads((p / "gallery.json").read_text(encoding="utf-8")),
            images_dir=p / "images",
            plants=plants,
            meta=meta,
        )
    if kind == "cirr":
        records, gallery = load_cirr(p, split)
    elif kind == "circo":
        records, gallery = load_circo(p, split)
    elif kind == "fashioniq":
        if not category:
            raise click.UsageError("--category is required for fashioniq datasets")
        records, gallery = load_fashioniq(p, category)
    else:
        raise click.UsageError(
            f"{path} is not a toy dataset directory; pass --dataset-kind cirr|circo|fashioniq"
        )
    return DatasetContext(
        kind=kind,
        records=records,
        gallery_ids=gallery,
        images_dir=Path(images_dir) if images_dir else None,
        plants={},
        meta={},
    )


def _build_backends(
    run_config: dict[str, Any], ctx: DatasetContext | None, seed: int | None, cache_dir: str | None
) -> Backends:
    merged = dict(run_config)
    backends_cfg = dict(merged.get("backends", {}))
    if ctx is not None and ctx.meta:
        # toy worlds are authoritative for the knobs their plants depend on
        for key in ("seed", "dim", "generation_size"):
            if key in ctx.meta:
                backends_cfg[key] = ctx.meta[key]
    merged["backends"] = backends_cfg
    return build_backends(
        merged,
        seed=seed,
        cache_dir=cache_dir,
        plants=ctx.plants if ctx is not None else None,
    )


def _ablation_config(run_config: dict[str, Any]) -> AblationConfig:
    return AblationConfig.from_mapping(run_config)


@click.group()
def cli():
    """Composed image retrieval with generated mental images and counterparts."""


@cli.command("toy")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n-queries", default=100, show_default=True, type=int)
@click.option("--n-gallery", default=500, show_default=True, type=int)
@click.option("--plant-rate", default=1.0, show_default=True, type=float)
@click.option("--dim", default=64, show_default=True, type=int, help="Mock embedding dim.")
@click.option("--image-size", default=16, show_default=True, type=int)
@click.option("--generation-size", default=64, show_default=True, type=int)
def cmd_toy(out_dir, seed, n_queries, n_gallery, plant_rate, dim, image_size, generation_size):
    """Generate a seeded toy benchmark with plantable ground truth."""
    backends = Backends.mock(seed=seed, dim=dim, generation_size=generation_size)
    records, images, _ = generate_toy_benchmark(
        seed, n_queries, n_gallery, plant_rate, backends=backends, image_size=image_size
    )
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for artifact in images:
        (out / "images" / f"{artifact.image_id}.png").write_bytes(artifact.pixel_data)
    save_records(records, out / "queries.jsonl")
    (out / "gallery.json").write_text(
        json.dumps([a.image_id for a in images]), encoding="utf-8"
    )
    transport = backends.mock_transport
    (out / "plants.json").write_text(
        json.dumps(transport.plants, sort_keys=True), encoding="utf-8"
    )
    (out / "dataset.json").write_text(
        json.dumps(
            {
                "dataset_kind": "generic",
                "seed": seed,
                "dim": dim,
                "generation_size": generation_size,
                "image_size": image_size,
                "n_queries": n_queries,
                "n_gallery": n_gallery,
                "plant_rate": plant_rate,
            },
            sort_keys=True,
            indent=2,
        ),
        encoding="utf-8",
    )
    click.echo(f"toy benchmark written to {out} ({n_queries} queries, {n_gallery} gallery)")


_dataset_options = [
    click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True)),
    click.option("--dataset-kind", default=None, type=click.Choice(["cirr", "circo", "fashioniq"])),
    click.option("--category", default=None, type=click.Choice(["shirt", "dress", "toptee"])),
    click.option("--split", default="val", show_default=True),
    click.option("--images-dir", default=None, type=click.Path(exists=True),
                 help="Image files for annotation-file datasets (<id>.png/.jpg)."),
]


def dataset_options(fn: Callable) -> Callable:
    for opt in reversed(_dataset_options):
        fn = opt(fn)
    return fn


@cli.command("preprocess")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@dataset_options
@click.option("--out", "out_store", required=True, type=click.Path())
@click.option("--seed", default=None, type=int, help="Override the mock seed.")
@click.option("--cache-dir", default=None, type=click.Path())
@click.option("--workers", default=8, show_default=True, type=int)
@click.option("--failure-threshold", default=0.01, show_default=True, type=float)
def cmd_preprocess(
    config_path, dataset_path, dataset_kind, category, split, images_dir, out_store, seed,
    cache_dir, workers, failure_threshold,
):
    """Build the gallery feature store ahead of queries."""
    run_config = load_run_config(config_path) if config_path else {}
    ctx = _load_dataset(dataset_path, dataset_kind, category, split, images_dir)
    backends = _build_backends(run_config, ctx, seed, cache_dir or _default_cache(dataset_path))
    config = _ablation_config(run_config)

    images = [ctx.image(i) for i in ctx.gallery_ids]
    store, cost = preprocess_gallery(
        images,
        backends,
        config,
        dataset_kind=ctx.kind,
        workers=workers,
        failure_threshold=failure_threshold,
        out_dir=out_store,
    )
    manifest = run_manifest(config, backends, dataset_kind=ctx.kind, cost=cost)
    (Path(out_store) / "run_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
    )
    click.echo(cost.format_text())
    click.echo(f"store written to {out_store} (n={store.n}, dim={store.dim})")


def _default_cache(dataset_path: str) -> str:
    p = Path(dataset_path)
    base = p if p.is_dir() else p.parent
    return str(base / ".paracosm-cache")


@cli.command("query")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--mod", "mod_text", required=True)
@click.option("--shared-concept", default=None)
@click.option("--lambda", "lam", default=None, type=float, help="Fusion weight override.")
@click.option("-k", "top_k", default=10, show_default=True, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", default=None, type=click.Path(exists=True),
              help="Dataset dir (supplies plants and backend world for toy stores).")
@click.option("--seed", default=None, type=int)
@click.option("--cache-dir", default=None, type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path())
def cmd_query(
    store_path, ref_path, mod_text, shared_concept, lam, top_k, config_path, dataset_path,
    seed, cache_dir, out_path,
):
    """Rank the store for one composed query; results as JSON lines."""
    run_config = load_run_config(config_path) if config_path else {}
    ctx = (
        _load_dataset(dataset_path, None, None, "val") if dataset_path else None
    )
    backends = _build_backends(run_config, ctx, seed, cache_dir)
    config = _ablation_config(run_config)
    store = read_store(store_path)

    record = QueryRecord(
        query_id="cli",
        reference_image_id=Path(ref_path).stem,
        modification_text=mod_text,
        gt_target_ids=("__unknown__",),
        shared_concept=shared_concept,
    )
    bundle = process_query(
        record,
        backends,
        config,
        ref_image=image_from_file(ref_path),
        dataset_kind=store.manifest.dataset_kind,
        lam=lam,
    )
    results = retrieve(bundle, store, min(top_k, store.n))
    click.echo(f"lambda={bundle.feature.lam} beta={config.beta} k={len(results)}", err=True)

    lines = [
        json.dumps({"image_id": r.image_id, "score": r.score, "rank": r.rank}) for r in results
    ]
    for line in lines:
        click.echo(line)
    if out_path:
        Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if bundle.mental is not None:
        if out_path:
            mental_path = Path(out_path).with_name(Path(out_path).stem + "_mental.png")
        else:
            mental_path = Path.cwd() / f"mental_{bundle.mental.image_id.split(':')[-1]}.png"
        mental_path.write_bytes(bundle.mental.pixel_data)
        click.echo(f"mental image written to {mental_path}", err=True)


@cli.command("eval")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@dataset_options
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--ks", default=None, help="Comma-separated cutoffs, e.g. 1,5,10.")
@click.option("--seed", default=None, type=int)
@click.option("--cache-dir", default=None, type=click.Path())
@click.option("--out", "out_base", default=None, type=click.Path(),
              help="Report base path (writes .json/.csv/.png). Default: <store>/report.")
@click.option("--figure/--no-figure", default=True, show_default=True)
def cmd_eval(
    store_path, dataset_path, dataset_kind, category, split, images_dir, config_path, ks,
    seed, cache_dir, out_base, figure,
):
    """Process every dataset query against the store and report the metric grid."""
    run_config = load_run_config(config_path) if config_path else {}
    ctx = _load_dataset(dataset_path, dataset_kind, category, split, images_dir)
    backends = _build_backends(run_config, ctx, seed, cache_dir or _default_cache(dataset_path))
    config = _ablation_config(run_config)
    store = read_store(store_path)

    ks_list = None
    if ks:
        try:
            ks_list = [int(x) for x in ks.split(",") if x.strip()]
        except ValueError as exc:
            raise click.UsageError(f"bad --ks value {ks!r}: {exc}")
        if not ks_list:
            raise click.UsageError("--ks must name at least one cutoff")

    rankings = []
    for record in ctx.records:
        ref = ctx.image(record.reference_image_id) if ctx.images_dir else None
        bundle = process_query(
            record, backends, config, ref_image=ref, dataset_kind=ctx.kind
        )
        rankings.append(retrieve(bundle, store, store.n))

    rep = evaluate(
        ctx.kind,
        ctx.records,
        rankings,
        config,
        ks=ks_list,
        config_digest=store.manifest.config_digest,
    )
    click.echo(report_mod.format_table(rep))
    base = Path(out_base) if out_base else Path(store_path) / "report"
    outputs = report_mod.write_report_outputs(rep, base, figure=figure)
    click.echo(
        "report written: " + ", ".join(str(p) for _, p in sorted(outputs.items())), err=True
    )


@cli.command("ablate")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@dataset_options
@click.option("--grid", "grid_path", default=None, type=click.Path(exists=True),
              help="Grid TOML; defaults to the shipped main grid.")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--cache-dir", default=None, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_ablate(
    store_path, dataset_path, dataset_kind, category, split, images_dir, grid_path,
    config_path, seed, cache_dir, out_dir,
):
    """Replay a term-configuration grid from cached embeddings: one report per row."""
    run_config = load_run_config(config_path) if config_path else {}
    ctx = _load_dataset(dataset_path, dataset_kind, category, split, images_dir)
    backends = _build_backends(run_config, ctx, seed, cache_dir or _default_cache(dataset_path))
    base_config = _ablation_config(run_config)
    store = read_store(store_path)

    if grid_path is None:
        grid_path = shipped_grid("ablation_main")
    try:
        rows = load_ablation_grid(grid_path, base=base_config)
    except (ValueError, KeyError) as exc:
        raise click.UsageError(f"malformed grid file {grid_path}: {exc}")

    union_terms = frozenset().union(*(cfg.query_terms for _, cfg in rows))
    bundles = []
    for record in ctx.records:
        ref = ctx.image(record.reference_image_id) if ctx.images_dir else None
        vectors, _, _, _ = query_term_vectors(
            record, backends, union_terms, ref_image=ref, dataset_kind=ctx.kind
        )
        bundles.append(vectors)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    named_reports = []
    for name, cfg in rows:
        refused = refuse_gallery(store, cfg)
        rankings = []
        for vectors in bundles:
            feature = fuse_bundle_terms(vectors, cfg)
            rankings.append(rank_rows(feature.q.values, refused.ids, refused.matrix, refused.n))
        rep = evaluate(
            ctx.kind,
            ctx.records,
            rankings,
            cfg,
            config_digest=refused.manifest.config_digest,
        )
        report_mod.write_report_json(rep, out / f"{name}.json")
        report_mod.write_report_csv(rep, out / f"{name}.csv")
        named_reports.append((name, rep))
        click.echo(f"[{name}] " + "  ".join(f"{k}={v:.4f}" for k, v in sorted(rep.metrics.items())))

    report_mod.render_ablation_figure(named_reports, out / "ablation_summary.png")
    summary = {
        name: {"config": dict(cfg.canonical()), "metrics": rep.metrics}
        for (name, cfg), (_, rep) in zip(rows, named_reports)
    }
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8"
    )
    click.echo(f"{len(named_reports)} reports written under {out}", err=True)


def shipped_grid(name: str) -> Path:
    """Path of a grid file bundled with the package."""
    from importlib import resources

    grid = resources.files(__package__) / "grids" / f"{name}.toml"
    if not grid.is_file():
        raise click.UsageError(f"no shipped grid named {name!r}")
    return Path(str(grid))


@cli.command("serve")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", default=None, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--cache-dir", default=None, type=click.Path())
@click.option("--listen", default="127.0.0.1:8000", show_default=True)
@click.option("--frontend-dir", default=None, type=click.Path(exists=True),
              help="Static bundle to serve at /.")
def cmd_serve(store_path, dataset_path, config_path, seed, cache_dir, listen, frontend_dir):
    """Serve the query/rerank HTTP API over a published store."""
    import uvicorn

    from .service import create_app

    run_config = load_run_config(config_path) if config_path else {}
    ctx = _load_dataset(dataset_path, None, None, "val") if dataset_path else None
    backends = _build_backends(run_config, ctx, seed, cache_dir)
    config = _ablation_config(run_config)
    store = read_store(store_path)

    image_dir = ctx.images_dir if ctx else None
    app = create_app(
        store, backends, config, images_dir=image_dir, frontend_dir=frontend_dir
    )
    host, _, port = listen.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="info")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except ParacosmError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"io error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
