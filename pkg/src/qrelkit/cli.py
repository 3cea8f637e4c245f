"""Command-line entry point.

Every command is a deterministic function of its inputs, flags, and the
seed; reruns against an unchanged cache report hits instead of rebuilding.
Output files appear atomically or not at all.

Exit codes: 0 on success, 1 on validation or data errors, 2 on usage and
I/O errors.  ``QRELKIT_CACHE_DIR`` overrides ``--cache-dir``.
"""

from __future__ import annotations

import functools
import json
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .bench import bench_memory, bench_scaling, bench_topk, bench_ttfs
from .dataset import BinaryDataset, DatasetSpec, MultiLevelDataset, export_jsonl
from .embedding import EncoderSpec, build_cache_from_store, import_vectors, open_cache
from .errors import ConfigError, QrelkitError
from .inference import (
    DEFAULT_BATCH_SIZE,
    MiningConfig,
    mine_hard_negatives,
    plan_shards,
    read_trec_run,
    retrieve,
    write_trec_run,
)
from .metrics import MetricSpec, evaluate_run
from .qrels import (
    group_triples,
    load_qrels,
    read_query_subset,
    write_qrels_tsv,
)
from .store import VERSION, atomic_write, cached_store_from_jsonl, fingerprint_paths

_QREL_FORMATS = ("tsv", "trec")


@dataclass
class GlobalConfig:
    seed: int
    cache_dir: Path


def _resolve_cache_dir(option_value: Path | None) -> Path:
    env = os.environ.get("QRELKIT_CACHE_DIR")
    if env:
        return Path(env)
    if option_value is not None:
        return Path(option_value)
    return Path.home() / ".cache" / "qrelkit"


def _guard(fn):
    """Map exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except QrelkitError as exc:
            raise click.ClickException(str(exc))
        except FileNotFoundError as exc:
            click.echo(f"error: file not found: {exc.filename or exc}", err=True)
            sys.exit(2)
        except IsADirectoryError as exc:
            click.echo(f"error: is a directory: {exc.filename or exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
@click.option(
    "--cache-dir",
    type=click.Path(path_type=Path),
    default=None,
    help="Artifact cache directory (QRELKIT_CACHE_DIR wins when set).",
)
@click.option("--seed", type=int, default=42, show_default=True, help="Global seed.")
@click.pass_context
def main(ctx: click.Context, cache_dir: Path | None, seed: int) -> None:
    """Memory-efficient IR dataset toolkit."""
    ctx.obj = GlobalConfig(seed=seed, cache_dir=_resolve_cache_dir(cache_dir))


def _load_spec(spec_path: Path, default_seed: int) -> tuple[DatasetSpec, Path]:
    spec_path = Path(spec_path)
    obj = json.loads(spec_path.read_text(encoding="utf-8"))
    if isinstance(obj, dict):
        obj.setdefault("seed", default_seed)
    return DatasetSpec.from_mapping(obj), spec_path.parent


def _load_grouped(path: Path, fmt: str) -> dict[bytes, dict[bytes, int]]:
    return {
        g.query_id: dict(g.entries)
        for g in group_triples(load_qrels(Path(path), fmt))
    }


@main.command("build-store")
@click.argument("records", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option(
    "--out-dir",
    type=click.Path(path_type=Path),
    default=None,
    help="Also place a named copy of each store here.",
)
@click.pass_obj
@_guard
def cmd_build_store(cfg: GlobalConfig, records: tuple[Path, ...], out_dir: Path | None):
    """Build ID-indexed stores from JSONL record files."""
    for path in records:
        fp = fingerprint_paths([path], {"stage": "store", "version": VERSION})
        handle, hit = cached_store_from_jsonl(path, cfg.cache_dir)
        location = handle.path
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            location = out_dir / f"{Path(path).stem}.qkst"
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{location.name}.")
            os.close(fd)
            shutil.copyfile(handle.path, tmp)
            os.replace(tmp, location)
        click.echo(
            f"{Path(path).name}: {len(handle)} records, fingerprint {fp}, "
            f"{'cache hit' if hit else 'built'}, {location}"
        )
        handle.close()


@main.command("export")
@click.option("--spec", "spec_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--binary", is_flag=True, help="Emit positive/negatives examples.")
@click.pass_obj
@_guard
def cmd_export(cfg: GlobalConfig, spec_path: Path, out_path: Path, binary: bool):
    """Materialize every example of a dataset spec as JSONL."""
    spec, base_dir = _load_spec(spec_path, cfg.seed)
    if binary:
        ds, report = BinaryDataset.from_spec(spec, cache_dir=cfg.cache_dir, base_dir=base_dir)
        dropped = f", {ds.dropped_count} dropped"
    else:
        ds, report = MultiLevelDataset.load(spec, cache_dir=cfg.cache_dir, base_dir=base_dir)
        dropped = ""
    try:
        count = export_jsonl(ds, out_path)
    finally:
        ds.close()
    click.echo(
        f"exported {count} examples{dropped} to {out_path} "
        f"(cache: {report.reused} reused, {report.built} built)"
    )


@main.command("encode")
@click.option("--records", "records_path", type=click.Path(path_type=Path), default=None)
@click.option("--spec", "spec_path", type=click.Path(path_type=Path), default=None)
@click.option("--side", type=click.Choice(["query", "corpus"]), default=None)
@click.option("--dim", type=int, required=True)
@click.option("--seed", "encoder_seed", type=int, default=None, help="Defaults to the global seed.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.pass_obj
@_guard
def cmd_encode(
    cfg: GlobalConfig,
    records_path: Path | None,
    spec_path: Path | None,
    side: str | None,
    dim: int,
    encoder_seed: int | None,
    out_path: Path,
):
    """Encode a record file into an embedding cache."""
    if records_path is None:
        if spec_path is None or side is None:
            raise click.UsageError("provide --records, or --spec together with --side")
        spec, base_dir = _load_spec(spec_path, cfg.seed)
        raw = spec.query_path if side == "query" else spec.corpus_path
        if raw is None:
            raise ConfigError(f"spec has no default {side}_path")
        records_path = base_dir / raw if not Path(raw).is_absolute() else Path(raw)
    seed = cfg.seed if encoder_seed is None else encoder_seed
    store, _ = cached_store_from_jsonl(records_path, cfg.cache_dir)
    try:
        build_cache_from_store(store, EncoderSpec(dim=dim, seed=seed), Path(out_path))
        click.echo(f"encoded {len(store)} records at dim {dim} into {out_path}")
    finally:
        store.close()


def _parse_weights(workers: int, weights: str | None) -> list[float]:
    if weights is None:
        return [1.0] * workers
    try:
        parsed = [float(w) for w in weights.split(",") if w.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --weights value {weights!r}: {exc}") from exc
    if not parsed:
        raise ConfigError("--weights must name at least one worker")
    return parsed


@main.command("retrieve")
@click.option("--queries", "queries_path", required=True, type=click.Path(path_type=Path))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(path_type=Path))
@click.option("--topk", "k", type=int, required=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--weights", type=str, default=None, help="Comma-separated lane weights.")
@click.option("--batch", type=int, default=DEFAULT_BATCH_SIZE, show_default=True)
@click.option("--dim", type=int, default=32, show_default=True)
@click.option("--query-subset", type=click.Path(path_type=Path), default=None)
@click.option("--query-cache", type=click.Path(path_type=Path), default=None)
@click.option("--corpus-cache", type=click.Path(path_type=Path), default=None)
@click.option("--tag", type=str, default="qrelkit", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.pass_obj
@_guard
def cmd_retrieve(
    cfg: GlobalConfig,
    queries_path: Path,
    corpus_path: Path,
    k: int,
    workers: int,
    weights: str | None,
    batch: int,
    dim: int,
    query_subset: Path | None,
    query_cache: Path | None,
    corpus_cache: Path | None,
    tag: str,
    out_path: Path,
):
    """Brute-force dense retrieval; writes a TREC run file."""
    if workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {workers}")
    lane_weights = _parse_weights(workers, weights)
    query_store, _ = cached_store_from_jsonl(queries_path, cfg.cache_dir)
    corpus_store, _ = cached_store_from_jsonl(corpus_path, cfg.cache_dir)
    qcache = open_cache(query_cache) if query_cache else None
    ccache = open_cache(corpus_cache) if corpus_cache else None
    try:
        query_ids = query_store.ids()
        if query_subset is not None:
            keep = read_query_subset(query_subset)
            query_ids = [q for q in query_ids if q in keep]
            if not query_ids:
                raise ConfigError(f"query subset {query_subset} matches no query")
        plan = plan_shards(len(corpus_store), lane_weights)
        run = retrieve(
            query_store,
            corpus_store,
            EncoderSpec(dim=dim, seed=cfg.seed),
            k,
            query_ids=query_ids,
            query_cache=qcache,
            corpus_cache=ccache,
            plan=plan,
            batch_size=batch,
        )
        lines = write_trec_run(run, out_path, tag)
        click.echo(
            f"retrieved top-{k} for {len(run)} queries over {len(corpus_store)} docs "
            f"({len(lane_weights)} worker(s)); wrote {lines} lines to {out_path}"
        )
    finally:
        for handle in (query_store, corpus_store, qcache, ccache):
            if handle is not None:
                handle.close()


@main.command("evaluate")
@click.option("--run", "run_path", required=True, type=click.Path(path_type=Path))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(path_type=Path))
@click.option(
    "--qrel-format", type=click.Choice(_QREL_FORMATS), default="tsv", show_default=True
)
@click.option("--metrics", "metrics_arg", required=True, help="e.g. ndcg@10,mrr@10,recall@100")
@click.option("--threshold", type=int, default=1, show_default=True)
@click.option("--per-query", is_flag=True, help="Include per-query values in the report.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@_guard
def cmd_evaluate(
    run_path: Path,
    qrels_path: Path,
    qrel_format: str,
    metrics_arg: str,
    threshold: int,
    per_query: bool,
    out_path: Path,
):
    """Score a TREC run against qrels; writes a JSON report."""
    specs = [
        MetricSpec.parse(part, relevance_threshold=threshold)
        for part in metrics_arg.split(",")
        if part.strip()
    ]
    run = read_trec_run(run_path)
    qrels = _load_grouped(qrels_path, qrel_format)
    reports = evaluate_run(run, qrels, specs)
    obj = {name: rep.to_obj(include_per_query=per_query) for name, rep in reports.items()}
    atomic_write(Path(out_path), (json.dumps(obj, indent=2) + "\n").encode("utf-8"))
    for name, rep in reports.items():
        click.echo(
            f"{name}: {rep.aggregate:.4f} "
            f"(evaluated {rep.evaluated_count}, skipped {rep.skipped_count})"
        )


@main.command("mine-negatives")
@click.option("--run", "run_path", required=True, type=click.Path(path_type=Path))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(path_type=Path))
@click.option(
    "--qrel-format", type=click.Choice(_QREL_FORMATS), default="tsv", show_default=True
)
@click.option("--depth", type=int, required=True)
@click.option("--num", "num_negatives", type=int, required=True)
@click.option("--label", "negative_label", type=int, default=0, show_default=True)
@click.option("--threshold", type=int, default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@_guard
def cmd_mine(
    run_path: Path,
    qrels_path: Path,
    qrel_format: str,
    depth: int,
    num_negatives: int,
    negative_label: int,
    threshold: int,
    out_path: Path,
):
    """Mine hard negatives from a run; writes a qrels TSV."""
    mining = MiningConfig(
        depth=depth,
        num_negatives=num_negatives,
        negative_label=negative_label,
        positive_threshold=threshold,
    )
    run = read_trec_run(run_path)
    positives = _load_grouped(qrels_path, qrel_format)
    result = mine_hard_negatives(run, positives, mining)
    write_qrels_tsv(result.triples, out_path)
    short = result.short_queries(num_negatives)
    click.echo(
        f"mined {len(result.triples)} negatives for {len(result.emitted_per_query)} "
        f"queries into {out_path} ({len(short)} short)"
    )


@main.command("cache-import")
@click.option("--ids", "ids_path", required=True, type=click.Path(path_type=Path))
@click.option("--vectors", "vectors_path", required=True, type=click.Path(path_type=Path))
@click.option("--dim", type=int, required=True)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@_guard
def cmd_cache_import(ids_path: Path, vectors_path: Path, dim: int, out_path: Path):
    """Load externally produced f32 vectors into an embedding cache.

    IDs come one per line; vectors are a raw little-endian float32 buffer
    of exactly len(ids) * dim values, row-major in ID-file order.
    """
    if dim < 2:
        raise ConfigError(f"--dim must be >= 2, got {dim}")
    with open(ids_path, "r", encoding="utf-8") as f:
        ids = [line.rstrip("\n").rstrip("\r").encode("utf-8") for line in f if line.strip()]
    raw = Path(vectors_path).read_bytes()
    if len(raw) != 4 * dim * len(ids):
        raise ConfigError(
            f"vector buffer holds {len(raw)} bytes; expected "
            f"{4 * dim * len(ids)} for {len(ids)} ids at dim {dim}"
        )
    vectors = np.frombuffer(raw, dtype="<f4").reshape(len(ids), dim)
    import_vectors(ids, vectors, dim, Path(out_path))
    click.echo(f"imported {len(ids)} vectors of dim {dim} into {out_path}")


@main.group("bench")
def cmd_bench():
    """Benchmark scenarios with machine-readable reports."""


def _emit_report(report, out_path: Path | None):
    if out_path is not None:
        report.write(out_path)
    for key, value in report.derived.items():
        click.echo(f"{report.scenario} {key}: {value}")


@cmd_bench.command("topk")
@click.option("--q", type=int, default=64, show_default=True)
@click.option("--n", type=int, default=100_000, show_default=True)
@click.option("--k", type=int, default=100, show_default=True)
@click.option("--batch", type=int, default=4096, show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
@click.pass_obj
@_guard
def cmd_bench_topk(cfg: GlobalConfig, q: int, n: int, k: int, batch: int, out_path: Path | None):
    _emit_report(bench_topk(q=q, n=n, k=k, batch=batch, seed=cfg.seed), out_path)


@cmd_bench.command("memory")
@click.option("--spec", "spec_path", required=True, type=click.Path(path_type=Path))
@click.option("--fraction", type=float, default=0.01, show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
@click.pass_obj
@_guard
def cmd_bench_memory(cfg: GlobalConfig, spec_path: Path, fraction: float, out_path: Path | None):
    spec, base_dir = _load_spec(spec_path, cfg.seed)
    _emit_report(
        bench_memory(spec, cfg.cache_dir, fraction=fraction, base_dir=base_dir), out_path
    )


@cmd_bench.command("ttfs")
@click.option("--spec", "spec_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
@click.pass_obj
@_guard
def cmd_bench_ttfs(cfg: GlobalConfig, spec_path: Path, out_path: Path | None):
    spec, base_dir = _load_spec(spec_path, cfg.seed)
    _emit_report(bench_ttfs(spec, cfg.cache_dir, base_dir=base_dir), out_path)


@cmd_bench.command("scaling")
@click.option("--queries", "queries_path", required=True, type=click.Path(path_type=Path))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(path_type=Path))
@click.option("--dim", type=int, default=32, show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--batch", type=int, default=4096, show_default=True)
@click.option("--workers", type=str, default="1,2,4,8", show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
@click.pass_obj
@_guard
def cmd_bench_scaling(
    cfg: GlobalConfig,
    queries_path: Path,
    corpus_path: Path,
    dim: int,
    k: int,
    batch: int,
    workers: str,
    out_path: Path | None,
):
    try:
        lanes = tuple(int(w) for w in workers.split(",") if w.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --workers value {workers!r}: {exc}") from exc
    _emit_report(
        bench_scaling(
            queries_path,
            corpus_path,
            cfg.cache_dir,
            dim=dim,
            seed=cfg.seed,
            k=k,
            batch=batch,
            workers=lanes,
        ),
        out_path,
    )


if __name__ == "__main__":
    main()
