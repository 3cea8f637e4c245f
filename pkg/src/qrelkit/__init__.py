"""qrelkit: memory-efficient IR dataset toolkit.

Manage queries, corpora, and relevance judgments as memory-mapped,
ID-indexed stores; reshape them declaratively (filter, relabel, sample,
combine) with content-fingerprinted caching; and run exact brute-force
dense retrieval with batched top-k tracking, fair sharding, graded
metrics, and hard-negative mining.  Everything is deterministic given
(inputs, config, seed).
"""

from .bench import (
    BenchReport,
    bench_memory,
    bench_scaling,
    bench_topk,
    bench_ttfs,
    generate_corpus_jsonl,
    generate_qrels_tsv,
    generate_queries_jsonl,
)
from .dataset import (
    BinaryDataset,
    BinaryExample,
    DatasetSpec,
    EncodingDataset,
    EncodingItem,
    LoadReport,
    LoadedCollection,
    MultiLevelDataset,
    MultiLevelExample,
    eager_materialize,
    export_jsonl,
    load_collections,
)
from .embedding import (
    CacheBuilder,
    EmbeddingCache,
    EncoderSpec,
    build_cache_from_store,
    cache_is_complete,
    encode_record,
    encode_text,
    import_vectors,
    iter_vectors,
    open_cache,
    similarity,
)
from .errors import (
    ConfigError,
    DuplicateIdError,
    FormatError,
    InvalidIdError,
    MissingRecordError,
    NotFoundError,
    QrelkitError,
    StoreFormatError,
    UnknownNameError,
)
from .inference import (
    MiningConfig,
    MiningResult,
    ShardPlan,
    mine_hard_negatives,
    plan_shards,
    read_trec_run,
    retrieve,
    write_trec_run,
)
from .metrics import (
    MetricReport,
    MetricSpec,
    evaluate_run,
    mrr_at_k,
    ndcg_at_k,
    recall_at_k,
    rerank_eval,
)
from .qrels import (
    CollectionConfig,
    DEFAULT_REGISTRY,
    GroupStore,
    QrelGroup,
    QrelTriple,
    Registry,
    apply_config,
    group_by_query,
    group_triples,
    grouped_ids,
    labels_for,
    load_qrels,
    materialize_group,
    open_group_store,
    read_query_subset,
    register_filter,
    register_loader,
    register_transform,
    sample_without_replacement,
    transform_group,
    write_group_store,
    write_qrels_tsv,
)
from .store import (
    Fingerprint,
    StoreHandle,
    StoreWriter,
    TextRecord,
    atomic_write,
    build_store,
    cache_lookup,
    cached_build,
    cached_store_from_jsonl,
    canonical_config,
    fingerprint,
    fingerprint_paths,
    open_store,
)
from .topk import (
    HeapTopK,
    ScoredDoc,
    TopKState,
    WatchList,
    topk_finalize,
    topk_merge,
    topk_new,
    topk_update,
    watch_update,
)

__version__ = "0.1.0"
