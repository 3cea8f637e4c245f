import json
import random

import pytest

from qrelkit import (
    BinaryDataset,
    CollectionConfig,
    ConfigError,
    DatasetSpec,
    EncodingDataset,
    LoadedCollection,
    MissingRecordError,
    MultiLevelDataset,
    QrelGroup,
    StoreWriter,
    eager_materialize,
    export_jsonl,
    import_vectors,
    open_cache,
    open_group_store,
    open_store,
    write_group_store,
)

import numpy as np

QUERY_POOL = [b"q%d" % i for i in range(6)]
DOC_POOL = [b"d%02d" % i for i in range(12)]


def text_store(dirpath, name, ids, prefix):
    writer = StoreWriter(dirpath / f"{name}.qkst")
    for rid in sorted(ids):
        writer.add(rid, None, f"{prefix} {rid.decode()}")
    return open_store(writer.finalize())


def build_ds(dirpath, collection_maps):
    """Dataset over {qid: {did: label}} maps sharing one query/corpus store."""
    queries = text_store(dirpath, "queries", QUERY_POOL, "question about")
    corpus = text_store(dirpath, "corpus", DOC_POOL, "document body")
    colls = []
    for i, mapping in enumerate(collection_maps):
        groups = [
            QrelGroup(qid, tuple(sorted(docs.items())))
            for qid, docs in sorted(mapping.items())
        ]
        gs = open_group_store(write_group_store(groups, dirpath / f"col{i}.qkst"))
        colls.append(
            LoadedCollection(
                config=CollectionConfig(qrel_path=f"col{i}"),
                groups=gs,
                query_store=queries,
                corpus_store=corpus,
            )
        )
    return MultiLevelDataset(colls)


def merge_oracle(collection_maps):
    # First collection holding a (query, doc) pair wins; brute force.
    out = {}
    for qid in sorted({q for m in collection_maps for q in m}):
        labels = {}
        for mapping in collection_maps:
            for did, lab in mapping.get(qid, {}).items():
                if did not in labels:
                    labels[did] = lab
        out[qid] = labels
    return out


class TestMergePrecedence:
    def test_earliest_collection_wins(self, tmp_path):
        maps = [
            {b"q1": {b"d01": 3, b"d02": 0}},
            {b"q1": {b"d01": 1, b"d03": 2}, b"q2": {b"d04": 1}},
        ]
        ds = build_ds(tmp_path, maps)
        try:
            assert ds.query_ids() == [b"q1", b"q2"]
            ex = ds.get_example(0)
            assert {r.id: lab for r, lab in ex.docs} == {b"d01": 3, b"d02": 0, b"d03": 2}
        finally:
            ds.close()

    def test_matches_oracle_on_random_collections(self, tmp_path):
        rng = random.Random(2024)
        for trial in range(20):
            troot = tmp_path / f"t{trial}"
            troot.mkdir()
            maps = []
            for _ in range(rng.randint(1, 4)):
                mapping = {}
                for qid in rng.sample(QUERY_POOL, rng.randint(0, len(QUERY_POOL))):
                    docs = rng.sample(DOC_POOL, rng.randint(1, 6))
                    mapping[qid] = {did: rng.randint(-2, 4) for did in docs}
                maps.append(mapping)
            ds = build_ds(troot, maps)
            oracle = merge_oracle(maps)
            try:
                assert ds.query_ids() == sorted(oracle)
                for i, qid in enumerate(ds.query_ids()):
                    ex = ds.get_example(i)
                    assert ex.query_id == qid
                    assert {r.id: lab for r, lab in ex.docs} == oracle[qid]
                    order = [(-lab, r.id) for r, lab in ex.docs]
                    assert order == sorted(order)
            finally:
                ds.close()

    def test_query_text_from_earliest_collection(self, tmp_path):
        # Two collections with distinct query stores for the same query ID.
        q_a = text_store(tmp_path, "qa", [b"q1"], "first wording")
        q_b = text_store(tmp_path, "qb", [b"q1"], "second wording")
        corpus = text_store(tmp_path, "c", [b"d01"], "doc")
        colls = []
        for i, qs in enumerate([q_a, q_b]):
            gs = open_group_store(
                write_group_store([QrelGroup(b"q1", ((b"d01", 1),))], tmp_path / f"g{i}.qkst")
            )
            colls.append(
                LoadedCollection(CollectionConfig(qrel_path="x"), gs, qs, corpus)
            )
        ds = MultiLevelDataset(colls)
        try:
            assert ds.get_example(0).query.text.startswith("first wording")
        finally:
            ds.close()


class TestLazyAccess:
    def test_one_example_touches_only_its_records(self, tmp_path):
        maps = [{qid: {did: 1 for did in DOC_POOL[:3]} for qid in QUERY_POOL[:5]}]
        ds = build_ds(tmp_path, maps)
        coll = ds.collections[0]
        try:
            assert coll.query_store.materialized_counter == 0
            assert ds.corpus_decodes() == 0
            ex = ds.get_example(2)
            assert coll.query_store.materialized_counter == 1
            assert ds.corpus_decodes() == len(ex.docs) == 3
            assert coll.groups.groups_decoded == 1
        finally:
            ds.close()

    def test_repeated_get_is_stable(self, tmp_path):
        ds = build_ds(tmp_path, [{b"q1": {b"d01": 2, b"d02": 0}}])
        try:
            assert ds.get_example(0) == ds.get_example(0)
        finally:
            ds.close()

    def test_index_out_of_range(self, tmp_path):
        ds = build_ds(tmp_path, [{b"q1": {b"d01": 1}}])
        try:
            with pytest.raises(IndexError):
                ds.get_example(1)
            with pytest.raises(IndexError):
                ds.get_example(-1)
        finally:
            ds.close()

    def test_missing_corpus_record_named(self, tmp_path):
        queries = text_store(tmp_path, "q", [b"q1"], "q")
        corpus = text_store(tmp_path, "c", [b"d01"], "d")
        gs = open_group_store(
            write_group_store([QrelGroup(b"q1", ((b"dXX", 1),))], tmp_path / "g.qkst")
        )
        ds = MultiLevelDataset(
            [LoadedCollection(CollectionConfig(qrel_path="x"), gs, queries, corpus)]
        )
        try:
            with pytest.raises(MissingRecordError) as exc:
                ds.get_example(0)
            assert exc.value.side == "corpus"
        finally:
            ds.close()


BINARY_MAP = {
    b"q1": {b"d01": 2, b"d02": 1, b"d03": 0, b"d04": 0},
    b"q2": {b"d05": 1},  # no negatives
    b"q3": {b"d06": 0},  # no positives
    b"q4": {b"d01": 1, b"d07": 0},
}


class TestBinaryDataset:
    def test_eligibility_and_dropped(self, tmp_path):
        ds = build_ds(tmp_path, [BINARY_MAP])
        try:
            bin_ds = BinaryDataset(ds, positive_threshold=1, negatives_per_query=1, seed=0)
            assert bin_ds.query_ids() == [b"q1", b"q4"]
            assert bin_ds.dropped_count == 2
        finally:
            ds.close()

    def test_positive_is_highest_label(self, tmp_path):
        ds = build_ds(tmp_path, [BINARY_MAP])
        try:
            bin_ds = BinaryDataset(ds, 1, 1, seed=0)
            ex = bin_ds.get_example(0)  # q1
            assert ex.positive.id == b"d01"
            assert all(n.id in {b"d03", b"d04"} for n in ex.negatives)
        finally:
            ds.close()

    def test_positive_tie_breaks_on_doc_id(self, tmp_path):
        ds = build_ds(tmp_path, [{b"q1": {b"d09": 2, b"d08": 2, b"d01": 0}}])
        try:
            assert BinaryDataset(ds, 1, 1, 0).get_example(0).positive.id == b"d08"
        finally:
            ds.close()

    def test_threshold_moves_the_split(self, tmp_path):
        ds = build_ds(tmp_path, [BINARY_MAP])
        try:
            bin_ds = BinaryDataset(ds, positive_threshold=2, negatives_per_query=2, seed=0)
            assert bin_ds.query_ids() == [b"q1"]
            assert bin_ds.dropped_count == 3
            ex = bin_ds.get_example(0)
            assert ex.positive.id == b"d01"
            assert {n.id for n in ex.negatives} <= {b"d02", b"d03", b"d04"}
            assert len(ex.negatives) == 2 and not ex.short
        finally:
            ds.close()

    def test_short_flag_when_pool_is_small(self, tmp_path):
        ds = build_ds(tmp_path, [BINARY_MAP])
        try:
            ex = BinaryDataset(ds, 1, 3, 0).get_example(1)  # q4 has one negative
            assert ex.negatives == (ex.negatives[0],)
            assert ex.negatives[0].id == b"d07"
            assert ex.short
        finally:
            ds.close()

    def test_negatives_never_overlap_positives(self, tmp_path):
        mapping = {b"q%d" % i: {d: (1 if j % 3 == 0 else 0) for j, d in enumerate(DOC_POOL)} for i in range(4)}
        ds = build_ds(tmp_path, [mapping])
        try:
            bin_ds = BinaryDataset(ds, 1, 4, seed=9)
            for ex in bin_ds:
                pos_ids = {d for d, lab in mapping[ex.query.id].items() if lab >= 1}
                assert ex.positive.id in pos_ids
                assert all(n.id not in pos_ids for n in ex.negatives)
        finally:
            ds.close()

    def test_deterministic_and_seed_sensitive(self, tmp_path):
        mapping = {b"q1": {d: (2 if d == b"d00" else 0) for d in DOC_POOL}}
        ds = build_ds(tmp_path, [mapping])
        try:
            a = BinaryDataset(ds, 1, 3, seed=5).get_example(0)
            b = BinaryDataset(ds, 1, 3, seed=5).get_example(0)
            c = BinaryDataset(ds, 1, 3, seed=6).get_example(0)
            assert a == b
            assert [n.id for n in a.negatives] != [n.id for n in c.negatives]
        finally:
            ds.close()

    def test_construction_reads_no_text(self, tmp_path):
        ds = build_ds(tmp_path, [BINARY_MAP])
        try:
            BinaryDataset(ds, 1, 1, 0)
            assert ds.corpus_decodes() == 0
            assert ds.collections[0].query_store.materialized_counter == 0
        finally:
            ds.close()


class TestEncodingDataset:
    def _store_and_cache(self, tmp_path, cached_ids):
        store = text_store(tmp_path, "enc", DOC_POOL[:6], "body")
        dim = 4
        vectors = np.stack(
            [np.full(dim, i + 1, dtype=np.float32) for i in range(len(cached_ids))]
        ) if cached_ids else np.zeros((0, dim), dtype=np.float32)
        cache_path = tmp_path / "enc.qkec"
        import_vectors(sorted(cached_ids), vectors, dim, cache_path)
        return store, open_cache(cache_path)

    def test_vector_when_cached_text_otherwise(self, tmp_path):
        store, cache = self._store_and_cache(tmp_path, [b"d00", b"d02"])
        ds = EncodingDataset(DOC_POOL[:4], store, cache)
        items = list(ds)
        assert [it.id for it in items] == DOC_POOL[:4]
        assert items[0].vector is not None and items[0].record is None
        assert items[1].vector is None and items[1].record.text.startswith("body")
        assert items[2].vector is not None
        assert store.materialized_counter == 2  # only the two uncached ids

    def test_fully_cached_decodes_nothing(self, tmp_path):
        store, cache = self._store_and_cache(tmp_path, DOC_POOL[:4])
        ds = EncodingDataset(DOC_POOL[:4], store, cache)
        for item in ds:
            assert item.vector is not None
        assert store.materialized_counter == 0

    def test_no_cache_all_text(self, tmp_path):
        store = text_store(tmp_path, "enc", DOC_POOL[:3], "body")
        ds = EncodingDataset(DOC_POOL[:3], store)
        assert all(it.record is not None for it in ds)

    def test_ids_sorted_and_deduped(self, tmp_path):
        store = text_store(tmp_path, "enc", DOC_POOL[:3], "body")
        ds = EncodingDataset([b"d02", b"d00", b"d02"], store)
        assert ds.ids() == [b"d00", b"d02"]

    def test_unknown_id_rejected_up_front(self, tmp_path):
        store = text_store(tmp_path, "enc", DOC_POOL[:3], "body")
        with pytest.raises(MissingRecordError) as exc:
            EncodingDataset([b"d00", b"zz"], store, side="corpus")
        assert exc.value.side == "corpus"


class TestDatasetSpec:
    def test_round_trip(self):
        spec = DatasetSpec(
            collections=(CollectionConfig(qrel_path="a.tsv", min_score=1),),
            query_path="q.jsonl",
            corpus_path="c.jsonl",
            seed=7,
            positive_threshold=2,
            negatives_per_query=3,
        )
        assert DatasetSpec.from_mapping(spec.to_mapping()) == spec
        assert DatasetSpec.from_json(json.dumps(spec.to_mapping())) == spec

    def test_validation(self):
        with pytest.raises(ConfigError):
            DatasetSpec(collections=())
        with pytest.raises(ConfigError):
            DatasetSpec(
                collections=(CollectionConfig(qrel_path="a"),), negatives_per_query=0
            )
        with pytest.raises(ConfigError, match="shard_count"):
            DatasetSpec.from_mapping(
                {"collections": [{"qrel_path": "a"}], "shard_count": 2}
            )
        with pytest.raises(ConfigError):
            DatasetSpec.from_json("{not json")
        with pytest.raises(ConfigError):
            DatasetSpec.from_json('{"collections": []}')


class TestLoadFromSpec:
    def _spec_files(self, tmp_path, write_jsonl, write_text):
        write_jsonl(
            "queries.jsonl",
            [{"_id": f"q{i}", "text": f"query {i}"} for i in range(3)],
        )
        write_jsonl(
            "corpus.jsonl",
            [{"_id": f"d{i}", "text": f"doc {i}"} for i in range(6)],
        )
        write_text("a.tsv", "q0\td0\t2\nq0\td1\t0\nq1\td2\t1\nq1\td3\t0\n")
        write_text("b.tsv", "q2\td4\t1\nq2\td5\t0\n")
        return DatasetSpec(
            collections=(
                CollectionConfig(qrel_path="a.tsv"),
                CollectionConfig(qrel_path="b.tsv"),
            ),
            query_path="queries.jsonl",
            corpus_path="corpus.jsonl",
        )

    def test_load_counts_builds_and_reuses(self, tmp_path, write_jsonl, write_text, cache_dir):
        spec = self._spec_files(tmp_path, write_jsonl, write_text)
        ds, report = MultiLevelDataset.load(spec, cache_dir=cache_dir, base_dir=tmp_path)
        assert ds.query_ids() == [b"q0", b"q1", b"q2"]
        # 2 group stores + 2 text stores built; 2 identity transforms reused.
        assert (report.built, report.reused) == (4, 2)
        ds.close()
        ds2, report2 = MultiLevelDataset.load(spec, cache_dir=cache_dir, base_dir=tmp_path)
        assert (report2.built, report2.reused) == (0, 6)
        ds2.close()

    def test_shared_store_opened_once(self, tmp_path, write_jsonl, write_text, cache_dir):
        spec = self._spec_files(tmp_path, write_jsonl, write_text)
        ds, _ = MultiLevelDataset.load(spec, cache_dir=cache_dir, base_dir=tmp_path)
        try:
            a, b = ds.collections
            assert a.corpus_store is b.corpus_store
            assert a.query_store is b.query_store
        finally:
            ds.close()

    def test_missing_paths_rejected(self):
        spec = DatasetSpec(collections=(CollectionConfig(qrel_path="a.tsv"),))
        with pytest.raises(ConfigError, match="query_path"):
            MultiLevelDataset.load(spec)


class TestExport:
    def test_multilevel_schema_and_round_trip(self, tmp_path):
        ds = build_ds(tmp_path, [{b"q1": {b"d01": 2, b"d02": 0}, b"q2": {b"d03": 1}}])
        out = tmp_path / "out.jsonl"
        try:
            assert export_jsonl(ds, out) == 2
            lines = out.read_text().splitlines()
            objs = [json.loads(ln) for ln in lines]
            assert [o["query_id"] for o in objs] == ["q1", "q2"]
            for i, obj in enumerate(objs):
                ex = ds.get_example(i)
                assert set(obj) == {"query_id", "query", "docs"}
                assert obj["query"] == ex.query.combined_text()
                assert [d["doc_id"].encode() for d in obj["docs"]] == [r.id for r, _ in ex.docs]
                assert [d["label"] for d in obj["docs"]] == ex.labels()
                assert set(obj["docs"][0]) == {"doc_id", "label", "title", "text"}
        finally:
            ds.close()

    def test_binary_schema(self, tmp_path):
        ds = build_ds(tmp_path, [BINARY_MAP])
        out = tmp_path / "bin.jsonl"
        try:
            count = export_jsonl(BinaryDataset(ds, 1, 2, 0), out)
            objs = [json.loads(ln) for ln in out.read_text().splitlines()]
            assert count == len(objs) == 2
            assert set(objs[0]) == {"query_id", "query", "positive", "negatives", "short"}
            assert set(objs[0]["positive"]) == {"doc_id", "title", "text"}
            assert isinstance(objs[0]["short"], bool)
        finally:
            ds.close()

    def test_export_is_deterministic(self, tmp_path):
        ds = build_ds(tmp_path, [{b"q1": {b"d01": 1, b"d02": 0}}])
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        try:
            export_jsonl(ds, a)
            export_jsonl(ds, b)
            assert a.read_bytes() == b.read_bytes()
        finally:
            ds.close()


class TestEagerBaseline:
    def test_decodes_every_corpus_record(self, tmp_path):
        ds = build_ds(tmp_path, [{b"q1": {b"d01": 1}}])
        try:
            everything = eager_materialize(ds)
            assert set(everything) == set(DOC_POOL)
            assert ds.corpus_decodes() == len(DOC_POOL)
        finally:
            ds.close()
