import json
from pathlib import Path

import pytest

from qrelkit import StoreWriter, open_store

FIXTURES = Path(__file__).resolve().parent / "fixtures"

_criterion_results: dict[str, str] = {}
_criterion_details: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(name): labels a test as one acceptance criterion; "
        "its outcome is printed as a PASS/FAIL line in the summary",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call":
        _criterion_results[name] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _criterion_results[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criterion_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _criterion_results.items():
        status = "PASS" if outcome == "passed" else outcome.upper()
        detail = _criterion_details.get(name)
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status}] {name}{suffix}")


@pytest.fixture
def criterion_detail(request):
    """Attach a measured value to this criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")

    def _record(text: str) -> None:
        if marker is not None:
            _criterion_details[marker.args[0]] = text

    return _record


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def cache_dir(tmp_path) -> Path:
    d = tmp_path / "cache"
    d.mkdir()
    return d


@pytest.fixture
def write_jsonl(tmp_path):
    """Write objects to a JSONL file under tmp_path; returns its path."""

    def _write(name: str, objs) -> Path:
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            for obj in objs:
                f.write(json.dumps(obj) + "\n")
        return path

    return _write


@pytest.fixture
def write_text(tmp_path):
    def _write(name: str, content: str) -> Path:
        path = tmp_path / name
        path.write_text(content, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def make_store(tmp_path):
    """Build a store directly from (id, title, text) rows; returns a handle."""
    handles = []

    def _make(name: str, rows):
        writer = StoreWriter(tmp_path / f"{name}.qkst")
        for rid, title, text in rows:
            writer.add(rid, title, text)
        handle = open_store(writer.finalize())
        handles.append(handle)
        return handle

    yield _make
    for h in handles:
        h.close()


@pytest.fixture(scope="session")
def big_fixture(tmp_path_factory):
    """100k-doc corpus, 10k queries, and a 1M-triple qrel file.

    Session-scoped: generated once and shared by every test that needs
    bulk data.
    """
    from qrelkit import generate_corpus_jsonl, generate_qrels_tsv, generate_queries_jsonl

    root = tmp_path_factory.mktemp("bulk")
    generate_corpus_jsonl(root / "corpus.jsonl", 100_000, seed=11)
    generate_queries_jsonl(root / "queries.jsonl", 10_000, seed=12)
    generate_qrels_tsv(root / "qrels.tsv", 10_000, 100, 100_000, seed=13)
    return root
