"""Shared fixtures: a tiny deterministic cohort on disk plus its graph."""
import numpy as np
import pytest

from hfgraph.ehr import build_cohort, load_cohort, load_embeddings, represent_cohort
from hfgraph.graph import SplitSpec, build_knn_graph, split_nodes
from hfgraph.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def tiny_config():
    # Small but non-trivial: both classes present in every split, a couple of
    # hundred nodes so KNN neighborhoods are meaningful, still fast.
    return SynthConfig(seed=7, n_patients=240, positive_rate=0.25)


@pytest.fixture(scope="session")
def tiny_paths(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_cohort")
    return generate(tiny_config, out)


@pytest.fixture(scope="session")
def tiny_vectors(tiny_paths):
    raw = load_cohort(tiny_paths["cohort"])
    store = load_embeddings(tiny_paths["embeddings"])
    records, _ = build_cohort(raw)
    vectors, _ = represent_cohort(records, store)
    return vectors


@pytest.fixture(scope="session")
def tiny_records(tiny_paths):
    raw = load_cohort(tiny_paths["cohort"])
    records, _ = build_cohort(raw)
    return records


@pytest.fixture(scope="session")
def tiny_graph(tiny_vectors):
    graph = build_knn_graph(tiny_vectors, k=3, seed=0)
    split_nodes(graph, SplitSpec(seed=0))
    return graph


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# acceptance reporting: one pass/fail line per release criterion, echoed after
# the run so the verdicts survive pytest's output capture.


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config._acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
