import numpy as np
import pytest

from hetcl.hgraph import Metapath, Relation, Schema, build_graph
from hetcl.taskstream import SyntheticConfig, generate_synthetic


def tiny_two_metapath_graph(seed=0, n_target=30):
    """30 target nodes, two auxiliary types, two metapaths (target-aux_k-target)."""
    cfg = SyntheticConfig(nodes_per_type=(n_target, 6, 5), num_classes=6, classes_per_task=2,
                          feature_dims=(5, 3, 3), seed=seed)
    return generate_synthetic(cfg)


@pytest.fixture
def tiny_graph():
    return tiny_two_metapath_graph()


# filled by test_acceptance.py, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
