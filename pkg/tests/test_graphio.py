import json
import struct

import numpy as np
import pytest

from rphgnn import graphio
from rphgnn.synth import figure_schema_graph

from helpers import random_graph


def test_feature_file_layout(tmp_path):
    m = np.arange(6, dtype=np.float32).reshape(2, 3)
    graphio.write_features(tmp_path / "x.feat", m)
    raw = (tmp_path / "x.feat").read_bytes()
    assert struct.unpack("<II", raw[:8]) == (2, 3)
    assert len(raw) == 8 + 6 * 4
    np.testing.assert_array_equal(graphio.read_features(tmp_path / "x.feat"), m)


def test_edge_file_is_u32_pairs(tmp_path):
    graphio.write_edges(tmp_path / "e.edges", [(1, 2), (3, 4)])
    raw = (tmp_path / "e.edges").read_bytes()
    assert struct.unpack("<4I", raw) == (1, 2, 3, 4)


def test_labels_unlabeled_sentinel(tmp_path):
    graphio.write_labels(tmp_path / "labels.bin", [0, -1, 4])
    raw = (tmp_path / "labels.bin").read_bytes()
    assert struct.unpack("<3I", raw) == (0, 0xFFFFFFFF, 4)
    assert list(graphio.read_labels(tmp_path / "labels.bin")) == [0, -1, 4]


def test_round_trip(tmp_path):
    g = random_graph(5)
    graphio.save_graph_dir(tmp_path, g, target="v0", split={"train": [0], "valid": [], "test": []})
    h = graphio.load_graph_dir(tmp_path)
    assert set(h.edge_types) == set(g.edge_types)
    for name in g.edge_types:
        assert {tuple(p) for p in h.adjacency(name).pairs()} == {tuple(p) for p in g.adjacency(name).pairs()}
    for name in g.features:
        np.testing.assert_array_equal(h.features[name], g.features[name])
    assert graphio.load_manifest(tmp_path)["target"] == "v0"
    assert list(graphio.read_split(tmp_path / "split.json")["train"]) == [0]


def test_symmetric_round_trip(tmp_path):
    g = figure_schema_graph()
    graphio.save_graph_dir(tmp_path, g, target="paper")
    h = graphio.load_graph_dir(tmp_path)
    assert set(h.edge_types) == set(g.edge_types)
    assert h.edge_types["cite"].symmetric


@pytest.mark.parametrize("damage", ["truncate_feat", "odd_edges", "bad_json", "missing_manifest", "dim"])
def test_format_errors(tmp_path, damage):
    g = figure_schema_graph()
    g.attach_features("paper", np.ones((3, 2), dtype=np.float32))
    graphio.save_graph_dir(tmp_path, g, target="paper")
    if damage == "truncate_feat":
        p = tmp_path / "paper.feat"
        p.write_bytes(p.read_bytes()[:-3])
    elif damage == "odd_edges":
        (tmp_path / "write.edges").write_bytes(b"\x00" * 12)
    elif damage == "bad_json":
        (tmp_path / "graph.json").write_text("{")
    elif damage == "missing_manifest":
        (tmp_path / "graph.json").unlink()
    elif damage == "dim":
        m = json.loads((tmp_path / "graph.json").read_text())
        m["vertex_types"][[v["name"] for v in m["vertex_types"]].index("paper")]["feature_dim"] = 5
        (tmp_path / "graph.json").write_text(json.dumps(m))
    with pytest.raises(graphio.GraphFormatError):
        graphio.load_graph_dir(tmp_path)


def test_out_of_range_edge_is_format_error(tmp_path):
    g = figure_schema_graph()
    graphio.save_graph_dir(tmp_path, g, target="paper")
    graphio.write_edges(tmp_path / "write.edges", [(9, 0)])
    with pytest.raises(graphio.GraphFormatError):
        graphio.load_graph_dir(tmp_path)
