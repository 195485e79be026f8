import json

import numpy as np
import pytest

from rphgnn import graphio
from rphgnn.cli import main
from rphgnn.precompute import load_groups
from rphgnn.relations import ProvenanceLedger
from rphgnn.synth import dense_schema_graph, figure_schema_graph

from ledger_tables import EVEN_ODD_K2, LOCAL_K4

FAST = ["--hidden", "16", "--max-epochs", "4", "--patience", "2", "--batch-size", "128"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "data"
    assert main(["synth", str(out), "--n-papers", "300", "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def figure_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("figure")
    graphio.save_graph_dir(out, figure_schema_graph(), target="paper")
    return out


def test_synth_contract(synth_dir):
    m = graphio.load_manifest(synth_dir)
    g = graphio.load_graph_dir(synth_dir)
    assert len(g.vertex_types) == 4
    assert len(g.incoming(m["target"])) >= 3
    labels = graphio.read_labels(synth_dir / "labels.bin")
    assert m["num_classes"] == 5 and set(labels[labels >= 0]) == set(range(5))


def test_precompute_train_evaluate(synth_dir, tmp_path, capsys):
    pre = tmp_path / "pre"
    assert main(["precompute", str(synth_dir), "--out", str(pre), "--scheme", "even-odd",
                 "-K", "2", "--dim", "16"]) == 0
    groups, header = load_groups(pre / "groups.rphg")
    assert len(groups) == 6 and header["K"] == 2
    assert main(["train", str(pre / "groups.rphg"), "--out", str(tmp_path / "tr"), *FAST]) == 0
    metrics = json.loads((tmp_path / "tr" / "metrics.json").read_text())
    for key in ("macro_f1", "micro_f1", "accuracy"):
        assert 0.0 <= metrics[key] <= 1.0
    assert metrics["precompute_hash"] == header["manifest_hash"]
    assert (tmp_path / "tr" / "history.csv").exists()
    capsys.readouterr()
    assert main(["evaluate", str(tmp_path / "tr" / "checkpoint.rpck"),
                 str(pre / "groups.rphg")]) == 0
    scored = json.loads(capsys.readouterr().out)
    assert scored["test"]["accuracy"] == metrics["accuracy"]


def test_precompute_without_labels(synth_dir, tmp_path):
    import shutil

    copy = tmp_path / "nolabels"
    shutil.copytree(synth_dir, copy)
    (copy / "labels.bin").unlink()
    assert main(["precompute", str(copy), "--out", str(tmp_path / "pre")]) == 0
    assert main(["train", str(tmp_path / "pre" / "groups.rphg"), "--out",
                 str(tmp_path / "tr"), *FAST]) == 2


def test_rerun_is_bitwise_identical(synth_dir, tmp_path):
    for name in ("a", "b"):
        assert main(["run", str(synth_dir), "--out", str(tmp_path / name), "--seed", "3",
                     "--dim", "16", *FAST]) == 0
    for rel in ("precompute/groups.rphg", "train/checkpoint.rpck", "train/metrics.json"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_hash_mismatch_aborts(synth_dir, tmp_path):
    pre = tmp_path / "pre"
    assert main(["precompute", str(synth_dir), "--out", str(pre), "--dim", "16"]) == 0
    m = json.loads((pre / "manifest.json").read_text())
    m["seed"] = 99
    (pre / "manifest.json").write_text(json.dumps(m))
    assert main(["train", str(pre / "groups.rphg"), "--out", str(tmp_path / "tr"), *FAST]) == 3


def test_exit_codes(synth_dir, tmp_path):
    assert main(["precompute", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["precompute", str(synth_dir), "--out", str(tmp_path / "x"),
                 "--config", str(bad)]) == 3
    assert main(["precompute", str(synth_dir), "--out", str(tmp_path / "x"),
                 "--psp", "1.5"]) == 3
    assert main(["precompute", str(synth_dir), "--out", str(tmp_path / "x"),
                 "--target", "nope"]) == 3


def test_relation_cap_exit(tmp_path):
    graphio.save_graph_dir(tmp_path / "dense", dense_schema_graph(), target="t0")
    args = ["precompute", str(tmp_path / "dense"), "-K", "1"]
    assert main(args + ["--out", str(tmp_path / "a"), "--scheme", "two-hop"]) == 4
    assert main(args + ["--out", str(tmp_path / "b"), "--scheme", "two-hop",
                        "--relation-cap", "5000"]) == 0
    assert main(args + ["--out", str(tmp_path / "c"), "--scheme", "even-odd"]) == 0


def _table_from_json(js):
    cells = {}
    for row in js["rows"]:
        for name, cell in row["cells"].items():
            cells[(name, row["iteration"])] = (sorted(cell["relations"]), cell["updates"])
    return cells


@pytest.mark.parametrize("scheme,K,table", [("local", 4, LOCAL_K4), ("even-odd", 2, EVEN_ODD_K2)])
def test_ledger_command(figure_dir, tmp_path, capsys, scheme, K, table):
    out = tmp_path / "led"
    assert main(["ledger", str(figure_dir), "--scheme", scheme, "-K", str(K),
                 "--format", "json", "--out", str(out)]) == 0
    js = json.loads(capsys.readouterr().out)
    assert _table_from_json(js) == table
    md = ProvenanceLedger.parse_markdown((out / "ledger.md").read_text())
    assert {key: rels for key, (rels, _) in md.items()} == {
        key: rels for key, (rels, _) in table.items()}


def test_bench_command(synth_dir, tmp_path, capsys):
    pre = tmp_path / "pre"
    assert main(["precompute", str(synth_dir), "--out", str(pre), "--dim", "16"]) == 0
    capsys.readouterr()
    assert main(["bench", str(pre / "groups.rphg"), "--k-values", "1,2", "--repeats", "1",
                 "--hidden", "8", "--batch-size", "100"]) == 0
    table = json.loads(capsys.readouterr().out)
    assert [r["K"] for r in table["rows"]] == [1, 2]
    assert all(r["seconds"] > 0 for r in table["rows"])
    assert np.isfinite(table["r2"])
