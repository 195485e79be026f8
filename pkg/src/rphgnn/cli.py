"""Command-line entry points: synth, precompute, train, evaluate, run, ledger, bench.

Exit codes: 0 success, 2 format error, 3 config error, 4 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import graphio
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .hetgraph import GraphError
from .precompute import (
    ArchiveError,
    PrecomputeConfig,
    RelationCapError,
    load_groups,
    run_precompute,
    save_groups,
    schema_hash,
)
from .relations import provenance_ledger
from .squashing import RpConfig
from .synth import SynthSpec, make_synthetic
from .trainer import TrainConfig, bench_epoch_time, evaluate, train, write_history_csv

logger = logging.getLogger("rphgnn")

EXIT_FORMAT, EXIT_CONFIG, EXIT_CAP = 2, 3, 4
ARCHIVE_NAME = "groups.rphg"
MANIFEST_NAME = "manifest.json"

DEFAULT_ENCODER = {"hidden_dim": 256, "conv_out_channels": 2, "group_mlp_layers": 2,
                   "fusion_mlp_layers": 2, "dropout_input": 0.3, "dropout_hidden": 0.5}


class ConfigError(ValueError):
    pass


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunManifest:
    graph: str
    precompute: dict
    encoder: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    embed_dim: int = 64
    seed: int = 0
    output_dir: str = ""

    def precompute_section(self) -> dict:
        return {"graph": self.graph, "precompute": self.precompute,
                "embed_dim": self.embed_dim, "seed": self.seed}

    def precompute_hash(self) -> str:
        return canonical_hash(self.precompute_section())

    def run_hash(self) -> str:
        return canonical_hash({**self.precompute_section(), "encoder": self.encoder,
                               "train": self.train})

    def to_dict(self) -> dict:
        return {"graph": self.graph, "precompute": self.precompute, "encoder": self.encoder,
                "train": self.train, "embed_dim": self.embed_dim, "seed": self.seed,
                "output_dir": self.output_dir, "precompute_hash": self.precompute_hash(),
                "run_hash": self.run_hash()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(graph=d["graph"], precompute=d["precompute"], encoder=d.get("encoder", {}),
                   train=d.get("train", {}), embed_dim=d.get("embed_dim", 64),
                   seed=d.get("seed", 0), output_dir=d.get("output_dir", ""))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _read_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _scheme(name: str) -> str:
    return name.replace("-", "_")


def _set(d: dict, key: str, value) -> None:
    if value is not None:
        d[key] = value


def build_manifest(args, graph_dir) -> RunManifest:
    cfg = _read_config(getattr(args, "config", None))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    pre = dict(cfg.get("precompute", {}))
    rp = dict(pre.pop("rp", {}))
    _set(pre, "K", getattr(args, "iterations", None))
    if getattr(args, "scheme", None):
        pre["scheme"] = _scheme(args.scheme)
    _set(pre, "target_type", getattr(args, "target", None))
    _set(pre, "relation_cap", getattr(args, "relation_cap", None))
    _set(rp, "strategy", getattr(args, "rp", None))
    _set(rp, "p_sp", getattr(args, "psp", None))
    rp.setdefault("base_seed", seed)
    if "target_type" not in pre:
        target = graphio.load_manifest(graph_dir).get("target")
        if not target:
            raise ConfigError("no target vertex type given and graph.json names none")
        pre["target_type"] = target
    try:
        pre_cfg = PrecomputeConfig(rp=RpConfig(**rp), **pre)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid precompute config: {exc}") from exc
    enc = {**DEFAULT_ENCODER, **cfg.get("encoder", {})}
    _set(enc, "hidden_dim", getattr(args, "hidden", None))
    tr = dict(cfg.get("train", {}))
    for key, attr in (("lr", "lr"), ("batch_size", "batch_size"), ("patience", "patience"),
                      ("max_epochs", "max_epochs")):
        _set(tr, key, getattr(args, attr, None))
    tr["seed"] = seed
    embed = getattr(args, "dim", None) or cfg.get("embed_dim", 64)
    return RunManifest(graph=str(Path(graph_dir).resolve()), precompute=pre_cfg.to_dict(),
                       encoder=enc, train=tr, embed_dim=int(embed), seed=int(seed),
                       output_dir=str(args.out))


def do_precompute(manifest: RunManifest, out_dir, threads: int = 1) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = graphio.load_graph_dir(manifest.graph)
    filled = g.fill_missing_features(manifest.embed_dim, manifest.seed)
    if filled:
        logger.info("random embeddings (dim %d) for %s", manifest.embed_dim, filled)
    cfg = PrecomputeConfig.from_dict(manifest.precompute)
    cfg.threads = threads
    with threadpool_limits(limits=threads):
        groups = run_precompute(g, cfg)
    meta = {"manifest_hash": manifest.precompute_hash(), "schema_hash": schema_hash(g),
            "scheme": cfg.scheme, "target": cfg.target_type, "rp": cfg.rp.to_dict()}
    path = save_groups(groups, out_dir / ARCHIVE_NAME, meta)
    manifest.write(out_dir / MANIFEST_NAME)
    return path


def _load_archive_with_manifest(archive, manifest_path=None):
    archive = Path(archive)
    manifest_path = Path(manifest_path) if manifest_path else archive.parent / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigError(f"run manifest {manifest_path} not found")
    manifest = RunManifest.from_dict(json.loads(manifest_path.read_text()))
    groups, header = load_groups(archive, expected_K=manifest.precompute["K"])
    if header.get("manifest_hash") != manifest.precompute_hash():
        raise ConfigError(
            f"manifest hash {manifest.precompute_hash()} does not match archive "
            f"hash {header.get('manifest_hash')}; archive was built from a different run"
        )
    return groups, header, manifest


def _labels_and_split(manifest: RunManifest, labels_path=None, split_path=None):
    gdir = Path(manifest.graph)
    labels_path = Path(labels_path or gdir / "labels.bin")
    split_path = Path(split_path or gdir / "split.json")
    for p in (labels_path, split_path):
        if not p.exists():
            raise graphio.GraphFormatError(f"{p} not found; training needs labels and a split")
    return graphio.read_labels(labels_path), graphio.read_split(split_path)


def do_train(archive, out_dir, labels_path=None, split_path=None, overrides=None,
             manifest_path=None, threads: int = 1) -> dict:
    groups, header, manifest = _load_archive_with_manifest(archive, manifest_path)
    for section, values in (overrides or {}).items():
        getattr(manifest, section).update({k: v for k, v in values.items() if v is not None})
    labels, split = _labels_and_split(manifest, labels_path, split_path)
    if len(labels) != header["rows"]:
        raise graphio.GraphFormatError(
            f"labels cover {len(labels)} vertices, archive has {header['rows']} rows")
    used = np.concatenate([split["train"], split["valid"], split["test"]])
    if (labels[used] < 0).any():
        raise graphio.GraphFormatError("split references unlabeled vertices")
    num_classes = int(labels[labels >= 0].max()) + 1
    try:
        enc_cfg = EncoderConfig(num_classes=num_classes,
                                **{k: v for k, v in manifest.encoder.items() if k != "num_classes"})
        train_cfg = TrainConfig(**manifest.train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc
    manifest.encoder = enc_cfg.to_dict()
    manifest.train = train_cfg.to_dict()
    with threadpool_limits(limits=threads):
        params, history = train(groups, labels, split, enc_cfg, train_cfg)
        report = {
            name: evaluate(params, groups, labels, split[name], enc_cfg,
                           train_cfg.batch_size).to_dict()
            for name in ("train", "valid", "test")
        }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {"precompute_hash": manifest.precompute_hash(), "run_hash": manifest.run_hash()}
    save_checkpoint(out_dir / "checkpoint.rpck", params, enc_cfg,
                    [grp.relation for grp in groups], hashes)
    write_history_csv(history, out_dir / "history.csv")
    metrics = {**report["test"], "splits": report, "epochs": len(history),
               "best_epoch": history[-1]["best_epoch"], **hashes}
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    manifest.output_dir = str(out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    return metrics


# command handlers -------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SynthSpec(seed=args.seed if args.seed is not None else 0)
    for key in ("signal", "n_papers", "num_classes", "homophily", "feature_snr"):
        val = getattr(args, key)
        if val is not None:
            setattr(spec, key, val)
    ds = make_synthetic(spec)
    graph = ds.graph
    # only paper features are real; the rest are re-embedded at precompute time
    for vt in list(graph.features):
        if vt != ds.target:
            del graph.features[vt]
    graphio.save_graph_dir(args.out, graph, base_edges=ds.base_edges, target=ds.target,
                           labels=ds.labels, split=ds.split,
                           extra={"num_classes": ds.num_classes, "synth": spec.to_dict()})
    print(json.dumps({"graph_dir": str(args.out), "target": ds.target,
                      "num_classes": ds.num_classes}))
    return 0


def cmd_precompute(args) -> int:
    manifest = build_manifest(args, args.graph_dir)
    path = do_precompute(manifest, args.out, args.threads)
    print(json.dumps({"archive": str(path), "manifest_hash": manifest.precompute_hash()}))
    return 0


def _train_overrides(args) -> dict:
    return {
        "train": {"lr": args.lr, "batch_size": args.batch_size, "patience": args.patience,
                  "max_epochs": args.max_epochs, "seed": args.seed},
        "encoder": {"hidden_dim": args.hidden},
    }


def cmd_train(args) -> int:
    metrics = do_train(args.archive, args.out, args.labels, args.split,
                       _train_overrides(args), args.manifest, args.threads)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    manifest = build_manifest(args, args.graph_dir)
    out = Path(args.out)
    archive = do_precompute(manifest, out / "precompute", args.threads)
    metrics = do_train(archive, out / "train", threads=args.threads)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    groups, header, manifest = _load_archive_with_manifest(args.archive, args.manifest)
    params, enc_cfg, ck = load_checkpoint(args.checkpoint)
    if ck.get("precompute_hash") != header.get("manifest_hash"):
        raise ConfigError("checkpoint and archive come from different pre-computations")
    labels, split = _labels_and_split(manifest, args.labels, args.split)
    arrays = [grp.stacked() for grp in groups]
    out = {name: evaluate(params, arrays, labels, split[name], enc_cfg).to_dict()
           for name in ("train", "valid", "test")}
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_ledger(args) -> int:
    g = graphio.load_graph_dir(args.graph_dir)
    target = args.target or graphio.load_manifest(args.graph_dir).get("target")
    if not target:
        raise ConfigError("no target vertex type given")
    ledger = provenance_ledger(g, target, _scheme(args.scheme), args.iterations)
    md, js = ledger.to_markdown(), ledger.dumps_json()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ledger.md").write_text(md)
        (out / "ledger.json").write_text(js)
    print(md if args.format == "markdown" else js)
    return 0


def cmd_bench(args) -> int:
    groups, _, manifest = _load_archive_with_manifest(args.archive, args.manifest)
    enc = {k: v for k, v in {**DEFAULT_ENCODER, **manifest.encoder}.items() if k != "num_classes"}
    if args.hidden:
        enc["hidden_dim"] = args.hidden
    enc_cfg = EncoderConfig(num_classes=args.num_classes, **enc)
    train_cfg = TrainConfig(batch_size=args.batch_size or 10000, seed=manifest.seed)
    ks = [int(k) for k in args.k_values.split(",")]
    with threadpool_limits(limits=args.threads):
        table = bench_epoch_time(groups, enc_cfg, train_cfg, ks, args.repeats)
    print(json.dumps(table, sort_keys=True))
    return 0


def _common(p, graph=True):
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    if graph:
        p.add_argument("--config")
        p.add_argument("--scheme", choices=["local", "two-hop", "even-odd",
                                            "two_hop", "even_odd"])
        p.add_argument("--iterations", "-K", type=int)
        p.add_argument("--psp", type=float)
        p.add_argument("--rp", choices=["sparse", "gaussian"])
        p.add_argument("--dim", type=int, help="random embedding size for featureless types")
        p.add_argument("--target")
        p.add_argument("--relation-cap", type=int)


def _train_flags(p):
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--hidden", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rphgnn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted-signal dataset")
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    p.add_argument("--signal", type=float)
    p.add_argument("--n-papers", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--homophily", type=float)
    p.add_argument("--feature-snr", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("precompute", help="run pre-computation into a group archive")
    p.add_argument("graph_dir")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("train", help="train the encoder on a group archive")
    p.add_argument("archive")
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.add_argument("--split")
    p.add_argument("--manifest")
    _common(p, graph=False)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="precompute then train")
    p.add_argument("graph_dir")
    p.add_argument("--out", required=True)
    _common(p)
    _train_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("archive")
    p.add_argument("--labels")
    p.add_argument("--split")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ledger", help="export the pre-merge provenance ledger")
    p.add_argument("graph_dir")
    p.add_argument("--scheme", default="even-odd",
                   choices=["local", "two-hop", "even-odd", "two_hop", "even_odd"])
    p.add_argument("--iterations", "-K", type=int, default=2)
    p.add_argument("--target")
    p.add_argument("--format", choices=["markdown", "json"], default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ledger)

    p = sub.add_parser("bench", help="epoch time versus K")
    p.add_argument("archive")
    p.add_argument("--manifest")
    p.add_argument("--k-values", default="1,2,4,8")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RelationCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (graphio.GraphFormatError, ArchiveError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, GraphError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
