"""Command-line entry point: ``castmm <command> [options]``.

Exit codes: 0 success, 2 usage, 3 configuration, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import shutil
import sys
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import tomli
import tomli_w
import torch

from castmm import __version__
from castmm.analysis import export_attention_csv, export_csv, record_attention, similarity_distribution
from castmm.corpus import Corpus, CorpusConfig, GenConfig, PropertyConfig, build_corpus
from castmm.corpus.properties import TARGET_KINDS
from castmm.fusion.cross_attention import write_attention_dump
from castmm.fusion.models import VARIANTS
from castmm.trainer import (
    ConfigError,
    TrainConfig,
    evaluate,
    finetune,
    load_trained,
    pretrain_contrastive,
    pretrain_mnp,
)

log = logging.getLogger("castmm")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4
SECTIONS = ("corpus", "train", "pretrain")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_override(doc: dict, item: str) -> None:
    """Set ``a.b.c=value`` in a nested dict; the value is read as TOML when possible."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(item, "override must look like section.key=value")
    parts = key.strip().split(".")
    if parts[0] not in SECTIONS:
        raise ConfigError(key.strip(), f"unknown section {parts[0]!r}; expected one of {SECTIONS}")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(key.strip(), "is not a table")
    node[parts[-1]] = _parse_value(raw.strip())


def load_config(path: str | None, overrides: list[str]) -> dict:
    doc: dict = {}
    if path:
        try:
            doc = tomli.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
        except tomli.TOMLDecodeError as e:
            raise ConfigError("config", f"invalid TOML: {e}") from None
    for k in doc:
        if k not in SECTIONS:
            raise ConfigError(k, f"unknown section; expected one of {SECTIONS}")
    for item in overrides:
        apply_override(doc, item)
    return doc


def corpus_config(section: dict) -> CorpusConfig:
    section = dict(section)
    known = {f.name for f in fields(CorpusConfig)}
    for k in section:
        if k not in known:
            raise ConfigError(f"corpus.{k}", "unknown corpus key")
    try:
        if "gen" in section:
            section["gen"] = GenConfig(**section["gen"])
        if "props" in section:
            section["props"] = PropertyConfig(**section["props"])
        if "ratios" in section:
            section["ratios"] = tuple(section["ratios"])
        return CorpusConfig(**section)
    except (TypeError, ValueError) as e:
        raise ConfigError("corpus", str(e)) from None


def train_config(doc: dict, extra: dict, pretrain: bool = False) -> TrainConfig:
    d = dict(doc.get("train", {}))
    if pretrain:
        for k, v in doc.get("pretrain", {}).items():
            d[k] = {**d.get(k, {}), **v} if isinstance(v, dict) else v
    d.update({k: v for k, v in extra.items() if v is not None})
    try:
        return TrainConfig.from_dict(d)
    except ConfigError as e:
        raise ConfigError(f"train.{e.field}", str(e).split(": ", 1)[-1]) from None
    except TypeError as e:
        raise ConfigError("train", str(e)) from None


def _plain(obj):
    """Make a dataclass dict TOML-serialisable (tuples to lists, no None)."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# ---------------------------------------------------------------- run directory


class RunDir:
    """Stage outputs in a sibling temp dir; move into place only on success."""

    def __init__(self, out: str):
        self.final = Path(out)
        if self.final.exists() and (not self.final.is_dir() or any(self.final.iterdir())):
            raise UsageError(f"output directory {out} already exists and is not empty")
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.path = Path(tempfile.mkdtemp(prefix=f".{self.final.name}.", dir=self.final.parent))

    def commit(self, manifest: dict) -> None:
        files = {}
        for p in sorted(self.path.rglob("*")):
            if p.is_file():
                files[str(p.relative_to(self.path))] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {**manifest, "files": files}
        (self.path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        if self.final.exists():
            self.final.rmdir()
        self.path.rename(self.final)

    def abort(self) -> None:
        shutil.rmtree(self.path, ignore_errors=True)


def _manifest(args, snapshot: dict) -> dict:
    return {
        "command": args.command,
        "argv": [a for a in sys.argv[1:]],
        "arguments": {k: v for k, v in vars(args).items() if k not in ("func", "set", "config")},
        "config": snapshot,
        "castmm_version": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
    }


def _write_snapshot(run: RunDir, snapshot: dict) -> None:
    (run.path / "config.toml").write_text(tomli_w.dumps(_plain(snapshot)))


# ---------------------------------------------------------------- commands


def cmd_gen_corpus(args, doc, run: RunDir) -> dict:
    section = dict(doc.get("corpus", {}))
    if args.n is not None:
        section["n"] = args.n
    if args.seed is not None:
        section["seed"] = args.seed
    cfg = corpus_config(section)
    corpus = build_corpus(cfg)
    corpus.save(run.path)
    snapshot = {"corpus": asdict(cfg)}
    _write_snapshot(run, snapshot)
    print(f"wrote {len(corpus.entries)} structures ({len(corpus.kept())} kept) to {args.out}")
    return snapshot


def _load_corpus(path) -> Corpus:
    try:
        return Corpus.load(path)
    except FileNotFoundError as e:
        raise RuntimeError(f"cannot load corpus from {path}: {e.filename} missing") from None


def cmd_pretrain(args, doc, run: RunDir) -> dict:
    cfg = train_config(doc, {"task": args.task, "seed": args.seed}, pretrain=True)
    corpus = _load_corpus(args.corpus)
    result = (pretrain_mnp if cfg.kind == "mnp" else pretrain_contrastive)(corpus, cfg)
    result.save(run.path / "checkpoint.ckpt")
    result.log.write(run.path)
    result.data.vocab.save(run.path / "vocab.txt")
    snapshot = {"train": cfg.to_dict()}
    _write_snapshot(run, snapshot)
    print(json.dumps(result.log.final))
    return snapshot


def cmd_finetune(args, doc, run: RunDir) -> dict:
    task = f"regression:{args.property}" if args.property else None
    cfg = train_config(doc, {"task": task, "variant": args.variant, "seed": args.seed})
    if cfg.kind != "regression":
        raise ConfigError("train.task", "finetune needs a regression task")
    corpus = _load_corpus(args.corpus)
    result = finetune(args.init, corpus, cfg)
    result.save(run.path / "checkpoint.ckpt")
    result.log.write(run.path)
    if result.data.samples["test"]:
        evaluate(result.model, result.data, "test").write_csv(run.path / "predictions_test.csv")
    snapshot = {"train": cfg.to_dict()}
    _write_snapshot(run, snapshot)
    print(json.dumps(result.log.final))
    return snapshot


def cmd_evaluate(args, doc, run: RunDir) -> dict:
    corpus = _load_corpus(args.corpus)
    model, data, meta = load_trained(args.checkpoint, corpus)
    if meta.get("property") is None:
        raise ConfigError("checkpoint", "not a regression checkpoint")
    res = evaluate(model, data, args.split)
    res.write_csv(run.path / f"predictions_{args.split}.csv")
    metrics = {"split": args.split, "property": meta["property"], "mae": res.mae, "n": len(res.rows)}
    (run.path / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")
    print(json.dumps(metrics))
    return {}


def cmd_analyze(args, doc, run: RunDir) -> dict:
    corpus = _load_corpus(args.corpus)
    model, data, meta = load_trained(args.checkpoint, corpus)
    if not hasattr(model, "fuse"):
        raise ConfigError("checkpoint", f"a {meta['kind']} model has no cross-attention stack")
    samples = data.samples[args.split]
    layers = [int(x) for x in args.layers.split(",")] if args.layers else None
    report = similarity_distribution(model, samples, layers, per_head=args.per_head)
    export_csv(report, run.path / "similarity_histogram.csv")
    summary = {"n_samples": report.n_samples, "n_skipped": report.n_skipped, "layers": report.summary()}
    (run.path / "similarity_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    wanted = args.sample or [s.id for s in sorted(samples, key=lambda s: s.id)[: args.dump]]
    by_id = {s.id: s for s in samples}
    for sid in wanted:
        if sid not in by_id:
            raise ConfigError("sample", f"{sid!r} is not in the {args.split} split")
        amap, tokens = record_attention(model, by_id[sid], data.vocab)
        write_attention_dump(run.path / f"attention_{sid}.bin", sid, amap, tokens)
        export_attention_csv(amap, tokens, run.path / f"attention_{sid}.csv")
    print(json.dumps(summary["layers"]))
    return {}


def _fmt(values: list[float]) -> str:
    v = np.array(values, dtype=np.float64)
    return f"{v.mean():.3f}({v.std():.3f})"


def run_compare(corpus: Corpus, doc: dict, variants, props, seeds, out: Path) -> dict:
    """Every (variant, property, seed) cell; pretraining runs once per seed."""
    results: dict[str, dict[str, list[float]]] = {v: {p: [] for p in props} for v in variants}
    for seed in seeds:
        pre = {}
        if "cast" in variants:
            pre["cast"] = pretrain_mnp(corpus, train_config(doc, {"task": "mnp", "seed": seed}, pretrain=True))
            pre["cast"].save(out / f"pretrain_mnp_s{seed}.ckpt")
        if "contrastive" in variants:
            pre["contrastive"] = pretrain_contrastive(
                corpus, train_config(doc, {"task": "contrastive", "seed": seed}, pretrain=True)
            )
            pre["contrastive"].save(out / f"pretrain_contrastive_s{seed}.ckpt")
        for variant in variants:
            for prop in props:
                cfg = train_config(doc, {"task": f"regression:{prop}", "variant": variant, "seed": seed})
                res = finetune(pre.get(variant), corpus, cfg)
                mae = res.log.final["test_mae"]
                results[variant][prop].append(mae)
                log.info("%s %s seed %d: test MAE %.4f", variant, prop, seed, mae)
                print(f"{variant:>14} {prop:>8} seed {seed}: {mae:.4f}", flush=True)
    return results


def compare_table(results: dict, props) -> str:
    lines = ["| model | " + " | ".join(props) + " |", "|---|" + "---|" * len(props)]
    for variant, cols in results.items():
        lines.append(f"| {variant} | " + " | ".join(_fmt(cols[p]) for p in props) + " |")
    return "\n".join(lines) + "\n"


def cmd_compare(args, doc, run: RunDir) -> dict:
    props = args.properties.split(",")
    for p in props:
        if p not in TARGET_KINDS:
            raise ConfigError("properties", f"unknown property {p!r}")
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError("variants", f"unknown variant {v!r}")
    seeds = [int(s) for s in args.seeds.split(",")]
    train_config(doc, {})  # validate before any work
    corpus = _load_corpus(args.corpus)
    results = run_compare(corpus, doc, variants, props, seeds, run.path)
    (run.path / "results.json").write_text(json.dumps({"seeds": seeds, "mae": results}, indent=1) + "\n")
    table = compare_table(results, props)
    (run.path / "table.md").write_text(table)
    print(table, end="")
    snapshot = {k: v for k, v in doc.items()}
    _write_snapshot(run, snapshot)
    return snapshot


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="castmm", description="Cross-attention structure/text property models.")
    parser.add_argument("--version", action="version", version=f"castmm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def common(p, corpus=True):
        p.add_argument("--out", required=True, help="output directory (created; must not be a non-empty dir)")
        p.add_argument("--config", help="TOML config with [corpus], [train] and [pretrain] tables")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dot-path override")
        p.add_argument("-v", "--verbose", action="store_true")
        if corpus:
            p.add_argument("--corpus", required=True, help="corpus directory from gen-corpus")

    p = sub.add_parser("gen-corpus", help="generate a synthetic structure/text/property corpus")
    common(p, corpus=False)
    p.add_argument("--n", type=int, help="number of structures to generate")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="masked node prediction or contrastive pretraining")
    common(p)
    p.add_argument("--task", choices=("mnp", "contrastive"), default="mnp")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train a regression model, optionally from a checkpoint")
    common(p)
    p.add_argument("--property", choices=TARGET_KINDS)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--init", help="checkpoint to start from (omit for training from scratch)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="MAE and per-sample predictions of a finetuned checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-attention", help="pairwise attention cosine distributions and map dumps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--layers", help="comma-separated fusion layer indices (default: all)")
    p.add_argument("--per-head", action="store_true", help="one distribution per head instead of per layer")
    p.add_argument("--sample", action="append", help="dump this sample's attention map (repeatable)")
    p.add_argument("--dump", type=int, default=1, help="dump maps of the first N samples when --sample is absent")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="every model variant x seed x property, as a mean(std) MAE table")
    common(p)
    p.add_argument("--properties", default="E_tot", help="comma-separated properties")
    p.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)}")
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    run = None
    try:
        doc = load_config(args.config, args.set)
        run = RunDir(args.out)
        snapshot = args.func(args, doc, run)
        run.commit(_manifest(args, snapshot))
        return EXIT_OK
    except UsageError as e:
        print(f"castmm: error: {e}", file=sys.stderr)
        code = EXIT_USAGE
    except ConfigError as e:
        print(f"castmm: config error: {e}", file=sys.stderr)
        code = EXIT_CONFIG
    except Exception as e:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"castmm: error: {type(e).__name__}: {e}", file=sys.stderr)
        code = EXIT_RUNTIME
    if run is not None:
        run.abort()
    return code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
