"""Command-line entry point: ``evextract <command> ...``.

Run settings live in one JSON config file; command-line flags override it and
the effective config is snapshotted into the output directory. Relative paths
in a config file resolve against the file's own directory. ``builtin:maritime``
and ``builtin:maritime-seeds`` name the bundled schema and seed corpus.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .corpus import Corpus, corpus_stats, load_corpus, maritime_seeds
from .embed import EmbeddingProviderConfig, embed_batch, embed_text, get_provider
from .errors import ConfigError, EvExtractError
from .evaluate import compare_runs, score
from .index import build_index, load_index, query, read_header, save_index
from .llm import MockBackend, RemoteChatBackend
from .mocks import gold_echo_backend
from .pipeline import ExtractionConfig, load_predictions, run_extraction
from .prompt import load_template
from .schema import EventSchema, load_schema, maritime_schema
from .synth import SynthesisConfig, report_writer_backend, synthesize, write_synthesis

log = logging.getLogger("evextract")

BUILTIN_SCHEMA = "builtin:maritime"
BUILTIN_SEEDS = "builtin:maritime-seeds"

DEFAULTS: dict[str, Any] = {
    "schema": BUILTIN_SCHEMA,
    "train": None,
    "test": None,
    "templates": {},
    "index": None,
    "output_dir": "runs",
    "extraction": {
        "mode": "decomposed",
        "demo_mode": "none",
        "k": 0,
        "grounding_policy": "first-occurrence",
        "demo_order": "most-similar-first",
        "multi_turn": False,
        "canonical_ids": [],
        "model_name": "gpt-3.5-turbo",
        "temperature": 0.0,
        "max_tokens": 1024,
        "max_inflight": 4,
    },
    "scoring": {"strictness": "string", "arg_requires_type": True},
    "embedding": {"provider_kind": "local-hash", "dim": 512, "normalize": True},
    "index_metric": "l2",
    "llm": {"kind": "remote", "endpoint": None, "model_name": None, "script": None, "requests_per_minute": None},
    "synthesis": {
        "seeds": BUILTIN_SEEDS,
        "seeds_per_prompt": 3,
        "target_count": 10,
        "temperature": 1.6,
        "max_tokens": 4000,
        "rng_seed": 0,
        "max_retries_per_item": 3,
        "min_types": 1,
        "max_types": 3,
        "output": "synthetic.jsonl",
    },
}

SWEEP_REGIMES = (
    ("zero-shot", "none", 0),
    ("one-shot", "fixed", 1),
    ("5-shot", "fixed", 5),
    ("5-shot RAE", "rae", 5),
)


# ------------------------------------------------------------------ config


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _set_path(cfg: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


class RunConfig:
    """Effective run settings with paths resolved against the config file."""

    def __init__(self, data: dict, base_dir: Path) -> None:
        self.data = data
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: str | None, overrides: list[tuple[str, Any]] = ()) -> RunConfig:
        data = copy.deepcopy(DEFAULTS)
        base = Path.cwd()
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {path}")
            try:
                data = _merge(data, json.loads(p.read_text(encoding="utf-8")))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from exc
            base = p.resolve().parent
        for dotted, value in overrides:
            _set_path(data, dotted, value)
        cfg = cls(data, base)
        cfg.check_inputs()
        return cfg

    def path(self, key: str, value: str | None = None) -> Path | None:
        raw = value if value is not None else self.data.get(key)
        if raw is None or str(raw).startswith("builtin:"):
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    def check_inputs(self) -> None:
        for key in ("schema", "train", "test"):
            raw = self.data.get(key)
            if raw and not str(raw).startswith("builtin:") and not self.path(key).is_file():
                raise ConfigError(f"{key}: file not found: {self.path(key)}")
        for kind, raw in (self.data.get("templates") or {}).items():
            if not self.path("", raw).is_file():
                raise ConfigError(f"templates.{kind}: file not found: {raw}")
        script = self.data["llm"].get("script")
        if script and not self.path("", script).is_file():
            raise ConfigError(f"llm.script: file not found: {script}")
        seeds = self.data["synthesis"].get("seeds")
        if seeds and not str(seeds).startswith("builtin:") and not self.path("", seeds).is_file():
            raise ConfigError(f"synthesis.seeds: file not found: {seeds}")

    # -- resources

    def schema(self) -> EventSchema:
        raw = self.data["schema"]
        return maritime_schema() if raw == BUILTIN_SCHEMA else load_schema(self.path("schema"))

    def corpus(self, key: str, schema: EventSchema, split: str) -> Corpus:
        raw = self.data.get(key)
        if raw is None:
            raise ConfigError(f"config has no {key!r} corpus")
        if raw == BUILTIN_SEEDS:
            return maritime_seeds(schema)
        return load_corpus(self.path(key), schema, split=split)

    def embed_config(self) -> EmbeddingProviderConfig:
        try:
            return EmbeddingProviderConfig.from_dict(self.data["embedding"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"embedding: {exc}") from exc

    def templates(self) -> dict:
        return {kind: load_template(self.path("", raw)) for kind, raw in (self.data.get("templates") or {}).items()}

    def backend(self, gold: Corpus | None = None):
        llm = self.data["llm"]
        kind = llm.get("kind", "remote")
        if kind == "remote":
            if not llm.get("endpoint"):
                raise ConfigError("llm.endpoint is required for the remote backend")
            return RemoteChatBackend(
                llm["endpoint"],
                llm.get("model_name"),
                requests_per_minute=llm.get("requests_per_minute"),
                max_inflight=int(self.data["extraction"]["max_inflight"]),
            )
        if kind == "mock":
            if not llm.get("script"):
                raise ConfigError("llm.script is required for the mock backend")
            return MockBackend.from_file(self.path("", llm["script"]))
        if kind == "gold-echo":
            if gold is None:
                raise ConfigError("gold-echo backend needs a labeled test corpus")
            return gold_echo_backend(gold)
        if kind == "report-writer":
            return report_writer_backend()
        raise ConfigError(f"unknown llm.kind {kind!r}")

    def output_dir(self) -> Path:
        return self.path("output_dir")


# ---------------------------------------------------------------- commands


def _print(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


def cmd_schema_validate(args) -> int:
    schema = load_schema(args.path)
    roles = {r.name for et in schema.event_types for r in et.roles}
    print(f"{schema.name} {schema.version}: {len(schema.event_types)} event types, {len(roles)} distinct roles")
    return 0


def cmd_corpus_stats(args) -> int:
    schema = maritime_schema() if args.schema == BUILTIN_SCHEMA else load_schema(args.schema)
    corpus = maritime_seeds(schema) if args.corpus == BUILTIN_SEEDS else load_corpus(args.corpus, schema, args.split)
    _print({"split": corpus.split, **corpus_stats(corpus).to_dict()})
    return 0


def _index_path(cfg: RunConfig) -> Path:
    p = cfg.path("index")
    if p is None:
        raise ConfigError("config has no 'index' path")
    return p


def cmd_index_build(args, cfg: RunConfig) -> int:
    schema = cfg.schema()
    train = cfg.corpus("train", schema, "train")
    econf = cfg.embed_config()
    out = _index_path(cfg)
    if out.exists() and not args.force:
        _, _, dim, _ = read_header(out.read_bytes())
        if dim != econf.dim:
            raise ConfigError(f"existing index {out} has dim {dim}, config asks for {econf.dim}; use --force to replace")
    vectors = embed_batch(econf, [inst.text for inst in train], provider=get_provider(econf))
    index = build_index(zip((i.id for i in train), vectors), metric=cfg.data.get("index_metric", "l2"), dim=econf.dim)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, out)
    truncated = sum(v.truncated for v in vectors)
    print(f"indexed {len(index)} instances (dim {index.dim}, metric {index.metric}, truncated {truncated}) -> {out}")
    return 0


def cmd_index_query(args, cfg: RunConfig) -> int:
    index = load_index(_index_path(cfg))
    econf = cfg.embed_config()
    if econf.dim != index.dim:
        raise ConfigError(f"embedding dim {econf.dim} != index dim {index.dim}")
    hits = query(index, embed_text(econf, args.text), args.k, exclude=args.exclude or ())
    for h in hits:
        print(f"{h.rank:>3}  {h.score:+.6f}  {h.instance_id}")
    return 0


def _extraction_config(cfg: RunConfig, schema: EventSchema, test: Corpus, overrides: dict | None = None) -> ExtractionConfig:
    ex = {**cfg.data["extraction"], **(overrides or {})}
    if (ex["demo_mode"] == "none") != (int(ex["k"]) == 0):
        raise ConfigError("extraction: k=0 if and only if demo_mode='none'")
    pool = index = econf = None
    canonical = tuple(ex.get("canonical_ids") or ())
    if ex["demo_mode"] != "none":
        pool = cfg.corpus("train", schema, "train")
    if ex["demo_mode"] == "fixed" and not canonical:
        # No hand-picked demonstrations: take the first k train instances.
        canonical = tuple(inst.id for inst in pool)[: int(ex["k"])]
    if ex["demo_mode"] == "rae":
        ipath = _index_path(cfg)
        if not ipath.is_file():
            raise ConfigError(f"demo_mode 'rae' needs an index; run index-build first ({ipath} missing)")
        index = load_index(ipath)
        econf = cfg.embed_config()
        if econf.dim != index.dim:
            raise ConfigError(f"embedding dim {econf.dim} != index dim {index.dim}")
    return ExtractionConfig(
        backend=cfg.backend(gold=test),
        mode=ex["mode"],
        demo_mode=ex["demo_mode"],
        k=int(ex["k"]),
        grounding_policy=ex["grounding_policy"],
        demo_order=ex["demo_order"],
        multi_turn=bool(ex["multi_turn"]),
        canonical_ids=canonical,
        pool=pool,
        index=index,
        embed_config=econf,
        templates=cfg.templates(),
        model_name=ex["model_name"],
        temperature=float(ex["temperature"]),
        max_tokens=int(ex["max_tokens"]),
        max_inflight=int(ex["max_inflight"]),
    )


def _write_report(report, out_dir: Path, stem: str = "report") -> None:
    (out_dir / f"{stem}.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / f"{stem}.txt").write_text(report.render_text(), encoding="utf-8")


def _run_one(cfg: RunConfig, schema: EventSchema, test: Corpus, run_dir: Path, overrides: dict | None = None):
    config = _extraction_config(cfg, schema, test, overrides)
    records = run_extraction(config, schema, test, run_dir=run_dir)
    (run_dir / "run_config.json").write_text(json.dumps(cfg.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    report = None
    if all(inst.labeled for inst in test):
        sc = cfg.data["scoring"]
        report = score(test, records, sc["strictness"], bool(sc["arg_requires_type"]))
        _write_report(report, run_dir)
    return records, report


def cmd_extract(args, cfg: RunConfig) -> int:
    schema = cfg.schema()
    test = cfg.corpus("test", schema, "test")
    run_dir = cfg.output_dir()
    records, report = _run_one(cfg, schema, test, run_dir)
    failed = sum(r.parse_failed for r in records)
    errors = sum(r.error is not None for r in records)
    print(f"extracted {len(records)} instances -> {run_dir} (parse failures {failed}, errors {errors})")
    if report is not None:
        print(report.render_text(), end="")
    return 0


def cmd_score(args) -> int:
    schema = maritime_schema() if args.schema == BUILTIN_SCHEMA else load_schema(args.schema)
    gold = maritime_seeds(schema) if args.gold == BUILTIN_SEEDS else load_corpus(args.gold, schema, "test")
    preds = load_predictions(args.predictions)
    report = score(gold, preds, args.strictness, not args.untyped_args)
    print(report.render_text(), end="")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json(), encoding="utf-8")
        out.with_suffix(".txt").write_text(report.render_text(), encoding="utf-8")
    return 0


def cmd_synthesize(args, cfg: RunConfig) -> int:
    schema = cfg.schema()
    syn = cfg.data["synthesis"]
    seeds_raw = syn["seeds"]
    seeds = maritime_seeds(schema) if seeds_raw == BUILTIN_SEEDS else load_corpus(cfg.path("", seeds_raw), schema, "train")
    templates = cfg.templates()
    config = SynthesisConfig(
        seed_pool=seeds,
        schema=schema,
        target_count=int(syn["target_count"]),
        seeds_per_prompt=int(syn["seeds_per_prompt"]),
        temperature=float(syn["temperature"]),
        max_tokens=int(syn["max_tokens"]),
        rng_seed=int(syn["rng_seed"]),
        max_retries_per_item=int(syn["max_retries_per_item"]),
        min_types=int(syn["min_types"]),
        max_types=int(syn["max_types"]),
        model_name=cfg.data["llm"].get("model_name") or "gpt-3.5-turbo",
        max_inflight=int(cfg.data["extraction"]["max_inflight"]),
        template=templates.get("synthesis"),
    )
    result = synthesize(config, cfg.backend())
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path = out_dir / syn["output"]
    write_synthesis(result, corpus_path)
    (out_dir / "synthesis_rejections.jsonl").write_text(
        "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in result.rejections), encoding="utf-8"
    )
    (out_dir / "synthesis_config.json").write_text(json.dumps(config.snapshot(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"synthesized {len(result.records)}/{config.target_count} reports -> {corpus_path}")
    if result.undershoot:
        print(f"undershoot: {result.undershoot} item(s) exhausted their retry budget", file=sys.stderr)
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    schema = cfg.schema()
    test = cfg.corpus("test", schema, "test")
    if not all(inst.labeled for inst in test):
        raise ConfigError("sweep needs a labeled test corpus")
    out_dir = cfg.output_dir()
    reports = []
    for label, demo_mode, k in SWEEP_REGIMES:
        run_dir = out_dir / label.lower().replace(" ", "-")
        _, report = _run_one(cfg, schema, test, run_dir, {"demo_mode": demo_mode, "k": k})
        reports.append((label, report))
    table = compare_runs(reports)
    (out_dir / "comparison.txt").write_text(table.render_text(), encoding="utf-8")
    (out_dir / "comparison.csv").write_text(table.to_csv(), encoding="utf-8")
    print(table.render_text(), end="")
    return 0


# ------------------------------------------------------------------ parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="JSON run config file")
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key (dotted path, JSON value)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evextract", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schema-validate", help="validate a schema file")
    p.add_argument("path")

    p = sub.add_parser("corpus-stats", help="print corpus statistics")
    p.add_argument("corpus")
    p.add_argument("--schema", default=BUILTIN_SCHEMA)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))

    p = sub.add_parser("index-build", help="embed the train corpus and write the index file")
    _add_run_flags(p)
    p.add_argument("--force", action="store_true", help="replace an existing index of another dim")

    p = sub.add_parser("index-query", help="nearest train instances for a text")
    _add_run_flags(p)
    p.add_argument("--text", required=True)
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--exclude", action="append")

    p = sub.add_parser("extract", help="run extraction over the test corpus")
    _add_run_flags(p)
    p.add_argument("--mode", choices=("decomposed", "single-step"))
    p.add_argument("--demo-mode", choices=("none", "fixed", "rae"))
    p.add_argument("-k", type=int)
    p.add_argument("--grounding", choices=("first-occurrence", "all-occurrences", "string-only"))

    p = sub.add_parser("score", help="score a predictions file against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--schema", default=BUILTIN_SCHEMA)
    p.add_argument("--strictness", default="string", choices=("string", "span"))
    p.add_argument("--untyped-args", action="store_true", help="Arg-C without requiring the event type")
    p.add_argument("--out", help="write the JSON report here (and a .txt table beside it)")

    p = sub.add_parser("synthesize", help="generate a synthetic corpus")
    _add_run_flags(p)
    p.add_argument("--target", type=int)
    p.add_argument("--rng-seed", type=int)

    p = sub.add_parser("sweep", help="run the four prompting regimes and compare them")
    _add_run_flags(p)
    return parser


def _overrides(args) -> list[tuple[str, Any]]:
    out: list[tuple[str, Any]] = []
    for item in args.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out.append((key.strip(), _parse_value(raw)))
    if getattr(args, "output_dir", None):
        out.append(("output_dir", str(Path(args.output_dir).resolve())))
    flag_map = {
        "mode": "extraction.mode",
        "demo_mode": "extraction.demo_mode",
        "k": "extraction.k",
        "grounding": "extraction.grounding_policy",
        "target": "synthesis.target_count",
        "rng_seed": "synthesis.rng_seed",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            out.append((key, val))
    return out


_RUN_COMMANDS = {
    "index-build": cmd_index_build,
    "index-query": cmd_index_query,
    "extract": cmd_extract,
    "synthesize": cmd_synthesize,
    "sweep": cmd_sweep,
}
_PLAIN_COMMANDS = {"schema-validate": cmd_schema_validate, "corpus-stats": cmd_corpus_stats, "score": cmd_score}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in _PLAIN_COMMANDS:
            return _PLAIN_COMMANDS[args.command](args)
        cfg = RunConfig.load(args.config, _overrides(args))
        return _RUN_COMMANDS[args.command](args, cfg)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
    except (EvExtractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
