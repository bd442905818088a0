"""Command-line pipeline: build-index, train, assign, retrieve, evaluate.

Every command reads one flat ``key=value`` config file (``--config``),
then applies ``--seed`` and repeated ``--set key=value`` overrides; flags
win. Outputs land under ``out_dir`` unless a path key overrides them, and
are written atomically. Failures exit nonzero with a single line on stderr:

    glen-error <kind> <message>
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import torch

from .corpus import (
    CorpusFormatError,
    Document,
    QrelSet,
    Query,
    Vocabulary,
    build_vocab,
    load_qrels,
    make_documents,
    make_queries,
    read_corpus,
    read_queries,
)
from .evaluation import collision_subset, evaluate_run, split_seen_unseen, write_report
from .fileio import atomic_write_text
from .id_index import IdentifierTrie, IdIndexError, read_id_table, write_id_table
from .inference import assign_ids, read_run, retrieve_all, write_run
from .keyword_id import KeywordError, compute_stats, extract_all, read_keyword_table, write_keyword_table
from .model import CheckpointError, GlenModel, ModelConfig, load_checkpoint, read_checkpoint_config, save_checkpoint
from .objectives import TrainingConfig, TrainingData, TrainingDivergence, train_phase, write_trace
from .synthetic import SyntheticConfig, generate

log = logging.getLogger("glen")


class ConfigError(ValueError):
    pass


# output file names inside out_dir; each can be overridden by the same key
OUTPUTS = {
    "keyword_table": "keywords.tsv",
    "term_stats": "term_stats.json",
    "keyword_checkpoint": "keyword.ckpt",
    "checkpoint": "model.ckpt",
    "id_table": "ids.tsv",
    "run": "run.trec",
    "report": "report.csv",
}


@dataclass
class RunConfig:
    corpus: str = "corpus.jsonl"
    queries: str = "queries.tsv"
    qrels: str = "qrels.train.tsv"
    eval_qrels: str = "qrels.test.tsv"
    out_dir: str = "out"
    keyword_table: str = ""
    term_stats: str = ""
    keyword_checkpoint: str = ""
    checkpoint: str = ""
    id_table: str = ""
    run: str = ""
    report: str = ""

    min_df: int = 1
    max_vocab: int = 0  # 0 = unlimited
    max_doc_len: int = 156
    max_query_len: int = 32
    stopwords: str = ""  # comma-separated
    k1: float = 1.2
    b: float = 0.75

    n: int = 3
    m: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_mult: int = 2

    k: int = 100
    beam: int = 100
    scorer: str = "softmax"
    cutoffs: str = "1,10,100"
    seed: int = 0

    train: TrainingConfig = field(default_factory=TrainingConfig)

    def path(self, key: str) -> Path:
        explicit = getattr(self, key)
        return Path(explicit) if explicit else Path(self.out_dir) / OUTPUTS[key]

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            n=self.n,
            m=self.m,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            ffn_mult=self.ffn_mult,
            seed=self.seed,
            token_decoder_input=self.train.token_decoder_input,
            max_len=max(self.max_doc_len, self.max_query_len),
        )

    def inference_checkpoint(self) -> Path:
        """no_refinement retrieves with the keyword-phase parameters."""
        return self.path("keyword_checkpoint" if self.train.no_refinement else "checkpoint")

    def cutoff_list(self) -> list[int]:
        return [int(c) for c in self.cutoffs.split(",") if c.strip()]

    def items(self) -> list[tuple[str, object]]:
        own = [(f.name, getattr(self, f.name)) for f in fields(self) if f.name != "train"]
        train = [(f.name, getattr(self.train, f.name)) for f in fields(self.train) if f.name != "seed"]
        return sorted(own + train)


def _own_keys() -> dict[str, object]:
    return {f.name: f.default for f in fields(RunConfig) if f.name != "train"}


def _train_keys() -> dict[str, object]:
    return {f.name: f.default for f in fields(TrainingConfig)}


def _coerce(key: str, raw: str, default: object) -> object:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if default is None:  # optional integer
            return None if raw.lower() in ("", "none") else int(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def apply(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    key = key.strip().replace("-", "_")
    own, train = _own_keys(), _train_keys()
    if key == "seed":
        seed = _coerce(key, raw, 0)
        return replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
    if key in own:
        return replace(cfg, **{key: _coerce(key, raw, own[key])})
    if key in train:
        try:
            return replace(cfg, train=replace(cfg.train, **{key: _coerce(key, raw, train[key])}))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown config key {key!r}")


def parse_config_text(text: str, cfg: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        try:
            cfg = apply(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return cfg


def load_config(path: str | Path | None = None, overrides: Sequence[str] = (), seed: int | None = None) -> RunConfig:
    """Config file, then ``--seed``, then ``--set`` overrides (later wins).

    Relative data and output paths in a config file are resolved against the
    file's directory.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        cfg = parse_config_text(text, cfg, str(p))
        base = p.parent
        for key in ("corpus", "queries", "qrels", "eval_qrels", "out_dir", *OUTPUTS):
            value = getattr(cfg, key)
            if value and not Path(value).is_absolute():
                cfg = replace(cfg, **{key: str(base / value)})
    if seed is not None:
        cfg = apply(cfg, "seed", str(seed))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = apply(cfg, *item.split("=", 1))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={'' if v is None else (int(v) if isinstance(v, bool) else v)}\n" for k, v in cfg.items())


# -- shared loading --------------------------------------------------------------


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


@dataclass
class Workspace:
    """Corpus-derived state every command rebuilds identically from the config."""

    vocab: Vocabulary
    docs: list[Document]
    records: list[tuple[str, str]]

    @classmethod
    def load(cls, cfg: RunConfig) -> "Workspace":
        records = read_corpus(_require(Path(cfg.corpus), "corpus"))
        vocab = build_vocab([t for _, t in records], cfg.min_df, cfg.max_vocab or None)
        return cls(vocab, make_documents(records, vocab, cfg.max_doc_len), records)

    def queries(self, cfg: RunConfig) -> list[Query]:
        return make_queries(read_queries(_require(Path(cfg.queries), "queries")), self.vocab, cfg.max_query_len)

    def qrels(self, path: str | Path, queries: Sequence[Query]) -> QrelSet:
        return load_qrels(
            _require(Path(path), "qrels"), {d.doc_id for d in self.docs}, {q.query_id for q in queries}
        )


def _stopwords(cfg: RunConfig) -> list[str]:
    return [w.strip() for w in cfg.stopwords.split(",") if w.strip()]


def _write_json(path: Path, obj: dict) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------------


def cmd_build_index(cfg: RunConfig) -> dict:
    ws = Workspace.load(cfg)
    stats = compute_stats(ws.docs)
    table = extract_all(ws.docs, stats, cfg.n, ws.vocab, _stopwords(cfg), cfg.k1, cfg.b)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    write_keyword_table(cfg.path("keyword_table"), table, ws.vocab)
    summary = {
        "doc_count": stats.doc_count,
        "avg_doc_len": stats.avg_doc_len,
        "vocab_size": ws.vocab.size,
        "distinct_terms": len(stats.df),
        "n": cfg.n,
        "distinct_keyword_ids": len({t.tokens for t in table.values()}),
        "degenerate_ids": sum(t.degenerate for t in table.values()),
    }
    _write_json(cfg.path("term_stats"), summary)
    return summary


def _training_data(cfg: RunConfig, ws: Workspace) -> TrainingData:
    queries = ws.queries(cfg)
    qrels = ws.qrels(cfg.qrels, queries)
    keyword_ids: dict[str, tuple[int, ...]] = {}
    if not cfg.train.no_keyword_phase:
        keyword_ids = read_keyword_table(_require(cfg.path("keyword_table"), "keyword table (run build-index)"), ws.vocab)
        bad = [d for d, ids in keyword_ids.items() if len(ids) != cfg.n]
        if bad:
            raise ConfigError(f"keyword table has identifiers of length != n={cfg.n} (e.g. {bad[0]})")
        missing = sorted({d.doc_id for d in ws.docs} - set(keyword_ids))
        if missing:
            raise ConfigError(f"keyword table is missing {len(missing)} documents (e.g. {missing[0]}); rerun build-index")
    return TrainingData({d.doc_id: d for d in ws.docs}, {q.query_id: q for q in queries}, qrels, keyword_ids)


def cmd_train(cfg: RunConfig, phase: str) -> list[dict]:
    ws = Workspace.load(cfg)
    mc = cfg.model_config(ws.vocab.size)
    if phase == "keyword":
        if cfg.train.no_keyword_phase:
            raise ConfigError("no_keyword_phase is set; the keyword phase is skipped (train --phase refine directly)")
        model = GlenModel(mc)
        out = cfg.path("keyword_checkpoint")
    elif phase == "refine":
        if cfg.train.no_refinement:
            raise ConfigError("no_refinement is set; retrieval uses the keyword checkpoint and refine is skipped")
        if cfg.train.no_keyword_phase:
            model = GlenModel(mc)
        else:
            model = load_checkpoint(_require(cfg.path("keyword_checkpoint"), "keyword-phase checkpoint"), mc)
        out = cfg.path("checkpoint")
    else:
        raise ConfigError(f"unknown phase {phase!r}")
    data = _training_data(cfg, ws)
    trace = train_phase(phase, model, data, cfg.train)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model)
    write_trace(Path(cfg.out_dir) / f"trace.{phase}.csv", trace, phase)
    return trace


def _inference_model(cfg: RunConfig, ws: Workspace) -> GlenModel:
    path = _require(cfg.inference_checkpoint(), "checkpoint")
    header = read_checkpoint_config(path)
    if header.vocab_size != ws.vocab.size:
        raise ConfigError(f"checkpoint |V|={header.vocab_size} but the corpus vocabulary has {ws.vocab.size} tokens")
    return load_checkpoint(path, cfg.model_config(ws.vocab.size))


def cmd_assign(cfg: RunConfig) -> int:
    ws = Workspace.load(cfg)
    model = _inference_model(cfg, ws)
    assignments = assign_ids(ws.docs, model)
    write_id_table(cfg.path("id_table"), assignments)
    return len(assignments)


def check_table(assignments, config: ModelConfig, path: Path) -> None:
    for a in assignments:
        if len(a.identifier) != config.n:
            raise ConfigError(f"{path}: identifier of {a.doc_id} has length {len(a.identifier)}, checkpoint n={config.n}")
        if len(a.w_doc) != config.n:
            raise ConfigError(f"{path}: w_doc of {a.doc_id} has length {len(a.w_doc)}, checkpoint n={config.n}")
        if any(not 0 <= t < config.content_size for t in a.identifier):
            raise ConfigError(
                f"{path}: identifier of {a.doc_id} uses a token outside the checkpoint vocabulary (|V|={config.vocab_size})"
            )


def _eval_queries(cfg: RunConfig, ws: Workspace) -> tuple[list[Query], QrelSet | None]:
    queries = ws.queries(cfg)
    if cfg.eval_qrels and Path(cfg.eval_qrels).exists():
        qrels = ws.qrels(cfg.eval_qrels, queries)
        return [q for q in queries if q.query_id in qrels], qrels
    return queries, None


def cmd_retrieve(cfg: RunConfig) -> int:
    ws = Workspace.load(cfg)
    model = _inference_model(cfg, ws)
    table_path = _require(cfg.path("id_table"), "identifier table (run assign)")
    assignments = read_id_table(table_path)
    check_table(assignments, model.config, table_path)
    trie = IdentifierTrie.build(assignments)
    queries, _ = _eval_queries(cfg, ws)
    runs = retrieve_all(queries, model, trie, cfg.k, cfg.beam, cfg.scorer)
    write_run(cfg.path("run"), runs)
    return len(runs)


def cmd_evaluate(cfg: RunConfig):
    ws = Workspace.load(cfg)
    queries = ws.queries(cfg)
    test = ws.qrels(_require(Path(cfg.eval_qrels), "evaluation qrels"), queries)
    runs = read_run(_require(cfg.path("run"), "run file (run retrieve)"))
    subsets: dict[str, set[str]] = {}
    if Path(cfg.qrels).exists():
        seen, unseen = split_seen_unseen(ws.qrels(cfg.qrels, queries), test)
        subsets.update(seen=seen, unseen=unseen)
    if cfg.path("id_table").exists():
        subsets["collision"] = collision_subset(test, IdentifierTrie.build(read_id_table(cfg.path("id_table"))))
    report = evaluate_run(runs, test, cfg.cutoff_list(), subsets=subsets)
    write_report(cfg.path("report"), report)
    return report


def cmd_synth(out: str | Path, scfg: SyntheticConfig) -> dict[str, Path]:
    return generate(scfg).write(out)


def run_pipeline(cfg: RunConfig):
    """build-index, both training phases (respecting ablation flags), assign,
    retrieve, evaluate."""
    timings = {}
    t0 = time.perf_counter()
    if not cfg.train.no_keyword_phase:
        cmd_build_index(cfg)
        cmd_train(cfg, "keyword")
    timings["keyword"] = time.perf_counter() - t0
    if not cfg.train.no_refinement:
        cmd_train(cfg, "refine")
    timings["refine"] = time.perf_counter() - t0 - timings["keyword"]
    cmd_assign(cfg)
    cmd_retrieve(cfg)
    report = cmd_evaluate(cfg)
    timings["total"] = time.perf_counter() - t0
    log.info("pipeline timings: %s", {k: round(v, 2) for k, v in timings.items()})
    return report


# -- argument parsing ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="glen", description="Lexical generative retrieval at desk scale.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("build-index", parents=[common], help="BM25 keyword identifiers + term statistics")
    tr = sub.add_parser("train", parents=[common], help="run one training phase")
    tr.add_argument("--phase", choices=("keyword", "refine"), required=True)
    sub.add_parser("assign", parents=[common], help="write the document identifier table")
    sub.add_parser("retrieve", parents=[common], help="constrained retrieval to a TREC run file")
    sub.add_parser("evaluate", parents=[common], help="metric report for a run file")
    sub.add_parser("pipeline", parents=[common], help="all of the above in order")
    sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    sy = sub.add_parser("synth", help="write the bundled synthetic dataset")
    sy.add_argument("--out", required=True)
    sy.add_argument("--seed", type=int, default=0)
    return ap


ERROR_KINDS = (
    (ConfigError, "config"),
    (FileNotFoundError, "missing-file"),
    (CorpusFormatError, "format"),
    (KeywordError, "format"),
    (IdIndexError, "format"),
    (CheckpointError, "checkpoint"),
    (TrainingDivergence, "divergence"),
    (OSError, "io"),
    (ValueError, "value"),
)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    torch.set_num_threads(1)
    try:
        if args.command == "synth":
            paths = cmd_synth(args.out, SyntheticConfig(seed=args.seed))
            for name, p in paths.items():
                print(f"{name}\t{p}")
            return 0
        cfg = load_config(args.config, args.set, args.seed)
        if args.command == "show-config":
            sys.stdout.write(dump_config(cfg))
        elif args.command == "build-index":
            summary = cmd_build_index(cfg)
            print(json.dumps(summary, sort_keys=True))
        elif args.command == "train":
            trace = cmd_train(cfg, args.phase)
            key = "L_key" if args.phase == "keyword" else "L_total"
            if trace:
                print(f"{args.phase}: {len(trace)} steps, first {key}={trace[0][key]:.6f}, last {key}={trace[-1][key]:.6f}")
            else:
                print(f"{args.phase}: 0 steps")
        elif args.command == "assign":
            print(f"assigned {cmd_assign(cfg)} documents -> {cfg.path('id_table')}")
        elif args.command == "retrieve":
            print(f"retrieved {cmd_retrieve(cfg)} queries -> {cfg.path('run')}")
        elif args.command == "evaluate":
            print(cmd_evaluate(cfg).table())
        elif args.command == "pipeline":
            print(run_pipeline(cfg).table())
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parseable line
        for cls, kind in ERROR_KINDS:
            if isinstance(exc, cls):
                break
        else:
            raise
        msg = " ".join(str(exc).split())
        print(f"glen-error {kind} {msg}", file=sys.stderr)
        return 2 if kind == "config" else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
