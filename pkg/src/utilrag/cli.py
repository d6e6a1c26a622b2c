"""utilrag: utility-aware retrieval, fusion, summarization and QA evaluation.

Exit codes: 0 success, 2 input or configuration error, 3 oracle error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig
from .errors import ArtifactError, ConfigError, DivergedLoss, InputError, OracleError, OracleFailure
from .evalgen import answer, evaluate, format_grid
from .oracle import Oracle, make_oracle
from .pipeline import Pipeline
from .records import EMPTY_STRING_DOC, Query, load_corpus, load_dataset, read_jsonl_meta
from .retriever import Index, build_index, document_features, query_features, retrieve_topk
from .summarizer import (
    build_alignment_corpus,
    build_distillation_corpus,
    compression_ratio,
    save_alignment_corpus,
    save_distillation_corpus,
)
from .textcore import EncoderParams
from .utility import save_checkpoint, train_utility, utility_scores, write_loss_csv

log = logging.getLogger("utilrag")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ORACLE = 3
EXIT_DIVERGED = 4

SIM_ENCODER = "similarity.enc"
INDEX_FILE = "index.bin"
UTIL_ENCODER = "utility.enc"
UTIL_SIDECAR = "utility.json"
LOSS_CSV = "loss.csv"
MANIFEST = "manifest.json"
C_I_FILE = "c_i.jsonl"
C_A_FILE = "c_a.jsonl"


# -- run context ------------------------------------------------------------


class Run:
    """Resolved config plus the provenance stamped on every artifact."""

    def __init__(self, cfg: RunConfig):
        cfg.check_inputs()
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.fingerprint = cfg.fingerprint()
        self._oracle: Oracle | None = None

    @property
    def provenance(self) -> dict:
        return {"seed": self.cfg.seed, "config_fingerprint": self.fingerprint, "tool_version": __version__}

    def provenance_comment(self) -> str:
        return " ".join(f"{k}={v}" for k, v in sorted(self.provenance.items()))

    def oracle(self) -> Oracle:
        if self._oracle is None:
            self._oracle = make_oracle(self.cfg.oracle_config())
        return self._oracle

    def queries(self) -> list[Query]:
        return load_dataset(self.cfg.dataset_file())

    def record(self, name: str, kind: str) -> None:
        """Add or refresh an artifact's entry in the output manifest."""
        path = self.out / MANIFEST
        manifest = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {"artifacts": {}}
        manifest["tool_version"] = __version__
        manifest["artifacts"][name] = {"kind": kind, "sha256": _sha256(self.out / name), **self.provenance}
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_json(self, name: str, kind: str, payload: dict) -> None:
        body = {**payload, **self.provenance}
        (self.out / name).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.record(name, kind)

    # -- stage artifacts ---------------------------------------------------

    def similarity(self) -> tuple[EncoderParams, Index]:
        enc, idx = self.out / SIM_ENCODER, self.out / INDEX_FILE
        if not (enc.is_file() and idx.is_file()):
            log.info("no similarity index under %s; ingesting", self.out)
            return ingest(self)
        params = EncoderParams.load(enc)
        return params, Index.load(idx, params)

    def utility_params(self) -> EncoderParams:
        path = self.out / UTIL_ENCODER
        if not path.is_file():
            raise ArtifactError(f"utility model not found at {path}; run 'utilrag train-utility' first")
        return EncoderParams.load(path)

    def pipeline(self) -> Pipeline:
        pcfg = self.cfg.pipeline_config()
        _, index = self.similarity()
        util = self.utility_params() if pcfg.use_fusion else None
        return Pipeline(index, util, pcfg)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _find_query(run: Run, args: argparse.Namespace) -> Query:
    if getattr(args, "query_id", None):
        for q in run.queries():
            if q.id == args.query_id:
                return q
        raise InputError(f"query id {args.query_id!r} not in {run.cfg.dataset_file()}")
    if getattr(args, "question", None):
        return Query("cli", args.question, ())
    raise InputError("give --question TEXT or --query-id ID")


# -- stages -----------------------------------------------------------------


def ingest(run: Run) -> tuple[EncoderParams, Index]:
    cfg = run.cfg
    docs = load_corpus(cfg.corpus_file())
    enc = cfg.encoder
    if enc.checkpoint:
        params = EncoderParams.load(enc.checkpoint)
    elif enc.init == "spectral":
        feats = [document_features(d, enc.in_dim) for d in docs]
        if enc.fit_questions:
            feats += [query_features(q.text, enc.in_dim) for q in run.queries()]
        params = EncoderParams.spectral(feats, enc.out_dim, cfg.seed)
    else:
        params = EncoderParams.random(enc.in_dim, enc.out_dim, cfg.seed)
    params.meta = {**params.meta, **run.provenance}
    index = build_index(docs, params)
    run.out.mkdir(parents=True, exist_ok=True)
    params.save(run.out / SIM_ENCODER)
    index.save(run.out / INDEX_FILE, meta=run.provenance)
    run.record(SIM_ENCODER, "encoder")
    run.record(INDEX_FILE, "index")
    return params, index


def cmd_ingest(run: Run, args: argparse.Namespace) -> int:
    params, index = ingest(run)
    print(json.dumps({"index": str(run.out / INDEX_FILE), "n_docs": len(index), "params": params.fingerprint()}))
    return EXIT_OK


def cmd_train_utility(run: Run, args: argparse.Namespace) -> int:
    params, index = run.similarity()
    oracle = run.oracle()
    ucfg = run.cfg.utility
    try:
        res = train_utility(ucfg, run.queries(), index, params, oracle)
    except OracleFailure as exc:
        partial = exc.partial if exc.partial is not None else params
        partial.meta = {**run.provenance, "partial": True}
        save_checkpoint(run.out / "partial", partial, ucfg, 0, float("nan"), oracle.identity, run.provenance)
        raise
    res.params.meta = dict(run.provenance)
    extra = {**run.provenance, "oracle_calls": res.oracle_calls, "unique_pairs": res.unique_pairs, "steps": res.steps}
    save_checkpoint(run.out, res.params, ucfg, ucfg.epochs, res.loss_trace[-1][1], oracle.identity, extra)
    write_loss_csv(run.out / LOSS_CSV, res.loss_trace, run.provenance_comment())
    for name, kind in ((UTIL_ENCODER, "encoder"), (UTIL_SIDECAR, "checkpoint"), (LOSS_CSV, "loss_trace")):
        run.record(name, kind)
    print(json.dumps({"initial_loss": res.loss_trace[0][1], "final_loss": res.loss_trace[-1][1],
                      "epochs": ucfg.epochs, "oracle_calls": res.oracle_calls}))
    return EXIT_OK


def cmd_retrieve(run: Run, args: argparse.Namespace) -> int:
    q = _find_query(run, args)
    _, index = run.similarity()
    k = args.k or run.cfg.fusion.total_k
    hits = retrieve_topk(index, q.text, k)
    out = {"query": q.text, "similarity": [{"doc_id": s.doc_id, "score": s.score} for s in hits]}
    if (run.out / UTIL_ENCODER).is_file():
        pool = [index.doc(s.doc_id) for s in retrieve_topk(index, q.text, max(k, run.cfg.fusion.pool_size))]
        util = utility_scores(run.utility_params(), q.text, pool + [EMPTY_STRING_DOC])
        util.sort(key=lambda s: (-s.score, s.doc_id))
        out["utility"] = [{"doc_id": s.doc_id, "score": s.score} for s in util[:k]]
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_fuse(run: Run, args: argparse.Namespace) -> int:
    q = _find_query(run, args)
    adm = run.pipeline().admit(q)
    flags = adm.admitted.admit_flags if adm.admitted else {}
    print(json.dumps({
        "query": q.text,
        "selective_retrieval_fired": adm.selective_fired,
        "admitted": [{"doc_id": d.id, "admit": flags[d.id].value if d.id in flags else "by_similarity"}
                     for d in adm.docs],
    }, indent=2))
    return EXIT_OK


def cmd_summarize(run: Run, args: argparse.Namespace) -> int:
    q = _find_query(run, args)
    pipe = run.pipeline()
    adm = pipe.admit(q)
    summary = pipe.summarize(q) if adm.docs else ""
    ratio = compression_ratio(summary, adm.docs) if adm.docs else None
    print(json.dumps({"query": q.text, "doc_ids": [d.id for d in adm.docs], "summary": summary,
                      "compression_ratio": ratio}, indent=2))
    return EXIT_OK


def cmd_answer(run: Run, args: argparse.Namespace) -> int:
    q = _find_query(run, args)
    pipe = run.pipeline()
    adm = pipe.admit(q)
    knowledge, _ = pipe.knowledge(q, adm)
    pred = answer(run.oracle(), q, knowledge, seed=run.cfg.seed)
    print(json.dumps({"query": q.text, "answer": pred, "knowledge": knowledge.kind.value,
                      "doc_ids": [d.id for d in adm.docs]}, indent=2))
    return EXIT_OK


def cmd_build_corpora(run: Run, args: argparse.Namespace) -> int:
    pipe = run.pipeline()
    oracle = run.oracle()
    queries = run.queries()
    seed = run.cfg.seed
    pairs = build_distillation_corpus(queries, pipe, oracle, seed=seed)
    triples = build_alignment_corpus(queries, pipe.summarize, oracle, seed=seed)
    run.out.mkdir(parents=True, exist_ok=True)
    save_distillation_corpus(run.out / C_I_FILE, pairs, run.provenance)
    save_alignment_corpus(run.out / C_A_FILE, triples, run.provenance)
    run.record(C_I_FILE, "distillation_corpus")
    run.record(C_A_FILE, "alignment_corpus")
    print(json.dumps({"c_i": len(pairs), "c_a": len(triples),
                      "c_a_positive": sum(t.label for t in triples)}))
    return EXIT_OK


def cmd_eval(run: Run, args: argparse.Namespace) -> int:
    pipe = run.pipeline()
    oracle = run.oracle()
    suffix = f"_{args.tag}" if args.tag else ""
    rows = []
    for name, path in run.cfg.datasets().items():
        queries = load_dataset(path)
        res = evaluate(queries, pipe, oracle, seed=run.cfg.seed,
                       max_parallel=run.cfg.oracle.max_parallel, config_fingerprint=run.fingerprint)
        res.meta = {"dataset": name, "dataset_sha256": _sha256(path), "pipeline": pipe.config.to_json(),
                    **run.provenance}
        run.out.mkdir(parents=True, exist_ok=True)
        stem = f"eval_{name}{suffix}"
        res.write_json(run.out / f"{stem}.json")
        res.write_csv(run.out / f"{stem}.csv", run.provenance_comment())
        run.record(f"{stem}.json", "eval_report")
        run.record(f"{stem}.csv", "eval_records")
        rows.append((name, res))
    print(format_grid(rows))
    return EXIT_OK


# -- verification -----------------------------------------------------------


def _embedded_provenance(path: Path, kind: str) -> dict | None:
    if kind == "encoder":
        return EncoderParams.load(path).meta
    if kind == "index":
        return Index.read_meta(path)
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    if path.suffix == ".jsonl":
        return read_jsonl_meta(path)
    if path.suffix == ".csv":
        first = path.read_text(encoding="utf-8").splitlines()[:1]
        if first and first[0].startswith("# "):
            return dict(item.split("=", 1) for item in first[0][2:].split())
        return {}
    return None


def verify_dir(out: Path, expected_fingerprint: str | None = None) -> list[str]:
    """Problems found in ``out``'s manifest and artifacts; empty when all is well."""
    path = out / MANIFEST
    if not path.is_file():
        return [f"no manifest at {path}"]
    manifest = json.loads(path.read_text(encoding="utf-8"))
    problems = []
    for name, entry in sorted(manifest.get("artifacts", {}).items()):
        art = out / name
        if not art.is_file():
            problems.append(f"{name}: missing")
            continue
        if _sha256(art) != entry["sha256"]:
            problems.append(f"{name}: content hash differs from manifest")
            continue
        try:
            embedded = _embedded_provenance(art, entry["kind"])
        except (ArtifactError, ValueError) as exc:
            problems.append(f"{name}: unreadable ({exc})")
            continue
        if embedded is not None:
            for key in ("seed", "config_fingerprint", "tool_version"):
                if str(embedded.get(key)) != str(entry.get(key)):
                    problems.append(f"{name}: embedded {key} {embedded.get(key)!r} != manifest {entry.get(key)!r}")
        if expected_fingerprint is not None and entry.get("config_fingerprint") != expected_fingerprint:
            problems.append(f"{name}: built with config {entry.get('config_fingerprint')}, "
                            f"current config is {expected_fingerprint}")
    return problems


def cmd_verify(run: Run, args: argparse.Namespace) -> int:
    expected = run.fingerprint if args.config else None
    problems = verify_dir(run.out, expected)
    for p in problems:
        print(f"FAIL {p}")
    if problems:
        return EXIT_INPUT
    print(f"OK {run.out / MANIFEST}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------


COMMANDS = {
    "ingest": (cmd_ingest, "build and save the similarity encoder and index"),
    "train-utility": (cmd_train_utility, "train the utility model against the oracle"),
    "retrieve": (cmd_retrieve, "show similarity (and utility) top-k for one query"),
    "fuse": (cmd_fuse, "show the fused admitted set for one query"),
    "summarize": (cmd_summarize, "summarize the admitted documents for one query"),
    "build-corpora": (cmd_build_corpora, "write the distillation and alignment corpora"),
    "answer": (cmd_answer, "answer one question through the full pipeline"),
    "eval": (cmd_eval, "evaluate EM/F1 over one or more datasets"),
    "verify": (cmd_verify, "re-check the artifact manifest and fingerprints"),
}


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration (flags override the config file)")
    g.add_argument("--config", help="YAML run configuration")
    g.add_argument("--output-dir")
    g.add_argument("--seed", type=int)
    g.add_argument("--corpus", help="corpus JSONL (default: bundled toy corpus)")
    g.add_argument("--dataset", action="append",
                   help="dataset JSONL; for eval may be repeated as NAME=PATH")
    g.add_argument("--oracle", choices=["mock", "remote"])
    g.add_argument("--oracle-url")
    g.add_argument("--cache-dir")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--window-size", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--top-k", type=int, help="total documents admitted by fusion")
    g.add_argument("--k-sim", type=int)
    g.add_argument("--k-util", type=int)
    g.add_argument("--pool-size", type=int)
    g.add_argument("--knowledge", choices=["raw", "summary", "none"])
    g.add_argument("--max-chars", type=int)
    g.add_argument("--no-fusion", action="store_true", help="similarity top-k only (w/o-Comb ablation)")
    g.add_argument("--no-summary", action="store_true", help="raw documents as knowledge (w/o-AS ablation)")
    g.add_argument("--no-selective", action="store_true", help="never skip retrieval")
    g.add_argument("--log-level", default="WARNING")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="utilrag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"utilrag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_text)
        if name in ("retrieve", "fuse", "summarize", "answer"):
            sp.add_argument("--question", help="free-text question")
            sp.add_argument("--query-id", help="id of a query in the dataset")
        if name == "retrieve":
            sp.add_argument("-k", type=int)
        if name == "eval":
            sp.add_argument("--tag", help="suffix for report file names, e.g. an ablation label")
    return parser


def _split_datasets(values: Sequence[str]) -> dict[str, str]:
    out = {}
    for v in values:
        name, sep, path = v.partition("=")
        if not sep:
            name, path = Path(v).stem, v
        if name in out:
            raise ConfigError(f"dataset name {name!r} given twice")
        out[name] = path
    return out


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {
        "output_dir": args.output_dir,
        "seed": args.seed,
        "corpus_path": args.corpus,
        "oracle.kind": args.oracle,
        "oracle.endpoint_url": args.oracle_url,
        "oracle.cache_dir": args.cache_dir,
        "utility.epochs": args.epochs,
        "utility.learning_rate": args.lr,
        "utility.window_size": args.window_size,
        "utility.batch_size": args.batch_size,
        "fusion.total_k": args.top_k,
        "fusion.k_sim": args.k_sim,
        "fusion.k_util": args.k_util,
        "fusion.pool_size": args.pool_size,
        "knowledge": args.knowledge,
        "summarize.max_chars": args.max_chars,
    }
    if args.dataset:
        if args.command == "eval":
            overrides["eval_datasets"] = _split_datasets(args.dataset)
        else:
            overrides["dataset_path"] = args.dataset[0].partition("=")[2] or args.dataset[0]
    if args.no_fusion:
        overrides["fusion.enabled"] = False
    if args.no_summary:
        overrides["summarize.enabled"] = False
    if args.no_selective:
        overrides["fusion.selective"] = False
    return cfg.with_overrides(overrides)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    handler, _ = COMMANDS[args.command]
    try:
        run = Run(config_from_args(args))
        return handler(run, args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except DivergedLoss as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
