"""Resumable file pipeline: stage DAG, run manifest, and artifact layout.

Every stage reads only its declared inputs, writes its outputs atomically,
and records content digests in manifest.json.  Rerunning a completed stage
whose input digests are unchanged is a no-op, so interrupted runs resume
where they stopped.  With the mock backend the whole pipeline is
deterministic: everything except the manifest (which carries timestamps) is
byte-identical across runs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from . import kernels
from .config import RunConfig
from .core import (
    AspectUnit,
    Decision,
    DatasetRecord,
    PipelineError,
    QAPair,
    RecordError,
    aspect_from_dict,
    dataset_from_dict,
    load_aspects,
    load_datasets,
    load_papers,
    load_qapairs,
    paper_from_dict,
    qapair_from_dict,
    read_jsonl,
    record_to_dict,
    split_corpus,
    verdict_from_dict,
    write_jsonl,
)
from .curation import (
    assess_relevance,
    extract_aspects,
    label_segments,
    merge_drafts,
    truncate_text,
    verify_aspects,
)
from .evalqa import (
    LevelDistribution,
    aggregate_stats,
    classify_cognitive_level,
    diversity_index,
    evaluate_pair,
    rag_answer,
)
from .gateway import (
    BackendConfig,
    Gateway,
    HttpEmbeddingClient,
    MockEmbeddingClient,
    MockEntailmentScorer,
    HttpEntailmentScorer,
)
from .qagen import build_context, generate_qa, load_taxonomy, plan_generation
from .retrieval import (
    DocUnit,
    Index,
    IndexConfig,
    PassageStore,
    build_index,
    embed_corpus,
    embed_search,
    index_from_units,
    mrr_at,
    recall_at_k,
    search,
)
from .seper import curve_points, delta_seper, evaluate_filter
from .core import SectionLabel


class StageError(PipelineError):
    """Stage preconditions or execution failed."""


STAGE_ORDER = (
    "ingest",
    "match",
    "parse",
    "generate",
    "filter",
    "index",
    "bench-retrieval",
    "bench-qa",
    "stats",
    "split",
)

STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "match": ("ingest",),
    "parse": ("match",),
    "generate": ("parse",),
    "filter": ("generate",),
    "index": ("parse",),
    "bench-retrieval": ("index", "filter"),
    "bench-qa": ("index", "filter"),
    "stats": ("filter",),
    "split": ("filter",),
}


# ---------------------------------------------------------------------------
# Small file helpers
# ---------------------------------------------------------------------------


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_text_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_json_atomic(path: Path, value: Any) -> None:
    write_text_atomic(path, json.dumps(value, sort_keys=True, indent=2) + "\n")


def write_csv_atomic(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    write_text_atomic(path, buf.getvalue())


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


# ---------------------------------------------------------------------------
# Stage context
# ---------------------------------------------------------------------------


@dataclass
class StageContext:
    config: RunConfig
    run_dir: Path
    input_dir: Path | None = None

    def __post_init__(self):
        self._gateway: Gateway | None = None

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = Gateway.from_config(self.config.backend)
        return self._gateway

    @property
    def template_dir(self) -> Path | None:
        return self.config.template_dir

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def pmap(self, fn: Callable, items: Sequence) -> list:
        """Order-preserving parallel map, bounded by the config's worker cap."""
        if not items:
            return []
        workers = min(self.config.concurrency, len(items))
        if workers == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))

    def taxonomy(self):
        custom = None
        if self.template_dir is not None:
            candidate = self.template_dir / "taxonomy.json"
            if candidate.exists():
                custom = candidate
        return load_taxonomy(custom)


# ---------------------------------------------------------------------------
# Stage runners (each returns the list of files it wrote)
# ---------------------------------------------------------------------------


def _stage_ingest(ctx: StageContext) -> list[Path]:
    assert ctx.input_dir is not None
    datasets = load_datasets(ctx.input_dir / "datasets.jsonl")
    papers = load_papers(ctx.input_dir / "papers.jsonl")
    ids = [p.id for p in papers]
    if len(set(ids)) != len(ids):
        raise StageError("duplicate paper ids in input")
    write_jsonl(ctx.path("datasets.jsonl"), datasets)
    write_jsonl(ctx.path("papers.jsonl"), papers)
    return [ctx.path("datasets.jsonl"), ctx.path("papers.jsonl")]


def _stage_match(ctx: StageContext) -> list[Path]:
    datasets = load_datasets(ctx.path("datasets.jsonl"))
    papers = {p.id: p for p in load_papers(ctx.path("papers.jsonl"))}
    tasks: list[tuple[DatasetRecord, str]] = []
    for d in datasets:
        for pid in d.linked_paper_ids:
            if pid not in papers:
                raise StageError(f"dataset {d.id} links unknown paper {pid}")
            tasks.append((d, pid))

    def work(task: tuple[DatasetRecord, str]) -> dict:
        d, pid = task
        paper = papers[pid]
        verdict = assess_relevance(
            d,
            paper,
            ctx.gateway,
            max_paper_chars=ctx.config.max_paper_chars,
            template_dir=ctx.template_dir,
        )
        _, truncated = truncate_text(paper.full_text(), ctx.config.max_paper_chars)
        return {
            "dataset_id": d.id,
            "paper_id": pid,
            "used": verdict.used,
            "explanation": verdict.explanation,
            "truncated": truncated,
        }

    rows = ctx.pmap(work, tasks)
    write_jsonl(ctx.path("matches.jsonl"), rows)
    return [ctx.path("matches.jsonl")]


def _paper_sections(paper, ctx: StageContext) -> list[tuple[SectionLabel, str]]:
    """Use provided section labels when any exist; otherwise classify."""
    if paper.segments and any(lab is not SectionLabel.NONE for lab, _ in paper.segments):
        sections = list(paper.segments)
    else:
        sections = list(label_segments(paper.full_text(), ctx.gateway, ctx.template_dir))
    return [(lab, text) for lab, text in sections if lab is not SectionLabel.NONE]


def _stage_parse(ctx: StageContext) -> list[Path]:
    datasets = {d.id: d for d in load_datasets(ctx.path("datasets.jsonl"))}
    papers = {p.id: p for p in load_papers(ctx.path("papers.jsonl"))}
    matches = [row for _, row in read_jsonl(ctx.path("matches.jsonl"))]
    positive = [(m["dataset_id"], m["paper_id"]) for m in matches if m["used"]]

    needed = sorted({pid for _, pid in positive})
    sections_by_paper = {
        pid: secs
        for pid, secs in zip(needed, ctx.pmap(lambda pid: _paper_sections(papers[pid], ctx), needed))
    }

    def work(pair: tuple[str, str]) -> tuple[list[AspectUnit], list[str]]:
        ds_id, pid = pair
        dataset = datasets[ds_id]
        local: list[str] = []
        sections = sections_by_paper[pid]
        if not sections:
            local.append(f"{ds_id}/{pid}: paper has no labeled sections")
            return [], local
        drafts = [
            extract_aspects(dataset, text, ctx.gateway, ctx.template_dir)
            for _, text in sections
        ]
        merged = merge_drafts(drafts, ds_id, pid)
        if not merged.has_candidates():
            local.append(f"{ds_id}/{pid}: extraction produced no candidates")
            return [], local
        units = verify_aspects(
            merged, dataset, ctx.gateway, ctx.template_dir, warnings=local
        )
        return units, local

    results = ctx.pmap(work, positive)
    units: list[AspectUnit] = []
    warnings: list[str] = []
    for got, local in results:
        units.extend(got)
        warnings.extend(local)
    write_jsonl(ctx.path("aspects.jsonl"), units)
    write_json_atomic(ctx.path("parse_meta.json"), {"warnings": warnings})
    return [ctx.path("aspects.jsonl"), ctx.path("parse_meta.json")]


def _stage_generate(ctx: StageContext) -> list[Path]:
    datasets = load_datasets(ctx.path("datasets.jsonl"))
    aspects = load_aspects(ctx.path("aspects.jsonl"))
    by_ds: dict[str, list[AspectUnit]] = {}
    for a in aspects:
        by_ds.setdefault(a.dataset_id, []).append(a)
    taxonomy = ctx.taxonomy()

    tasks = []
    plans_meta = {}
    for d in datasets:
        ds_aspects = by_ds.get(d.id, [])
        plan = plan_generation(
            d, bool(ds_aspects), ctx.gateway, taxonomy, ctx.template_dir
        )
        context = build_context(d, ds_aspects)
        plans_meta[d.id] = {"mode": plan.mode.value, "total": plan.total()}
        for qtype, quota in plan.quotas:
            tasks.append((d.id, context, taxonomy[qtype], quota, plan.mode))

    def work(task) -> tuple[list[QAPair], list[str]]:
        ds_id, context, entry, quota, mode = task
        local: list[str] = []
        pairs = generate_qa(
            context,
            entry,
            quota,
            ctx.gateway,
            dataset_id=ds_id,
            provenance=mode,
            temperature=ctx.config.gen_temperature,
            regen_attempts=ctx.config.regen_attempts,
            template_dir=ctx.template_dir,
            warnings=local,
        )
        return pairs, local

    results = ctx.pmap(work, tasks)
    pairs: list[QAPair] = []
    warnings: list[str] = []
    for got, local in results:
        pairs.extend(got)
        warnings.extend(local)
    write_jsonl(ctx.path("qapairs.jsonl"), pairs)
    write_json_atomic(
        ctx.path("generation_meta.json"),
        {
            "dedup": "none",
            "total_pairs": len(pairs),
            "plans": plans_meta,
            "warnings": warnings,
        },
    )
    return [ctx.path("qapairs.jsonl"), ctx.path("generation_meta.json")]


def _contexts_by_dataset(ctx: StageContext) -> dict[str, str]:
    datasets = load_datasets(ctx.path("datasets.jsonl"))
    aspects = load_aspects(ctx.path("aspects.jsonl"))
    by_ds: dict[str, list[AspectUnit]] = {}
    for a in aspects:
        by_ds.setdefault(a.dataset_id, []).append(a)
    return {d.id: build_context(d, by_ds.get(d.id, [])) for d in datasets}


def _stage_filter(ctx: StageContext) -> list[Path]:
    pairs = load_qapairs(ctx.path("qapairs.jsonl"))
    contexts = _contexts_by_dataset(ctx)

    def work(pair: QAPair) -> dict:
        if pair.dataset_id not in contexts:
            raise StageError(f"pair {pair.id}: unknown dataset {pair.dataset_id}")
        verdict = delta_seper(
            pair.question, contexts[pair.dataset_id], pair.answer, ctx.gateway
        )
        row = record_to_dict(verdict)
        row["pair_id"] = pair.id
        row["model"] = ctx.gateway.model
        return row

    rows = ctx.pmap(work, pairs)
    write_jsonl(ctx.path("verdicts.jsonl"), rows)
    written = [ctx.path("verdicts.jsonl")]

    labels_path = ctx.config.filter_labels_path
    if labels_path is not None:
        labels_doc = json.loads(Path(labels_path).read_text(encoding="utf-8"))
        by_id = {row["pair_id"]: row for row in rows}
        unknown = sorted(set(labels_doc) - set(by_id))
        if unknown:
            raise StageError(f"filter labels reference unknown pairs: {unknown[:5]}")
        labeled = [(by_id[pid], bool(lab)) for pid, lab in sorted(labels_doc.items())]
        decisions = [Decision(row["decision"]) for row, _ in labeled]
        labels = [lab for _, lab in labeled]
        report = evaluate_filter(decisions, labels)
        write_csv_atomic(
            ctx.path("reports/filter_eval.csv"),
            ["precision", "recall", "f1", "n"],
            [[_fmt(report.precision), _fmt(report.recall), _fmt(report.f1), len(labeled)]],
        )
        written.append(ctx.path("reports/filter_eval.csv"))
        deltas = [row["delta"] for row, _ in labeled]
        if any(labels) and not all(labels):
            pr, roc = curve_points(deltas, labels)
            thresholds = sorted(set(deltas), reverse=True)
            write_csv_atomic(
                ctx.path("reports/filter_pr_curve.csv"),
                ["threshold", "recall", "precision"],
                [[_fmt(t), _fmt(r), _fmt(p)] for t, (r, p) in zip(thresholds, pr)],
            )
            write_csv_atomic(
                ctx.path("reports/filter_roc_curve.csv"),
                ["threshold", "fpr", "tpr"],
                [[_fmt(t), _fmt(f), _fmt(tp)] for t, (f, tp) in zip(thresholds, roc)],
            )
            written.append(ctx.path("reports/filter_pr_curve.csv"))
            written.append(ctx.path("reports/filter_roc_curve.csv"))
    return written


_INDEX_FILES = {
    IndexConfig.WITHOUT_PAPER: "index/without_paper.json",
    IndexConfig.WITH_PAPER: "index/with_paper.json",
}


def _stage_index(ctx: StageContext) -> list[Path]:
    datasets = load_datasets(ctx.path("datasets.jsonl"))
    aspects = load_aspects(ctx.path("aspects.jsonl"))
    written = []
    for cfg, name in _INDEX_FILES.items():
        index = build_index(datasets, aspects, cfg, k1=ctx.config.k1, b=ctx.config.b)
        doc = {
            "config": cfg.value,
            "k1": index.k1,
            "b": index.b,
            "units": [
                {"dataset_id": u.dataset_id, "source": u.source, "text": u.text}
                for u in index.units
            ],
        }
        write_json_atomic(ctx.path(name), doc)
        written.append(ctx.path(name))
    return written


def load_index(path: Path) -> Index:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    units = [DocUnit(u["dataset_id"], u["source"], u["text"]) for u in doc["units"]]
    return index_from_units(
        units, IndexConfig(doc["config"]), k1=doc["k1"], b=doc["b"]
    )


def _accepted_pairs(ctx: StageContext) -> list[QAPair]:
    pairs = load_qapairs(ctx.path("qapairs.jsonl"))
    verdicts = {}
    for _, row in read_jsonl(ctx.path("verdicts.jsonl")):
        verdicts[row["pair_id"]] = row
    missing = [p.id for p in pairs if p.id not in verdicts]
    if missing:
        raise StageError(f"pairs missing verdicts: {missing[:5]}")
    return [p for p in pairs if verdicts[p.id]["decision"] == Decision.ACCEPT.value]


def _embedding_client(ctx: StageContext):
    emb = ctx.config.embedding
    if not emb["enabled"]:
        return None
    if emb["kind"] == "mock":
        return MockEmbeddingClient(dim=int(emb["dim"]))
    http_cfg = BackendConfig(
        kind="http",
        endpoint=emb["endpoint"],
        model=emb["model"] or ctx.config.backend.model,
        api_key_env=ctx.config.backend.api_key_env,
    )
    return HttpEmbeddingClient(http_cfg)


def _stage_bench_retrieval(ctx: StageContext) -> list[Path]:
    accepted = _accepted_pairs(ctx)
    cap = ctx.config.bench_max_pairs
    if cap > 0:
        accepted = accepted[:cap]
    if not accepted:
        raise StageError("no accepted pairs to benchmark")
    queries = [(p.question, p.dataset_id) for p in accepted]
    ks = ctx.config.retrieval_ks
    cutoff = ctx.config.mrr_cutoff
    k_max = max(max(ks), cutoff)

    indexes = {cfg: load_index(ctx.path(name)) for cfg, name in _INDEX_FILES.items()}
    client = _embedding_client(ctx)

    def metrics_for(rank_fn, index: Index) -> list[float]:
        runs = ctx.pmap(lambda q: (rank_fn(index, q[0]), q[1]), queries)
        return [recall_at_k(runs, k) for k in ks] + [mrr_at(runs, cutoff)]

    header = ["method"]
    for cfg_label in ("without_paper", "with_paper"):
        header += [f"{cfg_label}_r_at_{k}" for k in ks]
        header.append(f"{cfg_label}_mrr_at_{cutoff}")

    rows = []
    bm25_row: list = ["bm25"]
    for cfg in (IndexConfig.WITHOUT_PAPER, IndexConfig.WITH_PAPER):
        bm25_row += [
            _fmt(v)
            for v in metrics_for(lambda idx, q: search(idx, q, k_max), indexes[cfg])
        ]
    rows.append(bm25_row)

    if client is not None:
        emb_row: list = [f"embedding-{ctx.config.embedding['kind']}"]
        for cfg in (IndexConfig.WITHOUT_PAPER, IndexConfig.WITH_PAPER):
            index = indexes[cfg]
            vectors = embed_corpus(index, client)
            emb_row += [
                _fmt(v)
                for v in metrics_for(
                    lambda idx, q, vec=vectors: embed_search(idx, vec, client, q, k_max),
                    index,
                )
            ]
        rows.append(emb_row)

    write_csv_atomic(ctx.path("reports/retrieval.csv"), header, rows)
    write_json_atomic(
        ctx.path("reports/retrieval_meta.json"),
        {
            "aggregation": "dataset score = max over its doc units",
            "tie_break": "ascending dataset id",
            "with_paper_units": "one unit per verified aspect passage",
            "query_source": "questions of filter-accepted pairs",
            "n_queries": len(queries),
            "kernel_backend": kernels.backend_name(),
            "embedding": ctx.config.embedding["kind"] if client else None,
        },
    )
    return [ctx.path("reports/retrieval.csv"), ctx.path("reports/retrieval_meta.json")]


def _entailment_scorer(ctx: StageContext):
    ent = ctx.config.entailment
    if ent["kind"] == "mock":
        return MockEntailmentScorer(ctx.config.backend.script_path)
    http_cfg = BackendConfig(
        kind="http",
        endpoint=ent["endpoint"],
        model=ent["model"] or ctx.config.backend.model,
        api_key_env=ctx.config.backend.api_key_env,
    )
    return HttpEntailmentScorer(http_cfg)


def _stage_bench_qa(ctx: StageContext) -> list[Path]:
    accepted = _accepted_pairs(ctx)
    cap = ctx.config.bench_max_pairs
    if cap > 0:
        accepted = accepted[:cap]
    if not accepted:
        raise StageError("no accepted pairs to benchmark")
    with_index = load_index(ctx.path(_INDEX_FILES[IndexConfig.WITH_PAPER]))
    store = PassageStore.from_index(
        with_index, ctx.config.chunk_size, k1=ctx.config.k1, b=ctx.config.b
    )
    scorer = _entailment_scorer(ctx)
    levels = ctx.pmap(
        lambda p: classify_cognitive_level(p.question, ctx.gateway, ctx.template_dir),
        accepted,
    )
    level_of = {p.id: lv for p, lv in zip(accepted, levels)}

    eval_rows: list[dict] = []
    summary_rows: list[list] = []
    by_level_rows: list[list] = []
    warnings: list[str] = []
    for k in ctx.config.rag_ks:
        def work(pair: QAPair) -> dict:
            prediction = rag_answer(
                pair.question,
                store if k > 0 else None,
                ctx.gateway,
                k,
                ctx.template_dir,
                warnings=warnings,
            )
            record = evaluate_pair(pair, prediction, ctx.gateway.model, scorer)
            row = record_to_dict(record)
            row["k"] = k
            row["level"] = level_of[pair.id].value
            return row

        rows = ctx.pmap(work, accepted)
        eval_rows.extend(rows)

        n = len(rows)
        correct = sum(1 for r in rows if r["correct"])
        short_rows = [r for r in rows if r["rouge_l"] is None]
        long_rows = [r for r in rows if r["rouge_l"] is not None]
        summary_rows.append(
            [
                k,
                n,
                _fmt(correct / n),
                _fmt(sum(1 for r in short_rows if r["correct"]) / len(short_rows))
                if short_rows
                else "",
                _fmt(sum(1 for r in long_rows if r["correct"]) / len(long_rows))
                if long_rows
                else "",
                _fmt(sum(r["rouge_l"] for r in long_rows) / len(long_rows))
                if long_rows
                else "",
            ]
        )
        level_row: list = [k, _fmt(correct / n)]
        for code in ("C1", "C2", "C3", "C4", "C5", "C6"):
            level_rows = [r for r in rows if r["level"] == code]
            level_row.append(
                _fmt(sum(1 for r in level_rows if r["correct"]) / len(level_rows))
                if level_rows
                else ""
            )
        by_level_rows.append(level_row)

    write_jsonl(ctx.path("reports/qaeval.jsonl"), eval_rows)
    write_csv_atomic(
        ctx.path("reports/qa_summary.csv"),
        ["k", "n", "accuracy", "short_accuracy", "long_accuracy", "long_rouge_l"],
        summary_rows,
    )
    write_csv_atomic(
        ctx.path("reports/qa_by_level.csv"),
        ["k", "micro_avg", "C1", "C2", "C3", "C4", "C5", "C6"],
        by_level_rows,
    )
    return [
        ctx.path("reports/qaeval.jsonl"),
        ctx.path("reports/qa_summary.csv"),
        ctx.path("reports/qa_by_level.csv"),
    ]


def _stage_stats(ctx: StageContext) -> list[Path]:
    accepted = _accepted_pairs(ctx)
    if not accepted:
        raise StageError("no accepted pairs to summarize")
    rows = aggregate_stats(accepted)
    write_csv_atomic(
        ctx.path("reports/stats.csv"),
        ["label", "count", "pct", "avg_question_words", "avg_answer_words"],
        [
            [r.label, r.count, _fmt(r.pct), _fmt(r.avg_question_words), _fmt(r.avg_answer_words)]
            for r in rows
        ],
    )
    levels = ctx.pmap(
        lambda p: classify_cognitive_level(p.question, ctx.gateway, ctx.template_dir),
        accepted,
    )
    dist = LevelDistribution.from_levels(levels)
    write_csv_atomic(
        ctx.path("reports/levels.csv"),
        ["C1", "C2", "C3", "C4", "C5", "C6", "total", "diversity_index"],
        [list(dist.counts) + [dist.total, _fmt(diversity_index(dist))]],
    )
    return [ctx.path("reports/stats.csv"), ctx.path("reports/levels.csv")]


def _stage_split(ctx: StageContext) -> list[Path]:
    datasets = load_datasets(ctx.path("datasets.jsonl"))
    train, dev, test = split_corpus(
        datasets, ctx.config.split_ratios, ctx.config.split_seed
    )
    write_json_atomic(
        ctx.path("splits.json"),
        {
            "ratios": list(ctx.config.split_ratios),
            "seed": ctx.config.split_seed,
            "train": sorted(train),
            "dev": sorted(dev),
            "test": sorted(test),
        },
    )
    return [ctx.path("splits.json")]


_RUNNERS: dict[str, Callable[[StageContext], list[Path]]] = {
    "ingest": _stage_ingest,
    "match": _stage_match,
    "parse": _stage_parse,
    "generate": _stage_generate,
    "filter": _stage_filter,
    "index": _stage_index,
    "bench-retrieval": _stage_bench_retrieval,
    "bench-qa": _stage_bench_qa,
    "stats": _stage_stats,
    "split": _stage_split,
}


# ---------------------------------------------------------------------------
# Manifest and stage execution
# ---------------------------------------------------------------------------


def _stage_inputs(name: str, run_dir: Path, input_dir: Path | None, config: RunConfig) -> dict[str, Path]:
    r = run_dir
    table: dict[str, list[tuple[str, Path]]] = {
        "match": [("datasets.jsonl", r / "datasets.jsonl"), ("papers.jsonl", r / "papers.jsonl")],
        "parse": [
            ("datasets.jsonl", r / "datasets.jsonl"),
            ("papers.jsonl", r / "papers.jsonl"),
            ("matches.jsonl", r / "matches.jsonl"),
        ],
        "generate": [("datasets.jsonl", r / "datasets.jsonl"), ("aspects.jsonl", r / "aspects.jsonl")],
        "filter": [
            ("datasets.jsonl", r / "datasets.jsonl"),
            ("aspects.jsonl", r / "aspects.jsonl"),
            ("qapairs.jsonl", r / "qapairs.jsonl"),
        ],
        "index": [("datasets.jsonl", r / "datasets.jsonl"), ("aspects.jsonl", r / "aspects.jsonl")],
        "bench-retrieval": [
            ("datasets.jsonl", r / "datasets.jsonl"),
            ("aspects.jsonl", r / "aspects.jsonl"),
            ("qapairs.jsonl", r / "qapairs.jsonl"),
            ("verdicts.jsonl", r / "verdicts.jsonl"),
            ("index/without_paper.json", r / "index/without_paper.json"),
            ("index/with_paper.json", r / "index/with_paper.json"),
        ],
        "stats": [("qapairs.jsonl", r / "qapairs.jsonl"), ("verdicts.jsonl", r / "verdicts.jsonl")],
        "split": [("datasets.jsonl", r / "datasets.jsonl")],
    }
    table["bench-qa"] = table["bench-retrieval"]
    if name == "ingest":
        if input_dir is None:
            raise StageError("ingest requires --input pointing at the source corpus")
        entries = [
            ("input:datasets.jsonl", input_dir / "datasets.jsonl"),
            ("input:papers.jsonl", input_dir / "papers.jsonl"),
        ]
    else:
        entries = table[name]
        if name == "filter" and config.filter_labels_path is not None:
            entries = entries + [("filter_labels", config.filter_labels_path)]
    return dict(entries)


def run_stage(
    name: str,
    config: RunConfig,
    run_dir: Path,
    input_dir: Path | None = None,
) -> str:
    """Execute one stage; returns "done" or "noop"."""
    if name not in _RUNNERS:
        raise StageError(f"unknown stage {name!r}; choose from {', '.join(STAGE_ORDER)}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("config_digest") != config.digest:
            raise StageError(
                "config digest mismatch: this run directory was started with a "
                "different configuration"
            )
    else:
        manifest = {
            "run_id": config.digest[:12],
            "config_digest": config.digest,
            "stages": {},
        }

    for dep in STAGE_DEPS[name]:
        if manifest["stages"].get(dep, {}).get("status") != "done":
            raise StageError(f"stage {name!r} requires {dep!r} to be done first")

    inputs = _stage_inputs(name, run_dir, input_dir, config)
    for label, path in inputs.items():
        if not path.exists():
            raise StageError(f"stage {name!r}: missing input {label} ({path})")
    input_digests = {label: file_digest(path) for label, path in inputs.items()}

    entry = manifest["stages"].get(name)
    if entry and entry.get("status") == "done" and entry.get("inputs") == input_digests:
        return "noop"

    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    ctx = StageContext(config=config, run_dir=run_dir, input_dir=input_dir)
    try:
        outputs = _RUNNERS[name](ctx)
    except Exception as exc:
        manifest["stages"][name] = {
            "status": "failed",
            "inputs": input_digests,
            "outputs": {},
            "started_at": started,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "error": f"{type(exc).__name__}: {exc}",
        }
        write_json_atomic(manifest_path, manifest)
        raise
    manifest["stages"][name] = {
        "status": "done",
        "inputs": input_digests,
        "outputs": {
            str(p.relative_to(run_dir)): file_digest(p) for p in outputs
        },
        "started_at": started,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    write_json_atomic(manifest_path, manifest)
    return "done"


def run_all(config: RunConfig, run_dir: Path, input_dir: Path | None) -> dict[str, str]:
    """Run every stage in dependency order; returns stage → done/noop."""
    return {
        name: run_stage(name, config, run_dir, input_dir if name == "ingest" else None)
        for name in STAGE_ORDER
    }


# ---------------------------------------------------------------------------
# Corpus validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    file: str
    line: int
    message: str


def _check_jsonl(path: Path, parse, out: list[Violation]):
    """Parse every line, collecting violations; returns (records, line numbers)."""
    records = []
    linenos = []
    try:
        for lineno, obj in read_jsonl(path):
            try:
                records.append(parse(obj))
                linenos.append(lineno)
            except (RecordError, ValueError, KeyError, TypeError) as exc:
                out.append(Violation(path.name, lineno, str(exc)))
    except ValueError as exc:
        out.append(Violation(path.name, 0, f"unparseable JSON: {exc}"))
    return records, linenos


def validate_corpus(run_dir: Path) -> list[Violation]:
    """Structural and referential checks over every artifact present."""
    run_dir = Path(run_dir)
    out: list[Violation] = []

    def exists(name: str) -> bool:
        return (run_dir / name).exists()

    if not exists("datasets.jsonl"):
        out.append(Violation("datasets.jsonl", 0, "file missing"))
        return out
    datasets, ds_lines = _check_jsonl(run_dir / "datasets.jsonl", dataset_from_dict, out)
    ds_ids = {}
    for d, lineno in zip(datasets, ds_lines):
        if d.id in ds_ids:
            out.append(Violation("datasets.jsonl", lineno, f"duplicate dataset id {d.id}"))
        ds_ids[d.id] = lineno

    paper_ids: set[str] = set()
    if exists("papers.jsonl"):
        papers, p_lines = _check_jsonl(run_dir / "papers.jsonl", paper_from_dict, out)
        for p, lineno in zip(papers, p_lines):
            if p.id in paper_ids:
                out.append(Violation("papers.jsonl", lineno, f"duplicate paper id {p.id}"))
            paper_ids.add(p.id)
        for d, lineno in zip(datasets, ds_lines):
            for pid in d.linked_paper_ids:
                if pid not in paper_ids:
                    out.append(
                        Violation("datasets.jsonl", lineno, f"{d.id} links unknown paper {pid}")
                    )

    if exists("matches.jsonl"):
        for lineno, row in read_jsonl(run_dir / "matches.jsonl"):
            for key in ("dataset_id", "paper_id", "used"):
                if key not in row:
                    out.append(Violation("matches.jsonl", lineno, f"missing field {key}"))
            if row.get("dataset_id") not in ds_ids:
                out.append(
                    Violation("matches.jsonl", lineno, f"unknown dataset {row.get('dataset_id')}")
                )
            if row.get("paper_id") not in paper_ids:
                out.append(
                    Violation("matches.jsonl", lineno, f"unknown paper {row.get('paper_id')}")
                )

    if exists("aspects.jsonl"):
        aspects, a_lines = _check_jsonl(run_dir / "aspects.jsonl", aspect_from_dict, out)
        for a, lineno in zip(aspects, a_lines):
            if a.dataset_id not in ds_ids:
                out.append(Violation("aspects.jsonl", lineno, f"unknown dataset {a.dataset_id}"))
            if paper_ids and a.paper_id not in paper_ids:
                out.append(Violation("aspects.jsonl", lineno, f"unknown paper {a.paper_id}"))

    pair_ids: set[str] = set()
    if exists("qapairs.jsonl"):
        pairs, q_lines = _check_jsonl(run_dir / "qapairs.jsonl", qapair_from_dict, out)
        for p, lineno in zip(pairs, q_lines):
            if p.id in pair_ids:
                out.append(Violation("qapairs.jsonl", lineno, f"duplicate pair id {p.id}"))
            pair_ids.add(p.id)
            if p.dataset_id not in ds_ids:
                out.append(Violation("qapairs.jsonl", lineno, f"unknown dataset {p.dataset_id}"))

    if exists("verdicts.jsonl"):
        for lineno, row in read_jsonl(run_dir / "verdicts.jsonl"):
            try:
                verdict_from_dict(row)
            except (RecordError, ValueError, KeyError) as exc:
                out.append(Violation("verdicts.jsonl", lineno, str(exc)))
                continue
            if row.get("pair_id") not in pair_ids:
                out.append(Violation("verdicts.jsonl", lineno, f"unknown pair {row.get('pair_id')}"))

    return out
