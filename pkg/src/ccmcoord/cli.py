"""Command line entry point: ``simulate``, ``detect``, ``cluster`` and ``eval``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import networkx
import numpy
import scipy

from . import __version__
from .baselines import DEFAULT_ALPHA, granger_scan, language_classifier, language_counts
from .ccm import DEFAULT_E, DEFAULT_TAU, DEFAULT_THETA, EmbeddingParams, pairwise_scan
from .evaluation import (
    metrics_report, pair_scores, read_score_matrix, roc, score_histogram, scores_from_matrix,
    semantic_agreement_curve, label_agreement, user_metrics, user_scores, pair_breakdown,
)
from .graph import build_graph, detect_communities, mark_coordinated, rank_by_net_degree, write_dot, write_graphml
from .ingest import AnalysisWindow, build_traces, data_window, load_events, select_top_users, user_labels, write_events_jsonl
from .series import DEFAULT_BIN_WIDTH, bin_traces, parse_ratio
from .synth import DAY, KINDS, FollowLag, ScenarioSpec, simulate_population, topic_vocabularies, write_edges_csv
from .topics import (
    DEFAULT_MAX_ITER, DEFAULT_TOL, DEFAULT_TOPICS, assign_user_topics, build_tfidf, choose_topic_count,
    compare_partitions, fit_nmf, load_stopwords, read_partition_csv, read_stopword_file, topic_pair_filter,
    topic_report, user_documents, write_partition_csv, write_topic_report,
)

logger = logging.getLogger("ccmcoord")

METHODS = ("ccm", "ccm+nmf", "gc", "lang")


class StageError(RuntimeError):
    pass


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(f"[{name}] {exc}") from exc


@dataclass
class RunConfig:
    input: list[str]
    output: str
    method: str = "ccm"
    t_start: Optional[int] = None
    t_end: Optional[int] = None
    bin_width: int = DEFAULT_BIN_WIDTH
    E: int = DEFAULT_E
    tau: int = DEFAULT_TAU
    theta: float = DEFAULT_THETA
    train_ratio: str = "3:1"
    topics: int = DEFAULT_TOPICS
    seed: int = 0
    n_coordinated: int = 0
    n_normal: int = 0
    alpha: float = DEFAULT_ALPHA
    max_lag: int = DEFAULT_E
    coordinated_lang: str = "ru"
    stopwords: list[str] = field(default_factory=list)
    nmf_max_iter: int = DEFAULT_MAX_ITER
    nmf_tol: float = DEFAULT_TOL
    threads: int = 1


def parse_time(text: str) -> int:
    """Epoch seconds or ISO-8601 (naive times are UTC)."""
    try:
        return int(float(text))
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


# --- file helpers ----------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    def default(o):
        if isinstance(o, (numpy.integer,)):
            return int(o)
        if isinstance(o, (numpy.floating,)):
            return float(o)
        raise TypeError(f"not JSON serialisable: {type(o)}")
    text = json.dumps(obj, indent=2, sort_keys=True, default=default, allow_nan=True, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, config: dict, artifacts: list[str], volatile: list[str]) -> None:
    entries = []
    for name in sorted(artifacts):
        if name in volatile:
            # contents change run to run, so they are listed but not hashed
            entries.append({"path": name, "volatile": True})
            continue
        p = out / name
        entries.append({"path": name, "bytes": p.stat().st_size, "sha256": _sha256(p), "volatile": False})
    write_json(out / "manifest.json", {
        "artifacts": entries,
        "config": config,
        "versions": {
            "ccmcoord": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "networkx": networkx.__version__,
            "python": platform.python_version(),
        },
    })


# --- detect ----------------------------------------------------------------

def _load_all(paths, fmt=None):
    events, skipped = [], 0
    for p in paths:
        evs, n = load_events(p, fmt)
        events.extend(evs)
        skipped += n
    return events, skipped


def run_detect(cfg: RunConfig) -> Path:
    started = time.perf_counter()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    params = EmbeddingParams(cfg.E, cfg.tau)
    ratio = parse_ratio(cfg.train_ratio)

    with stage("ingest"):
        events, skipped = _load_all(cfg.input)
        if cfg.t_start is not None and cfg.t_end is not None:
            window = AnalysisWindow(cfg.t_start, cfg.t_end)
        else:
            full = data_window(events)
            window = AnalysisWindow(cfg.t_start if cfg.t_start is not None else full.t_start,
                                    cfg.t_end if cfg.t_end is not None else full.t_end)
        in_window = [e for e in events if e.timestamp in window]
        traces = build_traces(in_window, window)
        labels = user_labels(in_window)
        if cfg.n_coordinated or cfg.n_normal:
            users = select_top_users(traces, cfg.n_coordinated, cfg.n_normal, labels)
        else:
            users = sorted(traces)
        if len(users) < 2:
            raise ValueError(f"need at least two active users in the window, found {len(users)}")
        chosen = set(users)
        selected_events = [e for e in in_window if e.user_id in chosen]

    with stage("series"):
        series = bin_traces(traces, users, window, cfg.bin_width)

    artifacts: list[str] = []
    report: dict = {"n_events_loaded": len(events), "n_rows_skipped": skipped,
                    "n_events_in_window": len(in_window), "n_users": len(users),
                    "window": [window.t_start, window.t_end], "n_bins": len(series[0].values)}
    pair_filter = None
    topic_assignment = None

    if cfg.method == "ccm+nmf":
        with stage("topics"):
            stop = frozenset().union(*(read_stopword_file(p) for p in cfg.stopwords)) if cfg.stopwords else load_stopwords()
            docs = [(f"{e.user_id}:{i}", e.text) for i, e in enumerate(selected_events) if e.text]
            corpus = build_tfidf(docs, stop)
            model = fit_nmf(corpus, cfg.topics, cfg.nmf_max_iter, cfg.nmf_tol, cfg.seed)
            udocs = user_documents(selected_events)
            topic_assignment = assign_user_topics(model, {u: udocs.get(u, "") for u in users}, corpus)
            pair_filter = topic_pair_filter(topic_assignment)
            write_topic_report(topic_report(model, topic_assignment), out / "topics.json")
            write_partition_csv(topic_assignment, out / "topic_partition.csv")
            artifacts += ["topics.json", "topic_partition.csv"]

    n_full = len(users) * (len(users) - 1) // 2
    if cfg.method in ("ccm", "ccm+nmf"):
        with stage("ccm"):
            results = pairwise_scan(series, params, theta=cfg.theta, pair_filter=pair_filter,
                                    train_ratio=ratio, n_jobs=cfg.threads)
        write_csv(out / "convergence.csv", ["source", "mapper", "library_length", "rho"],
                  [(r.source, r.mapper, n, rho) for r in results for n, rho in r.rho_by_library])
        artifacts.append("convergence.csv")
    elif cfg.method == "gc":
        with stage("baselines"):
            gc = granger_scan(series, cfg.max_lag, cfg.alpha, n_jobs=cfg.threads)
            results = [g.as_edge() for g in gc]
    else:
        results = []
    report["n_pairs_full"] = n_full
    report["n_pairs_scanned"] = len(results) // 2 if cfg.method != "lang" else 0

    with stage("graph"):
        graph = build_graph(results, labels, users)
        if cfg.method == "lang":
            decisions = language_classifier(language_counts(selected_events), cfg.coordinated_lang)
            marked = {u for u, d in decisions.items() if d.coordinated}
            scores = {u: (decisions[u].share if u in decisions else 0.0) for u in users}
        else:
            marked = mark_coordinated(graph)
            scores = user_scores(results, users)
        communities = detect_communities(graph) if graph.nodes else {}
        ranking = rank_by_net_degree(graph)

    write_csv(out / "edges.csv", ["source", "mapper", "rho_max", "slope", "decision"],
              [(r.source, r.mapper, r.rho_max, r.slope, int(r.decision)) for r in results])
    write_csv(out / "users.csv", ["user_id", "label", "n_events", "score", "marked"],
              [(u, labels.get(u, ""), len(traces[u]), scores.get(u, -1.0), int(u in marked)) for u in users])
    write_csv(out / "marked_users.csv", ["user_id"], [(u,) for u in sorted(marked)])
    write_csv(out / "net_degree.csv", ["user_id", "net_degree", "indegree", "outdegree"],
              [(r.user_id, r.net_degree, r.indegree, r.outdegree) for r in ranking])
    write_partition_csv(communities, out / "communities.csv")
    write_dot(graph, out / "graph.dot", communities, topic_assignment)
    write_graphml(graph, out / "graph.graphml", communities, topic_assignment)
    artifacts += ["edges.csv", "users.csv", "marked_users.csv", "net_degree.csv", "communities.csv",
                  "graph.dot", "graph.graphml"]

    report["n_edges"] = len(graph.edges)
    report["n_detected_pairs"] = len(graph.undirected_pairs())
    report["n_marked"] = len(marked)
    if labels:
        report["breakdown"] = asdict(pair_breakdown(graph.undirected_pairs(), labels))
        report["user_metrics"] = asdict(user_metrics(marked, {u: labels[u] for u in users if u in labels}))
    write_json(out / "report.json", report)
    artifacts.append("report.json")

    # wall-clock time is the only run-dependent output; it lives in its own file
    write_json(out / "timing.json", {"runtime_seconds": time.perf_counter() - started})
    artifacts.append("timing.json")
    config = asdict(cfg)
    config["train_ratio"] = str(ratio)
    del config["output"]  # keeps bundles comparable across output locations
    write_manifest(out, config, artifacts, volatile=["timing.json"])
    logger.info("detect: %d users, %d pairs, %d marked -> %s", len(users), report["n_pairs_scanned"], len(marked), out)
    return out


# --- eval ------------------------------------------------------------------

def _read_table(path: Path, required: list[str]) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for col in required:
            if col not in cols:
                raise ValueError(f"{path}: missing column '{col}' (found {cols})")
        return list(reader)


def read_labels(path: Path) -> dict[str, str]:
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
        if "timestamp" not in header:
            return {r["user_id"]: r["label"] for r in _read_table(path, ["user_id", "label"]) if r["label"]}
    events, _ = load_events(path)
    return user_labels(events)


def evaluate_bundle(bundle: Path, labels: Optional[dict], out: Path, name: str, bin_width: float,
                    agreement_labels: Optional[dict]) -> dict:
    users = _read_table(bundle / "users.csv", ["user_id", "label", "score", "marked"])
    if labels is None:
        labels = {r["user_id"]: r["label"] for r in users if r["label"]}
    labels = {r["user_id"]: labels[r["user_id"]] for r in users if r["user_id"] in labels}
    marked = {r["user_id"] for r in users if r["marked"] == "1"}
    scores = {r["user_id"]: float(r["score"]) for r in users}
    edges = _read_table(bundle / "edges.csv", ["source", "mapper", "rho_max", "slope", "decision"])
    detected = {tuple(sorted((e["source"], e["mapper"]))) for e in edges if e["decision"] == "1"}

    report = metrics_report(marked, labels, detected, scores)
    try:
        curve = roc(scores, labels)
        write_csv(out / f"roc_{name}.csv", ["threshold", "fpr", "tpr"], curve.rows())
    except ValueError:
        write_csv(out / f"roc_{name}.csv", ["threshold", "fpr", "tpr"], [])
    hist = score_histogram((float(e["rho_max"]) for e in edges), bin_width)
    write_csv(out / f"histogram_{name}.csv", ["bin_left", "bin_right", "count"],
              [(hist.edges[i], hist.edges[i + 1], int(c)) for i, c in enumerate(hist.counts)])
    if agreement_labels is not None:
        from .ccm import CrossMapResult
        rows = [CrossMapResult(e["source"], e["mapper"], (), (), float(e["slope"]), float(e["rho_max"]),
                               e["decision"] == "1") for e in edges]
        ps = pair_scores(rows)
        agree = label_agreement(ps, agreement_labels)
        grid = [round(0.05 * i, 2) for i in range(21)]
        curve = semantic_agreement_curve(ps, agree, grid)
        write_csv(out / f"agreement_{name}.csv", ["threshold", "agreed_share", "n_pairs"], curve)
    return report


def run_eval(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    labels = read_labels(Path(args.labels)) if args.labels else None
    agreement = read_partition_csv(args.agreement_labels) if args.agreement_labels else None
    reports = {}
    names = []
    for b in args.bundle:
        bundle = Path(b)
        name = bundle.name or "bundle"
        while name in names:
            name += "_"
        names.append(name)
        with stage(f"eval:{name}"):
            reports[name] = evaluate_bundle(bundle, labels, out, name, args.bin_width, agreement)
            try:
                runtime = json.loads((bundle / "timing.json").read_text())["runtime_seconds"]
                reports[name]["runtime_seconds"] = runtime
            except (OSError, KeyError, ValueError):
                pass
    if args.scores:
        with stage("eval:external"):
            rows = read_score_matrix(args.scores)
            base = labels or {}
            u_scores, p_scores = scores_from_matrix(rows, base)
            ext = {"n_pairs": len(p_scores)}
            try:
                curve = roc(u_scores, base)
                ext.update(auc=curve.auc, youden_threshold=curve.youden_threshold, youden_j=curve.youden_j)
                write_csv(out / "roc_external.csv", ["threshold", "fpr", "tpr"], curve.rows())
            except ValueError as exc:
                ext["roc_note"] = str(exc)
            hist = score_histogram(p_scores.values(), args.bin_width)
            write_csv(out / "histogram_external.csv", ["bin_left", "bin_right", "count"],
                      [(hist.edges[i], hist.edges[i + 1], int(c)) for i, c in enumerate(hist.counts)])
            reports["external"] = ext
    write_json(out / "metrics.json", reports)
    rows = []
    for name, rep in reports.items():
        um = rep.get("user_metrics", {})
        bd = rep.get("breakdown", {})
        rows.append((name, rep.get("runtime_seconds", ""), bd.get("cc", ""), bd.get("cn", ""), bd.get("nn", ""),
                     um.get("precision", ""), um.get("recall", ""), um.get("f1", ""), rep.get("auc", "")))
    header = ["method", "runtime_seconds", "cc", "cn", "nn", "precision", "recall", "f1", "auc"]
    write_csv(out / "comparison.csv", header, rows)
    for row in [header] + rows:
        print("\t".join(_fmt(v) if not isinstance(v, float) else f"{v:.4f}" for v in row))
    return out


# --- cluster ---------------------------------------------------------------

def run_cluster(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with stage("ingest"):
        events, _ = _load_all(args.input)
    with stage("topics"):
        stop = frozenset().union(*(read_stopword_file(p) for p in args.stopwords)) if args.stopwords else load_stopwords()
        docs = [(f"{e.user_id}:{i}", e.text) for i, e in enumerate(events) if e.text]
        corpus = build_tfidf(docs, stop)
        n = args.topics
        summary: dict = {}
        if args.choose_topics:
            candidates = [int(x) for x in args.choose_topics.split(",")]
            n, scores = choose_topic_count(corpus, candidates, args.nmf_max_iter, args.nmf_tol, args.seed,
                                           sample_size=args.silhouette_sample)
            summary["silhouette"] = {str(k): v for k, v in scores.items()}
        model = fit_nmf(corpus, n, args.nmf_max_iter, args.nmf_tol, args.seed)
        assignment = assign_user_topics(model, user_documents(events), corpus)
        write_topic_report(topic_report(model, assignment), out / "topics.json")
        write_partition_csv(assignment, out / "partition.csv")
        summary["n_topics"] = n
        summary["n_pairs_filtered"] = len(topic_pair_filter(assignment))
        if args.compare:
            other = read_partition_csv(args.compare)
            common = sorted(set(other) & set(assignment))
            summary["ari"] = compare_partitions({u: assignment[u] for u in common}, {u: other[u] for u in common})
            summary["n_compared"] = len(common)
        write_json(out / "cluster_summary.json", summary)
    return out


# --- simulate --------------------------------------------------------------

def run_simulate(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    spec = ScenarioSpec(
        kind=args.kind, duration=int(args.duration_days * DAY), leader_rate=args.leader_rate,
        follow_lag=FollowLag(args.lag_bins, args.lag_jitter), noise_rate=args.noise_rate,
        seed=args.seed, bin_width=args.bin_width, leader_jitter=args.leader_jitter, start=args.start,
    )
    vocab = topic_vocabularies(args.vocab_topics) if args.vocab_topics else None
    pop = simulate_population(args.groups, args.group_size, args.normals, spec, seed=args.seed,
                              normal_rate=args.normal_rate, vocabularies=vocab)
    write_events_jsonl(pop.events, out / "events.jsonl")
    write_edges_csv(pop.edges, out / "ground_truth_edges.csv")
    logger.info("simulate: %d events for %d users -> %s", len(pop.events), len(pop.labels), out)
    return out


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccmcoord", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic population with ground truth")
    s.add_argument("--output", required=True)
    s.add_argument("--kind", choices=KINDS, default="irregular_leader")
    s.add_argument("--groups", type=int, default=5)
    s.add_argument("--group-size", type=int, default=10)
    s.add_argument("--normals", type=int, default=50)
    s.add_argument("--duration-days", type=float, default=60)
    s.add_argument("--leader-rate", type=float, default=0.5, help="events per hour")
    s.add_argument("--normal-rate", type=float, default=None, help="events per hour (default: leader rate)")
    s.add_argument("--noise-rate", type=float, default=0.0)
    s.add_argument("--lag-bins", type=int, default=0)
    s.add_argument("--lag-jitter", type=int, default=0)
    s.add_argument("--leader-jitter", type=float, default=0.0, help="seconds, regular leader only")
    s.add_argument("--bin-width", type=int, default=DEFAULT_BIN_WIDTH)
    s.add_argument("--start", type=parse_time, default=0)
    s.add_argument("--vocab-topics", type=int, default=0, help="attach text from N disjoint topic vocabularies")
    s.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("detect", help="run a detector and write an output bundle")
    d.add_argument("--input", action="append", required=True)
    d.add_argument("--output", required=True)
    d.add_argument("--method", choices=METHODS, default="ccm")
    d.add_argument("--t-start", type=parse_time)
    d.add_argument("--t-end", type=parse_time)
    d.add_argument("--bin-width", type=int, default=DEFAULT_BIN_WIDTH)
    d.add_argument("-E", "--E", "--embedding-dim", dest="E", type=int, default=DEFAULT_E)
    d.add_argument("--tau", type=int, default=DEFAULT_TAU)
    d.add_argument("--theta", type=float, default=DEFAULT_THETA)
    d.add_argument("--train-ratio", default="3:1")
    d.add_argument("--topics", type=int, default=DEFAULT_TOPICS)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--n-coordinated", type=int, default=0)
    d.add_argument("--n-normal", type=int, default=0)
    d.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    d.add_argument("--max-lag", type=int, default=DEFAULT_E)
    d.add_argument("--coordinated-lang", default="ru")
    d.add_argument("--stopwords", action="append", default=[])
    d.add_argument("--nmf-max-iter", type=int, default=DEFAULT_MAX_ITER)
    d.add_argument("--nmf-tol", type=float, default=DEFAULT_TOL)
    d.add_argument("--threads", type=int, default=1)

    c = sub.add_parser("cluster", help="topic-cluster users with TF-IDF + NMF")
    c.add_argument("--input", action="append", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--topics", type=int, default=DEFAULT_TOPICS)
    c.add_argument("--choose-topics", help="comma-separated candidate topic counts")
    c.add_argument("--silhouette-sample", type=int, default=2000)
    c.add_argument("--compare", help="partition CSV (user_id,cluster) to score with ARI")
    c.add_argument("--stopwords", action="append", default=[])
    c.add_argument("--nmf-max-iter", type=int, default=DEFAULT_MAX_ITER)
    c.add_argument("--nmf-tol", type=float, default=DEFAULT_TOL)
    c.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="score one or more bundles against labels")
    e.add_argument("--bundle", action="append", required=True)
    e.add_argument("--output", required=True)
    e.add_argument("--labels", help="events file or CSV with user_id,label (default: labels in the bundle)")
    e.add_argument("--scores", help="external score matrix CSV source,target,score")
    e.add_argument("--agreement-labels", help="CSV user_id,cluster (e.g. stance or topic) for agreement curves")
    e.add_argument("--bin-width", type=float, default=0.005)
    return parser


def _config_from_args(args, parser) -> RunConfig:
    cfg = RunConfig(**{k: getattr(args, k) for k in RunConfig.__dataclass_fields__})
    problems = []
    if cfg.E <= 1:
        problems.append("--E must exceed 1")
    if cfg.tau < 1:
        problems.append("--tau must be at least 1")
    if cfg.bin_width <= 0:
        problems.append("--bin-width must be positive")
    if cfg.threads < 1:
        problems.append("--threads must be at least 1")
    if cfg.topics < 1:
        problems.append("--topics must be at least 1")
    if not 0 <= cfg.alpha <= 1:
        problems.append("--alpha must lie in [0, 1]")
    try:
        parse_ratio(cfg.train_ratio)
    except (ValueError, ZeroDivisionError):
        problems.append(f"bad --train-ratio {cfg.train_ratio!r}")
    if cfg.t_start is not None and cfg.t_end is not None and cfg.t_start >= cfg.t_end:
        problems.append("--t-start must precede --t-end")
    if problems:
        parser.error("; ".join(problems))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "detect":
            run_detect(_config_from_args(args, parser))
        elif args.command == "eval":
            run_eval(args)
        elif args.command == "cluster":
            run_cluster(args)
        else:
            run_simulate(args)
    except (StageError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
