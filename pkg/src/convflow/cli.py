"""Command-line orchestration: ingest, eval, extract, losscheck, sweep.

Configuration precedence is flags > environment > config file > defaults;
defaults are pinned to the published hyperparameters. All randomness flows
from one root seed through named substreams, so fixed seed + fixed inputs
means byte-identical outputs. Exit codes: 0 success, 1 check failure,
2 input error, 3 remote-service error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields

from . import checks, cluster, contrastive, corpus, embedding, evaluation, flowgraph
from .errors import CheckFailure, InputError, RemoteError
from .seeding import substream

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_INPUT = 2
EXIT_REMOTE = 3


@dataclass
class RunConfig:
    seed: int = 0
    epsilon: float = flowgraph.DEFAULT_EPSILON
    tau: float = contrastive.DEFAULT_TAU
    tau_label: float = contrastive.DEFAULT_TAU_LABEL
    kshot: tuple[int, ...] = (1, 5)
    ndcg_k: int = 10
    repetitions: int = 10
    clusters_user: int | None = None
    clusters_system: int | None = None
    corpus: str | None = None
    embeddings: str | None = None
    out: str | None = None

    @property
    def temps(self) -> contrastive.Temperatures:
        return contrastive.Temperatures(tau=self.tau, tau_label=self.tau_label)


def _parse_kshot(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p)
    except ValueError as exc:
        raise InputError(f"bad --kshot value '{text}'") from exc


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults <- config file <- flags (service endpoints come from env
    unless flags override; numeric settings have no env channel)."""
    config = RunConfig()
    path = getattr(args, "config", None)
    if path:
        with open(path, encoding="utf-8") as fh:
            file_values = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        for key, value in file_values.items():
            if key not in known:
                raise InputError(f"unknown config key '{key}'")
            if key == "kshot":
                value = tuple(int(v) for v in value)
            setattr(config, key, value)
    for name in (
        "seed", "epsilon", "tau", "clusters_user", "clusters_system", "ndcg_k",
        "corpus", "embeddings", "out",
    ):
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "tau_label", None) is not None:
        config.tau_label = args.tau_label
    if getattr(args, "reps", None) is not None:
        config.repetitions = args.reps
    if getattr(args, "kshot", None) is not None:
        config.kshot = _parse_kshot(args.kshot)
    return config


def _load_corpus(path: str) -> list[corpus.UnifiedDialog]:
    with open(path, "rb") as fh:
        return corpus.parse_unified(fh.read())


def _embedding_format(path: str, explicit: str | None) -> str:
    if explicit in ("jsonl", "binary"):
        return explicit
    return "jsonl" if path.endswith(".jsonl") else "binary"


def _resolve_store(
    embeddings_path: str | None,
    explicit_format: str | None,
    dialogs: list[corpus.UnifiedDialog],
) -> embedding.EmbeddingStore:
    """Embedding file when a path is given, else the remote encoder from
    the environment (one vector per utterance, keyed by utterance id)."""
    if embeddings_path:
        return embedding.load_embeddings(
            embeddings_path, format=_embedding_format(embeddings_path, explicit_format)
        )
    endpoint = os.environ.get(embedding.ENV_EMBED_URL)
    if not endpoint:
        raise InputError(
            f"no embeddings: pass --embeddings or set {embedding.ENV_EMBED_URL}"
        )
    ids, texts = [], []
    for dialog in dialogs:
        for i, turn in enumerate(dialog.turns):
            ids.append(corpus.utterance_id(dialog.dialog_id, i))
            texts.append(turn.text)
    return embedding.fetch_remote(
        endpoint, texts, token=os.environ.get(embedding.ENV_EMBED_TOKEN), ids=ids
    )


def _require(value: str | None, what: str) -> str:
    if not value:
        raise InputError(f"{what} required (flag or config file)")
    return value


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out_path = _require(config.out, "--out")
    dialogs = _load_corpus(_require(config.corpus, "--corpus"))
    table = corpus.load_table(args.acts) if args.acts else corpus.builtin_table()
    canonical = corpus.standardize_corpus(dialogs, table, permissive=args.permissive)
    data = corpus.serialize_unified(canonical)
    with open(out_path, "wb") as fh:
        fh.write(data)
    stats = corpus.compute_stats(canonical)
    n_turns = sum(len(d.turns) for d in canonical)
    print(f"ingested {len(canonical)} dialogs, {n_turns} utterances -> {out_path}")
    print(f"domains: {len(stats['domains'])}, act labels: {len(stats['labels'])}")
    return EXIT_OK


def _labeled_data(
    dialogs: list[corpus.UnifiedDialog], store: embedding.EmbeddingStore
) -> evaluation.LabeledEmbeddings:
    rows = corpus.labeled_utterances(dialogs)
    labels = {uid: action for uid, _, _, action in rows}
    return evaluation.LabeledEmbeddings(store=store.normalize(), labels=labels)


def cmd_eval(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dialogs = _load_corpus(_require(config.corpus, "--corpus"))
    store = _resolve_store(config.embeddings, args.format, dialogs)
    data = _labeled_data(dialogs, store)
    report = evaluation.evaluate(
        data,
        kshots=config.kshot,
        ndcg_k=config.ndcg_k,
        repetitions=config.repetitions,
        seed=config.seed,
    )
    text = evaluation.report_to_json(report)
    if config.out:
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(f"intra={report.intra:.4f} inter={report.inter:.4f} delta={report.delta:.4f}")
    for k in report.kshots:
        f1, acc = report.f1_macro[k], report.accuracy[k]
        print(f"{k}-shot: F1 {f1[0]:.4f} +/- {f1[1]:.4f}, accuracy {acc[0]:.4f} +/- {acc[1]:.4f}")
    print(f"nDCG@{report.ndcg_k}: {report.ndcg[0]:.4f} +/- {report.ndcg[1]:.4f}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out_dir = _require(config.out, "--out")
    dialogs = _load_corpus(_require(config.corpus, "--corpus"))
    os.makedirs(out_dir, exist_ok=True)
    labels: dict[str, str] = {}
    if args.gold:
        trajectories = flowgraph.trajectories_gold(dialogs)
    else:
        if config.clusters_user is None or config.clusters_system is None:
            raise InputError("induced extraction needs --clusters-user and --clusters-system")
        store = _resolve_store(config.embeddings, args.format, dialogs).normalize()
        ids_user, ids_system = [], []
        texts = {}
        for dialog in dialogs:
            for i, turn in enumerate(dialog.turns):
                uid = corpus.utterance_id(dialog.dialog_id, i)
                texts[uid] = turn.text
                (ids_user if turn.speaker == "user" else ids_system).append(uid)
        missing = sorted(u for u in ids_user + ids_system if u not in store)
        if missing:
            raise InputError(f"{len(missing)} utterances lack embeddings, e.g. {missing[:3]}")
        parts = {}
        for role, ids, k in (
            ("user", ids_user, config.clusters_user),
            ("system", ids_system, config.clusters_system),
        ):
            role_seed = int(substream(config.seed, "cluster", role).integers(2**31))
            parts[role] = cluster.kmeans(store, ids, k, seed=role_seed)
            with open(os.path.join(out_dir, f"clusters_{role}.tsv"), "w", encoding="utf-8") as fh:
                fh.write(cluster.clustering_to_text(parts[role]))
        trajectories = flowgraph.trajectories_induced(dialogs, parts["user"], parts["system"])
        llm_names = {}
        if os.environ.get(flowgraph.ENV_LLM_URL):
            requests = []
            for role, prefix in (("user", "U"), ("system", "S")):
                for cid in range(parts[role].k):
                    requests.append((f"{prefix}{cid}", parts[role].members(cid)))
            named = flowgraph.label_clusters_llm(
                [(i, [texts[m] for m in members]) for i, (_, members) in enumerate(requests)],
                os.environ.get(flowgraph.ENV_LLM_URL),
                model=os.environ.get(flowgraph.ENV_LLM_MODEL),
                token=os.environ.get(flowgraph.ENV_LLM_TOKEN),
            )
            llm_names = {requests[i][0]: name for i, name in named.items()}
        for role, prefix in (("user", "U"), ("system", "S")):
            for cid in range(parts[role].k):
                node = f"{prefix}{cid}"
                if node in llm_names:
                    labels[node] = f"{node}: {llm_names[node]}"
                else:
                    rep = cluster.representative(store, parts[role], cid)
                    labels[node] = f"{node}: {texts[rep][:40]}"
    graph = flowgraph.prune(flowgraph.build_graph(trajectories), config.epsilon)
    dot = flowgraph.export_dot(graph, flowgraph.DotOptions(labels=labels))
    with open(os.path.join(out_dir, "flow.dot"), "w", encoding="utf-8") as fh:
        fh.write(dot)
    if args.format != "dot":
        with open(os.path.join(out_dir, "flow.json"), "w", encoding="utf-8") as fh:
            fh.write(flowgraph.export_json(graph, labels=labels) + "\n")
    print(f"{'gold' if args.gold else 'induced'} graph: {graph.size} nodes, "
          f"{len(graph.edge_weights)} edges (epsilon={config.epsilon}) -> {out_dir}")
    return EXIT_OK


def cmd_losscheck(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    results = checks.run_losscheck(
        seed=config.seed,
        equivalence_cases=args.cases,
        gradient_cases=max(2, args.cases // 5),
        inject_fault=args.inject_fault,
    )
    all_passed = True
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
        all_passed = all_passed and r.passed
    if not all_passed:
        payload = checks.serialize_failure(results)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(payload + "\n")
            print(f"failing cases serialized to {args.out}", file=sys.stderr)
        else:
            print(payload, file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _parse_grid(text: str | None) -> list[float]:
    if not text:
        # published sweep grid: 0.05 .. 1.0 in steps of 0.05
        return [round(0.05 * i, 2) for i in range(1, 21)]
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InputError("grid range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise InputError("grid step must be positive")
        out = []
        v = start
        while v <= stop + 1e-12:
            out.append(round(v, 10))
            v += step
        return out
    return [float(p) for p in text.split(",") if p]


def cmd_sweep(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dialogs = _load_corpus(_require(config.corpus, "--corpus"))
    rows = corpus.labeled_utterances(dialogs)
    if not rows:
        raise InputError("corpus has no annotated utterances")
    items = contrastive.single_items(rows)
    rng = substream(config.seed, "sweep-split")
    by_action: dict[str, list[contrastive.TrainItem]] = {}
    for item in items:
        by_action.setdefault(item.action, []).append(item)
    train_rows, eval_rows = [], []
    for action in sorted(by_action):
        pool = by_action[action]
        order = rng.permutation(len(pool))
        n_eval = max(1, len(pool) // 5)
        for pos, idx in enumerate(order):
            (eval_rows if pos < n_eval else train_rows).append(pool[idx])
    grid = _parse_grid(args.grid)
    results = contrastive.sweep_tau_label(
        train_rows,
        eval_rows,
        grid,
        seed=config.seed,
        tau=config.tau,
        epochs=args.epochs,
    )
    lines = ["tau_label\tf1_5shot\tanisotropy_delta"]
    for tau_label, f1, delta in results:
        lines.append(f"{tau_label:.6g}\t{f1:.6f}\t{delta:.6f}")
    text = "\n".join(lines) + "\n"
    if config.out:
        with open(config.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--config", default=None, help="JSON config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and canonicalize a unified corpus")
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--acts", default=None, help="act mapping table file (default: built-in)")
    p.add_argument("--permissive", action="store_true", help="pass unknown acts through")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("eval", help="similarity-based metrics for labeled embeddings")
    p.add_argument("--corpus", default=None)
    p.add_argument("--embeddings", default=None, help=f"embedding file (default: fetch via ${embedding.ENV_EMBED_URL})")
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=["jsonl", "binary"], default=None)
    p.add_argument("--kshot", default=None, help="comma-separated shot counts (default 1,5)")
    p.add_argument("--ndcg-k", dest="ndcg_k", type=int, default=None)
    p.add_argument("--reps", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", help="extract the dialog flow graph")
    p.add_argument("--corpus", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument(
        "--format",
        choices=["jsonl", "binary", "dot"],
        default=None,
        help="embeddings input format; 'dot' limits output to the DOT file",
    )
    p.add_argument("--gold", action="store_true", help="build the reference graph from annotations")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--clusters-user", dest="clusters_user", type=int, default=None)
    p.add_argument("--clusters-system", dest="clusters_system", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("losscheck", help="run the loss/gradient verification suite")
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--out", default=None, help="where to serialize failing cases")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    _add_common(p)
    p.set_defaults(func=cmd_losscheck)

    p = sub.add_parser("sweep", help="label-temperature sweep on a toy model")
    p.add_argument("--corpus", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--grid", default=None, help="comma list or start:stop:step (default 0.05:1.0:0.05)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--tau-label", dest="tau_label", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RemoteError as exc:
        print(f"remote error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
