"""Dialog flow graphs: trajectory conversion, weighted transition-graph
construction, noise pruning, size comparison, DOT export, and optional
LLM-based cluster naming.

A flow graph aggregates every dialog of a domain into one weighted
directed graph: node weight = normalized action frequency, edge weight =
how often the source action is followed by the target, normalized per
source. User and system actions live in disjoint namespaces so the two
roles never merge.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import urllib.error
import urllib.request
import warnings
from dataclasses import dataclass, field

from .cluster import Clustering
from .corpus import UnifiedDialog, action_of, utterance_id
from .errors import CoverageError, EmptyInputError, InputError, UndefinedMetricError

DEFAULT_EPSILON = 0.02

ENV_LLM_URL = "D2F_LLM_URL"
ENV_LLM_MODEL = "D2F_LLM_MODEL"
ENV_LLM_TOKEN = "D2F_LLM_TOKEN"


@dataclass(frozen=True)
class TrajectoryStep:
    speaker: str
    action: str


@dataclass(frozen=True)
class Trajectory:
    """A dialog rewritten as its ordered sequence of speaker-tagged actions."""

    dialog_id: str
    steps: tuple[TrajectoryStep, ...]


@dataclass(frozen=True)
class FlowGraph:
    nodes: tuple[str, ...]
    node_weights: dict[str, float]  # normalized frequency, sums to 1 pre-prune
    node_counts: dict[str, int]
    edge_weights: dict[tuple[str, str], float]  # out-distribution per source
    edge_counts: dict[tuple[str, str], int]
    speakers: dict[str, str]  # node -> user|system
    start_counts: dict[str, int] = field(default_factory=dict)
    end_counts: dict[str, int] = field(default_factory=dict)
    total_steps: int = 0

    @property
    def size(self) -> int:
        return len(self.nodes)

    def edges(self) -> list[tuple[str, str]]:
        return sorted(self.edge_weights)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

def trajectories_gold(dialogs: list[UnifiedDialog], strict: bool = True) -> list[Trajectory]:
    """Trajectories from ground-truth annotations; the step action is the
    canonical action string prefixed with the speaker role."""
    out = []
    for dialog in dialogs:
        steps = []
        for turn in dialog.turns:
            label = action_of(turn, strict=strict)
            steps.append(TrajectoryStep(speaker=turn.speaker, action=f"{turn.speaker}:{label.render()}"))
        out.append(Trajectory(dialog_id=dialog.dialog_id, steps=tuple(steps)))
    return out


def trajectories_induced(
    dialogs: list[UnifiedDialog],
    clustering_user: Clustering,
    clustering_system: Clustering,
) -> list[Trajectory]:
    """Trajectories from per-speaker cluster assignments; step actions are
    U<cluster> / S<cluster> ids."""
    out = []
    for dialog in dialogs:
        steps = []
        for i, turn in enumerate(dialog.turns):
            uid = utterance_id(dialog.dialog_id, i)
            clustering = clustering_user if turn.speaker == "user" else clustering_system
            if uid not in clustering.assignment:
                raise CoverageError(f"utterance '{uid}' has no cluster assignment", [uid])
            prefix = "U" if turn.speaker == "user" else "S"
            steps.append(TrajectoryStep(speaker=turn.speaker, action=f"{prefix}{clustering.assignment[uid]}"))
        out.append(Trajectory(dialog_id=dialog.dialog_id, steps=tuple(steps)))
    return out


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

def build_graph(trajectories: list[Trajectory]) -> FlowGraph:
    """Accumulate trajectories (in sorted dialog-id order) into the
    weighted action-transition graph. Consecutive steps within a dialog
    form edges; trajectories never chain across dialogs."""
    ordered = sorted(trajectories, key=lambda t: t.dialog_id)
    node_counts: dict[str, int] = {}
    edge_counts: dict[tuple[str, str], int] = {}
    out_totals: dict[str, int] = {}
    speakers: dict[str, str] = {}
    start_counts: dict[str, int] = {}
    end_counts: dict[str, int] = {}
    total_steps = 0
    for traj in ordered:
        if not traj.steps:
            continue
        for step in traj.steps:
            node_counts[step.action] = node_counts.get(step.action, 0) + 1
            speakers[step.action] = step.speaker
            total_steps += 1
        start_counts[traj.steps[0].action] = start_counts.get(traj.steps[0].action, 0) + 1
        end_counts[traj.steps[-1].action] = end_counts.get(traj.steps[-1].action, 0) + 1
        for a, b in zip(traj.steps, traj.steps[1:]):
            key = (a.action, b.action)
            edge_counts[key] = edge_counts.get(key, 0) + 1
            out_totals[a.action] = out_totals.get(a.action, 0) + 1
    if total_steps == 0:
        raise EmptyInputError("no non-empty trajectories")
    node_weights = {a: c / total_steps for a, c in node_counts.items()}
    edge_weights = {(a, b): c / out_totals[a] for (a, b), c in edge_counts.items()}
    return FlowGraph(
        nodes=tuple(sorted(node_counts)),
        node_weights=node_weights,
        node_counts=node_counts,
        edge_weights=edge_weights,
        edge_counts=edge_counts,
        speakers=speakers,
        start_counts=start_counts,
        end_counts=end_counts,
        total_steps=total_steps,
    )


def prune(graph: FlowGraph, epsilon: float = DEFAULT_EPSILON) -> FlowGraph:
    """Remove every node with normalized frequency below the noise
    threshold, along with its incident edges. Surviving weights keep their
    original values (no renormalization), so pruning is idempotent."""
    if not 0.0 <= epsilon <= 1.0:
        raise InputError("epsilon must be in [0, 1]")
    keep = {a for a in graph.nodes if graph.node_weights[a] >= epsilon}
    edges = {e for e in graph.edge_weights if e[0] in keep and e[1] in keep}
    return FlowGraph(
        nodes=tuple(sorted(keep)),
        node_weights={a: graph.node_weights[a] for a in keep},
        node_counts={a: graph.node_counts[a] for a in keep},
        edge_weights={e: graph.edge_weights[e] for e in edges},
        edge_counts={e: graph.edge_counts[e] for e in edges},
        speakers={a: graph.speakers[a] for a in keep},
        start_counts={a: c for a, c in graph.start_counts.items() if a in keep},
        end_counts={a: c for a, c in graph.end_counts.items() if a in keep},
        total_steps=graph.total_steps,
    )


# ---------------------------------------------------------------------------
# Size comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphDiff:
    """Induced-vs-reference size comparison: signed raw difference and
    normalized absolute difference in percent."""

    reference_size: int
    induced_size: int
    raw: int
    normalized_pct: float

    @staticmethod
    def from_sizes(reference_size: int, induced_size: int) -> "GraphDiff":
        if reference_size < 1:
            raise UndefinedMetricError("reference graph has no nodes")
        raw = induced_size - reference_size
        return GraphDiff(
            reference_size=reference_size,
            induced_size=induced_size,
            raw=raw,
            normalized_pct=abs(raw) / reference_size * 100.0,
        )


def graph_size_diff(
    reference: FlowGraph, induced: FlowGraph, epsilon: float | None = None
) -> GraphDiff:
    """Compare graph sizes; with `epsilon`, both graphs are pruned with the
    same threshold first."""
    if epsilon is not None:
        reference = prune(reference, epsilon)
        induced = prune(induced, epsilon)
    if reference.size < 1:
        raise UndefinedMetricError("reference graph has no nodes")
    return GraphDiff.from_sizes(reference.size, induced.size)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DotOptions:
    edge_width_by_weight: bool = True
    node_width_by_weight: bool = True
    speaker_colors: bool = True
    labels: dict[str, str] = field(default_factory=dict)  # node -> display label


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(graph: FlowGraph, options: DotOptions | None = None) -> str:
    """Render the graph as DOT with stable ordering; weights to 3 decimals.
    Edge penwidth tracks w_E and node border penwidth tracks w_A, echoing
    frequency the way the reference renderings do."""
    options = options or DotOptions()
    lines = ["digraph dialog_flow {"]
    if graph.nodes:
        lines.append("  rankdir=LR;")
        lines.append('  node [shape=box, style="rounded,filled"];')
    for node in sorted(graph.nodes):
        attrs = []
        display = options.labels.get(node, node)
        attrs.append(f"label={_dot_quote(f'{display} ({graph.node_weights[node]:.3f})')}")
        if options.node_width_by_weight:
            attrs.append(f"penwidth={1.0 + 6.0 * graph.node_weights[node]:.3f}")
        if options.speaker_colors:
            color = "#ffe0cc" if graph.speakers.get(node) == "user" else "#cce5ff"
            attrs.append(f'fillcolor="{color}"')
        lines.append(f"  {_dot_quote(node)} [{', '.join(attrs)}];")
    for src, dst in graph.edges():
        attrs = [f"label={_dot_quote(f'{graph.edge_weights[(src, dst)]:.3f}')}"]
        if options.edge_width_by_weight:
            attrs.append(f"penwidth={1.0 + 4.0 * graph.edge_weights[(src, dst)]:.3f}")
        lines.append(f"  {_dot_quote(src)} -> {_dot_quote(dst)} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_json(graph: FlowGraph, labels: dict[str, str] | None = None) -> str:
    """Structured-text export: node and edge records plus the start/end
    statistics, which are not part of the graph itself."""
    labels = labels or {}
    payload = {
        "nodes": [
            {
                "id": node,
                "label": labels.get(node, node),
                "speaker": graph.speakers.get(node),
                "weight": graph.node_weights[node],
                "count": graph.node_counts[node],
            }
            for node in sorted(graph.nodes)
        ],
        "edges": [
            {
                "src": src,
                "dst": dst,
                "weight": graph.edge_weights[(src, dst)],
                "count": graph.edge_counts[(src, dst)],
            }
            for src, dst in graph.edges()
        ],
        "starts": {k: graph.start_counts[k] for k in sorted(graph.start_counts)},
        "ends": {k: graph.end_counts[k] for k in sorted(graph.end_counts)},
        "total_steps": graph.total_steps,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# LLM cluster naming
# ---------------------------------------------------------------------------

LLM_SYSTEM_PROMPT = """Your task is to annotate conversational utterances with the intent expressed as canonical forms. A canonical form is a short summary representing the intent of a set of utterances - it is neither too verbose nor too short.
Be aware that required canonical forms should avoid containing specific names or quantities, only represent the intent in abstract terms.
For example, for:

For the following utterances:
    1. Uh yes i'm looking for a place for entertainment that is in the center of the city
    2. i would like to know where a place for entertainment that is not far away from my location
Canonical form is: "request entertainment place and inform location"

For the following utterances:
    1. Okay so the phone number is a 1223217297
    2. Sure, my phone number is four four five five
    3. 2 3 4 5 6 is her phone number
Canonical form is: "inform phone number"

For the following utterances:
    1. 8 4 0
    2. yes five five three
Canonical form is: "inform number"
"""

LLM_USER_PROMPT = """Give the following list of utterance provide a single canonical name that represent all of them:
{utterances}"""

LLM_ASSISTANT_PRIMER = 'The canonical name that represent the above utterances is: "'


def build_label_messages(member_texts: list[str]) -> list[dict[str, str]]:
    """The chat-completion message array with cluster utterances substituted
    as a numbered list."""
    numbered = "\n".join(f"    {i + 1}. {text}" for i, text in enumerate(member_texts))
    return [
        {"role": "system", "content": LLM_SYSTEM_PROMPT},
        {"role": "user", "content": LLM_USER_PROMPT.format(utterances=numbered)},
        {"role": "assistant", "content": LLM_ASSISTANT_PRIMER},
    ]


def extract_canonical_form(reply: str) -> str:
    """Pull the quoted canonical form out of a completion. The primer ends
    inside an open quote, so a well-behaved reply is `<label>"...`; replies
    that restate the sentence carry a full quoted span instead."""
    if reply.count('"') >= 2:
        start = reply.index('"') + 1
        return reply[start : reply.index('"', start)].strip()
    if '"' in reply:
        return reply[: reply.index('"')].strip()
    return reply.strip()


def _cluster_cache_key(endpoint: str, model: str | None, member_texts: list[str]) -> str:
    blob = "\n".join([endpoint, model or ""] + member_texts)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def label_clusters_llm(
    clusters: list[tuple[int, list[str]]],
    endpoint: str | None,
    model: str | None = None,
    token: str | None = None,
    cache_dir: str | None = None,
    max_workers: int = 4,
    timeout: float = 30.0,
) -> dict[int, str]:
    """Name clusters through a chat-completion endpoint.

    Runs at most `max_workers` concurrent requests. Remote failure (or a
    None endpoint, the offline mode) degrades to "cluster-<id>" placeholder
    labels with a warning so the pipeline still completes. Results are
    cached by cluster-content hash.
    """
    for cid, texts in clusters:
        if not texts:
            raise InputError(f"cluster {cid} has no member texts")
    labels: dict[int, str] = {}
    pending: list[tuple[int, list[str]]] = []
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
    for cid, texts in clusters:
        if cache_dir and endpoint:
            path = os.path.join(cache_dir, _cluster_cache_key(endpoint, model, texts) + ".json")
            if os.path.exists(path):
                with open(path, encoding="utf-8") as fh:
                    labels[cid] = json.load(fh)["label"]
                continue
        pending.append((cid, texts))
    if not pending:
        return labels
    if endpoint is None:
        warnings.warn("no LLM endpoint configured; using placeholder cluster labels")
        for cid, _ in pending:
            labels[cid] = f"cluster-{cid}"
        return labels

    def one(cid: int, texts: list[str]) -> tuple[int, str, bool]:
        payload: dict = {"messages": build_label_messages(texts)}
        if model:
            payload["model"] = model
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                reply = json.loads(resp.read().decode("utf-8"))
            content = reply["choices"][0]["message"]["content"]
            return cid, extract_canonical_form(content), True
        except (urllib.error.URLError, TimeoutError, KeyError, IndexError, json.JSONDecodeError) as exc:
            warnings.warn(f"cluster {cid} labeling failed ({exc}); using placeholder")
            return cid, f"cluster-{cid}", False

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(one, cid, texts) for cid, texts in pending]
        by_cid = {cid: texts for cid, texts in pending}
        for fut in concurrent.futures.as_completed(futures):
            cid, label, ok = fut.result()
            labels[cid] = label
            if ok and cache_dir:
                path = os.path.join(
                    cache_dir, _cluster_cache_key(endpoint, model, by_cid[cid]) + ".json"
                )
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump({"label": label}, fh)
    return labels
