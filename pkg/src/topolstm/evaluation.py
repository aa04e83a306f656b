"""Next-activation ranking evaluation: MAP@k and Hits@k.

Every step t = 2..T of every test cascade yields one prediction instance:
rank all inactive nodes given the true prefix and check where the actual
next activation lands.  Exactly one item is relevant per instance, so
average precision truncated at k collapses to 1/rank when rank <= k.
Instances are pooled across cascades (micro-average).
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import Cascade, DataGraph
from .model import Model, forward_cascade
from .version import TOOL_VERSION

DEFAULT_KS = (10, 50, 100)


def rank_candidates(scores: Mapping[int, float]) -> list[int]:
    """Candidates by descending score; ties broken by ascending node id."""
    if not scores:
        raise ValueError("no candidates to rank")
    return sorted(scores, key=lambda v: (-scores[v], v))


def target_rank(cand: np.ndarray, scores: np.ndarray, target: int) -> int:
    """1-based rank of ``target`` under the descending-score ordering.

    Equivalent to rank_candidates(...).index(target) + 1 without the sort.
    """
    pos = int(np.searchsorted(cand, target))
    if pos >= cand.size or cand[pos] != target:
        raise ValueError(f"target {target} not among candidates")
    s = scores[pos]
    better = int(np.count_nonzero(scores > s))
    tied_before = int(np.count_nonzero((scores == s) & (cand < target)))
    return better + tied_before + 1


def hits_at_k(rank: int, k: int) -> int:
    """1 iff the target landed in the top k."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1 if rank <= k else 0


def map_at_k(rank: int, k: int) -> float:
    """Average precision truncated at k with a single relevant item."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    return 1.0 / rank if rank <= k else 0.0


@dataclass
class MetricsTable:
    """(metric, k) -> mean value in [0, 1] over all prediction instances."""

    ks: tuple[int, ...]
    values: dict[tuple[str, int], float]
    instances: int
    scorer: str = "model"
    by_prefix_length: dict[int, dict] = field(default_factory=dict)

    def value(self, metric: str, k: int) -> float:
        return self.values[(metric, k)]

    def to_json_dict(self) -> dict:
        return {
            "scorer": self.scorer,
            "instances": self.instances,
            "averaging": "micro (all prediction instances pooled)",
            "metrics": [
                {"metric": metric, "k": k, "value": self.values[(metric, k)],
                 "percent": 100.0 * self.values[(metric, k)]}
                for metric in ("map", "hits") for k in self.ks
            ],
        }

    def text_rows(self) -> list[str]:
        head = "".join(f"   @{k:<7d}" for k in self.ks)
        lines = [f"{'':14s}{head}"]
        for metric, label in (("map", "MAP@k (%)"), ("hits", "Hits@k (%)")):
            cells = "".join(f"{100.0 * self.values[(metric, k)]:>10.3f}" for k in self.ks)
            lines.append(f"{label:<14s}{cells}")
        return lines


def evaluate(scorer, cascades: Sequence[Cascade], ks: Iterable[int] = DEFAULT_KS,
             workers: int = 1) -> MetricsTable:
    """Score every prediction step of every cascade and average the metrics.

    ``scorer`` must provide ``step_scores(cascade)`` yielding, for each step
    t = 2..T, a triple (candidate ids ascending, scores aligned with them,
    target id).  Results do not depend on cascade order or on ``workers``.
    """
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks:
        raise ValueError("need at least one k")
    cascades = list(cascades)
    if not cascades:
        raise ValueError("empty test set")
    for c in cascades:
        if len(c) < 2:
            raise ValueError("test cascades must have length >= 2")

    def cascade_ranks(cascade: Cascade) -> list[tuple[int, int]]:
        out = []
        prefix_len = 1
        for cand, scores, target in scorer.step_scores(cascade):
            out.append((prefix_len, target_rank(cand, scores, target)))
            prefix_len += 1
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_cascade = list(pool.map(cascade_ranks, cascades))
    else:
        per_cascade = [cascade_ranks(c) for c in cascades]

    sums = {(metric, k): 0.0 for metric in ("map", "hits") for k in ks}
    bucket_sums: dict[int, dict] = {}
    n = 0
    for ranks in per_cascade:
        for prefix_len, rank in ranks:
            n += 1
            bucket = bucket_sums.setdefault(
                prefix_len, {"instances": 0, **{key: 0.0 for key in sums}})
            bucket["instances"] += 1
            for k in ks:
                h, ap = hits_at_k(rank, k), map_at_k(rank, k)
                sums[("hits", k)] += h
                sums[("map", k)] += ap
                bucket[("hits", k)] += h
                bucket[("map", k)] += ap

    values = {key: total / n for key, total in sums.items()}
    by_prefix = {
        length: {"instances": b["instances"],
                 **{f"{metric}@{k}": b[(metric, k)] / b["instances"]
                    for metric in ("map", "hits") for k in ks}}
        for length, b in sorted(bucket_sums.items())
    }
    name = getattr(scorer, "name", type(scorer).__name__)
    return MetricsTable(ks=ks, values=values, instances=n, scorer=name,
                        by_prefix_length=by_prefix)


class ModelScorer:
    """Step scorer that runs the trained model over each test cascade."""

    name = "topo-lstm"

    def __init__(self, model: Model, graph: DataGraph):
        self.model = model
        self.graph = graph

    def step_scores(self, cascade: Cascade):
        result = forward_cascade(self.model, self.graph, cascade)
        for step in result.steps:
            # Softmax is strictly increasing, so probabilities rank like scores.
            yield step.cand, step.probs, cascade[step.t - 1]


class OracleScorer:
    """Always puts the true next activation first (evaluation sanity bound)."""

    name = "oracle"

    def __init__(self, graph: DataGraph):
        self.graph = graph

    def step_scores(self, cascade: Cascade):
        m = self.graph.node_count
        active_mask = np.zeros(m, dtype=bool)
        for t, v in enumerate(cascade.nodes, start=1):
            if t >= 2:
                cand = np.flatnonzero(~active_mask)
                scores = np.zeros(cand.size)
                scores[np.searchsorted(cand, v)] = 1.0
                yield cand, scores, v
            active_mask[v] = True


class ConstantScorer:
    """Scores every candidate identically; ranking falls to the tie rule."""

    name = "constant"

    def __init__(self, graph: DataGraph, value: float = 0.0):
        self.graph = graph
        self.value = value

    def step_scores(self, cascade: Cascade):
        m = self.graph.node_count
        active_mask = np.zeros(m, dtype=bool)
        for t, v in enumerate(cascade.nodes, start=1):
            if t >= 2:
                cand = np.flatnonzero(~active_mask)
                yield cand, np.full(cand.size, self.value), v
            active_mask[v] = True


def write_metrics_json(path, tables: Sequence[MetricsTable], config_echo: dict) -> None:
    doc = {
        "tool_version": TOOL_VERSION,
        "config": config_echo,
        "results": [t.to_json_dict() for t in tables],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_metrics_text(path, tables: Sequence[MetricsTable], config_echo: dict) -> None:
    lines = [f"# topolstm {TOOL_VERSION} ranking metrics "
             f"(micro-averaged over prediction instances)",
             f"# config: {json.dumps(config_echo, sort_keys=True)}"]
    for table in tables:
        lines.append("")
        lines.append(f"{table.scorer}  ({table.instances} instances)")
        lines.extend(table.text_rows())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_length_buckets_csv(path, table: MetricsTable) -> None:
    """Per-prefix-length metric breakdown (one row per observed prefix length)."""
    fieldnames = ["prefix_length", "instances"] + [
        f"{metric}@{k}" for metric in ("map", "hits") for k in table.ks]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for length, bucket in table.by_prefix_length.items():
            writer.writerow({"prefix_length": length, **bucket})
