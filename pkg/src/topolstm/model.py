"""The DAG-structured LSTM over diffusion topologies.

Each activated node runs one memory-cell step.  Unlike a sequence LSTM, the
recurrent input is split into two typed aggregates: the mean state of the
node's *precedents* (active in-neighbours that could have attempted the
activation) and the mean state of the *other* already-active nodes.  Each
aggregate gets its own forget gate, so the cell carries four distinct U
matrices on the forget path while sharing W_f and b_f.

Parameter slots (d = hidden_dim, m = node_count):

    sender-embedding slots                       activation slots
    ----------------------------------------    -------------------------
    W_i (d,m)  U_i_p  U_i_q  (d,d)  b_i (d,)    G     (m,d)  receiver embeddings
    W_f (d,m)  U_f_pp U_f_pq                    b_act (m,)   per-node score bias
               U_f_qp U_f_qq (d,d)  b_f (d,)
    W_c (d,m)  U_c_p  U_c_q  (d,d)  b_c (d,)
    W_o (d,m)  U_o_p  U_o_q  (d,d)  b_o (d,)

U_f_xy multiplies aggregate y inside forget gate x (x, y in {p, q}).

Scoring an inactive candidate v takes the inner product of a pooled sender
state with v's receiver embedding plus v's bias, then a softmax over all
inactive nodes.  Two pooling modes exist: "precedent-only" pools the sender
states of v's precedents (bias-only when it has none) and "all-active"
(the default) pools every active node's state, which keeps the score
informative when graph edges are missing.

Gradients are derived by hand in `backward_cascade` and verified against
central differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix

from .errors import DataError, NumericError, TopoLstmError
from .graph import Cascade, DataGraph, DiffusionTopology, build_topologies
from .numeric import (GradientStore, ParameterStore, affine, mean_pool,
                      nll_from_scores, sigmoid, softmax)

SCORE_MODES = ("all-active", "precedent-only")

EMBEDDING_SLOTS = (
    "W_i", "U_i_p", "U_i_q", "b_i",
    "W_f", "U_f_pp", "U_f_pq", "U_f_qp", "U_f_qq", "b_f",
    "W_c", "U_c_p", "U_c_q", "b_c",
    "W_o", "U_o_p", "U_o_q", "b_o",
)
ACTIVATION_SLOTS = ("G", "b_act")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int
    node_count: int
    score_mode: str = "all-active"

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"score_mode must be one of {SCORE_MODES}")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    d, m = config.hidden_dim, config.node_count
    shapes: dict[str, tuple] = {}
    for name in EMBEDDING_SLOTS:
        if name.startswith("W_"):
            shapes[name] = (d, m)
        elif name.startswith("U_"):
            shapes[name] = (d, d)
        else:
            shapes[name] = (d,)
    shapes["G"] = (m, d)
    shapes["b_act"] = (m,)
    return shapes


def init_parameters(config: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    """Uniform(+-1/sqrt(d)) recurrent matrices, uniform(+-0.1) embeddings, zero biases."""
    d = config.hidden_dim
    u_scale = 1.0 / np.sqrt(d)
    slots: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        if name.startswith("U_"):
            slots[name] = rng.uniform(-u_scale, u_scale, size=shape)
        elif name.startswith("W_") or name == "G":
            slots[name] = rng.uniform(-0.1, 0.1, size=shape)
        else:
            slots[name] = np.zeros(shape)
    return ParameterStore(slots)


@dataclass
class Model:
    config: ModelConfig
    params: ParameterStore

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator) -> "Model":
        return cls(config, init_parameters(config, rng))

    def zero_grads(self) -> GradientStore:
        return self.params.zeros_like()

    def copy(self) -> "Model":
        return Model(self.config, self.params.copy())


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class AggregatedInputs:
    h_p: np.ndarray
    h_q: np.ndarray
    c_p: np.ndarray
    c_q: np.ndarray


@dataclass
class CellTrace:
    """Everything the backward pass needs from one cell step."""
    node: int
    prec_pos: np.ndarray   # positions (within the cascade) of the precedents
    rest_pos: np.ndarray   # positions of the other active nodes
    agg: AggregatedInputs
    i: np.ndarray
    f_p: np.ndarray
    f_q: np.ndarray
    c_tilde: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


class _GraphOps:
    """Per-graph numeric helpers for the scoring hot path."""

    def __init__(self, graph: DataGraph):
        self.out_arrays = [np.asarray(s, dtype=np.intp) for s in graph.out]
        indptr = np.zeros(graph.node_count + 1, dtype=np.intp)
        for u, succ in enumerate(graph.out):
            indptr[u + 1] = indptr[u] + len(succ)
        indices = np.concatenate(self.out_arrays) if indptr[-1] else np.empty(0, np.intp)
        data = np.ones(indptr[-1])
        self.adjacency = csr_matrix((data, indices, indptr),
                                    shape=(graph.node_count, graph.node_count))


def _graph_ops(graph: DataGraph) -> _GraphOps:
    ops = getattr(graph, "_numeric_ops", None)
    if ops is None:
        ops = _GraphOps(graph)
        object.__setattr__(graph, "_numeric_ops", ops)
    return ops


@dataclass
class StepScore:
    """Scoring cache for the prediction made at one time step."""
    t: int
    cand: np.ndarray            # inactive candidate ids, ascending
    probs: np.ndarray           # softmax over cand
    target_cand_pos: int
    loss: float
    mean_active: np.ndarray | None = None   # all-active pooled state
    prec_means: np.ndarray | None = None    # precedent-only: per-candidate pooled state
    prec_counts: np.ndarray | None = None   # precedent-only: per-candidate |P|


@dataclass
class CascadeForwardResult:
    cascade: Cascade
    graph: DataGraph
    H: np.ndarray               # (T, d) sender embeddings, row t-1 for v_t
    C: np.ndarray               # (T, d) memory cells
    traces: list[CellTrace]
    steps: list[StepScore]      # one per t = 2..T (when losses were computed)

    @property
    def loss_terms(self) -> np.ndarray:
        return np.array([s.loss for s in self.steps])

    @property
    def total_loss(self) -> float:
        return float(sum(s.loss for s in self.steps))


def aggregate(states: Mapping[int, CellState], precedent_set: Sequence[int],
              active_prefix: Sequence[int], d: int) -> AggregatedInputs:
    """Mean-pool cell states into the precedent and other-active aggregates."""
    prec = list(precedent_set)
    prec_set = set(prec)
    rest = [v for v in active_prefix if v not in prec_set]
    if not prec_set <= set(active_prefix):
        raise ValueError("precedent set is not a subset of the active prefix")
    try:
        h_p = mean_pool([states[v].h for v in prec], d)
        h_q = mean_pool([states[v].h for v in rest], d)
        c_p = mean_pool([states[v].c for v in prec], d)
        c_q = mean_pool([states[v].c for v in rest], d)
    except KeyError as exc:
        raise TopoLstmError(f"missing cell state for active node {exc.args[0]}") from None
    return AggregatedInputs(h_p, h_q, c_p, c_q)


def cell_forward(node: int, agg: AggregatedInputs,
                 params: ParameterStore) -> tuple[CellState, CellTrace]:
    """One memory-cell step for the node activated with the given aggregates."""
    h_p, h_q, c_p, c_q = agg.h_p, agg.h_q, agg.c_p, agg.c_q
    i = sigmoid(affine(params["W_i"], node,
                       [(params["U_i_p"], h_p), (params["U_i_q"], h_q)],
                       params["b_i"]))
    f_p = sigmoid(affine(params["W_f"], node,
                         [(params["U_f_pp"], h_p), (params["U_f_pq"], h_q)],
                         params["b_f"]))
    f_q = sigmoid(affine(params["W_f"], node,
                         [(params["U_f_qp"], h_p), (params["U_f_qq"], h_q)],
                         params["b_f"]))
    c_tilde = np.tanh(affine(params["W_c"], node,
                             [(params["U_c_p"], h_p), (params["U_c_q"], h_q)],
                             params["b_c"]))
    c = i * c_tilde + f_p * c_p + f_q * c_q
    o = sigmoid(affine(params["W_o"], node,
                       [(params["U_o_p"], h_p), (params["U_o_q"], h_q)],
                       params["b_o"]))
    tanh_c = np.tanh(c)
    h = o * tanh_c
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        for gate_name, arr in (("input gate", i), ("forget gate (p)", f_p),
                               ("forget gate (q)", f_q), ("candidate cell", c_tilde),
                               ("output gate", o), ("cell state", c)):
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite {gate_name} at node {node}")
        raise NumericError(f"non-finite cell output at node {node}")
    trace = CellTrace(node=node, prec_pos=np.empty(0, np.intp),
                      rest_pos=np.empty(0, np.intp), agg=agg, i=i, f_p=f_p,
                      f_q=f_q, c_tilde=c_tilde, o=o, tanh_c=tanh_c)
    return CellState(h=h, c=c), trace


def score_inactive(states: Mapping[int, CellState], topo: DiffusionTopology,
                   model: Model, mode: str | None = None) -> dict[int, float]:
    """Activation score for every inactive node given the active states.

    "precedent-only" pools each candidate's precedent states (bias-only when
    there are none); "all-active" pools the whole active prefix.
    """
    mode = mode or model.config.score_mode
    if mode not in SCORE_MODES:
        raise ValueError(f"unknown score mode {mode!r}")
    prefix = topo.active_prefix
    if not prefix:
        raise ValueError("scoring requires a nonempty active prefix")
    d = model.config.hidden_dim
    G = model.params["G"]
    b = model.params["b_act"]
    active = set(prefix)
    scores: dict[int, float] = {}
    if mode == "all-active":
        pooled = mean_pool([states[v].h for v in prefix], d)
        for v in range(model.config.node_count):
            if v not in active:
                scores[v] = float(G[v] @ pooled + b[v])
    else:
        for v in range(model.config.node_count):
            if v not in active:
                pooled = mean_pool([states[u].h for u in topo.precedents(v)], d)
                scores[v] = float(G[v] @ pooled + b[v])
    return scores


def forward_cascade(model: Model, graph: DataGraph, cascade: Cascade,
                    topologies: Sequence[DiffusionTopology] | None = None,
                    compute_loss: bool = True) -> CascadeForwardResult:
    """Run the cell over a cascade in activation order.

    When ``compute_loss`` is set, each step t >= 2 first scores all inactive
    nodes against the prefix (the state *before* v_t activates) and records
    the negative log-probability of the actual activation.  ``topologies``
    may carry the cascade's precomputed topology chain (index t-1 holds time
    t); it is rebuilt incrementally when absent.
    """
    config = model.config
    T = len(cascade)
    d, m = config.hidden_dim, config.node_count
    if max(cascade.nodes) >= m or min(cascade.nodes) < 0:
        raise DataError("cascade references nodes outside the graph")
    if topologies is None:
        topologies = build_topologies(graph, cascade)

    params = model.params
    G, b_act = params["G"], params["b_act"]
    H = np.zeros((T, d))
    C = np.zeros((T, d))
    active_mask = np.zeros(m, dtype=bool)
    pos_of: dict[int, int] = {}
    traces: list[CellTrace] = []
    steps: list[StepScore] = []
    zeros = np.zeros(d)

    precedent_scoring = compute_loss and config.score_mode == "precedent-only"
    if precedent_scoring:
        # Running sum/count of active in-neighbour states per node; rows of
        # active nodes go stale but are never read.
        ops = _graph_ops(graph)
        prec_sum = np.zeros((m, d))
        prec_cnt = np.zeros(m)

    for t in range(1, T + 1):
        v = cascade[t - 1]
        topo = topologies[t - 1]
        n_act = t - 1

        if compute_loss and t >= 2:
            cand = np.flatnonzero(~active_mask)
            target_cand_pos = int(np.searchsorted(cand, v))
            if config.score_mode == "all-active":
                pooled = H[: t - 1].mean(axis=0)
                scores = G[cand] @ pooled + b_act[cand]
                loss, probs = nll_from_scores(scores, target_cand_pos)
                steps.append(StepScore(t=t, cand=cand, probs=probs,
                                       target_cand_pos=target_cand_pos,
                                       loss=loss, mean_active=pooled))
            else:
                cnt = prec_cnt[cand]
                means = prec_sum[cand] / np.where(cnt > 0, cnt, 1.0)[:, None]
                scores = np.einsum("jd,jd->j", means, G[cand]) + b_act[cand]
                loss, probs = nll_from_scores(scores, target_cand_pos)
                steps.append(StepScore(t=t, cand=cand, probs=probs,
                                       target_cand_pos=target_cand_pos,
                                       loss=loss, prec_means=means,
                                       prec_counts=cnt))

        prec_nodes = topo.precedents(v)
        prec_pos = np.fromiter((pos_of[u] for u in prec_nodes),
                               dtype=np.intp, count=len(prec_nodes))
        if n_act:
            rest_mask = np.ones(n_act, dtype=bool)
            rest_mask[prec_pos] = False
            rest_pos = np.flatnonzero(rest_mask)
        else:
            rest_pos = np.empty(0, np.intp)

        h_p = H[prec_pos].mean(axis=0) if prec_pos.size else zeros
        c_p = C[prec_pos].mean(axis=0) if prec_pos.size else zeros
        h_q = H[rest_pos].mean(axis=0) if rest_pos.size else zeros
        c_q = C[rest_pos].mean(axis=0) if rest_pos.size else zeros

        state, trace = cell_forward(v, AggregatedInputs(h_p, h_q, c_p, c_q), params)
        trace.prec_pos = prec_pos
        trace.rest_pos = rest_pos
        H[t - 1] = state.h
        C[t - 1] = state.c
        traces.append(trace)
        active_mask[v] = True
        pos_of[v] = t - 1
        if precedent_scoring:
            succ = ops.out_arrays[v]
            if succ.size:
                prec_sum[succ] += state.h
                prec_cnt[succ] += 1.0

    return CascadeForwardResult(cascade=cascade, graph=graph, H=H, C=C,
                                traces=traces, steps=steps)


def backward_cascade(result: CascadeForwardResult, model: Model,
                     out: GradientStore | None = None) -> GradientStore:
    """Exact reverse-mode gradient of the cascade's summed loss terms.

    Accumulates into ``out`` (a fresh store when omitted) without any
    normalisation, so contributions from repeated cascades add up.  Handles
    the fan-out of every sender state into all later aggregates and all
    later scoring steps.
    """
    if out is None:
        out = model.zero_grads()
    config = model.config
    params = model.params
    T = len(result.cascade)
    d = config.hidden_dim
    G = params["G"]
    dH = np.zeros((T, d))
    dC = np.zeros((T, d))
    steps_by_t = {s.t: s for s in result.steps}
    if config.score_mode == "precedent-only" and result.steps:
        adjacency = _graph_ops(result.graph).adjacency
        cascade_ids = np.asarray(result.cascade.nodes, dtype=np.intp)

    u_i_p, u_i_q = params["U_i_p"], params["U_i_q"]
    u_f_pp, u_f_pq = params["U_f_pp"], params["U_f_pq"]
    u_f_qp, u_f_qq = params["U_f_qp"], params["U_f_qq"]
    u_c_p, u_c_q = params["U_c_p"], params["U_c_q"]
    u_o_p, u_o_q = params["U_o_p"], params["U_o_q"]

    for t in range(T, 0, -1):
        step = steps_by_t.get(t)
        if step is not None:
            gvec = step.probs.copy()
            gvec[step.target_cand_pos] -= 1.0
            cand = step.cand
            out["b_act"][cand] += gvec
            if config.score_mode == "all-active":
                out["G"][cand] += gvec[:, None] * step.mean_active[None, :]
                d_pooled = G[cand].T @ gvec
                dH[: t - 1] += d_pooled / (t - 1)
            else:
                out["G"][cand] += gvec[:, None] * step.prec_means
                # Each active node u feeds dH[u] with sum over its inactive
                # out-neighbours w of gvec_w / |P_w| * G[w]; alpha is zero for
                # active targets and for candidates without precedents.
                alpha = np.zeros(config.node_count)
                nz = step.prec_counts > 0
                alpha[cand[nz]] = gvec[nz] / step.prec_counts[nz]
                contrib = adjacency @ (alpha[:, None] * G)
                dH[: t - 1] += contrib[cascade_ids[: t - 1]]

        pos = t - 1
        dh = dH[pos]
        if not (dh.any() or dC[pos].any()):
            continue
        tr = result.traces[pos]
        agg = tr.agg
        dc = dC[pos] + dh * tr.o * (1.0 - tr.tanh_c ** 2)
        dzo = dh * tr.tanh_c * tr.o * (1.0 - tr.o)
        dzi = dc * tr.c_tilde * tr.i * (1.0 - tr.i)
        dzc = dc * tr.i * (1.0 - tr.c_tilde ** 2)
        dzf_p = dc * agg.c_p * tr.f_p * (1.0 - tr.f_p)
        dzf_q = dc * agg.c_q * tr.f_q * (1.0 - tr.f_q)

        v = tr.node
        out["W_i"][:, v] += dzi
        out["b_i"] += dzi
        out["U_i_p"] += np.outer(dzi, agg.h_p)
        out["U_i_q"] += np.outer(dzi, agg.h_q)
        dzf_sum = dzf_p + dzf_q
        out["W_f"][:, v] += dzf_sum
        out["b_f"] += dzf_sum
        out["U_f_pp"] += np.outer(dzf_p, agg.h_p)
        out["U_f_pq"] += np.outer(dzf_p, agg.h_q)
        out["U_f_qp"] += np.outer(dzf_q, agg.h_p)
        out["U_f_qq"] += np.outer(dzf_q, agg.h_q)
        out["W_c"][:, v] += dzc
        out["b_c"] += dzc
        out["U_c_p"] += np.outer(dzc, agg.h_p)
        out["U_c_q"] += np.outer(dzc, agg.h_q)
        out["W_o"][:, v] += dzo
        out["b_o"] += dzo
        out["U_o_p"] += np.outer(dzo, agg.h_p)
        out["U_o_q"] += np.outer(dzo, agg.h_q)

        if tr.prec_pos.size or tr.rest_pos.size:
            dh_p = (u_i_p.T @ dzi + u_f_pp.T @ dzf_p + u_f_qp.T @ dzf_q
                    + u_c_p.T @ dzc + u_o_p.T @ dzo)
            dh_q = (u_i_q.T @ dzi + u_f_pq.T @ dzf_p + u_f_qq.T @ dzf_q
                    + u_c_q.T @ dzc + u_o_q.T @ dzo)
            if tr.prec_pos.size:
                dH[tr.prec_pos] += dh_p / tr.prec_pos.size
                dC[tr.prec_pos] += dc * tr.f_p / tr.prec_pos.size
            if tr.rest_pos.size:
                dH[tr.rest_pos] += dh_q / tr.rest_pos.size
                dC[tr.rest_pos] += dc * tr.f_q / tr.rest_pos.size
    return out


def predict_next(model: Model, graph: DataGraph, prefix: Cascade,
                 topologies: Sequence[DiffusionTopology] | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Distribution over the next activation after an observed prefix.

    Returns (candidate ids ascending, probabilities); candidates are all
    inactive nodes.
    """
    if topologies is None:
        topologies = build_topologies(graph, prefix)
    result = forward_cascade(model, graph, prefix, topologies=topologies,
                             compute_loss=False)
    m = model.config.node_count
    active_mask = np.zeros(m, dtype=bool)
    active_mask[list(prefix.nodes)] = True
    cand = np.flatnonzero(~active_mask)
    if cand.size == 0:
        raise ValueError("no inactive nodes left to predict")
    G, b_act = model.params["G"], model.params["b_act"]
    if model.config.score_mode == "all-active":
        pooled = result.H.mean(axis=0)
        scores = G[cand] @ pooled + b_act[cand]
    else:
        topo = topologies[len(prefix)]  # time T+1
        pos_of = {v: i for i, v in enumerate(prefix.nodes)}
        scores = np.empty(cand.size)
        for j, u in enumerate(cand):
            prec = topo.precedents(int(u))
            if prec:
                ppos = [pos_of[x] for x in prec]
                scores[j] = G[u] @ result.H[ppos].mean(axis=0) + b_act[u]
            else:
                scores[j] = b_act[u]
    return cand, softmax(scores)
