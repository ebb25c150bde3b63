"""Neural Bellman-Ford message passing without a query relation.

One start node is seeded with a learned vector and every other node with
zeros.  Each layer sends an elementwise product of the source state and a
relation embedding along every edge, re-injects each node's boundary vector
(the start seed at the start node, zero elsewhere) as an extra message,
aggregates per destination with [mean | max | min | std], and applies a
linear update plus ReLU.  The final node states score all relations at once
through a two-layer head, so one pass serves every object of a subject.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sampling import Subgraph

DEFAULT_LAYERS = 4
DEFAULT_WIDTH = 32


def nbf_pass(num_nodes, edges, start, start_vec: Tensor, relation_tables, weights, biases,
             num_relation_types=None) -> Tensor:
    """Shared NBF core over an explicit edge list.

    `edges` is a sequence of (src local, relation id, dst local);
    `relation_tables[t]` is the (num types, width) embedding table for
    layer t (tables may repeat for sharing); `weights[t]`/`biases[t]` map
    the 4*width aggregate back to width.  Returns all node states.
    """
    layers = len(relation_tables)
    if len(weights) != layers or len(biases) != layers:
        raise ValueError("per-layer parameter lists disagree on depth")
    if not 0 <= start < num_nodes:
        raise ValueError(f"start node {start} outside [0, {num_nodes})")
    if edges:
        src = np.fromiter((e[0] for e in edges), dtype=np.intp, count=len(edges))
        rel = np.fromiter((e[1] for e in edges), dtype=np.intp, count=len(edges))
        dst = np.fromiter((e[2] for e in edges), dtype=np.intp, count=len(edges))
        limit = relation_tables[0].shape[0] if num_relation_types is None else num_relation_types
        if rel.min() < 0 or rel.max() >= limit:
            raise ValueError(
                f"relation id outside [0, {limit}) in subgraph edges"
            )
    else:
        src = rel = dst = np.zeros(0, dtype=np.intp)
    boundary_dst = np.arange(num_nodes, dtype=np.intp)
    all_dst = np.concatenate([dst, boundary_dst])

    state = ad.expand_row(start_vec, num_nodes, start)
    for table, w, b in zip(relation_tables, weights, biases):
        boundary = ad.expand_row(start_vec, num_nodes, start)
        if len(edges):
            msgs = ad.mul(ad.gather_rows(state, src), ad.gather_rows(table, rel))
            stacked = ad.concat_rows([msgs, boundary])
        else:
            stacked = boundary
        agg = ad.pna_aggregate(stacked, all_dst if len(edges) else boundary_dst, num_nodes)
        state = ad.relu(ad.linear(agg, w, b))
    return state


@dataclass
class NbfParams:
    """Parameters of the supervised graph module.

    `relation_embeddings` holds one (num relation types, width) table per
    layer (the same tensor repeated when layers share); the output head has
    `num_outputs` slots, which includes the threshold class in multi-label
    mode.
    """

    start: Tensor
    relation_embeddings: list
    update_weights: list
    update_biases: list
    w3: Tensor
    b3: Tensor
    w4: Tensor
    b4: Tensor
    num_relation_types: int
    num_outputs: int

    @classmethod
    def create(cls, num_relation_types: int, num_outputs: int, width: int = DEFAULT_WIDTH,
               layers: int = DEFAULT_LAYERS, hidden: int | None = None,
               share_relation_layers: bool = False, seed: int = 0) -> "NbfParams":
        rng = np.random.default_rng([seed, 23])
        hidden = width if hidden is None else hidden
        if share_relation_layers:
            table = ad.parameter((num_relation_types, width), rng, scale=1.0)
            tables = [table] * layers
        else:
            tables = [
                ad.parameter((num_relation_types, width), rng, scale=1.0)
                for _ in range(layers)
            ]
        return cls(
            start=ad.parameter(rng.standard_normal(width)),
            relation_embeddings=tables,
            update_weights=[
                ad.parameter((width, 4 * width), rng, scale=np.sqrt(2.0 / (4 * width)))
                for _ in range(layers)
            ],
            update_biases=[ad.parameter(np.zeros(width)) for _ in range(layers)],
            w3=ad.parameter((hidden, width), rng, scale=np.sqrt(2.0 / width)),
            b3=ad.parameter(np.zeros(hidden)),
            w4=ad.parameter((num_outputs, hidden), rng, scale=np.sqrt(1.0 / hidden)),
            b4=ad.parameter(np.zeros(num_outputs)),
            num_relation_types=num_relation_types,
            num_outputs=num_outputs,
        )

    @property
    def layers(self) -> int:
        return len(self.update_weights)

    @property
    def width(self) -> int:
        return self.start.size

    def named_parameters(self) -> dict:
        params = {"nbf.start": self.start, "nbf.w3": self.w3, "nbf.b3": self.b3,
                  "nbf.w4": self.w4, "nbf.b4": self.b4}
        seen = set()
        for t, table in enumerate(self.relation_embeddings):
            if id(table) not in seen:
                seen.add(id(table))
                params[f"nbf.relations.{t}"] = table
        for t, (w, b) in enumerate(zip(self.update_weights, self.update_biases)):
            params[f"nbf.update_w.{t}"] = w
            params[f"nbf.update_b.{t}"] = b
        return params


def nbf_forward(sub: Subgraph, start: int, params: NbfParams) -> Tensor:
    """All node states of `sub` relative to `start` (local index)."""
    return nbf_pass(
        sub.num_nodes,
        sub.edges,
        start,
        params.start,
        params.relation_embeddings,
        params.update_weights,
        params.update_biases,
        num_relation_types=params.num_relation_types,
    )


def graph_relation_logits(g_object: Tensor, params: NbfParams) -> Tensor:
    """Two-layer relation head over one object's final state."""
    return ad.linear(ad.relu(ad.linear(g_object, params.w3, params.b3)), params.w4, params.b4)


def score_all_pairs(sub: Subgraph, pairs, params: NbfParams) -> list:
    """Relation logits per (subject local, object local) pair.

    Runs exactly one forward pass per distinct subject and reads each
    object's logits from that pass; the result is identical to scoring
    every pair separately.
    """
    order: list[int] = []
    for s, _ in pairs:
        if s not in order:
            order.append(s)
    states = {s: nbf_forward(sub, s, params) for s in order}
    return [graph_relation_logits(ad.row(states[s], o), params) for s, o in pairs]
