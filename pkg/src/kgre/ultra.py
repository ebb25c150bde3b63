"""Zero-shot graph scorer: relation-graph encoder plus entity encoder.

A relation graph has one node per relation type (inverses included) and a
typed edge whenever two relations touch the same entity; the four edge
types record which endpoints coincide (head-head, head-tail, tail-head,
tail-tail).  A first NBF pass over this graph, seeded at the candidate
relation, yields a representation per relation type; a second NBF pass over
the entity subgraph uses those representations as its edge embeddings and
the candidate's own representation as the start seed.  The object node's
final state scores the candidate, and candidates are scored independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .kg import KnowledgeGraph
from .nbf import nbf_pass
from .sampling import (
    DEFAULT_HOP_CAP,
    Subgraph,
    remove_direct_triples,
    two_hop_neighborhood,
)

HEAD_HEAD, HEAD_TAIL, TAIL_HEAD, TAIL_TAIL = range(4)
INTERACTION_NAMES = ("head-head", "head-tail", "tail-head", "tail-tail")
NUM_INTERACTIONS = 4


@dataclass(frozen=True)
class RelationGraph:
    """Typed interaction graph over relation types.

    `edges` maps (source relation, target relation, interaction type) to a
    support count: the number of sampled neighborhoods exhibiting the edge
    (1 for exhaustively built graphs).  `total_neighborhoods` is the
    denominator used when the graph was support-filtered (0 otherwise).
    """

    num_nodes: int
    edges: dict
    total_neighborhoods: int = 0

    def edge_list(self):
        return sorted(self.edges)


def _interaction_edges(triples, out=None) -> dict:
    """Typed relation-relation edges exhibited by a set of triples."""
    edges = set() if out is None else out
    by_entity: dict[int, list] = {}
    for i, t in enumerate(triples):
        by_entity.setdefault(t.subject, []).append((i, HEAD_HEAD, t.relation))
        by_entity.setdefault(t.object, []).append((i, TAIL_TAIL, t.relation))
    for incidences in by_entity.values():
        for i, pos_a, rel_a in incidences:
            for j, pos_b, rel_b in incidences:
                if i == j:
                    continue
                # pos codes reuse HEAD_HEAD/TAIL_TAIL as head/tail markers
                if pos_a == HEAD_HEAD:
                    itype = HEAD_HEAD if pos_b == HEAD_HEAD else HEAD_TAIL
                else:
                    itype = TAIL_HEAD if pos_b == HEAD_HEAD else TAIL_TAIL
                edges.add((rel_a, rel_b, itype))
    return edges


def build_relation_graph(graph: KnowledgeGraph) -> RelationGraph:
    """Exhaustive relation graph of an inverse-augmented knowledge graph."""
    if not graph.has_inverses:
        raise ValueError("build_relation_graph expects an inverse-augmented graph")
    edges = _interaction_edges(graph.triples)
    return RelationGraph(graph.num_relations, {e: 1 for e in edges})


def filter_support_graph(
    graph: KnowledgeGraph,
    relations,
    samples_per_relation: int = 1000,
    keep_threshold: float = 0.10,
    seed: int = 0,
    hop_cap: int = DEFAULT_HOP_CAP,
) -> RelationGraph:
    """Relation graph restricted to edges with enough neighborhood support.

    For each listed relation, min(samples_per_relation, available) of its
    triples are drawn without replacement; the two-hop neighborhood of each
    sampled subject and each sampled object contributes one neighborhood.
    An edge survives iff it occurs (both incident triples present) in at
    least `keep_threshold` of all neighborhoods, pooled across relations.
    """
    if not graph.has_inverses:
        raise ValueError("filter_support_graph expects an inverse-augmented graph")
    triples_of: dict[int, list] = {r: [] for r in relations}
    for t in graph.triples:
        if t.relation in triples_of:
            triples_of[t.relation].append(t)
    for r in relations:
        if not triples_of[r]:
            raise ValueError(f"relation {graph.relations[r]!r} has no triples")

    support: dict[tuple, int] = {}
    total = 0
    for r in relations:
        pool = triples_of[r]
        if len(pool) > samples_per_relation:
            rng = np.random.default_rng([seed, 7, r])
            picks = sorted(rng.choice(len(pool), size=samples_per_relation, replace=False).tolist())
            sampled = [pool[i] for i in picks]
        else:
            sampled = pool
        for t in sampled:
            for endpoint in (t.subject, t.object):
                nodes = two_hop_neighborhood(graph, endpoint, hop_cap=hop_cap, seed=seed)
                induced = [
                    x for x in graph.triples if x.subject in nodes and x.object in nodes
                ]
                total += 1
                for edge in _interaction_edges(induced):
                    support[edge] = support.get(edge, 0) + 1

    kept = {e: c for e, c in support.items() if c >= keep_threshold * total}
    return RelationGraph(graph.num_relations, kept, total_neighborhoods=total)


def serialize_relation_graph(rg: RelationGraph) -> str:
    """Sorted text form (typed edges plus support counts) for golden tests."""
    lines = [f"# relation-graph nodes={rg.num_nodes} neighborhoods={rg.total_neighborhoods}"]
    for src, dst, itype in rg.edge_list():
        lines.append(f"edge {src} {dst} {INTERACTION_NAMES[itype]} {rg.edges[(src, dst, itype)]}")
    return "\n".join(lines) + "\n"


@dataclass
class UltraParams:
    """Parameters of the two NBF encoders and the scoring head.

    The relation-graph encoder owns four interaction-type embeddings per
    layer; the entity encoder's edge embeddings arrive dynamically as the
    relation-graph output, so it owns only update weights.  Output widths
    of the two encoders match by construction.
    """

    relation_start: Tensor
    interaction_embeddings: list
    relation_update_weights: list
    relation_update_biases: list
    entity_update_weights: list
    entity_update_biases: list
    w5: Tensor
    b5: Tensor
    w6: Tensor
    b6: Tensor

    @classmethod
    def create(cls, width: int = 16, layers: int = 4, hidden: int | None = None,
               seed: int = 0) -> "UltraParams":
        rng = np.random.default_rng([seed, 37])
        hidden = width if hidden is None else hidden
        scale = np.sqrt(2.0 / (4 * width))
        return cls(
            relation_start=ad.parameter(rng.standard_normal(width)),
            interaction_embeddings=[
                ad.parameter((NUM_INTERACTIONS, width), rng, scale=1.0) for _ in range(layers)
            ],
            relation_update_weights=[
                ad.parameter((width, 4 * width), rng, scale=scale) for _ in range(layers)
            ],
            relation_update_biases=[ad.parameter(np.zeros(width)) for _ in range(layers)],
            entity_update_weights=[
                ad.parameter((width, 4 * width), rng, scale=scale) for _ in range(layers)
            ],
            entity_update_biases=[ad.parameter(np.zeros(width)) for _ in range(layers)],
            w5=ad.parameter((hidden, width), rng, scale=np.sqrt(2.0 / width)),
            b5=ad.parameter(np.zeros(hidden)),
            w6=ad.parameter((1, hidden), rng, scale=np.sqrt(1.0 / hidden)),
            b6=ad.parameter(np.zeros(1)),
        )

    @property
    def layers(self) -> int:
        return len(self.entity_update_weights)

    @property
    def width(self) -> int:
        return self.relation_start.size

    def named_parameters(self) -> dict:
        params = {
            "ultra.relation_start": self.relation_start,
            "ultra.w5": self.w5,
            "ultra.b5": self.b5,
            "ultra.w6": self.w6,
            "ultra.b6": self.b6,
        }
        for t in range(len(self.interaction_embeddings)):
            params[f"ultra.interactions.{t}"] = self.interaction_embeddings[t]
            params[f"ultra.rel_update_w.{t}"] = self.relation_update_weights[t]
            params[f"ultra.rel_update_b.{t}"] = self.relation_update_biases[t]
        for t in range(len(self.entity_update_weights)):
            params[f"ultra.ent_update_w.{t}"] = self.entity_update_weights[t]
            params[f"ultra.ent_update_b.{t}"] = self.entity_update_biases[t]
        return params


def relation_graph_encoder(rg: RelationGraph, query_relation: int, params: UltraParams) -> Tensor:
    """Representations of every relation node, seeded at the query relation."""
    if not 0 <= query_relation < rg.num_nodes:
        raise ValueError(f"query relation {query_relation} not in the relation graph")
    edges = [(src, itype, dst) for src, dst, itype in rg.edge_list()]
    return nbf_pass(
        rg.num_nodes,
        edges,
        query_relation,
        params.relation_start,
        params.interaction_embeddings,
        params.relation_update_weights,
        params.relation_update_biases,
        num_relation_types=NUM_INTERACTIONS,
    )


def entity_encoder(sub: Subgraph, start: int, relation_repr: Tensor,
                   start_vec: Tensor, params: UltraParams) -> Tensor:
    """Entity NBF pass with dynamic relation embeddings (same table each layer)."""
    return nbf_pass(
        sub.num_nodes,
        sub.edges,
        start,
        start_vec,
        [relation_repr] * params.layers,
        params.entity_update_weights,
        params.entity_update_biases,
        num_relation_types=relation_repr.shape[0],
    )


def ultra_logits(sub: Subgraph, subject: int, object_: int, candidates, rg: RelationGraph,
                 params: UltraParams, relation_cache: dict | None = None) -> Tensor:
    """Candidate relation scores for one (subject, object) anchor pair.

    Direct edges between the pair are removed before the entity pass.  For
    each candidate the relation-graph encoder (optionally memoized in
    `relation_cache`, keyed by candidate, valid for one parameter state)
    conditions an entity pass whose start seed is the candidate's own
    representation; the object state feeds the two-layer scoring head.
    """
    for c in candidates:
        if not 0 <= c < rg.num_nodes:
            raise ValueError(f"candidate relation {c} not in the relation graph")
    pruned = remove_direct_triples(sub, [(subject, object_)])
    scores = []
    for c in candidates:
        if relation_cache is not None and c in relation_cache:
            h = relation_cache[c]
        else:
            h = relation_graph_encoder(rg, c, params)
            if relation_cache is not None:
                relation_cache[c] = h
        states = entity_encoder(pruned, subject, h, ad.row(h, c), params)
        obj = ad.row(states, object_)
        scores.append(ad.linear(ad.relu(ad.linear(obj, params.w5, params.b5)),
                                params.w6, params.b6))
    return ad.concat(scores)
