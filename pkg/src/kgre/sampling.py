"""Per-document subgraph extraction from the background graph.

Sampling runs on the base (non-augmented) graph so the per-direction edge
caps mean what they say; the resulting subgraph then materializes inverse
edge types locally (inv(r) = r + |R_G|) so message passing can flow against
edge direction.

Randomness contract: when a cap binds at frontier node `u` during hop `h`
in direction `dir` (0 = out, 1 = in), the surviving edges are chosen by
``numpy.random.default_rng([seed, h, u, dir]).choice(n_edges, cap,
replace=False)`` over adjacency-list positions.  The choice depends only on
(seed, hop, node, direction), never on traversal history, so independent
reimplementations reproduce it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kg import KnowledgeGraph

DEFAULT_HOP_CAP = 100
DEFAULT_HOPS = 2
DEFAULT_MAX_NODES = 10_000


@dataclass(frozen=True)
class Subgraph:
    """Locally indexed induced graph around a document's anchor entities.

    `nodes[i]` is the global entity index of local node i, or None for an
    unlinked anchor (isolated by construction).  `edges` holds (local u,
    relation, local v) triples including materialized inverse types;
    `num_base_relations` fixes the inverse offset.  `anchors[j]` is the
    local index of the j-th requested anchor.
    """

    nodes: tuple
    edges: tuple
    anchors: tuple
    num_base_relations: int
    seed: int
    local_index: dict = field(repr=False, default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def validate(self) -> None:
        n = self.num_nodes
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("duplicate subgraph edges")
        for u, r, v in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge endpoint outside local range: {(u, r, v)}")
            if r < 0:
                raise ValueError(f"negative relation id: {(u, r, v)}")
        for a in self.anchors:
            if not 0 <= a < n:
                raise ValueError(f"anchor {a} outside local range")


def _edge_choice(count: int, cap: int, seed: int, hop: int, node: int, direction: int):
    """Positions of the surviving adjacency entries when the cap binds."""
    if count <= cap:
        return range(count)
    rng = np.random.default_rng([seed, hop, node, direction])
    return sorted(rng.choice(count, size=cap, replace=False).tolist())


def two_hop_neighborhood(
    graph: KnowledgeGraph,
    entity: int,
    hop_cap: int = DEFAULT_HOP_CAP,
    hops: int = DEFAULT_HOPS,
    seed: int = 0,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> set[int]:
    """Entities within `hops` of `entity`, capping edges per direction.

    Each frontier node contributes at most `hop_cap` outgoing and `hop_cap`
    incoming edges per hop.  Expansion stops adding new nodes once the
    neighborhood holds `max_nodes` entities (frontier nodes are processed
    in ascending index order, out-edges before in-edges, adjacency order
    within a direction).
    """
    if not 0 <= entity < graph.num_entities:
        raise ValueError(f"entity index {entity} outside [0, {graph.num_entities})")
    if hop_cap < 1:
        raise ValueError("hop_cap must be >= 1")
    visited = {entity}
    frontier = [entity]
    for hop in range(1, hops + 1):
        if len(visited) >= max_nodes:
            break
        next_frontier: list[int] = []
        for node in sorted(frontier):
            for direction, adj in ((0, graph.out_adj[node]), (1, graph.in_adj[node])):
                for pos in _edge_choice(len(adj), hop_cap, seed, hop, node, direction):
                    triple = graph.triples[adj[pos]]
                    other = triple.object if direction == 0 else triple.subject
                    if other not in visited:
                        if len(visited) >= max_nodes:
                            break
                        visited.add(other)
                        next_frontier.append(other)
        frontier = next_frontier
    return visited


def _induced_base_edges(graph: KnowledgeGraph, node_set: set[int]):
    """Graph triples with both endpoints in `node_set`, deduplicated."""
    edges = []
    for node in sorted(node_set):
        for ti in graph.out_adj[node]:
            t = graph.triples[ti]
            if t.object in node_set:
                edges.append(t)
    return edges


def build_document_subgraph(
    graph: KnowledgeGraph,
    anchors,
    seed: int = 0,
    hop_cap: int = DEFAULT_HOP_CAP,
    hops: int = DEFAULT_HOPS,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> Subgraph:
    """Union of the anchors' capped neighborhoods, induced and pruned.

    `anchors` is a sequence of global entity indices; None entries stand
    for unlinked document entities and become isolated local nodes.  After
    inducing edges on the union, one pass removes non-anchor nodes whose
    pre-prune degree (number of incident induced triples) is exactly one;
    anchors are always retained.  The pass is not cascaded.
    """
    anchors = list(anchors)
    if not anchors:
        raise ValueError("anchors must be non-empty")
    linked = [a for a in anchors if a is not None]
    node_set: set[int] = set()
    for a in linked:
        node_set |= two_hop_neighborhood(graph, a, hop_cap, hops, seed, max_nodes)

    induced = _induced_base_edges(graph, node_set)
    degree: dict[int, int] = {}
    for t in induced:
        degree[t.subject] = degree.get(t.subject, 0) + 1
        if t.object != t.subject:
            degree[t.object] = degree.get(t.object, 0) + 1
    anchor_set = set(linked)
    keep = {
        n for n in node_set if n in anchor_set or degree.get(n, 0) != 1
    }
    induced = [t for t in induced if t.subject in keep and t.object in keep]

    ordered = sorted(keep)
    local = {g: i for i, g in enumerate(ordered)}
    nodes: list = list(ordered)
    local_anchors = []
    for a in anchors:
        if a is None:
            local_anchors.append(len(nodes))
            nodes.append(None)
        else:
            local_anchors.append(local[a])

    nb = graph.num_base_relations
    edges = set()
    for t in induced:
        u, v = local[t.subject], local[t.object]
        edges.add((u, t.relation, v))
        edges.add((v, t.relation + nb, u))
    sub = Subgraph(
        nodes=tuple(nodes),
        edges=tuple(sorted(edges)),
        anchors=tuple(local_anchors),
        num_base_relations=nb,
        seed=seed,
        local_index=local,
    )
    sub.validate()
    return sub


def remove_direct_triples(sub: Subgraph, pairs) -> Subgraph:
    """Drop every edge between each listed local pair, both directions.

    All relations between the pair endpoints are removed (including the
    materialized inverses); the node set is unchanged.
    """
    banned = set()
    for u, v in pairs:
        for x in (u, v):
            if not 0 <= x < sub.num_nodes:
                raise ValueError(f"local index {x} outside [0, {sub.num_nodes})")
        banned.add((u, v))
        banned.add((v, u))
    edges = tuple(e for e in sub.edges if (e[0], e[2]) not in banned)
    return Subgraph(
        nodes=sub.nodes,
        edges=edges,
        anchors=sub.anchors,
        num_base_relations=sub.num_base_relations,
        seed=sub.seed,
        local_index=sub.local_index,
    )


def serialize_subgraph(sub: Subgraph) -> str:
    """Canonical text form used by golden-file tests.

    A node section (global id or "-", anchor flag) followed by an edge
    section (local u, local v, relation id), each sorted.
    """
    anchor_set = set(sub.anchors)
    lines = [f"# subgraph seed={sub.seed} base_relations={sub.num_base_relations}"]
    for i, g in enumerate(sub.nodes):
        gid = "-" if g is None else str(g)
        lines.append(f"node {gid} {1 if i in anchor_set else 0}")
    for u, v, r in sorted((u, v, r) for u, r, v in sub.edges):
        lines.append(f"edge {u} {v} {r}")
    return "\n".join(lines) + "\n"
