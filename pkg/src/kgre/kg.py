"""Immutable background knowledge graph: triples, vocabularies, adjacency.

The triple file format is UTF-8 text, one triple per line, three fields
separated by single tabs (subject, relation, object); lines starting with
"#" are ignored.  Exact duplicate triples collapse to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class TripleParseError(ValueError):
    """Malformed triple line; carries the offending 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Triple:
    subject: int
    relation: int
    object: int


@dataclass(frozen=True)
class RelationMeta:
    """One relation of the extraction set: id, display label, description."""

    relation_id: str
    label: str
    description: str = ""

    def __post_init__(self):
        if not self.label:
            raise ValueError(f"relation {self.relation_id!r} has an empty label")


class KnowledgeGraph:
    """Triple store with dense entity/relation vocabularies and adjacency.

    Immutable after construction; safe for concurrent reads.  Adjacency
    lists hold triple indices in insertion order and exactly partition the
    triple list by endpoint.
    """

    def __init__(self, entities, relations, triples, num_base_relations=None):
        self.entities: list[str] = list(entities)
        self.relations: list[str] = list(relations)
        self.triples: list[Triple] = list(triples)
        self.entity_index = {name: i for i, name in enumerate(self.entities)}
        self.relation_index = {name: i for i, name in enumerate(self.relations)}
        if len(self.entity_index) != len(self.entities):
            raise ValueError("entity vocabulary is not bijective")
        if len(self.relation_index) != len(self.relations):
            raise ValueError("relation vocabulary is not bijective")
        # num_base_relations < len(relations) marks an inverse-augmented graph.
        self.num_base_relations = (
            len(self.relations) if num_base_relations is None else num_base_relations
        )
        self.out_adj: list[list[int]] = [[] for _ in self.entities]
        self.in_adj: list[list[int]] = [[] for _ in self.entities]
        for i, t in enumerate(self.triples):
            self.out_adj[t.subject].append(i)
            self.in_adj[t.object].append(i)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    @property
    def has_inverses(self) -> bool:
        return self.num_base_relations < len(self.relations)

    def __repr__(self):
        return (
            f"KnowledgeGraph({self.num_entities} entities, "
            f"{self.num_relations} relations, {self.num_triples} triples)"
        )


def load_triples(source) -> KnowledgeGraph:
    """Build a graph from tab-separated triple lines.

    `source` is an iterable of lines (an open file works).  Vocabularies
    assign dense indices in first-appearance order; duplicates collapse.
    """
    entities: list[str] = []
    relations: list[str] = []
    entity_index: dict[str, int] = {}
    relation_index: dict[str, int] = {}
    triples: list[Triple] = []
    seen: set[tuple[int, int, int]] = set()

    def intern(name, names, index):
        idx = index.get(name)
        if idx is None:
            idx = len(names)
            names.append(name)
            index[name] = idx
        return idx

    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise TripleParseError(lineno, f"expected 3 tab-separated fields, got {len(fields)}")
        s, r, o = fields
        if not s or not o:
            raise TripleParseError(lineno, "empty entity field")
        if not r:
            raise TripleParseError(lineno, "empty relation field")
        si = intern(s, entities, entity_index)
        ri = intern(r, relations, relation_index)
        oi = intern(o, entities, entity_index)
        key = (si, ri, oi)
        if key not in seen:
            seen.add(key)
            triples.append(Triple(si, ri, oi))
    return KnowledgeGraph(entities, relations, triples)


def load_triples_file(path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as handle:
        return load_triples(handle)


INVERSE_SUFFIX = "^-1"


def add_inverse_relations(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Materialize an inverse edge type per relation: inv(r) = r + |R_G|.

    For every triple (s, r, o) the result also contains (o, inv(r), s).
    Rejects graphs that already carry inverse types.
    """
    if graph.has_inverses:
        raise ValueError("graph already has inverse relations")
    n = graph.num_relations
    relations = graph.relations + [name + INVERSE_SUFFIX for name in graph.relations]
    triples = list(graph.triples)
    triples.extend(Triple(t.object, t.relation + n, t.subject) for t in graph.triples)
    return KnowledgeGraph(graph.entities, relations, triples, num_base_relations=n)


def inverse_relation(relation: int, num_base_relations: int) -> int:
    """Index of the inverse type; an involution by construction."""
    if relation < num_base_relations:
        return relation + num_base_relations
    return relation - num_base_relations


def edges_of(graph: KnowledgeGraph, node: int, direction: str = "both") -> list[Triple]:
    """Triples incident to `node`, in triple insertion order.

    direction: "out" (node is subject), "in" (node is object), or "both".
    A self-loop triple is listed once under "both".
    """
    if not 0 <= node < graph.num_entities:
        raise ValueError(f"entity index {node} outside [0, {graph.num_entities})")
    if direction == "out":
        idx = graph.out_adj[node]
    elif direction == "in":
        idx = graph.in_adj[node]
    elif direction == "both":
        idx = sorted(set(graph.out_adj[node]) | set(graph.in_adj[node]))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return [graph.triples[i] for i in idx]


def load_relation_meta(path) -> list[RelationMeta]:
    """Read the extraction relation set: tab-separated id, label, description."""
    out: list[RelationMeta] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) == 2:
                rid, label = fields
                desc = ""
            elif len(fields) == 3:
                rid, label, desc = fields
            else:
                raise TripleParseError(lineno, f"expected 2 or 3 fields, got {len(fields)}")
            out.append(RelationMeta(rid, label, desc))
    return out


def write_relation_meta(path, relations) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for meta in relations:
            handle.write(f"{meta.relation_id}\t{meta.label}\t{meta.description}\n")
