"""Logit fusion, label decisions, losses, and post-prediction enrichment.

Multi-label logit vectors reserve index 0 for the learned threshold class;
relation j of the extraction set sits at index j + 1.  Single-label vectors
index relations directly.  Helpers here accept plain arrays or tensors
where no gradient is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sampling import Subgraph

MULTI_LABEL = "multi_label"
SINGLE_LABEL = "single_label"
THRESHOLD_INDEX = 0


@dataclass(frozen=True)
class FusionWeights:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("fusion weights must be finite")


@dataclass(frozen=True)
class Prediction:
    subject: object
    object: object
    relation: int
    score: float


@dataclass
class PredictionSet:
    """Decided predictions for one document; relations are extraction ids."""

    predictions: list
    mode: str = MULTI_LABEL


def logit_index_to_relation(index: int, mode: str) -> int:
    """Map a logit slot to its extraction-set relation id."""
    if mode == MULTI_LABEL:
        if index == THRESHOLD_INDEX:
            raise ValueError("threshold slot is not a relation")
        return index - 1
    return index


def relation_to_logit_index(relation: int, mode: str) -> int:
    return relation + 1 if mode == MULTI_LABEL else relation


def fuse(p_text, p_graph, weights: FusionWeights = FusionWeights()) -> Tensor:
    """Weighted accumulation alpha * p_text + beta * p_graph.

    The defaults add the two logit vectors unchanged; beta = 0 reproduces
    the text logits bit for bit.
    """
    p_text = ad.as_tensor(p_text)
    p_graph = ad.as_tensor(p_graph)
    if p_text.shape != p_graph.shape:
        raise ValueError(f"logit length mismatch: {p_text.shape} vs {p_graph.shape}")
    return ad.add(ad.mul_scalar(p_text, weights.alpha), ad.mul_scalar(p_graph, weights.beta))


def decide_labels(logits, mode: str) -> set[int]:
    """Predicted logit indices under the decision rule for `mode`.

    Multi-label: every index whose logit exceeds the threshold slot (index
    0); an empty set means no relation.  Single-label: the argmax index,
    lowest index winning ties.
    """
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if mode == MULTI_LABEL:
        return {int(i) for i in range(1, data.shape[0]) if data[i] > data[THRESHOLD_INDEX]}
    if mode == SINGLE_LABEL:
        return {int(np.argmax(data))}
    raise ValueError(f"unknown decision mode {mode!r}")


def hinge_abl_loss(logits: Tensor, gold, margin: float = 1.0) -> Tensor:
    """Margin loss against the adaptive threshold slot, balanced by side.

    Positives are pushed `margin` above the threshold logit, negatives
    `margin` below, each side averaged separately; empty sides contribute
    nothing.  `gold` holds positive logit indices (threshold excluded).
    """
    gold = set(gold)
    if THRESHOLD_INDEX in gold:
        raise ValueError("gold labels must not contain the threshold slot")
    n = logits.shape[0]
    negatives = [i for i in range(1, n) if i not in gold]
    positives = sorted(gold)
    th = ad.gather(logits, [THRESHOLD_INDEX])
    total = None
    if positives:
        pos = ad.gather(logits, positives)
        term = ad.mean_all(ad.relu(ad.add_scalar(ad.sub(th, pos), margin)))
        total = term
    if negatives:
        neg = ad.gather(logits, negatives)
        term = ad.mean_all(ad.relu(ad.add_scalar(ad.sub(neg, th), margin)))
        total = term if total is None else ad.add(total, term)
    if total is None:
        total = ad.mul_scalar(ad.sum_all(logits), 0.0)
    return total


def adaptive_threshold_ce_loss(logits: Tensor, gold) -> Tensor:
    """Softmax alternative to the hinge: positives race the threshold slot.

    One term ranks each positive above the threshold among {positives,
    threshold}; a second ranks the threshold top among {negatives,
    threshold}.
    """
    gold = set(gold)
    if THRESHOLD_INDEX in gold:
        raise ValueError("gold labels must not contain the threshold slot")
    n = logits.shape[0]
    positives = sorted(gold)
    negatives = [i for i in range(1, n) if i not in gold]
    total = None
    if positives:
        group = ad.gather(logits, positives + [THRESHOLD_INDEX])
        lsm = ad.log_softmax(group)
        term = ad.neg(ad.mean_all(ad.gather(lsm, list(range(len(positives))))))
        total = term
    group = ad.gather(logits, negatives + [THRESHOLD_INDEX])
    lsm = ad.log_softmax(group)
    term = ad.neg(ad.gather(lsm, [len(negatives)]))
    term = ad.sum_all(term)
    total = term if total is None else ad.add(total, term)
    return total


def cross_entropy_loss(logits: Tensor, gold: int) -> Tensor:
    """Negative log-softmax of the gold slot, max-shifted."""
    n = logits.shape[0]
    if not 0 <= gold < n:
        raise ValueError(f"gold index {gold} outside [0, {n})")
    return ad.sum_all(ad.neg(ad.gather(ad.log_softmax(logits), [gold])))


LOSSES = {
    "hinge_abl": hinge_abl_loss,
    "atlop": adaptive_threshold_ce_loss,
}


def extend_subgraph(sub: Subgraph, predicted_edges, num_extraction_relations: int) -> Subgraph:
    """Inject predicted relations as fresh edge types, forward and inverse.

    `predicted_edges` holds (local subject, local object, extraction
    relation id).  Predicted relation r becomes type base + r with inverse
    base + R + r, where base counts the subgraph's existing types (both
    directions) and R = num_extraction_relations, so injected ids are
    disjoint from the background vocabulary.
    """
    base = 2 * sub.num_base_relations
    edges = set(sub.edges)
    for u, v, r in predicted_edges:
        if not (0 <= u < sub.num_nodes and 0 <= v < sub.num_nodes):
            raise ValueError(f"predicted edge endpoint outside subgraph: {(u, v)}")
        if not 0 <= r < num_extraction_relations:
            raise ValueError(f"predicted relation {r} outside extraction set")
        edges.add((u, base + r, v))
        edges.add((v, base + num_extraction_relations + r, u))
    return Subgraph(
        nodes=sub.nodes,
        edges=tuple(sorted(edges)),
        anchors=sub.anchors,
        num_base_relations=sub.num_base_relations,
        seed=sub.seed,
        local_index=sub.local_index,
    )


@dataclass
class PostPredictResult:
    subgraph: Subgraph
    fused: dict
    skipped: int


def post_predict(sub: Subgraph, text_preds: PredictionSet, params, anchor_locals: dict,
                 linked_locals: dict, text_logits: dict, num_extraction_relations: int,
                 weights: FusionWeights = FusionWeights()) -> PostPredictResult:
    """Graph enrichment from text-only decisions, then a rescoring pass.

    `text_preds` comes from a beta = 0 decision pass.  `linked_locals` maps
    KG-linked document entities to their subgraph nodes; predictions with
    an endpoint outside it (unlinked or absent) are skipped and counted.
    The graph module reruns on the extended subgraph and the refreshed
    fused logits are returned per pair of `text_logits` (keyed by
    (subject, object) document entity ids, mapped through `anchor_locals`).
    """
    from .nbf import score_all_pairs

    injected = []
    skipped = 0
    for pred in text_preds.predictions:
        u = linked_locals.get(pred.subject)
        v = linked_locals.get(pred.object)
        if u is None or v is None:
            skipped += 1
            continue
        injected.append((u, v, pred.relation))
    extended = extend_subgraph(sub, injected, num_extraction_relations)

    keys = sorted(text_logits)
    local_pairs = [(anchor_locals[s], anchor_locals[o]) for s, o in keys]
    graph_logits = score_all_pairs(extended, local_pairs, params)
    fused = {
        key: fuse(text_logits[key], pg, weights)
        for key, pg in zip(keys, graph_logits)
    }
    return PostPredictResult(extended, fused, skipped)
