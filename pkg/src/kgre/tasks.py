"""Task drivers wiring fixtures to the trainable modules.

Three configurations share the training loop: link prediction on a bare
knowledge graph (graph module alone, single-label), document-level
extraction (text head + graph module fused, multi-label with threshold),
and zero-shot sentence-level extraction (multiple-choice text head + the
two-encoder graph scorer).  Drivers precompute everything frozen (token
spaces, pooled entity features, subgraphs) at load time; only parameterized
heads run inside the training tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfg
from . import pipeline, text
from .kg import KnowledgeGraph, add_inverse_relations, load_relation_meta, load_triples_file
from .nbf import NbfParams, score_all_pairs
from .pipeline import (
    MULTI_LABEL,
    SINGLE_LABEL,
    FusionWeights,
    Prediction,
    PredictionSet,
    cross_entropy_loss,
    decide_labels,
    fuse,
)
from .sampling import build_document_subgraph, remove_direct_triples
from .text import TextHeadParams, mc_zero_shot_logits, supervised_pair_logits
from .training import TrainConfig
from .ultra import UltraParams, filter_support_graph, ultra_logits

from . import autodiff as ad


def train_config_from(config: dict) -> TrainConfig:
    section = config.get("train", {})
    kwargs = {k: v for k, v in section.items()
              if k in TrainConfig.__dataclass_fields__}
    return TrainConfig(**kwargs)


def _resolve_relations(metas):
    names = [m.relation_id for m in metas]
    index = {name: i for i, name in enumerate(names)}
    if len(index) != len(names):
        raise ValueError("duplicate relation ids in the extraction set")
    return names, index


def _mean(tensors):
    total = tensors[0]
    for t in tensors[1:]:
        total = ad.add(total, t)
    return ad.mul_scalar(total, 1.0 / len(tensors))


# ---------------------------------------------------------------------------
# link prediction
# ---------------------------------------------------------------------------


def _read_query_triples(path, graph: KnowledgeGraph, relation_index):
    out = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            s, r, o = line.split("\t")
            if s not in graph.entity_index or o not in graph.entity_index:
                raise ValueError(f"{path}:{lineno}: unknown entity")
            if r not in relation_index:
                raise ValueError(f"{path}:{lineno}: relation {r!r} not in the extraction set")
            out.append((graph.entity_index[s], graph.entity_index[o], relation_index[r]))
    return out


class LinkPredictionTask:
    """Single-label relation prediction for entity pairs of a bare graph.

    Each query pair gets a two-hop subgraph with its own direct edges
    removed; the graph module must recover the relation from the remaining
    paths.
    """

    def __init__(self, config: dict):
        self.config = config
        self.train_config = train_config_from(config)
        self.graph = load_triples_file(cfg.get(config, "task", "graph"))
        metas = load_relation_meta(cfg.get(config, "task", "relations"))
        self.relation_names, self.relation_index = _resolve_relations(metas)
        self.splits = {}
        for split in ("train", "valid", "test"):
            path = cfg.get(config, "task", split)
            if path:
                self.splits[split] = _read_query_triples(path, self.graph, self.relation_index)
        width = cfg.get(config, "model", "width", 32)
        layers = cfg.get(config, "model", "layers", 4)
        hidden = cfg.get(config, "model", "hidden", width)
        self.params = NbfParams.create(
            num_relation_types=2 * self.graph.num_relations,
            num_outputs=len(self.relation_names),
            width=width,
            layers=layers,
            hidden=hidden,
            share_relation_layers=cfg.get(config, "model", "share_relation_layers", False),
            seed=self.train_config.seed,
        )
        self.hop_cap = cfg.get(config, "train", "hop_cap", 100)
        self._subgraphs = {}

    def parameter_groups(self) -> dict:
        return {"text": {}, "graph": self.params.named_parameters()}

    def _subgraph(self, subject: int, object_: int):
        key = (subject, object_)
        sub = self._subgraphs.get(key)
        if sub is None:
            sub = build_document_subgraph(
                self.graph, [subject, object_], seed=self.train_config.seed,
                hop_cap=self.hop_cap,
            )
            sub = remove_direct_triples(sub, [(sub.anchors[0], sub.anchors[1])])
            self._subgraphs[key] = sub
        return sub

    def _pair_logits(self, example):
        s, o, _ = example
        sub = self._subgraph(s, o)
        return score_all_pairs(sub, [(sub.anchors[0], sub.anchors[1])], self.params)[0]

    def batch_loss(self, batch):
        return _mean([cross_entropy_loss(self._pair_logits(ex), ex[2]) for ex in batch])

    def evaluate(self, split: str):
        examples = self.splits[split]
        if not examples:
            return 0.0, 0.0, 0.0
        hits = 0
        for ex in examples:
            logits = self._pair_logits(ex)
            if decide_labels(logits, SINGLE_LABEL) == {ex[2]}:
                hits += 1
        acc = hits / len(examples)
        return acc, acc, acc

    def predictions(self, split: str):
        out = []
        for i, (s, o, gold) in enumerate(self.splits[split]):
            logits = self._pair_logits((s, o, gold))
            pred = next(iter(decide_labels(logits, SINGLE_LABEL)))
            out.append((
                f"{split}{i}", self.graph.entities[s], self.graph.entities[o],
                self.relation_names[pred], float(logits.data[pred]),
            ))
        return out

    def checkpoint_config(self) -> dict:
        return {
            "kind": "linkpred",
            "layers": self.params.layers,
            "width": self.params.width,
            "num_relation_types": self.params.num_relation_types,
            "num_outputs": self.params.num_outputs,
        }


# ---------------------------------------------------------------------------
# document-level extraction
# ---------------------------------------------------------------------------


@dataclass
class DocExample:
    """A document with every frozen quantity precomputed."""

    doc: text.DocumentInstance
    subgraph: object
    anchor_locals: dict
    linked_locals: dict
    pair_features: dict
    gold_logit_sets: dict


class DocLevelTask:
    """Fused multi-label extraction over documents with encoder exports."""

    def __init__(self, config: dict):
        self.config = config
        self.train_config = train_config_from(config)
        self.graph = load_triples_file(cfg.get(config, "task", "graph"))
        metas = load_relation_meta(cfg.get(config, "task", "relations"))
        self.relation_names, self.relation_index = _resolve_relations(metas)
        self.mode = cfg.get(config, "model", "mode", MULTI_LABEL)
        self.num_outputs = len(self.relation_names) + (1 if self.mode == MULTI_LABEL else 0)

        docs_dir = Path(cfg.get(config, "task", "docs"))
        doc_paths = sorted(docs_dir.glob("*.doc"))
        self.examples = {}
        order = []
        for path in doc_paths:
            example = self._prepare(text.read_document(path))
            self.examples[example.doc.doc_id] = example
            order.append(example.doc.doc_id)
        self.splits = {}
        for split in ("train_docs", "valid_docs", "test_docs"):
            listed = cfg.get(config, "task", split, "")
            name = split.split("_")[0]
            if listed:
                self.splits[name] = [d for d in listed.split(",") if d]
            else:
                self.splits[name] = list(order)

        d_text = self.examples[order[0]].doc.windows[0].width if order else 0
        self.text_params = TextHeadParams.create(
            width=d_text,
            num_outputs=self.num_outputs,
            block_size=cfg.get(config, "model", "block_size", 64),
            mc_hidden=cfg.get(config, "model", "mc_hidden", 32),
            seed=self.train_config.seed,
        )
        width = cfg.get(config, "model", "width", 32)
        self.nbf_params = NbfParams.create(
            num_relation_types=2 * self.graph.num_relations + 2 * len(self.relation_names),
            num_outputs=self.num_outputs,
            width=width,
            layers=cfg.get(config, "model", "layers", 4),
            hidden=cfg.get(config, "model", "hidden", width),
            share_relation_layers=cfg.get(config, "model", "share_relation_layers", False),
            seed=self.train_config.seed,
        )
        self.weights = FusionWeights(self.train_config.alpha, self.train_config.beta)
        self.loss_fn = pipeline.LOSSES[self.train_config.loss]

    def _prepare(self, doc: text.DocumentInstance) -> DocExample:
        space = text.merge_windows(doc)
        features = {
            entity: text.entity_representations(doc, entity, space)
            for entity in doc.entities()
        }
        anchors = []
        for entity in doc.entities():
            target = doc.links.get(entity)
            anchors.append(self.graph.entity_index[target] if target is not None else None)
        sub = build_document_subgraph(
            self.graph, anchors, seed=self.train_config.seed,
            hop_cap=cfg.get(self.config, "train", "hop_cap", 100),
        )
        anchor_locals = {e: sub.anchors[i] for i, e in enumerate(doc.entities())}
        linked_locals = {e: loc for e, loc in anchor_locals.items()
                         if doc.links.get(e) is not None}
        pair_features = {}
        for s, o in doc.pairs:
            h_s, a_s = features[s]
            h_o, a_o = features[o]
            pair_features[(s, o)] = (h_s, h_o, text.pair_context(a_s, a_o, space.hidden))
        gold_logit_sets = {}
        for pair in doc.pairs:
            rels = doc.gold.get(pair, frozenset())
            gold_logit_sets[pair] = {
                pipeline.relation_to_logit_index(self.relation_index[r], self.mode)
                for r in rels
            }
        return DocExample(doc, sub, anchor_locals, linked_locals, pair_features,
                          gold_logit_sets)

    def parameter_groups(self) -> dict:
        return {
            "text": self.text_params.named_parameters(),
            "graph": self.nbf_params.named_parameters(),
        }

    def _text_logits(self, example: DocExample) -> dict:
        out = {}
        for pair in example.doc.pairs:
            h_s, h_o, c = example.pair_features[pair]
            out[pair] = supervised_pair_logits(h_s, h_o, c, self.text_params)
        return out

    def _fused_logits(self, example: DocExample, weights: FusionWeights | None = None) -> dict:
        """Fused logits per pair, honoring zero weights by skipping a side."""
        weights = self.weights if weights is None else weights
        pairs = list(example.doc.pairs)
        text_logits = None
        if weights.alpha != 0.0 or self.train_config.post_predict:
            text_logits = self._text_logits(example)
        if weights.beta == 0.0:
            return {p: ad.mul_scalar(text_logits[p], weights.alpha) for p in pairs}
        if self.train_config.post_predict:
            decisions = []
            for pair, logits in text_logits.items():
                for idx in decide_labels(logits, self.mode):
                    decisions.append(Prediction(
                        pair[0], pair[1],
                        pipeline.logit_index_to_relation(idx, self.mode),
                        float(logits.data[idx]),
                    ))
            result = pipeline.post_predict(
                example.subgraph, PredictionSet(decisions, self.mode), self.nbf_params,
                example.anchor_locals, example.linked_locals, text_logits,
                len(self.relation_names), weights,
            )
            return result.fused
        local_pairs = [(example.anchor_locals[s], example.anchor_locals[o]) for s, o in pairs]
        graph_logits = score_all_pairs(example.subgraph, local_pairs, self.nbf_params)
        if weights.alpha == 0.0:
            return {p: ad.mul_scalar(pg, weights.beta) for p, pg in zip(pairs, graph_logits)}
        return {p: fuse(text_logits[p], pg, weights) for p, pg in zip(pairs, graph_logits)}

    def batch_loss(self, batch):
        losses = []
        for doc_id in batch:
            example = self.examples[doc_id]
            fused = self._fused_logits(example)
            for pair in example.doc.pairs:
                losses.append(self.loss_fn(fused[pair], example.gold_logit_sets[pair]))
        return _mean(losses)

    def _labeled_sets(self, split: str, weights: FusionWeights | None = None):
        preds, gold = set(), set()
        for doc_id in self.splits[split]:
            example = self.examples[doc_id]
            fused = self._fused_logits(example, weights)
            for (s, o), logits in fused.items():
                for idx in decide_labels(logits, self.mode):
                    rel = pipeline.logit_index_to_relation(idx, self.mode)
                    preds.add((doc_id, s, o, self.relation_names[rel]))
            for (s, o), rels in example.doc.gold.items():
                for r in rels:
                    gold.add((doc_id, s, o, r))
        return preds, gold

    def evaluate(self, split: str, weights: FusionWeights | None = None):
        from .metrics import micro_prf

        preds, gold = self._labeled_sets(split, weights)
        return micro_prf(preds, gold)

    def training_gold_identities(self) -> set:
        out = set()
        for doc_id in self.splits["train"]:
            example = self.examples[doc_id]
            for (s, o), rels in example.doc.gold.items():
                for r in rels:
                    out.add((s, o, r))
        return out

    def predictions(self, split: str, weights: FusionWeights | None = None):
        out = []
        for doc_id in self.splits[split]:
            example = self.examples[doc_id]
            fused = self._fused_logits(example, weights)
            for (s, o), logits in sorted(fused.items()):
                for idx in sorted(decide_labels(logits, self.mode)):
                    rel = pipeline.logit_index_to_relation(idx, self.mode)
                    out.append((doc_id, s, o, self.relation_names[rel],
                                float(logits.data[idx])))
        return out

    def checkpoint_config(self) -> dict:
        return {
            "kind": "doclevel",
            "layers": self.nbf_params.layers,
            "width": self.nbf_params.width,
            "num_relation_types": self.nbf_params.num_relation_types,
            "num_outputs": self.num_outputs,
            "block_size": self.text_params.block_size,
            "mode": self.mode,
        }


# ---------------------------------------------------------------------------
# zero-shot extraction
# ---------------------------------------------------------------------------


@dataclass
class ZeroShotExample:
    doc: text.DocumentInstance
    subgraph: object
    subject_local: int
    object_local: int
    gold_relation: str


class ZeroShotTask:
    """Multiple-choice text scoring fused with the two-encoder graph scorer."""

    def __init__(self, config: dict):
        self.config = config
        self.train_config = train_config_from(config)
        base = load_triples_file(cfg.get(config, "task", "graph"))
        self.graph = base
        self.augmented = add_inverse_relations(base)
        metas = load_relation_meta(cfg.get(config, "task", "relations"))
        self.relation_names, self.relation_index = _resolve_relations(metas)
        for name in self.relation_names:
            if name not in base.relation_index:
                raise ValueError(f"extraction relation {name!r} has no triples in the graph")
        self.kg_relation_of = {
            name: base.relation_index[name] for name in self.relation_names
        }
        self.train_relations = [
            r for r in cfg.get(config, "task", "train_relations", "").split(",") if r
        ]
        self.test_relations = [
            r for r in cfg.get(config, "task", "test_relations", "").split(",") if r
        ]
        self.relation_graph = filter_support_graph(
            self.augmented,
            [self.kg_relation_of[n] for n in self.relation_names],
            samples_per_relation=cfg.get(config, "train", "samples_per_relation", 1000),
            keep_threshold=cfg.get(config, "train", "keep_threshold", 0.10),
            seed=self.train_config.seed,
            hop_cap=cfg.get(config, "train", "hop_cap", 100),
        )

        docs_dir = Path(cfg.get(config, "task", "docs"))
        self.examples = {}
        order = []
        for path in sorted(docs_dir.glob("*.doc")):
            example = self._prepare(text.read_document(path))
            self.examples[example.doc.doc_id] = example
            order.append(example.doc.doc_id)
        self.splits = {}
        for split in ("train_docs", "valid_docs", "test_docs"):
            listed = cfg.get(config, "task", split, "")
            name = split.split("_")[0]
            if listed:
                self.splits[name] = [d for d in listed.split(",") if d]
            else:
                relations = set(self.train_relations if name != "test" else self.test_relations)
                self.splits[name] = [d for d in order
                                     if self.examples[d].gold_relation in relations]

        d_text = next(iter(self.examples.values())).doc.mc_windows[
            self.relation_names[0]
        ].width if order else 0
        self.text_params = TextHeadParams.create(
            width=max(d_text, 1),
            num_outputs=len(self.relation_names),
            mc_hidden=cfg.get(config, "model", "mc_hidden", 32),
            seed=self.train_config.seed,
        )
        self.ultra_params = UltraParams.create(
            width=cfg.get(config, "model", "width", 16),
            layers=cfg.get(config, "model", "layers", 4),
            hidden=cfg.get(config, "model", "hidden", 16),
            seed=self.train_config.seed,
        )
        self.weights = FusionWeights(self.train_config.alpha, self.train_config.beta)

    def _prepare(self, doc: text.DocumentInstance) -> ZeroShotExample:
        if len(doc.pairs) != 1:
            raise ValueError(f"{doc.doc_id}: zero-shot documents carry exactly one pair")
        s, o = doc.pairs[0]
        anchors = []
        for entity in (s, o):
            target = doc.links.get(entity)
            anchors.append(self.graph.entity_index[target] if target is not None else None)
        sub = build_document_subgraph(
            self.graph, anchors, seed=self.train_config.seed,
            hop_cap=cfg.get(self.config, "train", "hop_cap", 100),
        )
        rels = doc.gold.get((s, o), frozenset())
        if len(rels) != 1:
            raise ValueError(f"{doc.doc_id}: zero-shot documents carry exactly one gold relation")
        return ZeroShotExample(doc, sub, sub.anchors[0], sub.anchors[1], next(iter(rels)))

    def parameter_groups(self) -> dict:
        return {
            "text": self.text_params.named_parameters() if self.weights.alpha != 0.0 else {},
            "graph": self.ultra_params.named_parameters() if self.weights.beta != 0.0 else {},
        }

    def _candidate_logits(self, example: ZeroShotExample, candidates, relation_cache):
        parts = []
        if self.weights.alpha != 0.0:
            encodings = [example.doc.mc_windows.get(name) for name in candidates]
            p_t = mc_zero_shot_logits(encodings, self.text_params)
            parts.append(ad.mul_scalar(p_t, self.weights.alpha))
        if self.weights.beta != 0.0:
            p_g = ultra_logits(
                example.subgraph, example.subject_local, example.object_local,
                [self.kg_relation_of[name] for name in candidates],
                self.relation_graph, self.ultra_params, relation_cache,
            )
            parts.append(ad.mul_scalar(p_g, self.weights.beta))
        if not parts:
            raise ValueError("both fusion weights are zero")
        total = parts[0]
        for p in parts[1:]:
            total = ad.add(total, p)
        return total

    def batch_loss(self, batch):
        relation_cache = {}
        candidates = self.train_relations
        losses = []
        for doc_id in batch:
            example = self.examples[doc_id]
            logits = self._candidate_logits(example, candidates, relation_cache)
            losses.append(cross_entropy_loss(logits, candidates.index(example.gold_relation)))
        return _mean(losses)

    def _candidates_for(self, split: str):
        return self.test_relations if split == "test" else self.train_relations

    def evaluate(self, split: str):
        from .metrics import macro_prf

        candidates = self._candidates_for(split)
        relation_cache = {}
        preds, gold = set(), set()
        for doc_id in self.splits[split]:
            example = self.examples[doc_id]
            logits = self._candidate_logits(example, candidates, relation_cache)
            choice = candidates[next(iter(decide_labels(logits, SINGLE_LABEL)))]
            s, o = example.doc.pairs[0]
            preds.add((doc_id, s, o, choice))
            gold.add((doc_id, s, o, example.gold_relation))
        return macro_prf(preds, gold, candidates)

    def predictions(self, split: str):
        candidates = self._candidates_for(split)
        relation_cache = {}
        out = []
        for doc_id in self.splits[split]:
            example = self.examples[doc_id]
            logits = self._candidate_logits(example, candidates, relation_cache)
            idx = next(iter(decide_labels(logits, SINGLE_LABEL)))
            s, o = example.doc.pairs[0]
            out.append((doc_id, s, o, candidates[idx], float(logits.data[idx])))
        return out

    def checkpoint_config(self) -> dict:
        return {
            "kind": "zeroshot",
            "layers": self.ultra_params.layers,
            "width": self.ultra_params.width,
            "num_relations": len(self.relation_names),
        }


TASKS = {
    "linkpred": LinkPredictionTask,
    "doclevel": DocLevelTask,
    "zeroshot": ZeroShotTask,
}


def load_task(config: dict):
    kind = cfg.get(config, "task", "kind")
    if kind not in TASKS:
        raise ValueError(f"unknown task kind {kind!r}")
    return TASKS[kind](config)
