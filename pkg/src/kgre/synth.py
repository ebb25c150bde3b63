"""Seeded synthetic fixtures: desk-scale datasets with planted structure.

Three generators, all deterministic given (kind, sizes, seed):

* linkpred   -- a knowledge graph where two relations are exactly the
  composition of two base relations along entity layers; queries ask for
  the relation of a pair whose direct edges are hidden.
* doclevel   -- documents with random frozen encoder exports whose
  multi-label pair annotations are decided purely by planted two-hop
  patterns between the linked entities, so text carries no label signal.
* zeroshot   -- sentence-level documents where each relation is identified
  by a unique ordered pair of background relation types on a two-hop path;
  two relations are held out for evaluation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .kg import RelationMeta, write_relation_meta
from .text import EncoderOutput, Mention, write_document, write_encoder_export


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(line + "\n")


def _write_config(path, sections: dict):
    lines = []
    for section, values in sections.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        lines.append("")
    _write_lines(path, lines)


def _random_attention(rng, n):
    return rng.dirichlet(np.ones(n), size=n)


# ---------------------------------------------------------------------------
# linkpred
# ---------------------------------------------------------------------------


def generate_linkpred(out_dir, entities: int = 60, relations: int = 6, seed: int = 0) -> dict:
    """Layered graph with two planted compositional relations.

    Entities split into six layers; base relations connect consecutive
    layers (two disjoint chains) and the two derived relations hold exactly
    where the corresponding two-hop path exists.  Derived triples are split
    into train/valid/test; only train triples enter the graph file.
    """
    if entities < 12 or entities % 6 != 0:
        raise ValueError("entities must be a multiple of 6, at least 12")
    if relations != 6:
        raise ValueError("the linkpred fixture plants exactly 6 relations")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 301])
    per_layer = entities // 6
    names = [f"e{i:03d}" for i in range(entities)]
    layers = [names[i * per_layer : (i + 1) * per_layer] for i in range(6)]

    def connect(src_layer, dst_layer, rel):
        edges = []
        for s in src_layer:
            for d in sorted(rng.choice(len(dst_layer), size=rng.integers(1, 4), replace=False)):
                edges.append((s, rel, dst_layer[d]))
        return edges

    base_edges = (
        connect(layers[0], layers[1], "r0")
        + connect(layers[1], layers[2], "r1")
        + connect(layers[3], layers[4], "r2")
        + connect(layers[4], layers[5], "r3")
    )

    def compose(first, second, rel):
        derived = set()
        for s, r, m in base_edges:
            if r != first:
                continue
            for s2, r2, o in base_edges:
                if r2 == second and s2 == m:
                    derived.add((s, rel, o))
        return sorted(derived)

    derived = compose("r0", "r1", "r4") + compose("r2", "r3", "r5")
    order = rng.permutation(len(derived))
    n_train = int(0.6 * len(derived))
    n_valid = int(0.2 * len(derived))
    train = [derived[i] for i in sorted(order[:n_train])]
    valid = [derived[i] for i in sorted(order[n_train : n_train + n_valid])]
    test = [derived[i] for i in sorted(order[n_train + n_valid :])]

    _write_lines(out_dir / "graph.tsv",
                 ["\t".join(t) for t in base_edges + train])
    for name, triples in (("train", train), ("valid", valid), ("test", test)):
        _write_lines(out_dir / f"{name}.tsv", ["\t".join(t) for t in triples])
    write_relation_meta(
        out_dir / "relations.tsv",
        [RelationMeta(f"r{i}", f"relation {i}", f"synthetic relation r{i}") for i in range(6)],
    )
    _write_config(out_dir / "config.cfg", {
        "task": {
            "kind": "linkpred",
            "graph": "graph.tsv",
            "relations": "relations.tsv",
            "train": "train.tsv",
            "valid": "valid.tsv",
            "test": "test.tsv",
        },
        "model": {"width": 32, "layers": 4},
        "train": {
            "batch_size": 8,
            "lr_graph": 0.005,
            "max_epochs": 200,
            "patience": 200,
            "loss": "cross_entropy",
            "seed": seed,
            "stop_when_perfect": True,
        },
    })
    return {"base_edges": len(base_edges), "train": len(train),
            "valid": len(valid), "test": len(test)}


# ---------------------------------------------------------------------------
# doclevel
# ---------------------------------------------------------------------------

DOC_PATTERNS = {"p0": ("q0", "q1"), "p1": ("q2", "q2")}


def generate_doclevel(out_dir, docs: int = 16, entities_per_doc: int = 4,
                      width: int = 32, tokens: int = 40, seed: int = 0) -> dict:
    """Documents whose labels are decided by planted graph patterns only.

    Encoder exports are random and independent of the labels, so the text
    side carries no signal; every gold pair has its pattern path planted
    between the linked nodes (relation p0 = q0 then q1, p1 = q2 twice).
    One entity stays unlinked to exercise isolated-anchor handling.
    """
    if docs < 2 or entities_per_doc < 2:
        raise ValueError("need at least 2 documents and 2 entities per document")
    out_dir = Path(out_dir)
    docs_dir = out_dir / "docs"
    docs_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 302])
    kg_edges = []
    doc_ids = []
    gold_count = 0

    for d in range(docs):
        doc_id = f"d{d:02d}"
        doc_ids.append(doc_id)
        entities = [f"{doc_id}e{i}" for i in range(entities_per_doc)]
        unlinked = entities[-1] if d == docs // 2 else None
        links = {e: (None if e == unlinked else e) for e in entities}

        pairs = [(s, o) for s in entities for o in entities if s != o]
        gold = {}
        mid = 0
        for s, o in pairs:
            if unlinked in (s, o):
                continue
            draw = rng.random()
            rels = set()
            if draw < 0.20:
                rels = {"p0"}
            elif draw < 0.40:
                rels = {"p1"}
            elif draw < 0.50:
                rels = {"p0", "p1"}
            for rel in sorted(rels):
                first, second = DOC_PATTERNS[rel]
                m = f"{doc_id}m{mid}"
                mid += 1
                kg_edges.append((s, first, m))
                kg_edges.append((m, second, o))
            if rels:
                gold[(s, o)] = rels
                gold_count += len(rels)
        # dangling two-hop distractor chains; the tail node prunes away
        for _ in range(2):
            s = entities[rng.integers(0, entities_per_doc - 1)]
            qa, qb = rng.choice(["q0", "q1", "q2"], size=2)
            x = f"{doc_id}x{mid}"
            mid += 1
            kg_edges.append((s, str(qa), x))
            kg_edges.append((x, str(qb), f"{doc_id}y{mid}"))

        two_windows = d < docs // 4
        if two_windows:
            n1 = tokens // 2 + 4
            overlap = 8
            offset2 = n1 - overlap
            n2 = tokens - offset2
            windows = [
                EncoderOutput(rng.standard_normal((n1, width)), _random_attention(rng, n1), 0),
                EncoderOutput(rng.standard_normal((n2, width)), _random_attention(rng, n2),
                              offset2),
            ]
        else:
            windows = [
                EncoderOutput(rng.standard_normal((tokens, width)),
                              _random_attention(rng, tokens), 0),
            ]
        window_files = []
        for wi, window in enumerate(windows):
            fname = f"{doc_id}.w{wi}.eout"
            write_encoder_export(docs_dir / fname, window)
            window_files.append(fname)

        mentions = []
        for i, entity in enumerate(entities):
            count = 2 if rng.random() < 0.5 else 1
            for k in range(count):
                wi = (i + k) % len(windows)
                pos = int(rng.integers(0, windows[wi].num_tokens))
                mentions.append(Mention(entity, wi, pos))

        write_document(
            docs_dir / f"{doc_id}.doc", doc_id, window_files, mentions, links,
            pairs, gold,
        )

    _write_lines(out_dir / "graph.tsv", ["\t".join(t) for t in kg_edges])
    write_relation_meta(
        out_dir / "relations.tsv",
        [RelationMeta("p0", "pattern alpha", "two-hop pattern q0 then q1"),
         RelationMeta("p1", "pattern beta", "two-hop pattern q2 twice")],
    )
    _write_config(out_dir / "config.cfg", {
        "task": {
            "kind": "doclevel",
            "graph": "graph.tsv",
            "relations": "relations.tsv",
            "docs": "docs",
        },
        "model": {"width": 32, "layers": 4, "mode": "multi_label", "block_size": 16},
        "train": {
            "batch_size": 8,
            "lr_text": 3e-05,
            "lr_graph": 0.01,
            "max_epochs": 300,
            "patience": 300,
            "loss": "hinge_abl",
            "seed": seed,
            "stop_when_perfect": True,
        },
    })
    return {"docs": docs, "gold_labels": gold_count, "kg_edges": len(kg_edges)}


# ---------------------------------------------------------------------------
# zeroshot
# ---------------------------------------------------------------------------

ZS_BACKGROUND = ("q0", "q1", "q2")
ZS_TRAIN_SIGNATURES = (("q0", "q1"), ("q1", "q2"), ("q2", "q0"), ("q0", "q0"))
ZS_TEST_SIGNATURES = (("q1", "q0"), ("q2", "q2"))


def generate_zeroshot(out_dir, docs_per_relation: int = 16, width: int = 16,
                      tokens: int = 8, seed: int = 0) -> dict:
    """Relations identified by unique two-hop path signatures; two held out.

    Every document links one subject/object pair whose gold relation zi is
    witnessed by the path subject --ai--> m --bi--> object, with (ai, bi)
    unique per relation.  Held-out signatures reuse background types seen
    during training but in unseen combinations (verified exhaustively).
    Encoder exports (one per document and candidate relation) are random.
    """
    signatures = ZS_TRAIN_SIGNATURES + ZS_TEST_SIGNATURES
    if len(set(signatures)) != len(signatures):
        raise AssertionError("path signatures must be pairwise distinct")
    for sig in ZS_TEST_SIGNATURES:
        if sig in ZS_TRAIN_SIGNATURES:
            raise AssertionError("held-out signature leaked into training")
        if not any(sig[0] == s[0] or sig[0] == s[1] for s in ZS_TRAIN_SIGNATURES):
            raise AssertionError("held-out first hop never seen during training")
        if not any(sig[1] == s[0] or sig[1] == s[1] for s in ZS_TRAIN_SIGNATURES):
            raise AssertionError("held-out second hop never seen during training")

    out_dir = Path(out_dir)
    docs_dir = out_dir / "docs"
    docs_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 303])
    relation_names = [f"z{i}" for i in range(len(signatures))]
    train_relations = relation_names[: len(ZS_TRAIN_SIGNATURES)]
    test_relations = relation_names[len(ZS_TRAIN_SIGNATURES) :]

    kg_edges = []
    doc_meta = []
    for i, (name, (first, second)) in enumerate(zip(relation_names, signatures)):
        for k in range(docs_per_relation):
            doc_id = f"{name}d{k:02d}"
            s, m, o = f"{doc_id}s", f"{doc_id}m", f"{doc_id}o"
            kg_edges.append((s, first, m))
            kg_edges.append((m, second, o))
            kg_edges.append((s, name, o))
            if rng.random() < 0.5:
                qa, qb = rng.choice(ZS_BACKGROUND, size=2)
                x1, x2 = f"{doc_id}x1", f"{doc_id}x2"
                kg_edges.append((s, str(qa), x1))
                kg_edges.append((x1, str(qb), x2))
            doc_meta.append((doc_id, name, s, o))

    for doc_id, gold, s, o in doc_meta:
        mc_files = {}
        for name in relation_names:
            fname = f"{doc_id}.{name}.eout"
            export = EncoderOutput(rng.standard_normal((tokens, width)),
                                   _random_attention(rng, tokens), 0)
            write_encoder_export(docs_dir / fname, export)
            mc_files[name] = fname
        window = EncoderOutput(rng.standard_normal((tokens, width)),
                               _random_attention(rng, tokens), 0)
        wname = f"{doc_id}.w0.eout"
        write_encoder_export(docs_dir / wname, window)
        mentions = [Mention("s", 0, 0), Mention("o", 0, tokens - 1)]
        write_document(
            docs_dir / f"{doc_id}.doc", doc_id, [wname], mentions,
            {"s": s, "o": o}, [("s", "o")], {("s", "o"): {gold}}, mc_files,
        )

    _write_lines(out_dir / "graph.tsv", ["\t".join(t) for t in kg_edges])
    write_relation_meta(
        out_dir / "relations.tsv",
        [RelationMeta(name, f"signature {sig[0]}+{sig[1]}",
                      f"holds where a {sig[0]} edge then a {sig[1]} edge connect the pair")
         for name, sig in zip(relation_names, signatures)],
    )

    train_docs, valid_docs, test_docs = [], [], []
    for doc_id, gold, _, _ in doc_meta:
        if gold in test_relations:
            test_docs.append(doc_id)
        elif doc_id.endswith(("00", "01", "02")):
            valid_docs.append(doc_id)
        else:
            train_docs.append(doc_id)

    _write_config(out_dir / "config.cfg", {
        "task": {
            "kind": "zeroshot",
            "graph": "graph.tsv",
            "relations": "relations.tsv",
            "docs": "docs",
            "train_relations": ",".join(train_relations),
            "test_relations": ",".join(test_relations),
            "train_docs": ",".join(train_docs),
            "valid_docs": ",".join(valid_docs),
            "test_docs": ",".join(test_docs),
        },
        "model": {"width": 16, "layers": 4, "hidden": 16, "mc_hidden": 16},
        "train": {
            "batch_size": 16,
            "lr_text": 3e-05,
            "lr_graph": 0.005,
            "max_epochs": 80,
            "patience": 10,
            "loss": "cross_entropy",
            "seed": seed,
            "alpha": 0.0,
            "beta": 1.0,
            "stop_when_perfect": True,
            "samples_per_relation": 1000,
            "keep_threshold": 0.10,
        },
    })
    return {
        "docs": len(doc_meta),
        "train_docs": len(train_docs),
        "valid_docs": len(valid_docs),
        "test_docs": len(test_docs),
        "kg_edges": len(kg_edges),
    }


GENERATORS = {
    "linkpred": generate_linkpred,
    "doclevel": generate_doclevel,
    "zeroshot": generate_zeroshot,
}
