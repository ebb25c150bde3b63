"""Finite-difference verification battery for kernels and composite heads.

Each check builds a small random instance, reduces the op under test to a
scalar through a fixed random weighting, and compares taped gradients with
central differences.  The battery is shared by the ``gradcheck`` CLI
subcommand and the verification test suite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, check_gradients
from .nbf import NbfParams, graph_relation_logits, nbf_forward
from .pipeline import cross_entropy_loss, hinge_abl_loss
from .sampling import Subgraph
from .text import TextHeadParams, mc_zero_shot_logits, supervised_pair_logits
from .text import EncoderOutput
from .ultra import RelationGraph, UltraParams, ultra_logits


def _weighted_sum(out: Tensor, rng) -> Tensor:
    w = Tensor(rng.standard_normal(out.shape))
    return ad.sum_all(ad.mul(out, w))


def _p(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def kernel_checks(seed: int = 0):
    """(name, closure, inputs) triples covering every differentiable kernel."""
    rng = np.random.default_rng([seed, 41])
    checks = []

    a, b = _p(rng, 5, 3), _p(rng, 5, 3)
    checks.append(("add", lambda x, y: _weighted_sum(ad.add(x, y), rng), [a, b]))
    checks.append(("sub", lambda x, y: _weighted_sum(ad.sub(x, y), rng), [_p(rng, 4), _p(rng, 4)]))
    checks.append(("mul", lambda x, y: _weighted_sum(ad.mul(x, y), rng), [_p(rng, 5, 3), _p(rng, 5, 3)]))
    checks.append((
        "add_broadcast",
        lambda x, y: _weighted_sum(ad.add(x, y), rng),
        [_p(rng, 4, 3), _p(rng, 3)],
    ))
    checks.append(("neg", lambda x: _weighted_sum(ad.neg(x), rng), [_p(rng, 6)]))
    checks.append((
        "matmul_mm",
        lambda x, y: _weighted_sum(ad.matmul(x, y), rng),
        [_p(rng, 4, 3), _p(rng, 3, 5)],
    ))
    checks.append((
        "matmul_mv",
        lambda x, y: _weighted_sum(ad.matmul(x, y), rng),
        [_p(rng, 4, 3), _p(rng, 3)],
    ))
    checks.append((
        "matmul_vm",
        lambda x, y: _weighted_sum(ad.matmul(x, y), rng),
        [_p(rng, 4), _p(rng, 4, 3)],
    ))
    checks.append(("transpose", lambda x: _weighted_sum(ad.transpose(x), rng), [_p(rng, 3, 4)]))
    checks.append(("relu", lambda x: _weighted_sum(ad.relu(x), rng), [_p(rng, 5, 3)]))
    checks.append(("tanh", lambda x: _weighted_sum(ad.tanh(x), rng), [_p(rng, 5)]))
    checks.append((
        "concat",
        lambda x, y: _weighted_sum(ad.concat([x, y]), rng),
        [_p(rng, 3), _p(rng, 5)],
    ))
    checks.append((
        "concat_rows",
        lambda x, y: _weighted_sum(ad.concat_rows([x, y]), rng),
        [_p(rng, 2, 3), _p(rng, 4, 3)],
    ))
    checks.append((
        "stack_rows",
        lambda x, y, z: _weighted_sum(ad.stack_rows([x, y, z]), rng),
        [_p(rng, 4), _p(rng, 4), _p(rng, 4)],
    ))
    pos = Tensor(rng.random((3, 4)) + 0.5, requires_grad=True)
    checks.append(("row_normalize", lambda x: _weighted_sum(ad.row_normalize(x), rng), [pos]))
    idx = np.array([2, 0, 2, 1])
    checks.append((
        "gather",
        lambda x: _weighted_sum(ad.gather(x, idx), rng),
        [_p(rng, 4)],
    ))
    checks.append((
        "gather_rows",
        lambda x: _weighted_sum(ad.gather_rows(x, idx), rng),
        [_p(rng, 3, 5)],
    ))
    checks.append((
        "row",
        lambda x: _weighted_sum(ad.row(x, 1), rng),
        [_p(rng, 3, 5)],
    ))
    groups = np.array([0, 2, 0, 1, 2, 2])
    checks.append((
        "scatter_add",
        lambda x: _weighted_sum(ad.scatter_add(x, groups, 4), rng),
        [_p(rng, 6, 3)],
    ))
    checks.append((
        "expand_row",
        lambda x: _weighted_sum(ad.expand_row(x, 5, 2), rng),
        [_p(rng, 3)],
    ))
    checks.append((
        "logsumexp_pool",
        lambda x, y, z: _weighted_sum(ad.logsumexp_pool([x, y, z]), rng),
        [_p(rng, 4), _p(rng, 4), _p(rng, 4)],
    ))
    checks.append((
        "pna_aggregate",
        lambda x: _weighted_sum(ad.pna_aggregate(x, groups, 4), rng),
        [_p(rng, 6, 3)],
    ))
    w = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
    checks.append((
        "grouped_bilinear",
        lambda s, o, ww: _weighted_sum(ad.grouped_bilinear(s, o, ww, 2), rng),
        [_p(rng, 4), _p(rng, 4), w],
    ))
    checks.append(("log_softmax", lambda x: _weighted_sum(ad.log_softmax(x), rng), [_p(rng, 5)]))
    checks.append(("sum_all", lambda x: ad.sum_all(x), [_p(rng, 4, 2)]))
    checks.append(("mean_all", lambda x: ad.mean_all(x), [_p(rng, 7)]))
    return checks


def _toy_subgraph(rng, nodes=6, extra_isolated=0) -> Subgraph:
    edges = set()
    num_base = 3
    for _ in range(nodes * 2):
        u, v = rng.integers(0, nodes, size=2)
        if u == v:
            continue
        r = int(rng.integers(0, num_base))
        edges.add((int(u), r, int(v)))
        edges.add((int(v), r + num_base, int(u)))
    total = nodes + extra_isolated
    return Subgraph(
        nodes=tuple(range(total)),
        edges=tuple(sorted(edges)),
        anchors=(0, 1),
        num_base_relations=num_base,
        seed=0,
    )


def composite_checks(seed: int = 0):
    """Gradient closures for the four trainable heads."""
    rng = np.random.default_rng([seed, 43])
    checks = []

    # supervised text head through the hinge loss
    text_params = TextHeadParams.create(width=4, num_outputs=3, block_size=2,
                                        mc_hidden=3, seed=seed)
    h_s, h_o, c = rng.standard_normal((3, 4))

    def text_head(ws, bs, wo, bo, wb):
        params = TextHeadParams(ws, bs, wo, bo, wb, 2,
                                text_params.w1, text_params.b1,
                                text_params.w2, text_params.b2)
        logits = supervised_pair_logits(h_s, h_o, c, params)
        return hinge_abl_loss(logits, {1})

    checks.append((
        "text_supervised_head",
        text_head,
        [text_params.w_subject, text_params.b_subject, text_params.w_object,
         text_params.b_object, text_params.bilinear],
    ))

    # multiple-choice head through cross-entropy
    encodings = [
        EncoderOutput(rng.standard_normal((3, 4)), np.abs(rng.standard_normal((3, 3))), 0)
        for _ in range(3)
    ]

    def mc_head(w1, b1, w2, b2):
        params = TextHeadParams(text_params.w_subject, text_params.b_subject,
                                text_params.w_object, text_params.b_object,
                                text_params.bilinear, 2, w1, b1, w2, b2)
        logits = mc_zero_shot_logits(encodings, params)
        return cross_entropy_loss(logits, 1)

    checks.append((
        "mc_zero_shot_head",
        mc_head,
        [text_params.w1, text_params.b1, text_params.w2, text_params.b2],
    ))

    # NBF stack plus relation head through the hinge loss
    sub = _toy_subgraph(rng)
    nbf_params = NbfParams.create(num_relation_types=6, num_outputs=3, width=3,
                                  layers=2, hidden=3, seed=seed)

    def nbf_stack(start, rel0, rel1, w0, b0, w1, b1, w3, b3, w4, b4):
        params = NbfParams(start, [rel0, rel1], [w0, w1], [b0, b1],
                           w3, b3, w4, b4, 6, 3)
        states = nbf_forward(sub, 0, params)
        logits = graph_relation_logits(ad.row(states, 1), params)
        return hinge_abl_loss(logits, {2})

    checks.append((
        "nbf_stack",
        nbf_stack,
        [nbf_params.start, nbf_params.relation_embeddings[0],
         nbf_params.relation_embeddings[1], nbf_params.update_weights[0],
         nbf_params.update_biases[0], nbf_params.update_weights[1],
         nbf_params.update_biases[1], nbf_params.w3, nbf_params.b3,
         nbf_params.w4, nbf_params.b4],
    ))

    # ULTRA two-encoder stack through cross-entropy over two candidates
    rg_edges = {(0, 1, 0): 1, (1, 0, 3): 1, (0, 2, 2): 1, (2, 4, 1): 1,
                (3, 5, 0): 1, (4, 3, 3): 1}
    rg = RelationGraph(num_nodes=6, edges=rg_edges)
    ultra_params = UltraParams.create(width=3, layers=2, hidden=3, seed=seed)
    usub = _toy_subgraph(rng)

    def ultra_stack(*tensors):
        names = list(ultra_params.named_parameters())
        params = UltraParams(
            relation_start=tensors[names.index("ultra.relation_start")],
            interaction_embeddings=[tensors[names.index(f"ultra.interactions.{t}")]
                                    for t in range(2)],
            relation_update_weights=[tensors[names.index(f"ultra.rel_update_w.{t}")]
                                     for t in range(2)],
            relation_update_biases=[tensors[names.index(f"ultra.rel_update_b.{t}")]
                                    for t in range(2)],
            entity_update_weights=[tensors[names.index(f"ultra.ent_update_w.{t}")]
                                   for t in range(2)],
            entity_update_biases=[tensors[names.index(f"ultra.ent_update_b.{t}")]
                                  for t in range(2)],
            w5=tensors[names.index("ultra.w5")],
            b5=tensors[names.index("ultra.b5")],
            w6=tensors[names.index("ultra.w6")],
            b6=tensors[names.index("ultra.b6")],
        )
        logits = ultra_logits(usub, 0, 1, [0, 2], rg, params)
        return cross_entropy_loss(logits, 0)

    checks.append((
        "ultra_stack",
        ultra_stack,
        list(ultra_params.named_parameters().values()),
    ))
    return checks


def run_all(seed: int = 0, eps: float = 1e-5):
    """Run every kernel and composite check; returns [(name, max rel err)]."""
    results = []
    for name, fn, inputs in kernel_checks(seed) + composite_checks(seed):
        results.append((name, check_gradients(fn, inputs, eps)))
    return results
