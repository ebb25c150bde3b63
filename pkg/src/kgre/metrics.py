"""Evaluation metrics and zero-shot split construction.

Labeled triples are (doc id, subject, object, relation) tuples with set
semantics.  All 0/0 precision/recall ratios are defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def micro_prf(preds, gold, ignore=frozenset()) -> tuple[float, float, float]:
    """Micro precision/recall/F1 over labeled-triple sets.

    `ignore` holds (subject, object, relation) identities already seen in
    training; matching triples are removed from both predictions and gold
    before counting, regardless of document.
    """
    preds = set(preds)
    gold = set(gold)
    if ignore:
        ignore = {tuple(x) for x in ignore}
        preds = {t for t in preds if (t[1], t[2], t[3]) not in ignore}
        gold = {t for t in gold if (t[1], t[2], t[3]) not in ignore}
    tp = len(preds & gold)
    return _prf(tp, len(preds) - tp, len(gold) - tp)


def per_class_prf(preds, gold, classes) -> dict:
    """Per-relation (P, R, F1) restricted to the given classes."""
    preds = set(preds)
    gold = set(gold)
    out = {}
    for c in classes:
        pc = {t for t in preds if t[3] == c}
        gc = {t for t in gold if t[3] == c}
        tp = len(pc & gc)
        out[c] = _prf(tp, len(pc) - tp, len(gc) - tp)
    return out

def macro_prf(preds, gold, classes) -> tuple[float, float, float]:
    """Unweighted mean of per-class P/R/F1 over classes that appear.

    Classes absent from both predictions and gold are excluded from the
    mean; if none appear the result is (0, 0, 0).
    """
    preds = set(preds)
    gold = set(gold)
    scores = []
    for c in classes:
        pc = {t for t in preds if t[3] == c}
        gc = {t for t in gold if t[3] == c}
        if not pc and not gc:
            continue
        tp = len(pc & gc)
        scores.append(_prf(tp, len(pc) - tp, len(gc) - tp))
    if not scores:
        return 0.0, 0.0, 0.0
    arr = np.asarray(scores)
    means = arr.mean(axis=0)
    return float(means[0]), float(means[1]), float(means[2])


def macro_f1(preds, gold, classes) -> float:
    return macro_prf(preds, gold, classes)[2]


@dataclass(frozen=True)
class ZeroShotSplit:
    train_relations: tuple
    test_relations: tuple
    train_examples: tuple
    eval_examples: tuple


def zero_shot_splits(relations, examples, m: int, resamples: int = 5, seed: int = 0):
    """Resampled train/test relation splits for zero-shot evaluation.

    `relations` lists the dataset's relation ids; `examples` is a sequence
    of (example id, gold relation).  Each resample draws `m` test relations
    uniformly with a sub-seed derived from (seed, resample index); examples
    whose gold relation is held out go to evaluation.
    """
    relations = list(relations)
    if m >= len(relations):
        raise ValueError(f"m={m} must be smaller than the relation count {len(relations)}")
    splits = []
    for k in range(resamples):
        rng = np.random.default_rng([seed, k])
        test = set(np.asarray(relations, dtype=object)[
            rng.choice(len(relations), size=m, replace=False)
        ].tolist())
        train = tuple(r for r in relations if r not in test)
        test_t = tuple(r for r in relations if r in test)
        train_ex = tuple(e for e in examples if e[1] not in test)
        eval_ex = tuple(e for e in examples if e[1] in test)
        splits.append(ZeroShotSplit(train, test_t, train_ex, eval_ex))
    return splits


def write_predictions(path, preds) -> None:
    """Predictions file: tab-separated doc id, subject, object, relation, score."""
    with open(path, "w", encoding="utf-8") as handle:
        for doc, subj, obj, rel, score in preds:
            handle.write(f"{doc}\t{subj}\t{obj}\t{rel}\t{score:.10g}\n")


def read_predictions(path):
    out = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            doc, subj, obj, rel, score = line.split("\t")
            out.append((doc, subj, obj, rel, float(score)))
    return out


def format_results(values: dict) -> str:
    """Human-readable table plus machine-readable key=value lines."""
    width = max(len(k) for k in values) if values else 0
    lines = [f"{k.ljust(width)}  {v:.6f}" for k, v in values.items()]
    lines.append("")
    lines.extend(f"{k}={v:.10g}" for k, v in values.items())
    return "\n".join(lines)
