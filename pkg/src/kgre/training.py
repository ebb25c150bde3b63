"""Mini-batch training loop with early stopping on validation F1.

Models plug in through a small protocol: ``parameter_groups()`` returns
{"text": {...}, "graph": {...}} name->tensor dicts (either may be empty),
``batch_loss(examples)`` builds a scalar loss on the active tape, and
``evaluate(split)`` returns (precision, recall, f1).  The optimizer applies
decoupled weight decay with adaptive moments, one learning rate per group.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, run_backward

DEFAULT_TEXT_LR = 3e-5
DEFAULT_GRAPH_LR = 1e-4


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr_text: float = DEFAULT_TEXT_LR
    lr_graph: float = DEFAULT_GRAPH_LR
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    loss: str = "hinge_abl"
    alpha: float = 1.0
    beta: float = 1.0
    weight_decay: float = 0.0
    stop_when_perfect: bool = False
    post_predict: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.lr_text <= 0 or self.lr_graph <= 0:
            raise ValueError("learning rates must be positive")


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        # groups: list of (params dict name->Tensor, learning rate)
        self.groups = [(dict(params), float(lr)) for params, lr in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.moments = {}
        for params, _ in self.groups:
            for name, tensor in params.items():
                self.moments[name] = (np.zeros_like(tensor.data), np.zeros_like(tensor.data))

    def step(self, grads: dict) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1**t
        bias2 = 1.0 - self.beta2**t
        for params, lr in self.groups:
            for name, tensor in params.items():
                g = grads.get(tensor)
                if g is None:
                    continue
                m, v = self.moments[name]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
                if self.weight_decay:
                    tensor.data -= lr * self.weight_decay * tensor.data
                tensor.data -= lr * update


@dataclass
class TrainResult:
    best_epoch: int
    best_f1: float
    best_params: dict
    history: list
    log_lines: list = field(default_factory=list)

    def metric_log(self) -> str:
        return "".join(self.log_lines)


def _snapshot(model) -> dict:
    snap = {}
    for params, _ in _group_list(model):
        for name, tensor in params.items():
            snap[name] = tensor.data.copy()
    return snap


def _restore(model, snap: dict) -> None:
    for params, _ in _group_list(model):
        for name, tensor in params.items():
            tensor.data = snap[name].copy()


def _group_list(model, config=None):
    groups = model.parameter_groups()
    lr_text = config.lr_text if config else 0.0
    lr_graph = config.lr_graph if config else 0.0
    out = []
    if groups.get("text"):
        out.append((groups["text"], lr_text))
    if groups.get("graph"):
        out.append((groups["graph"], lr_graph))
    return out


def train(model, train_examples, val_split, config: TrainConfig, log_path=None) -> TrainResult:
    """Seeded mini-batch training with patience-based early stopping.

    Shuffles `train_examples` each epoch with a generator derived from
    (config.seed, epoch), evaluates `val_split` after every epoch, and
    keeps the parameter snapshot of the best validation F1 (strict
    improvement).  The metric log holds one tab-separated line per epoch:
    epoch, train loss, val P, val R, val F1.
    """
    optimizer = AdamW(
        _group_list(model, config),
        weight_decay=config.weight_decay,
    )
    examples = list(train_examples)
    best_f1 = -1.0
    best_epoch = 0
    best = _snapshot(model)
    since_improvement = 0
    history = []
    log_lines = []
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, 101, epoch])
        order = rng.permutation(len(examples))
        losses = []
        for start in range(0, len(examples), config.batch_size):
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            with Tape() as tape:
                loss = model.batch_loss(batch)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            grads = run_backward(tape, loss)
            optimizer.step(grads)
            losses.append(value)
        train_loss = float(np.mean(losses)) if losses else 0.0
        p, r, f1 = model.evaluate(val_split)
        history.append((epoch, train_loss, p, r, f1))
        log_lines.append(f"{epoch}\t{train_loss:.10g}\t{p:.10g}\t{r:.10g}\t{f1:.10g}\n")
        if f1 > best_f1:
            best_f1 = f1
            best_epoch = epoch
            best = _snapshot(model)
            since_improvement = 0
        else:
            since_improvement += 1
        if config.stop_when_perfect and f1 >= 1.0:
            break
        if since_improvement >= config.patience:
            break
    _restore(model, best)
    result = TrainResult(best_epoch, best_f1, best, history, log_lines)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as handle:
            handle.write(result.metric_log())
    return result
