"""Minimal dense-tensor engine with reverse-mode differentiation.

Kernels are plain numpy under the hood.  Every primitive computes its
forward value eagerly and, when a :class:`Tape` is active and any input
requires gradients, registers a backward rule on that tape.  Calling a
primitive with no active tape is plain (inference-mode) numpy.

All buffers are float64.  That keeps the finite-difference verification
in :func:`check_gradients` meaningful and makes repeated runs bitwise
reproducible on one machine.
"""

from __future__ import annotations

import threading

import numpy as np

_TLS = threading.local()


def _active_tape():
    return getattr(_TLS, "tape", None)


class Tensor:
    """A dense float64 array plus a requires-gradient flag.

    ``grad`` is populated by :func:`run_backward`; it is overwritten, not
    accumulated, across backward runs.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.requires_grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def parameter(data, rng=None, scale=None) -> Tensor:
    """A requires-gradient tensor; `data` may be a shape when rng is given."""
    if rng is not None:
        data = rng.standard_normal(data) * (1.0 if scale is None else scale)
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of executed primitives, used as a context manager.

    Records are appended in execution (topological) order; the backward
    sweep visits each exactly once, in reverse.  One tape per training
    step; tapes are thread-local and must not be shared across threads.
    """

    def __init__(self):
        self.records = []
        self._prev = None

    def __enter__(self):
        self._prev = _active_tape()
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _TLS.tape = self._prev
        return False

    def __len__(self):
        return len(self.records)


def _emit(out_data, inputs, backward) -> Tensor:
    """Wrap a forward result, registering `backward` if a tape is live."""
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, inputs, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / shape primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _emit(a.data + float(c), (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2D/1D operand combinations, numpy semantics."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError(f"matmul supports 1D/2D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.ndim == 1 and b.ndim == 2:
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return _emit(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.shape}")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def concat(parts) -> Tensor:
    """Concatenate 1D tensors."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat of zero tensors")
    for p in parts:
        if p.ndim != 1:
            raise ValueError(f"concat expects vectors, got shape {p.shape}")
    sizes = [p.size for p in parts]
    out = np.concatenate([p.data for p in parts])
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _emit(out, tuple(parts), backward)


def concat_rows(parts) -> Tensor:
    """Stack matrices with equal width along axis 0."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat_rows of zero tensors")
    width = parts[0].shape[-1]
    for p in parts:
        if p.ndim != 2 or p.shape[1] != width:
            raise ValueError(f"concat_rows width mismatch: {[q.shape for q in parts]}")
    counts = [p.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)
    bounds = np.cumsum([0] + counts)

    def backward(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _emit(out, tuple(parts), backward)


def stack_rows(vectors) -> Tensor:
    """Stack equal-length vectors into a matrix, one row each."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("stack_rows of zero vectors")
    d = vectors[0].size
    for v in vectors:
        if v.ndim != 1 or v.size != d:
            raise ValueError("stack_rows expects equal-length vectors")
    out = np.stack([v.data for v in vectors])

    def backward(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _emit(out, tuple(vectors), backward)


def row_normalize(a: Tensor) -> Tensor:
    """Divide each row by its sum.  Rows must have non-zero sums."""
    if a.ndim == 1:
        s = a.data.sum()
        out = a.data / s
        return _emit(out, (a,), lambda g: ((g - np.dot(g, out)) / s,))
    s = a.data.sum(axis=1, keepdims=True)
    out = a.data / s

    def backward(g):
        return ((g - (g * out).sum(axis=1, keepdims=True)) / s,)

    return _emit(out, (a,), backward)


def gather(a: Tensor, index) -> Tensor:
    """Select elements of a vector (1D index)."""
    index = np.asarray(index, dtype=np.intp)
    if a.ndim != 1:
        raise ValueError(f"gather expects a vector, got shape {a.shape}")
    out = a.data[index]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _emit(out, (a,), backward)


def gather_rows(a: Tensor, index) -> Tensor:
    """Select rows of a matrix."""
    index = np.asarray(index, dtype=np.intp)
    if a.ndim != 2:
        raise ValueError(f"gather_rows expects a matrix, got shape {a.shape}")
    out = a.data[index]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _emit(out, (a,), backward)


def row(a: Tensor, i: int) -> Tensor:
    """One row of a matrix, as a vector."""
    if a.ndim != 2:
        raise ValueError(f"row expects a matrix, got shape {a.shape}")
    if not 0 <= i < a.shape[0]:
        raise ValueError(f"row {i} outside [0, {a.shape[0]})")

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[i] = g
        return (ga,)

    return _emit(a.data[i].copy(), (a,), backward)


def scatter_add(values: Tensor, index, num_rows: int) -> Tensor:
    """Sum rows of `values` into `num_rows` destination rows."""
    index = np.asarray(index, dtype=np.intp)
    if values.ndim != 2:
        raise ValueError(f"scatter_add expects a matrix, got shape {values.shape}")
    if index.shape != (values.shape[0],):
        raise ValueError("scatter_add index must have one entry per row")
    out = np.zeros((num_rows, values.shape[1]))
    np.add.at(out, index, values.data)
    return _emit(out, (values,), lambda g: (g[index],))


def expand_row(vec: Tensor, num_rows: int, row: int) -> Tensor:
    """An all-zero matrix with `vec` placed at one row."""
    if vec.ndim != 1:
        raise ValueError(f"expand_row expects a vector, got shape {vec.shape}")
    if not 0 <= row < num_rows:
        raise ValueError(f"row {row} outside [0, {num_rows})")
    out = np.zeros((num_rows, vec.size))
    out[row] = vec.data
    return _emit(out, (vec,), lambda g: (g[row],))


def sum_all(a: Tensor) -> Tensor:
    return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    return _emit(
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, a.shape).copy(),),
    )


# ---------------------------------------------------------------------------
# pooling / scoring kernels
# ---------------------------------------------------------------------------


def logsumexp_pool(vectors) -> Tensor:
    """Componentwise log-sum-exp over a non-empty set of equal-length vectors.

    Accepts a list of 1D tensors or a single (k, d) matrix tensor; computed
    with a max shift for stability.
    """
    if isinstance(vectors, Tensor):
        mat = vectors
        if mat.ndim != 2 or mat.shape[0] == 0:
            raise ValueError("logsumexp_pool needs a non-empty (k, d) matrix")
    else:
        vectors = list(vectors)
        if not vectors:
            raise ValueError("logsumexp_pool of an empty set")
        mat = stack_rows(vectors)
    shift = mat.data.max(axis=0)
    expd = np.exp(mat.data - shift)
    total = expd.sum(axis=0)
    out = shift + np.log(total)

    def backward(g):
        return (g * expd / total,)

    return _emit(out, (mat,), backward)


def pna_aggregate(messages: Tensor, groups, num_groups: int) -> Tensor:
    """Per-group [mean | max | min | std] over message rows.

    `groups` assigns each message row to a destination in [0, num_groups).
    Std is the population standard deviation; groups of one get std 0, and
    groups with no messages aggregate to the zero vector.
    """
    groups = np.asarray(groups, dtype=np.intp)
    if messages.ndim != 2:
        raise ValueError(f"pna_aggregate expects (M, d) messages, got {messages.shape}")
    if groups.shape != (messages.shape[0],):
        raise ValueError("pna_aggregate needs one group id per message")
    if messages.shape[0] and (groups.min() < 0 or groups.max() >= num_groups):
        raise ValueError("group id outside [0, num_groups)")
    m, d = messages.shape
    order = np.argsort(groups, kind="stable")
    sorted_groups = groups[order]
    sorted_msgs = messages.data[order]
    uniq, starts, counts = np.unique(sorted_groups, return_index=True, return_counts=True)

    out = np.zeros((num_groups, 4 * d))
    segments = []
    for gid, start, cnt in zip(uniq, starts, counts):
        block = sorted_msgs[start : start + cnt]
        mean = block.mean(axis=0)
        amax = block.argmax(axis=0)
        amin = block.argmin(axis=0)
        centered = block - mean
        std = np.sqrt((centered * centered).mean(axis=0))
        out[gid, 0:d] = mean
        out[gid, d : 2 * d] = block[amax, np.arange(d)]
        out[gid, 2 * d : 3 * d] = block[amin, np.arange(d)]
        out[gid, 3 * d : 4 * d] = std
        segments.append((gid, start, cnt, centered, std, amax, amin))

    def backward(g):
        gm = np.zeros((m, d))
        cols = np.arange(d)
        for gid, start, cnt, centered, std, amax, amin in segments:
            block_grad = np.broadcast_to(g[gid, 0:d] / cnt, (cnt, d)).copy()
            np.add.at(block_grad, (amax, cols), g[gid, d : 2 * d])
            np.add.at(block_grad, (amin, cols), g[gid, 2 * d : 3 * d])
            nz = std > 0
            if nz.any():
                block_grad[:, nz] += g[gid, 3 * d : 4 * d][nz] * centered[:, nz] / (cnt * std[nz])
            gm[order[start : start + cnt]] = block_grad
        return (gm,)

    return _emit(out, (messages,), backward)


def grouped_bilinear(s: Tensor, o: Tensor, w: Tensor, block_size: int) -> Tensor:
    """Block-diagonal bilinear scores over relation slots.

    `s` and `o` are split into d / block_size blocks; `w` has shape
    (num_blocks, num_outputs, block_size, block_size) and each output r
    scores sum_b s_b^T w[b, r] o_b.  With block_size = d this is the dense
    bilinear form s^T W o per output.
    """
    d = s.size
    if s.ndim != 1 or o.ndim != 1 or o.size != d:
        raise ValueError(f"grouped_bilinear expects equal-length vectors, got {s.shape}, {o.shape}")
    if d % block_size != 0:
        raise ValueError(f"block_size {block_size} does not divide width {d}")
    nb = d // block_size
    if w.ndim != 4 or w.shape[0] != nb or w.shape[2:] != (block_size, block_size):
        raise ValueError(f"weight shape {w.shape} inconsistent with d={d}, k={block_size}")
    sb = s.data.reshape(nb, block_size)
    ob = o.data.reshape(nb, block_size)
    out = np.einsum("bi,brij,bj->r", sb, w.data, ob)

    def backward(g):
        gs = np.einsum("r,brij,bj->bi", g, w.data, ob).reshape(d)
        go = np.einsum("r,brij,bi->bj", g, w.data, sb).reshape(d)
        gw = np.einsum("r,bi,bj->brij", g, sb, ob)
        return gs, go, gw

    return _emit(out, (s, o, w), backward)


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log-softmax of a vector (max shift)."""
    if a.ndim != 1:
        raise ValueError(f"log_softmax expects a vector, got shape {a.shape}")
    shift = a.data - a.data.max()
    lse = np.log(np.exp(shift).sum())
    out = shift - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(),)

    return _emit(out, (a,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """weight @ x + bias for a vector x, or x @ weight^T + bias row-wise."""
    if x.ndim == 1:
        return add(matmul(weight, x), bias)
    return add(matmul(x, transpose(weight)), bias)


# ---------------------------------------------------------------------------
# backward sweep and verification
# ---------------------------------------------------------------------------


def run_backward(tape: Tape, output: Tensor) -> dict:
    """Reverse sweep over `tape` from a scalar `output`.

    Returns {tensor: gradient array} for every requires-gradient tensor
    appearing as a primitive input (zero-filled if the tensor does not
    reach the output), and stores the same arrays on ``tensor.grad``.
    """
    if output.size != 1:
        raise ValueError(f"run_backward needs a scalar output, got shape {output.shape}")
    grads = {id(output): np.ones(output.shape)}
    by_id = {id(output): output}
    for out, inputs, backward in reversed(tape.records):
        g = grads.get(id(out))
        if g is None:
            continue
        contribs = backward(g)
        for t, gt in zip(inputs, contribs):
            if gt is None or not (t.requires_grad or id(t) in grads):
                continue
            key = id(t)
            by_id[key] = t
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = np.array(gt, dtype=np.float64, copy=True)
    result = {}
    seen = set()
    for _, inputs, _ in tape.records:
        for t in inputs:
            if t.requires_grad and id(t) not in seen:
                seen.add(id(t))
                g = grads.get(id(t))
                result[t] = np.zeros(t.shape) if g is None else np.asarray(g).reshape(t.shape)
                t.grad = result[t]
    if output.requires_grad and id(output) not in seen:
        result[output] = grads[id(output)].reshape(output.shape)
        output.grad = result[output]
    return result


def check_gradients(function, inputs, eps: float = 1e-5) -> float:
    """Max relative error between taped gradients and central differences.

    `function` takes the given tensors and returns a scalar tensor; it is
    evaluated once under a fresh tape for the analytic gradients and twice
    per coordinate (no tape) for the numeric ones.  Relative errors use
    denominators clamped at 1e-8.
    """
    inputs = list(inputs)
    with Tape() as tape:
        out = function(*inputs)
    if out.size != 1:
        raise ValueError("check_gradients needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite function value")
    grads = run_backward(tape, out)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = grads.get(t)
        if analytic is None:
            analytic = np.zeros(t.shape)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(function(*inputs).data)
            flat[i] = orig - eps
            lo = float(function(*inputs).data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError("non-finite value during finite differences")
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
