"""Dense float64 tensors with reverse-mode automatic differentiation.

Small by design: enough ops for 1-3 layer MLPs (matmul, broadcast add,
elementwise multiply, sigmoid, relu, softmax, concat, stop-gradient,
reductions) plus fused losses and an Adam optimizer with 1/(1 + decay*t)
learning-rate decay. Everything is float64; the information diagnostics
need stable log-variance arithmetic and these models are tiny.
"""

from __future__ import annotations

import numpy as np

SIGMOID_CLAMP = 1e-7  # probability floor applied before any log


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's shape rule."""


class TrainingDiverged(RuntimeError):
    """A gradient or loss became non-finite."""


class Tensor:
    """A dense array that can participate in gradient taping.

    ``grad`` is lazily allocated by the backward pass and always matches
    ``data``'s shape. Tensors created outside any tape are plain values.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations for one reverse pass.

    Nodes are appended in execution order, so every node's inputs precede
    it; the backward pass visits each node exactly once in reverse.
    Single-threaded: one tape per training context.
    """

    def __init__(self):
        self._nodes = []  # (out, inputs, backward_fn)

    def __len__(self):
        return len(self._nodes)

    def record(self, out, inputs, backward_fn):
        self._nodes.append((out, inputs, backward_fn))

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into the grad of every leaf tensor.

        ``loss`` must be a scalar recorded on this tape. Gradients stop at
        stop_gradient boundaries (those outputs are ordinary leaves here).
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ShapeError("backward requires a scalar loss tensor")
        grads = {id(loss): np.ones_like(loss.data)}
        consumed = False
        for out, inputs, backward_fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            if out is loss:
                consumed = True
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None:
                    continue
                gi = _unbroadcast(gi, inp.data.shape)
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.requires_grad:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
        if not consumed:
            raise ShapeError("loss tensor was not recorded on this tape")


def backward(tape, loss):
    tape.backward(loss)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _record(tape, out, inputs, backward_fn):
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a, b, tape=None):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(tape, out, (a, b), bwd)


def add(a, b, tape=None):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.data.shape} with {b.data.shape}")

    def bwd(g):
        return g, g

    return _record(tape, out, (a, b), bwd)


def sub(a, b, tape=None):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.data.shape} with {b.data.shape}")

    def bwd(g):
        return g, -g

    return _record(tape, out, (a, b), bwd)


def mul(a, b, tape=None):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.data.shape} with {b.data.shape}")

    def bwd(g):
        return g * b.data, g * a.data

    return _record(tape, out, (a, b), bwd)


def scale(a, c, tape=None):
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return _record(tape, out, (a,), bwd)


def sigmoid(a, tape=None):
    a = _as_tensor(a)
    # split by sign to avoid overflow in exp
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(out_data)

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _record(tape, out, (a,), bwd)


def relu(a, tape=None):
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _record(tape, out, (a,), bwd)


def softmax(a, tape=None):
    """Row-wise softmax with max-subtraction for stability."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"softmax expects a 2-d tensor, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _record(tape, out, (a,), bwd)


def concat(tensors, axis=1, tape=None):
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        shapes = [t.data.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(tape, out, tuple(tensors), bwd)


def stop_gradient(a):
    """Detach ``a`` from upstream history; value is shared, gradient is cut."""
    return Tensor(a.data)


def tsum(a, tape=None):
    a = _as_tensor(a)
    out = Tensor(a.data.sum())

    def bwd(g):
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record(tape, out, (a,), bwd)


def tmean(a, tape=None):
    a = _as_tensor(a)
    out = Tensor(a.data.mean())
    n = a.data.size

    def bwd(g):
        return (np.broadcast_to(g / n, a.data.shape).copy(),)

    return _record(tape, out, (a,), bwd)


# ---------------------------------------------------------------------------
# losses


def _target_indices(target, n_rows, n_classes):
    """Accept class-index vectors or one-hot matrices; return index array."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target)
    if t.ndim == 2:
        if t.shape != (n_rows, n_classes):
            raise ShapeError(f"one-hot target shape {t.shape} does not match "
                             f"predictions ({n_rows}, {n_classes})")
        return t.argmax(axis=1)
    idx = t.astype(np.int64).reshape(-1)
    if idx.shape[0] != n_rows:
        raise ShapeError(f"target length {idx.shape[0]} does not match batch {n_rows}")
    if idx.min() < 0 or idx.max() >= n_classes:
        raise ValueError(f"class index out of range [0, {n_classes})")
    return idx


def cross_entropy(probs, target, tape=None):
    """Mean negative log-likelihood of ``target`` under probability rows.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the log so the
    loss stays finite during adversarial phases.
    """
    probs = _as_tensor(probs)
    if probs.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2-d probabilities, got {probs.data.shape}")
    n, c = probs.data.shape
    idx = _target_indices(target, n, c)
    p = np.clip(probs.data[np.arange(n), idx], SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)
    out = Tensor(-np.log(p).mean())
    inside = (probs.data[np.arange(n), idx] > SIGMOID_CLAMP) & \
             (probs.data[np.arange(n), idx] < 1.0 - SIGMOID_CLAMP)

    def bwd(g):
        gp = np.zeros_like(probs.data)
        gp[np.arange(n), idx] = -g * inside / (p * n)
        return (gp,)

    return _record(tape, out, (probs,), bwd)


def cross_entropy_logits(logits, target, tape=None):
    """Fused softmax + cross-entropy via log-sum-exp; mean over the batch."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects 2-d logits, got {logits.data.shape}")
    n, c = logits.data.shape
    idx = _target_indices(target, n, c)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    out = Tensor((lse - shifted[np.arange(n), idx]).mean())
    p = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)

    def bwd(g):
        gl = p.copy()
        gl[np.arange(n), idx] -= 1.0
        return (g * gl / n,)

    return _record(tape, out, (logits,), bwd)


def mse(prediction, target, tape=None):
    """Mean squared error over all elements."""
    prediction, target = _as_tensor(prediction), _as_tensor(target)
    if prediction.data.shape != target.data.shape:
        raise ShapeError(f"mse: shapes {prediction.data.shape} and "
                         f"{target.data.shape} differ")
    diff = prediction.data - target.data
    out = Tensor((diff * diff).mean())
    n = diff.size

    def bwd(g):
        gd = g * 2.0 * diff / n
        return gd, -gd

    return _record(tape, out, (prediction, target), bwd)


# registry used by gradient-check suites
DIFFERENTIABLE_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "sigmoid": sigmoid,
    "relu": relu,
    "softmax": softmax,
    "concat": concat,
    "sum": tsum,
    "mean": tmean,
    "cross_entropy": cross_entropy,
    "cross_entropy_logits": cross_entropy_logits,
    "mse": mse,
}


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam for one named parameter set, with decayed learning rate.

    The effective rate for update ``t`` (counting completed updates) is
    ``learning_rate / (1 + decay * t)``. Moment buffers match parameter
    shapes; ``step`` counts completed updates.
    """

    def __init__(self, named_params, learning_rate=1e-4, decay=1e-4,
                 beta1=0.9, beta2=0.999, eps_hat=1e-8):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.learning_rate = learning_rate
        self.decay = decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_hat = eps_hat
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def effective_learning_rate(self, t=None):
        t = self.step_count if t is None else t
        return self.learning_rate / (1.0 + self.decay * t)

    def step(self):
        """Apply one Adam update in place from each parameter's grad."""
        lr = self.effective_learning_rate()
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p, m, v in zip(self.names, self.params,
                                 self.first_moment, self.second_moment):
            g = p.grad
            if g is None:
                g = 0.0
            elif not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient in parameter block '{name}'")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps_hat)
        self.step_count += 1

    def zero_grads(self):
        for p in self.params:
            p.grad = None
