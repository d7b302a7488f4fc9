"""Pure-Python (numpy) kernel backend.

Same call surface as the compiled backend in ``_ckernels``; used as the
fallback when the extension is unavailable and as the reference
implementation in backend-agreement tests.
"""

import numpy as np

NAME = "python"


def matmul(a, b):
    """a @ b for row-major float64 matrices."""
    return a @ b


def matmul_nt(a, b):
    """a @ b.T"""
    return a @ b.T


def matmul_tn(a, b):
    """a.T @ b"""
    return a.T @ b


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, g):
    """Upstream gradient masked where the forward input was <= 0."""
    return np.where(x > 0.0, g, 0.0)


def softmax(logits):
    """Row-wise softmax, shifted by the row max for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean negative log-softmax of the target entries.

    Returns ``(loss, grad)`` where ``grad = (softmax - onehot) / batch``.
    """
    m = logits.shape[0]
    rows = np.arange(m)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1)
    loss = float(np.mean(np.log(z) - shifted[rows, targets]))
    grad = e / z[:, None]
    grad[rows, targets] -= 1.0
    grad /= m
    return loss, grad


def sgd_momentum_update(w, g, buf, lr, momentum, weight_decay):
    """In-place SGD step: buf <- momentum*buf + (g + wd*w); w <- w - lr*buf."""
    eff = g + weight_decay * w if weight_decay != 0.0 else g
    buf *= momentum
    buf += eff
    w -= lr * buf


def adam_update(w, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """In-place Adam step with bias correction; t is the 1-based step index."""
    eff = g + weight_decay * w if weight_decay != 0.0 else g
    m *= beta1
    m += (1.0 - beta1) * eff
    v *= beta2
    v += (1.0 - beta2) * eff * eff
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    w -= lr * mhat / (np.sqrt(vhat) + eps)
