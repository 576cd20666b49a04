"""Dense float64 primitives with hand-derived reverse-mode gradients.

Every operation the training loss touches comes in a forward/backward pair
whose backward was derived by hand. There is no tape: callers compose the
backward functions explicitly in reverse order, which keeps the gradient
path auditable and the arithmetic deterministic (fixed reduction order,
float64 everywhere).
"""

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError


def as_f64(a):
    return np.asarray(a, dtype=np.float64)


class ParamTensor:
    """A learnable array paired with an accumulated gradient of equal shape."""

    __slots__ = ("values", "grad")

    def __init__(self, values):
        self.values = as_f64(values).copy()
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def check_finite(self, name="parameter"):
        if not np.isfinite(self.values).all():
            raise NonFiniteError(f"{name} contains non-finite values")


def linear(x, weight, bias):
    """y = x @ weight + bias for a vector or a batch of row vectors."""
    x, weight, bias = as_f64(x), as_f64(weight), as_f64(bias)
    if weight.ndim != 2:
        raise ShapeMismatchError(f"linear: weight must be 2-d, got {weight.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError(
            f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}"
        )
    if bias.shape != (weight.shape[1],):
        raise ShapeMismatchError(
            f"linear: bias shape {bias.shape} incompatible with weight shape {weight.shape}"
        )
    return x @ weight + bias


def linear_backward(x, weight, dy):
    """Gradients of y = x @ weight + bias. Returns (dx, dweight, dbias)."""
    dx = dy @ weight.T
    if x.ndim == 1:
        dweight = np.outer(x, dy)
        dbias = dy.copy()
    else:
        dweight = x.T @ dy
        dbias = dy.sum(axis=0)
    return dx, dweight, dbias


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, dy):
    # subgradient 0 at the kink
    return np.where(x > 0.0, dy, 0.0)


def mlp2_forward(x, w1, b1, w2, b2):
    """Two-layer perceptron y = relu(x@w1 + b1) @ w2 + b2.

    Returns (y, cache) where cache feeds mlp2_backward.
    """
    a = linear(x, w1, b1)
    h = relu(a)
    y = linear(h, w2, b2)
    return y, (x, a, h)


def mlp2(x, w1, b1, w2, b2):
    return mlp2_forward(x, w1, b1, w2, b2)[0]


def mlp2_backward(cache, w1, w2, dy):
    """Returns (dx, dw1, db1, dw2, db2)."""
    x, a, h = cache
    dh, dw2, db2 = linear_backward(h, w2, dy)
    da = relu_backward(a, dh)
    dx, dw1, db1 = linear_backward(x, w1, da)
    return dx, dw1, db1, dw2, db2


def softmax_with_temperature(logits, tau):
    """Row-wise softmax(logits / tau), max-subtracted for stability."""
    if tau <= 0.0:
        raise ShapeMismatchError(f"temperature must be positive, got {tau}")
    logits = as_f64(logits)
    scaled = logits / tau
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target, tau=1.0):
    """Negative log likelihood of `target` under `probs` from
    softmax_with_temperature, plus the gradient w.r.t. the raw logits.

    The softmax divided logits by tau, so dloss/dlogits = (p - onehot) / tau.
    """
    probs = as_f64(probs)
    if probs.ndim != 1:
        raise ShapeMismatchError(f"cross_entropy expects a probability vector, got {probs.shape}")
    target = int(target)
    if not 0 <= target < probs.shape[0]:
        raise ShapeMismatchError(
            f"target {target} out of range for {probs.shape[0]} classes"
        )
    loss = -np.log(probs[target])
    dlogits = probs / tau
    dlogits[target] -= 1.0 / tau
    return loss, dlogits


def cross_entropy_mean(probs, targets, tau):
    """Batch-mean cross entropy over probability rows.

    Returns (loss, dlogits) with dlogits = (p - onehot) / (tau * batch).
    """
    probs = as_f64(probs)
    targets = np.asarray(targets, dtype=np.int64)
    if probs.ndim != 2 or targets.shape != (probs.shape[0],):
        raise ShapeMismatchError(
            f"cross_entropy_mean: probs {probs.shape} vs targets {targets.shape}"
        )
    if targets.min() < 0 or targets.max() >= probs.shape[1]:
        raise ShapeMismatchError("cross_entropy_mean: target index out of range")
    batch = probs.shape[0]
    picked = probs[np.arange(batch), targets]
    loss = float(-np.log(picked).mean())
    dlogits = probs / (tau * batch)
    dlogits[np.arange(batch), targets] -= 1.0 / (tau * batch)
    return loss, dlogits


def unit_rows(x, error_kind="degenerate-vector", site="normalize"):
    """L2-normalize the last axis. Returns (y, norms).

    Raises DegenerateVectorError if any row norm is (numerically) zero.
    """
    from .errors import DegenerateVectorError

    x = as_f64(x)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < 1e-30):
        raise DegenerateVectorError(f"{site}: zero vector cannot be normalized", kind=error_kind)
    return x / norms, norms


def unit_rows_backward(y, norms, dy):
    """Gradient of y = x / ||x||: dx = (dy - y * <y, dy>) / ||x||."""
    inner = (y * dy).sum(axis=-1, keepdims=True)
    return (dy - y * inner) / norms


class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {}
        self.v = {}

    def ensure(self, params):
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.values)
                self.v[name] = np.zeros_like(p.values)
            elif self.m[name].shape != p.values.shape:
                raise ShapeMismatchError(
                    f"adam moment for {name} has shape {self.m[name].shape}, "
                    f"parameter has {p.values.shape}"
                )


def adam_step(params, state):
    """One Adam update with bias correction over a dict of ParamTensors."""
    state.ensure(params)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name in sorted(params):
        p = params[name]
        g = p.grad
        if g.shape != p.values.shape:
            raise ShapeMismatchError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.check_finite(name)


def finite_diff_check(loss_fn, params, grads, eps=1e-5):
    """Central-difference check of analytic gradients.

    loss_fn() re-evaluates the scalar loss reading the live arrays in
    `params` (name -> ndarray, perturbed in place and restored). `grads`
    holds the analytic gradients to compare against. Returns the max
    relative error over every element, with a 1e-8 absolute floor in the
    denominator.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ShapeMismatchError(f"eps {eps} outside [1e-7, 1e-3]")
    worst = 0.0
    for name in sorted(params):
        flat = params[name].reshape(-1)
        gflat = as_f64(grads[name]).reshape(-1)
        if flat.shape != gflat.shape:
            raise ShapeMismatchError(f"finite_diff_check: {name} grad shape mismatch")
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError(f"loss non-finite while probing {name}[{i}]")
            numeric = (hi - lo) / (2.0 * eps)
            denom = max(abs(numeric), abs(gflat[i]), 1e-8)
            err = abs(numeric - gflat[i]) / denom
            if err > worst:
                worst = err
    return worst
