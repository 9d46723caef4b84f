"""
Dense Numeric Kernel for timbre-lab

Matrices, activations, losses and their analytic gradients. Every other
component builds on these functions; all of them are pure.

Matrices are float64 numpy arrays of shape (rows, cols). Probability vectors
are 1-D float64 arrays whose entries sum to one.
"""
import numpy as np

from timbre_lab.errors import InvalidArgumentError

# Probability floor inside every log term
PROB_FLOOR = 1e-12


def as_matrix(m, name="matrix"):
    """
    Coerce input to a finite 2-D float64 array.

    Args:
        m: Array-like or object with a ``values`` attribute
        name (str): Used in error messages

    Returns:
        np.ndarray: 2-D float64 array

    Raises:
        InvalidArgumentError: If the input is not 2-D or holds NaN/Inf
    """
    values = getattr(m, "values", m)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


def check_prob_vector(p, name="p"):
    """
    Validate a probability vector.

    Raises:
        InvalidArgumentError: If p is not 1-D, shorter than 2, out of [0, 1]
            or does not sum to one within 1e-6
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise InvalidArgumentError(f"{name} must be a vector of length >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidArgumentError(f"{name} has entries outside [0, 1]")
    if abs(arr.sum() - 1.0) > 1e-6:
        raise InvalidArgumentError(f"{name} sums to {arr.sum():.8f}, expected 1")
    return arr


def softmax(logits):
    """
    Numerically stable softmax of a logit vector.

    Args:
        logits: Finite real vector, length >= 2

    Returns:
        np.ndarray: Probability vector with the same argmax as ``logits``
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise InvalidArgumentError(f"softmax needs a vector of length >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("softmax logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits):
    """Row-wise softmax of a (batch, classes) logit matrix."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p, dprobs):
    """
    Chain a gradient w.r.t. probabilities back through softmax.

    Works row-wise for batched inputs: dlogits = p * (g - <p, g>).
    """
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(dprobs, dtype=np.float64)
    return p * (g - np.sum(p * g, axis=-1, keepdims=True))


def cross_entropy(p, target):
    """
    Cross-entropy of a posterior against a target label.

    Args:
        p: Probability vector
        target (int): Label index

    Returns:
        float: -ln(p[target] + 1e-12), non-negative
    """
    arr = np.asarray(p, dtype=np.float64)
    _check_target(target, arr.shape[-1])
    return float(-np.log(arr[..., target] + PROB_FLOOR))


def cross_entropy_grad(p, target):
    """Gradient of ``cross_entropy`` w.r.t. the probability vector."""
    arr = np.asarray(p, dtype=np.float64)
    _check_target(target, arr.shape[-1])
    grad = np.zeros_like(arr)
    grad[..., target] = -1.0 / (arr[..., target] + PROB_FLOOR)
    return grad


def _check_target(target, n):
    if isinstance(target, (bool, np.bool_)) or not isinstance(target, (int, np.integer)):
        raise InvalidArgumentError(f"target must be an integer label, got {target!r}")
    if not 0 <= int(target) < n:
        raise InvalidArgumentError(f"target {target} out of range for {n} classes")


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidArgumentError(f"length mismatch: {p.shape} vs {q.shape}")
    return p, q


def kl_divergence(p, q):
    """
    KL(p || q) with the probability floor inside the log.

    Batched inputs (rows) return one value per row.
    """
    p, q = _check_pair(p, q)
    terms = p * (np.log(p + PROB_FLOOR) - np.log(q + PROB_FLOOR))
    out = np.sum(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


def kl_divergence_grads(p, q):
    """
    Exact gradients of the floored KL(p || q).

    Returns:
        tuple: (d/dp, d/dq), same shapes as the inputs
    """
    p, q = _check_pair(p, q)
    dp = np.log(p + PROB_FLOOR) - np.log(q + PROB_FLOOR) + p / (p + PROB_FLOOR)
    dq = -p / (q + PROB_FLOOR)
    return dp, dq


def _check_same_shape(a, b):
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def l1_loss(a, b):
    """Mean absolute elementwise difference of two same-shaped matrices."""
    a, b = _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_loss_grad(a, b):
    """Gradient of ``l1_loss`` w.r.t. ``a`` (sign(a - b) / size)."""
    a, b = _check_same_shape(a, b)
    return np.sign(a - b) / a.size


def clip_linf(m, eps):
    """
    Clamp every entry into [-eps, +eps].

    Raises:
        InvalidArgumentError: If eps is negative
    """
    if eps < 0:
        raise InvalidArgumentError(f"eps must be >= 0, got {eps}")
    return np.clip(np.asarray(m, dtype=np.float64), -eps, eps)


def sign(m):
    """Elementwise sign with sign(0) = 0."""
    return np.sign(np.asarray(m, dtype=np.float64))


def tanh(x):
    return np.tanh(x)


def tanh_backward(activated, dout):
    """Gradient through tanh given its output."""
    return dout * (1.0 - activated * activated)


def finite_difference_grad(fn, x, step=1e-4):
    """
    Central finite-difference gradient of a scalar function.

    Args:
        fn: Callable mapping an array shaped like ``x`` to a float
        x: Point of evaluation (not modified)
        step (float): Perturbation size

    Returns:
        np.ndarray: Numerical gradient, same shape as ``x``
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = fn(x)
        flat[i] = original - step
        lower = fn(x)
        flat[i] = original
        gflat[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(a, b):
    """Norm-wise relative error ||a - b|| / max(||a|| + ||b||, 1e-30)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-30))


def derive_seed(seed, *keys):
    """
    Derive a 64-bit sub-seed from a root seed and integer keys.

    Sub-seeds are independent of call order, so per-item work can run in any
    order (or concurrently) and still reproduce.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def make_rng(seed, *keys):
    """numpy Generator seeded from ``derive_seed(seed, *keys)``."""
    return np.random.default_rng(derive_seed(seed, *keys))
