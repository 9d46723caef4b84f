"""
Speaker Classifier Model

A small multilayer perceptron over time-pooled mel statistics. The forward
pass is: pool over frames -> fixed standardisation -> tanh hidden layers ->
linear logits -> softmax. Every step has an analytic backward pass so the
attack code can take exact gradients with respect to the input mel.
"""
from dataclasses import dataclass

import numpy as np

from timbre_lab.binio import as_float32_values
from timbre_lab.errors import InvalidArgumentError
from timbre_lab.numkernel import (
    as_matrix,
    cross_entropy_grad,
    make_rng,
    softmax,
    softmax_backward,
    tanh_backward,
)

POOLING_MODES = ("mean", "mean_std")

# Added to the frame variance before the square root
STD_EPS = 1e-6

# Pooled dimensions whose training spread falls below this are left unscaled
MIN_FEATURE_STD = 1e-3


@dataclass
class SpeakerClassifier:
    """
    Parameters of f(.), the map mel -> speaker posterior.

    ``weights[k]`` has shape (fan_in, fan_out); the last layer emits
    ``n_speakers`` logits.
    """
    n_mels: int
    n_speakers: int
    pooling: str
    weights: list
    biases: list
    feature_mean: np.ndarray
    feature_std: np.ndarray

    @property
    def in_dim(self):
        return pooled_dim(self.n_mels, self.pooling)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self):
        """Parameter arrays in optimizer order (all weights, then all biases)."""
        return self.weights + self.biases

    def copy(self):
        return SpeakerClassifier(
            n_mels=self.n_mels,
            n_speakers=self.n_speakers,
            pooling=self.pooling,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            feature_mean=self.feature_mean.copy(),
            feature_std=self.feature_std.copy(),
        )

    def quantize(self):
        """Round every stored array to float32 precision, in place."""
        self.weights = [as_float32_values(w) for w in self.weights]
        self.biases = [as_float32_values(b) for b in self.biases]
        self.feature_mean = as_float32_values(self.feature_mean)
        self.feature_std = as_float32_values(self.feature_std)
        return self


def pooled_dim(n_mels, pooling):
    if pooling not in POOLING_MODES:
        raise InvalidArgumentError(f"Unsupported pooling: {pooling} (use one of {POOLING_MODES})")
    return n_mels if pooling == "mean" else 2 * n_mels


def init_classifier(n_mels, n_speakers, hidden, pooling="mean_std", seed=0,
                    feature_mean=None, feature_std=None, zero=False):
    """
    Create a classifier with scaled-normal weights and zero biases.

    Args:
        n_mels (int): Mel bins of the expected input
        n_speakers (int): Output classes, >= 2
        hidden (list[int]): Hidden layer widths; [] gives a linear-softmax model
        pooling (str): "mean" or "mean_std"
        seed (int): Weight initialisation seed
        feature_mean, feature_std: Standardisation of pooled features
            (defaults 0 and 1)
        zero (bool): All-zero weights instead of random ones

    Returns:
        SpeakerClassifier: Parameters rounded to float32 precision
    """
    if n_speakers < 2:
        raise InvalidArgumentError(f"n_speakers must be >= 2, got {n_speakers}")
    if n_mels < 1 or any(h < 1 for h in hidden):
        raise InvalidArgumentError(f"layer sizes must be positive, got n_mels={n_mels}, hidden={hidden}")
    in_dim = pooled_dim(n_mels, pooling)
    sizes = [in_dim] + list(hidden) + [n_speakers]
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if zero:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return SpeakerClassifier(
        n_mels=n_mels,
        n_speakers=n_speakers,
        pooling=pooling,
        weights=weights,
        biases=biases,
        feature_mean=np.zeros(in_dim) if feature_mean is None else np.asarray(feature_mean, dtype=np.float64),
        feature_std=np.ones(in_dim) if feature_std is None else np.asarray(feature_std, dtype=np.float64),
    ).quantize()


def pool(values, pooling):
    """Frame statistics of a (frames, n_mels) matrix: mean, or mean then std."""
    mu = values.mean(axis=0)
    if pooling == "mean":
        return mu
    sigma = np.sqrt(np.mean((values - mu) ** 2, axis=0) + STD_EPS)
    return np.concatenate([mu, sigma])


def pool_backward(values, pooling, dpooled):
    """
    Spread a gradient w.r.t. pooled statistics back over frames.

    Mean pooling puts dmu / frames on every frame. The std half adds
    dsigma * (x - mu) / (frames * sigma).
    """
    frames, n_mels = values.shape
    dvalues = np.broadcast_to(dpooled[:n_mels] / frames, values.shape).copy()
    if pooling == "mean_std":
        mu = values.mean(axis=0)
        sigma = np.sqrt(np.mean((values - mu) ** 2, axis=0) + STD_EPS)
        dvalues += dpooled[n_mels:] * (values - mu) / (frames * sigma)
    return dvalues


def fit_standardisation(pooled):
    """Per-dimension mean and spread of a (samples, in_dim) feature matrix."""
    pooled = np.asarray(pooled, dtype=np.float64)
    std = pooled.std(axis=0)
    std = np.where(std < MIN_FEATURE_STD, 1.0, std)
    return pooled.mean(axis=0), std


def mlp_forward(weights, biases, x):
    """
    Batched forward pass of a tanh MLP.

    Args:
        weights, biases: Layer parameters
        x (np.ndarray): (batch, fan_in) inputs

    Returns:
        tuple: (logits, activations) where ``activations[k]`` is the input
            to layer k, kept for ``mlp_backward``
    """
    activations = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w + b)
        activations.append(h)
    return h @ weights[-1] + biases[-1], activations


def mlp_backward(weights, activations, dlogits):
    """
    Backward pass matching ``mlp_forward``.

    Returns:
        tuple: (weight grads, bias grads, input grad), gradients summed over
            the batch
    """
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    d = dlogits
    for k in reversed(range(len(weights))):
        grads_w[k] = activations[k].T @ d
        grads_b[k] = d.sum(axis=0)
        dh = d @ weights[k].T
        if k > 0:
            d = tanh_backward(activations[k], dh)
    return grads_w, grads_b, dh


def _check_mel(c, m):
    values = as_matrix(m, "mel")
    if values.shape[1] != c.n_mels:
        raise InvalidArgumentError(
            f"mel has {values.shape[1]} bins, classifier expects {c.n_mels}"
        )
    return values


def features(c, m):
    """Standardised pooled feature vector of one mel."""
    values = _check_mel(c, m)
    return (pool(values, c.pooling) - c.feature_mean) / c.feature_std


def feature_matrix(c, mels):
    """Stack ``features`` for a list of mels into (samples, in_dim)."""
    return np.stack([features(c, m) for m in mels])


def logits_of(c, x):
    """Logits for a (batch, in_dim) standardised feature matrix."""
    logits, _ = mlp_forward(c.weights, c.biases, np.atleast_2d(x))
    return logits


def forward(c, m):
    """
    Speaker posterior of one mel.

    Raises:
        InvalidArgumentError: If the mel's bin count differs from ``c.n_mels``
    """
    return softmax(logits_of(c, features(c, m))[0])


def argmax_label(scores):
    """Index of the largest score; ties go to the lowest index."""
    return int(np.argmax(np.asarray(scores)))


def predict(c, m):
    return argmax_label(forward(c, m))


def predict_batch(c, mels):
    """Labels for many mels in one batched pass."""
    if len(mels) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(logits_of(c, feature_matrix(c, mels)), axis=1)


def grad_input(c, m, target):
    """
    Exact gradient of cross_entropy(forward(c, m), target) w.r.t. the mel.

    Args:
        c (SpeakerClassifier): Frozen classifier
        m: Mel matrix (frames, n_mels)
        target (int): Label the loss pulls towards

    Returns:
        np.ndarray: Same shape as ``m``

    Raises:
        InvalidArgumentError: If target is not a valid label
    """
    values = _check_mel(c, m)
    x = ((pool(values, c.pooling) - c.feature_mean) / c.feature_std)[None, :]
    logits, activations = mlp_forward(c.weights, c.biases, x)
    p = softmax(logits[0])
    dlogits = softmax_backward(p, cross_entropy_grad(p, target))
    _, _, dx = mlp_backward(c.weights, activations, dlogits[None, :])
    return pool_backward(values, c.pooling, dx[0] / c.feature_std)
