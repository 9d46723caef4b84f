"""
In-place optimizers over lists of numpy parameter arrays.
"""
import numpy as np

from timbre_lab.errors import InvalidArgumentError


class SGD:
    """Plain gradient descent"""

    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for param, grad in zip(self.params, grads):
            param -= self.lr * grad

    def state(self):
        return {"name": "sgd"}

    def load_state(self, state):
        pass


class Adam:
    """Adam with bias correction (beta1 0.9, beta2 0.999)"""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for param, grad, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"name": "adam", "t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state(self, state):
        self.t = state["t"]
        self.m = [a.copy() for a in state["m"]]
        self.v = [a.copy() for a in state["v"]]


def make_optimizer(name, params, lr):
    """
    Build an optimizer by name.

    Args:
        name (str): "adam" or "sgd"
        params (list): Parameter arrays updated in place
        lr (float): Learning rate

    Returns:
        SGD | Adam
    """
    if lr <= 0:
        raise InvalidArgumentError(f"learning rate must be positive, got {lr}")
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise InvalidArgumentError(f"Unsupported optimizer: {name}")
