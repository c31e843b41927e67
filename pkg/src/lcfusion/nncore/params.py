"""Named learnable parameters, seeded initialization and the Adam step."""

import zlib

import numpy as np

from ..errors import ValidationError
from .tensor import Tensor


class Parameter:
    """A named Tensor with requires_grad=True."""

    def __init__(self, name, data):
        self.name = name
        self.tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True)

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _rng_for(seed, name):
    # independent stream per (seed, name); crc32 keeps it stable across runs
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def uniform_init(name, shape, fan_in, fan_out, seed):
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(name, _rng_for(seed, name).uniform(-a, a, size=shape))


def zeros_init(name, shape):
    return Parameter(name, np.zeros(shape))


class ParamStore:
    """Ordered registry of uniquely named parameters."""

    def __init__(self):
        self._params = {}

    def add(self, param):
        if param.name in self._params:
            raise ValidationError(f"duplicate parameter name '{param.name}'")
        self._params[param.name] = param
        return param

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def names(self):
        return list(self._params.keys())

    def zero_grad(self):
        for p in self:
            p.tensor.zero_grad()

    def state(self):
        return {p.name: p.data for p in self}


class Adam:
    """Plain Adam with fixed learning rate (no schedule, no weight decay)."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self):
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.tensor.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.tensor.zero_grad()
