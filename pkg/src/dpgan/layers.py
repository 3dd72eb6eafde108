"""Parameter containers and the LSTM cell shared by generator and discriminators."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .errors import ContractViolation


class Model:
    """Named float64 parameters plus integer architecture dimensions."""

    kind = "model"

    def __init__(self, params, dims):
        self.params = {name: nx.parameter(np.asarray(v, dtype=np.float64), name)
                       for name, v in params.items()}
        self.dims = dict(dims)

    def parameters(self):
        return list(self.params.values())

    def parameter_names(self):
        return list(self.params)

    def copy(self):
        """Frozen-value snapshot with independent storage."""
        return type(self).from_arrays(self.dims, {k: p.data.copy() for k, p in self.params.items()})

    @classmethod
    def from_arrays(cls, dims, arrays):
        obj = cls.__new__(cls)
        Model.__init__(obj, arrays, dims)
        obj._check_shapes()
        return obj

    def _expected_shapes(self):
        raise NotImplementedError

    def _check_shapes(self):
        expected = self._expected_shapes()
        if list(expected) != list(self.params):
            raise ContractViolation(f"{self.kind}: parameter names {list(self.params)} != {list(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise ContractViolation(
                    f"{self.kind}: parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def _init(self, rng, scale):
        return {name: nx.init_uniform(rng, shape, scale) for name, shape in self._expected_shapes().items()}

    def check_ids(self, ids):
        ids = np.asarray(ids)
        V = self.dims["vocab"]
        if ids.size and (ids.min() < 0 or ids.max() >= V):
            raise ContractViolation(f"{self.kind}: token id outside vocabulary of size {V}")


def lstm_shapes(prefix, n_in, n_hidden):
    return {f"{prefix}.W": (n_in + n_hidden, 4 * n_hidden), f"{prefix}.b": (4 * n_hidden,)}


def lstm_step(W, b, x, h, c):
    """One LSTM step; gate blocks are ordered input, forget, output, candidate."""
    H = h.shape[-1]
    z = nx.matmul(nx.concat([x, h], axis=-1), W) + b
    gates = nx.sigmoid(z[:, : 3 * H])
    cand = nx.tanh(z[:, 3 * H:])
    c_new = gates[:, H: 2 * H] * c + gates[:, :H] * cand
    h_new = gates[:, 2 * H:] * nx.tanh(c_new)
    return h_new, c_new


def run_lstm(W, b, xs, mask, h, c):
    """Run over time axis 1 of ``xs`` (B, L, E); padded steps carry state forward.

    Returns the per-step (blended) hidden states and the final ``(h, c)``.
    """
    states = []
    for j in range(xs.shape[1]):
        h_new, c_new = lstm_step(W, b, xs[:, j], h, c)
        m = mask[:, j:j + 1]
        h = nx.blend(m, h_new, h)
        c = nx.blend(m, c_new, c)
        states.append(h)
    return states, (h, c)
