"""Parameter storage and the recurrent building blocks shared by both encoders."""

import hashlib

import numpy as np

from . import autodiff as ad


class ParameterStore:
    """Ordered mapping of parameter name -> trainable :class:`Tensor`."""

    def __init__(self):
        self._params = {}

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = ad.Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.data.size for p in self._params.values()))

    def state(self):
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters {sorted(missing)}")
        for k, p in self._params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def fingerprint(self):
        h = hashlib.sha256()
        for k, p in self._params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


def init_lstm(store, prefix, d_in, hidden, rng, scale=0.1, forget_bias=1.0):
    store.add(f"{prefix}.W_x", uniform(rng, (d_in, 4 * hidden), scale))
    store.add(f"{prefix}.W_h", uniform(rng, (hidden, 4 * hidden), scale))
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = forget_bias
    store.add(f"{prefix}.b", b)


def init_bilstm(store, prefix, d_in, hidden, rng, scale=0.1, forget_bias=1.0):
    init_lstm(store, f"{prefix}.fw", d_in, hidden, rng, scale, forget_bias)
    init_lstm(store, f"{prefix}.bw", d_in, hidden, rng, scale, forget_bias)


def lstm(store, prefix, x, mask, reverse=False):
    """x: [N, T, d_in] -> [N, T, h]; padded steps output zero and carry state."""
    xg = ad.matmul(x, store[f"{prefix}.W_x"]) + store[f"{prefix}.b"]
    return ad.lstm_recurrence(xg, store[f"{prefix}.W_h"], mask, reverse=reverse)


def bilstm(store, prefix, x, mask):
    fw = lstm(store, f"{prefix}.fw", x, mask, reverse=False)
    bw = lstm(store, f"{prefix}.bw", x, mask, reverse=True)
    return ad.concat([fw, bw], axis=-1)
