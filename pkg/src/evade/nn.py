"""Parameter initialisation and the Adam optimiser."""
import numpy as np

from . import tensor as T


def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return T.parameter(rng.uniform(shape) * 2 * bound - bound)


def conv_weight(rng, c_out, c_in, k):
    return uniform_fan_in(rng, (c_out, c_in, k, k), c_in * k * k)


def zeros(*shape):
    return T.parameter(np.zeros(shape))


def ones(*shape):
    return T.parameter(np.ones(shape))


def action_condition(x, actions_onehot, scale_table, shift_table):
    """Per-channel scale and shift looked up from the action."""
    return T.channel_affine(x, T.matmul(actions_onehot, scale_table),
                            T.matmul(actions_onehot, shift_table))


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(p.data.dtype)

    def state_tensors(self, prefix):
        out = {f"{prefix}/t": np.array([self.t], dtype=np.float64)}
        for k in self.params:
            out[f"{prefix}/m/{k}"] = self.m[k]
            out[f"{prefix}/v/{k}"] = self.v[k]
        return out

    def load_state_tensors(self, blocks, prefix):
        self.t = int(blocks[f"{prefix}/t"][0])
        for k in self.params:
            self.m[k][...] = blocks[f"{prefix}/m/{k}"]
            self.v[k][...] = blocks[f"{prefix}/v/{k}"]
