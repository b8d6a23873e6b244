"""Noisy event convolution layers with Gaussian multiplicative dropout.

Three structured filter banks share one parameterisation: mean weights
``theta``, dropout scales ``sigma`` and a fixed binary ``mask``. A frozen
standard-normal draw ``epsilon`` turns a bank into a deterministic filter
``theta * (1 + sigma * epsilon)``.

* interaction: dense m x m filters mixing every input channel.
* weighting: 1 x 1, filter k reads only channel k (a per-channel gain).
* translation: m x m, filter k reads only channel k, and only through the
  middle row and middle column of its kernel.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

INTERACTION = "interaction"
WEIGHTING = "weighting"
TRANSLATION = "translation"
KINDS = (INTERACTION, WEIGHTING, TRANSLATION)

DEFAULT_SIGMA = 0.1

_sample_ids = itertools.count()


def structure_mask(kind, c, m, c_out=None):
    """Binary [c_out, c, m, m] mask of trainable entries for a bank kind."""
    if kind not in KINDS:
        raise ValueError(f"unknown bank kind {kind!r}")
    if m < 1 or m % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {m}")
    if kind == WEIGHTING and m != 1:
        raise ValueError("weighting banks are 1x1")
    if kind != INTERACTION and c_out not in (None, c):
        raise ValueError(f"{kind} banks map c channels to c channels")
    c_out = c if c_out is None else c_out
    mask = np.zeros((c_out, c, m, m), dtype=np.float64)
    if kind == INTERACTION:
        mask[:] = 1
    elif kind == WEIGHTING:
        mask[np.arange(c), np.arange(c), 0, 0] = 1
    else:
        mid = m // 2
        for k in range(c):
            mask[k, k, mid, :] = 1
            mask[k, k, :, mid] = 1
    return mask


class NoisyFilterBank:
    """Mean weights, dropout scales and structure mask for one noisy layer."""

    def __init__(self, kind, c, m, c_out=None, theta=None, sigma=None, name=None,
                 trainable=True, train_sigma=True):
        self.kind = kind
        self.c = c
        self.m = m
        self.c_out = c if c_out is None else c_out
        self.name = name or kind
        self.trainable = trainable
        self.train_sigma = train_sigma
        mask = structure_mask(kind, c, m, c_out)
        dtype = T.get_dtype()
        self.mask = mask.astype(dtype)
        theta = np.zeros_like(self.mask) if theta is None else np.asarray(theta, dtype=dtype)
        sigma = np.zeros_like(self.mask) if sigma is None else np.asarray(sigma, dtype=dtype)
        if theta.shape != mask.shape or sigma.shape != mask.shape:
            raise T.ShapeError(f"theta/sigma must have shape {mask.shape}")
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative")
        self.theta = Tensor(theta * self.mask, requires_grad=True)
        self.sigma = Tensor(sigma * self.mask, requires_grad=True)

    @property
    def shape(self):
        return self.mask.shape

    def parameters(self):
        """Trainable tensors keyed by local name."""
        params = {}
        if self.trainable:
            params["theta"] = self.theta
            if self.train_sigma:
                params["sigma"] = self.sigma
        return params

    def project(self):
        """Re-impose the structure mask and sigma >= 0 after an update."""
        self.theta.data *= self.mask
        np.maximum(self.sigma.data, 0, out=self.sigma.data)
        self.sigma.data *= self.mask

    def n_trainable(self):
        return int(self.mask.sum())

    def theta_tilde(self, sample):
        eps = sample.epsilon_for(self)
        return self.theta.data * (1 + self.sigma.data * eps)

    def __repr__(self):
        return f"NoisyFilterBank({self.name!r}, kind={self.kind}, c={self.c}, c_out={self.c_out}, m={self.m})"


@dataclass(frozen=True)
class VariationalSample:
    """One frozen epsilon draw per bank, keyed by bank name."""

    epsilon: dict
    sample_id: int = field(default_factory=lambda: next(_sample_ids))

    def __post_init__(self):
        for arr in self.epsilon.values():
            arr.setflags(write=False)

    def epsilon_for(self, bank):
        try:
            eps = self.epsilon[bank.name]
        except KeyError:
            raise KeyError(f"sample has no epsilon for bank {bank.name!r}") from None
        if eps.shape != bank.shape:
            raise T.ShapeError(f"epsilon shape {eps.shape} != bank shape {bank.shape}")
        return eps

    def theta_tilde(self, bank):
        return bank.theta_tilde(self)


def mean_sample(banks):
    """Sample with epsilon = 0 everywhere, i.e. the mean weights."""
    return VariationalSample({b.name: np.zeros(b.shape, dtype=b.mask.dtype) for b in banks})


def draw_epsilon(bank, rng):
    """Draw a frozen epsilon for one bank (zero on masked-out entries)."""
    return draw_joint([bank], rng)


def draw_joint(banks, rng):
    """Draw one sample covering several banks, in the given order."""
    eps = {}
    for b in banks:
        e = rng.normal_array(b.shape).astype(b.mask.dtype)
        eps[b.name] = e * b.mask
    return VariationalSample(eps)


def reparameterize(theta, sigma, epsilon):
    """theta * (1 + sigma * epsilon), differentiable in theta and sigma."""
    theta, sigma = T._as_tensor(theta), T._as_tensor(sigma)
    eps = np.asarray(epsilon.data if isinstance(epsilon, Tensor) else epsilon, dtype=theta.data.dtype)
    if not (theta.shape == sigma.shape == eps.shape):
        raise T.ShapeError(f"shape mismatch: {theta.shape}, {sigma.shape}, {eps.shape}")
    if np.any(sigma.data < 0):
        raise ValueError("sigma must be non-negative")
    gain = 1 + sigma.data * eps
    out = theta.data * gain
    return T._result(out, (theta, sigma), lambda g: (g * gain, g * theta.data * eps))


def noisy_weight(bank, sample):
    """Masked theta_tilde as a tensor on the gradient tape."""
    eps = sample.epsilon_for(bank)
    return T.mul(reparameterize(bank.theta, bank.sigma, eps), Tensor(bank.mask))


def _check(x, bank, kind):
    if bank.kind != kind:
        raise ValueError(f"expected a {kind} bank, got {bank.kind}")
    channels = x.shape[-3] if x.ndim in (3, 4) else None
    if channels != bank.c:
        raise T.ShapeError(f"input has {channels} channels, bank expects {bank.c}")


def interaction_forward(x, bank, sample):
    _check(x, bank, INTERACTION)
    return T.conv2d(x, noisy_weight(bank, sample), stride=1, padding="SAME")


def weighting_forward(x, bank, sample):
    _check(x, bank, WEIGHTING)
    w = noisy_weight(bank, sample)
    diag = _diagonal(w)
    if x.ndim == 3:
        return T.reshape(T.scale_channels(T.reshape(x, (1,) + x.shape), diag), x.shape)
    return T.scale_channels(x, diag)


def _diagonal(w):
    c = w.shape[0]
    idx = np.arange(c)

    def backward(g):
        gw = np.zeros_like(w.data)
        gw[idx, idx, 0, 0] = g
        return (gw,)

    return T._result(w.data[idx, idx, 0, 0].copy(), (w,), backward)


def translation_forward(x, bank, sample):
    _check(x, bank, TRANSLATION)
    return T.conv2d(x, noisy_weight(bank, sample), stride=1, padding="SAME")


_FORWARD = {INTERACTION: interaction_forward, WEIGHTING: weighting_forward,
            TRANSLATION: translation_forward}


def bank_forward(x, bank, sample):
    return _FORWARD[bank.kind](x, bank, sample)


def identity_config(kind, c, m, name=None, c_out=None):
    """A bank whose forward pass is the identity map (sigma = 0)."""
    if m < 1 or m % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {m}")
    mask = structure_mask(kind, c, m, c_out)
    if mask.shape[0] < c:
        raise ValueError("identity needs at least as many output channels as inputs")
    theta = np.zeros_like(mask)
    mid = m // 2
    theta[np.arange(c), np.arange(c), mid, mid] = 1
    return NoisyFilterBank(kind, c, m, c_out=c_out, theta=theta, sigma=np.zeros_like(mask), name=name)


def init_bank(kind, c, m, rng, name=None, sigma=DEFAULT_SIGMA, identity=True, c_out=None):
    """A bank ready for training: identity (or fan-in uniform) means, uniform sigma."""
    if identity:
        bank = identity_config(kind, c, m, name=name, c_out=c_out)
    else:
        mask = structure_mask(kind, c, m, c_out)
        fan_in = mask[0].sum()
        bound = 1.0 / np.sqrt(fan_in)
        theta = rng.uniform(mask.shape) * 2 * bound - bound
        bank = NoisyFilterBank(kind, c, m, c_out=c_out, theta=theta, name=name)
    bank.sigma.data[:] = sigma * bank.mask
    return bank
