"""Joint next-frame and reward model with noisy event blocks in the reward head.

Layout (default 8x8 frames, F stacked frames of C channels)::

    obs[F*C,8,8] -> enc1 (s2) -> [h,4,4] -> enc2 (s2) -> [h,2,2]
    frame:  act -> dec1 (T, s2) + enc1 -> act -> dec2 (T, s2) + skip(obs) -> logits[C,8,8]
    reward: act -> rdec1 (T, s2) + enc1 -> act -> block A
            -> rdec2 (T, s2) + rskip(obs) -> act -> block B
            -> noisy 3x3 interaction -> dense -> logits[buckets]

Blocks A and B are translation (3x3) -> weighting -> interaction (1x1).
Only reward-head banks carry dropout noise; the frame path is deterministic.
"""
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import nn
from . import tensor as T
from .tensor import Tensor


class NumericalError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    hidden: int = 16
    reward_hidden: int = 8
    batch_size: int = 32
    lr: float = 1e-3
    reward_weight: float = 1.0
    sigma_init: float = L.DEFAULT_SIGMA
    train_sigma: bool = True
    evade_blocks: bool = True
    bank_trainable: bool = True


@dataclass(frozen=True)
class ModelShape:
    channels: int
    height: int
    width: int
    frames: int
    n_actions: int
    n_buckets: int


BLOCK_ORDER = ("translation", "weighting", "interaction")


class WorldModel:
    def __init__(self, shape, config, rng):
        if shape.height % 4 or shape.width % 4:
            raise ValueError(f"frame size {shape.height}x{shape.width} must be divisible by 4")
        self.shape = shape
        self.config = config
        c_in = shape.frames * shape.channels
        h, hr, A = config.hidden, config.reward_hidden, shape.n_actions
        C = shape.channels
        r = rng.split("init")
        p = {}
        p["enc1.w"] = nn.conv_weight(r, h, c_in, 3)
        p["enc1.b"] = nn.zeros(h)
        p["enc2.w"] = nn.conv_weight(r, h, h, 3)
        p["enc2.b"] = nn.zeros(h)
        p["act.dec1.scale"], p["act.dec1.shift"] = nn.ones(A, h), nn.zeros(A, h)
        p["dec1.w"] = nn.conv_weight(r, h, h, 3)
        p["dec1.b"] = nn.zeros(h)
        p["act.dec2.scale"], p["act.dec2.shift"] = nn.ones(A, h), nn.zeros(A, h)
        p["dec2.w"] = nn.conv_weight(r, h, C, 3)
        p["dec2.b"] = nn.zeros(C)
        p["skip.w"] = nn.conv_weight(r, C, c_in, 1)
        p["act.rdec1.scale"], p["act.rdec1.shift"] = nn.ones(A, h), nn.zeros(A, h)
        p["rdec1.w"] = nn.conv_weight(r, h, h, 3)
        p["rdec1.b"] = nn.zeros(h)
        p["act.rdec2.scale"], p["act.rdec2.shift"] = nn.ones(A, h), nn.zeros(A, h)
        p["rdec2.w"] = nn.conv_weight(r, h, hr, 3)
        p["rdec2.b"] = nn.zeros(hr)
        p["rskip.w"] = nn.conv_weight(r, hr, c_in, 1)
        p["act.rfinal.scale"], p["act.rfinal.shift"] = nn.ones(A, hr), nn.zeros(A, hr)
        p["rfinal.b"] = nn.zeros(hr)
        n_flat = hr * shape.height * shape.width
        p["dense.w"] = nn.uniform_fan_in(r, (n_flat, shape.n_buckets), n_flat)
        p["dense.b"] = nn.zeros(shape.n_buckets)
        self.params = p

        sigma = config.sigma_init
        self.banks = {}
        if config.evade_blocks:
            for block, c in (("A", h), ("B", hr)):
                for kind in BLOCK_ORDER:
                    m = 3 if kind == "translation" else 1
                    name = f"reward.block{block}.{kind}"
                    bank = L.init_bank(kind, c, m, r, name=name, sigma=sigma)
                    bank.trainable = config.bank_trainable
                    bank.train_sigma = config.train_sigma
                    self.banks[name] = bank
        final = L.init_bank(L.INTERACTION, hr, 3, r, name="reward.final", sigma=sigma, identity=False)
        final.train_sigma = config.train_sigma
        self.banks[final.name] = final
        self.optimizer = None

    # parameters -----------------------------------------------------------

    def parameters(self):
        out = dict(self.params)
        for name, bank in self.banks.items():
            for k, t in bank.parameters().items():
                out[f"{name}.{k}"] = t
        return out

    def n_parameters(self):
        dense = sum(t.size for t in self.params.values())
        return dense + sum(b.n_trainable() * (2 if b.train_sigma else 1)
                           for b in self.banks.values() if b.trainable)

    def reward_parameter_names(self):
        return [k for k in self.parameters() if k.startswith(("act.r", "rdec", "rskip", "rfinal", "dense", "reward."))]

    def named_tensors(self):
        """Every tensor needed to restore the model, for checkpoints."""
        out = {f"model/{k}": t.data for k, t in self.params.items()}
        for name, bank in self.banks.items():
            out[f"model/{name}.theta"] = bank.theta.data
            out[f"model/{name}.sigma"] = bank.sigma.data
            out[f"model/{name}.mask"] = bank.mask
        if self.optimizer is not None:
            out.update(self.optimizer.state_tensors("model_opt"))
        return out

    def load_named_tensors(self, blocks):
        for k, t in self.params.items():
            t.data[...] = blocks[f"model/{k}"]
        for name, bank in self.banks.items():
            bank.theta.data[...] = blocks[f"model/{name}.theta"]
            bank.sigma.data[...] = blocks[f"model/{name}.sigma"]
            if not np.array_equal(bank.mask, blocks[f"model/{name}.mask"]):
                raise ValueError(f"mask mismatch for bank {name}")
        if "model_opt/t" in blocks:
            self.ensure_optimizer()
            self.optimizer.load_state_tensors(blocks, "model_opt")

    def ensure_optimizer(self, lr=None):
        if self.optimizer is None:
            self.optimizer = nn.Adam(self.parameters(), lr=self.config.lr if lr is None else lr)
        return self.optimizer

    # sampling -------------------------------------------------------------

    def draw_reward_sample(self, rng):
        return L.draw_joint(list(self.banks.values()), rng)

    def mean_sample(self):
        return L.mean_sample(self.banks.values())

    # forward --------------------------------------------------------------

    def _cond(self, x, onehot, stage):
        p = self.params
        return nn.action_condition(x, onehot, p[f"act.{stage}.scale"], p[f"act.{stage}.shift"])

    def _block(self, x, block, sample, trace):
        for kind in BLOCK_ORDER:
            name = f"reward.block{block}.{kind}"
            bank = self.banks.get(name)
            if bank is None:
                continue
            y = L.bank_forward(x, bank, sample)
            if trace is not None:
                trace[name] = (x, y)
            x = y
        return x

    def forward(self, obs, actions, sample, trace=None):
        """Batched forward: obs [B, F*C, H, W], actions [B] -> (frame logits, reward logits)."""
        if obs.ndim != 4:
            raise T.ShapeError(f"obs must be [B, F*C, H, W], got {obs.shape}")
        s = self.shape
        if obs.shape[1:] != (s.frames * s.channels, s.height, s.width):
            raise T.ShapeError(f"obs shape {obs.shape[1:]} does not match model")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (obs.shape[0],) or actions.min() < 0 or actions.max() >= s.n_actions:
            raise ValueError("actions must be one valid id per batch row")
        p = self.params
        H, W = s.height, s.width
        onehot = T.one_hot(actions, s.n_actions)
        onehot = Tensor(onehot.data.astype(obs.data.dtype))

        e1 = T.relu(T.add_channel_bias(T.conv2d(obs, p["enc1.w"], 2, "SAME"), p["enc1.b"]))
        e2 = T.relu(T.add_channel_bias(T.conv2d(e1, p["enc2.w"], 2, "SAME"), p["enc2.b"]))

        d1 = T.conv_transpose2d(self._cond(e2, onehot, "dec1"), p["dec1.w"], 2, (H // 2, W // 2))
        d1 = T.add(T.relu(T.add_channel_bias(d1, p["dec1.b"])), e1)
        d2 = T.conv_transpose2d(self._cond(d1, onehot, "dec2"), p["dec2.w"], 2, (H, W))
        frame_logits = T.add(T.add_channel_bias(d2, p["dec2.b"]), T.conv2d(obs, p["skip.w"], 1, "SAME"))

        r1 = T.conv_transpose2d(self._cond(e2, onehot, "rdec1"), p["rdec1.w"], 2, (H // 2, W // 2))
        r1 = T.add(T.relu(T.add_channel_bias(r1, p["rdec1.b"])), e1)
        r1 = self._block(r1, "A", sample, trace)
        r2 = T.conv_transpose2d(self._cond(r1, onehot, "rdec2"), p["rdec2.w"], 2, (H, W))
        r2 = T.add(r2, T.conv2d(obs, p["rskip.w"], 1, "SAME"))
        r2 = T.relu(T.add_channel_bias(r2, p["rdec2.b"]))
        r2 = self._block(self._cond(r2, onehot, "rfinal"), "B", sample, trace)
        final = self.banks["reward.final"]
        r3 = T.relu(T.add_channel_bias(L.interaction_forward(r2, final, sample), p["rfinal.b"]))
        if trace is not None:
            trace["reward.final"] = (r2, r3)
        reward_logits = T.add(T.matmul(T.flatten(r3), p["dense.w"]), p["dense.b"])
        return frame_logits, reward_logits

    def loss(self, obs, actions, next_frames, reward_classes, sample):
        frame_logits, reward_logits = self.forward(obs, actions, sample)
        frame_loss = T.bce_with_logits(frame_logits, next_frames)
        reward_loss = T.cross_entropy(reward_logits, reward_classes)
        total = T.add(frame_loss, T.scale(reward_loss, self.config.reward_weight))
        return total, frame_loss.item(), reward_loss.item()

    def apply_constraints(self):
        for bank in self.banks.values():
            bank.project()


def build_world_model(env_spec, model_config, rng):
    shape = ModelShape(channels=env_spec.channels, height=env_spec.height, width=env_spec.width,
                       frames=env_spec.frames, n_actions=env_spec.n_actions,
                       n_buckets=len(env_spec.reward_buckets))
    model = WorldModel(shape, model_config, rng)
    model.reward_values = np.asarray(env_spec.reward_buckets)
    return model


def predict(model, sample, obs_stack, action):
    """Single-example prediction: (frame logits [C,H,W], reward logits [buckets])."""
    obs = T._as_tensor(obs_stack)
    if obs.ndim != 3:
        raise T.ShapeError(f"obs_stack must be [F*C,H,W], got {obs.shape}")
    frame, reward = model.forward(T.reshape(obs, (1,) + obs.shape), [action], sample)
    return frame.data[0], reward.data[0]


def draw_reward_sample(model, rng):
    return model.draw_reward_sample(rng)


class Dataset:
    """Append-only transition store with array views for batching."""

    def __init__(self):
        self._obs, self._actions, self._rewards, self._next = [], [], [], []
        self._cache = None

    def __len__(self):
        return len(self._actions)

    def append(self, obs_stack, action, reward_class, next_frame):
        self._obs.append(np.asarray(obs_stack, dtype=np.float32))
        self._actions.append(int(action))
        self._rewards.append(int(reward_class))
        self._next.append(np.asarray(next_frame, dtype=np.float32))
        self._cache = None

    def __iter__(self):
        for i in range(len(self)):
            yield self._obs[i], self._actions[i], self._rewards[i], self._next[i]

    def arrays(self):
        if self._cache is None:
            self._cache = (np.stack(self._obs), np.asarray(self._actions, dtype=np.int64),
                           np.asarray(self._rewards, dtype=np.int64), np.stack(self._next))
        return self._cache

    def subset(self, start, stop=None):
        out = Dataset()
        for rec in list(self)[start:stop]:
            out.append(*rec)
        return out

    def to_bytes(self):
        obs, a, r, nxt = self.arrays()
        return obs.tobytes() + a.tobytes() + r.tobytes() + nxt.tobytes()


def _batch(model, arrays, idx):
    obs, a, r, nxt = arrays
    dt = T.get_dtype()
    return Tensor(obs[idx].astype(dt)), a[idx], Tensor(nxt[idx].astype(dt)), r[idx]


def train_model(model, dataset, steps, optimizer_config=None, rng=None):
    """Minimise frame BCE + weighted reward CE with one fresh epsilon per minibatch.

    Returns the per-step total loss.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    cfg = dict(optimizer_config or {})
    batch_size = cfg.get("batch_size", model.config.batch_size)
    opt = model.ensure_optimizer(cfg.get("lr"))
    arrays = dataset.arrays()
    n = len(dataset)
    # separate streams so the minibatch sequence does not depend on which banks exist
    batch_rng, eps_rng = rng.split("batches"), rng.split("epsilon")
    curve = []
    for step in range(steps):
        idx = batch_rng.integers(0, n, size=min(batch_size, n))
        sample = model.draw_reward_sample(eps_rng)
        obs, actions, nxt, rew = _batch(model, arrays, idx)
        opt.zero_grad()
        loss, _, _ = model.loss(obs, actions, nxt, rew, sample)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"non-finite model loss {value} at step {step}")
        loss.backward()
        opt.step()
        model.apply_constraints()
        curve.append(value)
    return curve


def evaluate_model(model, dataset, sample=None, batch_size=256):
    """Per-pixel next-frame accuracy, reward-class accuracy and mean loss terms."""
    sample = model.mean_sample() if sample is None else sample
    arrays = dataset.arrays()
    n = len(dataset)
    frame_hits = reward_hits = 0
    nll = 0.0
    pixels = 0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        obs, actions, nxt, rew = _batch(model, arrays, idx)
        frame_logits, reward_logits = model.forward(obs, actions, sample)
        frame_hits += int(((frame_logits.data > 0) == (nxt.data > 0.5)).sum())
        pixels += nxt.data.size
        reward_hits += int((reward_logits.data.argmax(axis=1) == rew).sum())
        nll += T.bce_with_logits(frame_logits, nxt).item() * len(idx)
        nll += T.cross_entropy(reward_logits, rew).item() * len(idx) * model.config.reward_weight
    return {"frame_acc": frame_hits / pixels, "reward_acc": reward_hits / n, "nll": nll / n}
