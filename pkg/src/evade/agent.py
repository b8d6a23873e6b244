"""Approximate posterior-sampling loop over a learned world model.

Each iteration collects ``k_real`` real transitions with the current policy,
fits the world model (means and dropout scales) on everything collected,
draws one reward-model sample, and trains the policy for ``k_sim`` steps
inside that single sampled model.
"""
import csv
import io
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import env as E
from . import nn
from . import tensor as T
from .tensor import Tensor
from .world_model import Dataset, NumericalError, build_world_model, evaluate_model, train_model


@dataclass
class LoopConfig:
    iterations: int = 30
    k_real: int = 200
    k_sim: int = 5000
    model_steps_first: int = 2000
    model_steps_rest: int = 500
    rollout_horizon: int = 16
    update_frequency: int = 250
    n_rollouts: int = 10
    clip_ratio: float = 0.2
    discount: float = 0.99
    entropy_bonus: float = 0.01
    value_weight: float = 0.5
    policy_lr: float = 1e-3
    policy_epochs: int = 4
    policy_batch: int = 64
    eval_episodes: int = 5
    normalize_advantages: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if f.name in ("k_sim", "entropy_bonus"):
                if v < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif v <= 0:
                raise ValueError(f"{f.name} must be positive")

    @property
    def real_budget(self):
        return self.iterations * self.k_real


class PolicyNet:
    """conv(3x3, s2) -> dense -> (action logits, state value)."""

    def __init__(self, in_channels, height, width, n_actions, rng, hidden=64, filters=16):
        r = rng.split("policy-init")
        n_flat = filters * (-(-height // 2)) * (-(-width // 2))
        self.n_actions = n_actions
        self.params = {
            "conv.w": nn.conv_weight(r, filters, in_channels, 3),
            "conv.b": nn.zeros(filters),
            "fc.w": nn.uniform_fan_in(r, (n_flat, hidden), n_flat),
            "fc.b": nn.zeros(hidden),
            "pi.w": nn.uniform_fan_in(r, (hidden, n_actions), hidden),
            "pi.b": nn.zeros(n_actions),
            "v.w": nn.uniform_fan_in(r, (hidden, 1), hidden),
            "v.b": nn.zeros(1),
        }
        self.optimizer = None

    def forward(self, obs):
        p = self.params
        x = T.relu(T.add_channel_bias(T.conv2d(obs, p["conv.w"], 2, "SAME"), p["conv.b"]))
        x = T.relu(T.add(T.matmul(T.flatten(x), p["fc.w"]), p["fc.b"]))
        logits = T.add(T.matmul(x, p["pi.w"]), p["pi.b"])
        value = T.reshape(T.add(T.matmul(x, p["v.w"]), p["v.b"]), (obs.shape[0],))
        return logits, value

    def probs(self, obs):
        logits, _ = self.forward(Tensor(np.asarray(obs, dtype=T.get_dtype())))
        return np.exp(T.log_softmax(logits).data)

    def act(self, obs, rng):
        p = self.probs(obs).astype(np.float64)
        u = rng.uniform(len(p))
        cdf = np.cumsum(p, axis=1)
        return np.minimum((cdf < u[:, None]).sum(axis=1), self.n_actions - 1)

    def greedy(self, obs):
        return self.probs(obs).argmax(axis=1)

    def ensure_optimizer(self, lr):
        if self.optimizer is None:
            self.optimizer = nn.Adam(self.params, lr=lr)
        return self.optimizer

    def named_tensors(self):
        out = {f"policy/{k}": t.data for k, t in self.params.items()}
        if self.optimizer is not None:
            out.update(self.optimizer.state_tensors("policy_opt"))
        return out

    def load_named_tensors(self, blocks, lr=1e-3):
        for k, t in self.params.items():
            t.data[...] = blocks[f"policy/{k}"]
        if "policy_opt/t" in blocks:
            self.ensure_optimizer(lr).load_state_tensors(blocks, "policy_opt")


def policy_objective(policy, obs, actions, old_logp, advantages, returns, config):
    """Clipped surrogate + value regression - entropy bonus (to minimise)."""
    logits, value = policy.forward(obs)
    logp_all = T.log_softmax(logits)
    logp = T.select(logp_all, actions)
    ratio = T.exp(T.sub(logp, Tensor(old_logp)))
    adv = Tensor(advantages)
    surr = T.minimum(T.mul(ratio, adv), T.mul(T.clip(ratio, 1 - config.clip_ratio, 1 + config.clip_ratio), adv))
    entropy = T.neg(T.sum_(T.mul(T.exp(logp_all), logp_all), axis=1))
    value_loss = T.mean(T.square(T.sub(value, Tensor(returns))))
    loss = T.neg(T.mean(surr))
    loss = T.add(loss, T.scale(value_loss, config.value_weight))
    return T.sub(loss, T.scale(T.mean(entropy), config.entropy_bonus))


# real environment ---------------------------------------------------------

def collect_real(policy, env, k_real, dataset, rng):
    """Append exactly k_real transitions; returns the returns of finished episodes.

    A fresh episode starts at the first step and after every termination. If
    no episode finishes within the budget, the partial return is reported.
    """
    spec = env.spec
    obs = env.reset()
    returns, running = [], 0.0
    for _ in range(k_real):
        action = int(policy.act(obs[None], rng)[0])
        next_obs, frame, reward, done = env.step(action)
        dataset.append(obs, action, spec.reward_class(reward), frame)
        running += reward
        obs = next_obs
        if done:
            returns.append(running)
            running = 0.0
            obs = env.reset()
    if not returns:
        returns.append(running)
    return returns


def greedy_return(policy, spec, episodes=1):
    rets = []
    for _ in range(episodes):
        state, obs = E.reset(spec)
        total, done = 0.0, False
        while not done:
            a = int(policy.greedy(obs[None])[0])
            state, _, r, done = E.step(state, a, spec)
            obs = E.obs_stack(state)
            total += r
        rets.append(total)
    return float(np.mean(rets))


def random_policy_return(spec, episodes, rng):
    """Monte-Carlo mean and standard error of the uniform-random policy's return."""
    rets = np.empty(episodes)
    for ep in range(episodes):
        state, _ = E.reset(spec)
        total, done = 0.0, False
        while not done:
            state, _, r, done = E.step(state, int(rng.integers(0, spec.n_actions)), spec)
            total += r
        rets[ep] = total
    return float(rets.mean()), float(rets.std(ddof=1) / np.sqrt(episodes))


# simulated environment ----------------------------------------------------

def _sim_batch(model, sample, obs, actions):
    frame_logits, reward_logits = model.forward(Tensor(obs.astype(T.get_dtype())), actions, sample)
    frames = (frame_logits.data > 0).astype(np.float32)
    rewards = np.asarray(model.reward_values)[reward_logits.data.argmax(axis=1)]
    c = frames.shape[1]
    next_obs = np.concatenate([obs[:, c:], frames], axis=1)
    return next_obs, rewards


def simulate_step(model, sample, obs_stack, action, t, horizon):
    """One model step from step index t: (next obs stack, reward, done)."""
    next_obs, rewards = _sim_batch(model, sample, np.asarray(obs_stack)[None], [action])
    return next_obs[0], float(rewards[0]), t + 1 >= horizon


class SampleStamp:
    """Wraps a model so every query records the sample it used."""

    def __init__(self, model):
        self.model = model
        self.sample_ids = set()

    def __getattr__(self, name):
        return getattr(self.model, name)

    def forward(self, obs, actions, sample, trace=None):
        self.sample_ids.add(sample.sample_id)
        return self.model.forward(obs, actions, sample)


def _update_policy(policy, batch, config, rng):
    obs, actions, rewards, next_obs, dones = batch
    dt = T.get_dtype()
    obs_t = Tensor(obs.astype(dt))
    logits, values = policy.forward(obs_t)
    old_logp = T.log_softmax(logits).data[np.arange(len(actions)), actions]
    _, next_values = policy.forward(Tensor(next_obs.astype(dt)))
    targets = rewards + config.discount * next_values.data * (1.0 - dones)
    adv = targets - values.data
    if len(adv) > 1:
        adv = adv - adv.mean()
        # optional std scaling; either setting learns the default layout
        if config.normalize_advantages and adv.std() > 1e-8:
            adv = adv / adv.std()
    adv = adv.astype(dt)
    targets = targets.astype(dt)
    opt = policy.ensure_optimizer(config.policy_lr)
    n = len(actions)
    for _ in range(config.policy_epochs):
        order = _permutation(rng, n)
        for start in range(0, n, config.policy_batch):
            idx = order[start:start + config.policy_batch]
            opt.zero_grad()
            loss = policy_objective(policy, Tensor(obs[idx].astype(dt)), actions[idx], old_logp[idx],
                                    adv[idx], targets[idx], config)
            if not np.isfinite(loss.item()):
                raise NumericalError(f"non-finite policy loss {loss.item()}")
            loss.backward()
            opt.step()


def _permutation(rng, n):
    return np.argsort(rng.uniform(n), kind="stable")


def train_policy_in_sim(policy, model, sample, dataset_real, k_sim, config, rng):
    """Run k_sim simulated steps in the sampled model, updating the policy periodically.

    Rollouts start from observation stacks drawn uniformly from the real data
    and end after ``config.rollout_horizon`` steps. Returns the completed
    rollouts' returns.
    """
    if len(dataset_real) == 0:
        raise ValueError("no real transitions to start simulated rollouts from")
    if k_sim == 0:
        return []
    starts = dataset_real.arrays()[0]
    n = config.n_rollouts
    obs = starts[rng.integers(0, len(starts), size=n)].copy()
    t = np.zeros(n, dtype=np.int64)
    ret = np.zeros(n)
    finished = []
    buf = []
    done_steps = 0
    while done_steps < k_sim:
        active = min(n, k_sim - done_steps)
        o = obs[:active].copy()  # obs is overwritten in place below; buf keeps rows of o
        actions = policy.act(o, rng)
        next_obs, rewards = _sim_batch(model, sample, o, actions)
        t[:active] += 1
        dones = (t[:active] >= config.rollout_horizon).astype(np.float64)
        ret[:active] += rewards
        for i in range(active):
            buf.append((o[i], actions[i], rewards[i], next_obs[i], dones[i]))
            done_steps += 1
            if done_steps % config.update_frequency == 0:
                _update_policy(policy, _stack(buf), config, rng)
                buf = []
        obs[:active] = next_obs
        for i in np.flatnonzero(dones):
            finished.append(float(ret[i]))
            ret[i] = 0.0
            t[i] = 0
            obs[i] = starts[rng.integers(0, len(starts))]
    return finished


def _stack(buf):
    obs, actions, rewards, next_obs, dones = zip(*buf)
    return (np.stack(obs), np.asarray(actions, dtype=np.int64), np.asarray(rewards, dtype=np.float64),
            np.stack(next_obs), np.asarray(dones, dtype=np.float64))


# the loop -----------------------------------------------------------------

REPORT_COLUMNS = ("iteration", "real_return_mean", "model_nll", "reward_acc", "sim_return_mean",
                  "seconds", "frame_acc", "train_loss")


@dataclass
class TrainingReport:
    rows: list = field(default_factory=list)
    final_return: float = float("nan")
    failed_iteration: int = None

    def to_csv(self, timing=True):
        """CSV text; timing=False blanks wall-clock for byte comparisons."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row[c]) if (timing or c != "seconds") else "" for c in REPORT_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append({k: (int(v) if k == "iteration" else (float(v) if v != "" else float("nan")))
                         for k, v in rec.items()})
        return cls(rows=rows)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_evade_simple(loop_config, rng, env_spec=None, model_config=None, evade=True,
                     out_dir=None, resume=None, on_iteration=None):
    """Run the full loop; returns a :class:`TrainingReport`.

    ``evade=False`` is the baseline: identity banks with sigma frozen at 0.
    ``resume`` is a checkpoint path to continue from; ``on_iteration`` is
    called with (iteration, state) after every iteration.
    """
    from . import checkpoint as ckpt
    from .world_model import ModelConfig
    from dataclasses import replace

    env_spec = env_spec or E.EnvSpec()
    model_config = model_config or ModelConfig()
    if not evade:
        model_config = replace(model_config, sigma_init=0.0, train_sigma=False)
    cfg = loop_config
    model = build_world_model(env_spec, model_config, rng.split("model"))
    policy = PolicyNet(env_spec.frames * env_spec.channels, env_spec.height, env_spec.width,
                       env_spec.n_actions, rng)
    dataset = Dataset()
    report = TrainingReport()
    start_iter = 1
    if resume is not None:
        blocks, _, _ = ckpt.load(resume)
        model.load_named_tensors(blocks)
        policy.load_named_tensors(blocks, cfg.policy_lr)
        dataset = ckpt.dataset_from_blocks(blocks)
        start_iter = int(blocks["loop/iteration"][0]) + 1
        report.rows = ckpt.report_rows_before(resume, start_iter)
    env = E.ObjectWorld(env_spec)
    real_steps = len(dataset)
    for it in range(start_iter, cfg.iterations + 1):
        t0 = time.perf_counter()
        it_rng = rng.split("iteration", it)
        fresh = Dataset()
        returns = collect_real(policy, env, cfg.k_real, fresh, it_rng.split("collect"))
        real_steps += cfg.k_real
        if real_steps > cfg.real_budget:
            raise RuntimeError("real interaction budget exceeded")
        held_out = evaluate_model(model, fresh)
        for rec in fresh:
            dataset.append(*rec)
        steps = cfg.model_steps_first if it == 1 else cfg.model_steps_rest
        try:
            curve = train_model(model, dataset, steps, {"batch_size": model_config.batch_size},
                                it_rng.split("fit"))
            sample = model.draw_reward_sample(it_rng.split("posterior"))
            sim_returns = train_policy_in_sim(policy, model, sample, dataset, cfg.k_sim, cfg,
                                              it_rng.split("sim"))
        except NumericalError as exc:
            report.failed_iteration = it
            raise NumericalError(f"iteration {it}: {exc}") from exc
        tail = curve[-50:] if curve else [float("nan")]
        report.rows.append({
            "iteration": it,
            "real_return_mean": float(np.mean(returns)),
            "model_nll": held_out["nll"],
            "reward_acc": held_out["reward_acc"],
            "sim_return_mean": float(np.mean(sim_returns)) if sim_returns else float("nan"),
            "seconds": time.perf_counter() - t0,
            "frame_acc": held_out["frame_acc"],
            "train_loss": float(np.mean(tail)),
        })
        if out_dir is not None:
            ckpt.save_run_state(out_dir, it, model, policy, dataset, report, rng)
        if on_iteration is not None:
            on_iteration(it, {"model": model, "policy": policy, "dataset": dataset, "report": report})
    report.final_return = greedy_return(policy, env_spec, cfg.eval_episodes)
    return report
