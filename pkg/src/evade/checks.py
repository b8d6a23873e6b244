"""Self-check suites run by ``evade identity-check`` and ``evade grad-check``.

Each suite returns a list of :class:`Result` rows; all run in double precision.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import layers as L
from . import tensor as T
from .agent import LoopConfig, PolicyNet, policy_objective
from .env import EnvSpec
from .rng import Rng
from .tensor import Tensor
from .world_model import ModelConfig, build_world_model

GRAD_TOL = 1e-6
IDENTITY_REL_TOL = 1e-6


@dataclass
class Result:
    name: str
    value: float
    passed: bool

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<48} {self.value:.3g}"


def identity_layer_results(channels=range(1, 9), sizes=(1, 3, 5), seed=0, height=7, width=6):
    """identity_config forward == input, bit for bit, for every kind/c/m."""
    rng = Rng(seed, "identity-layers")
    out = []
    with T.precision("double"):
        for kind in L.KINDS:
            worst = 0.0
            ok = True
            for c in channels:
                for m in sizes:
                    if kind == L.WEIGHTING and m != 1:
                        continue
                    bank = L.identity_config(kind, c, m)
                    x = T.tensor(rng.normal_array((2, c, height, width)))
                    sample = L.draw_joint([bank], rng)
                    y = L.bank_forward(x, bank, sample)
                    ok &= bool(np.array_equal(y.data, x.data))
                    worst = max(worst, float(np.abs(y.data - x.data).max()))
            out.append(Result(f"identity {kind}", worst, ok))
    return out


def identity_model_result(seed=0, batch=6):
    """Identity-configured blocks vs. blocks removed: same logits to 1e-6 relative."""
    spec = EnvSpec()
    with T.precision("double"):
        with_banks = build_world_model(spec, ModelConfig(sigma_init=0.0), Rng(seed))
        without = build_world_model(spec, ModelConfig(sigma_init=0.0, evade_blocks=False), Rng(seed))
        # the final noisy layer is present in both; give it the same noise
        r = Rng(seed, "identity-model")
        obs = T.tensor((r.uniform((batch, spec.frames * spec.channels, spec.height, spec.width)) < 0.3))
        actions = r.integers(0, spec.n_actions, size=batch)
        sample = with_banks.draw_reward_sample(r)
        sample_without = L.VariationalSample({"reward.final": sample.epsilon["reward.final"]})
        f1, r1 = with_banks.forward(obs, actions, sample)
        f2, r2 = without.forward(obs, actions, sample_without)
    rel = max(_rel(f1.data, f2.data), _rel(r1.data, r2.data))
    return Result("identity stacks inside world model", rel, rel <= IDENTITY_REL_TOL)


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def identity_suite(seed=0):
    return identity_layer_results(seed=seed) + [identity_model_result(seed)]


# gradients ------------------------------------------------------------------

def _swap_check(holder, key, f, h=1e-5):
    """grad_check on holder[key] (a dict entry or attribute) while f() uses it."""
    original = holder[key] if isinstance(holder, dict) else getattr(holder, key)

    def wrapped(xt):
        if isinstance(holder, dict):
            holder[key] = xt
        else:
            setattr(holder, key, xt)
        try:
            return f()
        finally:
            if isinstance(holder, dict):
                holder[key] = original
            else:
                setattr(holder, key, original)

    return T.grad_check(wrapped, original.data, h=h)


def grad_suite(seed=0):
    rng = Rng(seed, "grad-check")
    out = []
    with T.precision("double"):
        x = T.tensor(rng.normal_array((2, 3, 5, 6)))
        w = T.tensor(rng.normal_array((4, 3, 3, 3)))
        target = rng.normal_array((2, 4, 3, 3))
        conv_loss = lambda: T.sum_(T.mul(T.conv2d(xv["x"], xv["w"], 2, "SAME"), Tensor(target)))
        xv = {"x": x, "w": w}
        out.append(Result("conv2d input", _swap_check(xv, "x", conv_loss), None))
        out.append(Result("conv2d weight", _swap_check(xv, "w", conv_loss), None))
        tt = {"x": T.tensor(rng.normal_array((2, 4, 3, 3))), "w": T.tensor(rng.normal_array((4, 3, 3, 3)))}
        tgt = rng.normal_array((2, 3, 5, 6))
        tloss = lambda: T.sum_(T.mul(T.conv_transpose2d(tt["x"], tt["w"], 2, (5, 6)), Tensor(tgt)))
        out.append(Result("conv_transpose2d input", _swap_check(tt, "x", tloss), None))
        out.append(Result("conv_transpose2d weight", _swap_check(tt, "w", tloss), None))

        for kind, m in ((L.INTERACTION, 3), (L.WEIGHTING, 1), (L.TRANSLATION, 3)):
            bank = L.init_bank(kind, 3, m, rng, identity=False, sigma=0.3)
            sample = L.draw_joint([bank], rng)  # epsilon frozen for the whole check
            # keep every sigma entry away from 0 so the -h probe stays valid;
            # masked-out entries see epsilon = 0 and the mask, so this is inert
            bank.sigma.data += 0.5 * (1 - bank.mask)
            xin = T.tensor(rng.normal_array((2, 3, 5, 5)))
            tgt = Tensor(rng.normal_array((2, 3, 5, 5)))
            f = lambda: T.sum_(T.mul(T.square(L.bank_forward(xin, bank, sample)), tgt))
            out.append(Result(f"{kind} theta", _swap_check(bank, "theta", f), None))
            out.append(Result(f"{kind} sigma", _swap_check(bank, "sigma", f), None))

        out.extend(_model_grads(rng))
        out.append(_policy_grad(rng))
    for r in out:
        r.passed = r.value <= GRAD_TOL
    return out


def _model_grads(rng):
    spec = EnvSpec()
    model = build_world_model(spec, ModelConfig(hidden=4, reward_hidden=2, sigma_init=0.2), rng.split("model"))
    B = 3
    obs = T.tensor(rng.uniform((B, spec.frames * spec.channels, spec.height, spec.width)) < 0.3)
    actions = rng.integers(0, spec.n_actions, size=B)
    nxt = T.tensor(rng.uniform((B, spec.channels, spec.height, spec.width)) < 0.3)
    rew = rng.integers(0, len(spec.reward_buckets), size=B)
    sample = model.draw_reward_sample(rng)
    for bank in model.banks.values():
        bank.sigma.data += 0.5 * (1 - bank.mask)
    f = lambda: model.loss(obs, actions, nxt, rew, sample)[0]
    worst = 0.0
    for k in model.params:
        worst = max(worst, _swap_check(model.params, k, f))
    for bank in model.banks.values():
        worst = max(worst, _swap_check(bank, "theta", f), _swap_check(bank, "sigma", f))
    return [Result("world model loss (all parameters)", worst, None)]


def _policy_grad(rng):
    spec = EnvSpec()
    policy = PolicyNet(spec.frames * spec.channels, spec.height, spec.width, spec.n_actions, rng,
                       hidden=8, filters=4)
    B = 5
    obs = T.tensor(rng.uniform((B, spec.frames * spec.channels, spec.height, spec.width)) < 0.3)
    actions = rng.integers(0, spec.n_actions, size=B)
    logits, _ = policy.forward(obs)
    # old log-probs offset from the current ones so some ratios are clipped
    old_logp = T.log_softmax(logits).data[np.arange(B), actions] + rng.normal_array((B,)) * 0.3
    adv = rng.normal_array((B,))
    ret = rng.normal_array((B,))
    cfg = replace(LoopConfig(), entropy_bonus=0.05)
    f = lambda: policy_objective(policy, obs, actions, old_logp, adv, ret, cfg)
    worst = max(_swap_check(policy.params, k, f) for k in policy.params)
    return Result("policy objective (all parameters)", worst, None)
