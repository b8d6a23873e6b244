import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evade import layers as L
from evade import nn
from evade import tensor as T
from evade.layers import INTERACTION, TRANSLATION, WEIGHTING
from evade.rng import Rng

from oracles import conv2d_direct, interaction_direct, translation_direct, weighting_direct


def _sample(bank, eps=None):
    eps = np.zeros(bank.shape) if eps is None else eps
    return L.VariationalSample({bank.name: np.asarray(eps, dtype=bank.mask.dtype)})


# masks ---------------------------------------------------------------------

def test_weighting_mask_has_c_entries():
    m = L.structure_mask(WEIGHTING, 5, 1)
    assert m.shape == (5, 5, 1, 1) and m.sum() == 5
    np.testing.assert_array_equal(m[:, :, 0, 0], np.eye(5))


@pytest.mark.parametrize("m", [1, 3, 5])
def test_translation_mask_is_a_cross_on_own_channel(m):
    mask = L.structure_mask(TRANSLATION, 3, m)
    for k in range(3):
        assert mask[k].sum() == 2 * m - 1
        assert mask[k, k, m // 2, :].all() and mask[k, k, :, m // 2].all()
        assert mask[k, [c for c in range(3) if c != k]].sum() == 0


def test_interaction_mask_all_ones():
    assert L.structure_mask(INTERACTION, 3, 3, c_out=4).shape == (4, 3, 3, 3)
    assert L.structure_mask(INTERACTION, 3, 3).all()


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        L.identity_config(INTERACTION, 2, 2)


# reparameterisation ------------------------------------------------------------

def test_reparameterize_example(double):
    out = L.reparameterize(T.tensor([2.0]), T.tensor([0.5]), np.array([1.0]))
    assert out.data[0] == 3.0


def test_zero_sigma_collapses(nprng, double):
    theta = nprng.standard_normal(20)
    out = L.reparameterize(T.tensor(theta), T.tensor(np.zeros(20)), nprng.standard_normal(20))
    np.testing.assert_array_equal(out.data, theta)


def test_reparameterize_errors():
    with pytest.raises(T.ShapeError):
        L.reparameterize(T.tensor(np.ones(2)), T.tensor(np.ones(3)), np.ones(2))
    with pytest.raises(ValueError):
        L.reparameterize(T.tensor(np.ones(2)), T.tensor(-np.ones(2)), np.ones(2))


def test_reparameterized_std_matches_theta_sigma():
    eps = Rng(0).normal_array((100_000,))
    with T.precision("double"):
        tt = L.reparameterize(T.tensor(np.ones(100_000)), T.tensor(np.full(100_000, 0.3)), eps).data
    assert abs(tt.std() - 0.3) < 0.01


def test_reparameterize_gradients(double, nprng):
    eps = nprng.standard_normal(6)
    sigma = T.tensor(np.abs(nprng.standard_normal(6)) + 0.1)
    theta = T.tensor(nprng.standard_normal(6))
    assert T.grad_check(lambda t: T.sum_(T.square(L.reparameterize(t, sigma, eps))), theta.data) < 1e-6
    assert T.grad_check(lambda s: T.sum_(T.square(L.reparameterize(theta, s, eps))), sigma.data) < 1e-6


# forwards ------------------------------------------------------------------

def test_interaction_channel_sum(double):
    bank = L.NoisyFilterBank(INTERACTION, 2, 1, theta=np.ones((2, 2, 1, 1)))
    x = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
    y = L.interaction_forward(T.tensor(x), bank, _sample(bank)).data
    np.testing.assert_array_equal(y[0], x[0] + x[1])


def test_weighting_uniform_scaling(nprng, double):
    bank = L.NoisyFilterBank(WEIGHTING, 3, 1, theta=2 * np.eye(3)[:, :, None, None])
    x = nprng.standard_normal((3, 4, 4))
    np.testing.assert_array_equal(L.weighting_forward(T.tensor(x), bank, _sample(bank)).data, 2 * x)


def test_weighting_example_factors():
    # factors 1.93 and 0.57 realised through theta with sigma = 0
    bank = L.NoisyFilterBank(WEIGHTING, 2, 1, theta=np.diag([1.93, 0.57])[:, :, None, None])
    y = L.weighting_forward(T.tensor(np.ones((2, 2, 2))), bank, _sample(bank)).data
    np.testing.assert_allclose(y[0], 1.93, rtol=1e-6)
    np.testing.assert_allclose(y[1], 0.57, rtol=1e-6)


def test_weighting_factor_through_noise(double):
    # the same 1.93 reached as theta (1 + sigma eps)
    bank = L.NoisyFilterBank(WEIGHTING, 1, 1, theta=[[[[1.5]]]], sigma=[[[[0.5]]]])
    eps = np.full((1, 1, 1, 1), (1.93 / 1.5 - 1) / 0.5)
    y = L.weighting_forward(T.tensor(np.full((1, 2, 2), 2.0)), bank, _sample(bank, eps)).data
    np.testing.assert_allclose(y, 3.86, rtol=1e-12)


def test_translation_one_hot_shift(nprng, double):
    c, m = 2, 3
    theta = np.zeros((c, c, m, m))
    for k in range(c):
        theta[k, k, 1, 0] = 1  # centre row, left cell
    bank = L.NoisyFilterBank(TRANSLATION, c, m, theta=theta)
    x = nprng.standard_normal((c, 4, 5))
    y = L.translation_forward(T.tensor(x), bank, _sample(bank)).data
    np.testing.assert_array_equal(y[:, :, 1:], x[:, :, :-1])
    np.testing.assert_array_equal(y[:, :, 0], 0)


def test_translation_mask_applies_to_theta():
    theta = np.ones((2, 2, 3, 3))
    bank = L.NoisyFilterBank(TRANSLATION, 2, 3, theta=theta)
    assert bank.theta.data.sum() == 2 * 5


def _random_bank(kind, c, m, rng, c_out=None):
    mask = L.structure_mask(kind, c, m, c_out)
    theta = rng.standard_normal(mask.shape) * mask
    sigma = np.abs(rng.standard_normal(mask.shape)) * mask
    return L.NoisyFilterBank(kind, c, m, c_out=c_out, theta=theta, sigma=sigma, name=f"{kind}{c}{m}")


@pytest.mark.parametrize("prec,tol", [("single", 1e-5), ("double", 1e-10)])
def test_forwards_match_oracles(prec, tol):
    rng = np.random.default_rng(21)
    r = Rng(21)
    with T.precision(prec):
        for trial in range(60):
            kind = L.KINDS[trial % 3]
            c = int(rng.integers(1, 5))
            m = 1 if kind == WEIGHTING else int(rng.choice([1, 3, 5]))
            bank = _random_bank(kind, c, m, rng)
            sample = L.draw_joint([bank], r)
            x = rng.standard_normal((c, int(rng.integers(1, 7)), int(rng.integers(1, 7))))
            y = L.bank_forward(T.tensor(x), bank, sample).data
            tt = (bank.theta.data.astype(np.float64) * (1 + bank.sigma.data * sample.epsilon[bank.name]))
            xd = x.astype(y.dtype).astype(np.float64)
            if kind == INTERACTION:
                ref = interaction_direct(xd, tt)
            elif kind == WEIGHTING:
                ref = weighting_direct(xd, tt[np.arange(c), np.arange(c), 0, 0])
            else:
                ref = translation_direct(xd, tt)
            np.testing.assert_allclose(ref, conv2d_direct(xd, tt), rtol=1e-12, atol=1e-12)
            scale = max(np.abs(ref).max(), 1e-30)
            assert np.abs(y - ref).max() / scale <= tol


def test_channel_mismatch_errors():
    bank = L.identity_config(WEIGHTING, 3, 1)
    with pytest.raises(T.ShapeError):
        L.weighting_forward(T.tensor(np.zeros((2, 3, 3))), bank, L.mean_sample([bank]))
    with pytest.raises(ValueError):
        L.translation_forward(T.tensor(np.zeros((3, 3, 3))), bank, L.mean_sample([bank]))


def test_weighting_never_mixes_channels(nprng):
    bank = _random_bank(WEIGHTING, 4, 1, nprng)
    sample = L.draw_joint([bank], Rng(0))
    x = nprng.standard_normal((4, 3, 3))
    y0 = L.weighting_forward(T.tensor(x), bank, sample).data
    x[2] += 5
    y1 = L.weighting_forward(T.tensor(x), bank, sample).data
    changed = np.flatnonzero(np.abs(y1 - y0).reshape(4, -1).max(axis=1) > 0)
    assert list(changed) == [2]


@pytest.mark.parametrize("kind", L.KINDS)
def test_shape_preserved(kind):
    bank = L.identity_config(kind, 3, 1 if kind == WEIGHTING else 5)
    y = L.bank_forward(T.tensor(np.ones((2, 3, 6, 7))), bank, L.mean_sample([bank]))
    assert y.shape == (2, 3, 6, 7)


# identity constructors -----------------------------------------------------

@pytest.mark.parametrize("kind,c,m", [(INTERACTION, 3, 3), (WEIGHTING, 5, 1), (TRANSLATION, 2, 5)])
def test_identity_examples(kind, c, m, nprng, double):
    bank = L.identity_config(kind, c, m)
    x = nprng.standard_normal((c, 6, 6))
    np.testing.assert_array_equal(L.bank_forward(T.tensor(x), bank, L.draw_joint([bank], Rng(1))).data, x)
    assert not bank.sigma.data.any()


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(L.KINDS), st.integers(1, 8), st.sampled_from([1, 3, 5]),
       st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_identity_property(kind, c, m, H, W, seed):
    if kind == WEIGHTING:
        m = 1
    rng = np.random.default_rng(seed)
    with T.precision("double"):
        bank = L.identity_config(kind, c, m)
        x = rng.standard_normal((c, H, W)) * 10 ** rng.uniform(-3, 3)
        y = L.bank_forward(T.tensor(x), bank, L.draw_joint([bank], Rng(seed)))
        assert np.array_equal(y.data, x)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(L.KINDS), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_identity_stack_inside_network(kinds, seed):
    """conv -> identity stack -> conv equals conv -> conv."""
    rng = np.random.default_rng(seed)
    with T.precision("double"):
        w1 = T.tensor(rng.standard_normal((3, 2, 3, 3)))
        w2 = T.tensor(rng.standard_normal((2, 3, 3, 3)))
        x = T.tensor(rng.standard_normal((2, 2, 5, 5)))
        h = T.relu(T.conv2d(x, w1, 1, "SAME"))
        plain = T.conv2d(h, w2, 1, "SAME").data
        for i, kind in enumerate(kinds):
            bank = L.identity_config(kind, 3, 1 if kind == WEIGHTING else 3, name=f"b{i}")
            h = L.bank_forward(h, bank, L.draw_joint([bank], Rng(seed, (i,))))
        stacked = T.conv2d(h, w2, 1, "SAME").data
        assert np.abs(stacked - plain).max() <= 1e-6 * max(np.abs(plain).max(), 1e-30)


# sampling ------------------------------------------------------------------

def test_zero_sigma_sample_is_mean(nprng):
    bank = _random_bank(INTERACTION, 2, 3, nprng)
    bank.sigma.data[:] = 0
    s = L.draw_joint([bank], Rng(0))
    np.testing.assert_array_equal(s.theta_tilde(bank), bank.theta.data)


def test_samples_differ_across_streams_and_repeat_within(nprng):
    bank = _random_bank(TRANSLATION, 3, 3, nprng)
    a = L.draw_joint([bank], Rng(0, ("a",)))
    b = L.draw_joint([bank], Rng(0, ("b",)))
    a2 = L.draw_joint([bank], Rng(0, ("a",)))
    assert np.any(a.theta_tilde(bank)[bank.mask > 0] != b.theta_tilde(bank)[bank.mask > 0])
    np.testing.assert_array_equal(a.epsilon[bank.name], a2.epsilon[bank.name])


def test_masked_out_epsilon_is_zero(nprng):
    bank = _random_bank(TRANSLATION, 3, 5, nprng)
    eps = L.draw_epsilon(bank, Rng(0)).epsilon[bank.name]
    assert not eps[bank.mask == 0].any()
    assert np.all(eps[bank.mask > 0] != 0)


def test_sample_is_frozen(nprng):
    bank = _random_bank(WEIGHTING, 2, 1, nprng)
    s = L.draw_epsilon(bank, Rng(0))
    with pytest.raises(ValueError):
        s.epsilon[bank.name][0, 0, 0, 0] = 1.0
    x = T.tensor(nprng.standard_normal((2, 3, 3)))
    np.testing.assert_array_equal(L.bank_forward(x, bank, s).data, L.bank_forward(x, bank, s).data)


def test_theta_tilde_statistics():
    """1e5 draws: mean within 3 CLT sigma of theta, std within 2% of |theta sigma|."""
    n = 100_000
    rng = np.random.default_rng(0)
    bank = _random_bank(TRANSLATION, 2, 3, rng)
    bank.sigma.data[:] = np.abs(rng.uniform(0.05, 0.5, bank.shape)) * bank.mask
    r = Rng(5)
    draws = np.stack([L.draw_epsilon(bank, r).epsilon[bank.name] for _ in range(n)])
    tt = bank.theta.data.astype(np.float64) * (1 + bank.sigma.data.astype(np.float64) * draws)
    on = bank.mask > 0
    theta, sd = bank.theta.data[on].astype(np.float64), np.abs(bank.theta.data * bank.sigma.data)[on]
    assert np.all(np.abs(tt.mean(axis=0)[on] - theta) <= 3 * sd / np.sqrt(n))
    assert np.all(np.abs(tt.std(axis=0)[on] - sd) <= 0.02 * sd)


# training keeps the structure ------------------------------------------------

def test_optimizer_steps_keep_mask_and_sigma(nprng):
    bank = _random_bank(TRANSLATION, 3, 3, nprng)
    opt = nn.Adam(bank.parameters(), lr=0.5)
    r = Rng(0)
    for i in range(20):
        x = T.tensor(nprng.standard_normal((2, 3, 4, 4)))
        opt.zero_grad()
        loss = T.mean(T.square(L.bank_forward(x, bank, L.draw_joint([bank], r.split(i)))))
        loss.backward()
        opt.step()
        bank.project()
        assert not bank.theta.data[bank.mask == 0].any()
        assert not bank.sigma.data[bank.mask == 0].any()
        assert (bank.sigma.data >= 0).all()
