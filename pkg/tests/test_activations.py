import numpy as np
import pytest

from evade import env as E
from evade.activations import dump_activations, read_pgm, write_pgm
from evade.env import EnvSpec
from evade.rng import Rng
from evade.world_model import ModelConfig, build_world_model

NAME = "reward.blockA.weighting"


@pytest.fixture
def model():
    return build_world_model(EnvSpec(), ModelConfig(), Rng(0))


def _obs():
    return E.reset(EnvSpec())[1]


def _grid(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def test_identity_weighting_passes_maps_through(model, tmp_path):
    dump_activations(model, _obs(), [NAME], tmp_path)
    d = tmp_path / NAME
    n = model.banks[NAME].c
    for c in range(n):
        assert (d / f"input_c{c}.csv").read_bytes() == (d / f"output_c{c}.csv").read_bytes()
        assert (d / f"input_c{c}.pgm").read_bytes() == (d / f"output_c{c}.pgm").read_bytes()


def test_weighting_factor_scales_one_channel(model, tmp_path):
    bank = model.banks[NAME]
    bank.theta.data[0, 0, 0, 0] = 1.93
    dump_activations(model, _obs(), [NAME], tmp_path)
    d = tmp_path / NAME
    np.testing.assert_allclose(_grid(d / "output_c0.csv"), 1.93 * _grid(d / "input_c0.csv"), rtol=1e-6)
    np.testing.assert_array_equal(_grid(d / "output_c1.csv"), _grid(d / "input_c1.csv"))
    lines = (d / "weighting_factors.csv").read_text().splitlines()
    assert lines[0] == "channel,theta,sigma,theta_tilde"
    assert len(lines) == bank.c + 1
    ch, theta, sigma, tt = lines[1].split(",")
    assert ch == "0" and float(theta) == pytest.approx(1.93) and float(tt) == float(theta)
    assert float(sigma) == pytest.approx(0.1)


def test_file_set_per_layer(model, tmp_path):
    names = ["reward.blockB.interaction", "reward.blockA.translation"]
    files = dump_activations(model, _obs(), names, tmp_path)
    for name in names:
        c = model.banks[name].c
        assert len(list((tmp_path / name).glob("*.csv"))) == 2 * c
        assert len(list((tmp_path / name).glob("*.pgm"))) == 2 * c
    assert not any(f.name == "weighting_factors.csv" for f in files)


def test_pgm_header_and_scaling(tmp_path):
    g = np.arange(12, dtype=float).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", g)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == len(b"P5\n4 3\n255\n") + 12
    pix, maxval = read_pgm(tmp_path / "a.pgm")
    assert maxval == 255 and pix[0, 0] == 0 and pix[-1, -1] == 255
    write_pgm(tmp_path / "c.pgm", np.full((2, 2), 7.0))
    assert not read_pgm(tmp_path / "c.pgm")[0].any()
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "bad.pgm", np.zeros(3))


def test_unknown_layer(model, tmp_path):
    with pytest.raises(KeyError):
        dump_activations(model, _obs(), ["reward.nope"], tmp_path)


def test_from_checkpoint_path(model, tmp_path):
    from evade import checkpoint as ckpt

    ckpt.save(tmp_path / "m.evde", model.named_tensors())
    a = dump_activations(tmp_path / "m.evde", _obs(), [NAME], tmp_path / "x")
    b = dump_activations(model, _obs(), [NAME], tmp_path / "y")
    for fa, fb in zip(a, b):
        assert fa.read_bytes() == fb.read_bytes()
