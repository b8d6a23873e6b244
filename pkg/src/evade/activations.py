"""Export reward-head feature maps around each noisy bank.

For every requested layer the input and output maps of one observation are
written per channel as CSV grids (raw values) and 8-bit binary PGM images
(min-max normalised per map). Weighting banks also get a CSV of their
per-channel factors.
"""
from pathlib import Path

import numpy as np

from . import layers as L
from . import tensor as T
from .env import EnvSpec
from .world_model import ModelConfig, WorldModel, build_world_model


def write_pgm(path, grid):
    """Binary P5 image, min-max normalised to 0..255 (constant maps become 0)."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"PGM needs a 2-D grid, got shape {g.shape}")
    lo, hi = g.min(), g.max()
    pix = np.zeros(g.shape, dtype=np.uint8) if hi == lo else np.round(255 * (g - lo) / (hi - lo)).astype(np.uint8)
    h, w = g.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pix.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pix = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return pix, maxval


def write_csv_grid(path, grid):
    np.savetxt(path, np.asarray(grid, dtype=np.float64), delimiter=",", fmt="%.9g")


def _load_model(checkpoint, env_spec, model_config):
    if isinstance(checkpoint, WorldModel):
        return checkpoint
    from . import checkpoint as ckpt
    from .rng import Rng

    blocks, _, _ = ckpt.load(checkpoint)
    model = build_world_model(env_spec or EnvSpec(), model_config or ModelConfig(), Rng(0))
    try:
        model.load_named_tensors(blocks)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{checkpoint}: does not match the configured model ({exc})") from None
    return model


def dump_activations(checkpoint, obs_stack, layer_names, out_dir, action=0, sample=None,
                     env_spec=None, model_config=None):
    """Write the maps for ``layer_names``; returns the list of files written.

    ``checkpoint`` is a checkpoint path or a WorldModel. ``sample`` defaults
    to the mean sample (every epsilon zero).
    """
    model = _load_model(checkpoint, env_spec, model_config)
    names = list(layer_names)
    unknown = [n for n in names if n not in model.banks]
    if unknown:
        raise KeyError(f"unknown layer(s) {unknown}; available: {sorted(model.banks)}")
    sample = model.mean_sample() if sample is None else sample
    obs = np.asarray(obs_stack, dtype=T.get_dtype())
    trace = {}
    model.forward(T.tensor(obs[None]), [action], sample, trace=trace)
    out = Path(out_dir)
    written = []
    for name in names:
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        x, y = trace[name]
        for tag, maps in (("input", x.data[0]), ("output", y.data[0])):
            for c, grid in enumerate(maps):
                for ext, writer in (("csv", write_csv_grid), ("pgm", write_pgm)):
                    path = d / f"{tag}_c{c}.{ext}"
                    writer(path, grid)
                    written.append(path)
        bank = model.banks[name]
        if bank.kind == L.WEIGHTING:
            tt = bank.theta_tilde(sample)
            path = d / "weighting_factors.csv"
            with open(path, "w") as f:
                f.write("channel,theta,sigma,theta_tilde\n")
                for k in range(bank.c):
                    vals = (bank.theta.data[k, k, 0, 0], bank.sigma.data[k, k, 0, 0], tt[k, k, 0, 0])
                    f.write(f"{k}," + ",".join(repr(float(v)) for v in vals) + "\n")
            written.append(path)
    return written
