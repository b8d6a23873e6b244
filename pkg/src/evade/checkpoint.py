"""Binary checkpoint format.

Layout (little-endian)::

    b"EVDE"  u32 version=1  u32 block_count
    per block: u16 name_len, name (UTF-8), u8 ndim, u32 dims[ndim], f32 payload (row-major)
    u64 seed, u32 blob_len, RNG state blob

Every tensor is stored as float32, so float32 tensors round-trip bit-exactly.
"""
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EVDE"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path, blocks, seed=0, rng_blob=b""):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blocks)))
        for name, arr in blocks.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        f.write(struct.pack("<QI", seed & 0xFFFFFFFFFFFFFFFF, len(rng_blob)))
        f.write(rng_blob)


def load(path):
    """Returns (blocks, seed, rng_blob)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 12
        blocks = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            if off + 4 * size > len(data):
                raise CheckpointError(f"{path}: truncated payload for block {name!r}")
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
            off += 4 * size
            blocks[name] = arr.astype(np.float32)
        seed, blob_len = struct.unpack_from("<QI", data, off)
        off += 12
        blob = data[off:off + blob_len]
        if len(blob) != blob_len:
            raise CheckpointError(f"{path}: truncated RNG blob")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return blocks, seed, blob


def dataset_blocks(dataset):
    if len(dataset) == 0:
        return {}
    obs, actions, rewards, nxt = dataset.arrays()
    return {"data/obs": obs, "data/actions": actions.astype(np.float32),
            "data/rewards": rewards.astype(np.float32), "data/next": nxt}


def dataset_from_blocks(blocks):
    from .world_model import Dataset

    ds = Dataset()
    if "data/obs" in blocks:
        for o, a, r, n in zip(blocks["data/obs"], blocks["data/actions"], blocks["data/rewards"],
                              blocks["data/next"]):
            ds.append(o, int(a), int(r), n)
    return ds


def checkpoint_path(out_dir, iteration):
    return Path(out_dir) / f"checkpoint_{iteration:03d}.evde"


def save_run_state(out_dir, iteration, model, policy, dataset, report, rng):
    """Write the iteration checkpoint and the report CSV into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    blocks = {}
    blocks.update(model.named_tensors())
    blocks.update(policy.named_tensors())
    blocks.update(dataset_blocks(dataset))
    blocks["loop/iteration"] = np.array([iteration], dtype=np.float32)
    save(checkpoint_path(out_dir, iteration), blocks, seed=rng.seed, rng_blob=rng.state_bytes())
    (Path(out_dir) / "report.csv").write_text(report.to_csv())


def report_rows_before(checkpoint, start_iter):
    """Report rows preceding start_iter, read from the run directory."""
    from .agent import TrainingReport

    path = Path(checkpoint).parent / "report.csv"
    if not path.exists():
        raise CheckpointError(f"cannot resume: {path} not found")
    rows = TrainingReport.from_csv(path.read_text()).rows
    return [r for r in rows if r["iteration"] < start_iter]
