"""JSON run configuration.

Example::

    {
      "seed": 3,
      "out": "runs/s3",
      "evade": "on",
      "precision": "single",
      "env": {"layout": ["...G....", "...", ".g.Ag..."], "step_cap": 50},
      "model": {"hidden": 16, "lr": 0.001},
      "loop": {"iterations": 30, "k_real": 200}
    }

Every key is optional. Unknown keys at any level raise :class:`ConfigError`.
"""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .agent import LoopConfig
from .env import EnvSpec
from .world_model import ModelConfig


class ConfigError(ValueError):
    pass


def _section(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"'{where}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        default = getattr(cls, f.name, None)
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"'{where}.{f.name}' must be true or false")
        elif isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"'{where}.{f.name}' must be an integer")
        elif isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"'{where}.{f.name}' must be a number")
            v = float(v)
        elif isinstance(default, tuple):
            if not isinstance(v, list):
                raise ConfigError(f"'{where}.{f.name}' must be a list")
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{where}': {exc}") from None


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    evade: bool = True
    precision: str = "single"
    env: EnvSpec = field(default_factory=EnvSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
        seed = data.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("'seed' must be a non-negative integer")
        out = data.get("out", cls.out)
        if not isinstance(out, str) or not out:
            raise ConfigError("'out' must be a non-empty string")
        precision = data.get("precision", "single")
        if precision not in ("single", "double"):
            raise ConfigError("'precision' must be 'single' or 'double'")
        return cls(seed=seed, out=out, evade=parse_evade(data.get("evade", True)),
                   precision=precision,
                   env=_section(EnvSpec, data.get("env"), "env"),
                   model=_section(ModelConfig, data.get("model"), "model"),
                   loop=_section(LoopConfig, data.get("loop"), "loop"))

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self):
        env = asdict(self.env)
        env["layout"] = list(env["layout"])
        env["reward_buckets"] = list(env["reward_buckets"])
        return {"seed": self.seed, "out": self.out, "evade": "on" if self.evade else "off",
                "precision": self.precision, "env": env, "model": asdict(self.model),
                "loop": asdict(self.loop)}

    def echo(self, out_dir=None):
        """Write the resolved config to <out>/config.json; returns the path."""
        d = Path(out_dir or self.out)
        d.mkdir(parents=True, exist_ok=True)
        path = d / "config.json"
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def parse_evade(value):
    if isinstance(value, bool):
        return value
    if value in ("on", "off"):
        return value == "on"
    raise ConfigError("'evade' must be \"on\" or \"off\"")
