"""Versioned run configuration stored as flat ``key = value`` text.

Two runs whose configs hash equal are comparable.  The seed is deliberately
left out of the hash: a run is identified by ``(config_hash, seed)``.
"""

import hashlib
from dataclasses import asdict, dataclass, fields, replace

CONFIG_VERSION = "1"
_HASHED_KEYS = ("target", "budget_execs", "budget_secs", "ring_k", "snapshot_s",
                "max_len", "version")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    target: str = "magic_header"
    budget_execs: int | None = 200_000
    budget_secs: float | None = None
    ring_k: int = 32
    snapshot_s: int = 256
    max_len: int = 4096
    seed: int = 0
    version: str = CONFIG_VERSION

    def validate(self):
        problems = []
        if self.budget_execs is None and self.budget_secs is None:
            problems.append("one of budget_execs / budget_secs must be set")
        if self.budget_execs is not None and self.budget_execs <= 0:
            problems.append(f"budget_execs must be > 0, got {self.budget_execs}")
        if self.budget_secs is not None and self.budget_secs <= 0:
            problems.append(f"budget_secs must be > 0, got {self.budget_secs}")
        for key in ("ring_k", "snapshot_s", "max_len"):
            if getattr(self, key) <= 0:
                problems.append(f"{key} must be > 0, got {getattr(self, key)}")
        if not self.target:
            problems.append("target must be named")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def replace(self, **changes):
        return replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if val is None else val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(key, val)
        return cls(**values).validate()

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    def config_hash(self):
        d = asdict(self)
        canon = "\n".join(f"{k}={d[k]}" for k in _HASHED_KEYS)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _parse(key, val):
    if val.lower() == "none":
        return None
    try:
        if key in ("budget_execs", "ring_k", "snapshot_s", "max_len", "seed"):
            return int(val, 0)
        if key == "budget_secs":
            return float(val)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {val!r}") from None
    return val
