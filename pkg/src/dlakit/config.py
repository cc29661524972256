"""Run configuration: flat ``key = value`` files, CLI overrides, provenance headers."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from . import __version__
from .dla import LaunchConfig
from .errors import DomainError
from .potential import SolverConfig

# keys that never influence results; left out of the hash and the header
_NON_RESULT_KEYS = ("workers", "out", "checkpoint", "checkpoint_every")


@dataclass(frozen=True)
class RunConfig:
    graph: str = "z3"
    particles: int = 1000
    seed: int | None = None
    launch_factor: float = 2.0
    launch_offset: int = 5
    escape_factor: float = 4.0
    max_retries: int = 1_000_000
    step_cap: int = 10**9
    sampler: str = "auto"
    box_radius: int = 8
    refine_factor: float = 1.5
    rel_tol: float = 1e-3
    max_refinements: int = 5
    out: str = ""
    checkpoint: str = ""
    checkpoint_every: int = 0
    workers: int = 1

    def launch(self) -> LaunchConfig:
        return LaunchConfig(self.launch_factor, self.launch_offset, self.escape_factor,
                            self.max_retries, self.step_cap, self.sampler)

    def solver(self, center="set") -> SolverConfig:
        return SolverConfig(self.box_radius, self.refine_factor, self.rel_tol,
                            self.max_refinements, center)

    def validate(self):
        if self.seed is None:
            raise DomainError("seed: a seed is mandatory")
        if self.particles < 1:
            raise DomainError("particles: must be >= 1")
        if self.workers < 1:
            raise DomainError("workers: must be >= 1")
        if self.checkpoint_every < 0:
            raise DomainError("checkpoint_every: must be >= 0")
        self.launch()
        self.solver()
        return self

    # serialization -------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    def result_dict(self) -> dict:
        d = asdict(self)
        for k in _NON_RESULT_KEYS:
            d.pop(k)
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.result_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def header(self, **extra) -> dict:
        h = {"version": __version__, "config_hash": self.config_hash(), "seed": self.seed,
             "family": self.graph, "config": self.result_dict()}
        h.update(extra)
        return h


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw: str):
    typ = _TYPES[key]
    raw = raw.strip()
    try:
        if typ.startswith("int"):
            if key == "seed" and raw.lower() in ("", "none"):
                return None
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise DomainError(f"{key}: cannot parse {raw!r} as {typ.split()[0]}") from None
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments, blank lines ignored)."""
    vals = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"line {no}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise DomainError(f"{key}: unknown configuration key (line {no})")
        if key in vals:
            raise DomainError(f"{key}: given twice (line {no})")
        vals[key] = _coerce(key, raw)
    return replace(base or RunConfig(), **vals)


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DomainError(f"config: cannot read {path}: {exc.strerror}") from exc
    return parse_config_text(text, base)


def merge(file_cfg: RunConfig | None, overrides: dict) -> RunConfig:
    """Flags beat the file, the file beats the defaults."""
    cfg = file_cfg or RunConfig()
    clean = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(clean) - set(_TYPES)
    if unknown:
        raise DomainError(f"{sorted(unknown)[0]}: unknown configuration key")
    return replace(cfg, **clean)
