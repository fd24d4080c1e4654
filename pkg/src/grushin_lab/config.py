"""Run configuration for the verifier: defaults, file loading and flag overrides."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli

from .chart import GrushinParams
from .errors import ConfigError, InvalidInput

SUITES = ("curvature", "cones", "conformal", "umbilic", "distance")
SEED_ENV = "GRUSHIN_LAB_SEED"


@dataclass
class SuiteConfig:
    p: int = 3
    q: int = 1
    alpha: float = 1.0
    seed: int = 42
    points: int = 200
    tol_scale: float = 1.0
    suites: list = field(default_factory=lambda: ["all"])
    tolerances: dict = field(default_factory=dict)
    jobs: int | None = None
    csv_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            GrushinParams(self.p, self.q, self.alpha)
        except InvalidInput as exc:
            raise ConfigError(f"params: {exc}") from None
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.points, int) or self.points < 1:
            raise ConfigError(f"points: must be a positive integer, got {self.points!r}")
        if not self.tol_scale > 0:
            raise ConfigError(f"tol_scale: must be positive, got {self.tol_scale!r}")
        if isinstance(self.suites, str):
            self.suites = [self.suites]
        for s in self.suites:
            if s not in SUITES + ("all",):
                raise ConfigError(f"suites: unknown suite {s!r} (choose from {', '.join(SUITES + ('all',))})")
        if not isinstance(self.tolerances, dict) or not all(isinstance(v, (int, float)) for v in self.tolerances.values()):
            raise ConfigError("tolerances: must map check ids to numbers")
        if self.jobs is not None and (not isinstance(self.jobs, int) or self.jobs < 1):
            raise ConfigError(f"jobs: must be a positive integer, got {self.jobs!r}")

    @property
    def params(self) -> GrushinParams:
        return GrushinParams(self.p, self.q, self.alpha)

    @property
    def suite_list(self) -> list[str]:
        return list(SUITES) if "all" in self.suites else [s for s in SUITES if s in self.suites]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def read_config_file(path) -> dict:
    """Parse a TOML or JSON document (chosen by suffix) into a plain dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomli.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return data


def write_config_file(cfg: SuiteConfig, path) -> Path:
    """JSON serialisation; ``from_dict(read_config_file(path))`` returns an equal config."""
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def resolve_config(flags: dict, file_path=None, environ=None) -> SuiteConfig:
    """Precedence: flags > file > environment seed > defaults."""
    environ = os.environ if environ is None else environ
    data: dict = {}
    if SEED_ENV in environ:
        try:
            data["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer: {environ[SEED_ENV]!r}") from None
    if file_path is not None:
        data.update(read_config_file(file_path))
    data.update({k: v for k, v in flags.items() if v is not None})
    return SuiteConfig.from_dict(data)
