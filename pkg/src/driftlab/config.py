"""Sectioned key/value configuration files.

Example::

    [mesh]
    dim = 3
    level = 4

    [coefficients]
    E = [0, 0, 0]
    f = 100

    [drift]
    kind = concentrating
    beta = 4.0

    [sweep]
    n_list = [1, 2, 4, 8, 16, 32]

Values are typed as int, real, list (``[a, b, ...]``, nestable) or string;
expressions such as ``sin(pi*x1)`` stay strings. Lines starting with ``#``
or ``;`` are comments.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


def parse_value(text):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"unterminated list: {text!r}")
        return [parse_value(item) for item in _split_top(text[1:-1])]
    for cast in (int, float):
        try:
            value = cast(text)
        except ValueError:
            continue
        if math.isfinite(value):
            return value
    return text


def _split_top(body):
    items, depth, start = [], 0, 0
    for i, ch in enumerate(body):
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        elif ch == "," and depth == 0:
            items.append(body[start:i])
            start = i + 1
    tail = body[start:]
    if tail.strip() or items:
        items.append(tail)
    return [s for s in (it.strip() for it in items) if s != ""] if body.strip() else []


def format_value(value):
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    """Every parameter of an experiment run; defaults give the 3D concentrating run."""

    experiment: str = dataclasses.field(default="homogenization", metadata={"section": "run"})
    seed: int = dataclasses.field(default=0, metadata={"section": "run"})
    output: str = dataclasses.field(default="", metadata={"section": "run"})

    dim: int = dataclasses.field(default=3, metadata={"section": "mesh"})
    box: list = dataclasses.field(default=None, metadata={"section": "mesh"})
    divisions: int = dataclasses.field(default=1, metadata={"section": "mesh"})
    level: int = dataclasses.field(default=4, metadata={"section": "mesh"})

    A: object = dataclasses.field(default=1, metadata={"section": "coefficients"})
    E: object = dataclasses.field(default=None, metadata={"section": "coefficients"})
    a: object = dataclasses.field(default=0, metadata={"section": "coefficients"})
    f: object = dataclasses.field(default=100, metadata={"section": "coefficients"})
    alpha: float = dataclasses.field(default=1.0, metadata={"section": "coefficients"})
    gamma: float = dataclasses.field(default=0.0, metadata={"section": "coefficients"})
    p: float = dataclasses.field(default=4.0, metadata={"section": "coefficients"})
    u_exact: str = dataclasses.field(default="", metadata={"section": "coefficients"})

    kind: str = dataclasses.field(default="concentrating", metadata={"section": "drift"})
    beta: float = dataclasses.field(default=4.0, metadata={"section": "drift"})
    x0: list = dataclasses.field(default=None, metadata={"section": "drift"})
    direction: list = dataclasses.field(default=None, metadata={"section": "drift"})
    radius: float = dataclasses.field(default=0.5, metadata={"section": "drift"})
    f_oscillation: float = dataclasses.field(default=0.0, metadata={"section": "drift"})

    n_list: list = dataclasses.field(default_factory=lambda: [1, 2, 4, 8, 16, 32],
                                     metadata={"section": "sweep"})
    m_list: list = dataclasses.field(default_factory=lambda: [1, 2, 4], metadata={"section": "sweep"})
    q_list: list = dataclasses.field(default_factory=lambda: [1, 2], metadata={"section": "sweep"})
    t_list: list = dataclasses.field(default_factory=lambda: [2, 4, 6], metadata={"section": "sweep"})
    delta_list: list = dataclasses.field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
                                         metadata={"section": "sweep"})
    gamma_list: list = dataclasses.field(default_factory=lambda: [1, 10], metadata={"section": "sweep"})
    levels: list = dataclasses.field(default_factory=lambda: [3, 4, 5, 6], metadata={"section": "sweep"})
    dictionary_size: int = dataclasses.field(default=6, metadata={"section": "sweep"})

    def __post_init__(self):
        if self.box is None:
            self.box = [[0.0, 1.0] for _ in range(self.dim)]
        if self.E is None:
            self.E = [0] * self.dim
        for name in ("n_list", "m_list", "q_list", "t_list", "delta_list", "gamma_list", "levels"):
            if not isinstance(getattr(self, name), list) or not getattr(self, name):
                raise ConfigError(f"{name} must be a nonempty list")
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        return to_text(self)

    @property
    def hash(self):
        return hashlib.sha256(to_text(self).encode()).hexdigest()[:16]


@dataclass
class ControlConfig:
    """Control-in-coefficients run."""

    dim: int = dataclasses.field(default=2, metadata={"section": "mesh"})
    box: list = dataclasses.field(default=None, metadata={"section": "mesh"})
    divisions: int = dataclasses.field(default=1, metadata={"section": "mesh"})
    level: int = dataclasses.field(default=3, metadata={"section": "mesh"})

    A: object = dataclasses.field(default=1, metadata={"section": "coefficients"})
    a: object = dataclasses.field(default=0, metadata={"section": "coefficients"})
    f: object = dataclasses.field(default="10*x1", metadata={"section": "coefficients"})
    alpha: float = dataclasses.field(default=1.0, metadata={"section": "coefficients"})

    G: str = dataclasses.field(default="s**2", metadata={"section": "control"})
    G_s: str = dataclasses.field(default="", metadata={"section": "control"})
    growth: list = dataclasses.field(default_factory=lambda: [0.0, 0.0], metadata={"section": "control"})
    mu: float = dataclasses.field(default=1e-2, metadata={"section": "control"})
    p: float = dataclasses.field(default=3.0, metadata={"section": "control"})
    basis: list = dataclasses.field(
        default_factory=lambda: [[1, 0], [0, 1], ["sin(pi*x2)", "sin(pi*x1)"]],
        metadata={"section": "control"})
    lower: float = dataclasses.field(default=-5.0, metadata={"section": "control"})
    upper: float = dataclasses.field(default=5.0, metadata={"section": "control"})
    c0: list = dataclasses.field(default_factory=lambda: [2.0, -1.5, 1.0], metadata={"section": "control"})
    steps: int = dataclasses.field(default=60, metadata={"section": "control"})

    seed: int = dataclasses.field(default=0, metadata={"section": "run"})
    output: str = dataclasses.field(default="", metadata={"section": "run"})

    def __post_init__(self):
        if self.box is None:
            self.box = [[0.0, 1.0] for _ in range(self.dim)]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def hash(self):
        return hashlib.sha256(to_text(self).encode()).hexdigest()[:16]


def to_text(cfg):
    """Serialize a config dataclass to the sectioned text format (unset keys omitted)."""
    sections = {}
    for fl in fields(cfg):
        if getattr(cfg, fl.name) is None:
            continue
        sections.setdefault(fl.metadata["section"], []).append(
            f"{fl.name} = {format_value(getattr(cfg, fl.name))}")
    return "\n".join(f"[{name}]\n" + "\n".join(lines) + "\n" for name, lines in sections.items())


def from_text(text, cls=ExperimentConfig, base=None):
    """Parse text into ``cls``; keys override ``base`` (or the class defaults)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = {fl.name: fl.metadata["section"] for fl in fields(cls)}
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            if known[key] != section:
                raise ConfigError(f"key {key!r} belongs in section [{known[key]}], not [{section}]")
            values[key] = parse_value(raw)
    if base is not None:
        merged = {fl.name: getattr(base, fl.name) for fl in fields(cls)}
        merged.update(values)
        values = merged
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load(path, cls=ExperimentConfig, base=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
    return from_text(text, cls, base)
