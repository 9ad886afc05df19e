from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields
from typing import Optional

from ..errors import ConfigError, UsageError
from ..graph import GraphView
from ..model import ModelConfig
from ..sampling import parse_ratio

logger = logging.getLogger(__name__)

DEFAULT_REPS = {"wpdp": 100, "cpdp": 20}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    """
    Everything an `experiment` or `tune` run needs, read from a flat
    `key=value` file. The seed is not part of the file; it comes from --seed.

    Attributes:
        protocol: wpdp or cpdp.
        dataset: Dataset directory (wpdp).
        target: Target dataset directory (cpdp).
        sources: Source dataset directories (cpdp).
        view: cdg, ddg or msdg.
        reps: Repetitions (per source for cpdp); protocol default when unset.
        method: Label for reports; defaults to the model and view.
        sum_normalized_views: Build the multi-view graph from normalized view weights.
    """
    protocol: str = "wpdp"
    dataset: Optional[str] = None
    target: Optional[str] = None
    sources: tuple = ()
    view: str = "msdg"
    reps: Optional[int] = None
    hidden_size: int = 32
    graph_hops: int = 2
    lr: float = 0.001
    batch_size: int = 16
    mlp_hidden: tuple = (32, 16)
    sampling_ratio: object = "auto"
    max_epochs: int = 100
    weighted_aggregation: bool = False
    sum_normalized_views: bool = False
    method: Optional[str] = None
    base_dir: str = field(default=".", repr=False, compare=False)

    def __post_init__(self) -> None:
        self.protocol = str(self.protocol).lower()
        if self.protocol not in DEFAULT_REPS:
            raise ConfigError(f"protocol must be wpdp or cpdp, got '{self.protocol}'")
        self.view = GraphView.parse(self.view).value.lower()
        if self.reps is None:
            self.reps = DEFAULT_REPS[self.protocol]
        if int(self.reps) < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        self.sources = tuple(self.sources)
        self.mlp_hidden = tuple(int(x) for x in self.mlp_hidden)
        self.sampling_ratio = parse_ratio(self.sampling_ratio)
        if self.protocol == "wpdp" and not self.dataset:
            raise ConfigError("wpdp runs need a 'dataset' entry")
        if self.protocol == "cpdp" and (not self.target or not self.sources):
            raise ConfigError("cpdp runs need 'target' and 'sources' entries")

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    def dataset_paths(self) -> list[str]:
        if self.protocol == "wpdp":
            return [self.resolve(self.dataset)]
        return [self.resolve(self.target), *(self.resolve(s) for s in self.sources)]

    def check_paths(self) -> None:
        for p in self.dataset_paths():
            if not os.path.exists(p):
                raise UsageError(f"path does not exist: {p}")

    def model_config(self, seed: int = 0) -> ModelConfig:
        return ModelConfig(
            hidden_size=self.hidden_size,
            graph_hops=self.graph_hops,
            lr=self.lr,
            batch_size=self.batch_size,
            mlp_hidden=self.mlp_hidden,
            sampling_ratio=self.sampling_ratio,
            max_epochs=self.max_epochs,
            seed=seed,
            weighted_aggregation=self.weighted_aggregation,
        )

    def with_model(self, config: ModelConfig) -> RunConfig:
        """Copy with the model fields taken from `config`."""
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("hidden_size", "graph_hops", "lr", "batch_size", "mlp_hidden",
                    "sampling_ratio", "max_epochs", "weighted_aggregation"):
            values[key] = getattr(config, key)
        return RunConfig(**values)


_KEYS = {f.name: f for f in fields(RunConfig) if f.name != "base_dir"}


def _convert(key: str, raw: str, lineno: int):
    text = raw.strip()
    try:
        if key in ("reps", "hidden_size", "graph_hops", "batch_size", "max_epochs"):
            return int(text)
        if key == "lr":
            return float(text)
        if key in ("weighted_aggregation", "sum_normalized_views"):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if key == "sources":
            return tuple(s.strip() for s in text.split(",") if s.strip())
        if key == "mlp_hidden":
            return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value '{text}' for '{key}'") from None
    return text


def parse_run_config(text: str, base_dir: str = ".") -> RunConfig:
    '''
    Parse `key=value` lines. Blank lines and `#` comments are ignored; keys
    may appear once.
    '''
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"line {lineno}: '{key}' given twice")
        values[key] = _convert(key, raw, lineno)
    return RunConfig(base_dir=base_dir, **values)


def read_run_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_run_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_run_config(config: RunConfig) -> str:
    lines = []
    for key in _KEYS:
        value = getattr(config, key)
        if value is None and key != "sampling_ratio":
            continue
        if key == "sources" and not value:
            continue
        # written files may live elsewhere, so paths are stored resolved
        if key in ("dataset", "target"):
            value = config.resolve(value)
        elif key == "sources":
            value = tuple(config.resolve(s) for s in value)
        lines.append(f"{key}={_format(value)}")
    return "\n".join(lines) + "\n"


def write_run_config(config: RunConfig, path: str, header: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in header.splitlines():
            f.write(f"# {line}\n")
        f.write(format_run_config(config))
