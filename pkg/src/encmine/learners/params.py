"""Hyperparameter records for every learner family."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple, Union


def _from(cls, m):
    m = dict(m or {})
    names = {f.name for f in fields(cls)}
    unknown = set(m) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**m)


@dataclass(frozen=True)
class TreeEnsembleParams:
    n_estimators: int = 100
    max_features: Union[int, float, str, None] = "sqrt"
    min_samples_leaf: int = 1
    max_depth: Optional[int] = None
    learning_rate: float = 0.1
    subsample: float = 1.0
    seed: int = 0
    bootstrap: bool = True
    reg_lambda: float = 1.0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")

    to_mapping = asdict

    @classmethod
    def from_mapping(cls, m):
        return _from(cls, m)


@dataclass(frozen=True)
class RnnParams:
    cell: str = "LSTM"
    bidirectional: bool = False
    layers: int = 1
    hidden: int = 16
    epochs: int = 60
    batch: int = 32
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.cell not in ("LSTM", "GRU"):
            raise ValueError(f"cell must be LSTM or GRU, got {self.cell!r}")
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be >= 1")

    to_mapping = asdict

    @classmethod
    def from_mapping(cls, m):
        return _from(cls, m)


@dataclass(frozen=True)
class CnnParams:
    blocks: int = 1
    channels: Tuple[int, ...] = (8,)
    input_shape: Tuple[int, int] = (15, 38)
    epochs: int = 40
    batch: int = 32
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channels must be positive")
        if self.input_shape not in ((15, 38), (38, 38)):
            raise ValueError("input_shape must be 15x38 or 38x38")

    def widths(self):
        """Stem width followed by one width per block (last entry repeats)."""
        ch = list(self.channels)
        return [ch[min(i, len(ch) - 1)] for i in range(self.blocks + 1)]

    def to_mapping(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_mapping(cls, m):
        return _from(cls, m)
