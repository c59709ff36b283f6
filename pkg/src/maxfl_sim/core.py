"""Shared value types, sigmoid math and the seeded stream contract."""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np

# Flat parameter vector of a model; always float64, always finite.
ModelParams = np.ndarray


class ConfigError(ValueError):
    """Invalid configuration or incompatible inputs."""


class WeightMode(str, enum.Enum):
    SIGMOID_DERIVATIVE = "sigmoid_derivative"
    RAW_SIGMOID = "raw_sigmoid"


class LossBasis(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def weight_from_gap(gap: float, mode: WeightMode = WeightMode.SIGMOID_DERIVATIVE) -> float:
    """Aggregation weight for an appeal gap ``F_k(w) - rho_k``.

    ``SIGMOID_DERIVATIVE`` is the bell curve s(1-s), peaking at 0.25 for gap 0.
    ``RAW_SIGMOID`` returns s itself and grows with the reported gap.
    """
    mode = WeightMode(mode)
    if mode is WeightMode.RAW_SIGMOID:
        return sigmoid(gap)
    # s(1-s) = e^{-|x|} / (1 + e^{-|x|})^2, exactly even in x
    e = math.exp(-abs(gap))
    return e / ((1.0 + e) * (1.0 + e))


def appeals(loss: float, rho: float) -> bool:
    """True iff the model appeals to a client: strictly below its threshold."""
    return loss < rho


def neumaier_sum(values: Iterable[float]) -> float:
    total = 0.0
    comp = 0.0
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def neumaier_vsum(vectors: Iterable[np.ndarray]) -> np.ndarray:
    """Coordinate-wise compensated sum, accumulated in iteration order."""
    total = None
    comp = None
    for v in vectors:
        v = np.asarray(v, dtype=np.float64)
        if total is None:
            total = v.copy()
            comp = np.zeros_like(total)
            continue
        t = total + v
        big = np.abs(total) >= np.abs(v)
        comp += np.where(big, (total - t) + v, (v - t) + total)
        total = t
    if total is None:
        raise ValueError("neumaier_vsum of an empty sequence")
    return total + comp


def check_finite(params: ModelParams) -> bool:
    return bool(np.all(np.isfinite(params)))


_NO_INDEX = -1


@dataclass(frozen=True)
class RngStream:
    """A named random stream: ``(seed, client, round, purpose)``.

    Streams are derived through ``SeedSequence`` spawn keys feeding a
    counter-based Philox generator, so a stream only depends on its own id,
    never on how many draws other streams have made.
    """

    seed: int
    client: int = _NO_INDEX
    round: int = _NO_INDEX
    purpose: str = ""

    def child(self, *, client: int | None = None, round: int | None = None,
              purpose: str | None = None) -> "RngStream":
        return RngStream(
            self.seed,
            self.client if client is None else client,
            self.round if round is None else round,
            self.purpose if purpose is None else purpose,
        )

    def spawn_key(self) -> tuple[int, int, int]:
        tag = zlib.crc32(self.purpose.encode("utf-8"))
        return (self.client + 1, self.round + 1, tag)

    def generator(self) -> np.random.Generator:
        if self.client < _NO_INDEX or self.round < _NO_INDEX:
            raise ValueError(f"negative stream index in {self!r}")
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=self.spawn_key())
        return np.random.Generator(np.random.Philox(ss))
