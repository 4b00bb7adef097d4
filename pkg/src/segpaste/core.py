"""Shared domain types, the class map and the deterministic random stream.

Random numbers
--------------
Every random decision in the toolkit is drawn from :class:`Rng`, a
counter-based generator built on the SplitMix64 finalizer::

    fmix64(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                return z ^ (z >> 31)                      (all mod 2**64)

    key      = fmix64(seed ^ fmix64(stream ^ 0x9E3779B97F4A7C15))
    output_n = fmix64(key + n * 0x9E3779B97F4A7C15),  n = 1, 2, 3, ...

Only 64-bit integer arithmetic is involved, so the integer sequence is the
same on every platform, and a block of outputs can be computed at once with
numpy. Streams are derived from ``(seed, epoch, sample_index)`` by
:func:`derive_rng`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

IGNORE = 255
MAX_CLASSES = 255

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_M53 = 2.0**-53


def fmix64(z: int) -> int:
    """SplitMix64 output finalizer; a bijection on 64-bit integers."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _M1) & _MASK64
    z = ((z ^ (z >> 27)) * _M2) & _MASK64
    return z ^ (z >> 31)


def _fmix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class RngState:
    """Seed and stream identifying one reproducible random sequence."""

    seed: int
    stream: int

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= v <= _MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")


def derive_rng(global_seed: int, epoch: int, sample_index: int) -> RngState:
    """Stream for one sample in one epoch.

    ``epoch`` and ``sample_index`` are packed into 64 bits and scrambled with
    :func:`fmix64`, which is a bijection, so distinct pairs never share a
    stream.
    """
    if not 0 <= epoch < 2**32 or not 0 <= sample_index < 2**32:
        raise ValueError("epoch and sample_index must fit in 32 bits")
    return RngState(global_seed & _MASK64, fmix64((epoch << 32) | sample_index))


class Rng:
    """Counter-based generator over an :class:`RngState`.

    Mutable: each draw advances an internal counter. Two instances built
    from equal states produce identical draws.
    """

    def __init__(self, state: RngState | int):
        if isinstance(state, int):
            state = RngState(state & _MASK64, 0)
        self.state = state
        self._key = fmix64(state.seed ^ fmix64(state.stream ^ _GAMMA))
        self.counter = 0

    @classmethod
    def coerce(cls, rng: "Rng | RngState | int") -> "Rng":
        return rng if isinstance(rng, Rng) else cls(rng)

    def next_u64(self) -> int:
        self.counter += 1
        return fmix64(self._key + self.counter * _GAMMA)

    def u64_array(self, n: int) -> np.ndarray:
        start = self.counter
        self.counter += n
        idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        return _fmix64_array(np.uint64(self._key) + idx * np.uint64(_GAMMA))

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _TWO_M53

    def random_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def integers(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = (1 << 64) % n
        while True:
            u = self.next_u64()
            if u >= threshold:
                return u % n

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        pairs = (n + 1) // 2
        u = self.u64_array(2 * pairs) >> np.uint64(11)
        u1 = (u[0::2].astype(np.float64) + 1.0) * _TWO_M53  # (0, 1]
        u2 = u[1::2].astype(np.float64) * _TWO_M53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, order="C", copy=True)
    a.flags.writeable = False
    return a


class Raster:
    """Multispectral image, band-sequential ``(bands, height, width)`` float64.

    ``encoding`` remembers the on-disk sample type the raster was read from
    (``"u8"``, ``"u16"`` or ``"f32"``) so writers can preserve it.
    """

    __slots__ = ("samples", "encoding")

    def __init__(self, samples, encoding: str | None = None):
        a = np.asarray(samples, dtype=np.float64)
        if a.ndim != 3:
            raise ValueError(f"raster samples must be (bands, height, width), got shape {a.shape}")
        if min(a.shape) < 1:
            raise ValueError(f"raster dimensions must be >= 1, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("raster samples must be finite")
        object.__setattr__(self, "samples", _readonly(a))
        object.__setattr__(self, "encoding", encoding)

    def __setattr__(self, name, value):
        raise AttributeError("Raster is immutable")

    @property
    def bands(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    def __repr__(self):
        return f"Raster(bands={self.bands}, height={self.height}, width={self.width})"


class SemanticMask:
    """Per-pixel class ids, row-major ``(height, width)`` uint8; 255 is IGNORE."""

    __slots__ = ("values",)

    def __init__(self, values):
        raw = np.asarray(values)
        if raw.ndim != 2 or min(raw.shape) < 1:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {raw.shape}")
        if raw.dtype != np.uint8:
            if not (np.issubdtype(raw.dtype, np.integer) or raw.dtype == bool):
                raise ValueError(f"mask values must be integers, got dtype {raw.dtype}")
            if raw.size and (raw.min() < 0 or raw.max() > IGNORE):
                raise ValueError("mask values must lie in [0, 255]")
            raw = raw.astype(np.uint8)
        object.__setattr__(self, "values", _readonly(raw))

    def __setattr__(self, name, value):
        raise AttributeError("SemanticMask is immutable")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def validate(self, class_map: "ClassMap") -> "SemanticMask":
        v = self.values
        bad = (v != IGNORE) & (v >= class_map.class_count)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(
                f"class id {int(v[r, c])} at ({r}, {c}) is outside the class map "
                f"(C={class_map.class_count})"
            )
        return self

    def classes_present(self) -> set[int]:
        return {int(c) for c in np.unique(self.values) if c != IGNORE}

    def __eq__(self, other):
        if not isinstance(other, SemanticMask):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"SemanticMask(height={self.height}, width={self.width})"


@dataclass(frozen=True)
class ClassMap:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not 1 <= len(names) <= MAX_CLASSES:
            raise ValueError(f"class count must be in [1, {MAX_CLASSES}], got {len(names)}")
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")

    @property
    def class_count(self) -> int:
        return len(self.names)

    @property
    def classes(self) -> list[tuple[int, str]]:
        return list(enumerate(self.names))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, str]]) -> "ClassMap":
        pairs = sorted((int(i), str(n)) for i, n in pairs)
        ids = [i for i, _ in pairs]
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be exactly 0..C-1, got {ids}")
        return cls(tuple(n for _, n in pairs))

    def to_json(self) -> str:
        body = {"classes": [{"id": i, "name": n} for i, n in self.classes]}
        return json.dumps(body, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ClassMap":
        body = json.loads(text)
        return cls.from_pairs((c["id"], c["name"]) for c in body["classes"])

    @classmethod
    def load(cls, path) -> "ClassMap":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


@dataclass(frozen=True, eq=False)
class Sample:
    image: Raster
    mask: SemanticMask
    sample_id: str = ""
    aoi_id: str = ""

    def __post_init__(self):
        if (self.image.height, self.image.width) != (self.mask.height, self.mask.width):
            raise ValueError(
                f"image is {self.image.height}x{self.image.width} but mask is "
                f"{self.mask.height}x{self.mask.width}"
            )

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.image == other.image
            and self.mask == other.mask
            and self.sample_id == other.sample_id
            and self.aoi_id == other.aoi_id
        )


def class_map_of_size(n: int, names: Sequence[str] | None = None) -> ClassMap:
    """Convenience constructor with generic names ``class0``, ``class1``, ..."""
    return ClassMap(tuple(names) if names is not None else tuple(f"class{i}" for i in range(n)))
