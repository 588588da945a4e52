import math
import typing
import zlib

import numpy as np

from gyver.ualk.exceptions import ArgumentError

_U64 = 2**64
# multiplier used to derive child stream ids; any odd 64-bit constant works
_STREAM_MULTIPLIER = 0x9E3779B97F4A7C15


class RngState:
    """Seeded random source shared by every generator in the package.

    Draws come from Philox4x64-10 keyed with `seed`; `stream` is placed in the
    most significant counter word so sibling streams never overlap. Gaussian
    draws use Box-Muller on the uniform stream so other implementations can
    reproduce them from the same uniforms.

    An instance is single-owner: use `spawn` to hand a stream to another
    consumer or thread."""

    __slots__ = ('seed', 'stream', '_generator')

    def __init__(self, seed: int, stream: int = 0) -> None:
        if not 0 <= seed < _U64:
            raise ArgumentError(f'seed must be an unsigned 64-bit integer, got {seed}')
        if not 0 <= stream < _U64:
            raise ArgumentError(f'stream must be an unsigned 64-bit integer, got {stream}')
        self.seed = seed
        self.stream = stream
        bitgen = np.random.Philox(
            key=seed, counter=np.array([0, 0, 0, stream], dtype=np.uint64)
        )
        self._generator = np.random.Generator(bitgen)

    def __repr__(self) -> str:
        return f'RngState(seed={self.seed}, stream={self.stream})'

    def spawn(self, key: typing.Union[int, str]) -> 'RngState':
        """Derives an independent stream from this one, deterministically."""
        if isinstance(key, str):
            key = zlib.crc32(key.encode('utf-8'))
        child = (self.stream * _STREAM_MULTIPLIER + key + 1) % _U64
        return RngState(self.seed, child)

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def uniform(self, size: typing.Union[int, tuple[int, ...]] = ()) -> np.ndarray:
        """Draws from [0, 1)."""
        return self._generator.random(size)

    def normal(self, size: typing.Union[int, tuple[int, ...]]) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = math.prod(shape)
        half = (count + 1) // 2
        u1 = 1.0 - self._generator.random(half)
        u2 = self._generator.random(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        pairs = np.empty((half, 2))
        pairs[:, 0] = radius * np.cos(angle)
        pairs[:, 1] = radius * np.sin(angle)
        return pairs.ravel()[:count].reshape(shape)

    def integers(
        self, low: int, high: int, size: typing.Union[int, tuple[int, ...]] = ()
    ) -> np.ndarray:
        return self._generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=replace)

    def bernoulli(self, p: float, size: int) -> np.ndarray:
        return self._generator.random(size) < p

    def beta(self, a: float, b: float, size: typing.Union[int, tuple[int, ...]]) -> np.ndarray:
        return self._generator.beta(a, b, size=size)
