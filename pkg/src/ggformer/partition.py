"""Token-grid partitions as explicit index permutations.

A grid of ``h x w`` tokens is stored row-major (token ``(a, b)`` at index
``a * w + b``). Splitting reorders tokens partition-major so that each run of
``M * M`` consecutive rows is one partition; merging is the inverse gather.

Two partitionings are provided:

* dilated: partition ``(i, j)`` samples the whole grid with stride
  ``(h // M, w // M)``; token ``(a, b)`` belongs to partition
  ``(a % (h // M), b % (w // M))``.
* window: contiguous ``M x M`` blocks; token ``(a, b)`` belongs to window
  ``(a // M, b // M)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, PartitionError
from .tensor import take


@dataclass(frozen=True)
class PartitionSpec:
    h: int
    w: int
    M: int

    def __post_init__(self):
        if self.M < 1 or self.h < 1 or self.w < 1:
            raise PartitionError(f"grid {self.h}x{self.w} and partition side {self.M} must be >= 1")
        if self.h % self.M or self.w % self.M:
            raise PartitionError(
                f"grid {self.h}x{self.w} is not divisible by partition side M={self.M}"
            )

    @property
    def N(self):
        return self.h * self.w

    @property
    def dilation(self):
        return self.h // self.M, self.w // self.M

    @property
    def num_partitions(self):
        dh, dw = self.dilation
        return dh * dw


@dataclass(frozen=True, eq=False)
class Permutation:
    """``forward[t]`` is the grid index placed at split position ``t``."""

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward):
        forward = np.asarray(forward, dtype=np.intp)
        check_bijection(forward)
        inverse = np.empty_like(forward)
        inverse[forward] = np.arange(forward.size, dtype=np.intp)
        forward.flags.writeable = False
        inverse.flags.writeable = False
        return cls(forward, inverse)

    def __len__(self):
        return self.forward.size

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.forward, other.forward)

    def __hash__(self):
        return hash(self.forward.tobytes())


def check_bijection(forward):
    n = forward.size
    if not np.array_equal(np.sort(forward), np.arange(n)):
        raise PartitionError("index map is not a bijection on [0, N)")


@lru_cache(maxsize=256)
def _dilated(h, w, M):
    dh, dw = h // M, w // M
    # axes: partition row i, partition col j, offset p, offset q
    i, j, p, q = np.meshgrid(np.arange(dh), np.arange(dw), np.arange(M), np.arange(M), indexing="ij")
    return Permutation.from_forward(((i + p * dh) * w + (j + q * dw)).reshape(-1))


@lru_cache(maxsize=256)
def _window(h, w, M):
    i, j, p, q = np.meshgrid(np.arange(h // M), np.arange(w // M), np.arange(M), np.arange(M),
                             indexing="ij")
    return Permutation.from_forward(((i * M + p) * w + (j * M + q)).reshape(-1))


def dilated_split_permutation(spec: PartitionSpec) -> Permutation:
    return _dilated(spec.h, spec.w, spec.M)


def window_split_permutation(spec: PartitionSpec) -> Permutation:
    return _window(spec.h, spec.w, spec.M)


def _check_len(tokens, perm):
    if tokens.shape[0] != len(perm):
        raise DimensionError(f"{tokens.shape[0]} tokens vs permutation of length {len(perm)}")


def split(tokens, perm: Permutation):
    """Reorder ``N x C`` tokens from grid order into partition-major order."""
    _check_len(tokens, perm)
    return take(tokens, perm.forward, axis=0)


def merge(tokens, perm: Permutation):
    """Inverse of :func:`split`: restore grid order."""
    _check_len(tokens, perm)
    return take(tokens, perm.inverse, axis=0)


def partition_members(spec: PartitionSpec, perm: Permutation):
    """Grid coordinates of each partition, shape ``(P, M*M, 2)``."""
    idx = perm.forward.reshape(spec.num_partitions, spec.M * spec.M)
    return np.stack([idx // spec.w, idx % spec.w], axis=-1)
