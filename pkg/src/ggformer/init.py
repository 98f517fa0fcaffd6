"""Seeded weight initialisation.

Values are drawn in float32 so every weight survives a GGT1 round trip
bit-exactly, whatever working precision the model later runs in.
"""
import numpy as np

from .tensor import Parameter

TRUNC_STD = 0.02


def trunc_normal(rng, shape, std=TRUNC_STD, bound=2.0):
    """Normal(0, std) truncated to ``[-bound*std, bound*std]`` by redrawing."""
    out = rng.standard_normal(shape, dtype=np.float32)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()), dtype=np.float32)
        bad = np.abs(out) > bound
    return out * np.float32(std)


def param(values, dtype, name=None):
    return Parameter(np.asarray(values, dtype=np.float32).astype(dtype), name=name)


def zeros(shape, dtype, name=None):
    return Parameter(np.zeros(shape, dtype=dtype), name=name)


def ones(shape, dtype, name=None):
    return Parameter(np.ones(shape, dtype=dtype), name=name)
