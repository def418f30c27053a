"""Dense float64 linear algebra and seeded random sampling.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64
(2-D and 1-D respectively). Random numbers come from numpy's PCG64 bit
generator; normal deviates use numpy's ziggurat sampler. Both are stable
across numpy releases for a given seed, which is all the reproducibility
this package promises.
"""

import numpy as np

from taperpinn.errors import ContractViolation

DTYPE = np.float64


class SeededRng:
    """Single-owner wrapper around a PCG64 generator.

    Identical seed plus identical call sequence yields bitwise-identical
    output. Not thread-safe; give each worker its own instance.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo, hi, size):
        return self._gen.uniform(lo, hi, size)

    def standard_normal(self, size):
        return self._gen.standard_normal(size)

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"


def as_matrix(entries):
    m = np.array(entries, dtype=DTYPE)
    if m.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("matrix has non-finite entries")
    return m


def as_vector(entries):
    v = np.array(entries, dtype=DTYPE)
    if v.ndim != 1:
        raise ContractViolation(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractViolation("vector has non-finite entries")
    return v


def matvec(m, v):
    m = np.asarray(m, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ContractViolation(
            f"matvec shape mismatch: matrix {m.shape} with vector {v.shape}"
        )
    return m @ v


def sample_uniform(rng, lo, hi, n):
    """Draw ``n`` independent samples from U(lo, hi) as a vector."""
    if not lo < hi:
        raise ContractViolation(f"sample_uniform needs lo < hi, got {lo}, {hi}")
    if n < 1:
        raise ContractViolation(f"sample_uniform needs n >= 1, got {n}")
    return rng.uniform(lo, hi, int(n)).astype(DTYPE)


def glorot_normal(rng, fan_in, fan_out):
    """Glorot (Xavier) normal matrix of shape ``(fan_out, fan_in)``.

    Entries are N(0, 2 / (fan_in + fan_out)). The distribution is not
    truncated.
    """
    if fan_in < 1 or fan_out < 1:
        raise ContractViolation(f"fans must be >= 1, got {fan_in}, {fan_out}")
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return std * rng.standard_normal((int(fan_out), int(fan_in)))
