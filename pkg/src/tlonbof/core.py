"""Numeric substrate: deterministic RNG, initialization, gradient oracle.

All training math in this package runs in float64; tensors are plain
C-contiguous numpy arrays. The finite-difference routine here is the
independent oracle every analytic gradient in the package is checked
against.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError


class Rng:
    """Deterministic, splittable random generator.

    Wraps numpy's PCG64 seeded through a SeedSequence, so the same seed
    yields the same draws on every platform. ``split`` derives child
    generators with statistically independent streams; parameter
    initialization and batch sampling each get their own child so that
    changing one never perturbs the other.
    """

    def __init__(self, seed_seq: np.random.SeedSequence):
        self._seq = seed_seq
        self.gen = np.random.Generator(np.random.PCG64(seed_seq))

    @classmethod
    def from_seed(cls, seed: int) -> "Rng":
        return cls(np.random.SeedSequence(int(seed)))

    def split(self, n: int) -> list["Rng"]:
        return [Rng(child) for child in self._seq.spawn(n)]

    # Convenience passthroughs used throughout the package.
    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, n, size=None, p=None, replace=True):
        return self.gen.choice(n, size=size, p=p, replace=replace)

    def permutation(self, n):
        return self.gen.permutation(n)


def glorot_uniform(shape: Sequence[int], fan_in: int, fan_out: int, rng: Rng) -> np.ndarray:
    """Draw i.i.d. uniform values on [-b, b] with b = sqrt(6/(fan_in+fan_out))."""
    shape = tuple(int(d) for d in shape)
    if any(d <= 0 for d in shape):
        raise ValueError(f"zero-sized shape {shape}")
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in/fan_out must be >= 1, got {fan_in}/{fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape).astype(np.float64)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Intentionally brute force: this is the oracle used to validate the
    analytic backward passes, so it must not share any code with them.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        f_plus = float(f(x))
        flat_x[i] = orig - eps
        f_minus = float(f(x))
        flat_x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value while perturbing coordinate {i}")
        flat_g[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-relative deviation ||a-b|| / max(||a||, ||b||, floor)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
