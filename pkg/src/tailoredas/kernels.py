"""Compactly supported smoothing kernels and bandwidth rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidN

# (family, order) -> polynomial in u on [-1, 1]
_KERNELS = {
    ("epanechnikov", 2): lambda u: 0.75 * (1.0 - u**2),
    ("biweight", 2): lambda u: (15.0 / 16.0) * (1.0 - u**2) ** 2,
    ("epanechnikov", 4): lambda u: (15.0 / 32.0) * (3.0 - 10.0 * u**2 + 7.0 * u**4),
    ("biweight", 4): lambda u: (105.0 / 64.0) * (1.0 - u**2) ** 2 * (1.0 - 3.0 * u**2),
}

FAMILIES = ("epanechnikov", "biweight")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and order.

    Order-4 kernels take negative values, so estimates built from them are
    no longer guaranteed to be proportions. They are provided for
    experimentation only.
    """

    family: str = "epanechnikov"
    order: int = 2

    def __post_init__(self):
        if (self.family, self.order) not in _KERNELS:
            raise ValueError(
                f"unsupported kernel {self.family!r} of order {self.order}; "
                f"families {FAMILIES}, orders 2 and 4"
            )


EPANECHNIKOV = KernelSpec()


def kernel_1d(spec: KernelSpec, u):
    """Evaluate the univariate kernel at scaled distance ``u`` (0 off [-1, 1])."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    out = np.where(inside, _KERNELS[(spec.family, spec.order)](np.where(inside, u, 0.0)), 0.0)
    return out if out.ndim else float(out)


def kernel_2d(spec: KernelSpec, u, v):
    """Product kernel ``K(u) * K(v)`` on the square [-1, 1]^2."""
    out = np.asarray(kernel_1d(spec, u)) * np.asarray(kernel_1d(spec, v))
    return out if np.ndim(out) else float(out)


def default_bandwidths(n: int, time_scale: float = 1.0) -> tuple[float, float]:
    """Return ``(h, htilde) = time_scale * (n**-1/5, n**-1/6)``.

    With ``time_scale=1`` this is the literal rate-optimal rule for
    second-order kernels. On a month axis that gives sub-month windows,
    so callers normally pass the spread of the observed biopsy times.
    """
    if n < 2:
        raise InvalidN(f"need at least 2 subjects for a bandwidth rule, got n={n}")
    if not time_scale > 0:
        raise ValueError(f"time_scale must be positive, got {time_scale}")
    return time_scale * n ** (-1.0 / 5.0), time_scale * n ** (-1.0 / 6.0)
