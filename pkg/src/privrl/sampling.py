"""Compiled random variate generators.

Every routine takes an explicit ``numpy.random.Generator`` so results are a
pure function of the generator state. They are numba-compiled and can be
called both from Python and from other compiled kernels.
"""

import math

import numpy as np
from numba import njit

__all__ = [
    "laplace",
    "standard_gamma",
    "dirichlet",
    "bounded_de",
    "categorical",
    "bounded_de_log_density",
]


@njit(cache=True)
def laplace(gen, scale):
    """Draw from Laplace(0, scale) by inverting the CDF."""
    u = gen.random() - 0.5
    while u == -0.5:
        u = gen.random() - 0.5
    if u < 0.0:
        return scale * math.log1p(2.0 * u)
    return -scale * math.log1p(-2.0 * u)


@njit(cache=True)
def standard_gamma(gen, shape):
    """Gamma(shape, 1) variate via Marsaglia-Tsang squeeze/rejection.

    Shapes below one are boosted: ``G(a) = G(a + 1) * U**(1/a)``.
    """
    boost = 1.0
    a = shape
    if shape < 1.0:
        u = gen.random()
        while u == 0.0:
            u = gen.random()
        boost = u ** (1.0 / shape)
        a = shape + 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = gen.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = gen.random()
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v * boost
        if u > 0.0 and math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v * boost


@njit(cache=True)
def dirichlet(gen, alpha, out):
    """Fill ``out`` with a Dirichlet(alpha) draw (normalized gammas)."""
    n = alpha.shape[0]
    while True:
        total = 0.0
        for i in range(n):
            g = standard_gamma(gen, alpha[i])
            out[i] = g
            total += g
        if total > 0.0:
            break
    for i in range(n):
        out[i] /= total
    return out


@njit(cache=True)
def bounded_de(gen, radius):
    """Sample the bounded double-exponential noise supported on (-R, R).

    Its density is proportional to ``exp(-exp(R^2 / (R^2 - eta^2)))``. The
    sampler uses a uniform proposal on (-R, R); the unnormalized density
    peaks at eta = 0 with value exp(-e), so acceptance probability is
    ``exp(e - exp(R^2 / (R^2 - eta^2)))``.
    """
    r2 = radius * radius
    while True:
        eta = radius * (2.0 * gen.random() - 1.0)
        gap = r2 - eta * eta
        if gap <= 0.0:
            continue
        t = r2 / gap
        # exp(t) overflows long before acceptance matters
        if t > 700.0:
            continue
        if gen.random() < math.exp(math.e - math.exp(t)):
            return eta


def bounded_de_log_density(eta, radius):
    """Unnormalized log density of the bounded double-exponential noise."""
    eta = np.asarray(eta, dtype=float)
    out = np.full(eta.shape, -np.inf)
    inside = np.abs(eta) < radius
    with np.errstate(over="ignore"):
        out[inside] = -np.exp(radius**2 / (radius**2 - eta[inside] ** 2))
    return out


@njit(cache=True)
def categorical(gen, probs):
    """Index drawn from a probability vector by inverse CDF."""
    u = gen.random()
    acc = 0.0
    last = 0
    for i in range(probs.shape[0]):
        if probs[i] > 0.0:
            last = i
            acc += probs[i]
            if u < acc:
                return i
    return last
