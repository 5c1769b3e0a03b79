"""Standalone scalar reference of the single-channel model (power-domain N-CTF with noise).

Plain Python loops over frames and taps; shares no code with the package.
"""

import math


def init(x, tap_length, variance_floor_rel=1e-10):
    power = [abs(z) ** 2 for z in x]
    mean_power = sum(power) / len(power)
    if mean_power <= 0:
        mean_power = 1.0
    floor = variance_floor_rel * mean_power
    v = [max(p, floor) for p in power]
    taps = [0.1**d for d in range(tap_length)]
    noise = 1e-2 * mean_power
    return v, taps, noise, floor


def mixture(v, taps, noise):
    out = []
    for l in range(len(v)):
        r = noise
        for d, a in enumerate(taps):
            if l - d >= 0:
                r += v[l - d] * a
        out.append(r)
    return out


def cost(x, v, taps, noise):
    return sum(abs(z) ** 2 / r + math.log(r) for z, r in zip(x, mixture(v, taps, noise)))


def step(x, v, taps, noise, floor):
    n = len(x)
    p = [abs(z) ** 2 for z in x]

    r = mixture(v, taps, noise)
    new_v = []
    for l in range(n):
        num = den = 0.0
        for d, a in enumerate(taps):
            if l + d < n:
                num += a * p[l + d] / r[l + d] ** 2
                den += a / r[l + d]
        new_v.append(max(v[l] * math.sqrt(num / den), floor))
    v = new_v

    r = mixture(v, taps, noise)
    new_taps = []
    for d, a in enumerate(taps):
        g = sum(v[l - d] / r[l] for l in range(d, n))
        j = sum(v[l - d] * p[l] / r[l] ** 2 for l in range(d, n))
        # scalar geometric mean g^{-1} # (a j a) = a sqrt(j / g)
        new_taps.append(a * math.sqrt(j / g))
    c = new_taps[0]
    taps = [a / c for a in new_taps]
    v = [u * c for u in v]

    r = mixture(v, taps, noise)
    f = sum(1.0 / q for q in r)
    e = sum(pp / q**2 for pp, q in zip(p, r))
    noise = noise * math.sqrt(e / f)
    return v, taps, noise


def run(x, tap_length, n_iterations, variance_floor_rel=1e-10):
    """Return the list of ``(v, taps, noise)`` after every iteration (index 0 = init)."""
    v, taps, noise, floor = init(x, tap_length, variance_floor_rel)
    history = [(list(v), list(taps), noise)]
    for _ in range(n_iterations):
        v, taps, noise = step(x, v, taps, noise, floor)
        history.append((list(v), list(taps), noise))
    return history
