"""Independent high-precision oracles the tests check the implementation against.

Nothing here shares code with the package: the t-distribution tail comes
from mpmath's arbitrary-precision incomplete beta, binary16 rounding is done
bit by bit, and PIE detection is a dict-based recount.
"""

from __future__ import annotations

import math
from collections import Counter

import mpmath as mp

mp.mp.dps = 50


def welch_oracle(a, b) -> tuple[float, float, float]:
    """(t, df, two-sided p) for Welch's test, computed at 50 decimal digits.

    The p-value is the regularized incomplete beta I_{df/(df+t^2)}(df/2, 1/2)
    evaluated by mpmath, far below the 1e-12 tolerance this suite needs.
    """
    a = [mp.mpf(repr(float(x))) for x in a]
    b = [mp.mpf(repr(float(x))) for x in b]
    na, nb = len(a), len(b)
    mean_a = mp.fsum(a) / na
    mean_b = mp.fsum(b) / nb
    var_a = mp.fsum((x - mean_a) ** 2 for x in a) / (na - 1)
    var_b = mp.fsum((x - mean_b) ** 2 for x in b) / (nb - 1)
    sa = var_a / na
    sb = var_b / nb
    if sa + sb == 0:
        df = mp.mpf(na + nb - 2)
        if mean_a == mean_b:
            return 0.0, float(df), 1.0
        t = math.copysign(math.inf, float(mean_a - mean_b))
        return t, float(df), 0.0
    t = (mean_a - mean_b) / mp.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    x = df / (df + t * t)
    p = mp.betainc(df / 2, mp.mpf("0.5"), 0, x, regularized=True)
    return float(t), float(df), float(p)


def student_t_tail_by_quadrature(t: float, df: float) -> float:
    """2*P(T_df > |t|) via direct numeric integration of the t density."""
    df_mp = mp.mpf(repr(float(df)))
    tt = mp.mpf(repr(abs(float(t))))
    norm = mp.gamma((df_mp + 1) / 2) / (mp.sqrt(df_mp * mp.pi) * mp.gamma(df_mp / 2))

    def density(x):
        return norm * (1 + x * x / df_mp) ** (-(df_mp + 1) / 2)

    return float(2 * mp.quad(density, [tt, mp.inf]))


def float16_round(value: float) -> float:
    """Round a float to the nearest IEEE-754 binary16 value, ties to even.

    Pure-Python bit construction: sign * mantissa * 2^exp with a 10-bit
    stored mantissa, subnormals below 2^-14, infinity beyond the max finite
    value 65504.
    """
    if value == 0.0 or math.isnan(value) or math.isinf(value):
        return value
    sign = -1.0 if value < 0 else 1.0
    mag = abs(value)

    exp = math.floor(math.log2(mag))
    # guard logarithm edge cases
    while 2.0**exp > mag:
        exp -= 1
    while 2.0 ** (exp + 1) <= mag:
        exp += 1

    if exp < -14:  # subnormal range: fixed scale 2^-24
        scaled = mag / 2.0**-24
    else:
        scaled = mag / 2.0**exp * 1024.0  # normal: 10 fractional bits

    floor_m = math.floor(scaled)
    frac = scaled - floor_m
    if frac > 0.5 or (frac == 0.5 and floor_m % 2 == 1):
        floor_m += 1

    if exp < -14:
        result = sign * floor_m * 2.0**-24
    else:
        if floor_m == 2048:  # mantissa overflowed into the next exponent
            floor_m = 1024
            exp += 1
        result = sign * floor_m / 1024.0 * 2.0**exp
    if exp > 15 or abs(result) > 65504:
        return sign * math.inf
    return result


def pie_brute_force(base_rank1: dict[int, list[int]], comp_rank1: dict[int, list[int]]):
    """Recount vote histograms with Counters and return the disagreement ids.

    `base_rank1`/`comp_rank1` map example_id to the list of rank-1 votes of
    every model. Ties resolve to the lowest label.
    """
    assert set(base_rank1) == set(comp_rank1)
    pies = []
    for eid in sorted(base_rank1):
        modal = []
        for votes in (base_rank1[eid], comp_rank1[eid]):
            counts = Counter(votes)
            best = max(counts.values())
            modal.append(min(lbl for lbl, n in counts.items() if n == best))
        if modal[0] != modal[1]:
            pies.append(eid)
    return pies
