"""Brute-force reference computations, independent of the package's closed forms."""

import itertools


def enumerate_pool(p, k, se, sp):
    """Pool-positive probability and expected tests per person by enumerating statuses."""
    pos = 0.0
    for status in itertools.product((0, 1), repeat=k):
        s = sum(status)
        w = p**s * (1 - p) ** (k - s)
        pos += w * (se if s > 0 else 1 - sp)
    if k == 1:
        return pos, 1.0
    # one pooled test, plus k individual tests when the pool is positive
    et = (1 * (1 - pos) + (1 + k) * pos) / k
    return pos, et


def conditional_first_positive(p, k):
    """P(unit 1 positive | at least one positive among k) by enumeration."""
    num = den = 0.0
    for status in itertools.product((0, 1), repeat=k):
        s = sum(status)
        if s == 0:
            continue
        w = p**s * (1 - p) ** (k - s)
        den += w
        if status[0]:
            num += w
    return num / den


def naive_scan(p, se, sp, delta_se=None, delta_sp=0.0):
    """argmin over k of expected tests, smallest k on ties; se/sp are 1-indexed lists."""
    cands = []
    for k in range(1, len(se) + 1):
        if delta_se is not None and (se[k - 1] < delta_se or sp[k - 1] < delta_sp):
            continue
        if k == 1:
            et = 1.0
        else:
            et = se[k - 1] * (1 - (1 - p) ** k) + (1 - sp[k - 1]) * (1 - p) ** k + 1 / k
        cands.append((et, k))
    return min(cands)
