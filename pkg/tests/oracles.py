"""Slow reference implementations used to cross-check the library.

Nothing here imports the code under test.
"""

import itertools
import math
from collections import Counter

import mpmath


def naive_ranks(window):
    order = sorted(range(len(window)), key=lambda i: (window[i], i))
    ranks = [0] * len(window)
    for pos, i in enumerate(order):
        ranks[i] = pos
    return tuple(ranks)


def naive_patch_counts(patch, d=3, tau=1):
    """Counter of rank tuples over the row-major 9-value sequence."""
    seq = [float(v) for row in patch for v in row]
    span = (d - 1) * tau
    return Counter(naive_ranks(seq[i:i + span + 1:tau]) for i in range(len(seq) - span))


def naive_entropy(counts, d=3):
    total = sum(counts.values())
    h = 0.0
    for c in counts.values():
        if c:
            p = c / total
            h -= p * math.log2(p)
    return h / (d - 1)


def naive_entropy_map(g, d=3, tau=1):
    """List-of-lists entropy map plus per-window Counters."""
    h, w = len(g), len(g[0])
    emap, counts = [], []
    for y in range(h - 2):
        erow, crow = [], []
        for x in range(w - 2):
            patch = [[g[y + dy][x + dx] for dx in range(3)] for dy in range(3)]
            c = naive_patch_counts(patch, d, tau)
            crow.append(c)
            erow.append(naive_entropy(c, d))
        emap.append(erow)
        counts.append(crow)
    return emap, counts


def all_patterns(d):
    return list(itertools.permutations(range(d)))


def naive_lqm(m_r, m_d, m_rd, eta):
    def sim(a, b):
        return (2 * a * b + eta) / (a * a + b * b + eta)
    return sim(m_r, m_d) + sim(m_d, m_rd) + sim(m_r, m_rd)


def average_ranks(x):
    """1-based ranks with ties averaged, by explicit counting."""
    out = []
    for v in x:
        below = sum(1 for u in x if u < v)
        equal = sum(1 for u in x if u == v)
        out.append(below + (equal + 1) / 2.0)
    return out


def pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def spearman_closed_form(q, s):
    """1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties."""
    rq, rs = average_ranks(q), average_ranks(s)
    n = len(q)
    d2 = sum((a - b) ** 2 for a, b in zip(rq, rs))
    return 1 - 6 * d2 / (n * (n * n - 1))


def kendall_tau_a(q, s):
    n = len(q)
    nc = nd = 0
    for i in range(n):
        for j in range(i + 1, n):
            prod = (q[i] - q[j]) * (s[i] - s[j])
            if prod > 0:
                nc += 1
            elif prod < 0:
                nd += 1
    return (nc - nd) / (0.5 * n * (n - 1))


def f_critical_mp(alpha, dfn, dfd):
    """Bisection on the F CDF written via mpmath's regularized beta."""
    mpmath.mp.dps = 30
    a, b = mpmath.mpf(dfn) / 2, mpmath.mpf(dfd) / 2

    def cdf(f):
        x = dfn * f / (dfn * f + dfd)
        return mpmath.betainc(a, b, 0, x, regularized=True)

    lo, hi = mpmath.mpf(0), mpmath.mpf(1)
    while cdf(hi) < 1 - alpha:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if cdf(mid) < 1 - alpha:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


SOBEL_KX = ((-1, 0, 1), (-2, 0, 2), (-1, 0, 1))


def naive_sobel(img):
    """Gradient magnitude with clamp-to-border indexing, pure Python."""
    h, w = len(img), len(img[0])

    def px(y, x):
        return img[min(max(y, 0), h - 1)][min(max(x, 0), w - 1)]

    out = []
    for y in range(h):
        row = []
        for x in range(w):
            gx = gy = 0.0
            for dy in range(3):
                for dx in range(3):
                    v = px(y + dy - 1, x + dx - 1)
                    gx += SOBEL_KX[dy][dx] * v
                    gy += SOBEL_KX[dx][dy] * v
            row.append(math.sqrt(gx * gx + gy * gy))
        out.append(row)
    return out


def naive_features(ref, dis, eta=0.001):
    g_r, g_d = naive_sobel(ref), naive_sobel(dis)
    g_f = [[(a + b) / 2 for a, b in zip(ra, rb)] for ra, rb in zip(g_r, g_d)]
    m_r, _ = naive_entropy_map(g_r)
    m_d, _ = naive_entropy_map(g_d)
    m_f, _ = naive_entropy_map(g_f)
    lqm = [naive_lqm(a, b, c, eta)
           for ra, rb, rc in zip(m_r, m_d, m_f) for a, b, c in zip(ra, rb, rc)]
    n = len(lqm)
    mean = sum(lqm) / n
    mad = sum(abs(v - mean) for v in lqm) / n
    sd = math.sqrt(sum((v - mean) ** 2 for v in lqm) / n)
    return mad, sd, mean
