"""Independent reference implementations for the oracle tests.

Plain Python loops over floats, or iterations that avoid the code path under
test (Newton-Schulz instead of eigendecomposition). Nothing here imports seattn.
"""

import math

import numpy as np


def hinge_oracle(real, fake, mis):
    r = sum(-min(0.0, -1.0 + v) for v in real) / len(real)
    f = sum(-min(0.0, -1.0 - v) for v in fake) / len(fake)
    m = sum(-min(0.0, -1.0 - v) for v in mis) / len(mis)
    return r + 0.5 * f + 0.5 * m


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def word_loss_oracle(c, t, mu):
    total = 0.0
    for i in range(len(c)):
        sims = [mu * cosine(c[i], t[j]) for j in range(len(t))]
        top = max(sims)
        log_z = top + math.log(sum(math.exp(s - top) for s in sims))
        total -= sims[i] - log_z
    return total


def context_oracle(words, regions, mu1):
    out = []
    for w in words:
        s = [mu1 * sum(a * b for a, b in zip(w, x)) for x in regions]
        top = max(s)
        e = [math.exp(v - top) for v in s]
        z = sum(e)
        out.append([sum(e[j] / z * regions[j][d] for j in range(len(regions))) for d in range(len(w))])
    return out


def assemble_oracle(l_g, l_s, l_w, gamma, lam):
    l_d = lam * l_s + (1.0 - lam) * l_w
    return l_d, l_g + gamma * l_d


def newton_schulz_sqrt(a, iters=60):
    """Coupled Newton-Schulz iteration on the normalized matrix; no eigendecomposition."""
    norm = np.linalg.norm(a)
    y, z = a / norm, np.eye(len(a))
    for _ in range(iters):
        t = 0.5 * (3.0 * np.eye(len(a)) - z @ y)
        y, z = y @ t, t @ z
    return y * math.sqrt(norm)


def frechet_oracle(m1, s1, m2, s2):
    r1 = newton_schulz_sqrt(s1)
    mid = r1 @ s2 @ r1
    return float((m1 - m2) @ (m1 - m2) + np.trace(s1) + np.trace(s2)
                 - 2 * np.trace(newton_schulz_sqrt((mid + mid.T) / 2)))


def is_oracle(rows):
    k = len(rows[0])
    marg = [sum(r[j] for r in rows) / len(rows) for j in range(k)]
    kl = 0.0
    for r in rows:
        kl += sum(p * (math.log(p) - math.log(marg[j])) for j, p in enumerate(r) if p > 0)
    return math.exp(kl / len(rows))


def random_psd(rng, d):
    a = rng.standard_normal((d, d + 2))
    return a @ a.T / d + 0.1 * np.eye(d)
