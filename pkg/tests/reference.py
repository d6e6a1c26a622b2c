"""Slow, obviously-correct reference implementations the tests compare against.

Nothing here imports the package's numeric code; each function is written
from the definition so agreement is evidence, not tautology.
"""

from __future__ import annotations

import itertools
import math
import re

import numpy as np


def fnv1a_64(data: bytes) -> int:
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def tokens(text: str) -> list[str]:
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return out


def features(toks: list[str], dim: int) -> np.ndarray:
    v = np.zeros(dim)
    grams = toks + [a + "_" + b for a, b in zip(toks, toks[1:])]
    for g in grams:
        v[fnv1a_64(g.encode("utf-8")) % dim] += 1
    n = math.sqrt(sum(x * x for x in v))
    return v / n if n else v


def encode(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    u = w @ x
    n = math.sqrt(float(u @ u))
    return u / n if n else u


def cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b) / (na * nb)


def softmax(xs, t: float = 1.0) -> list[float]:
    m = max(xs)
    e = [math.exp((x - m) / t) for x in xs]
    z = sum(e)
    return [v / z for v in e]


def kl(p, q) -> float:
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


def mean_kl_loss(w: np.ndarray, windows, t: float) -> float:
    """windows: list of (query_vec, [doc_vecs], target_probs)."""
    total = 0.0
    for q, docs, target in windows:
        eq = encode(w, q)
        s = [cos(eq, encode(w, d)) for d in docs]
        total += kl(softmax(s, t), target)
    return total / len(windows)


def central_difference(f, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(w)
    for idx in itertools.product(*(range(n) for n in w.shape)):
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        g[idx] = (f(wp) - f(wm)) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """``|a-b| / (|a|+|b|)``; the floor keeps two near-zero gradients from reading as disagreement."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), floor))


def brute_force_admit(sim: dict[str, float], util: dict[str, float], k_sim: int, k_util: int) -> set[str]:
    """Admit d iff its similarity reaches the k_sim-th largest, or its utility the k_util-th."""
    def kth(scores, k):
        if k == 0:
            return math.inf
        return sorted(scores.values(), reverse=True)[min(k, len(scores)) - 1]

    zs, zu = kth(sim, k_sim), kth(util, k_util)
    return {d for d in sim if sim[d] >= zs or util[d] >= zu}


def sigmoid(r: float) -> float:
    return 1 / (1 + math.exp(-r))


def naive_bce(rewards, labels) -> float:
    return sum(-z * math.log(sigmoid(r)) - (1 - z) * math.log(1 - sigmoid(r)) for r, z in zip(rewards, labels))


def normalize(text: str) -> str:
    text = text.lower()
    text = "".join(ch for ch in text if ch.isalnum() or ch.isspace())
    text = re.sub(r"\b(a|an|the)\b", " ", text)
    return " ".join(text.split())
