"""Independent brute-force oracles the fast implementations are checked
against. These intentionally restate the definitions directly and stay
free of the library's own code paths."""

import numpy as np


def edt_squared_brute(bits: np.ndarray, seeds: str = "foreground") -> np.ndarray:
    """O(pixels x seeds) exact squared Euclidean distances (integers)."""
    seed = bits if seeds == "foreground" else ~bits
    ys, xs = np.nonzero(seed)
    assert ys.size > 0, "oracle needs at least one seed"
    h, w = bits.shape
    py, px = np.mgrid[0:h, 0:w]
    dy = py.reshape(-1, 1).astype(np.int64) - ys.reshape(1, -1)
    dx = px.reshape(-1, 1).astype(np.int64) - xs.reshape(1, -1)
    return (dy * dy + dx * dx).min(axis=1).reshape(h, w)


def cosine_brute(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def select_brute(queries: np.ndarray, targets: np.ndarray) -> int:
    """Argmax over targets of the mean cosine similarity, naive loops,
    lowest index on ties."""
    n, _ = queries.shape
    m = targets.shape[0]
    best_idx, best_score = 0, -np.inf
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += cosine_brute(queries[i], targets[j])
        s /= n
        if s > best_score:
            best_idx, best_score = j, s
    return best_idx


def kid_brute(a: np.ndarray, b: np.ndarray) -> float:
    """Unbiased MMD^2 with k(x, y) = (x.y/d + 1)^3, naive double loops."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, d = a.shape
    m = b.shape[0]

    def k(x, y):
        return (float(np.dot(x, y)) / d + 1.0) ** 3

    saa = sum(k(a[i], a[j]) for i in range(n) for j in range(n) if i != j)
    sbb = sum(k(b[i], b[j]) for i in range(m) for j in range(m) if i != j)
    sab = sum(k(a[i], b[j]) for i in range(n) for j in range(m))
    return saa / (n * (n - 1)) + sbb / (m * (m - 1)) - 2.0 * sab / (n * m)


def fid_1d_closed_form(mu1, var1, mu2, var2) -> float:
    """1-D Frechet distance between N(mu1, var1) and N(mu2, var2)."""
    return (mu1 - mu2) ** 2 + (np.sqrt(var1) - np.sqrt(var2)) ** 2


def random_mask(rng: np.random.Generator, h: int, w: int, density=None) -> np.ndarray:
    p = rng.uniform(0.05, 0.95) if density is None else density
    return rng.random((h, w)) < p
