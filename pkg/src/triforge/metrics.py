"""Quality metrics for synthesized frames.

MSE compares pixels; FID compares Gaussian fits of feature
distributions (mean + unbiased covariance, Frechet distance via a PSD
matrix square root); KID is the unbiased squared MMD with the degree-3
polynomial kernel k(x, y) = (x.y/d + 1)^3 and may legitimately be
negative. The eigensolver behind the matrix square root is a cyclic
Jacobi iteration, self-contained so results are reproducible down to
the convergence threshold. Classification metrics (accuracy, macro
precision/recall/F1) summarize downstream recognition runs.

All accumulation happens in f64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    LengthMismatch,
    NoConvergence,
    NotSymmetric,
    TooFewSamples,
    UnknownLabel,
)

JACOBI_MAX_SWEEPS = 100
JACOBI_TOL = 1e-10


@dataclass(frozen=True)
class Moments:
    """Sufficient statistics of a feature set: sample mean and unbiased
    covariance (divisor n-1)."""

    mean: np.ndarray
    cov: np.ndarray


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over all values of the squared difference."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def _check_features(f: np.ndarray, what: str) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise DimMismatch(f"{what}: feature sets are (n, d), got {f.shape}")
    if f.shape[0] < 2:
        raise TooFewSamples(f"{what}: need >= 2 rows, got {f.shape[0]}")
    return f


def moments(features: np.ndarray) -> Moments:
    f = _check_features(features, "moments")
    mean = f.mean(axis=0)
    centered = f - mean
    cov = (centered.T @ centered) / (f.shape[0] - 1)
    return Moments(mean=mean, cov=(cov + cov.T) / 2.0)


def jacobi_eigh(m: np.ndarray, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with columns of V matching the
    eigenvalue order (unsorted). Converged when the off-diagonal
    Frobenius norm drops below 1e-10 times the matrix Frobenius norm.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimMismatch(f"square matrix required, got {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > 1e-6 * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")

    n = m.shape[0]
    a = (m + m.T) / 2.0
    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    if n == 1 or norm == 0.0:
        return np.diag(a).copy(), v

    off_mask = ~np.eye(n, dtype=bool)
    for sweep in range(max_sweeps + 1):
        # direct off-diagonal norm; the sum(A^2)-sum(diag^2) form cancels
        off = float(np.linalg.norm(a[off_mask]))
        if off <= JACOBI_TOL * norm:
            return np.diag(a).copy(), v
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # Rutishauser's stable rotation; first-order tangent when
                # the pivot is tiny relative to the diagonal gap
                diff = a[q, q] - a[p, p]
                if abs(apq) * 1e15 < abs(diff):
                    t = apq / diff
                elif diff == 0.0:
                    t = 1.0
                else:
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root: eigenvalues clamped at zero, then
    V diag(sqrt(lambda)) V^T."""
    eigvals, v = jacobi_eigh(m)
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    s = (v * root) @ v.T
    return (s + s.T) / 2.0


def fid_from_moments(m1: Moments, m2: Moments) -> float:
    """Frechet distance between two Gaussians.

    The trace cross term uses the symmetrized form
    (S1 C2 S1)^(1/2) with S1 = C1^(1/2), so only PSD square roots occur.
    """
    if m1.mean.shape != m2.mean.shape:
        raise DimMismatch("moment dims differ")
    delta = m1.mean - m2.mean
    s1 = sqrtm_psd(m1.cov)
    inner = s1 @ m2.cov @ s1
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    val = (
        float(delta @ delta)
        + float(np.trace(m1.cov))
        + float(np.trace(m2.cov))
        - 2.0 * float(np.trace(cross))
    )
    return max(val, 0.0)


def fid(a: np.ndarray, b: np.ndarray) -> float:
    """Frechet distance between the Gaussian fits of two feature sets."""
    fa = _check_features(a, "fid")
    fb = _check_features(b, "fid")
    if fa.shape[1] != fb.shape[1]:
        raise DimMismatch("feature dims differ")
    return fid_from_moments(moments(fa), moments(fb))


def _poly_kernel(x: np.ndarray, y: np.ndarray, d: int) -> np.ndarray:
    return (x @ y.T / d + 1.0) ** 3


def kid(a: np.ndarray, b: np.ndarray) -> float:
    """Unbiased MMD^2 with the degree-3 polynomial kernel.

    (1/(n(n-1))) sum_{i!=j} k(a_i, a_j) + (1/(m(m-1))) sum_{i!=j} k(b_i, b_j)
      - (2/(nm)) sum sum k(a_i, b_j)

    Unbiasedness means small or same-distribution sets can come out
    negative; values are reported raw.
    """
    fa = _check_features(a, "kid")
    fb = _check_features(b, "kid")
    if fa.shape[1] != fb.shape[1]:
        raise DimMismatch("feature dims differ")
    n, d = fa.shape
    m = fb.shape[0]
    kaa = _poly_kernel(fa, fa, d)
    kbb = _poly_kernel(fb, fb, d)
    kab = _poly_kernel(fa, fb, d)
    term_a = (kaa.sum() - np.trace(kaa)) / (n * (n - 1))
    term_b = (kbb.sum() - np.trace(kbb)) / (m * (m - 1))
    return float(term_a + term_b - 2.0 * kab.mean())


def _block_sizes(n: int, n_blocks: int) -> list[int]:
    base = n // n_blocks
    bigger = n - base * n_blocks
    return [base] * (n_blocks - bigger) + [base + 1] * bigger


def kid_blocks(a: np.ndarray, b: np.ndarray, block_size: int = 50):
    """Block-averaged KID: mean and sample std of per-block unbiased
    estimates over contiguous blocks of at most block_size rows.

    Assumes rows are unordered. Returns (mean, std, n_blocks); std is
    None when only one block fits.
    """
    fa = _check_features(a, "kid")
    fb = _check_features(b, "kid")
    n, m = fa.shape[0], fb.shape[0]
    n_blocks = int(np.ceil(max(n, m) / block_size))
    sizes_a = _block_sizes(n, n_blocks)
    sizes_b = _block_sizes(m, n_blocks)
    if min(sizes_a) < 2 or min(sizes_b) < 2:
        raise TooFewSamples(
            f"{n_blocks} blocks leave fewer than 2 rows per block"
        )
    ests = []
    ia = ib = 0
    for sa, sb in zip(sizes_a, sizes_b):
        ests.append(kid(fa[ia : ia + sa], fb[ib : ib + sb]))
        ia += sa
        ib += sb
    ests = np.asarray(ests)
    std = float(np.std(ests, ddof=1)) if n_blocks > 1 else None
    return float(ests.mean()), std, n_blocks


# --- classification metrics --------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class one-vs-rest tallies."""

    tp: int
    fp: int
    fn: int
    tn: int


def confusion_metrics(counts: ConfusionCounts) -> tuple[float, float, float]:
    """(precision, recall, f1) for one class; zero denominators yield 0."""
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def confusion_counts(pred, truth, classes) -> dict[str, ConfusionCounts]:
    total = len(truth)
    out = {}
    for c in classes:
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        out[c] = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=total - tp - fp - fn)
    return out


def cls_metrics(pred, truth, classes=None) -> dict:
    """Accuracy plus macro-averaged precision/recall/F1, with the
    per-class breakdown included.

    classes defaults to the sorted union of labels seen; explicit
    classes make unseen labels an error.
    """
    pred = list(pred)
    truth = list(truth)
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} labels")
    if not truth:
        raise LengthMismatch("no samples")
    if classes is None:
        classes = sorted(set(truth) | set(pred))
    else:
        classes = list(classes)
        known = set(classes)
        for lbl in (*pred, *truth):
            if lbl not in known:
                raise UnknownLabel(f"label {lbl!r} not in declared classes")

    counts = confusion_counts(pred, truth, classes)
    per_class = {}
    for c in classes:
        precision, recall, f1 = confusion_metrics(counts[c])
        cc = counts[c]
        per_class[c] = {
            "tp": cc.tp,
            "fp": cc.fp,
            "fn": cc.fn,
            "tn": cc.tn,
            "precision": precision,
            "recall": recall,
            "f1": f1,
        }
    correct = sum(1 for p, t in zip(pred, truth) if p == t)
    k = len(classes)
    return {
        "accuracy": correct / len(truth),
        "precision": sum(per_class[c]["precision"] for c in classes) / k,
        "recall": sum(per_class[c]["recall"] for c in classes) / k,
        "f1": sum(per_class[c]["f1"] for c in classes) / k,
        "per_class": per_class,
    }
