"""Label-aware mixup for regression.

A mixing partner for anchor ``i`` is drawn with probability proportional to
``exp(-(y_i - y_j)^2 / (2 sigma^2))`` over all ``j != i``; embeddings and
labels are then mixed with the same ``lam ~ Beta(alpha, alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CMixupConfig:
    bandwidth: float = 1.0
    alpha: float = 2.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def _log_kernel(y_anchor, candidates, bandwidth: float) -> np.ndarray:
    d = np.asarray(candidates, dtype=np.float64) - np.asarray(y_anchor, dtype=np.float64)
    return -(d * d) / (2.0 * bandwidth * bandwidth)


def kernel_weights(y_anchor: float, candidates, bandwidth: float) -> np.ndarray:
    """Normalised Gaussian-kernel weights of ``candidates`` around ``y_anchor``."""
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1)
    if candidates.size == 0:
        raise ValueError("kernel_weights needs at least one candidate")
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    logw = _log_kernel(y_anchor, candidates, bandwidth)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def sample_partner(anchor_index: int, labels, bandwidth: float, rng) -> int:
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size < 2:
        raise ValueError("sample_partner needs a dataset of at least two samples")
    others = np.delete(np.arange(labels.size), anchor_index)
    w = kernel_weights(labels[anchor_index], labels[others], bandwidth)
    return int(others[np.random.default_rng(rng).choice(others.size, p=w)])


class PartnerSampler:
    """Batched partner sampling over a fixed label set.

    Draws from the kernel distribution *including* the anchor and redraws
    whenever the anchor itself comes up; conditioning on "not the anchor" is
    exactly the normalised distribution over the other samples. Cumulative
    weights are tabulated once per distinct label value.
    """

    def __init__(self, labels, bandwidth: float):
        self.labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        if self.labels.size < 2:
            raise ValueError("PartnerSampler needs at least two samples")
        if not bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
        self.bandwidth = bandwidth
        uniq, self._row = np.unique(self.labels, return_inverse=True)
        logw = _log_kernel(uniq[:, None], self.labels[None, :], bandwidth)
        w = np.exp(logw - logw.max(axis=1, keepdims=True))
        cdf = np.cumsum(w, axis=1)
        self._cdf = cdf / cdf[:, -1:]

    def sample(self, anchors, rng) -> np.ndarray:
        anchors = np.asarray(anchors, dtype=np.intp)
        out = np.empty_like(anchors)
        todo = np.arange(anchors.size)
        while todo.size:
            a = anchors[todo]
            u = rng.random(todo.size)
            rows = self._cdf[self._row[a]]
            draw = np.minimum((rows < u[:, None]).sum(axis=1), self.labels.size - 1)
            ok = draw != a
            out[todo[ok]] = draw[ok]
            todo = todo[~ok]
        return out


def mix(e_i, e_j, y_i, y_j, lam: float):
    e_i = np.asarray(e_i, dtype=np.float64)
    e_j = np.asarray(e_j, dtype=np.float64)
    if e_i.shape != e_j.shape:
        raise ValueError(f"embedding shapes differ: {e_i.shape} vs {e_j.shape}")
    lam_e = np.asarray(lam, dtype=np.float64)
    if lam_e.ndim == 1 and e_i.ndim == 2:
        lam_e = lam_e[:, None]
    e_hat = lam_e * e_i + (1.0 - lam_e) * e_j
    y_hat = np.asarray(lam) * np.asarray(y_i, dtype=np.float64) + (1.0 - np.asarray(lam)) * np.asarray(y_j, dtype=np.float64)
    return e_hat, (float(y_hat) if np.ndim(y_hat) == 0 else y_hat)


def draw_lambda(alpha: float, rng, size=None):
    """Beta(alpha, alpha) variate(s) as ``g1 / (g1 + g2)`` with ``g ~ Gamma(alpha, 1)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    rng = np.random.default_rng(rng)
    g1 = rng.gamma(alpha, 1.0, size=size)
    g2 = rng.gamma(alpha, 1.0, size=size)
    total = g1 + g2
    # both gammas underflow to 0 only for tiny alpha, where Beta mass sits at {0, 1}
    degenerate = total == 0
    lam = np.where(degenerate, np.asarray(g1 >= g2, dtype=np.float64), g1 / np.where(degenerate, 1.0, total))
    return float(lam) if size is None else lam
