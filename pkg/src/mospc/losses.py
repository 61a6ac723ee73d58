"""Pairwise ranking loss with pointwise L1 terms, and its derivatives.

For a pair of predicted scores ``(m_i, m_j)`` with labels ``(y_i, y_j)``::

    P      = sigmoid(m_i - m_j)
    L      = 1 if y_i > y_j, 0 if y_i < y_j, 0.5 on ties
    rank   = -L log P - (1 - L) log(1 - P)
    total  = (1 - beta) * rank + beta * (|m_i - y_i| + |m_j - y_j|)

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TIE_EPS = 1e-9
# keeps P strictly inside (0, 1) where the logistic rounds to an endpoint
_P_LO = 2.0**-53
_P_HI = 1.0 - 2.0**-53


@dataclass(frozen=True)
class PairLossConfig:
    beta: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class PairLossValue:
    total: float
    rank_part: float
    l1_i: float
    l1_j: float
    grad_mi: float
    grad_mj: float


def rank_label(y_i, y_j, tie_eps: float = TIE_EPS):
    d = np.asarray(y_i, dtype=np.float64) - np.asarray(y_j, dtype=np.float64)
    out = np.where(d > tie_eps, 1.0, np.where(d < -tie_eps, 0.0, 0.5))
    return float(out) if out.ndim == 0 else out


def stable_sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def rank_probability(m_i, m_j):
    p = np.clip(stable_sigmoid(np.asarray(m_i, dtype=np.float64) - np.asarray(m_j, dtype=np.float64)), _P_LO, _P_HI)
    return float(p) if p.ndim == 0 else p


def rank_loss(p, target):
    p = np.asarray(p, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    out = -target * np.log(p) - (1.0 - target) * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def _softplus(z):
    # log(1 + e^z) without overflow
    return np.logaddexp(0.0, z)


def pair_terms(m_i, m_j, y_i, y_j, beta: float, tie_eps: float = TIE_EPS):
    """Vectorised pair loss.

    Returns ``(total, rank_part, l1_i, l1_j, grad_mi, grad_mj)`` as arrays.
    The rank term is evaluated in logit form, ``L*softplus(-d) +
    (1-L)*softplus(d)`` with ``d = m_i - m_j``, which equals the
    cross-entropy of the logistic probability but never takes ``log(0)``.
    """
    m_i, m_j, y_i, y_j = (np.asarray(a, dtype=np.float64) for a in (m_i, m_j, y_i, y_j))
    d = m_i - m_j
    target = np.asarray(rank_label(y_i, y_j, tie_eps))
    rank = target * _softplus(-d) + (1.0 - target) * _softplus(d)
    r_i = m_i - y_i
    r_j = m_j - y_j
    l1_i = np.abs(r_i)
    l1_j = np.abs(r_j)
    total = (1.0 - beta) * rank + beta * (l1_i + l1_j)
    g_rank = stable_sigmoid(d) - target
    grad_mi = (1.0 - beta) * g_rank + beta * np.sign(r_i)
    grad_mj = -(1.0 - beta) * g_rank + beta * np.sign(r_j)
    return total, rank, l1_i, l1_j, grad_mi, grad_mj


def pair_loss(m_i, m_j, y_i, y_j, cfg: PairLossConfig = PairLossConfig()) -> PairLossValue:
    parts = pair_terms(m_i, m_j, y_i, y_j, cfg.beta)
    return PairLossValue(*(float(v) for v in parts))


def l1_terms(m, y):
    """Pointwise ``|m - y|`` and its subgradient (0 at the kink)."""
    r = np.asarray(m, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.abs(r), np.sign(r)
