"""Log-space discrete probability distributions over explicit supports.

All probability arithmetic in this package happens in natural-log space
with log-sum-exp stabilization: rationality exponents up to 10 underflow
linear-space arithmetic. Zero-probability items are kept in the support
with logp -inf, never dropped, so supports stay aligned across the
listener/speaker matrices built on top of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import AllMassZero

NEG_INF = float("-inf")


@dataclass(frozen=True)
class Dist:
    """A normalized discrete distribution stored as log-probabilities.

    `support` is an ordered tuple of hashable item ids; `logp` is the
    aligned vector of natural-log probabilities. Construction validates
    normalization (log-sum-exp zero within 1e-9), uniqueness of the
    support, and that no entry is NaN or +inf.
    """

    support: tuple
    logp: np.ndarray

    def __post_init__(self):
        support = tuple(self.support)
        logp = np.array(self.logp, dtype=float, copy=True)
        logp.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "logp", logp)
        if logp.ndim != 1 or len(support) != logp.shape[0]:
            raise ValueError("support and logp lengths differ")
        if len(set(support)) != len(support):
            raise ValueError("support ids are not unique")
        if np.isnan(logp).any():
            raise ValueError("logp contains NaN")
        if np.isposinf(logp).any():
            raise ValueError("logp contains +inf")
        total = logsumexp(logp) if len(support) else NEG_INF
        if not np.isfinite(total) or abs(total) > 1e-9:
            raise ValueError(f"distribution is not normalized (logsumexp={total})")
        object.__setattr__(
            self, "_index", {item: k for k, item in enumerate(support)}
        )

    def __len__(self):
        return len(self.support)

    def index(self, item) -> int:
        return self._index[item]

    def logprob(self, item) -> float:
        return float(self.logp[self._index[item]])

    def prob(self, item) -> float:
        return float(np.exp(self.logp[self._index[item]]))

    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    def items(self):
        for k, item in enumerate(self.support):
            yield item, float(self.logp[k])


def log_normalize(logits, support) -> Dist:
    """Normalize unnormalized log-weights into a Dist over `support`.

    Raises AllMassZero when every logit is -inf.
    """
    logits = np.asarray(logits, dtype=float)
    support = tuple(support)
    if logits.ndim != 1 or logits.shape[0] != len(support):
        raise ValueError("logits and support lengths differ")
    if np.isnan(logits).any():
        raise ValueError("logits contain NaN")
    if np.isposinf(logits).any():
        raise ValueError("logits contain +inf")
    if np.all(np.isneginf(logits)):
        raise AllMassZero("every logit is -inf")
    return Dist(support, logits - logsumexp(logits))


def entropy(d: Dist) -> float:
    """Shannon entropy in nats, with 0*log(0) taken as 0."""
    finite = d.logp > NEG_INF
    h = -float(np.sum(np.exp(d.logp[finite]) * d.logp[finite]))
    return max(h, 0.0)


def mask_renormalize(d: Dist, keep) -> Dist:
    """Restrict `d` to the ids in `keep` and renormalize.

    Excluded items stay in the support at probability zero. Raises
    AllMassZero when `d` puts zero total mass on `keep`.
    """
    keep = frozenset(keep)
    unknown = keep - set(d.support)
    if unknown:
        raise ValueError(f"keep ids not in support: {sorted(map(str, unknown))}")
    mask = np.array([item in keep for item in d.support], dtype=bool)
    masked = np.where(mask, d.logp, NEG_INF)
    if np.all(np.isneginf(masked)):
        raise AllMassZero("zero total mass on keep set")
    return Dist(d.support, masked - logsumexp(masked))


def total_mass(d: Dist, keep) -> float:
    """Total probability that `d` assigns to the ids in `keep`."""
    keep = frozenset(keep)
    unknown = keep - set(d.support)
    if unknown:
        raise ValueError(f"keep ids not in support: {sorted(map(str, unknown))}")
    if not keep:
        return 0.0
    mask = np.array([item in keep for item in d.support], dtype=bool)
    return float(np.sum(np.exp(d.logp[mask])))


def log_mass(d: Dist, keep) -> float:
    """log of total_mass, computed without leaving log space (-inf legal)."""
    keep = frozenset(keep)
    unknown = keep - set(d.support)
    if unknown:
        raise ValueError(f"keep ids not in support: {sorted(map(str, unknown))}")
    if not keep:
        return NEG_INF
    mask = np.array([item in keep for item in d.support], dtype=bool)
    sub = d.logp[mask]
    if np.all(np.isneginf(sub)):
        return NEG_INF
    return float(logsumexp(sub))
