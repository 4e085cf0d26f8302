"""Survival-style comparison of episodes-to-success between conditions.

All one-sided tests use the convention "the first group is better": it
converges faster (log-rank, RMST) or succeeds more often (Fisher).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm

from .rng import Rng


@dataclass(frozen=True)
class SurvivalData:
    times: np.ndarray
    censored: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "censored", np.asarray(self.censored, dtype=bool))
        if self.times.shape != self.censored.shape or self.times.ndim != 1:
            raise ValueError("times and censored flags must be equal-length vectors")

    def __len__(self):
        return self.times.size

    @classmethod
    def from_records(cls, records: Iterable, tau: float) -> "SurvivalData":
        """Unsuccessful runs, and successes later than ``tau``, are censored at ``tau``."""
        times, cens = [], []
        for r in records:
            ok = r.success and r.episodes_to_success <= tau
            times.append(r.episodes_to_success if ok else tau)
            cens.append(not ok)
        return cls(np.array(times, dtype=np.float64), np.array(cens, dtype=bool))


def _rmst_rows(times: np.ndarray, censored: np.ndarray, tau: float) -> np.ndarray:
    """Kaplan-Meier area up to ``tau`` for each row of a (R, m) batch."""
    t = np.minimum(times, tau)
    ev = ~censored
    # events sort ahead of censorings at equal times
    order = np.lexsort((censored, t), axis=-1)
    t = np.take_along_axis(t, order, axis=-1)
    ev = np.take_along_axis(ev, order, axis=-1)
    m = t.shape[-1]
    at_risk = m - np.arange(m)
    surv = np.cumprod(np.where(ev, 1.0 - 1.0 / at_risk, 1.0), axis=-1)
    before = np.concatenate([np.ones(t.shape[:-1] + (1,)), surv[..., :-1]], axis=-1)
    gaps = np.diff(np.concatenate([np.zeros(t.shape[:-1] + (1,)), t], axis=-1), axis=-1)
    area = (before * gaps).sum(axis=-1) + surv[..., -1] * (tau - t[..., -1])
    plain = ~censored.any(axis=-1)
    if plain.any():
        area = np.where(plain, np.mean(np.minimum(times, tau), axis=-1), area)
    return area


def rmst(data: SurvivalData, tau: float) -> float:
    """Restricted mean survival time: area under the Kaplan-Meier curve on [0, tau]."""
    if len(data) == 0:
        raise ValueError("no runs")
    if tau <= 0 or np.any(data.times > tau):
        raise ValueError("need tau > 0 and every time <= tau")
    return float(_rmst_rows(data.times[None], data.censored[None], tau)[0])


def kaplan_meier(data: SurvivalData):
    """Distinct event times and the survival estimate just after each."""
    ts = np.unique(data.times[~data.censored])
    surv, s = [], 1.0
    for t in ts:
        n = np.sum(data.times >= t)
        d = np.sum((data.times == t) & ~data.censored)
        s *= 1.0 - d / n
        surv.append(s)
    return ts, np.array(surv)


def log_rank_one_sided(a: SurvivalData, b: SurvivalData) -> float:
    """One-sided log-rank p-value for "a reaches success sooner than b"."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both groups need runs")
    times = np.concatenate([a.times, b.times])
    events = ~np.concatenate([a.censored, b.censored])
    if not events.any():
        raise ValueError("no events in either group")
    in_a = np.arange(times.size) < len(a)
    obs_minus_exp = var = 0.0
    for t in np.unique(times[events]):
        risk = times >= t
        n, n_a = risk.sum(), (risk & in_a).sum()
        hit = events & (times == t)
        d, d_a = hit.sum(), (hit & in_a).sum()
        obs_minus_exp += d_a - d * n_a / n
        if n > 1:
            var += d * (n_a / n) * (1 - n_a / n) * (n - d) / (n - 1)
    if var <= 0:
        return 0.5
    return float(norm.sf(obs_minus_exp / np.sqrt(var)))


def permutation_test_rmst(a: SurvivalData, b: SurvivalData, n_perm: int = 49_999,
                          tau: float = 10_000, rng: Rng = None, batch: int = 5000) -> float:
    """One-sided label-permutation p-value for "a has the smaller RMST".

    Permutations order the pooled runs by fresh uniform keys.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    rng = rng if rng is not None else Rng(0)
    observed = rmst(a, tau) - rmst(b, tau)
    times = np.concatenate([a.times, b.times])
    cens = np.concatenate([a.censored, b.censored])
    n, n_a = times.size, len(a)
    hits, done = 0, 0
    while done < n_perm:
        k = min(batch, n_perm - done)
        perm = np.argsort(rng.uniform((k, n)), axis=1, kind="stable")
        pt, pc = times[perm], cens[perm]
        delta = _rmst_rows(pt[:, :n_a], pc[:, :n_a], tau) - _rmst_rows(pt[:, n_a:], pc[:, n_a:], tau)
        hits += int(np.sum(delta <= observed + 1e-9 * max(1.0, abs(observed))))
        done += k
    return (1 + hits) / (n_perm + 1)


def log_choose(n: int, k: int) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def fisher_exact_one_sided(successes_a: int, n_a: int, successes_b: int, n_b: int) -> float:
    """Hypergeometric upper tail: P(at least ``successes_a`` successes land in group a)."""
    if not (0 <= successes_a <= n_a and 0 <= successes_b <= n_b):
        raise ValueError("success counts must lie in [0, n]")
    total_s, total = successes_a + successes_b, n_a + n_b
    log_den = log_choose(total, n_a)
    hi = min(n_a, total_s)
    terms = [log_choose(total_s, x) + log_choose(total - total_s, n_a - x) - log_den
             for x in range(successes_a, hi + 1)]
    return float(min(1.0, np.exp(terms).sum())) if terms else 0.0
