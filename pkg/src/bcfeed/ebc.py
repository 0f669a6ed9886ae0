"""Erasure broadcast channel: achievable region checks and symmetric capacity.

A JSC scheme for the EBC is described by phase fractions alpha_j and, for
each phase j, a distribution over the size-j user subsets served in that
phase.  Its product ``mu[J] = alpha_|J| * P(Q_j = J)`` is the normalized time
spent serving subset J.  For a symmetric channel the capacity-achieving
``mu`` follows from a recursion over increasing subset size.
"""

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .channel import (ErasurePmf, SymmetricDeltas, ValidationError, masks_of_size,
                      popcount, submasks, symmetric_pmf, users_of)

FEASIBILITY_TOL = 1e-9
REGION_TOL = 1e-9
MAX_ENUM_USERS = 8
SUM_TOL = 1e-10


@dataclass(frozen=True)
class EbcSchemeParams:
    """Phase fractions, per-phase subset distributions and alphabet size.

    alphas : alpha_1..alpha_K
    q2 : tuple of K dicts; ``q2[j-1][mask]`` is P(Q_j = J) for |J| = j
    alphabet_bits : log2 |X|
    """

    K: int
    alphas: tuple
    q2: tuple
    alphabet_bits: float = 1.0

    def __post_init__(self):
        K = self.K
        alphas = tuple(float(a) for a in self.alphas)
        if len(alphas) != K or len(self.q2) != K:
            raise ValidationError(f"need K = {K} phase fractions and distributions")
        if any(a < 0 for a in alphas) or abs(math.fsum(alphas) - 1.0) > SUM_TOL:
            raise ValidationError("phase fractions must be nonnegative and sum to 1")
        q2 = []
        for j, dist in enumerate(self.q2, 1):
            dist = {int(m): float(p) for m, p in dist.items()}
            for m, p in dist.items():
                if m <= 0 or m >> K or popcount(m) != j:
                    raise ValidationError(f"phase {j} distribution has invalid subset mask {m}")
                if p < 0:
                    raise ValidationError(f"phase {j} probability for mask {m} is negative")
            if abs(math.fsum(dist.values()) - 1.0) > SUM_TOL:
                raise ValidationError(f"phase {j} subset distribution does not sum to 1")
            q2.append(dist)
        if not self.alphabet_bits > 0:
            raise ValidationError("alphabet_bits must be positive")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "q2", tuple(q2))

    @classmethod
    def uniform(cls, alphas, alphabet_bits=1.0):
        """Every size-j subset equally likely in phase j."""
        K = len(alphas)
        q2 = []
        for j in range(1, K + 1):
            masks = masks_of_size(K, j)
            q2.append({m: 1.0 / len(masks) for m in masks})
        return cls(K, tuple(alphas), tuple(q2), alphabet_bits)

    def mu(self, mask):
        j = popcount(mask)
        return self.alphas[j - 1] * self.q2[j - 1].get(mask, 0.0)

    def to_json(self):
        return {"K": self.K, "alphas": list(self.alphas),
                "q2": [{str(m): p for m, p in d.items()} for d in self.q2],
                "alphabet_bits": self.alphabet_bits}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["K"]), tuple(obj["alphas"]), tuple(obj["q2"]),
                   float(obj.get("alphabet_bits", 1.0)))


@dataclass(frozen=True)
class MuAllocation:
    """Normalized time ``mu[J]`` per nonempty subset mask J (``mu[0]`` unused)."""

    K: int
    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        if mu.shape != (1 << self.K,):
            raise ValidationError("mu must have one entry per subset mask")
        mu[0] = 0.0
        if np.any(mu < 0) or abs(math.fsum(mu) - 1.0) > SUM_TOL:
            raise ValidationError("mu must be nonnegative and sum to 1")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    def __getitem__(self, mask):
        return float(self.mu[mask])

    def to_json(self):
        return {"K": self.K,
                "mu": {str(m): float(v) for m, v in enumerate(self.mu) if m}}


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of :func:`jsc_ebc_feasible`.

    ``slacks`` lists ``(constraint_id, slack)`` with ids ``(k,)`` for the
    per-user rate constraints and ``(j, k, J)`` for the phase constraints,
    J given as a tuple of users.
    """

    feasible: bool
    slacks: tuple
    tol: float = FEASIBILITY_TOL

    def binding(self, tol=None):
        tol = self.tol if tol is None else tol
        return [(cid, s) for cid, s in self.slacks if abs(s) <= tol]

    @property
    def worst(self):
        return min(self.slacks, key=lambda e: e[1])

    def __bool__(self):
        return self.feasible

    def to_json(self):
        return {"feasible": self.feasible,
                "slacks": [{"constraint_id": [list(x) if isinstance(x, tuple) else x
                                              for x in cid], "slack": s}
                           for cid, s in self.slacks]}


def _phi_table(pmf):
    d = pmf.delta_table().copy()
    d[0] = 1.0

    def phi(f, t):
        return math.fsum((-1) ** popcount(u) * d[f | u] for u in submasks(t))
    return d, phi


def jsc_ebc_feasible(rates, params, pmf, tol=FEASIBILITY_TOL):
    """Whether ``rates`` lie in the JSC achievable region for ``params``.

    Constraints are met when their slack is at least ``-tol``.
    """
    K = pmf.K
    rates = [float(r) for r in rates]
    if len(rates) != K or params.K != K:
        raise ValidationError(f"rates, params and pmf must all have K = {K}")
    if any(r < 0 for r in rates):
        raise ValidationError("rates must be nonnegative")
    d, phi = _phi_table(pmf)
    full = (1 << K) - 1
    L = params.alphabet_bits
    slacks = []
    for k in range(1, K + 1):
        cap = params.alphas[0] * params.q2[0].get(1 << (k - 1), 0.0) * (1 - d[full]) * L
        slacks.append(((k,), float(cap - rates[k - 1])))
    for j in range(2, K + 1):
        for J in masks_of_size(K, j):
            for k in users_of(J):
                kb = 1 << (k - 1)
                f = (full & ~J) | kb
                lhs = params.mu(J) * (1 - d[f])
                rhs = math.fsum(params.mu(I) * phi(f, J & ~I)
                                for I in submasks(J) if I != J and I & kb)
                slacks.append(((j, k, users_of(J)), float(lhs - rhs)))
    feasible = all(s >= -tol for _, s in slacks)
    return FeasibilityReport(feasible, tuple(slacks), tol)


def _weights(deltas):
    if deltas.deltas[-1] >= 1.0:
        raise ValidationError("delta_K = 1: every user is always erased")
    return [1.0 / (1.0 - d) for d in deltas.deltas]


@dataclass(frozen=True)
class RegionCheck:
    feasible: bool
    excess: float
    permutation: tuple

    def __bool__(self):
        return self.feasible


def sym_capacity_region_check(rates, deltas, alphabet_bits=1.0, shortcut=False,
                              tol=REGION_TOL):
    """Check ``rates`` against every permutation constraint of the region.

    For each permutation pi, sum_k R_pi(k) / (1 - delta_k) <= log|X|.  With
    ``shortcut=True`` only the binding permutation (largest rates on the
    largest weights, i.e. on the earliest positions) is evaluated; otherwise all K! are enumerated, which is
    refused beyond K = 8.

    Returns
    -------
    RegionCheck
        ``excess`` is the largest left-hand side minus log|X| and
        ``permutation`` the (1-based) permutation attaining it.
    """
    K = deltas.K
    rates = [float(r) for r in rates]
    if len(rates) != K:
        raise ValidationError(f"need K = {K} rates")
    if any(r < 0 for r in rates):
        raise ValidationError("rates must be nonnegative")
    w = _weights(deltas)
    if shortcut:
        # rearrangement inequality: pair the i-th smallest rate with the i-th
        # smallest weight (weights are nonincreasing in k since delta_k is)
        by_rate = sorted(range(K), key=lambda i: rates[i])
        by_weight = sorted(range(K), key=lambda k: w[k])
        perm = [0] * K
        for i, k in zip(by_rate, by_weight):
            perm[k] = i
        best = tuple(i + 1 for i in perm)
        worst = math.fsum(rates[i] * wk for i, wk in zip(perm, w))
    else:
        if K > MAX_ENUM_USERS:
            raise ValidationError(
                f"enumerating {K}! permutations is refused above K = {MAX_ENUM_USERS}; "
                "use shortcut=True")
        worst, best = -math.inf, None
        for perm in permutations(range(K)):
            lhs = math.fsum(rates[i] * wk for i, wk in zip(perm, w))
            if lhs > worst:
                worst, best = lhs, tuple(i + 1 for i in perm)
    excess = worst - alphabet_bits
    return RegionCheck(excess <= tol, float(excess), best)


def sym_rate_ebc(deltas, alphabet_bits=1.0):
    """Symmetric capacity log|X| / sum_k 1/(1 - delta_k)."""
    return alphabet_bits / math.fsum(_weights(deltas))


def mu_solver_symmetric(deltas):
    """Capacity-achieving time allocation for a symmetric EBC.

    Singletons start with equal weight; for |J| >= 2, in increasing size,

        mu_J = sum_{I : k in I, I proper subset of J}
               phi_{K-j+1, j-|I|} / (1 - delta_{K-j+1}) * mu_I,

    with k = min J.  The table is normalized at the end.
    """
    K = deltas.K
    _weights(deltas)
    mu = np.zeros(1 << K)
    for k in range(K):
        mu[1 << k] = 1.0
    for j in range(2, K + 1):
        denom = 1.0 - deltas.delta(K - j + 1)
        for J in masks_of_size(K, j):
            kb = J & -J
            mu[J] = math.fsum(deltas.phi(K - j + 1, j - popcount(I)) / denom * mu[I]
                              for I in submasks(J) if I != J and I & kb)
    mu /= math.fsum(mu)
    return MuAllocation(K, mu)


def lemma2_check(mu, deltas):
    """Largest violation of the telescoping identities satisfied by optimal mu.

    For every k and every W containing k within {k..K}:
    sum_{I : k in I, I subset of W} mu_I = (1 - delta_K) mu_{k} / (1 - delta_{K-|W|+1}).
    Any allocation is accepted; the violation is reported, not raised.
    """
    K = deltas.K
    worst = 0.0
    dK = deltas.delta(K)
    for k in range(1, K + 1):
        kb = 1 << (k - 1)
        upper = ((1 << K) - 1) & ~(kb - 1)  # users k..K
        for W in submasks(upper):
            if not W & kb:
                continue
            lhs = math.fsum(mu.mu[I] for I in submasks(W) if I & kb)
            rhs = (1 - dK) * mu.mu[kb] / (1 - deltas.delta(K - popcount(W) + 1))
            worst = max(worst, abs(lhs - rhs))
    return worst


def mu_to_params(mu, alphabet_bits=1.0):
    """Scheme parameters realizing ``mu``: alpha_j = sum_{|J|=j} mu_J."""
    K = mu.K
    alphas, q2 = [], []
    for j in range(1, K + 1):
        masks = masks_of_size(K, j)
        a = math.fsum(mu.mu[m] for m in masks)
        alphas.append(a)
        if a > 0:
            q2.append({m: float(mu.mu[m] / a) for m in masks})
        else:
            q2.append({m: 1.0 / len(masks) for m in masks})
    # renormalize away rounding so the sum check is exact to double precision
    s = math.fsum(alphas)
    return EbcSchemeParams(K, tuple(a / s for a in alphas), tuple(q2), alphabet_bits)


def sym_rate_from_mu(mu, deltas, alphabet_bits=1.0):
    """Rate each user gets from its singleton share: mu_{k} (1 - delta_K) log|X|."""
    return float(mu.mu[1]) * (1.0 - deltas.delta(deltas.K)) * alphabet_bits


__all__ = [
    "EbcSchemeParams", "MuAllocation", "FeasibilityReport", "RegionCheck",
    "jsc_ebc_feasible", "sym_capacity_region_check", "sym_rate_ebc",
    "mu_solver_symmetric", "lemma2_check", "mu_to_params", "sym_rate_from_mu",
    "ErasurePmf", "SymmetricDeltas", "symmetric_pmf",
]
