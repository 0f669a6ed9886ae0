"""Channel instances and state-distribution algebra.

Users are numbered 1..K.  Subsets of users are K-bit masks with user ``k``
on bit ``k - 1``; all erasure tables are flat arrays indexed by mask.
"""

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import kernels

MAX_USERS = 20
PMF_SUM_TOL = 1e-12
NEG_PROB_TOL = 1e-12

# stream ids >= this are reserved for deterministic redraws of rejected
# auxiliary coefficients
_REDRAW_STREAM_BASE = 1 << 62


class ValidationError(ValueError):
    """Input violates a documented precondition or schema."""


# ---------------------------------------------------------------------------
# subsets as bitmasks
# ---------------------------------------------------------------------------

def mask_of(users):
    """Bitmask for an iterable of 1-based user indices."""
    m = 0
    for k in users:
        k = int(k)
        if k < 1 or k > MAX_USERS:
            raise ValidationError(f"user index {k} out of range 1..{MAX_USERS}")
        m |= 1 << (k - 1)
    return m


def users_of(mask):
    """Sorted tuple of 1-based user indices contained in ``mask``."""
    out = []
    k = 1
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return tuple(out)


def popcount(mask):
    return int(mask).bit_count()


def submasks(mask):
    """All submasks of ``mask`` (including 0 and ``mask``), descending."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def masks_of_size(K, j):
    """Masks of exactly ``j`` users out of K, in lexicographic user order."""
    return [mask_of(c) for c in combinations(range(1, K + 1), j)]


def _as_mask(subset, K):
    if isinstance(subset, (int, np.integer)):
        mask = int(subset)
    else:
        mask = mask_of(subset)
    if mask < 0 or mask >> K:
        raise ValidationError(f"subset {subset!r} out of range for K={K}")
    return mask


# ---------------------------------------------------------------------------
# Gaussian BC
# ---------------------------------------------------------------------------

def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class GbcConfig:
    """Symmetric fading Gaussian BC instance.

    ``snr`` is the per-antenna ratio P / (n_t sigma^2) used in every rate
    formula.  Build from decibels with :meth:`from_db`, which keeps the dB
    value so that ``snr_db`` reproduces it exactly.
    """

    users: int
    tx_antennas: int
    rx_antennas: int = 1
    snr: float = 1.0
    _snr_db: float = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if int(self.users) != self.users or self.users < 1:
            raise ValidationError(f"users must be a positive integer, got {self.users}")
        if self.users > MAX_USERS:
            raise ValidationError(f"users must be <= {MAX_USERS}")
        if int(self.tx_antennas) != self.tx_antennas or self.tx_antennas < 1:
            raise ValidationError("tx_antennas must be a positive integer")
        if int(self.rx_antennas) != self.rx_antennas or self.rx_antennas < 1:
            raise ValidationError("rx_antennas must be a positive integer")
        if not (math.isfinite(self.snr) and self.snr > 0):
            raise ValidationError(f"snr must be positive and finite, got {self.snr}")

    @classmethod
    def from_db(cls, users, tx_antennas, rx_antennas=1, snr_db=0.0,
                reference="per-antenna"):
        """Config from an SNR in dB.

        ``reference="total"`` reads ``snr_db`` as P / sigma^2, so the
        per-antenna ratio is that value divided by ``tx_antennas``.
        """
        snr = db_to_linear(snr_db)
        if reference == "total":
            snr /= tx_antennas
            return cls(users, tx_antennas, rx_antennas, snr)
        if reference != "per-antenna":
            raise ValidationError(f"unknown SNR reference {reference!r}")
        return cls(users, tx_antennas, rx_antennas, snr, float(snr_db))

    @property
    def snr_db(self):
        if self._snr_db is not None:
            return self._snr_db
        return linear_to_db(self.snr)

    def with_snr(self, snr):
        return GbcConfig(self.users, self.tx_antennas, self.rx_antennas, snr)

    def with_snr_db(self, snr_db, reference="per-antenna"):
        return GbcConfig.from_db(self.users, self.tx_antennas, self.rx_antennas,
                                 snr_db, reference)

    @property
    def shape(self):
        """(K, n_r, n_t) of one channel realization."""
        return (self.users, self.rx_antennas, self.tx_antennas)


@dataclass(frozen=True)
class ChannelSample:
    """One or many fading realizations.

    blocks : complex array (..., K, n_r, n_t); ``blocks[..., k-1, :, :]`` is H_k.
    aux : complex array (...,); one extra CN(0,1) coefficient per realization,
        used as the phase-3 antenna gain of the two-user MAT scheme.
    """

    blocks: np.ndarray
    aux: np.ndarray

    @property
    def batched(self):
        return self.blocks.ndim == 4

    def __len__(self):
        return self.blocks.shape[0] if self.batched else 1

    @property
    def users(self):
        return self.blocks.shape[-3]

    @property
    def stacked(self):
        """Vertical concatenation H_K of all user blocks, (..., K n_r, n_t)."""
        K, nr, nt = self.blocks.shape[-3:]
        return self.blocks.reshape(self.blocks.shape[:-3] + (K * nr, nt))

    def user(self, k):
        """H_k for 1-based ``k``."""
        return self.blocks[..., k - 1, :, :]

    def group(self, ks):
        """Concatenation H_U for the listed 1-based users, in order."""
        ks = [k - 1 for k in ks]
        sub = self.blocks[..., ks, :, :]
        nr, nt = self.blocks.shape[-2:]
        return sub.reshape(sub.shape[:-3] + (len(ks) * nr, nt))

    def __getitem__(self, sl):
        if not self.batched:
            raise TypeError("cannot slice a single realization")
        return ChannelSample(self.blocks[sl], self.aux[sl])


@dataclass(frozen=True)
class ChannelStream:
    """Counter-based source of fading realizations.

    Sample ``i`` of stream ``stream`` is a pure function of
    ``(seed, stream, i)``: it is built from Philox-4x64 blocks keyed by
    ``(seed, stream)`` at counters ``i * blocks_per_sample ...``.  Drawing a
    range in one call or in pieces gives identical values.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must fit in 64 unsigned bits")
        if not 0 <= int(self.stream) < 2**64:
            raise ValidationError("stream must fit in 64 unsigned bits")

    def _raw(self, stream, start_block, n_blocks):
        gen = np.random.Philox(key=np.array([self.seed, stream], dtype=np.uint64),
                               counter=np.array([start_block, 0, 0, 0], dtype=np.uint64))
        return gen.random_raw(4 * n_blocks)

    def draw(self, shape, start, count):
        """Draw realizations ``start .. start+count-1`` for a (K, n_r, n_t) shape."""
        K, nr, nt = shape
        n_entries = K * nr * nt + 1  # + auxiliary coefficient
        n_normals = 2 * n_entries
        per_sample = -(-n_normals // 4)  # Philox blocks per sample
        raw = self._raw(self.stream, start * per_sample, count * per_sample)
        z = kernels.normals_from_raw(raw).reshape(count, 4 * per_sample)
        z = z[:, :n_normals] * math.sqrt(0.5)
        c = z[:, 0::2] + 1j * z[:, 1::2]
        blocks = c[:, :-1].reshape(count, K, nr, nt)
        aux = np.ascontiguousarray(c[:, -1])
        bad = np.flatnonzero(np.abs(aux) ** 2 < 1e-300)
        for i in bad:
            aux[i] = self._redraw_aux(start + int(i))
        return ChannelSample(np.ascontiguousarray(blocks), aux)

    def _redraw_aux(self, index):
        # measure-zero event; redraw deterministically from a side stream
        attempt = 0
        while True:
            raw = self._raw(_REDRAW_STREAM_BASE + (self.stream % _REDRAW_STREAM_BASE),
                            2 * index + attempt, 1)
            z = kernels.normals_from_raw(raw[:2]) * math.sqrt(0.5)
            val = complex(z[0], z[1])
            if abs(val) ** 2 >= 1e-300:
                return val
            attempt += 1


def draw_channel(cfg, stream, index=0, count=None):
    """Fading realization(s) for ``cfg`` from a :class:`ChannelStream`.

    With ``count=None`` a single realization (blocks of shape (K, n_r, n_t))
    at position ``index`` is returned; otherwise a batch of ``count``.
    """
    if count is None:
        s = stream.draw(cfg.shape, index, 1)
        return ChannelSample(s.blocks[0], s.aux[0])
    return stream.draw(cfg.shape, index, count)


# ---------------------------------------------------------------------------
# erasure BC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErasurePmf:
    """Joint erasure-pattern distribution.

    ``probs[U]`` is the probability that exactly the users in mask U are
    erased (and all others receive).
    """

    K: int
    probs: np.ndarray

    def __post_init__(self):
        if int(self.K) != self.K or not 1 <= self.K <= MAX_USERS:
            raise ValidationError(f"K must be in 1..{MAX_USERS}")
        p = np.array(self.probs, dtype=np.float64)
        if p.shape != (1 << self.K,):
            raise ValidationError(f"probs must have length 2^K = {1 << self.K}")
        if np.any(~np.isfinite(p)) or np.any(p < -NEG_PROB_TOL) or np.any(p > 1 + NEG_PROB_TOL):
            raise ValidationError("pattern probabilities must lie in [0, 1]")
        total = math.fsum(p)
        if abs(total - 1.0) > PMF_SUM_TOL:
            raise ValidationError(f"pattern probabilities sum to {total!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "_deltas", None)

    @classmethod
    def from_mapping(cls, K, probs):
        table = np.zeros(1 << K)
        for mask, val in probs.items():
            mask = int(mask)
            if mask < 0 or mask >> K:
                raise ValidationError(f"mask {mask} out of range for K={K}")
            table[mask] = float(val)
        return cls(K, table)

    @classmethod
    def independent(cls, eps):
        """Independent erasures with per-user probabilities ``eps``."""
        eps = np.asarray(eps, dtype=np.float64)
        K = eps.shape[0]
        table = np.ones(1 << K)
        for mask in range(1 << K):
            for k in range(K):
                table[mask] *= eps[k] if mask >> k & 1 else 1.0 - eps[k]
        return cls(K, table)

    def delta_table(self):
        """delta[F] = P(all users in F erased) for every mask F."""
        if self._deltas is None:
            t = np.array(self.probs)
            # superset sums, one bit at a time
            idx = np.arange(1 << self.K)
            for b in range(self.K):
                lo = idx[(idx >> b & 1) == 0]
                t[lo] += t[lo | (1 << b)]
            t.setflags(write=False)
            object.__setattr__(self, "_deltas", t)
        return self._deltas

    def to_json(self):
        return {"K": self.K,
                "probs": {str(m): float(p) for m, p in enumerate(self.probs) if p != 0.0}}

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls.from_mapping(int(obj["K"]), obj["probs"])


def delta_of(pmf, F):
    """P(S_F = 0): every user in F erased.  ``delta_of(pmf, ())`` is 1."""
    mask = _as_mask(F, pmf.K)
    if mask == 0:
        return 1.0
    return float(pmf.delta_table()[mask])


def phi_of(pmf, F, T, method="direct"):
    """P(S_F = 0, S_T = 1): users in F erased and users in T receiving.

    ``method="direct"`` sums pattern probabilities; ``"inclusion-exclusion"``
    uses sum over U subset of T of (-1)^|U| delta(F | U).
    """
    f = _as_mask(F, pmf.K)
    t = _as_mask(T, pmf.K)
    if f & t:
        raise ValidationError("F and T must be disjoint")
    if method == "direct":
        free = ((1 << pmf.K) - 1) & ~(f | t)
        return math.fsum(pmf.probs[f | s] for s in submasks(free))
    if method == "inclusion-exclusion":
        d = pmf.delta_table()
        return math.fsum((-1) ** popcount(u) * (1.0 if (f | u) == 0 else d[f | u])
                         for u in submasks(t))
    raise ValidationError(f"unknown method {method!r}")


@dataclass(frozen=True)
class SymmetricDeltas:
    """Erasure probabilities of a cardinality-symmetric EBC.

    ``deltas[j-1]`` is the probability that any fixed set of j users is
    simultaneously erased.
    """

    K: int
    deltas: tuple

    def __post_init__(self):
        d = tuple(float(x) for x in self.deltas)
        if int(self.K) != self.K or not 1 <= self.K <= MAX_USERS:
            raise ValidationError(f"K must be in 1..{MAX_USERS}")
        if len(d) != self.K:
            raise ValidationError(f"need K = {self.K} deltas, got {len(d)}")
        for j, x in enumerate(d):
            if not (0.0 <= x <= 1.0):
                raise ValidationError(f"delta_{j + 1} = {x} outside [0, 1]")
            if j and x > d[j - 1]:
                raise ValidationError(
                    f"delta_{j + 1} = {x} exceeds delta_{j} = {d[j - 1]}")
        if d[-1] >= 1.0:
            raise ValidationError("delta_K = 1: every user is always erased")
        object.__setattr__(self, "deltas", d)

    def delta(self, j):
        """delta_j with delta_0 = 1."""
        return 1.0 if j == 0 else self.deltas[j - 1]

    def phi(self, a, b):
        """P(a fixed users erased, b other fixed users receiving)."""
        return math.fsum((-1) ** u * math.comb(b, u) * self.delta(a + u)
                         for u in range(b + 1))

    def to_json(self):
        return {"K": self.K, "deltas": list(self.deltas)}

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(int(obj["K"]), tuple(obj["deltas"]))


def symmetric_pmf(deltas):
    """Materialize the pattern pmf of a symmetric EBC from delta_1..delta_K."""
    K = deltas.K
    by_size = [deltas.phi(u, K - u) for u in range(K + 1)]
    worst = min(by_size)
    if worst < -NEG_PROB_TOL:
        u = by_size.index(worst)
        raise ValidationError(
            f"inconsistent deltas: patterns with {u} erased users would have "
            f"probability {worst!r}")
    table = np.array([max(by_size[popcount(m)], 0.0) for m in range(1 << K)])
    return ErasurePmf(K, table)
