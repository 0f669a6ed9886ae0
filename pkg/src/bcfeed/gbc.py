"""Symmetric rates of the fading Gaussian broadcast channel with delayed CSIT.

The joint source-channel (JSC) scheme rate is a ratio of expectations

    R = a_1 / (K + sum_{j=2}^K C(K, j) prod_{t=2}^j B_t / a_t),
    B_t = sum_{l<=t} b_{l,t},

with

    a_t = E log2 det(I + snr H_T^H diag(I, I/beta_t) H_T),  T = {1} u {t+1..K},
    b_{l,t} = E log2 det(I + (snr/beta_{t-1}) H_l A^{-1} H_l^H),
    A = I + snr H_1^H H_1.

Factoring A out of the a_t determinant gives

    a_t = log2 det A + sum log2(1 + (snr/beta_t) lam),

where lam are the eigenvalues of H_R A^{-1} H_R^H with R = {t+1..K}.  Every
beta therefore acts only as a scalar on cached per-sample eigenvalues, which
is what makes dense beta grids cheap (see :mod:`bcfeed.optimizer`).
"""

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .channel import GbcConfig, ValidationError
from .montecarlo import McEstimate, McPlan, NonFiniteIntegrandError, StreamedBatch

HERMITIAN_TOL = 1e-12


class NotPositiveDefiniteError(ArithmeticError):
    """A log-det argument failed its Cholesky factorization."""

    def __init__(self, index, what="matrix"):
        self.index = index
        super().__init__(f"{what} is not positive definite at sample {index}")


class NotHermitianError(ArithmeticError):
    pass


class DegenerateRateError(ArithmeticError):
    pass


class Scheme(str, enum.Enum):
    JSC = "JSC"
    JSC_FIXED_BETA = "JSC_FIXED_BETA"
    TDMA = "TDMA"
    MAT2 = "MAT2"
    QMAT = "QMAT"
    UPPER = "UPPER"


@dataclass(frozen=True)
class RatePoint:
    """One point of a rate-vs-SNR curve."""

    snr_db: float
    scheme: Scheme
    rate: McEstimate
    betas: tuple = None
    alphas: tuple = None

    def __post_init__(self):
        jsc = self.scheme in (Scheme.JSC, Scheme.JSC_FIXED_BETA)
        if jsc != (self.betas is not None and self.alphas is not None):
            raise ValidationError(
                f"betas/alphas must be given exactly for JSC schemes ({self.scheme.value})")


# ---------------------------------------------------------------------------
# Hermitian PD helpers
# ---------------------------------------------------------------------------

def hermitian_part(m, tol=HERMITIAN_TOL):
    """Return (m + m^H)/2 after checking m is Hermitian to relative ``tol``."""
    mh = np.conj(np.swapaxes(m, -1, -2))
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    err = float(np.max(np.abs(m - mh))) if m.size else 0.0
    if err > tol * scale:
        raise NotHermitianError(f"matrix deviates from Hermitian by {err:.3e}")
    return 0.5 * (m + mh)


def logdet_pd(m, what="matrix", offset=0):
    """log2 det of a stack of Hermitian PD matrices via Cholesky."""
    vals = kernels.chol_logdet(hermitian_part(m))
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NotPositiveDefiniteError(offset + int(bad[0]), what)
    return vals


def _eigs(m):
    lam = np.linalg.eigvalsh(hermitian_part(m))
    return np.maximum(lam, 0.0)


def _identity(n):
    return np.eye(n, dtype=np.complex128)


def _herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def _resolve_batch(cfg, plan, batch):
    if batch is None:
        return StreamedBatch(plan or McPlan(), cfg)
    if batch.cfg.shape != cfg.shape:
        raise ValidationError(
            f"batch dimensions {batch.cfg.shape} do not match config {cfg.shape}")
    return batch


def _estimate(values, batch):
    values = np.asarray(values, dtype=np.float64)
    return McEstimate.from_samples(values, batch.plan.seed, batch.plan.stream)


def _check_betas(cfg, betas):
    betas = tuple(float(b) for b in betas)
    if len(betas) != cfg.users - 1:
        raise ValidationError(f"need K-1 = {cfg.users - 1} betas, got {len(betas)}")
    for i, b in enumerate(betas, 1):
        if not (math.isfinite(b) and b > 0):
            raise ValidationError(f"beta_{i} must be positive and finite, got {b}")
    return betas


def fixed_betas(K):
    """Heuristic compression levels beta_{j-1} = 1 + (j-1)(j+2), j = 2..K."""
    return tuple(float(1 + (j - 1) * (j + 2)) for j in range(2, K + 1))


# ---------------------------------------------------------------------------
# JSC scheme
# ---------------------------------------------------------------------------

class JscTables:
    """Per-sample quantities from which every a_t and b_{l,t} follows.

    Attributes
    ----------
    logdet_a : (N,) log2 det(I + snr H_1^H H_1)
    lam_a : list, entry t-1 holds the (N, (K-t) n_r) eigenvalues for a_t
    lam_b : list, entry l-1 holds the (N, n_r) eigenvalues of
        H_l A^{-1} H_l^H
    """

    def __init__(self, cfg, logdet_a, lam_a, lam_b, seed=0, stream=0):
        self.cfg = cfg
        self.logdet_a = logdet_a
        self.lam_a = lam_a
        self.lam_b = lam_b
        self.seed = seed
        self.stream = stream
        self._logdet_mean = math.fsum(logdet_a) / len(logdet_a)

    @property
    def samples(self):
        return self.logdet_a.shape[0]

    @classmethod
    def build(cls, cfg, plan=None, batch=None, threads=None):
        batch = _resolve_batch(cfg, plan, batch)
        K, nr, nt = cfg.shape
        snr = cfg.snr

        def work(s):
            h1 = s.user(1)
            a = _identity(nt) + snr * (_herm(h1) @ h1)
            a = hermitian_part(a)
            ld = kernels.chol_logdet(a)
            g = kernels.whitened_gram(a, s.stacked)
            lam_a = tuple(_eigs(g[:, t * nr:, t * nr:]) for t in range(1, K))
            lam_b = tuple(_eigs(g[:, l * nr:(l + 1) * nr, l * nr:(l + 1) * nr])
                          for l in range(K))
            return (ld,) + lam_a + lam_b

        parts = batch.map(work, threads)
        ld = parts[0]
        bad = np.flatnonzero(~np.isfinite(ld))
        if bad.size:
            raise NotPositiveDefiniteError(int(bad[0]), "I + snr H_1^H H_1")
        return cls(cfg, ld, list(parts[1:K]), list(parts[K:]),
                   batch.plan.seed, batch.plan.stream)

    def _check_t(self, t):
        if not 1 <= t <= self.cfg.users:
            raise ValidationError(f"t must be in 1..{self.cfg.users}, got {t}")

    # per-sample values -----------------------------------------------------

    def a_samples(self, t, beta=None):
        self._check_t(t)
        if t == self.cfg.users:
            return self.logdet_a.copy()
        if beta is None or not beta > 0:
            raise ValidationError(f"a_{t} needs a positive beta")
        lam = self.lam_a[t - 1]
        return self.logdet_a + np.log2(1.0 + (self.cfg.snr / beta) * lam).sum(axis=1)

    def b_samples(self, l, beta_prev):
        if not 1 <= l <= self.cfg.users:
            raise ValidationError(f"l must be in 1..{self.cfg.users}, got {l}")
        if not beta_prev > 0:
            raise ValidationError("beta_prev must be positive")
        lam = self.lam_b[l - 1]
        return np.log2(1.0 + (self.cfg.snr / beta_prev) * lam).sum(axis=1)

    def big_b_samples(self, t, beta_prev):
        """Per-sample B_t = sum_{l<=t} b_{l,t}."""
        return sum(self.b_samples(l, beta_prev) for l in range(1, t + 1))

    def term_matrix(self, betas):
        """Columns a_1..a_K, B_2..B_K evaluated per sample."""
        K = self.cfg.users
        cols = [self.a_samples(t, betas[t - 1] if t < K else None)
                for t in range(1, K + 1)]
        cols += [self.big_b_samples(t, betas[t - 2]) for t in range(2, K + 1)]
        return np.column_stack(cols)

    # means over a beta grid ------------------------------------------------

    def a_mean_grid(self, t, grid):
        """Mean a_t for every beta in ``grid`` (ignored for t=K)."""
        self._check_t(t)
        grid = np.asarray(grid, dtype=np.float64)
        if t == self.cfg.users:
            return np.full(grid.shape, self._logdet_mean)
        scales = self.cfg.snr / grid
        return self._logdet_mean + kernels.log2_shift_grid_mean(self.lam_a[t - 1], scales)

    def big_b_mean_grid(self, t, grid):
        """Mean B_t for every beta_{t-1} in ``grid``."""
        grid = np.asarray(grid, dtype=np.float64)
        lam = np.concatenate(self.lam_b[:t], axis=1)
        return kernels.log2_shift_grid_mean(lam, self.cfg.snr / grid)


def jsc_rate_from_means(K, a, big_b):
    """Rate and phase fractions from term means.

    a : a_1..a_K; big_b : mapping t -> B_t for t = 2..K.
    """
    for t, v in enumerate(a, 1):
        if not v > 0:
            raise DegenerateRateError(f"a_{t} = {v} is not positive")
    weights = []
    prod = 1.0
    for j in range(2, K + 1):
        prod *= big_b[j] / a[j - 1]
        weights.append(math.comb(K, j) / K * prod)
    alpha1 = 1.0 / (1.0 + math.fsum(weights))
    alphas = (alpha1,) + tuple(float(alpha1 * w) for w in weights)
    return float(alpha1 * a[0] / K), alphas


def _jsc_from_matrix(K, means):
    a = list(means[:K])
    big_b = {t: means[K + t - 2] for t in range(2, K + 1)}
    return jsc_rate_from_means(K, a, big_b)


def _delta_method(f, values, seed, stream):
    """Estimate of f(E[v]) with a linearized standard error.

    values : (N, d) per-sample vectors; f maps a length-d mean to a scalar.
    """
    n = values.shape[0]
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise NonFiniteIntegrandError(int(bad[0]), values[bad[0]].tolist())
    means = np.array([math.fsum(c) / n for c in values.T])
    rate = f(means)
    grad = np.empty(means.shape[0])
    for k in range(means.shape[0]):
        h = 1e-6 * max(1.0, abs(means[k]))
        up, dn = means.copy(), means.copy()
        up[k] += h
        dn[k] -= h
        grad[k] = (f(up) - f(dn)) / (2 * h)
    lin = (values - means) @ grad
    stderr = math.sqrt(math.fsum(lin ** 2) / (n - 1) / n) if n > 1 else 0.0
    return McEstimate(rate, stderr, n, seed, stream)


def jsc_sym_rate(cfg, betas, plan=None, batch=None, threads=None, tables=None):
    """Symmetric JSC rate at fixed compression levels.

    Returns
    -------
    (McEstimate, tuple)
        The rate in bits per channel use and the phase fractions
        alpha_1..alpha_K.  The stderr is a delta-method estimate.
    """
    betas = _check_betas(cfg, betas)
    K = cfg.users
    if tables is None:
        tables = JscTables.build(cfg, plan, batch, threads)
    if K == 1:
        est = McEstimate.from_samples(tables.logdet_a, tables.seed, tables.stream)
        return est, (1.0,)
    values = tables.term_matrix(betas)
    est = _delta_method(lambda m: _jsc_from_matrix(K, m)[0], values,
                        tables.seed, tables.stream)
    _, alphas = _jsc_from_matrix(K, np.array([math.fsum(c) / len(c) for c in values.T]))
    return est, alphas


def a_term(cfg, t, beta_t=None, plan=None, batch=None, threads=None, tables=None):
    """Monte Carlo estimate of a_t (beta_t required iff t < K)."""
    if t < cfg.users and beta_t is None:
        raise ValidationError(f"a_{t} needs beta_{t}")
    if t == cfg.users and beta_t is not None:
        raise ValidationError(f"a_{t} takes no beta")
    if tables is None:
        tables = JscTables.build(cfg, plan, batch, threads)
    return McEstimate.from_samples(tables.a_samples(t, beta_t), tables.seed, tables.stream)


def b_term(cfg, l, t, beta_prev, plan=None, batch=None, threads=None, tables=None):
    """Monte Carlo estimate of b_{l,t}; requires 1 <= l <= t, 2 <= t <= K."""
    if not (2 <= t <= cfg.users and 1 <= l <= t):
        raise ValidationError(f"need 1 <= l <= t and 2 <= t <= K, got l={l}, t={t}")
    if tables is None:
        tables = JscTables.build(cfg, plan, batch, threads)
    return McEstimate.from_samples(tables.b_samples(l, beta_prev), tables.seed, tables.stream)


def a_samples_direct(cfg, sample, t, beta_t=None):
    """a_t per sample from its defining n_t x n_t determinant."""
    K, nr, nt = cfg.shape
    users = [1] + list(range(t + 1, K + 1))
    h = sample.group(users)
    w = np.ones(len(users) * nr)
    if t < K:
        w[nr:] = 1.0 / beta_t
    m = _identity(nt) + cfg.snr * (_herm(h) @ (w[:, None] * h))
    return logdet_pd(m, f"a_{t} argument")


def b_samples_direct(cfg, sample, l, beta_prev):
    """b_{l,t} per sample from its defining n_r x n_r determinant."""
    nt = cfg.tx_antennas
    nr = cfg.rx_antennas
    h1, hl = sample.user(1), sample.user(l)
    a = _identity(nt) + cfg.snr * (_herm(h1) @ h1)
    inner = hl @ np.linalg.solve(a, _herm(hl))
    m = _identity(nr) + (cfg.snr / beta_prev) * inner
    return logdet_pd(m, f"b_{l} argument")


# ---------------------------------------------------------------------------
# two-user closed form
# ---------------------------------------------------------------------------

def two_user_terms(snr, sample, sigma_hat_ratio):
    """Per-sample two-user quantities by explicit 2x2 algebra.

    Returns columns (a_1, a_2, b_1 + b_2): the phase-1 joint determinant
    with compression noise ``sigma_hat_ratio`` on the overheard signal, the
    single-user rate, and the side-information terms written with the
    Sherman-Morrison inverse of I + snr h_1 h_1^H.
    """
    h1 = sample.user(1)[..., 0, :]
    h2 = sample.user(2)[..., 0, :]
    n1 = np.sum(np.abs(h1) ** 2, axis=-1)
    n2 = np.sum(np.abs(h2) ** 2, axis=-1)
    c = np.abs(np.sum(np.conj(h1) * h2, axis=-1)) ** 2
    s, r = snr, 1.0 / sigma_hat_ratio
    det = (1 + s * n1) * (1 + s * r * n2) - s * s * r * c
    a1 = np.log2(det)
    a2 = np.log2(1 + s * n1)
    g1 = n1 / (1 + s * n1)
    g2 = n2 - s * c / (1 + s * n1)
    b = np.log2(1 + s * r * g1) + np.log2(1 + s * r * g2)
    return np.column_stack([a1, a2, b])


def two_user_jsc_rate(cfg, sigma_hat_ratio, plan=None, batch=None, threads=None):
    """Two-user JSC rate with compression-noise ratio sigma_hat^2 / sigma^2.

    Returns (McEstimate, alpha_1).  Requires K=2, n_t=2, n_r=1.
    """
    if cfg.shape != (2, 1, 2):
        raise ValidationError("two_user_jsc_rate needs K=2, n_t=2, n_r=1")
    if not sigma_hat_ratio > 0:
        raise ValidationError("sigma_hat_ratio must be positive")
    batch = _resolve_batch(cfg, plan, batch)
    values = batch.map(lambda s: two_user_terms(cfg.snr, s, sigma_hat_ratio), threads)

    def alpha(m):
        return float(m[1] / (m[1] + 0.5 * m[2]))

    est = _delta_method(lambda m: 0.5 * alpha(m) * m[0], values,
                        batch.plan.seed, batch.plan.stream)
    means = np.array([math.fsum(c) / len(c) for c in values.T])
    return est, alpha(means)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def tdma_rate(cfg, plan=None, batch=None, threads=None):
    """(1/K) E log2 det(I + snr H_1^H H_1)."""
    batch = _resolve_batch(cfg, plan, batch)
    nt = cfg.tx_antennas

    def work(s):
        h1 = s.user(1)
        return kernels.chol_logdet(hermitian_part(_identity(nt) + cfg.snr * (_herm(h1) @ h1)))

    return _estimate(batch.map(work, threads), batch).scaled(1.0 / cfg.users)


def mat2_rate(cfg, plan=None, batch=None, threads=None):
    """Two-user MAT rate with noisy phase-3 retransmission.

    The phase-3 signal is received through an extra CN(0,1) gain h', so the
    effective noise on the retransmitted symbol is 1 + 2/|h'|^2.
    """
    if cfg.shape != (2, 1, 2):
        raise ValidationError("mat2_rate needs K=2, n_t=2, n_r=1")
    batch = _resolve_batch(cfg, plan, batch)

    def work(s):
        g = np.abs(s.aux) ** 2
        d = np.sqrt(np.stack([np.ones_like(g), g / (g + 2.0)], axis=-1))
        h = d[:, :, None] * s.stacked
        return kernels.chol_logdet(hermitian_part(_identity(2) + cfg.snr * (h @ _herm(h))))

    return _estimate(batch.map(work, threads), batch).scaled(1.0 / 3.0)


def qmat_noise(K, rx=1):
    """Diagonal of N~: 1 + (j-1)(j+2) for user block j, repeated rx times."""
    return np.repeat([1.0 + (j - 1) * (j + 2) for j in range(1, K + 1)], rx)


def qmat_rate(cfg, plan=None, batch=None, threads=None):
    """(DoF_sym / K) E log2 det(I + snr H^H N~^{-1} H), H the stacked channel."""
    batch = _resolve_batch(cfg, plan, batch)
    K, nr, nt = cfg.shape
    w = 1.0 / qmat_noise(K, nr)

    def work(s):
        h = s.stacked
        return kernels.chol_logdet(
            hermitian_part(_identity(nt) + cfg.snr * (_herm(h) @ (w[:, None] * h))))

    return _estimate(batch.map(work, threads), batch).scaled(float(dof_sym(K)) / K)


def upper_bound(cfg, plan=None, batch=None, threads=None):
    """Genie-aided bound DoF_sym(K) * E log2 det(I + snr H_1^H H_1)."""
    return tdma_rate(cfg, plan, batch, threads).scaled(float(dof_sym(cfg.users)) * cfg.users)


def dof_sym(K):
    """Optimal symmetric DoF with delayed CSIT, 1 / (1 + 1/2 + ... + 1/K)."""
    if int(K) != K or K < 1:
        raise ValidationError(f"K must be a positive integer, got {K}")
    return 1 / sum(Fraction(1, j) for j in range(1, int(K) + 1))


def dof_slope_check(cfg, snr_db_pair=(40.0, 60.0), betas=None, plan=None, threads=None):
    """Measured prelog (R(snr2) - R(snr1)) / log2(snr2/snr1) of the JSC rate.

    Both points use the same channel draws; ``betas`` default to all ones.
    """
    lo, hi = snr_db_pair
    if not hi > lo:
        raise ValidationError("snr_db_pair must be increasing")
    if betas is None:
        betas = (1.0,) * (cfg.users - 1)
    plan = plan or McPlan()
    rates = []
    for db in (lo, hi):
        c = cfg.with_snr_db(db)
        rates.append(jsc_sym_rate(c, betas, plan, threads=threads)[0].mean)
    return (rates[1] - rates[0]) / ((hi - lo) / 10.0 * math.log2(10.0))
