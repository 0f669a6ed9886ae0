"""Reproducible Monte Carlo estimation over fading ensembles.

Sample ``i`` always comes from the same counter position of a
:class:`~bcfeed.channel.ChannelStream`, and integrands are evaluated chunk by
chunk into one flat per-sample array.  Means and variances are formed with
correctly rounded sums (``math.fsum``), so the result does not depend on the
chunk size, the worker count, or whether the batch was cached.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelStream, ValidationError

DEFAULT_SAMPLES = 100_000
DEFAULT_CHUNK = 8192
DEFAULT_MEMORY_BUDGET = 1 << 30  # bytes


class MemoryBudgetError(MemoryError):
    """A cached batch would exceed the configured memory budget."""


class NonFiniteIntegrandError(ArithmeticError):
    """An integrand produced NaN or inf; ``index`` is the first bad sample."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"non-finite integrand value {value!r} at sample {index}")


@dataclass(frozen=True)
class McPlan:
    """How many samples to draw, from which stream, in what work units."""

    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    chunk: int = DEFAULT_CHUNK
    stream: int = 0

    def __post_init__(self):
        if int(self.samples) != self.samples or self.samples < 1:
            raise ValidationError("samples must be a positive integer")
        if int(self.chunk) != self.chunk or self.chunk < 1:
            raise ValidationError("chunk must be a positive integer")

    def with_stream(self, stream):
        return McPlan(self.samples, self.seed, self.chunk, stream)

    def channel_stream(self):
        return ChannelStream(self.seed, self.stream)

    def spans(self):
        """(start, count) work units covering ``range(samples)``."""
        return [(s, min(self.chunk, self.samples - s))
                for s in range(0, self.samples, self.chunk)]


@dataclass(frozen=True)
class McEstimate:
    """Sample mean of an integrand with its standard error."""

    mean: float
    stderr: float
    samples: int
    seed: int = 0
    stream: int = 0

    @classmethod
    def from_samples(cls, values, seed=0, stream=0):
        """Estimate from a 1-D array of per-sample values.

        Raises :class:`NonFiniteIntegrandError` naming the first bad index.
        """
        values = np.asarray(values, dtype=np.float64).ravel()
        n = values.shape[0]
        if n < 2:
            raise ValidationError("an estimate needs at least 2 samples")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise NonFiniteIntegrandError(int(bad[0]), float(values[bad[0]]))
        mean = math.fsum(values) / n
        var = math.fsum((values - mean) ** 2) / (n - 1)
        return cls(mean, math.sqrt(var / n), n, seed, stream)

    def scaled(self, c):
        return McEstimate(c * self.mean, abs(c) * self.stderr, self.samples,
                          self.seed, self.stream)


def _run(spans, work, threads):
    if threads is None or threads <= 1 or len(spans) <= 1:
        return [work(s) for s in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, spans))


def _concat(parts):
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)


class StreamedBatch:
    """Draws each chunk on demand; nothing is kept between calls."""

    def __init__(self, plan, cfg):
        self.plan = plan
        self.cfg = cfg
        self._stream = plan.channel_stream()

    def __len__(self):
        return self.plan.samples

    def chunk(self, start, count):
        return self._stream.draw(self.cfg.shape, start, count)

    def map(self, fn, threads=None):
        """Apply a vectorized ``fn`` to every chunk; concatenate in order.

        ``fn`` receives a batched :class:`ChannelSample` and returns an array
        (or tuple of arrays) whose leading axis indexes samples.
        """
        return _concat(_run(self.plan.spans(),
                            lambda sp: fn(self.chunk(*sp)), threads))


class SampleBatch(StreamedBatch):
    """All samples of a plan held in memory (common random numbers)."""

    def __init__(self, plan, cfg, sample):
        super().__init__(plan, cfg)
        self.sample = sample

    def chunk(self, start, count):
        return self.sample[start:start + count]


def batch_bytes(plan, cfg):
    K, nr, nt = cfg.shape
    return plan.samples * (K * nr * nt + 1) * 16


def batch_cache(plan, cfg, memory_budget=DEFAULT_MEMORY_BUDGET):
    """Draw and keep every sample of ``plan`` for reuse across evaluations.

    Raises
    ------
    MemoryBudgetError
        If the batch would exceed ``memory_budget`` bytes; use
        :class:`StreamedBatch` instead in that case.
    """
    need = batch_bytes(plan, cfg)
    if need > memory_budget:
        raise MemoryBudgetError(
            f"cached batch needs {need} bytes, budget is {memory_budget}; "
            "use streaming mode (StreamedBatch) or fewer samples")
    sample = plan.channel_stream().draw(cfg.shape, 0, plan.samples)
    return SampleBatch(plan, cfg, sample)


def open_batch(plan, cfg, memory_budget=DEFAULT_MEMORY_BUDGET):
    """Cached batch when it fits, streamed otherwise."""
    try:
        return batch_cache(plan, cfg, memory_budget)
    except MemoryBudgetError:
        return StreamedBatch(plan, cfg)


def estimate(plan, integrand, cfg, batch=None, threads=None):
    """Monte Carlo mean of ``integrand`` over ``plan.samples`` realizations.

    Parameters
    ----------
    plan : McPlan
    integrand : callable
        Vectorized: maps a batched ChannelSample to per-sample real values.
    cfg : GbcConfig
        Channel dimensions to draw.
    batch : SampleBatch or StreamedBatch, optional
        Reuse a prepared batch; by default samples are streamed.
    threads : int, optional
        Worker threads over chunks.  Never changes the result.
    """
    if batch is None:
        batch = StreamedBatch(plan, cfg)
    values = batch.map(lambda s: np.asarray(integrand(s), dtype=np.float64), threads)
    return McEstimate.from_samples(values, plan.seed, plan.stream)
