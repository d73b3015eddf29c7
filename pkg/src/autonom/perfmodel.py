"""Queueing model of detection and reaction delay, plus simulation oracles.

Two notions of difficulty appear here. ``D`` in :func:`block_time_model` is
work (expected hash evaluations). ``d`` in :func:`expected_pow_work` and
:func:`difficulty_sweep` is the count of leading zero hex digits used by the
ledger; the two are bridged by ``D = 16**d``.
"""
from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .chain import Transaction, mine_block
from .kernels import lindley_waits


class PerfModelError(ValueError):
    pass


class UnstableQueue(PerfModelError):
    pass


@dataclass(frozen=True)
class QueueParams:
    lam: float
    mu: float

    def __post_init__(self):
        if self.lam <= 0 or self.mu <= 0:
            raise PerfModelError("arrival and service rates must be positive")

    @property
    def rho(self) -> float:
        return self.lam / self.mu


RateSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class NetworkPerf:
    """Per-node service rates, either fixed or drawn by ``sampler(rng, samples)``
    which must return an array of shape (samples, nodes)."""

    service_rates: Sequence[float] | None = None
    sampler: RateSampler | None = None
    difficulty: float = 1.0
    hash_rate: float = 1.0


def uniform_rates(low: float, high: float, nodes: int) -> RateSampler:
    def draw(rng: np.random.Generator, samples: int) -> np.ndarray:
        return rng.uniform(low, high, size=(samples, nodes))

    return draw


def mttd(perf: NetworkPerf | Sequence[float], samples: int = 100_000, seed: int = 0) -> float:
    """Mean time to detect: expected reciprocal of the summed node service rates."""
    if not isinstance(perf, NetworkPerf):
        perf = NetworkPerf(service_rates=tuple(perf))
    if perf.sampler is None:
        rates = np.asarray(perf.service_rates, dtype=np.float64)
        if rates.size == 0 or (rates <= 0).any():
            raise PerfModelError("nonpositive-rate")
        return 1.0 / float(math.fsum(rates))
    draws = np.asarray(perf.sampler(np.random.default_rng(seed), samples), dtype=np.float64)
    if (draws <= 0).any():
        raise PerfModelError("nonpositive-rate")
    return float(np.mean(1.0 / draws.sum(axis=1)))


def block_time_model(difficulty: float, hash_rate: float) -> float:
    if difficulty <= 0 or hash_rate <= 0:
        raise PerfModelError("nonpositive-input")
    return difficulty / hash_rate


def expected_pow_work(d: int) -> float:
    if d < 0:
        raise PerfModelError("d must be >= 0")
    return float(16**d)


def wq(params: QueueParams) -> float:
    """M/M/1 expected wait in queue; requires lam < mu."""
    if params.rho >= 1:
        raise UnstableQueue(f"unstable-queue: rho={params.rho:g}")
    return params.lam / (params.mu * (params.mu - params.lam))


@dataclass(frozen=True)
class MTTRBreakdown:
    wq: float
    block_time: float

    @property
    def total(self) -> float:
        return self.wq + self.block_time

    def to_dict(self) -> dict:
        return {"wq": self.wq, "block_time": self.block_time, "mttr": self.total}


def mttr_breakdown(params: QueueParams, difficulty: float, hash_rate: float) -> MTTRBreakdown:
    return MTTRBreakdown(wq(params), block_time_model(difficulty, hash_rate))


def mttr(params: QueueParams, difficulty: float, hash_rate: float) -> float:
    return mttr_breakdown(params, difficulty, hash_rate).total


def mm1_simulate(
    params: QueueParams,
    n_arrivals: int = 100_000,
    seed: int = 0,
    estimator: str = "control",
    batches: int = 50,
) -> float:
    """Mean time-in-queue of a FIFO M/M/1 queue that starts empty.

    ``estimator="plain"`` returns the sample mean of the simulated waits.
    ``"control"`` (default) corrects it with batch-means regression on the
    realized mean interarrival and service times, whose true means 1/lam and
    1/mu are known; the corrected value estimates the same mean with roughly
    30% less spread near rho = 0.8.
    """
    if params.rho >= 1:
        raise UnstableQueue(f"unstable-queue: rho={params.rho:g}")
    if n_arrivals < 2 * batches:
        raise PerfModelError(f"need at least {2 * batches} arrivals")
    rng = np.random.default_rng(seed)
    interarrival = rng.exponential(1.0 / params.lam, n_arrivals)
    service = rng.exponential(1.0 / params.mu, n_arrivals)
    waits = lindley_waits(interarrival, service)
    if estimator == "plain":
        return float(waits.mean())
    if estimator != "control":
        raise ValueError(f"unknown estimator {estimator!r}")
    size = n_arrivals // batches
    used = size * batches

    def batch_means(x: np.ndarray) -> np.ndarray:
        return x[:used].reshape(batches, size).mean(axis=1)

    design = np.column_stack([
        np.ones(batches),
        batch_means(interarrival) - 1.0 / params.lam,
        batch_means(service) - 1.0 / params.mu,
    ])
    coef = np.linalg.lstsq(design, batch_means(waits), rcond=None)[0]
    return float(coef[0])


@dataclass(frozen=True)
class SweepRow:
    d: int
    mean_attempts: float
    mean_seconds: float
    log_mean_seconds: float


SWEEP_HEADER = ("d", "mean_attempts", "mean_seconds", "log_mean_seconds")


def measure_hash_rate(probe_size: int = 20_000) -> float:
    """Hashes per second of the ledger's nonce loop on this machine."""
    base = hashlib.sha256(b"probe" * 40)
    start = time.perf_counter()
    for nonce in range(probe_size):
        h = base.copy()
        h.update(str(nonce).encode("ascii"))
        h.hexdigest()
    elapsed = time.perf_counter() - start
    return probe_size / max(elapsed, 1e-9)


def mining_attempts(d: int, trials: int, seed: int) -> np.ndarray:
    """Attempts needed to mine ``trials`` blocks with randomized contents."""
    rng = np.random.default_rng(seed)
    attempts = np.empty(trials, dtype=np.int64)
    for k in range(trials):
        previous = rng.bytes(32).hex()
        stamp = int(rng.integers(1_500_000_000_000, 1_800_000_000_000))
        coinbase = Transaction(None, rng.bytes(8).hex(), 10, {}, stamp)
        attempts[k] = mine_block(previous, stamp, [coinbase], d).nonce + 1
    return attempts


def difficulty_sweep(
    d_range: Iterable[int], trials: int = 100, hash_probe_size: int = 20_000, seed: int = 0
) -> list[SweepRow]:
    """Mean mining work per difficulty, converted to seconds with a measured hash rate.

    Attempt counts are a pure function of ``seed``; seconds depend on the host.
    """
    hash_rate = measure_hash_rate(hash_probe_size)
    rows = []
    for d in d_range:
        if not 0 <= d <= 4:
            raise PerfModelError("difficulty outside desk-scale range [0, 4]")
        mean_attempts = float(mining_attempts(d, trials, seed * 1009 + d).mean())
        seconds = block_time_model(mean_attempts, hash_rate)
        rows.append(SweepRow(d, mean_attempts, seconds, math.log10(seconds)))
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], destination: str | Path) -> None:
    with open(destination, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(SWEEP_HEADER)
        for r in rows:
            writer.writerow([r.d, repr(r.mean_attempts), repr(r.mean_seconds), repr(r.log_mean_seconds)])


def log16_slope(rows: Sequence[SweepRow]) -> float:
    """Least-squares slope of log16(mean attempts) against d."""
    d = np.array([r.d for r in rows], dtype=np.float64)
    y = np.log(np.array([r.mean_attempts for r in rows])) / math.log(16)
    return float(np.polyfit(d, y, 1)[0])
