"""Ground-truth probes and evaluation statistics.

Probes mimic GPIO toggles at master-relative instants: the master fires when
its local clock reads ``n * period`` and the slave fires when its
synchronized clock reads the same value. The true-time difference
``slave_fire - master_fire`` is the actual offset; positive means the slave
fires late, i.e. its synchronized clock is behind the master.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .clocks import LocalClock
from .estimators import CorrectionState

COVERAGE_KS = (1, 2, 3)
FIXED_BANDS_US = (15, 22, 30)
GAUSSIAN_COVERAGE = {1: 0.6827, 2: 0.9545, 3: 0.9973}


@dataclass(frozen=True)
class GroundTruthSample:
    """One probe; fire instants are exact true times (sub-microsecond)."""

    probe_index: int
    theta_true_us: Fraction
    master_fire_us: Fraction
    slave_fire_us: Fraction


@dataclass(frozen=True)
class ProbePlan:
    period_us: int
    first_index: int
    last_index: int

    def indices(self) -> range:
        return range(self.first_index, self.last_index + 1)


def schedule_probes(
    probe_period_us: int,
    master_clock: LocalClock,
    run_end_us: int,
    start_true_us: int = 0,
) -> ProbePlan:
    """Probe indices whose master fire instant lies in ``[start_true_us, run_end_us)``."""
    if probe_period_us <= 0:
        raise ValueError("probe period must be positive")

    def fires(n: int) -> Fraction:
        return master_clock.exact_true_time_of(n * probe_period_us)

    start = max(start_true_us, master_clock.epoch_true_us)
    lowest = max(master_clock.local_time(start), master_clock.initial_offset_us)
    first = max(1, math.ceil(lowest / probe_period_us))
    while fires(first) < start_true_us:
        first += 1
    last = math.floor(master_clock.local_time(run_end_us) / probe_period_us)
    while last >= first and fires(last) >= run_end_us:
        last -= 1
    return ProbePlan(probe_period_us, first, last)


def slave_fire_time(
    slave_clock: LocalClock,
    corrections: Sequence[tuple[int, CorrectionState]],
    target_us,
    start_segment: int = 0,
) -> tuple[Optional[Fraction], int]:
    """Earliest true time at which the slave's synchronized clock reads ``target_us``.

    ``corrections`` is the step-correction history as ``(true_time, state)``
    sorted by time; each state holds until the next. Returns the fire time (or
    None if it never happens within the history) and the segment index it
    happened in, which callers can reuse for the next, larger target.
    """
    for i in range(start_segment, len(corrections)):
        seg_start, state = corrections[i]
        seg_end = corrections[i + 1][0] if i + 1 < len(corrections) else None
        need = state.local_for(target_us)
        if need < slave_clock.initial_offset_us:
            t = Fraction(slave_clock.epoch_true_us)
        else:
            t = slave_clock.exact_true_time_of(need)
        if t < seg_start:
            return Fraction(seg_start), i
        if seg_end is None or t < seg_end:
            return t, i
    return None, start_segment


def ground_truth(
    master_clock: LocalClock,
    slave_clock: LocalClock,
    corrections: Sequence[tuple[int, CorrectionState]],
    probe_period_us: int,
    run_end_us: int,
) -> list[GroundTruthSample]:
    """Fire every probe after the first correction and measure the true offset.

    Probes whose master instant precedes the first correction, or whose slave
    instant falls at or after ``run_end_us``, are dropped.
    """
    if not corrections:
        return []
    plan = schedule_probes(probe_period_us, master_clock, run_end_us, corrections[0][0])
    samples = []
    seg = 0
    for n in plan.indices():
        target = n * probe_period_us
        m_fire = master_clock.exact_true_time_of(target)
        s_fire, seg = slave_fire_time(slave_clock, corrections, target, seg)
        if s_fire is None or s_fire >= run_end_us:
            continue
        samples.append(GroundTruthSample(n, s_fire - m_fire, m_fire, s_fire))
    return samples


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean_us: float
    std_us: float
    min_us: float
    max_us: float
    coverage: dict[int, float] = field(default_factory=dict)
    within_band: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_us": self.mean_us,
            "std_us": self.std_us,
            "min_us": self.min_us,
            "max_us": self.max_us,
            "coverage": {str(k): v for k, v in self.coverage.items()},
            "within_band": {str(k): v for k, v in self.within_band.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SummaryStats":
        return cls(
            count=int(d["count"]),
            mean_us=float(d["mean_us"]),
            std_us=float(d["std_us"]),
            min_us=float(d["min_us"]),
            max_us=float(d["max_us"]),
            coverage={int(k): float(v) for k, v in d["coverage"].items()},
            within_band={int(k): float(v) for k, v in d["within_band"].items()},
        )


def summarize(samples: Iterable[float]) -> SummaryStats:
    """Mean, sample std (n-1), extrema, mean +/- k*sigma coverage and fixed-band coverage."""
    x = np.asarray([float(s) for s in samples], dtype=float)
    if x.size < 2:
        raise ValueError("insufficient samples")
    mu = float(x.mean())
    sigma = float(x.std(ddof=1))
    dev = np.abs(x - mu)
    # tolerance guards against float noise when every sample is identical
    eps = 1e-9 * max(1.0, abs(mu))
    coverage = {k: float(np.mean(dev <= k * sigma + eps)) for k in COVERAGE_KS}
    bands = {b: float(np.mean(np.abs(x) <= b)) for b in FIXED_BANDS_US}
    return SummaryStats(int(x.size), mu, sigma, float(x.min()), float(x.max()), coverage, bands)


@dataclass(frozen=True)
class Histogram:
    bin_width_us: float
    bins: dict[float, int]

    @property
    def count(self) -> int:
        return sum(self.bins.values())

    def density(self) -> dict[float, float]:
        n = self.count
        return {e: c / (n * self.bin_width_us) for e, c in self.bins.items()} if n else {}

    def rows(self) -> list[tuple[float, int, float]]:
        dens = self.density()
        return [(e, self.bins[e], dens[e]) for e in sorted(self.bins)]


def histogram(values: Iterable[float], bin_width: float = 1.0) -> Histogram:
    """Half-open bins ``[edge, edge + width)`` with edges on multiples of ``bin_width``."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    bins: dict[float, int] = {}
    for v in values:
        edge = math.floor(float(v) / bin_width) * bin_width
        if float(edge).is_integer():
            edge = int(edge)
        bins[edge] = bins.get(edge, 0) + 1
    return Histogram(bin_width, dict(sorted(bins.items())))


def coverage_table(stats: SummaryStats) -> str:
    """Plain-text table of mean +/- k*sigma intervals and their empirical coverage."""
    head = f"{'':<14}" + "".join(f"{f'{k}sigma' if k > 1 else 'sigma':>22}" for k in COVERAGE_KS)
    interval = f"{'E(theta) [us]':<14}" + "".join(
        f"{f'{stats.mean_us:.2f}+/-{k * stats.std_us:.2f}':>22}" for k in COVERAGE_KS
    )
    empirical = f"{'P [%]':<14}" + "".join(f"{100 * stats.coverage[k]:>22.2f}" for k in COVERAGE_KS)
    normal = f"{'P_normal [%]':<14}" + "".join(
        f"{100 * GAUSSIAN_COVERAGE[k]:>22.2f}" for k in COVERAGE_KS
    )
    bands = "  ".join(f"|theta|<={b}us: {100 * stats.within_band[b]:.2f}%" for b in FIXED_BANDS_US)
    lines = [
        head,
        interval,
        empirical,
        normal,
        "",
        f"count={stats.count} mean_us={stats.mean_us:.9g} std_us={stats.std_us:.9g} "
        f"min_us={stats.min_us:.9g} max_us={stats.max_us:.9g}",
        bands,
    ]
    return "\n".join(lines) + "\n"
