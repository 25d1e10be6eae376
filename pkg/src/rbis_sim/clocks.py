"""Free-running node oscillators and quantized local clocks.

True simulation time and local timestamps are integer microseconds. Internally
the unquantized local reading is an integer count of 1e-18 us units and the
clock rate an integer number of those units per true microsecond, so skew
accumulation over long runs is exact (skew resolution 1e-12 ppm).

A clock is a sequence of piecewise-linear segments. ``step_drift`` appends a
new segment starting at the given true time, so conversions for earlier
instants are unaffected by later drift.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Union

import numpy as np

Timestamp = Union[int, Fraction]

MAX_SKEW_PPM = 1000.0
UNITS_PER_US = 10**18
_UNITS_PER_PPM = UNITS_PER_US // 10**6


def _as_timestamp(units: int) -> Timestamp:
    q, r = divmod(units, UNITS_PER_US)
    return q if r == 0 else Fraction(units, UNITS_PER_US)


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def rate_units(skew_ppm: float) -> int:
    """Local units elapsed per true microsecond for a given skew."""
    return UNITS_PER_US + round(Fraction(skew_ppm) * _UNITS_PER_PPM)


@dataclass(frozen=True)
class OscillatorModel:
    skew_ppm: float = 0.0
    drift_rw_sigma_ppm: float = 0.0
    initial_offset_us: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.skew_ppm) or abs(self.skew_ppm) > MAX_SKEW_PPM:
            raise ValueError(f"skew_ppm must be within +/-{MAX_SKEW_PPM:g}, got {self.skew_ppm}")
        if not self.drift_rw_sigma_ppm >= 0:
            raise ValueError("drift_rw_sigma_ppm must be >= 0")
        if int(self.initial_offset_us) != self.initial_offset_us:
            raise ValueError("initial_offset_us must be an integer")


@dataclass(frozen=True)
class _Segment:
    start_true_us: int
    start_units: int  # unquantized local time minus initial offset, in 1e-18 us
    rate: int  # units per true microsecond


@dataclass(frozen=True)
class LocalClock:
    """Immutable snapshot of a node clock.

    ``granularity_us = 0`` selects an idealized, unquantized clock whose
    readings are exact :class:`~fractions.Fraction` values whenever they are
    not whole microseconds; any positive granularity yields integer readings
    floored to that tick size.
    """

    oscillator: OscillatorModel = field(default_factory=OscillatorModel)
    granularity_us: int = 1
    epoch_true_us: int = 0
    current_skew_ppm: float = field(default=None)  # type: ignore[assignment]
    _segments: tuple[_Segment, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if int(self.granularity_us) != self.granularity_us or self.granularity_us < 0:
            raise ValueError("granularity_us must be a non-negative integer")
        if self.current_skew_ppm is None:
            object.__setattr__(self, "current_skew_ppm", float(self.oscillator.skew_ppm))
        if not self._segments:
            seg = _Segment(int(self.epoch_true_us), 0, rate_units(self.current_skew_ppm))
            object.__setattr__(self, "_segments", (seg,))
        if self._segments[-1].rate <= 0:
            raise ValueError("clock rate must stay positive")
        object.__setattr__(self, "_starts", [s.start_true_us for s in self._segments])
        object.__setattr__(self, "_start_units", [s.start_units for s in self._segments])

    @property
    def initial_offset_us(self) -> int:
        return int(self.oscillator.initial_offset_us)

    @property
    def segment_starts(self) -> list[int]:
        return list(self._starts)

    def _elapsed_units(self, true_time_us: int) -> int:
        if true_time_us < self.epoch_true_us:
            raise ValueError("clock not started")
        seg = self._segments[bisect.bisect_right(self._starts, true_time_us) - 1]
        return seg.start_units + seg.rate * (true_time_us - seg.start_true_us)

    def exact_local(self, true_time_us: int) -> Timestamp:
        """Unquantized local reading at ``true_time_us``."""
        return self.initial_offset_us + _as_timestamp(self._elapsed_units(true_time_us))

    def local_time(self, true_time_us: int) -> Timestamp:
        """Local timestamp read at ``true_time_us``."""
        units = self._elapsed_units(true_time_us)
        g = self.granularity_us
        if g == 0:
            return self.initial_offset_us + _as_timestamp(units)
        return self.initial_offset_us + (units // (g * UNITS_PER_US)) * g

    def _needed_units(self, local_ts: Timestamp) -> int:
        if local_ts < self.initial_offset_us:
            raise ValueError(
                f"local value {local_ts} precedes the clock's initial reading {self.initial_offset_us}"
            )
        g = self.granularity_us
        if isinstance(local_ts, int):
            rel = local_ts - self.initial_offset_us
            return _ceil_div(rel, g) * g * UNITS_PER_US if g else rel * UNITS_PER_US
        rel = Fraction(local_ts) - self.initial_offset_us
        if g:
            # quantized reading >= local_ts  <=>  elapsed >= next tick boundary
            return _ceil_div(rel.numerator, rel.denominator * g) * g * UNITS_PER_US
        return _ceil_div(rel.numerator * UNITS_PER_US, rel.denominator)

    def _locate(self, need: int) -> tuple[_Segment, int]:
        i = max(bisect.bisect_left(self._start_units, need) - 1, 0)
        seg = self._segments[i]
        return seg, need - seg.start_units

    def exact_true_time_of(self, local_ts: Timestamp) -> Timestamp:
        """Exact true instant at which ``local_time`` first reaches ``local_ts``.

        With a positive granularity this is the instant of the tick that
        carries the reading to ``local_ts`` or beyond.
        """
        seg, delta = self._locate(self._needed_units(local_ts))
        q, r = divmod(delta, seg.rate)
        if r == 0:
            return seg.start_true_us + q
        return seg.start_true_us + Fraction(delta, seg.rate)

    def true_time_of(self, local_ts: Timestamp) -> int:
        """Earliest integer true time at which ``local_time`` reaches ``local_ts``."""
        seg, delta = self._locate(self._needed_units(local_ts))
        return seg.start_true_us + _ceil_div(delta, seg.rate)

    def with_skew(self, skew_ppm: float, at_true_us: int) -> "LocalClock":
        """Return a clock whose rate changes to ``skew_ppm`` from ``at_true_us`` on."""
        last = self._segments[-1]
        if at_true_us < last.start_true_us:
            raise ValueError("cannot rewrite clock history")
        if not math.isfinite(skew_ppm):
            raise ValueError("skew must be finite")
        rate = rate_units(skew_ppm)
        if rate <= 0:
            raise ValueError("clock rate must stay positive")
        if at_true_us == last.start_true_us:
            segments = self._segments[:-1] + (replace(last, rate=rate),)
        else:
            segments = self._segments + (_Segment(at_true_us, self._elapsed_units(at_true_us), rate),)
        return replace(self, current_skew_ppm=float(skew_ppm), _segments=segments)


def local_time(clock: LocalClock, true_time_us: int) -> Timestamp:
    return clock.local_time(true_time_us)


def true_time_of(clock: LocalClock, local_ts: Timestamp) -> int:
    return clock.true_time_of(local_ts)


def step_drift(clock: LocalClock, rng: np.random.Generator, at_true_us: int) -> LocalClock:
    """Apply one random-walk increment to the clock's skew.

    The increment is N(0, drift_rw_sigma_ppm) and takes effect at
    ``at_true_us``. With zero sigma no random number is consumed and the
    clock is returned unchanged.
    """
    sigma = clock.oscillator.drift_rw_sigma_ppm
    if sigma == 0:
        return clock
    skew = clock.current_skew_ppm + float(rng.normal(0.0, sigma))
    return clock.with_skew(skew, at_true_us)
