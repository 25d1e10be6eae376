"""Offset and skew estimation from timestamp pairs, plus smoothing filters.

The slave's hardware clock is never touched. Corrections form a virtual
synchronized clock ``local - correction`` (optionally with a rate term), and
each accepted estimate steps that correction.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from ._rounding import round_half_away
from .clocks import Timestamp
from .protocol import TimestampPair

FILTERS = ("none", "moving_average", "kalman")


@dataclass(frozen=True)
class OffsetEstimate:
    seq_k: int
    theta_hat_us: Timestamp


@dataclass(frozen=True)
class SkewEstimate:
    seq_k: int
    gamma_hat: float


def offset_estimate(pair: TimestampPair) -> OffsetEstimate:
    return OffsetEstimate(pair.seq_k, pair.t_slave_us - pair.t_master_us)


def skew_estimate(pair_k: TimestampPair, pair_prev: TimestampPair) -> SkewEstimate:
    """Relative rate from two pairs, using the actual master-timestamp baseline.

    Pairs need not be consecutive; a lost beacon simply widens the baseline.
    """
    if pair_prev.seq_k >= pair_k.seq_k:
        raise ValueError("pairs must be in increasing beacon order")
    baseline = pair_k.t_master_us - pair_prev.t_master_us
    if baseline == 0:
        raise ValueError("zero baseline")
    d_theta = (pair_k.t_slave_us - pair_k.t_master_us) - (pair_prev.t_slave_us - pair_prev.t_master_us)
    if isinstance(d_theta, int) and isinstance(baseline, int):
        # int / int is correctly rounded, same as float(Fraction(d, b))
        return SkewEstimate(pair_k.seq_k, d_theta / baseline)
    return SkewEstimate(pair_k.seq_k, float(Fraction(d_theta) / Fraction(baseline)))


def moving_average_update(window: deque, window_len: int, theta_hat) -> int:
    """Push ``theta_hat`` into ``window`` and return the rounded mean of its last entries."""
    if window_len < 1:
        raise ValueError("window length must be >= 1")
    window.append(theta_hat)
    while len(window) > window_len:
        window.popleft()
    return round_half_away(Fraction(sum(Fraction(v) for v in window)) / len(window))


class MovingAverageFilter:
    def __init__(self, window_len: int = 8) -> None:
        if window_len < 1:
            raise ValueError("window length must be >= 1")
        self.window_len = window_len
        self.window: deque = deque()

    def update(self, theta_hat) -> int:
        return moving_average_update(self.window, self.window_len, theta_hat)


class KalmanFilter:
    """Two-state linear Kalman filter over [offset_us, skew].

    The offset advances by ``skew * dt`` between measurements (``dt`` in
    master microseconds) and only the offset is observed. ``q_offset`` and
    ``q_skew`` are per-update process noise variances, ``r`` the measurement
    variance in us^2.
    """

    def __init__(
        self,
        q_offset: float = 1.0,
        q_skew: float = 1e-12,
        r: float = 25.0,
        initial_skew_var: float = 1e-8,
    ) -> None:
        for name, v in (("q_offset", q_offset), ("q_skew", q_skew), ("r", r)):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        self.Q = np.diag([float(q_offset), float(q_skew)])
        self.R = float(r)
        self.initial_skew_var = float(initial_skew_var)
        self.x: Optional[np.ndarray] = None
        self.P: Optional[np.ndarray] = None
        self.last_innovation: float = 0.0

    @property
    def offset(self) -> float:
        return float(self.x[0])

    @property
    def skew(self) -> float:
        return float(self.x[1])

    def predict(self, dt: float) -> float:
        """Offset predicted ``dt`` ahead, without changing the state."""
        return float(self.x[0] + self.x[1] * dt)

    def update(self, z: float, dt: Optional[float] = None) -> float:
        z = float(z)
        if not math.isfinite(z):
            raise ValueError("measurement must be finite")
        if self.x is None:
            self.x = np.array([z, 0.0])
            self.P = np.diag([max(self.R, 1e-12), self.initial_skew_var])
            self.last_innovation = 0.0
            return z
        if dt is None or not (math.isfinite(dt) and dt > 0):
            raise ValueError("dt must be finite and > 0")

        F = np.array([[1.0, dt], [0.0, 1.0]])
        x = F @ self.x
        P = F @ self.P @ F.T + self.Q

        H = np.array([1.0, 0.0])
        y = z - x[0]
        S = P[0, 0] + self.R
        if S <= 0:
            self.x, self.P = x, P
            return float(x[0])
        K = P[:, 0] / S
        x = x + K * y
        # Joseph form keeps P symmetric positive semidefinite
        A = np.eye(2) - np.outer(K, H)
        P = A @ P @ A.T + self.R * np.outer(K, K)
        self.x = x
        self.P = 0.5 * (P + P.T)
        self.last_innovation = y
        return float(self.x[0])


def kalman_update(kf: KalmanFilter, theta_hat, dt: Optional[float]) -> float:
    return kf.update(float(theta_hat), dt)


@dataclass(frozen=True)
class CorrectionState:
    """Correction that maps slave local time to synchronized time.

    ``synchronized(L) = L - correction_us - skew * (L - anchor_local_us)``;
    ``skew`` stays 0 unless rate correction is enabled.
    """

    correction_us: Timestamp = 0
    skew: float = 0.0
    anchor_local_us: Timestamp = 0

    def synchronized(self, local_us: Timestamp):
        if self.skew == 0:
            return local_us - self.correction_us
        return local_us - self.correction_us - self.skew * (local_us - self.anchor_local_us)

    def local_for(self, sync_us):
        """Local reading at which the synchronized clock reaches ``sync_us``."""
        if self.skew == 0:
            return sync_us + self.correction_us
        return (sync_us + self.correction_us - self.skew * self.anchor_local_us) / (1 - self.skew)


def apply_step_correction(
    state: CorrectionState,
    estimate: OffsetEstimate,
    skew: float = 0.0,
    anchor_local_us: Timestamp = 0,
) -> CorrectionState:
    """Step the correction to the (already filtered) offset estimate."""
    return CorrectionState(estimate.theta_hat_us, skew, anchor_local_us)


@dataclass(frozen=True)
class EstimatorConfig:
    filter: str = "none"
    window: int = 8
    q_offset: float = 1.0
    q_skew: float = 1e-12
    r: float = 25.0
    rate_correction: bool = False

    def validate(self) -> list[str]:
        errors = []
        if self.filter not in FILTERS:
            errors.append(f"estimator.filter: unknown filter {self.filter!r}")
        if self.window < 1:
            errors.append("estimator.window: window length must be >= 1")
        for name in ("q_offset", "q_skew", "r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                errors.append(f"estimator.{name}: must be finite and >= 0")
        return errors


@dataclass(frozen=True)
class EstimateRecord:
    seq_k: int
    t_master_us: Timestamp
    t_slave_us: Timestamp
    theta_hat_us: Timestamp
    theta_filtered_us: Timestamp
    gamma_hat: Optional[float]


@dataclass
class SlaveEstimator:
    """Per-slave pipeline: pair -> raw estimates -> filter -> correction."""

    config: EstimatorConfig = field(default_factory=EstimatorConfig)
    state: CorrectionState = field(default_factory=CorrectionState)

    def __post_init__(self) -> None:
        errors = self.config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        self._prev: Optional[TimestampPair] = None
        self._ma = MovingAverageFilter(self.config.window)
        self._skews: deque = deque(maxlen=self.config.window)
        self.kalman = KalmanFilter(self.config.q_offset, self.config.q_skew, self.config.r)

    def update(self, pair: TimestampPair) -> EstimateRecord:
        theta = offset_estimate(pair).theta_hat_us
        gamma: Optional[float] = None
        dt: Optional[float] = None
        if self._prev is not None and pair.t_master_us != self._prev.t_master_us:
            gamma = skew_estimate(pair, self._prev).gamma_hat
            dt = float(pair.t_master_us - self._prev.t_master_us)
            self._skews.append(gamma)

        kind = self.config.filter
        if kind == "moving_average":
            filtered = self._ma.update(theta)
            rate = float(np.mean(self._skews)) if self._skews else 0.0
        elif kind == "kalman":
            if self._prev is not None and dt is None:
                # repeated master timestamp; nothing new to learn
                filtered = round_half_away(self.kalman.offset)
            else:
                filtered = round_half_away(kalman_update(self.kalman, theta, dt))
            rate = self.kalman.skew
        else:
            filtered = theta
            rate = gamma if gamma is not None else 0.0

        if self.config.rate_correction:
            self.state = apply_step_correction(
                self.state, OffsetEstimate(pair.seq_k, filtered), rate, pair.t_slave_us
            )
        else:
            self.state = apply_step_correction(self.state, OffsetEstimate(pair.seq_k, filtered))
        self._prev = pair
        return EstimateRecord(pair.seq_k, pair.t_master_us, pair.t_slave_us, theta, filtered, gamma)
