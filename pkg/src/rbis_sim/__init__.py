"""Discrete-event simulation of beacon-referenced (RBIS) wireless clock synchronization."""

__version__ = "0.1.0"

from .clocks import LocalClock, OscillatorModel, local_time, step_drift, true_time_of
from .engine import ChannelConfig, ConfigError, NodeConfig, ScenarioConfig, TraceBundle, run, validate_config
from .estimators import (
    CorrectionState,
    EstimatorConfig,
    KalmanFilter,
    MovingAverageFilter,
    OffsetEstimate,
    SkewEstimate,
    offset_estimate,
    skew_estimate,
)
from .medium import BeaconEvent, ChannelModel, JitterDistribution, deliver_broadcast, deliver_unicast
from .protocol import FollowUpMessage, Master, PairingStore, Slave, TimestampPair
from .validation import GroundTruthSample, Histogram, SummaryStats, histogram, summarize

__all__ = [
    "BeaconEvent",
    "ChannelConfig",
    "ChannelModel",
    "ConfigError",
    "CorrectionState",
    "EstimatorConfig",
    "FollowUpMessage",
    "GroundTruthSample",
    "Histogram",
    "JitterDistribution",
    "KalmanFilter",
    "LocalClock",
    "Master",
    "MovingAverageFilter",
    "NodeConfig",
    "OffsetEstimate",
    "OscillatorModel",
    "PairingStore",
    "ScenarioConfig",
    "SkewEstimate",
    "Slave",
    "SummaryStats",
    "TimestampPair",
    "TraceBundle",
    "deliver_broadcast",
    "deliver_unicast",
    "histogram",
    "local_time",
    "offset_estimate",
    "run",
    "skew_estimate",
    "step_drift",
    "summarize",
    "true_time_of",
    "validate_config",
]
