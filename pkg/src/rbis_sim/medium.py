"""Access-point beacon broadcast and unicast delivery with delay, jitter and loss."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ._rounding import round_half_away

JITTER_KINDS = ("none", "gaussian", "uniform")

RngLike = Union[np.random.Generator, Mapping[str, np.random.Generator]]


@dataclass(frozen=True)
class JitterDistribution:
    """Reception jitter. ``scale_us`` is the sigma (gaussian) or half-width (uniform)."""

    kind: str = "none"
    scale_us: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in JITTER_KINDS:
            raise ValueError(f"unknown jitter kind {self.kind!r}")
        if not self.scale_us >= 0:
            raise ValueError("jitter scale must be >= 0")

    @classmethod
    def gaussian(cls, sigma_us: float) -> "JitterDistribution":
        return cls("gaussian", sigma_us)

    @classmethod
    def uniform(cls, half_width_us: float) -> "JitterDistribution":
        return cls("uniform", half_width_us)

    def sample(self, rng: np.random.Generator) -> float:
        # Always consume exactly one draw so streams stay aligned across configs.
        u = float(rng.standard_normal()) if self.kind != "uniform" else float(rng.uniform(-1.0, 1.0))
        if self.kind == "none":
            return 0.0
        return u * self.scale_us


@dataclass(frozen=True)
class ChannelModel:
    base_delay_us: float = 0.0
    per_receiver_bias_us: Mapping[str, float] = field(default_factory=dict)
    jitter: JitterDistribution = field(default_factory=JitterDistribution)
    loss_prob: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("probability out of range")
        if not self.base_delay_us >= 0:
            raise ValueError("base_delay_us must be >= 0")

    def bias(self, node: str) -> float:
        return float(self.per_receiver_bias_us.get(node, 0.0))

    def transit(self, send_true_us: int, node: str, rng: np.random.Generator) -> Optional[int]:
        """Timestamped arrival at ``node`` for a frame sent at ``send_true_us``, or None if lost.

        Jitter models timestamping error, so with zero base delay a negative
        sample can place the stamp slightly before the send instant.

        Two draws are taken per call (loss, then jitter) whatever the outcome.
        """
        lost = float(rng.random()) < self.loss_prob
        jitter = self.jitter.sample(rng)
        if lost:
            return None
        return round_half_away(send_true_us + self.base_delay_us + self.bias(node) + jitter)


@dataclass(frozen=True)
class BeaconEvent:
    seq_k: int
    emit_true_us: int
    interval_us: int

    def __post_init__(self) -> None:
        if self.seq_k < 0:
            raise ValueError("seq_k must be >= 0")
        if self.interval_us <= 0:
            raise ValueError("interval must be positive")


def beacon_schedule(num_beacons: int, interval_us: int, start_true_us: int = 0) -> list[BeaconEvent]:
    """Perfectly periodic AP emission times; the AP itself is never jittered."""
    return [BeaconEvent(k, start_true_us + k * interval_us, interval_us) for k in range(num_beacons)]


def _rng_for(rng: RngLike, node: str) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng[node]


def deliver_broadcast(
    beacon: BeaconEvent,
    receivers: Sequence[str],
    channel: ChannelModel,
    rng: RngLike,
) -> dict[str, Optional[int]]:
    """Per-receiver arrival true time of a beacon (None where the frame was lost).

    ``rng`` is either one generator, consumed in receiver order, or a mapping
    from receiver name to its own generator.
    """
    if not receivers:
        raise ValueError("receivers must be nonempty")
    return {
        node: channel.transit(beacon.emit_true_us, node, _rng_for(rng, node)) for node in receivers
    }


def deliver_unicast(
    payload: object,
    src: str,
    dst: str,
    channel: ChannelModel,
    rng: np.random.Generator,
    send_true_us: int,
) -> Optional[int]:
    """Arrival time of a unicast frame from ``src`` to ``dst``; None if lost.

    The payload is opaque here: unicast latency only decides when data becomes
    available, never what it contains.
    """
    if src == dst:
        raise ValueError("unicast source and destination must differ")
    del payload
    arrival = channel.transit(send_true_us, dst, rng)
    if arrival is None:
        return None
    return max(arrival, send_true_us)
