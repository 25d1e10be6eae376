"""Deterministic discrete-event core wiring clocks, medium, protocol and estimators.

Events are ordered by (integer microsecond time, insertion sequence). All
randomness comes from one seed, split into independent streams per node and
purpose, so adding a slave never changes what the existing nodes draw.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional

import numpy as np

from .clocks import MAX_SKEW_PPM, LocalClock, OscillatorModel, step_drift
from .estimators import CorrectionState, EstimateRecord, EstimatorConfig, SlaveEstimator
from .medium import JITTER_KINDS, ChannelModel, JitterDistribution, beacon_schedule, deliver_broadcast, deliver_unicast
from .protocol import Master, Slave
from .validation import GroundTruthSample, SummaryStats, ground_truth, summarize

MASTER = "master"

# per-node random stream purposes
_SKEW, _DRIFT, _RX, _FOLLOWUP = range(4)


def slave_name(index: int) -> str:
    """``slave`` for the first slave, then ``slave2``, ``slave3``..."""
    return "slave" if index == 1 else f"slave{index}"


@dataclass(frozen=True)
class NodeConfig:
    """Oscillator and timer settings for one node.

    ``skew_ppm = None`` draws the skew uniformly from
    ``+/- ScenarioConfig.skew_bound_ppm`` using the node's own stream.
    """

    skew_ppm: Optional[float] = None
    drift_rw_sigma_ppm: float = 0.0
    initial_offset_us: int = 0
    granularity_us: int = 1


@dataclass(frozen=True)
class ChannelConfig:
    base_delay_us: float = 0.0
    jitter: str = "none"
    jitter_us: float = 0.0
    loss_prob: float = 0.0
    bias_us: dict = field(default_factory=dict)

    def model(self) -> ChannelModel:
        return ChannelModel(
            base_delay_us=self.base_delay_us,
            per_receiver_bias_us=dict(self.bias_us),
            jitter=JitterDistribution(self.jitter, self.jitter_us),
            loss_prob=self.loss_prob,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    beacon_interval_us: int = 102_400
    followup_interval_us: Optional[int] = None
    beacon_phase_us: int = 1_000
    followup_phase_us: Optional[int] = None
    num_beacons: int = 6_000
    probe_period_us: int = 100_000
    horizon_beacons: int = 16
    seed: int = 42
    skew_bound_ppm: float = 10.0
    master: NodeConfig = field(default_factory=NodeConfig)
    slaves: tuple[NodeConfig, ...] = (NodeConfig(),)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    followup_channel: ChannelConfig = field(default_factory=lambda: ChannelConfig(base_delay_us=1_000.0))
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    @property
    def followup_interval(self) -> int:
        return self.followup_interval_us if self.followup_interval_us is not None else self.beacon_interval_us

    @property
    def followup_phase(self) -> int:
        if self.followup_phase_us is not None:
            return self.followup_phase_us
        return self.beacon_phase_us + self.beacon_interval_us // 2

    @property
    def run_end_us(self) -> int:
        return self.num_beacons * self.beacon_interval_us

    @property
    def node_names(self) -> list[str]:
        return [MASTER] + [slave_name(i) for i in range(1, len(self.slaves) + 1)]


class ConfigError(ValueError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("invalid scenario config:\n  " + "\n  ".join(errors))
        self.errors = errors


def _is_int(v: Any) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def validate_config(config: ScenarioConfig) -> list[str]:
    """Every violated constraint, one message per field. Empty list means valid."""
    errors: list[str] = []

    def positive_int(name: str, value: Any) -> None:
        if not _is_int(value) or value <= 0:
            errors.append(f"{name}: interval must be positive" if "interval" in name or "period" in name
                          else f"{name}: must be a positive integer")

    positive_int("beacon_interval_us", config.beacon_interval_us)
    if config.followup_interval_us is not None:
        positive_int("followup_interval_us", config.followup_interval_us)
    positive_int("probe_period_us", config.probe_period_us)
    positive_int("horizon_beacons", config.horizon_beacons)
    if not _is_int(config.num_beacons) or config.num_beacons < 2:
        errors.append("num_beacons: must be an integer >= 2")
    if not _is_int(config.beacon_phase_us) or config.beacon_phase_us < 0:
        errors.append("beacon_phase_us: must be a non-negative integer")
    if config.followup_phase_us is not None and (
        not _is_int(config.followup_phase_us) or config.followup_phase_us < 0
    ):
        errors.append("followup_phase_us: must be a non-negative integer")
    if not _is_int(config.seed) or not 0 <= config.seed < 2**64:
        errors.append("seed: must be an integer in [0, 2**64)")
    if not (math.isfinite(config.skew_bound_ppm) and 0 <= config.skew_bound_ppm <= MAX_SKEW_PPM):
        errors.append(f"clock.skew_bound_ppm: must be within [0, {MAX_SKEW_PPM:g}]")
    if len(config.slaves) < 1:
        errors.append("slaves: at least one slave is required")

    for name, node in zip(config.node_names, (config.master, *config.slaves)):
        if node.skew_ppm is not None and not (
            math.isfinite(node.skew_ppm) and abs(node.skew_ppm) <= MAX_SKEW_PPM
        ):
            errors.append(f"{name}.skew_ppm: must be within +/-{MAX_SKEW_PPM:g}")
        if not (math.isfinite(node.drift_rw_sigma_ppm) and node.drift_rw_sigma_ppm >= 0):
            errors.append(f"{name}.drift_rw_sigma_ppm: must be >= 0")
        if not _is_int(node.initial_offset_us):
            errors.append(f"{name}.initial_offset_us: must be an integer")
        if not _is_int(node.granularity_us) or node.granularity_us < 0:
            errors.append(f"{name}.granularity_us: must be a non-negative integer")

    for prefix, ch in (("channel", config.channel), ("followup", config.followup_channel)):
        if not (math.isfinite(ch.base_delay_us) and ch.base_delay_us >= 0):
            errors.append(f"{prefix}.base_delay_us: must be >= 0")
        if ch.jitter not in JITTER_KINDS:
            errors.append(f"{prefix}.jitter: must be one of {', '.join(JITTER_KINDS)}")
        if not (math.isfinite(ch.jitter_us) and ch.jitter_us >= 0):
            errors.append(f"{prefix}.jitter_us: must be >= 0")
        if not 0.0 <= ch.loss_prob <= 1.0:
            errors.append(f"{prefix}.loss_prob: probability out of range")
        for node, b in ch.bias_us.items():
            if node not in config.node_names:
                errors.append(f"{prefix}.{node}_bias_us: unknown node {node!r}")
            elif not math.isfinite(b):
                errors.append(f"{prefix}.{node}_bias_us: must be finite")

    errors.extend(config.estimator.validate())
    return errors


def _stream(seed: int, node_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(node_index, purpose)))


@dataclass
class SlaveTrace:
    name: str
    estimates: list[EstimateRecord] = field(default_factory=list)
    # true slave-minus-master offset at each estimate's beacon emission
    true_offsets: list[Fraction] = field(default_factory=list)
    available_at_us: list[int] = field(default_factory=list)
    corrections: list[tuple[int, CorrectionState]] = field(default_factory=list)
    ground_truth: list[GroundTruthSample] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    estimate_stats: Optional[SummaryStats] = None
    truth_stats: Optional[SummaryStats] = None
    clock: Optional[LocalClock] = None

    @property
    def offsets(self) -> list[tuple[int, Any, Any]]:
        return [(r.seq_k, r.theta_hat_us, r.theta_filtered_us) for r in self.estimates]

    @property
    def skews(self) -> list[tuple[int, float]]:
        return [(r.seq_k, r.gamma_hat) for r in self.estimates if r.gamma_hat is not None]

    @property
    def residuals(self) -> list[float]:
        return [float(r.theta_hat_us - t) for r, t in zip(self.estimates, self.true_offsets)]


@dataclass
class TraceBundle:
    config: ScenarioConfig
    slaves: dict[str, SlaveTrace]
    beacons_emitted: int
    master_clock: LocalClock
    master_duplicates: int = 0

    @property
    def primary(self) -> SlaveTrace:
        return self.slaves[slave_name(1)]

    # shortcuts onto the first slave
    @property
    def offsets(self):
        return self.primary.offsets

    @property
    def skews(self):
        return self.primary.skews

    @property
    def ground_truth(self):
        return self.primary.ground_truth

    @property
    def counters(self):
        return self.primary.counters

    @property
    def estimate_stats(self):
        return self.primary.estimate_stats

    @property
    def truth_stats(self):
        return self.primary.truth_stats


class EventQueue:
    """Min-heap keyed on (time, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: list = []
        self._seq = 0
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time_us: int, action: Callable[..., None], *args: Any) -> None:
        if time_us < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._heap, (time_us, self._seq, action, args))
        self._seq += 1

    def run(self, until_us: int) -> int:
        """Execute events strictly before ``until_us``; return how many were dropped."""
        while self._heap and self._heap[0][0] < until_us:
            time_us, _, action, args = heapq.heappop(self._heap)
            self.now = time_us
            action(*args)
        dropped = len(self._heap)
        self._heap.clear()
        return dropped


def _build_clock(node: NodeConfig, bound_ppm: float, rng: np.random.Generator) -> LocalClock:
    drawn = float(rng.uniform(-bound_ppm, bound_ppm))
    skew = drawn if node.skew_ppm is None else float(node.skew_ppm)
    osc = OscillatorModel(skew, float(node.drift_rw_sigma_ppm), int(node.initial_offset_us))
    return LocalClock(osc, granularity_us=int(node.granularity_us), epoch_true_us=0)


class _Simulation:
    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self.queue = EventQueue()
        names = config.node_names
        node_cfgs = (config.master, *config.slaves)
        self.rng = {
            name: {p: _stream(config.seed, i, p) for p in (_SKEW, _DRIFT, _RX, _FOLLOWUP)}
            for i, name in enumerate(names)
        }
        clocks = {
            name: _build_clock(cfg, config.skew_bound_ppm, self.rng[name][_SKEW])
            for name, cfg in zip(names, node_cfgs)
        }
        self.master = Master(clocks[MASTER])
        self.slaves = {name: Slave(clocks[name], config.horizon_beacons) for name in names[1:]}
        self.estimators = {name: SlaveEstimator(config.estimator) for name in names[1:]}
        self.traces = {name: SlaveTrace(name) for name in names[1:]}
        self.channel = config.channel.model()
        self.followup_channel = config.followup_channel.model()
        self.received: dict[str, set[int]] = {name: set() for name in names}
        self.followups_lost: dict[str, set[int]] = {name: set() for name in names[1:]}
        self.last_followup_arrival = {name: 0 for name in names[1:]}
        self.emit_times: dict[int, int] = {}
        self.beacons_emitted = 0

    def clock_of(self, name: str) -> LocalClock:
        return self.master.clock if name == MASTER else self.slaves[name].clock

    def _set_clock(self, name: str, clock: LocalClock) -> None:
        if name == MASTER:
            self.master.clock = clock
        else:
            self.slaves[name].clock = clock

    def on_beacon(self, beacon) -> None:
        now = self.queue.now
        self.beacons_emitted += 1
        self.emit_times[beacon.seq_k] = beacon.emit_true_us
        if beacon.seq_k > 0:
            for name in self.config.node_names:
                self._set_clock(name, step_drift(self.clock_of(name), self.rng[name][_DRIFT], now))
        arrivals = deliver_broadcast(
            beacon, self.config.node_names, self.channel, {n: r[_RX] for n, r in self.rng.items()}
        )
        for name, stamp in arrivals.items():
            if stamp is None:
                continue
            # a negative jitter sample timestamps the frame before emission
            stamp = max(stamp, 0)
            self.queue.schedule(max(stamp, now), self.on_rx, name, beacon.seq_k, stamp)

    def on_rx(self, name: str, k: int, stamp: int) -> None:
        self.received[name].add(k)
        if name == MASTER:
            self.master.on_sync(stamp, k)
        else:
            self.slaves[name].on_sync(stamp, k)

    def on_followup_emit(self) -> None:
        now = self.queue.now
        nxt = now + self.config.followup_interval
        if nxt < self.config.run_end_us:
            self.queue.schedule(nxt, self.on_followup_emit)
        msgs = self.master.emit_followups()
        if not msgs:
            return
        for name in self.slaves:
            arrival = deliver_unicast(
                msgs, MASTER, name, self.followup_channel, self.rng[name][_FOLLOWUP], now
            )
            if arrival is None:
                self.followups_lost[name].update(m.seq_k for m in msgs)
                continue
            # FIFO per link: later batches never overtake earlier ones
            arrival = max(arrival, self.last_followup_arrival[name])
            self.last_followup_arrival[name] = arrival
            self.queue.schedule(arrival, self.on_followup_rx, name, msgs)

    def on_followup_rx(self, name: str, msgs) -> None:
        now = self.queue.now
        slave = self.slaves[name]
        trace = self.traces[name]
        master_clock = self.master.clock
        for msg in msgs:
            pair = slave.on_followup(msg)
            if pair is None:
                continue
            rec = self.estimators[name].update(pair)
            emit = self.emit_times[pair.seq_k]
            trace.estimates.append(rec)
            trace.true_offsets.append(slave.clock.exact_local(emit) - master_clock.exact_local(emit))
            trace.available_at_us.append(now)
            state = self.estimators[name].state
            if trace.corrections and trace.corrections[-1][0] == now:
                trace.corrections[-1] = (now, state)
            else:
                trace.corrections.append((now, state))

    def run(self) -> TraceBundle:
        cfg = self.config
        for beacon in beacon_schedule(cfg.num_beacons, cfg.beacon_interval_us, cfg.beacon_phase_us):
            if beacon.emit_true_us < cfg.run_end_us:
                self.queue.schedule(beacon.emit_true_us, self.on_beacon, beacon)
        if cfg.followup_phase < cfg.run_end_us:
            self.queue.schedule(cfg.followup_phase, self.on_followup_emit)
        self.queue.run(cfg.run_end_us)

        master_clock = self.master.clock
        for name, trace in self.traces.items():
            slave = self.slaves[name]
            trace.clock = slave.clock
            trace.ground_truth = ground_truth(
                master_clock, slave.clock, trace.corrections, cfg.probe_period_us, cfg.run_end_us
            )
            trace.counters = self._counters(name)
            residuals = trace.residuals
            if len(residuals) >= 2:
                trace.estimate_stats = summarize(residuals)
            if len(trace.ground_truth) >= 2:
                trace.truth_stats = summarize(s.theta_true_us for s in trace.ground_truth)
        return TraceBundle(
            cfg, self.traces, self.beacons_emitted, master_clock, self.master.duplicates
        )

    def _counters(self, name: str) -> dict[str, int]:
        """Per-beacon outcome accounting; the outcome counts sum to num_beacons."""
        slave = self.slaves[name]
        paired = {r.seq_k for r in self.traces[name].estimates}
        m_rx, s_rx = self.received[MASTER], self.received[name]
        evicted = set(slave.store.evicted)
        outcome = {
            "pairs": 0,
            "master_losses": 0,
            "slave_losses": 0,
            "followup_losses": 0,
            "evicted_unpaired": 0,
            "incomplete": 0,
        }
        for k in range(self.beacons_emitted):
            if k in paired:
                outcome["pairs"] += 1
            elif k not in m_rx:
                outcome["master_losses"] += 1
            elif k not in s_rx:
                outcome["slave_losses"] += 1
            elif k in self.followups_lost[name]:
                outcome["followup_losses"] += 1
            elif k in evicted:
                outcome["evicted_unpaired"] += 1
            else:
                outcome["incomplete"] += 1
        return {
            "beacons_emitted": self.beacons_emitted,
            **outcome,
            "master_rx": len(m_rx),
            "slave_rx": len(s_rx),
            "orphans": slave.counters.orphans,
            "duplicates": slave.counters.duplicates,
            "evictions": slave.evictions,
            "master_duplicates": self.master.duplicates,
        }


def run(config: ScenarioConfig) -> TraceBundle:
    """Run one scenario. Identical config (seed included) gives identical traces."""
    errors = validate_config(config)
    if errors:
        raise ConfigError(errors)
    return _Simulation(config).run()

