"""Master and slave state machines: SYNC timestamping, FOLLOW_UP exchange, pairing."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

from .clocks import LocalClock, Timestamp

DEFAULT_HORIZON_BEACONS = 16


@dataclass(frozen=True)
class FollowUpMessage:
    seq_k: int
    t_master_us: Timestamp


@dataclass(frozen=True)
class TimestampPair:
    seq_k: int
    t_master_us: Timestamp
    t_slave_us: Timestamp


class PairingStore:
    """Slave timestamps waiting for their FOLLOW_UP, keyed by beacon index.

    Holds at most ``horizon_beacons`` entries and nothing older than
    ``latest_k - horizon_beacons``; anything pushed out is counted in
    ``evictions``.
    """

    def __init__(self, horizon_beacons: int = DEFAULT_HORIZON_BEACONS) -> None:
        if horizon_beacons < 1:
            raise ValueError("horizon_beacons must be >= 1")
        self.horizon_beacons = horizon_beacons
        self._pending: OrderedDict[int, Timestamp] = OrderedDict()
        self.latest_k: Optional[int] = None
        self.evictions = 0
        self.evicted: list[int] = []

    def __len__(self) -> int:
        return len(self._pending)

    def __contains__(self, k: int) -> bool:
        return k in self._pending

    def keys(self) -> list[int]:
        return list(self._pending)

    def put(self, k: int, t_slave_us: Timestamp) -> None:
        self._pending[k] = t_slave_us
        if self.latest_k is None or k > self.latest_k:
            self.latest_k = k
        floor_k = self.latest_k - self.horizon_beacons
        while self._pending:
            oldest = min(self._pending)
            if len(self._pending) > self.horizon_beacons or oldest < floor_k:
                del self._pending[oldest]
                self.evictions += 1
                self.evicted.append(oldest)
            else:
                break

    def pop(self, k: int) -> Optional[Timestamp]:
        return self._pending.pop(k, None)


class Master:
    """Timestamps beacons on the master clock and batches them into FOLLOW_UPs."""

    def __init__(self, clock: LocalClock) -> None:
        self.clock = clock
        self.records: dict[int, Timestamp] = {}
        self._unsent: list[int] = []
        self.duplicates = 0

    def on_sync(self, arrival_true_us: int, k: int) -> Optional[Timestamp]:
        if k in self.records:
            self.duplicates += 1
            return None
        t_m = self.clock.local_time(arrival_true_us)
        self.records[k] = t_m
        self._unsent.append(k)
        return t_m

    def emit_followups(self) -> list[FollowUpMessage]:
        """Every not-yet-sent record, oldest first."""
        msgs = [FollowUpMessage(k, self.records[k]) for k in sorted(self._unsent)]
        self._unsent.clear()
        return msgs

    @property
    def unsent(self) -> list[int]:
        return sorted(self._unsent)


@dataclass
class SlaveCounters:
    orphans: int = 0
    duplicates: int = 0
    duplicate_syncs: int = 0
    orphaned: list[int] = field(default_factory=list)


class Slave:
    """Timestamps beacons on the slave clock and pairs them with incoming FOLLOW_UPs."""

    def __init__(self, clock: LocalClock, horizon_beacons: int = DEFAULT_HORIZON_BEACONS) -> None:
        self.clock = clock
        self.store = PairingStore(horizon_beacons)
        self.counters = SlaveCounters()
        self._paired: set[int] = set()
        self._seen: set[int] = set()

    def on_sync(self, arrival_true_us: int, k: int) -> Optional[Timestamp]:
        if k in self._seen:
            self.counters.duplicate_syncs += 1
            return None
        self._seen.add(k)
        t_s = self.clock.local_time(arrival_true_us)
        self.store.put(k, t_s)
        return t_s

    def on_followup(self, msg: FollowUpMessage) -> Optional[TimestampPair]:
        t_s = self.store.pop(msg.seq_k)
        if t_s is not None:
            self._paired.add(msg.seq_k)
            return TimestampPair(msg.seq_k, msg.t_master_us, t_s)
        if msg.seq_k in self._paired:
            self.counters.duplicates += 1
        else:
            self.counters.orphans += 1
            self.counters.orphaned.append(msg.seq_k)
        return None

    @property
    def evictions(self) -> int:
        return self.store.evictions


def master_on_sync(master: Master, arrival_true_us: int, k: int) -> Optional[Timestamp]:
    return master.on_sync(arrival_true_us, k)


def master_emit_followups(master: Master) -> list[FollowUpMessage]:
    return master.emit_followups()


def slave_on_sync(slave: Slave, arrival_true_us: int, k: int) -> Optional[Timestamp]:
    return slave.on_sync(arrival_true_us, k)


def slave_on_followup(slave: Slave, msg: FollowUpMessage) -> Optional[TimestampPair]:
    return slave.on_followup(msg)
