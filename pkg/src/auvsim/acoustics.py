"""Shared acoustic medium: delayed, range-gated datagrams and DAT-style fixes.

Distances are frozen at send time; sound crosses a kilometre in well under
a second while the vehicles move about a metre per second.
"""
from __future__ import annotations

import csv
import heapq
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal

log = logging.getLogger(__name__)

Vec3 = tuple[float, float, float]


class PayloadTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class AcousticMessage:
    sender: str
    payload: bytes
    send_time: float
    send_position: Vec3


@dataclass(frozen=True)
class LocalizationFix:
    beacon: str
    range: float
    azimuth: float  # global frame, requester -> beacon, (-pi, pi], 0 = east
    elevation: float
    fix_time: float  # when the geometry was measured (request time)

    @property
    def horizontal_range(self) -> float:
        return self.range * math.cos(self.elevation)


@dataclass(frozen=True)
class ChannelEvent:
    time: float
    sender: str
    receiver: str
    event: str
    distance: float
    msg_id: int = 0  # links a scheduled send/fix_request to its delivery or receive-side drop


@dataclass
class ChannelConfig:
    sound_speed: float = 1500.0
    max_range: float = 3000.0
    drop_model: Literal["hard", "probabilistic"] = "hard"
    mtu: int = 32
    p_contention: float = 0.0
    sigma_range: float = 0.0
    sigma_azimuth: float = 0.0


def _distance(a: Vec3, b: Vec3) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def _wrap_pi(a: float) -> float:
    return math.pi if a <= -math.pi else a


@dataclass
class AcousticChannel:
    config: ChannelConfig = field(default_factory=ChannelConfig)
    seed: int = 0

    def __post_init__(self):
        self._drop_rng = random.Random(self.seed)
        self._noise_rng = random.Random(self.seed + 0x5EED)
        self._seq = 0
        self._inbox: dict[str, list] = {}
        self._fixes: dict[str, list] = {}
        self._busy: list[tuple[str, float, float]] = []  # (requester, start, end)
        self._disabled: set[str] = set()
        self.events: list[ChannelEvent] = []

    # -- bookkeeping -------------------------------------------------------
    def _log(self, t: float, sender: str, receiver: str, event: str, d: float, msg_id: int = 0) -> None:
        self.events.append(ChannelEvent(t, sender, receiver, event, d, msg_id))
        if event.startswith("drop"):
            log.debug("t=%.3f %s -> %s %s (%.1f m)", t, sender, receiver, event, d)

    def set_modem(self, vehicle: str, enabled: bool) -> None:
        if enabled:
            self._disabled.discard(vehicle)
        else:
            self._disabled.add(vehicle)

    def pending(self) -> int:
        return sum(len(q) for q in self._inbox.values()) + sum(len(q) for q in self._fixes.values())

    def _admits(self, d: float) -> bool:
        r = self.config.max_range
        if self.config.drop_model == "hard":
            return d <= r
        p = min(max(1.0 - d / r, 0.0), 1.0)
        return self._drop_rng.random() < p

    def _contended(self, sender: str, t: float) -> bool:
        self._busy = [b for b in self._busy if b[2] >= t]
        if self.config.p_contention <= 0.0:
            return False
        for requester, start, end in self._busy:
            if requester != sender and start <= t <= end:
                return self._drop_rng.random() < self.config.p_contention
        return False

    # -- datagrams ---------------------------------------------------------
    def transmit(self, msg: AcousticMessage, receivers: Iterable[tuple[str, Vec3]]) -> None:
        """Schedule ``msg`` for each ``(id, position)`` receiver, or log its drop."""
        if len(msg.payload) > self.config.mtu:
            raise PayloadTooLarge(f"payload of {len(msg.payload)} bytes exceeds MTU {self.config.mtu}")
        t = msg.send_time
        receivers = [(rid, pos) for rid, pos in receivers if rid != msg.sender]
        if msg.sender in self._disabled:
            for rid, pos in receivers:
                self._log(t, msg.sender, rid, "drop_modem", _distance(msg.send_position, pos))
            return
        contended = self._contended(msg.sender, t)
        c = self.config.sound_speed
        for rid, pos in receivers:
            d = _distance(msg.send_position, pos)
            if contended:
                self._log(t, msg.sender, rid, "drop_contention", d)
            elif not self._admits(d):
                self._log(t, msg.sender, rid, "drop_range", d)
            else:
                self._seq += 1
                heapq.heappush(self._inbox.setdefault(rid, []), (t + d / c, self._seq, msg, d))
                self._log(t, msg.sender, rid, "send", d, self._seq)

    def poll(self, receiver: str, now: float) -> list[AcousticMessage]:
        """Everything due for ``receiver`` at ``now`` (inclusive), in delivery order."""
        q = self._inbox.get(receiver)
        out: list[AcousticMessage] = []
        while q and q[0][0] <= now:
            due, seq, msg, d = heapq.heappop(q)
            if receiver in self._disabled:
                self._log(due, msg.sender, receiver, "drop_modem_rx", d, seq)
            else:
                self._log(due, msg.sender, receiver, "deliver", d, seq)
                out.append(msg)
        return out

    # -- localisation ------------------------------------------------------
    def request_fix(self, requester: tuple[str, Vec3], beacon: tuple[str, Vec3], now: float) -> bool:
        """Ping ``beacon``; the fix becomes available after the round trip. Returns False if dropped."""
        rid, rpos = requester
        bid, bpos = beacon
        d = _distance(rpos, bpos)
        if rid in self._disabled or bid in self._disabled:
            self._log(now, rid, bid, "drop_fix_modem", d)
            return False
        if not self._admits(d):
            self._log(now, rid, bid, "drop_fix_range", d)
            return False
        dx, dy, dz = bpos[0] - rpos[0], bpos[1] - rpos[1], bpos[2] - rpos[2]
        rng = d
        az = math.atan2(dy, dx)
        el = math.atan2(dz, math.hypot(dx, dy))
        if self.config.sigma_range > 0:
            rng = max(0.0, rng + self._noise_rng.gauss(0.0, self.config.sigma_range))
        if self.config.sigma_azimuth > 0:
            az = math.remainder(az + self._noise_rng.gauss(0.0, self.config.sigma_azimuth), 2 * math.pi)
        fix = LocalizationFix(bid, rng, _wrap_pi(az), el, now)
        due = now + 2.0 * d / self.config.sound_speed
        self._busy.append((rid, now, due))
        self._seq += 1
        heapq.heappush(self._fixes.setdefault(rid, []), (due, self._seq, fix, d))
        self._log(now, rid, bid, "fix_request", d, self._seq)
        return True

    def poll_fixes(self, requester: str, now: float) -> list[LocalizationFix]:
        q = self._fixes.get(requester)
        out: list[LocalizationFix] = []
        while q and q[0][0] <= now:
            due, seq, fix, d = heapq.heappop(q)
            if requester in self._disabled:
                self._log(due, requester, fix.beacon, "drop_fix_modem_rx", d, seq)
            else:
                self._log(due, requester, fix.beacon, "fix_deliver", d, seq)
                out.append(fix)
        return out

    def export_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "sender", "receiver", "event", "distance", "msg_id"])
            for e in self.events:
                w.writerow([repr(e.time), e.sender, e.receiver, e.event, repr(e.distance), e.msg_id])
