"""FIFO transmission buffers, one per satellite output link."""
from __future__ import annotations

from collections import deque

from .errors import ConfigError

# Slack for float round-off when a packet ends exactly at a window boundary.
_EDGE_SLACK = 1e-12


class LinkQueue:
    """Tail-drop FIFO served at ``served_rate`` bit/s.

    ``backlog_bits`` counts every resident packet at full size, including the
    one currently on the wire; a partially sent head keeps its residual in
    ``Packet.remaining_bits`` across service windows.
    """

    __slots__ = ("capacity_bits", "served_rate", "fifo", "backlog_bits", "enqueued", "enqueued_bits",
                 "departed", "departed_bits", "dropped", "dropped_bits", "flushed", "flushed_bits",
                 "stalls")

    def __init__(self, capacity_bits: float, served_rate: float = 0.0):
        if not capacity_bits > 0:
            raise ConfigError("queue.capacity_bits", f"must be positive, got {capacity_bits}")
        self.capacity_bits = float(capacity_bits)
        self.served_rate = float(served_rate)
        self.fifo = deque()
        self.backlog_bits = 0.0
        # dropped: rejected on arrival; flushed: accepted then discarded
        self.enqueued = self.departed = self.dropped = self.flushed = self.stalls = 0
        self.enqueued_bits = self.departed_bits = self.dropped_bits = self.flushed_bits = 0.0

    def __len__(self):
        return len(self.fifo)

    def enqueue(self, pkt, now: float | None = None) -> bool:
        """Append ``pkt``; returns False (and marks the packet) on overflow."""
        if not pkt.size_bits > 0:
            raise ValueError("packet size must be positive")
        if self.backlog_bits + pkt.size_bits > self.capacity_bits:
            self.dropped += 1
            self.dropped_bits += pkt.size_bits
            pkt.drop_reason = "queue-overflow"
            return False
        if now is not None:
            pkt.enqueued_at = now
        pkt.tx_start = None
        pkt.remaining_bits = pkt.size_bits
        self.fifo.append(pkt)
        self.backlog_bits += pkt.size_bits
        self.enqueued += 1
        self.enqueued_bits += pkt.size_bits
        return True

    def service(self, dt: float, now: float = 0.0) -> list:
        """Transmit for the window [now, now+dt); returns ``(packet, departure_time)`` pairs."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not self.fifo:
            return []
        rate = self.served_rate
        if rate <= 0:
            self.stalls += 1
            return []
        out = []
        cursor, end = now, now + dt
        fifo = self.fifo
        while fifo:
            head = fifo[0]
            start = cursor if cursor > head.enqueued_at else head.enqueued_at
            if start >= end:
                break
            if head.tx_start is None:
                head.tx_start = start
            avail = (end - start) * rate
            if head.remaining_bits <= avail * (1 + _EDGE_SLACK):
                cursor = start + head.remaining_bits / rate
                head.remaining_bits = 0.0
                fifo.popleft()
                self.backlog_bits -= head.size_bits
                self.departed += 1
                self.departed_bits += head.size_bits
                out.append((head, cursor))
            else:
                head.remaining_bits -= avail
                break
        if not fifo:
            self.backlog_bits = 0.0
        return out

    def occupancy(self) -> float:
        if not self.capacity_bits > 0:
            raise ConfigError("queue.capacity_bits", "zero capacity")
        q = self.backlog_bits / self.capacity_bits
        return 0.0 if q < 0 else (1.0 if q > 1 else q)

    def flush(self, reason: str) -> list:
        """Drop every resident packet (e.g. the link went down)."""
        out = list(self.fifo)
        for p in out:
            p.drop_reason = reason
            self.flushed += 1
            self.flushed_bits += p.size_bits
        self.fifo.clear()
        self.backlog_bits = 0.0
        return out


def enqueue(queue: LinkQueue, pkt, now=None) -> bool:
    return queue.enqueue(pkt, now)


def service(queue: LinkQueue, dt: float, now: float = 0.0):
    return queue.service(dt, now)


def occupancy(queue: LinkQueue) -> float:
    return queue.occupancy()
