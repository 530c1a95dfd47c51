"""Packet-level RCP simulation of one bottleneck fed by Poisson sources.

Time is in ms, sizes in bytes, rates in bytes/ms (1 Gbps = 125000 B/ms).
The router advertises a per-flow rate R and refreshes it every control
interval from the bytes that arrived in the interval and the mean backlog:

    R <- R * (1 + a*D/(tau*C) * (C - y - b*C*q))       with queue feedback
    R <- R * (1 + a*D/(tau*gC) * (gC - y))             rate mismatch only

where D is the control interval, y the measured arrival rate, q the
time-averaged backlog in packets over the interval and gC = gamma*C.
Sources hear a new rate rtt/2 after it is set and their packets need
another rtt/2 to reach the router, so arrivals at time t carry R(t - rtt).
Arrivals are generated directly in router time.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .fluid_model import Variant, utilization_from_b

GBPS = 125_000.0  # bytes per ms
MBPS = 125.0
# mean-backlog: b*C*q with q the interval-averaged backlog in packets
# drain: b*q/D with q the instantaneous backlog in bytes
QUEUE_TERMS = ("mean-backlog", "drain")


@dataclass(frozen=True)
class PacketSimConfig:
    capacity: float = GBPS
    n_sources: int = 100
    rtt: float = 100.0
    a: float = 0.4
    b: float = 0.005
    gamma: float = 0.95
    packet_size: float = 1000.0
    control_interval: float | None = None  # rtt / 100 when unset
    duration: float = 20_000.0
    seed: int = 1
    variant: Variant = Variant.WITH_QUEUE
    buffer_limit: int | None = None
    queue_term: str = "mean-backlog"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.control_interval is None:
            object.__setattr__(self, "control_interval", self.rtt / 100.0)
        for name in ("capacity", "rtt", "duration", "packet_size", "control_interval", "a"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if int(self.n_sources) != self.n_sources or self.n_sources < 1:
            raise ValueError(f"n_sources must be a positive integer, got {self.n_sources!r}")
        if self.variant is Variant.WITH_QUEUE and not self.b >= 0:
            raise ValueError(f"b must be >= 0, got {self.b!r}")
        if self.variant is Variant.WITHOUT_QUEUE and not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if self.buffer_limit is not None and self.buffer_limit < 1:
            raise ValueError(f"buffer_limit must be >= 1, got {self.buffer_limit!r}")
        if self.queue_term not in QUEUE_TERMS:
            raise ValueError(f"queue_term must be one of {QUEUE_TERMS}, got {self.queue_term!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def target_utilization(self) -> float:
        if self.variant is Variant.WITH_QUEUE:
            return utilization_from_b(self.b)
        return self.gamma

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "PacketSimConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)


_INT_KEYS = {"n_sources", "seed", "buffer_limit"}


def _coerce(key, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if key in ("variant", "queue_term"):
        return raw
    if raw.lower() in ("", "none"):
        return None
    return int(raw) if key in _INT_KEYS else float(raw)


def read_config_file(path) -> dict:
    """Flat ``key = value`` (or ``key: value``) file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            if sep not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = line.split(sep, 1)
            values[key.strip()] = value.strip()
    return values


@dataclass
class PacketTrace:
    t_ms: np.ndarray
    queue_pkts: np.ndarray
    rate_Bpms: np.ndarray
    arrival_Bpms: np.ndarray
    served_bytes: np.ndarray
    config: PacketSimConfig
    generated: int = 0
    served: int = 0
    queued_final: int = 0
    dropped: int = 0
    counters: dict = field(init=False)

    def __post_init__(self):
        self.counters = {"generated": self.generated, "served": self.served,
                         "queued_final": self.queued_final, "dropped": self.dropped}


class _Sources:
    """Poisson sources sharing one advertised rate, each with its own stream.

    Every source owns a unit-rate Poisson process (cumulated standard
    exponentials from its own generator).  Because all sources send at the
    same rate lambda(t), arrivals are the unit-rate points mapped through the
    common cumulative intensity, which lets the merged stream be consumed in
    vector slices.
    """

    _BLOCK = 64.0  # unit-time horizon added per refill

    def __init__(self, n: int, seed: int):
        children = np.random.SeedSequence(seed).spawn(n)
        self.rngs = [np.random.Generator(np.random.PCG64(c)) for c in children]
        self.tails = np.zeros(n)  # last point drawn per source
        self.points = np.empty(0)
        self.ids = np.empty(0, dtype=np.int64)
        self.horizon = 0.0  # all points below this are in ``points``
        self.clock = 0.0  # cumulative intensity consumed so far

    def _refill(self, upto: float) -> None:
        new_pts, new_ids = [], []
        horizon = max(upto, self.horizon + self._BLOCK)
        for sid, rng in enumerate(self.rngs):
            last = self.tails[sid]
            chunk = []
            while last < horizon:
                draw = last + np.cumsum(rng.exponential(1.0, int(horizon - last) + 16))
                chunk.append(draw)
                last = draw[-1]
            if chunk:
                pts = np.concatenate(chunk)
                self.tails[sid] = pts[-1]
                # keep everything: points past the horizon are needed later
                new_pts.append(pts)
                new_ids.append(np.full(pts.size, sid, dtype=np.int64))
        if new_pts:
            pts = np.concatenate([self.points] + new_pts)
            ids = np.concatenate([self.ids] + new_ids)
            order = np.lexsort((ids, pts))
            self.points, self.ids = pts[order], ids[order]
        self.horizon = float(self.tails.min())

    def arrivals(self, start: float, end: float, rate_pps: float):
        """Arrival times and source ids on [start, end) at ``rate_pps`` packets/ms per source."""
        span = end - start
        if span <= 0:
            return np.empty(0), np.empty(0, dtype=np.int64)
        lo = self.clock
        hi = lo + rate_pps * span
        if hi >= self.horizon:
            self._refill(hi)
        k = int(np.searchsorted(self.points, hi, side="left"))
        times = start + (self.points[:k] - lo) / rate_pps
        ids = self.ids[:k]
        # guard against rounding at the right edge
        times = np.minimum(times, np.nextafter(end, start))
        self.points, self.ids = self.points[k:], self.ids[k:]
        self.clock = hi
        return times, ids


class _Queue:
    """FIFO server with fixed service time; tracks packets still in the system."""

    def __init__(self, service: float, limit: int | None):
        self.service = service
        self.limit = limit
        self.last_departure = -math.inf
        self.pending_arr = np.empty(0)
        self.pending_dep = np.empty(0)
        self.dropped = 0

    def admit(self, arrivals: np.ndarray) -> None:
        if arrivals.size == 0:
            return
        if self.limit is None:
            k = np.arange(arrivals.size)
            base = np.maximum.accumulate(np.concatenate(([self.last_departure], arrivals - k * self.service)))
            deps = base[1:] + (k + 1) * self.service
            kept = arrivals
        else:
            kept, deps = self._admit_limited(arrivals)
        if deps.size:
            self.last_departure = float(deps[-1])
        self.pending_arr = np.concatenate([self.pending_arr, kept])
        self.pending_dep = np.concatenate([self.pending_dep, deps])

    def _admit_limited(self, arrivals):
        in_system = deque(d for d in self.pending_dep.tolist())
        last, s, limit = self.last_departure, self.service, self.limit
        kept, deps = [], []
        for a in arrivals.tolist():
            while in_system and in_system[0] <= a:
                in_system.popleft()
            if len(in_system) >= limit:
                self.dropped += 1
                continue
            last = (a if a > last else last) + s
            in_system.append(last)
            kept.append(a)
            deps.append(last)
        return np.asarray(kept), np.asarray(deps)

    def in_system(self, t: float) -> int:
        """Packets that arrived before t and have not departed by t."""
        return int(np.count_nonzero(self.pending_arr < t) - np.count_nonzero(self.pending_dep <= t))

    def occupancy_integral(self, t0: float, t1: float) -> float:
        """Integral of the number in system over [t0, t1)."""
        a = np.clip(self.pending_arr, t0, t1)
        d = np.clip(self.pending_dep, t0, t1)
        return float(np.sum(d - a))

    def served_between(self, t0: float, t1: float) -> int:
        return int(np.count_nonzero((self.pending_dep > t0) & (self.pending_dep <= t1)))

    def retire(self, t: float) -> int:
        """Forget packets that departed by t; returns how many."""
        done = self.pending_dep <= t
        n = int(np.count_nonzero(done))
        if n:
            self.pending_arr = self.pending_arr[~done]
            self.pending_dep = self.pending_dep[~done]
        return n


def run(config: PacketSimConfig) -> PacketTrace:
    cfg = config
    C, n, rtt = cfg.capacity, int(cfg.n_sources), cfg.rtt
    dt = cfg.control_interval
    with_queue = cfg.variant is Variant.WITH_QUEUE
    target = C if with_queue else cfg.gamma * C
    gain = cfg.a * dt / (cfg.rtt * target)
    r_min, r_max = C / (1e6 * n), C

    sources = _Sources(n, cfg.seed)
    queue = _Queue(cfg.packet_size / C, cfg.buffer_limit)

    steps = int(math.ceil(cfg.duration / dt - 1e-9))
    update_times = [min(cfg.duration, (k + 1) * dt) for k in range(steps)]
    R = cfg.target_utilization * C / n
    # router-side schedule: (effective time, per-flow rate)
    schedule = deque([(-math.inf, R)])

    t_out = np.empty(steps)
    q_out = np.empty(steps)
    r_out = np.empty(steps)
    y_out = np.empty(steps)
    s_out = np.empty(steps)
    generated = served = 0
    t0 = 0.0
    for k, t1 in enumerate(update_times):
        # rate segments over [t0, t1)
        while len(schedule) > 1 and schedule[1][0] <= t0:
            schedule.popleft()
        edges = [t0] + [e for e, _ in list(schedule)[1:] if e < t1] + [t1]
        rates = [schedule[0][1]] + [r for e, r in list(schedule)[1:] if e < t1]
        window_bytes = 0.0
        for (s0, s1), rate in zip(zip(edges[:-1], edges[1:]), rates):
            times, _ = sources.arrivals(s0, s1, rate / cfg.packet_size)
            generated += times.size
            window_bytes += times.size * cfg.packet_size
            queue.admit(times)
        span = t1 - t0
        y = window_bytes / span
        done = queue.served_between(t0, t1)
        served += done
        if with_queue and cfg.queue_term == "drain":
            error = C - y - cfg.b * queue.in_system(t1) * cfg.packet_size / span
        elif with_queue:
            q_mean = queue.occupancy_integral(t0, t1) / span
            error = C - y - cfg.b * C * q_mean
        else:
            error = target - y
        R = min(r_max, max(r_min, R * (1.0 + gain * (span / dt) * error)))
        schedule.append((t1 + rtt, R))
        t_out[k], q_out[k], r_out[k], y_out[k] = t1, queue.in_system(t1), R, y
        s_out[k] = done * cfg.packet_size
        queue.retire(t1)
        t0 = t1

    queued_final = queue.pending_dep.size
    return PacketTrace(t_ms=t_out, queue_pkts=q_out, rate_Bpms=r_out, arrival_Bpms=y_out,
                       served_bytes=s_out, config=cfg, generated=generated, served=served,
                       queued_final=queued_final, dropped=queue.dropped)


@dataclass(frozen=True)
class OscillationMetrics:
    rate_amplitude: float
    queue_amplitude: float
    mean_utilization: float
    mean_rate: float
    mean_queue: float

    @property
    def relative_rate_amplitude(self) -> float:
        return self.rate_amplitude / self.mean_rate if self.mean_rate > 0 else math.inf


def oscillation_metrics(trace: PacketTrace, tail_fraction: float = 0.5) -> OscillationMetrics:
    """Half peak-to-trough of the per-RTT averaged rate and queue over the tail."""
    cfg = trace.config
    if trace.t_ms.size == 0 or trace.t_ms[-1] < 20 * cfg.rtt:
        raise ValueError("trace must span at least 20 round-trip times")
    if not 0 < tail_fraction <= 1:
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction!r}")
    per_rtt = max(1, int(round(cfg.rtt / cfg.control_interval)))
    m = int(round(tail_fraction * trace.t_ms.size))
    m -= m % per_rtt
    if m < 2 * per_rtt:
        raise ValueError("tail too short for per-RTT averaging")
    rate = trace.rate_Bpms[-m:].reshape(-1, per_rtt).mean(axis=1)
    queue = trace.queue_pkts[-m:].reshape(-1, per_rtt).mean(axis=1)
    tail_time = trace.t_ms[-1] - trace.t_ms[-m - 1] if m < trace.t_ms.size else trace.t_ms[-1]
    util = float(trace.served_bytes[-m:].sum() / (cfg.capacity * tail_time))
    return OscillationMetrics(
        rate_amplitude=0.5 * float(np.ptp(rate)),
        queue_amplitude=0.5 * float(np.ptp(queue)),
        mean_utilization=util,
        mean_rate=float(rate.mean()),
        mean_queue=float(queue.mean()),
    )
