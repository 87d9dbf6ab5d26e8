"""Deterministic discrete-event simulation of the distributed alignment platform.

Two nodes (a rooftop Tx and a mobile Rx) each carry a pan-tilt servo
pair, an IMU giving noisy angle feedback, and a proportional pointing
controller. Geo fixes are exchanged over a topic-based publish-subscribe
bus with sampled latency, drops, duplicates, and failover windows, while
per-topic per-subscriber FIFO order is preserved under every fault. The
core is a logical-clock event loop over integer-nanosecond timestamps,
so equal configs (seed included) reproduce bit-identical event logs.
"""

from __future__ import annotations

import bisect
import heapq
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geo
from .geo import GeoFix


class ConfigInvalid(ValueError):
    pass


class UnmatchedEvents(ValueError):
    """A delivery references a message that was never published."""


# ---------------------------------------------------------------------------
# Component models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ServoState:
    """Pan-tilt kinematic state; rates are clamped to the slew limit."""

    yaw: float = 0.0  # deg, (-180, 180]
    pitch: float = 0.0  # deg, clamped to mechanical limits
    commanded_rate_yaw: float = 0.0  # deg/s
    commanded_rate_pitch: float = 0.0
    max_rate: float = 300.0  # deg/s
    control_period: float = 0.02  # s
    pitch_limit: float = 90.0  # deg


def servo_step(state: ServoState, dt: float) -> ServoState:
    """Advance the open-loop servos by dt seconds at their commanded rates."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    rate_yaw = min(max(state.commanded_rate_yaw, -state.max_rate), state.max_rate)
    rate_pitch = min(max(state.commanded_rate_pitch, -state.max_rate), state.max_rate)
    yaw = geo.wrap_deg_180(state.yaw + rate_yaw * dt)
    pitch = min(max(state.pitch + rate_pitch * dt, -state.pitch_limit), state.pitch_limit)
    return replace(state, yaw=yaw, pitch=pitch)


@dataclass(frozen=True)
class ImuModel:
    angle_noise_sigma: float = 0.4  # deg per report
    report_period: float = 0.01  # s
    latency: float = 0.002  # s

    def __post_init__(self):
        if self.angle_noise_sigma < 0 or self.report_period < 0 or self.latency < 0:
            raise ValueError("IMU parameters must be >= 0")


@dataclass(frozen=True)
class ControllerConfig:
    deadband: float = 0.5  # deg
    gain: float = 30.0  # 1/s
    max_rate: float = 300.0  # deg/s


def controller_step(measured_angle: float, target_angle: float, config: ControllerConfig) -> float:
    """Proportional rate command with deadband, clamped to the slew limit."""
    error = geo.wrap_deg_180(target_angle - measured_angle)
    if abs(error) <= config.deadband:
        return 0.0
    rate = config.gain * error
    return min(max(rate, -config.max_rate), config.max_rate)


@dataclass(frozen=True)
class LatencyModel:
    """Sampled one-way message latency: fixed, uniform, or lognormal."""

    kind: str = "lognormal"
    fixed_s: float = 0.02
    low_s: float = 0.01
    high_s: float = 0.03
    median_s: float = 0.0185
    sigma: float = 0.25

    def sample_ns(self, rng: np.random.Generator) -> int:
        if self.kind == "fixed":
            value = self.fixed_s
        elif self.kind == "uniform":
            value = float(rng.uniform(self.low_s, self.high_s))
        elif self.kind == "lognormal":
            value = self.median_s * math.exp(self.sigma * float(rng.normal()))
        else:
            raise ConfigInvalid(f"unknown latency kind {self.kind!r}")
        return max(0, int(round(value * 1e9)))


@dataclass(frozen=True)
class BusConfig:
    latency: LatencyModel = field(default_factory=LatencyModel)
    drop_probability: float = 0.0
    duplicate_probability: float = 0.0
    failover_windows: tuple = ()  # ((start_s, end_s), ...)

    def __post_init__(self):
        if not 0.0 <= self.drop_probability < 1.0:
            raise ConfigInvalid("drop_probability must be in [0, 1)")
        if not 0.0 <= self.duplicate_probability < 1.0:
            raise ConfigInvalid("duplicate_probability must be in [0, 1)")
        for window in self.failover_windows:
            if len(window) != 2 or window[1] <= window[0]:
                raise ConfigInvalid(f"bad failover window {window}")


@dataclass
class ScheduledDelivery:
    deliver_t_ns: int
    subscriber: str
    msg_id: str
    topic: str
    duplicate: bool


class Bus:
    """At-least-once topic bus with per-topic per-subscriber FIFO order.

    Messages published during a failover window are held to the window
    end and then transmitted (incurring their latency); deliveries that
    would land inside a window are retransmitted from the window end the
    same way. Sampled latencies that would reorder messages are clamped
    so FIFO holds regardless of faults. Drops are explicit, never silent.
    """

    def __init__(self, config: BusConfig, subscriptions: dict, rng: np.random.Generator):
        self.config = config
        self.subscriptions = {topic: tuple(subs) for topic, subs in subscriptions.items()}
        self.rng = rng
        self._last_delivery: dict[tuple, int] = {}
        self._windows_ns = [
            (int(round(a * 1e9)), int(round(b * 1e9))) for a, b in config.failover_windows
        ]

    def _window_end(self, t_ns: int) -> int | None:
        for start, end in self._windows_ns:
            if start <= t_ns < end:
                return end
        return None

    def _deliver_time(self, publish_t_ns: int, latency_ns: int) -> int:
        send = publish_t_ns
        for _ in range(len(self._windows_ns) + 2):
            held = self._window_end(send)
            if held is not None:
                send = held
            arrival = send + latency_ns
            held = self._window_end(arrival)
            if held is None:
                return arrival
            send = held
        return send + latency_ns

    def publish(self, topic: str, msg_id: str, publish_t_ns: int):
        """Schedule deliveries for one message; returns (deliveries, drops)."""
        deliveries: list[ScheduledDelivery] = []
        drops: list[str] = []
        for subscriber in self.subscriptions.get(topic, ()):
            if self.config.drop_probability > 0 and self.rng.random() < self.config.drop_probability:
                drops.append(subscriber)
                continue
            copies = 1
            if (
                self.config.duplicate_probability > 0
                and self.rng.random() < self.config.duplicate_probability
            ):
                copies = 2
            for copy in range(copies):
                latency_ns = self.config.latency.sample_ns(self.rng)
                t = self._deliver_time(publish_t_ns, latency_ns)
                key = (topic, subscriber)
                t = max(t, self._last_delivery.get(key, 0))
                self._last_delivery[key] = t
                deliveries.append(
                    ScheduledDelivery(
                        deliver_t_ns=t,
                        subscriber=subscriber,
                        msg_id=msg_id,
                        topic=topic,
                        duplicate=copy > 0,
                    )
                )
        return deliveries, drops


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    tx_fix: GeoFix
    rx_track: tuple  # time-ordered GeoFix sequence
    tx_mount_height_m: float = 25.0
    tx_publish_period_s: float = 1.0
    servo: ServoState = field(default_factory=ServoState)
    imu: ImuModel = field(default_factory=ImuModel)
    bus: BusConfig = field(default_factory=BusConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    clock_offset_tx_s: float = 0.0
    clock_offset_rx_s: float = 0.0
    duration_s: float | None = None  # None: track span plus one publish period
    seed: int = 0
    align_at_start: bool = True

    def validate(self):
        if not self.rx_track:
            raise ConfigInvalid("rx_track is empty")
        times = [fix.fix_time for fix in self.rx_track]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigInvalid("rx_track times must be strictly increasing")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ConfigInvalid("duration_s must be > 0")
        if self.servo.control_period <= 0:
            raise ConfigInvalid("control_period must be > 0")

    def to_json(self) -> str:
        payload = asdict(self)
        payload["rx_track"] = [asdict(fix) for fix in self.rx_track]
        payload["tx_fix"] = asdict(self.tx_fix)
        payload["bus"] = asdict(self.bus)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        raw = json.loads(text)
        raw["tx_fix"] = GeoFix(**raw["tx_fix"])
        raw["rx_track"] = tuple(GeoFix(**f) for f in raw["rx_track"])
        raw["servo"] = ServoState(**raw["servo"])
        raw["imu"] = ImuModel(**raw["imu"])
        bus = dict(raw["bus"])
        bus["latency"] = LatencyModel(**bus["latency"])
        bus["failover_windows"] = tuple(tuple(w) for w in bus["failover_windows"])
        raw["bus"] = BusConfig(**bus)
        raw["controller"] = ControllerConfig(**raw["controller"])
        return cls(**raw)


@dataclass(frozen=True)
class Metrics:
    interaction_count: int
    mean_response_time_s: float | None
    p95_response_time_s: float | None
    mean_alignment_error_deg: float | None
    p50_alignment_error_deg: float | None
    p95_alignment_error_deg: float | None
    p99_alignment_error_deg: float | None
    mean_settling_time_s: float | None
    dropped_messages: int
    duplicate_deliveries: int
    alignment_samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class EventLog:
    """Ordered event records: {"t_ns", "node", "kind", "payload"}."""

    def __init__(self, events=None):
        self.events = list(events or [])

    def append(self, t_ns: int, node: str, kind: str, payload: dict):
        self.events.append({"t_ns": int(t_ns), "node": node, "kind": kind, "payload": payload})

    def to_jsonl(self, path):
        with open(path, "w") as handle:
            for event in self.events:
                handle.write(json.dumps(event, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EventLog":
        events = []
        with open(path) as handle:
            for line in handle:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return cls(events)


# ---------------------------------------------------------------------------
# The event loop
# ---------------------------------------------------------------------------


class _Node:
    def __init__(self, name, fix, servo, peer_name):
        self.name = name
        self.fix = fix  # current true position
        self.servo = servo
        self.peer_name = peer_name
        self.peer_fix = None  # latest delivered peer fix
        self.imu_yaw = None  # latest available IMU report
        self.imu_pitch = None
        self.last_advance_ns = 0

    def advance(self, t_ns: int):
        if t_ns > self.last_advance_ns:
            dt = (t_ns - self.last_advance_ns) / 1e9
            self.servo = servo_step(self.servo, dt)
            self.last_advance_ns = t_ns

    def boresight(self) -> tuple[float, float]:
        azimuth = geo.wrap_deg_360(self.fix.heading + self.servo.yaw)
        return azimuth, self.servo.pitch


def _true_error_deg(node: _Node, peer: _Node) -> float:
    target = geo.pointing_to(node.fix, peer.fix)
    azimuth, pitch = node.boresight()
    return geo.angular_separation(azimuth, pitch, target.azimuth, target.elevation)


def run_scenario(config: ScenarioConfig) -> tuple[EventLog, Metrics]:
    """Execute the scenario; returns the event log and its metrics.

    Deterministic for a given config: integer-nanosecond event times, a
    single seeded generator, and sequence-numbered tie-breaking.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    log = EventLog()

    track = list(config.rx_track)
    t_end_ns = (
        int(round(config.duration_s * 1e9))
        if config.duration_s is not None
        else track[-1].fix_time + int(round(config.tx_publish_period_s * 1e9))
    )

    tx_fix = replace(
        config.tx_fix,
        altitude_ellipsoidal=config.tx_fix.altitude_ellipsoidal + config.tx_mount_height_m,
    )
    nodes = {
        "tx": _Node("tx", tx_fix, config.servo, "rx"),
        "rx": _Node("rx", track[0], config.servo, "tx"),
    }
    offsets_ns = {
        "tx": int(round(config.clock_offset_tx_s * 1e9)),
        "rx": int(round(config.clock_offset_rx_s * 1e9)),
    }
    bus = Bus(config.bus, {"tx/geo": ("rx",), "rx/geo": ("tx",)}, rng)

    if config.align_at_start:
        for name, node in nodes.items():
            pointing = geo.pointing_to(node.fix, nodes[node.peer_name].fix)
            node.servo = replace(
                node.servo, yaw=pointing.yaw_relative, pitch=pointing.elevation
            )

    heap: list = []
    seq = 0

    def push(t_ns: int, kind: str, data: tuple):
        nonlocal seq
        heapq.heappush(heap, (int(t_ns), seq, kind, data))
        seq += 1

    for name, node in nodes.items():
        log.append(0, name, "register", {"subscribes": [f"{node.peer_name}/geo"]})
        push(0, "control", (name,))
        if config.imu.report_period > 0:
            push(0, "imu_report", (name,))

    for fix in track:
        push(fix.fix_time, "rx_fix", (fix,))
    t_pub = 0
    while t_pub <= t_end_ns:
        push(t_pub, "tx_publish", ())
        t_pub += int(round(config.tx_publish_period_s * 1e9))

    msg_counter = 0

    def publish(node_name: str, t_ns: int):
        nonlocal msg_counter
        topic = f"{node_name}/geo"
        msg_id = f"m{msg_counter}"
        msg_counter += 1
        node = nodes[node_name]
        log.append(
            t_ns,
            node_name,
            "publish",
            {
                "topic": topic,
                "msg_id": msg_id,
                "stamp_ns": t_ns + offsets_ns[node_name],
                "lat_deg": node.fix.latitude,
                "lon_deg": node.fix.longitude,
                "alt_m": node.fix.altitude_ellipsoidal,
                "heading_deg": node.fix.heading,
            },
        )
        deliveries, drops = bus.publish(topic, msg_id, t_ns)
        for dropped_subscriber in drops:
            log.append(t_ns, dropped_subscriber, "drop", {"topic": topic, "msg_id": msg_id})
        for delivery in deliveries:
            push(delivery.deliver_t_ns, "deliver", (delivery, node.fix))

    control_period_ns = int(round(config.servo.control_period * 1e9))
    imu_period_ns = int(round(config.imu.report_period * 1e9))
    imu_latency_ns = int(round(config.imu.latency * 1e9))

    while heap:
        t_ns, _, kind, data = heapq.heappop(heap)
        if t_ns > t_end_ns:
            continue
        if kind == "rx_fix":
            (fix,) = data
            nodes["rx"].fix = fix
            publish("rx", t_ns)
        elif kind == "tx_publish":
            publish("tx", t_ns)
        elif kind == "deliver":
            delivery, fix = data
            node = nodes[delivery.subscriber]
            node.peer_fix = fix
            log.append(
                t_ns,
                delivery.subscriber,
                "deliver",
                {
                    "topic": delivery.topic,
                    "msg_id": delivery.msg_id,
                    "duplicate": delivery.duplicate,
                },
            )
        elif kind == "imu_report":
            (name,) = data
            node = nodes[name]
            node.advance(t_ns)
            noise = rng.normal(0.0, config.imu.angle_noise_sigma, size=2)
            measurement = (node.servo.yaw + float(noise[0]), node.servo.pitch + float(noise[1]))
            push(t_ns + imu_latency_ns, "imu_ready", (name, measurement))
            push(t_ns + imu_period_ns, "imu_report", (name,))
        elif kind == "imu_ready":
            name, measurement = data
            nodes[name].imu_yaw, nodes[name].imu_pitch = measurement
        elif kind == "control":
            (name,) = data
            node = nodes[name]
            node.advance(t_ns)
            error = _true_error_deg(node, nodes[node.peer_name])
            log.append(t_ns, name, "alignment", {"error_deg": error})
            measured_yaw = node.imu_yaw if node.imu_yaw is not None else node.servo.yaw
            measured_pitch = node.imu_pitch if node.imu_pitch is not None else node.servo.pitch
            if node.peer_fix is not None:
                pointing = geo.pointing_to(node.fix, node.peer_fix)
                target_yaw, target_pitch = pointing.yaw_relative, pointing.elevation
            else:
                target_yaw, target_pitch = measured_yaw, measured_pitch
            log.append(
                t_ns,
                name,
                "control",
                {
                    "measured_yaw_deg": measured_yaw,
                    "measured_pitch_deg": measured_pitch,
                    "target_yaw_deg": target_yaw,
                    "target_pitch_deg": target_pitch,
                },
            )
            rate_yaw = controller_step(measured_yaw, target_yaw, config.controller)
            rate_pitch = controller_step(measured_pitch, target_pitch, config.controller)
            node.servo = replace(
                node.servo, commanded_rate_yaw=rate_yaw, commanded_rate_pitch=rate_pitch
            )
            log.append(
                t_ns, name, "actuation", {"rate_yaw_dps": rate_yaw, "rate_pitch_dps": rate_pitch}
            )
            push(t_ns + control_period_ns, "control", (name,))
        else:  # pragma: no cover
            raise RuntimeError(f"unknown event kind {kind}")

    metrics = compute_metrics(log, settle_threshold_deg=config.controller.deadband)
    return log, metrics


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _percentile(values, q) -> float:
    return float(np.percentile(np.asarray(values, dtype=float), q))


def compute_metrics(log: EventLog, settle_threshold_deg: float = 0.5) -> Metrics:
    """Derive alignment and responsiveness metrics from an event log.

    An interaction is one published fix followed by its first delivery
    and the subscriber's next actuation; response time spans publish to
    that actuation. Dropped messages are excluded from interactions and
    counted separately. Settling time additionally waits for the first
    alignment sample at or below the threshold.
    """
    publish_times: dict[str, int] = {}
    first_delivery: dict[str, tuple[int, int, str]] = {}  # msg_id -> (index, t, node)
    drops = 0
    duplicates = 0
    alignment_errors: list[float] = []
    actuations: list[tuple[int, int, str]] = []  # (index, t, node)
    alignments: list[tuple[int, int, str, float]] = []

    for index, event in enumerate(log.events):
        kind = event["kind"]
        if kind == "publish":
            publish_times[event["payload"]["msg_id"]] = event["t_ns"]
        elif kind == "deliver":
            msg_id = event["payload"]["msg_id"]
            if msg_id not in publish_times:
                raise UnmatchedEvents(f"delivery of unknown message {msg_id}")
            if event["payload"].get("duplicate"):
                duplicates += 1
            elif msg_id not in first_delivery:
                first_delivery[msg_id] = (index, event["t_ns"], event["node"])
        elif kind == "drop":
            drops += 1
        elif kind == "actuation":
            actuations.append((index, event["t_ns"], event["node"]))
        elif kind == "alignment":
            error = float(event["payload"]["error_deg"])
            alignment_errors.append(error)
            alignments.append((index, event["t_ns"], event["node"], error))

    act_by_node: dict[str, tuple[list, list]] = {}
    for index, t, node in actuations:
        indices, times = act_by_node.setdefault(node, ([], []))
        indices.append(index)
        times.append(t)
    # per node: alignment indices plus, for each, the next settled sample time
    settle_by_node: dict[str, tuple[list, list]] = {}
    for node in {n for _, _, n, _ in alignments}:
        rows = [(i, t, e) for i, t, n, e in alignments if n == node]
        next_settled: list[int | None] = [None] * len(rows)
        upcoming = None
        for k in range(len(rows) - 1, -1, -1):
            if rows[k][2] <= settle_threshold_deg:
                upcoming = rows[k][1]
            next_settled[k] = upcoming
        settle_by_node[node] = ([i for i, _, _ in rows], next_settled)

    responses: list[float] = []
    settles: list[float] = []
    for msg_id, (deliver_index, _, node) in first_delivery.items():
        published = publish_times[msg_id]
        if node in act_by_node:
            indices, times = act_by_node[node]
            pos = bisect.bisect_right(indices, deliver_index)
            if pos < len(indices):
                responses.append((times[pos] - published) / 1e9)
        if node in settle_by_node:
            indices, next_settled = settle_by_node[node]
            pos = bisect.bisect_right(indices, deliver_index)
            if pos < len(indices) and next_settled[pos] is not None:
                settles.append((next_settled[pos] - published) / 1e9)

    return Metrics(
        interaction_count=len(responses),
        mean_response_time_s=float(np.mean(responses)) if responses else None,
        p95_response_time_s=_percentile(responses, 95) if responses else None,
        mean_alignment_error_deg=float(np.mean(alignment_errors)) if alignment_errors else None,
        p50_alignment_error_deg=_percentile(alignment_errors, 50) if alignment_errors else None,
        p95_alignment_error_deg=_percentile(alignment_errors, 95) if alignment_errors else None,
        p99_alignment_error_deg=_percentile(alignment_errors, 99) if alignment_errors else None,
        mean_settling_time_s=float(np.mean(settles)) if settles else None,
        dropped_messages=drops,
        duplicate_deliveries=duplicates,
        alignment_samples=len(alignment_errors),
    )
