"""Discrete-event simulation of cross-border authentication in two security domains.

The area is split into SD-A (west half) and SD-B (east half), each run by one
SM hovering over its centre.  Vehicles leave four spawn vertices in SD-A,
drive east at a constant speed and cross into SD-B.

Per vehicle, both schemes share the same channel draws and fingerprint reading:

* baseline: one 80-bit authentication beacon, fingerprint check, and a round
  trip to the certificate authorities.
* hashchain: one 720-bit authentication beacon and fingerprint check at SD-A,
  then, once the vehicle reaches the boundary strip, the full ledger path:
  transaction published, batch wait, block build, replication to SM-B and
  opening of the sealed materials there.

The reported delay is the protocol latency; driving time between joining and
reaching the border is not counted.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field

from ..broker import BatchTrigger, Broker
from ..identity import KeyPair, new_fingerprint, observe_fingerprint
from ..ledger import dhash, encode_transaction
from ..sm import Beacon, Peer, Rect, SecurityManager
from .config import ScenarioConfig
from .delay import contention_ms, propagation_ms, tx_delay

log = logging.getLogger(__name__)

HASHCHAIN = "hashchain"
BASELINE = "baseline"
SCHEMES = (HASHCHAIN, BASELINE)


def speed_kmh(speed_mps: float) -> int:
    return int(round(speed_mps * 3.6))


@dataclass
class Vehicle:
    vid: str
    fingerprint: object
    start: tuple[float, float]
    speed: float
    spawn_ms: float
    boundary_ms: float  # reaches the SD boundary
    strip_ms: float  # enters the boundary strip
    state: str = "spawned"


@dataclass
class SchemeStats:
    delays: list[float] = field(default_factory=list)
    step1: list[float] = field(default_factory=list)
    ledger: list[float] = field(default_factory=list)
    batch_wait: list[float] = field(default_factory=list)
    density_at_auth: list[float] = field(default_factory=list)
    dropped: int = 0
    in_flight: int = 0

    @property
    def samples(self) -> int:
        return len(self.delays)

    @property
    def mean(self) -> float:
        return sum(self.delays) / len(self.delays) if self.delays else float("nan")


@dataclass
class CellResult:
    speed_mps: float
    density: int
    spawned: int
    stats: dict[str, SchemeStats]
    blocks: int = 0
    arrivals_accepted: int = 0
    chain_bytes: bytes = b""
    broker: Broker | None = None


def _stream(config: ScenarioConfig, speed: float, density: int, tag: str) -> random.Random:
    return random.Random(f"{config.seed}/{speed!r}/{density}/{tag}")


class CellSimulation:
    """One (speed, density) cell: builds the world, runs the event loop, collects stats."""

    def __init__(self, config: ScenarioConfig, speed: float, density: int):
        self.cfg = config
        self.speed = speed
        self.density = density
        self.mobility_rng = _stream(config, speed, density, "mobility")
        self.channel_rng = _stream(config, speed, density, "channel")
        self.radio_rng = _stream(config, speed, density, "radio")
        self.arrival_rng = _stream(config, speed, density, "arrival-radio")
        self.crypto_rng = _stream(config, speed, density, "crypto")
        self.block_rng = _stream(config, speed, density, "blocks")

        self._queue: list = []
        self._seq = itertools.count()
        self.now = 0.0
        self.duration_ms = config.sim_duration_s * 1000.0

        half = config.area_m / 2
        self.boundary_x = half
        self.domain_a = Rect(0.0, 0.0, half, config.area_m)
        self.domain_b = Rect(half, 0.0, config.area_m, config.area_m)

        self.broker = Broker()
        id_rng = _stream(config, 0.0, 0, "sm-identity")
        self.sm_a = self._make_sm("SM-A", self.domain_a, id_rng)
        self.sm_b = self._make_sm("SM-B", self.domain_b, id_rng)
        for sm, other in ((self.sm_a, self.sm_b), (self.sm_b, self.sm_a)):
            sm.add_peer(Peer(other.name, other.identity, other.keys.public, other.domain))
            sm.attach(BatchTrigger(max_count=config.batch_n, max_interval=config.batch_interval_ms))

        self.stats = {s: SchemeStats() for s in SCHEMES}
        self.vehicles = self._spawn_vehicles()
        self.step1_hashchain: dict[str, float] = {}
        self.cross_at: dict[str, float] = {}
        self.tx_owner: dict[bytes, str] = {}
        self.flush_at: dict[str, float] = {}
        self.block_ready: dict[bytes, float] = {}
        self._timers: set[int] = set()
        self.arrivals_accepted = 0

    # -- world -------------------------------------------------------------------

    def _make_sm(self, name, domain, id_rng) -> SecurityManager:
        cfg = self.cfg
        return SecurityManager(
            name=name,
            identity=new_fingerprint(cfg.fingerprint_length, id_rng),
            keys=KeyPair.generate(name, id_rng),
            broker=self.broker,
            domain=domain,
            threshold=cfg.threshold,
            processing_ms=cfg.fingerprint_processing_ms,
            strip_m=cfg.strip_m,
            rng=self.block_rng,
        )

    def _spawn_vehicles(self) -> list[Vehicle]:
        cfg, rng = self.cfg, self.mobility_rng
        window = cfg.spawn_window_s * 1000.0
        out = []
        for i in range(self.density):
            start = cfg.spawn_vertices[i % len(cfg.spawn_vertices)]
            spawn = window * (i + rng.random()) / self.density
            fp = new_fingerprint(cfg.fingerprint_length, self.radio_rng)
            to_boundary = (self.boundary_x - start[0]) / self.speed * 1000.0
            to_strip = (self.boundary_x - cfg.strip_m - start[0]) / self.speed * 1000.0
            v = Vehicle(f"v{i:03d}", fp, start, self.speed, spawn, spawn + to_boundary, spawn + to_strip)
            # one-time CA registration, loaded before the run
            self.sm_a.register_vehicle(v.vid, fp)
            out.append(v)
        return out

    def local_density(self, t: float) -> int:
        """Vehicles inside SD-A at time ``t``."""
        return sum(1 for v in self.vehicles if v.spawn_ms <= t < v.boundary_ms)

    def position(self, v: Vehicle, t: float):
        return (v.start[0] + v.speed * (t - v.spawn_ms) / 1000.0, v.start[1])

    def _access(self, bits: int, t: float, slots: int, pos) -> float:
        cfg = self.cfg
        sm_pos = self.domain_a.center
        dist = ((pos[0] - sm_pos[0]) ** 2 + (pos[1] - sm_pos[1]) ** 2) ** 0.5
        cont = contention_ms(
            self.local_density(t),
            aifs_ms=cfg.aifs_ms,
            backoff_slots=slots,
            slot_ms=cfg.slot_ms,
            per_vehicle_ms=cfg.contention_ms_per_vehicle,
        )
        return tx_delay(bits, cfg.data_rate_bps, cont, propagation_ms(dist, cfg.propagation_mps))

    # -- event loop --------------------------------------------------------------

    def schedule(self, t: float, kind: str, *args) -> None:
        heapq.heappush(self._queue, (t, next(self._seq), kind, args))

    def run(self) -> CellResult:
        for v in self.vehicles:
            self.schedule(v.spawn_ms + self.cfg.auth_lead_ms, "auth", v)
        while self._queue:
            t, _, kind, args = heapq.heappop(self._queue)
            if t > self.duration_ms:
                break
            self.now = t
            getattr(self, f"_on_{kind}")(*args)

        hc = self.stats[HASHCHAIN]
        bl = self.stats[BASELINE]
        for st in (hc, bl):
            st.in_flight = len(self.vehicles) - st.samples - st.dropped
        return CellResult(
            self.speed,
            self.density,
            len(self.vehicles),
            self.stats,
            blocks=len(self.sm_a.chain),
            arrivals_accepted=self.arrivals_accepted,
            chain_bytes=self.sm_b.chain.to_bytes(),
            broker=self.broker,
        )

    def _on_auth(self, v: Vehicle) -> None:
        cfg = self.cfg
        t_req = self.now
        first_slots = self.channel_rng.randint(0, cfg.cw_min)
        req_slots = self.channel_rng.randint(0, cfg.cw_min)
        observed = observe_fingerprint(v.fingerprint, cfg.flip_prob, self.radio_rng)
        density = self.local_density(t_req)

        step1 = {}
        for scheme, bits in ((HASHCHAIN, cfg.hashchain_beacon_bits), (BASELINE, cfg.plain_beacon_bits)):
            # fingerprint capture starts on the first beacon heard and runs alongside the approach
            first = self._access(bits, v.spawn_ms, first_slots, v.start)
            fp_ready = v.spawn_ms + first + cfg.fingerprint_processing_ms
            heard = t_req + self._access(bits, t_req, req_slots, self.position(v, t_req))
            step1[scheme] = max(heard, fp_ready) - t_req

        beacon = Beacon(v.fingerprint, v.speed, 0.0, self.position(v, t_req), True, cfg.hashchain_beacon_bits)
        result = self.sm_a.handle_auth_request(beacon, observed, int(t_req))
        if not result.legitimate:
            v.state = "dropped"
            for st in self.stats.values():
                st.dropped += 1
            return
        v.state = "authenticated"

        base = self.stats[BASELINE]
        done = step1[BASELINE] + cfg.ca_rtt_ms
        if t_req + done <= self.duration_ms:
            base.delays.append(done)
            base.step1.append(step1[BASELINE])
            base.density_at_auth.append(density)

        self.step1_hashchain[v.vid] = step1[HASHCHAIN]
        self.stats[HASHCHAIN].density_at_auth.append(density)
        self.schedule(v.strip_ms, "cross", v)
        self.schedule(v.boundary_ms, "arrive", v)

    def _on_cross(self, v: Vehicle) -> None:
        pos = self.position(v, self.now)
        beacon = Beacon(v.fingerprint, v.speed, 0.0, pos, False, self.cfg.hashchain_beacon_bits)
        tx = self.sm_a.record_crossing(v.vid, [beacon], self.sm_b.identity, int(self.now), self.crypto_rng)
        v.state = "crossing"
        self.tx_owner[dhash(encode_transaction(tx))] = v.vid
        self.cross_at[v.vid] = self.now
        self._try_flush()

    def _on_flush_timer(self) -> None:
        self._try_flush()

    def _try_flush(self) -> None:
        while True:
            block = self.sm_a.package_and_publish(int(self.now))
            if block is None:
                break
            digest = block.header.digest()
            ready = self.now + self.cfg.block_build_ms + self.cfg.sync_ms
            self.block_ready[digest] = ready
            for tx in block.transactions:
                self.flush_at[self.tx_owner[dhash(encode_transaction(tx))]] = self.now
            self.schedule(ready, "sync", digest)
        buffered = self.broker.topic(self.sm_a.crossings_topic).buffer
        if buffered:
            # the broker sees whole-ms timestamps; firing at the exact crossing
            # time + interval gives floor(now) - floor(t0) == interval
            oldest_vid = self.tx_owner[dhash(buffered[0].payload)]
            due = self.cross_at[oldest_vid] + self.cfg.batch_interval_ms
            if buffered[0].offset not in self._timers:
                self._timers.add(buffered[0].offset)
                self.schedule(max(due, self.now), "flush_timer")

    def _on_sync(self, digest: bytes) -> None:
        self.sm_b.sync_ledger()
        self.sm_b.process_arrivals()
        block = next(b for b in self.sm_b.chain.blocks if b.header.digest() == digest)
        hc = self.stats[HASHCHAIN]
        ready = self.now + self.cfg.open_ms
        if ready > self.duration_ms:
            return
        for tx in block.transactions:
            vid = self.tx_owner[dhash(encode_transaction(tx))]
            if not self.sm_b.expects(vid):
                continue
            ledger = ready - self.cross_at[vid]
            hc.delays.append(self.step1_hashchain[vid] + ledger)
            hc.step1.append(self.step1_hashchain[vid])
            hc.ledger.append(ledger)
            hc.batch_wait.append(self.flush_at[vid] - self.cross_at[vid])

    def _on_arrive(self, v: Vehicle) -> None:
        # SM-B authenticates from the replicated materials, no CA involved
        if not self.sm_b.expects(v.vid):
            return
        observed = observe_fingerprint(v.fingerprint, self.cfg.flip_prob, self.arrival_rng)
        beacon = Beacon(v.fingerprint, v.speed, 0.0, self.position(v, self.now), True, self.cfg.hashchain_beacon_bits)
        if self.sm_b.handle_auth_request(beacon, observed, int(self.now)).legitimate:
            self.arrivals_accepted += 1
            v.state = "arrived"


def simulate_cell(config: ScenarioConfig, speed: float, density: int) -> CellResult:
    return CellSimulation(config, speed, density).run()
