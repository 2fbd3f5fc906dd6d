"""Security Manager: authenticates vehicles and maintains the local hyperledger.

One SM runs per security domain.  The cross-border handshake is:

1. ``handle_auth_request``: match the over-the-air fingerprint against the
   registered one.
2. ``record_crossing``: turn a legitimate vehicle's border crossing into a
   transaction whose identity materials are sealed for the destination SM.
3. ``package_and_publish`` / ``sync_ledger``: batch transactions into blocks
   through the broker; every SM replays the block topic into its own chain.
4. ``process_arrivals``: the destination SM opens the materials addressed to it
   and learns which vehicles are about to arrive.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .broker import BLOCKS, CROSSINGS, BatchTrigger, Broker, Record
from .errors import (
    AlreadyRegistered,
    AuthenticationFailure,
    DecodeError,
    IntegrityFailure,
    InvalidArgument,
    NotFound,
    Refused,
    SyncHalted,
)
from .identity import (
    DEFAULT_THRESHOLD,
    Fingerprint,
    KeyPair,
    Pseudonym,
    PseudonymIssuer,
    PublicKey,
    match_fingerprint,
    open_sealed,
    seal,
)
from .ledger import (
    BLOCK_VERSION,
    Block,
    Chain,
    Transaction,
    _field,
    _Reader,
    build_block,
    decode_block,
    decode_transaction,
    encode_block,
    encode_transaction,
    verify_block,
)

log = logging.getLogger(__name__)

PLAIN_BEACON_BITS = 80
HASHCHAIN_BEACON_BITS = 720
DEFAULT_PROCESSING_MS = 11.0


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, p) -> bool:
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1

    def distance(self, p) -> float:
        dx = max(self.x0 - p[0], 0.0, p[0] - self.x1)
        dy = max(self.y0 - p[1], 0.0, p[1] - self.y1)
        return math.hypot(dx, dy)

    @property
    def center(self):
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2)


@dataclass(frozen=True)
class Beacon:
    fingerprint: Fingerprint  # claimed R_v
    speed: float  # m/s
    heading: float  # degrees, 0 = +x, counter-clockwise
    position: tuple[float, float]
    auth_request: bool = False
    size_bits: int = PLAIN_BEACON_BITS


@dataclass(frozen=True)
class Registration:
    vehicle_id: str
    fingerprint: Fingerprint


@dataclass(frozen=True)
class AuthResult:
    legitimate: bool
    similarity: float
    elapsed: float  # ms
    vehicle_id: str | None = None

    @property
    def decision(self) -> str:
        return "legitimate" if self.legitimate else "illegal"


@dataclass(frozen=True)
class ExpectedArrival:
    pseudonym: Pseudonym
    vehicle_id: str
    fingerprint: Fingerprint


@dataclass(frozen=True)
class Peer:
    name: str
    identity: Fingerprint
    public: PublicKey
    domain: Rect | None = None


def encode_materials(pseudonym: Pseudonym, vehicle_id: str, fingerprint: Fingerprint) -> bytes:
    return (
        _field(pseudonym.value)
        + _field(pseudonym.epoch.to_bytes(8, "big"))
        + _field(vehicle_id.encode())
        + _field(bytes(s + 1 for s in fingerprint.symbols))
    )


def decode_materials(data: bytes) -> ExpectedArrival:
    r = _Reader(data, "identity materials")
    value, epoch = r.field(), r.u64()
    vehicle_id = r.field().decode()
    fp = r.fingerprint()
    r.finish()
    return ExpectedArrival(Pseudonym(value, epoch), vehicle_id, fp)


def heading_vector(degrees: float):
    rad = math.radians(degrees)
    return math.cos(rad), math.sin(rad)


def is_crossing(beacon: Beacon, dest: Rect, strip_m: float) -> bool:
    """True when the beacon sits within ``strip_m`` of ``dest`` and points into it."""
    if dest.distance(beacon.position) > strip_m + 1e-6:
        return False
    hx, hy = heading_vector(beacon.heading)
    # nearest point of the destination rectangle
    nx = min(max(beacon.position[0], dest.x0), dest.x1)
    ny = min(max(beacon.position[1], dest.y0), dest.y1)
    tx, ty = nx - beacon.position[0], ny - beacon.position[1]
    if tx == 0 and ty == 0:
        cx, cy = dest.center
        tx, ty = cx - beacon.position[0], cy - beacon.position[1]
    return hx * tx + hy * ty > 1e-9


@dataclass
class SecurityManager:
    name: str
    identity: Fingerprint
    keys: KeyPair
    broker: Broker
    domain: Rect | None = None
    threshold: float = DEFAULT_THRESHOLD
    processing_ms: float = DEFAULT_PROCESSING_MS
    strip_m: float = 50.0
    rng: random.Random = field(default_factory=random.Random)

    peers: dict[str, Peer] = field(default_factory=dict)
    registered: dict[str, Registration] = field(default_factory=dict)
    authenticated: dict[str, AuthResult] = field(default_factory=dict)
    pending: list[Transaction] = field(default_factory=list)
    chain: Chain = field(default_factory=Chain)
    blocks_offset: int = 0
    expected: dict[str, ExpectedArrival] = field(default_factory=dict)
    flagged: list[tuple[int, int, str]] = field(default_factory=list)
    issuer: PseudonymIssuer = field(default_factory=PseudonymIssuer)
    built: list[Block] = field(default_factory=list)
    _processed_blocks: int = 0
    _epochs: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.keys.secret.owner != self.name:
            raise InvalidArgument(f"key pair belongs to {self.keys.secret.owner!r}, not {self.name!r}")
        if not self.broker.has_topic(BLOCKS):
            self.broker.create_topic(BLOCKS)

    # -- setup -----------------------------------------------------------------

    @property
    def crossings_topic(self) -> str:
        return f"{CROSSINGS}.{self.name}"

    def attach(self, trigger: BatchTrigger) -> None:
        """Create this SM's crossings topic with ``trigger`` feeding the block builder."""
        if self.broker.has_topic(self.crossings_topic):
            self.broker.set_trigger(self.crossings_topic, trigger, self._on_batch)
        else:
            self.broker.create_topic(self.crossings_topic, trigger, self._on_batch)

    def add_peer(self, peer: Peer) -> None:
        self.peers[peer.identity.to_text()] = peer

    def register_vehicle(self, vehicle_id: str, fingerprint: Fingerprint) -> None:
        key = fingerprint.to_text()
        if key in self.registered or any(r.vehicle_id == vehicle_id for r in self.registered.values()):
            raise AlreadyRegistered(vehicle_id)
        self.registered[key] = Registration(vehicle_id, fingerprint)

    def _fingerprint_of(self, vehicle_id: str) -> Fingerprint | None:
        for r in self.registered.values():
            if r.vehicle_id == vehicle_id:
                return r.fingerprint
        for a in self.expected.values():
            if a.vehicle_id == vehicle_id:
                return a.fingerprint
        return None

    # -- step 1 ------------------------------------------------------------------

    def handle_auth_request(self, beacon: Beacon, observed: Fingerprint, now: int) -> AuthResult:
        if not beacon.auth_request:
            raise InvalidArgument("beacon carries no authentication request")
        key = beacon.fingerprint.to_text()
        reg = self.registered.get(key)
        if reg is None and key in self.expected:
            arrival = self.expected[key]
            reg = Registration(arrival.vehicle_id, arrival.fingerprint)
        if reg is None or len(reg.fingerprint) != len(observed):
            return AuthResult(False, 0.0, self.processing_ms)
        m = match_fingerprint(reg.fingerprint, observed, self.threshold)
        result = AuthResult(m.accepted, m.similarity, self.processing_ms, reg.vehicle_id)
        if m.accepted:
            self.authenticated[reg.vehicle_id] = result
        return result

    # -- step 2 ------------------------------------------------------------------

    def record_crossing(
        self,
        vehicle_id: str,
        beacons: Sequence[Beacon],
        dest_sm: Fingerprint,
        now: int,
        rng: random.Random | None = None,
    ) -> Transaction:
        if vehicle_id not in self.authenticated:
            raise Refused(f"vehicle {vehicle_id!r} has not authenticated at {self.name}")
        peer = self.peers.get(dest_sm.to_text())
        if peer is None:
            raise NotFound(f"no peer SM with identity {dest_sm.to_text()[:16]}...")
        if not beacons:
            raise Refused("no beacons to establish a crossing")
        if peer.domain is not None and not is_crossing(beacons[-1], peer.domain, self.strip_m):
            raise Refused(f"beacons of {vehicle_id!r} do not show a crossing into {peer.name}")
        rng = rng or self.rng
        fingerprint = self._fingerprint_of(vehicle_id) or beacons[-1].fingerprint
        epoch = self._epochs.get(vehicle_id, 0) + 1
        self._epochs[vehicle_id] = epoch
        pseudonym = self.issuer.issue(vehicle_id, epoch, rng)
        sealed = seal(encode_materials(pseudonym, vehicle_id, fingerprint), peer.name, peer.public, rng)
        tx = Transaction(self.identity, len(self.pending), dest_sm, sealed, now)
        self.submit(tx, now)
        return tx

    def submit(self, tx: Transaction, now: int) -> int:
        """Queue a transaction locally and publish it to this SM's crossings topic."""
        self.pending.append(tx)
        if not self.broker.has_topic(self.crossings_topic):
            raise NotFound(f"{self.name} is not attached to a crossings topic")
        return self.broker.publish(self.crossings_topic, encode_transaction(tx), now)

    # -- step 3 ------------------------------------------------------------------

    def package_and_publish(self, now: int, rng: random.Random | None = None) -> Block | None:
        """Flush the crossings topic if its trigger fires; return the block built, if any."""
        if rng is not None:
            self.rng = rng
        before = len(self.built)
        self.broker.check_flush(self.crossings_topic, now)
        return self.built[-1] if len(self.built) > before else None

    def _on_batch(self, batch: list[Record], now: int) -> None:
        txs = [decode_transaction(r.payload) for r in batch]
        for tx in txs:
            self.pending.remove(tx)
        self.sync_ledger()
        block = build_block(BLOCK_VERSION, self.chain.tip_hash, self.identity, now, list(txs), len(txs), self.rng)
        self.broker.publish(BLOCKS, encode_block(block), now)
        self.built.append(block)
        self.sync_ledger()

    def sync_ledger(self) -> int:
        """Replay new records of the blocks topic into the local chain.

        Returns the number of blocks appended.  A block that fails to decode or
        verify stops the replay with :class:`SyncHalted`; it is never appended
        and the read position stays on it.
        """
        appended = 0
        for rec in self.broker.poll(self.name, BLOCKS, self.blocks_offset):
            try:
                block = decode_block(rec.payload)
            except (DecodeError, InvalidArgument) as exc:
                raise SyncHalted(rec.offset, f"malformed: {exc}") from None
            verdict = verify_block(block, self.chain.tip_hash)
            if not verdict:
                log.warning("%s: rejecting block at offset %d (%s)", self.name, rec.offset, verdict.reason)
                raise SyncHalted(rec.offset, verdict.reason)
            self.chain.blocks.append(block)
            self.blocks_offset = rec.offset + 1
            appended += 1
        return appended

    # -- step 4 ------------------------------------------------------------------

    def process_arrivals(self) -> set[str]:
        """Open materials addressed to this SM in blocks not yet processed.

        Returns the vehicle ids of every expected arrival known so far.
        """
        me = self.identity
        for index in range(self._processed_blocks, len(self.chain.blocks)):
            for tx in self.chain.blocks[index].transactions:
                if tx.dest_sm != me:
                    continue
                try:
                    arrival = decode_materials(open_sealed(tx.sealed, self.keys.secret))
                except (IntegrityFailure, AuthenticationFailure, DecodeError, UnicodeDecodeError) as exc:
                    self.flagged.append((index, tx.tx_number, type(exc).__name__))
                    continue
                self.expected[arrival.fingerprint.to_text()] = arrival
        self._processed_blocks = len(self.chain.blocks)
        return {a.vehicle_id for a in self.expected.values()}

    def expects(self, vehicle_id: str) -> bool:
        return any(a.vehicle_id == vehicle_id for a in self.expected.values())
