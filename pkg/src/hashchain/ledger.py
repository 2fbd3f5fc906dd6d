"""Transactions, blocks and the local hyperledger.

Every structure has one canonical byte encoding: fields in table order, each
field framed by a 4-byte big-endian length.  Integers are 8-byte big-endian and
fingerprints are one byte per symbol (0x00 = -1, 0x01 = 0, 0x02 = +1).  The
same bytes are hashed, stored on disk and carried through the broker.

Hash primitive: ``dhash(x) = SHA-256(SHA-256(x))``.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import BlockRejected, DecodeError, InsufficientTransactions, InvalidArgument
from .identity import Fingerprint, SealedMaterials

ZERO_HASH = bytes(32)
BLOCK_VERSION = 1

_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def dhash(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


# --- framing ------------------------------------------------------------------

def _field(data: bytes) -> bytes:
    return _LEN.pack(len(data)) + data


def _u64(value: int) -> bytes:
    if value < 0:
        raise InvalidArgument(f"unsigned field got {value}")
    return _U64.pack(value)


def _fp(fp: Fingerprint) -> bytes:
    return bytes(s + 1 for s in fp.symbols)


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def field(self) -> bytes:
        if self.pos + 4 > len(self.data):
            raise DecodeError(f"{self.what}: truncated length prefix at byte {self.pos}")
        (n,) = _LEN.unpack_from(self.data, self.pos)
        start = self.pos + 4
        if start + n > len(self.data):
            raise DecodeError(f"{self.what}: field of {n} bytes overruns buffer at byte {start}")
        self.pos = start + n
        return bytes(self.data[start:self.pos])

    def u64(self) -> int:
        raw = self.field()
        if len(raw) != 8:
            raise DecodeError(f"{self.what}: integer field has {len(raw)} bytes")
        return _U64.unpack(raw)[0]

    def digest(self) -> bytes:
        raw = self.field()
        if len(raw) != 32:
            raise DecodeError(f"{self.what}: digest field has {len(raw)} bytes")
        return raw

    def fingerprint(self) -> Fingerprint:
        raw = self.field()
        if not raw or any(b > 2 for b in raw):
            raise DecodeError(f"{self.what}: bad fingerprint bytes")
        return Fingerprint(tuple(b - 1 for b in raw))

    def items(self) -> list[bytes]:
        inner = _Reader(self.field(), self.what)
        out = []
        while not inner.done():
            out.append(inner.field())
        return out

    def done(self) -> bool:
        return self.pos == len(self.data)

    def finish(self):
        if not self.done():
            raise DecodeError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


# --- types --------------------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    source_sm: Fingerprint
    tx_number: int
    dest_sm: Fingerprint
    sealed: SealedMaterials
    timestamp: int  # ms since epoch, from the caller's clock


@dataclass(frozen=True)
class BlockHeader:
    version: int
    prev_hash: bytes
    source_sm: Fingerprint
    timestamp: int
    root: bytes

    def digest(self) -> bytes:
        return dhash(encode_header(self))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    permutation: tuple[int, ...]
    transactions: tuple[Transaction, ...]

    def encode(self) -> bytes:
        return encode_block(self)


def encode_sealed(sealed: SealedMaterials) -> bytes:
    return _field(sealed.recipient.encode()) + _field(sealed.payload) + _field(sealed.tag)


def decode_sealed(data: bytes) -> SealedMaterials:
    r = _Reader(data, "sealed materials")
    try:
        recipient = r.field().decode()
    except UnicodeDecodeError:
        raise DecodeError("sealed materials: recipient is not UTF-8") from None
    payload, tag = r.field(), r.field()
    r.finish()
    return SealedMaterials(recipient, payload, tag)


def encode_transaction(tx: Transaction) -> bytes:
    return (
        _field(_fp(tx.source_sm))
        + _field(_u64(tx.tx_number))
        + _field(_fp(tx.dest_sm))
        + _field(encode_sealed(tx.sealed))
        + _field(_u64(tx.timestamp))
    )


def decode_transaction(data: bytes) -> Transaction:
    r = _Reader(data, "transaction")
    tx = Transaction(
        source_sm=r.fingerprint(),
        tx_number=r.u64(),
        dest_sm=r.fingerprint(),
        sealed=decode_sealed(r.field()),
        timestamp=r.u64(),
    )
    r.finish()
    return tx


def encode_header(h: BlockHeader) -> bytes:
    # Hashed-header field order: version, previous hash, root, timestamp, creator
    return (
        _field(_u64(h.version))
        + _field(h.prev_hash)
        + _field(h.root)
        + _field(_u64(h.timestamp))
        + _field(_fp(h.source_sm))
    )


def decode_header(data: bytes) -> BlockHeader:
    r = _Reader(data, "block header")
    version = r.u64()
    prev_hash = r.digest()
    root = r.digest()
    timestamp = r.u64()
    source_sm = r.fingerprint()
    r.finish()
    return BlockHeader(version, prev_hash, source_sm, timestamp, root)


def encode_block(block: Block) -> bytes:
    perm = b"".join(_field(_u64(i)) for i in block.permutation)
    txs = b"".join(_field(encode_transaction(tx)) for tx in block.transactions)
    return _field(encode_header(block.header)) + _field(perm) + _field(txs)


def decode_block(data: bytes) -> Block:
    r = _Reader(data, "block")
    header = decode_header(r.field())
    perm = []
    for raw in r.items():
        if len(raw) != 8:
            raise DecodeError("block: permutation entry is not 8 bytes")
        perm.append(_U64.unpack(raw)[0])
    txs = tuple(decode_transaction(raw) for raw in r.items())
    r.finish()
    return Block(header, tuple(perm), txs)


def canonical_encode(value: Transaction | BlockHeader | Block) -> bytes:
    if isinstance(value, Transaction):
        return encode_transaction(value)
    if isinstance(value, BlockHeader):
        return encode_header(value)
    if isinstance(value, Block):
        return encode_block(value)
    raise InvalidArgument(f"cannot encode {type(value).__name__}")


# --- root and blocks ------------------------------------------------------------

def _check_permutation(perm: Sequence[int], n: int) -> bool:
    return len(perm) == n and sorted(perm) == list(range(n))


def chained_root(txs: Sequence[Transaction], permutation: Sequence[int]) -> bytes:
    """Fold the batch into one digest, visiting transactions in ``permutation`` order.

    The first visited transaction seeds the running digest as
    ``dhash(enc(tx))``; every later one updates it to
    ``dhash(enc(tx) || running)``.
    """
    if not txs:
        raise InvalidArgument("chained_root needs at least one transaction")
    if not _check_permutation(permutation, len(txs)):
        raise InvalidArgument(f"{list(permutation)} is not a permutation of 0..{len(txs) - 1}")
    result = dhash(encode_transaction(txs[permutation[0]]))
    for j in permutation[1:]:
        result = dhash(encode_transaction(txs[j]) + result)
    return result


def build_block(
    version: int,
    prev_hash: bytes,
    source_sm: Fingerprint,
    now: int,
    pool: list[Transaction],
    n: int,
    rng: random.Random,
) -> Block:
    """Draw ``n`` transactions at random from ``pool`` and seal them into a block.

    The drawn transactions are removed from ``pool`` in place.  They are stored
    sorted by transaction number; the random draw order, expressed as indices
    into that stored order, is kept as the block's permutation.
    """
    if n < 1:
        raise InvalidArgument("block size must be >= 1")
    if len(pool) < n:
        raise InsufficientTransactions(f"pool holds {len(pool)} transactions, block needs {n}")
    if len(prev_hash) != 32:
        raise InvalidArgument("prev_hash must be 32 bytes")

    picks = rng.sample(range(len(pool)), n)
    drawn = [pool[i] for i in picks]
    for i in sorted(picks, reverse=True):
        del pool[i]

    stored_order = sorted(range(n), key=lambda k: (drawn[k].tx_number, k))
    position = {k: pos for pos, k in enumerate(stored_order)}
    transactions = tuple(drawn[k] for k in stored_order)
    permutation = tuple(position[k] for k in range(n))

    root = chained_root(transactions, permutation)
    header = BlockHeader(version, prev_hash, source_sm, now, root)
    return Block(header, permutation, transactions)


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str | None = None
    index: int | None = None

    def __bool__(self) -> bool:
        return self.valid


VALID = Verdict(True)


def verify_block(block: Block, expected_prev: bytes) -> Verdict:
    if block.header.prev_hash != expected_prev:
        return Verdict(False, "linkage")
    if not block.transactions or not _check_permutation(block.permutation, len(block.transactions)):
        return Verdict(False, "bad-permutation")
    if chained_root(block.transactions, block.permutation) != block.header.root:
        return Verdict(False, "root-mismatch")
    return VALID


def verify_block_bytes(data: bytes, expected_prev: bytes) -> Verdict:
    """verify_block over raw encoded bytes; undecodable input is invalid, not an error."""
    try:
        block = decode_block(data)
    except (DecodeError, InvalidArgument) as exc:
        return Verdict(False, f"malformed: {exc}")
    return verify_block(block, expected_prev)


# --- chain --------------------------------------------------------------------

@dataclass
class Chain:
    blocks: list[Block] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].header.digest() if self.blocks else ZERO_HASH

    def append(self, block: Block) -> "Chain":
        verdict = verify_block(block, self.tip_hash)
        if not verdict:
            raise BlockRejected(verdict.reason)
        self.blocks.append(block)
        return self

    def validate(self) -> Verdict:
        prev = ZERO_HASH
        for i, block in enumerate(self.blocks):
            verdict = verify_block(block, prev)
            if not verdict:
                return Verdict(False, verdict.reason, i)
            prev = block.header.digest()
        return VALID

    def to_bytes(self) -> bytes:
        return b"".join(_field(encode_block(b)) for b in self.blocks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Chain":
        """Parse the persistence format without validating linkage or roots."""
        r = _Reader(data, "chain file")
        blocks = []
        while not r.done():
            blocks.append(decode_block(r.field()))
        return cls(blocks)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Chain":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def transactions(self) -> Iterable[Transaction]:
        for block in self.blocks:
            yield from block.transactions


def append_block(chain: Chain, block: Block) -> Chain:
    """Append ``block`` if it verifies against the tip; otherwise raise and leave ``chain`` untouched."""
    return chain.append(block)


def validate_chain(chain: Chain) -> Verdict:
    return chain.validate()


def dump_chain(chain: Chain) -> str:
    lines = []
    prev = ZERO_HASH
    for i, b in enumerate(chain.blocks):
        h = b.header
        lines.append(f"block {i}")
        lines.append(f"  hash      {h.digest().hex()}")
        lines.append(f"  version   {h.version}")
        lines.append(f"  prev      {h.prev_hash.hex()}")
        lines.append(f"  root      {h.root.hex()}")
        lines.append(f"  timestamp {h.timestamp}")
        lines.append(f"  creator   {h.source_sm.to_text()}")
        lines.append(f"  perm      {' '.join(map(str, b.permutation))}")
        lines.append(f"  status    {'ok' if verify_block(b, prev) else 'INVALID'}")
        for tx in b.transactions:
            lines.append(
                f"  tx {tx.tx_number} t={tx.timestamp} to={tx.sealed.recipient} "
                f"digest={dhash(encode_transaction(tx)).hex()}"
            )
        prev = h.digest()
    return "\n".join(lines) + ("\n" if lines else "")
