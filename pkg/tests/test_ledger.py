import itertools
import random
import re

import pytest
from cryptography.hazmat.primitives import hashes
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_pool, make_tx
from hashchain.errors import BlockRejected, InsufficientTransactions, InvalidArgument
from hashchain.identity import Fingerprint, SealedMaterials
from hashchain.ledger import (
    ZERO_HASH,
    Block,
    BlockHeader,
    Chain,
    Transaction,
    append_block,
    build_block,
    canonical_encode,
    chained_root,
    decode_block,
    decode_header,
    decode_transaction,
    dhash,
    dump_chain,
    encode_block,
    encode_transaction,
    validate_chain,
    verify_block,
    verify_block_bytes,
)


def sha256_twice(data: bytes) -> bytes:
    """Reference double hash built on a different library than the code under test."""
    for _ in range(2):
        h = hashes.Hash(hashes.SHA256())
        h.update(data)
        data = h.finalize()
    return data


def test_dhash_empty_matches_reference():
    assert dhash(b"") == sha256_twice(b"")
    assert dhash(b"").hex() == "5df6e0e2761359d30a8275058e299fcc0381534545f55cf43e41983f5d4c9456"


def test_dhash_differs_from_single_hash(rng):
    for _ in range(50):
        x = rng.randbytes(rng.randint(0, 100))
        h = hashes.Hash(hashes.SHA256())
        h.update(x)
        assert dhash(x) != h.finalize()
        assert dhash(x) == sha256_twice(x)


def test_dhash_deterministic():
    assert dhash(b"abc") == dhash(b"abc")


def test_encoding_layout_by_hand():
    sealed = SealedMaterials("B", b"\x01\x02", b"\xff")
    tx = Transaction(Fingerprint((1, -1)), 3, Fingerprint((0,)), sealed, 258)
    expected = (
        b"\x00\x00\x00\x02" + b"\x02\x00"
        + b"\x00\x00\x00\x08" + (3).to_bytes(8, "big")
        + b"\x00\x00\x00\x01" + b"\x01"
        + b"\x00\x00\x00\x10" + b"\x00\x00\x00\x01B" + b"\x00\x00\x00\x02\x01\x02" + b"\x00\x00\x00\x01\xff"
        + b"\x00\x00\x00\x08" + (258).to_bytes(8, "big")
    )
    assert encode_transaction(tx) == expected


def test_header_field_order():
    h = BlockHeader(2, b"\x11" * 32, Fingerprint((1,)), 7, b"\x22" * 32)
    enc = canonical_encode(h)
    assert enc.index(b"\x11" * 32) < enc.index(b"\x22" * 32) < enc.index((7).to_bytes(8, "big"))
    assert enc.endswith(b"\x00\x00\x00\x01\x02")
    assert decode_header(enc) == h


def test_encoding_deterministic_and_field_sensitive(rng):
    tx = make_tx(rng)
    assert canonical_encode(tx) == canonical_encode(Transaction(**tx.__dict__))
    bumped = Transaction(tx.source_sm, tx.tx_number, tx.dest_sm, tx.sealed, tx.timestamp + 1)
    assert canonical_encode(bumped) != canonical_encode(tx)


symbols = st.lists(st.sampled_from([-1, 0, 1]), min_size=1, max_size=40).map(lambda s: Fingerprint(tuple(s)))
sealed_st = st.builds(SealedMaterials, st.text(max_size=10), st.binary(max_size=80), st.binary(max_size=20))
tx_st = st.builds(Transaction, symbols, st.integers(0, 2**64 - 1), symbols, sealed_st, st.integers(0, 2**64 - 1))


@given(tx_st)
def test_transaction_round_trip(tx):
    assert decode_transaction(encode_transaction(tx)) == tx


@given(st.integers(0, 2**64 - 1), st.binary(min_size=32, max_size=32), symbols, st.integers(0, 2**64 - 1),
       st.binary(min_size=32, max_size=32))
def test_header_round_trip(v, prev, fp, ts, root):
    h = BlockHeader(v, prev, fp, ts, root)
    assert decode_header(canonical_encode(h)) == h


def test_chained_root_single(rng):
    tx = make_tx(rng)
    assert chained_root([tx], [0]) == sha256_twice(encode_transaction(tx))


def test_chained_root_two_by_hand(rng):
    tx0, tx1 = make_tx(rng, 0), make_tx(rng, 1)
    expected = sha256_twice(encode_transaction(tx0) + sha256_twice(encode_transaction(tx1)))
    assert chained_root([tx0, tx1], [1, 0]) == expected


def test_chained_root_permutations_distinct(rng):
    txs = make_pool(rng, 3)
    roots = {chained_root(txs, p) for p in itertools.permutations(range(3))}
    assert len(roots) == 6


@pytest.mark.parametrize("perm", [[0, 0], [0], [0, 2], [1, 2]])
def test_chained_root_bad_permutation(rng, perm):
    with pytest.raises(InvalidArgument):
        chained_root(make_pool(rng, 2), perm)


def test_chained_root_empty():
    with pytest.raises(InvalidArgument):
        chained_root([], [])


def test_build_block_consumes_pool(rng):
    pool = make_pool(rng, 5)
    block = build_block(1, ZERO_HASH, Fingerprint((1, 0)), 100, pool, 5, rng)
    assert len(block.transactions) == 5 and pool == []
    assert [t.tx_number for t in block.transactions] == list(range(5))
    assert sorted(block.permutation) == list(range(5))


def test_build_block_partial_draw(rng):
    pool = make_pool(rng, 8)
    original = list(pool)
    block = build_block(1, ZERO_HASH, Fingerprint((1,)), 0, pool, 3, rng)
    assert len(pool) == 5
    assert sorted(map(id, pool + list(block.transactions))) == sorted(map(id, original))


def test_build_block_seeded(rng):
    pool = make_pool(rng, 6)
    a = build_block(1, ZERO_HASH, Fingerprint((1,)), 9, list(pool), 6, random.Random(3))
    b = build_block(1, ZERO_HASH, Fingerprint((1,)), 9, list(pool), 6, random.Random(3))
    assert encode_block(a) == encode_block(b)


def test_build_block_insufficient(rng):
    with pytest.raises(InsufficientTransactions):
        build_block(1, ZERO_HASH, Fingerprint((1,)), 0, make_pool(rng, 2), 3, rng)


def test_build_verify_round_trip_campaign():
    rng = random.Random(77)
    for _ in range(1000):
        n = rng.randint(1, 6)
        pool = make_pool(rng, n + rng.randint(0, 3), length=8)
        prev = rng.randbytes(32)
        block = build_block(1, prev, Fingerprint((1, 0, -1)), rng.randint(0, 10**12), pool, n, rng)
        assert verify_block(block, prev)
        assert chained_root(block.transactions, block.permutation) == block.header.root


def test_verify_detects_bit_flip(rng):
    pool = make_pool(rng, 4)
    block = build_block(1, ZERO_HASH, Fingerprint((1,)), 0, pool, 4, rng)
    tx = block.transactions[2]
    tampered = SealedMaterials(tx.sealed.recipient, bytes([tx.sealed.payload[0] ^ 1]) + tx.sealed.payload[1:],
                               tx.sealed.tag)
    txs = list(block.transactions)
    txs[2] = Transaction(tx.source_sm, tx.tx_number, tx.dest_sm, tampered, tx.timestamp)
    verdict = verify_block(Block(block.header, block.permutation, tuple(txs)), ZERO_HASH)
    assert not verdict and verdict.reason == "root-mismatch"


def test_verify_wrong_prev(rng):
    block = build_block(1, ZERO_HASH, Fingerprint((1,)), 0, make_pool(rng, 2), 2, rng)
    assert verify_block(block, b"\x01" * 32).reason == "linkage"


def test_verify_bad_permutation(rng):
    block = build_block(1, ZERO_HASH, Fingerprint((1,)), 0, make_pool(rng, 3), 3, rng)
    broken = Block(block.header, (0, 0, 1), block.transactions)
    assert verify_block(broken, ZERO_HASH).reason == "bad-permutation"


def test_verify_bytes_malformed(rng):
    block = build_block(1, ZERO_HASH, Fingerprint((1,)), 0, make_pool(rng, 2), 2, rng)
    raw = encode_block(block)
    assert verify_block_bytes(raw, ZERO_HASH)
    assert not verify_block_bytes(raw[:-1], ZERO_HASH)
    assert decode_block(raw) == block


def grow(chain, rng, blocks=10):
    for k in range(blocks):
        n = rng.randint(1, 4)
        append_block(chain, build_block(1, chain.tip_hash, Fingerprint((1, -1)), k, make_pool(rng, n), n, rng))
    return chain


def test_genesis_chain(rng):
    chain = Chain()
    block = build_block(1, ZERO_HASH, Fingerprint((1,)), 0, make_pool(rng, 1), 1, rng)
    append_block(chain, block)
    assert len(chain) == 1 and validate_chain(chain)


def test_append_rejects_and_leaves_chain_unchanged(rng):
    chain = grow(Chain(), rng, 3)
    before = chain.to_bytes()
    stray = build_block(1, b"\x07" * 32, Fingerprint((1,)), 0, make_pool(rng, 1), 1, rng)
    with pytest.raises(BlockRejected):
        append_block(chain, stray)
    assert chain.to_bytes() == before


def test_append_same_block_twice(rng):
    chain = Chain()
    block = build_block(1, ZERO_HASH, Fingerprint((1,)), 0, make_pool(rng, 2), 2, rng)
    append_block(chain, block)
    with pytest.raises(BlockRejected, match="linkage"):
        append_block(chain, block)


@pytest.mark.parametrize("j", range(10))
def test_validate_reports_first_tampered_index(j):
    rng = random.Random(j)
    chain = grow(Chain(), rng, 10)
    victim = chain.blocks[j]
    tx = victim.transactions[0]
    forged = Transaction(tx.source_sm, tx.tx_number, tx.dest_sm, tx.sealed, tx.timestamp + 1)
    chain.blocks[j] = Block(victim.header, victim.permutation, (forged,) + victim.transactions[1:])
    verdict = validate_chain(chain)
    assert not verdict and verdict.index == j and verdict.reason == "root-mismatch"


def test_validate_reports_header_tamper_at_successor(rng):
    chain = grow(Chain(), rng, 5)
    h = chain.blocks[2].header
    chain.blocks[2] = Block(BlockHeader(h.version, h.prev_hash, h.source_sm, h.timestamp + 1, h.root),
                            chain.blocks[2].permutation, chain.blocks[2].transactions)
    verdict = validate_chain(chain)
    assert verdict.index == 3 and verdict.reason == "linkage"


def test_chain_persistence_round_trip(rng, tmp_path):
    chain = grow(Chain(), rng, 4)
    path = tmp_path / "chain.bin"
    chain.save(path)
    loaded = Chain.load(path)
    assert loaded.to_bytes() == chain.to_bytes()
    assert validate_chain(loaded)
    raw = path.read_bytes()
    first_len = int.from_bytes(raw[:4], "big")
    assert decode_block(raw[4:4 + first_len]) == chain.blocks[0]


def test_empty_chain_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert len(Chain.load(path)) == 0 and validate_chain(Chain.load(path))


def test_dump_uses_lowercase_hex(rng):
    chain = grow(Chain(), rng, 2)
    text = dump_chain(chain)
    assert chain.blocks[1].header.prev_hash.hex() in text
    digests = re.findall(r"(?:hash|prev|root) +(\S+)", text)
    assert len(digests) == 6 and all(re.fullmatch(r"[0-9a-f]{64}", d) for d in digests)
    assert "status    ok" in text


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32))
def test_two_builders_agree(n, seed):
    pool_rng = random.Random(seed)
    pool = make_pool(pool_rng, n, length=8)
    a = build_block(1, ZERO_HASH, Fingerprint((1,)), 5, list(pool), n, random.Random(seed))
    b = build_block(1, ZERO_HASH, Fingerprint((1,)), 5, list(pool), n, random.Random(seed))
    assert encode_block(a) == encode_block(b)
