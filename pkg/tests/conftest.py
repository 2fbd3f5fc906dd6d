import random

import pytest

from hashchain.broker import BatchTrigger, Broker
from hashchain.identity import KeyPair, new_fingerprint, seal
from hashchain.ledger import Transaction
from hashchain.sm import Peer, Rect, SecurityManager

L = 32


def make_tx(rng, i=0, *, length=L, recipient="SM-B", public=None, ts=None):
    public = public or KeyPair.generate(recipient, rng).public
    src = new_fingerprint(length, rng)
    dst = new_fingerprint(length, rng)
    sealed = seal(rng.randbytes(rng.randint(1, 64)), recipient, public, rng)
    return Transaction(src, i, dst, sealed, ts if ts is not None else rng.randint(0, 2**40))


def make_pool(rng, n, **kw):
    return [make_tx(rng, i, **kw) for i in range(n)]


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def tx_factory(rng):
    return lambda i=0, **kw: make_tx(rng, i, **kw)


def make_sms(names=("SM-A", "SM-B", "SM-C"), *, batch_n=10, interval=None, seed=7, broker=None):
    """A fully meshed set of SMs sharing one broker; domains tile the x axis."""
    rng = random.Random(seed)
    broker = broker or Broker()
    sms = []
    for k, name in enumerate(names):
        sm = SecurityManager(
            name=name,
            identity=new_fingerprint(128, rng),
            keys=KeyPair.generate(name, rng),
            broker=broker,
            domain=Rect(500.0 * k, 0.0, 500.0 * (k + 1), 1000.0),
            rng=random.Random(seed * 31 + k),
        )
        sm.attach(BatchTrigger(max_count=batch_n, max_interval=interval))
        sms.append(sm)
    for sm in sms:
        for other in sms:
            if other is not sm:
                sm.add_peer(Peer(other.name, other.identity, other.keys.public, other.domain))
    return broker, sms


@pytest.fixture
def mesh():
    return make_sms()
