"""Hashchain: an append-only ledger for cross-border vehicle authentication.

Subpackages and modules:

* :mod:`hashchain.identity`: fingerprints, pseudonyms, sealed envelopes
* :mod:`hashchain.ledger`: canonical encoding, blocks, chain validation
* :mod:`hashchain.broker`: in-process ordered log with batch triggers
* :mod:`hashchain.sm`: Security Manager handshake state machine
* :mod:`hashchain.sim`: two-domain delay simulation and calibration
"""
from .broker import BatchTrigger, Broker, Record
from .identity import Fingerprint, KeyPair, SealedMaterials, open_sealed, seal
from .ledger import Block, BlockHeader, Chain, Transaction, build_block, chained_root, dhash, verify_block
from .sm import Beacon, SecurityManager

__version__ = "0.1.0"
