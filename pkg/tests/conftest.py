import copy
import itertools
import random
import sys

import pytest

from autonom.chain import Chain, Transaction
from autonom.wallet import generate_keypair

BASE_MS = 1_700_000_000_000


class StepClock:
    """Deterministic clock that advances one second per reading."""

    def __init__(self, start=BASE_MS, step=1000):
        self._ticks = itertools.count(start, step)

    def __call__(self):
        return next(self._ticks)


@pytest.fixture(scope="session")
def alice():
    return generate_keypair("alice")


@pytest.fixture(scope="session")
def bob():
    return generate_keypair("bob")


@pytest.fixture(scope="session")
def carol():
    return generate_keypair("carol")


def signed(chain, sender, to, amount, metadata=None):
    tx = Transaction(sender.address, to, amount, dict(metadata or {}), chain.clock())
    return tx.sign(sender)


def build_chain(blocks=10, difficulty=2):
    """Genesis plus ``blocks - 1`` mined blocks, mixing rewards, transfers and NFT-style metadata."""
    a, b, c = (generate_keypair(n) for n in ("alice", "bob", "carol"))
    chain = Chain(difficulty, clock=StepClock())
    miners = [a, b, c]
    for i in range(blocks - 1):
        miner = miners[i % 3]
        if i >= 3:
            payer = miners[(i + 1) % 3]
            chain.add_transaction(signed(chain, payer, miners[(i + 2) % 3].address, 1 + i % 3, {"memo": f"p{i}"}))
        meta = {"cyberNFT": f"{i:064x}", "cyberNFTLabel": "malicious"} if i % 4 == 1 else {}
        chain.mine_pending(miner.address, meta)
    return chain


@pytest.fixture(scope="session")
def ten_block_chain():
    chain = build_chain(10)
    assert chain.validate()
    return chain


def _bump_hex(value, rng):
    pos = rng.randrange(len(value))
    ch = value[pos]
    repl = rng.choice([h for h in "0123456789abcdef" if h != ch])
    return value[:pos] + repl + value[pos + 1:]


BLOCK_FIELDS = ("previousHash", "timestamp", "nonce", "hash", "tx")
TX_FIELDS = ("fromAddress", "toAddress", "amount", "metadata", "timestamp", "signature")


def mutate(chain, rng):
    """Return (tampered copy, block index, description) with exactly one field changed."""
    out = copy.deepcopy(chain)
    idx = rng.randrange(len(out.chain))
    block = out.chain[idx]
    fields = [f for f in BLOCK_FIELDS if f != "tx" or block.transactions]
    field = rng.choice(fields)
    if field == "previousHash":
        block.previous_hash = _bump_hex(block.previous_hash, rng) if len(block.previous_hash) > 1 else "1"
    elif field == "timestamp":
        block.timestamp += rng.choice([-1, 1]) * rng.randint(1, 10**6)
    elif field == "nonce":
        block.nonce += rng.randint(1, 10**6)
    elif field == "hash":
        block.hash = _bump_hex(block.hash, rng)
    else:
        tx = rng.choice(block.transactions)
        options = [f for f in TX_FIELDS if f != "fromAddress" or tx.from_address is not None]
        field = "tx." + rng.choice(options)
        if field == "tx.fromAddress":
            tx.from_address = _bump_hex(tx.from_address, rng)
        elif field == "tx.toAddress":
            tx.to_address = _bump_hex(tx.to_address, rng)
        elif field == "tx.amount":
            tx.amount += rng.randint(1, 50)
        elif field == "tx.metadata":
            tx.metadata = dict(tx.metadata, tamper=str(rng.randint(0, 9)))
        elif field == "tx.timestamp":
            tx.timestamp += rng.randint(1, 10**6)
        else:
            tx.signature = _bump_hex(tx.signature, rng) if tx.signature else "3006020101020101"
    return out, idx, field


@pytest.fixture
def rng():
    return random.Random(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
