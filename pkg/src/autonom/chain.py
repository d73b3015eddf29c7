"""Proof-of-work ledger: blocks of transactions sealed by leading-zero SHA-256 digests.

The JSON document produced by :meth:`Chain.to_dict` is the on-disk chain file
and the wire format served by the REST API.
"""
from __future__ import annotations

import copy
import hashlib
import json
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from . import wallet

GENESIS_PREVIOUS_HASH = "0"
GENESIS_TIMESTAMP = 1483228800000
DEFAULT_DIFFICULTY = 2
DEFAULT_MINING_REWARD = 10

CHAIN_KEYS = ("chain", "difficulty", "pendingTransactions", "miningReward")
BLOCK_KEYS = ("previousHash", "timestamp", "transactions", "nonce", "hash")
TX_KEYS = ("fromAddress", "toAddress", "amount", "metadata", "timestamp")

Clock = Callable[[], int]


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


class MiningError(RuntimeError):
    pass


class TransactionRejected(Exception):
    """Raised by :meth:`Chain.add_transaction`; ``reason`` is one of
    ``bad-signature``, ``overdraft``, ``malformed``."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(f"{reason}: {message}" if message else reason)
        self.reason = reason


class ChainFileError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


def _canonical_metadata(metadata: dict[str, str]) -> str:
    return json.dumps(metadata, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass
class Transaction:
    from_address: str | None
    to_address: str
    amount: int
    metadata: dict[str, str] = field(default_factory=dict)
    timestamp: int = 0
    signature: str | None = None

    @property
    def is_coinbase(self) -> bool:
        return self.from_address is None

    def signing_digest(self) -> bytes:
        payload = (
            (self.from_address or "")
            + self.to_address
            + str(self.amount)
            + _canonical_metadata(self.metadata)
            + str(self.timestamp)
        )
        return hashlib.sha256(payload.encode("utf-8")).digest()

    def sign(self, keypair: wallet.KeyPair) -> "Transaction":
        if keypair.address != self.from_address:
            raise ValueError("key pair does not own fromAddress")
        self.signature = wallet.sign(keypair.private_key, self.signing_digest())
        return self

    def has_valid_signature(self) -> bool:
        if self.from_address is None or not self.signature:
            return False
        try:
            return wallet.verify(self.from_address, self.signing_digest(), self.signature)
        except wallet.MalformedKeyError:
            return False

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "fromAddress": self.from_address,
            "toAddress": self.to_address,
            "amount": self.amount,
            "metadata": dict(self.metadata),
            "timestamp": self.timestamp,
        }
        if self.signature is not None:
            out["signature"] = self.signature
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Transaction":
        _require_keys(data, TX_KEYS, optional=("signature",), what="transaction")
        return cls(
            from_address=data["fromAddress"],
            to_address=data["toAddress"],
            amount=data["amount"],
            metadata=dict(data["metadata"]),
            timestamp=data["timestamp"],
            signature=data.get("signature"),
        )


def _tx_json(tx: Transaction) -> str:
    # json.dumps keeps dict insertion order, which fixes the key order here.
    body = {
        "fromAddress": tx.from_address,
        "toAddress": tx.to_address,
        "amount": tx.amount,
        "metadata": dict(sorted(tx.metadata.items())),
        "timestamp": tx.timestamp,
    }
    return json.dumps(body, separators=(",", ":"), ensure_ascii=False)


def canonical_tx_bytes(tx: Transaction) -> bytes:
    return _tx_json(tx).encode("utf-8")


def _block_prefix(previous_hash: str, timestamp: int, transactions: Iterable[Transaction]) -> bytes:
    txs = "[" + ",".join(_tx_json(tx) for tx in transactions) + "]"
    return (previous_hash + str(timestamp) + txs).encode("utf-8")


def block_digest(
    previous_hash: str, timestamp: int, transactions: Iterable[Transaction], nonce: int
) -> str:
    h = hashlib.sha256(_block_prefix(previous_hash, timestamp, transactions))
    h.update(str(nonce).encode("ascii"))
    return h.hexdigest()


def meets_difficulty(digest: str, difficulty: int) -> bool:
    return digest.startswith("0" * difficulty)


@dataclass
class Block:
    previous_hash: str
    timestamp: int
    transactions: list[Transaction]
    nonce: int
    hash: str

    def compute_hash(self) -> str:
        return block_digest(self.previous_hash, self.timestamp, self.transactions, self.nonce)

    def to_dict(self) -> dict[str, Any]:
        return {
            "previousHash": self.previous_hash,
            "timestamp": self.timestamp,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "nonce": self.nonce,
            "hash": self.hash,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Block":
        _require_keys(data, BLOCK_KEYS, what="block")
        if not isinstance(data["transactions"], list):
            raise ChainFileError("parse-error", "block transactions must be a list")
        return cls(
            previous_hash=data["previousHash"],
            timestamp=data["timestamp"],
            transactions=[Transaction.from_dict(t) for t in data["transactions"]],
            nonce=data["nonce"],
            hash=data["hash"],
        )


def genesis_block() -> Block:
    digest = block_digest(GENESIS_PREVIOUS_HASH, GENESIS_TIMESTAMP, [], 0)
    return Block(GENESIS_PREVIOUS_HASH, GENESIS_TIMESTAMP, [], 0, digest)


def mine_block(
    previous_hash: str,
    timestamp: int,
    transactions: list[Transaction],
    difficulty: int,
    starting_nonce: int = 0,
    max_attempts: int | None = None,
) -> Block:
    """Search nonces upward from ``starting_nonce`` for the first sealing digest.

    The number of attempts taken is ``block.nonce - starting_nonce + 1``.
    """
    if difficulty < 0:
        raise ValueError("difficulty must be >= 0")
    target = "0" * difficulty
    base = hashlib.sha256(_block_prefix(previous_hash, timestamp, transactions))
    nonce = starting_nonce
    attempts = 0
    while True:
        if max_attempts is not None and attempts >= max_attempts:
            raise MiningError(f"no nonce found within {max_attempts} attempts")
        h = base.copy()
        h.update(str(nonce).encode("ascii"))
        digest = h.hexdigest()
        attempts += 1
        if digest.startswith(target):
            return Block(previous_hash, timestamp, list(transactions), nonce, digest)
        nonce += 1


@dataclass(frozen=True)
class Validity:
    ok: bool
    index: int | None = None
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


VALID = Validity(True)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _malformed_reason(tx: Transaction) -> str | None:
    if not _is_int(tx.amount) or tx.amount < 0:
        return "amount must be a non-negative integer"
    if not isinstance(tx.to_address, str) or not tx.to_address:
        return "toAddress must be a non-empty string"
    if tx.from_address is not None and (not isinstance(tx.from_address, str) or not tx.from_address):
        return "fromAddress must be null or a non-empty string"
    if not isinstance(tx.metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in tx.metadata.items()
    ):
        return "metadata must map strings to strings"
    if not _is_int(tx.timestamp):
        return "timestamp must be an integer"
    return None


def validate_chain(chain: "Chain") -> Validity:
    """Full check from genesis; reports the first offending block."""
    blocks = chain.chain
    if not blocks or blocks[0] != genesis_block():
        return Validity(False, 0, "genesis-mismatch")
    balances: dict[str, int] = defaultdict(int)
    for i in range(1, len(blocks)):
        block, prev = blocks[i], blocks[i - 1]
        if block.previous_hash != prev.hash:
            return Validity(False, i, "linkage-broken")
        if (
            not isinstance(block.hash, str)
            or not _is_int(block.timestamp)
            or not _is_int(block.nonce)
            or block.nonce < 0
            or any(_malformed_reason(tx) for tx in block.transactions)
        ):
            return Validity(False, i, "malformed-block")
        if block.hash != block.compute_hash():
            return Validity(False, i, "digest-mismatch")
        if not meets_difficulty(block.hash, chain.difficulty):
            return Validity(False, i, "insufficient-work")
        coinbases = 0
        for tx in block.transactions:
            if tx.is_coinbase:
                coinbases += 1
                if tx.amount != chain.mining_reward or tx.signature is not None:
                    return Validity(False, i, "bad-coinbase")
            else:
                if not tx.has_valid_signature():
                    return Validity(False, i, "bad-signature")
                balances[tx.from_address] -= tx.amount
                if balances[tx.from_address] < 0:
                    return Validity(False, i, "overdraft")
            balances[tx.to_address] += tx.amount
        if coinbases > 1:
            return Validity(False, i, "multiple-coinbase")
    return VALID


@dataclass(frozen=True)
class ReplaceOutcome:
    replaced: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.replaced


def _tx_identity(tx: Transaction) -> tuple[bytes, str | None]:
    return canonical_tx_bytes(tx), tx.signature


class Chain:
    """A node's replica of the ledger.

    Mutations take ``self.lock``; readers that need a stable view should use
    :meth:`snapshot`.
    """

    def __init__(
        self,
        difficulty: int = DEFAULT_DIFFICULTY,
        mining_reward: int = DEFAULT_MINING_REWARD,
        clock: Clock | None = None,
    ):
        if difficulty < 0:
            raise ValueError("difficulty must be >= 0")
        if mining_reward <= 0:
            raise ValueError("mining reward must be positive")
        self.chain: list[Block] = [genesis_block()]
        self.difficulty = difficulty
        self.mining_reward = mining_reward
        self.pending_transactions: list[Transaction] = []
        self.clock: Clock = clock or wall_clock_ms
        self.lock = threading.RLock()

    def __len__(self) -> int:
        return len(self.chain)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Chain):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @property
    def last_block(self) -> Block:
        return self.chain[-1]

    @property
    def head_hash(self) -> str:
        return self.chain[-1].hash

    def snapshot(self) -> "Chain":
        with self.lock:
            twin = Chain(self.difficulty, self.mining_reward, self.clock)
            twin.chain = copy.deepcopy(self.chain)
            twin.pending_transactions = copy.deepcopy(self.pending_transactions)
            return twin

    def __deepcopy__(self, memo) -> "Chain":
        return self.snapshot()

    def validate(self) -> Validity:
        with self.lock:
            return validate_chain(self)

    def balance_of(self, address: str) -> int:
        total = 0
        with self.lock:
            for block in self.chain:
                for tx in block.transactions:
                    if tx.to_address == address:
                        total += tx.amount
                    if tx.from_address == address:
                        total -= tx.amount
        return total

    def balances(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        with self.lock:
            for block in self.chain:
                for tx in block.transactions:
                    out[tx.to_address] += tx.amount
                    if tx.from_address is not None:
                        out[tx.from_address] -= tx.amount
        return dict(out)

    def pending_outgoing(self, address: str) -> int:
        return sum(tx.amount for tx in self.pending_transactions if tx.from_address == address)

    def add_transaction(self, tx: Transaction) -> Transaction:
        if tx.is_coinbase:
            raise TransactionRejected("malformed", "coinbase transactions are created by mining")
        problem = _malformed_reason(tx)
        if problem:
            raise TransactionRejected("malformed", problem)
        if not tx.has_valid_signature():
            raise TransactionRejected("bad-signature")
        with self.lock:
            available = self.balance_of(tx.from_address) - self.pending_outgoing(tx.from_address)
            if available < tx.amount:
                raise TransactionRejected(
                    "overdraft", f"available {available}, requested {tx.amount}"
                )
            self.pending_transactions.append(tx)
        return tx

    def mine_pending(
        self,
        reward_address: str,
        metadata: dict[str, str] | None = None,
        max_attempts: int | None = None,
    ) -> Block:
        """Pay the reward to ``reward_address`` and seal every pending transaction."""
        with self.lock:
            now = self.clock()
            coinbase = Transaction(None, reward_address, self.mining_reward, dict(metadata or {}), now)
            problem = _malformed_reason(coinbase)
            if problem:
                raise TransactionRejected("malformed", problem)
            txs = [*self.pending_transactions, coinbase]
            block = mine_block(self.head_hash, now, txs, self.difficulty, max_attempts=max_attempts)
            self.chain.append(block)
            self.pending_transactions = []
            return block

    def append_block(self, block: Block) -> None:
        """Attach a block mined elsewhere, checking it against the current head."""
        with self.lock:
            trial = self.snapshot()
            trial.chain.append(block)
            verdict = validate_chain(trial)
            if not verdict:
                raise ValueError(f"block rejected: {verdict.reason}")
            self.chain.append(block)
            sealed = {_tx_identity(tx) for tx in block.transactions}
            self.pending_transactions = [
                tx for tx in self.pending_transactions if _tx_identity(tx) not in sealed
            ]

    def replace_chain(self, candidate: "Chain") -> ReplaceOutcome:
        """Adopt ``candidate`` if it is valid and beats the local chain.

        Longer wins; at equal length the lexicographically smaller head hash
        wins, so replicas that saw concurrent blocks still settle on one head.
        Unconfirmed transfers from the local pool and from orphaned local
        blocks are re-queued when still admissible; orphaned rewards vanish.
        """
        with self.lock:
            if (
                candidate.difficulty != self.difficulty
                or candidate.mining_reward != self.mining_reward
                or not candidate.chain
                or candidate.chain[0] != self.chain[0]
            ):
                return ReplaceOutcome(False, "incompatible-params")
            if not validate_chain(candidate):
                return ReplaceOutcome(False, "invalid")
            ours, theirs = len(self.chain), len(candidate.chain)
            if not (
                theirs > ours or (theirs == ours and candidate.head_hash < self.head_hash)
            ):
                return ReplaceOutcome(False, "not-longer")

            fork = 0
            while (
                fork < min(ours, theirs)
                and self.chain[fork].hash == candidate.chain[fork].hash
            ):
                fork += 1
            orphaned = [
                tx for block in self.chain[fork:] for tx in block.transactions if not tx.is_coinbase
            ]
            leftovers = orphaned + self.pending_transactions
            adopted = {
                _tx_identity(tx) for block in candidate.chain for tx in block.transactions
            }
            self.chain = copy.deepcopy(candidate.chain)
            self.pending_transactions = []
            seen: set = set()
            for tx in leftovers:
                key = _tx_identity(tx)
                if key in adopted or key in seen:
                    continue
                seen.add(key)
                try:
                    self.add_transaction(tx)
                except TransactionRejected:
                    pass
            return ReplaceOutcome(True)

    def to_dict(self) -> dict[str, Any]:
        with self.lock:
            return {
                "chain": [b.to_dict() for b in self.chain],
                "difficulty": self.difficulty,
                "pendingTransactions": [tx.to_dict() for tx in self.pending_transactions],
                "miningReward": self.mining_reward,
            }

    @classmethod
    def from_dict(
        cls, data: dict[str, Any], validate: bool = True, clock: Clock | None = None
    ) -> "Chain":
        _require_keys(data, CHAIN_KEYS, what="chain document")
        if not isinstance(data["chain"], list) or not isinstance(data["pendingTransactions"], list):
            raise ChainFileError("parse-error", "chain and pendingTransactions must be lists")
        if not _is_int(data["difficulty"]) or not _is_int(data["miningReward"]):
            raise ChainFileError("parse-error", "difficulty and miningReward must be integers")
        chain = cls(data["difficulty"], data["miningReward"], clock)
        chain.chain = [Block.from_dict(b) for b in data["chain"]]
        chain.pending_transactions = [Transaction.from_dict(t) for t in data["pendingTransactions"]]
        if validate:
            verdict = validate_chain(chain)
            if not verdict:
                raise ChainFileError(
                    "validation-failure", f"block {verdict.index}: {verdict.reason}"
                )
        return chain


def _require_keys(
    data: Any, required: tuple[str, ...], optional: tuple[str, ...] = (), what: str = "object"
) -> None:
    if not isinstance(data, dict):
        raise ChainFileError("parse-error", f"{what} must be a JSON object")
    missing = [k for k in required if k not in data]
    if missing:
        raise ChainFileError("parse-error", f"{what} missing keys {missing}")
    extra = sorted(set(data) - set(required) - set(optional))
    if extra:
        raise ChainFileError("parse-error", f"{what} has unexpected keys {extra}")


def save_chain(chain: Chain, destination: str | Path) -> None:
    try:
        Path(destination).write_text(json.dumps(chain.to_dict(), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ChainFileError("io-error", str(exc)) from exc


def load_chain(source: str | Path, validate: bool = True, clock: Clock | None = None) -> Chain:
    try:
        text = Path(source).read_text(encoding="utf-8")
    except OSError as exc:
        raise ChainFileError("io-error", str(exc)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChainFileError("parse-error", str(exc)) from exc
    return Chain.from_dict(data, validate=validate, clock=clock)
