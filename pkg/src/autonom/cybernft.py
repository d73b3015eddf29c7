"""CyberNFTs: discovery tokens minted as coinbase metadata and moved by zero-amount transfers.

Ownership is never stored; it is recomputed by scanning the confirmed blocks,
so it always agrees with whichever chain a node has adopted.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

from .chain import Block, Chain, Transaction
from .wallet import KeyPair

NFT_KEY = "cyberNFT"
NFT_LABEL_KEY = "cyberNFTLabel"


class NFTRejected(Exception):
    """``reason`` is ``duplicate``, ``not-owner`` or ``unknown-token``."""

    def __init__(self, reason: str, token_id: str = ""):
        super().__init__(f"{reason}: {token_id}" if token_id else reason)
        self.reason = reason
        self.token_id = token_id


class UnknownToken(NFTRejected, KeyError):
    def __init__(self, token_id: str):
        NFTRejected.__init__(self, "unknown-token", token_id)


@dataclass(frozen=True)
class IntrusionSignature:
    detector_id: str
    feature_vector: tuple[float, ...]
    label: str
    first_seen: int

    def canonical_bytes(self) -> bytes:
        # Provenance (detector, first_seen) stays out: two nodes that see the
        # same intrusion must derive the same token.
        body = {"label": self.label, "featureVector": [float(v) for v in self.feature_vector]}
        return json.dumps(body, separators=(",", ":")).encode("utf-8")


def token_id(sig: IntrusionSignature) -> str:
    return hashlib.sha256(sig.canonical_bytes()).hexdigest()


@dataclass(frozen=True)
class CyberNFT:
    token_id: str
    minter: str
    current_owner: str
    mint_block_index: int
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "tokenId": self.token_id,
            "minter": self.minter,
            "currentOwner": self.current_owner,
            "mintBlockIndex": self.mint_block_index,
            "label": self.label,
        }


def scan_registry(blocks: Sequence[Block]) -> dict[str, CyberNFT]:
    """One left-to-right pass: first coinbase carrying a token id mints it,
    later transfers move it only when sent by the owner at that point."""
    registry: dict[str, CyberNFT] = {}
    for index, block in enumerate(blocks):
        for tx in block.transactions:
            tid = tx.metadata.get(NFT_KEY)
            if tid is None:
                continue
            nft = registry.get(tid)
            if tx.is_coinbase:
                if nft is None:
                    registry[tid] = CyberNFT(
                        tid, tx.to_address, tx.to_address, index, tx.metadata.get(NFT_LABEL_KEY, "")
                    )
            elif nft is not None and tx.from_address == nft.current_owner:
                registry[tid] = CyberNFT(
                    tid, nft.minter, tx.to_address, nft.mint_block_index, nft.label
                )
    return registry


def list_nfts(chain: Chain) -> list[CyberNFT]:
    with chain.lock:
        return list(scan_registry(chain.chain).values())


def owner_of(chain: Chain, tid: str) -> str:
    with chain.lock:
        registry = scan_registry(chain.chain)
    if tid not in registry:
        raise UnknownToken(tid)
    return registry[tid].current_owner


def is_minted(chain: Chain, tid: str) -> bool:
    with chain.lock:
        return tid in scan_registry(chain.chain)


def mint_discovery(chain: Chain, reward_address: str, sig: IntrusionSignature) -> Block:
    tid = token_id(sig)
    with chain.lock:
        if is_minted(chain, tid):
            raise NFTRejected("duplicate", tid)
        return chain.mine_pending(reward_address, {NFT_KEY: tid, NFT_LABEL_KEY: sig.label})


def transfer_nft(chain: Chain, tid: str, owner: KeyPair, to_address: str) -> Transaction:
    """Queue a signed zero-amount transfer; ownership moves once it is mined."""
    with chain.lock:
        registry = scan_registry(chain.chain)
        if tid not in registry:
            raise UnknownToken(tid)
        if registry[tid].current_owner != owner.address:
            raise NFTRejected("not-owner", tid)
        tx = Transaction(owner.address, to_address, 0, {NFT_KEY: tid}, chain.clock())
        tx.sign(owner)
        return chain.add_transaction(tx)
