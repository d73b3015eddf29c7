"""Decentralized intrusion detection: a proof-of-work ledger that rewards
detections with non-fungible tokens, a linear flow classifier, a pub/sub
gossip layer and a queueing model of detection and response delay."""

from .chain import Block, Chain, Transaction, load_chain, save_chain, validate_chain
from .classifier import FlowRecord, Model, TrainConfig, predict, train
from .cybernft import CyberNFT, IntrusionSignature, mint_discovery, token_id, transfer_nft
from .wallet import KeyPair, generate_keypair

__version__ = "0.1.0"

__all__ = [
    "Block",
    "Chain",
    "CyberNFT",
    "FlowRecord",
    "IntrusionSignature",
    "KeyPair",
    "Model",
    "TrainConfig",
    "Transaction",
    "generate_keypair",
    "load_chain",
    "mint_discovery",
    "predict",
    "save_chain",
    "token_id",
    "train",
    "transfer_nft",
    "validate_chain",
]
