"""IDS node: classify flows, mint discoveries, quarantine sources, sync chain and model.

Nodes share no mutable state. They talk only through broker messages and
explicit chain snapshot requests made with ``fetch_chain``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from . import pubsub
from .chain import Chain, Clock, ReplaceOutcome
from .classifier import (
    BENIGN,
    MALICIOUS,
    FlowRecord,
    Model,
    TrainConfig,
    predict,
    train,
)
from .cybernft import IntrusionSignature, NFTRejected, mint_discovery, token_id
from .wallet import KeyPair, generate_keypair

MALICIOUS_LABEL = "malicious"


@dataclass(frozen=True)
class NodeConfig:
    node_id: str
    keypair: KeyPair
    classifier_capable: bool = True
    anomaly_margin_threshold: float = 0.0
    retrain_batch_size: int = 1
    vote_weight: float = 1.0

    def __post_init__(self):
        if self.retrain_batch_size < 1:
            raise ValueError("retrain_batch_size must be >= 1")
        if self.vote_weight <= 0:
            raise ValueError("vote_weight must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NodeConfig":
        node_id = str(data["nodeId"])
        seed = data.get("seed")
        keypair = generate_keypair(f"{node_id}:{seed}" if seed is not None else None)
        return cls(
            node_id,
            keypair,
            bool(data.get("classifierCapable", True)),
            float(data.get("anomalyMarginThreshold", 0.0)),
            int(data.get("retrainBatchSize", 1)),
            float(data.get("voteWeight", 1.0)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "NodeConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Alert:
    token_id: str
    label: str
    source_addr: str
    margin: float
    tick: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "tokenId": self.token_id,
            "label": self.label,
            "sourceAddr": self.source_addr,
            "margin": self.margin,
            "tick": self.tick,
        }


class RetrainSkipped(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class SimClock:
    """Maps simulation ticks onto millisecond timestamps."""

    base_ms: int = 1_700_000_000_000
    tick_ms: int = 1000
    tick: int = 0

    def __call__(self) -> int:
        return self.base_ms + self.tick * self.tick_ms


class Node:
    def __init__(
        self,
        config: NodeConfig,
        model: Model | None = None,
        broker: pubsub.Broker | None = None,
        chain: Chain | None = None,
        clock: Clock | None = None,
        difficulty: int = 2,
        fetch_chain: Callable[[str], Chain | None] | None = None,
    ):
        self.config = config
        self.chain = chain if chain is not None else Chain(difficulty, clock=clock)
        self.model = model
        self.broker = broker
        self.fetch_chain = fetch_chain
        self.collected_flows: list[tuple[FlowRecord, int]] = []
        self.quarantined: dict[str, int] = {}
        self.peers: list[str] = []
        self.alert_log: list[Alert] = []
        self.model_versions: list[int] = [model.version] if model else []
        self.events: list[dict[str, Any]] = []
        self.tick = 0
        if broker is not None:
            for topic in pubsub.TOPICS:
                broker.subscribe(config.node_id, topic)

    @property
    def node_id(self) -> str:
        return self.config.node_id

    @property
    def address(self) -> str:
        return self.config.keypair.address

    def _record(self, kind: str, **details: Any) -> None:
        self.events.append({"tick": self.tick, "node": self.node_id, "event": kind, **details})

    def publish(self, topic: str, event: dict[str, Any]) -> None:
        if self.broker is not None:
            self.broker.publish(self.node_id, topic, event)

    def announce_chain(self) -> None:
        self.publish(
            pubsub.TOPIC_CHAIN_UPDATED,
            {"nodeId": self.node_id, "chainLength": len(self.chain), "headHash": self.chain.head_hash},
        )

    # -- traffic ----------------------------------------------------------

    def on_flow(self, record: FlowRecord) -> Alert | None:
        if record.src_addr in self.quarantined:
            return None
        if self.model is None:
            raise RuntimeError(f"node {self.node_id} has no model")
        label, margin = predict(self.model, record)
        self.collected_flows.append((record, label))
        if label != MALICIOUS or abs(margin) < self.config.anomaly_margin_threshold:
            return None
        sig = IntrusionSignature(
            self.node_id, tuple(float(v) for v in record.features()), MALICIOUS_LABEL, self.chain.clock()
        )
        tid = token_id(sig)
        self._record("classified-malicious", sourceAddr=record.src_addr, margin=margin)
        self.quarantine(record.src_addr)
        try:
            block = mint_discovery(self.chain, self.address, sig)
        except NFTRejected:
            self._record("duplicate-suppressed", tokenId=tid)
            return None
        alert = Alert(tid, MALICIOUS_LABEL, record.src_addr, margin, self.tick)
        self.alert_log.append(alert)
        self._record("alert", **alert.to_dict())
        self._record("mint", tokenId=tid, blockHash=block.hash, height=len(self.chain) - 1)
        self.announce_chain()
        self.publish(
            pubsub.TOPIC_ALERT,
            {"nodeId": self.node_id, "tokenId": tid, "label": MALICIOUS_LABEL, "sourceAddr": record.src_addr},
        )
        return alert

    def quarantine(self, source_addr: str) -> None:
        if source_addr and source_addr not in self.quarantined:
            self.quarantined[source_addr] = self.tick
            self._record("quarantine", sourceAddr=source_addr)

    # -- broker events ----------------------------------------------------

    def handle(self, message: pubsub.Message) -> Any:
        event = message.event()
        if message.topic == pubsub.TOPIC_CHAIN_UPDATED:
            return self.on_chain_updated(event)
        if message.topic == pubsub.TOPIC_ALERT:
            return self.on_alert(event)
        if message.topic == pubsub.TOPIC_MODEL_UPDATE:
            return self.on_model_update(event)
        return None

    def on_chain_updated(self, event: dict[str, Any]) -> ReplaceOutcome:
        if event["headHash"] == self.chain.head_hash:
            return ReplaceOutcome(False, "same-head")
        if event["chainLength"] < len(self.chain):
            return ReplaceOutcome(False, "not-longer")
        snapshot = self.fetch_chain(event["nodeId"]) if self.fetch_chain else None
        if snapshot is None:
            return ReplaceOutcome(False, "unreachable")
        outcome = self.chain.replace_chain(snapshot)
        if outcome:
            self._record("chain-replaced", source=event["nodeId"], headHash=self.chain.head_hash,
                         length=len(self.chain))
            self.announce_chain()
        elif outcome.reason == "invalid":
            self._record("chain-rejected", source=event["nodeId"], reason=outcome.reason)
        return outcome

    def on_alert(self, event: dict[str, Any]) -> None:
        self.quarantine(event.get("sourceAddr", ""))

    def on_model_update(self, event: dict[str, Any]) -> str:
        version = int(event["version"])
        if self.model is not None and version <= self.model.version:
            return "ignored"
        self.adopt_model(Model.from_dict(event["model"]))
        return "adopted"

    def adopt_model(self, model: Model) -> None:
        self.model = model
        self.model_versions.append(model.version)
        self._record("model-adopted", version=model.version)


def select_retrain_nodes(nodes: Sequence[Node], k: int, since_tick: int | None = None) -> list[Node]:
    """Rank classifier-capable nodes by recent alert count, then recency, then id."""
    if k < 1:
        raise ValueError("k must be >= 1")

    def key(node: Node):
        recent = [a for a in node.alert_log if since_tick is None or a.tick >= since_tick]
        last = max((a.tick for a in recent), default=-1)
        return (-len(recent), -last, node.node_id)

    return sorted((n for n in nodes if n.config.classifier_capable), key=key)[:k]


def aggregate_retrain(selected: Sequence[Node], config: TrainConfig = TrainConfig()) -> Model:
    """Pool the selected nodes' flow buffers, train, adopt and broadcast a new version.

    Ground-truth labels are used where a record carries one, otherwise the
    label the node predicted.
    """
    selected = [n for n in selected if n.config.classifier_capable]
    if not selected:
        raise RetrainSkipped("insufficient-data")
    pooled = []
    for node in selected:
        for record, predicted in node.collected_flows:
            label = record.label if record.label is not None else predicted
            pooled.append(_with_label(record, label))
    needed = max(2, max(n.config.retrain_batch_size for n in selected))
    if len(pooled) < needed:
        raise RetrainSkipped("insufficient-data")
    labels = {r.label for r in pooled}
    if labels != {MALICIOUS, BENIGN}:
        raise RetrainSkipped("single-class")
    version = max(n.model.version if n.model else 0 for n in selected) + 1
    model = train(pooled, config, version=version)
    for node in selected:
        node.collected_flows.clear()
        node.adopt_model(model)
    selected[0].publish(pubsub.TOPIC_MODEL_UPDATE, {"version": model.version, "model": model.to_dict()})
    return model


def _with_label(record: FlowRecord, label: int) -> FlowRecord:
    return record if record.label == label else replace(record, label=label)
