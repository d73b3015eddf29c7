"""Deterministic multi-node simulation of the detect, mint, reward, retrain loop."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import cybernft, perfmodel, pubsub
from .chain import Chain
from .classifier import FlowRecord, Model, TrainConfig, synth_dataset, synth_flow, train
from .node import Node, NodeConfig, RetrainSkipped, SimClock, aggregate_retrain, select_retrain_nodes
from .wallet import generate_keypair


class ConfigError(ValueError):
    pass


@dataclass
class TrafficMix:
    benign_count: int = 20
    malicious_count: int = 1
    # Ticks at which malicious flows arrive; sampled from the seed when empty.
    injection_schedule: list[int] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    nodes: int = 3
    seed: int = 0
    traffic_mix: TrafficMix = field(default_factory=TrafficMix)
    latency: tuple[int, int] = (1, 3)
    retrain_every: int = 0
    retrain_nodes: int = 2
    transfer_demo: bool = True
    difficulty: int = 2
    horizon: int = 30
    flows_per_tick: int = 1
    tick_seconds: float = 1.0
    hash_rate: float = 256.0
    separation: float = 8.0
    initial_train_size: int = 400
    classifier_capable: int | None = None
    max_ticks: int = 400

    def __post_init__(self):
        if isinstance(self.traffic_mix, dict):
            self.traffic_mix = TrafficMix(**_snake_keys(self.traffic_mix))
        self.latency = tuple(self.latency)
        mix = self.traffic_mix
        if self.nodes < 1:
            raise ConfigError("nodes must be >= 1")
        if mix.benign_count < 0 or mix.malicious_count < 0:
            raise ConfigError("traffic counts must be >= 0")
        if mix.injection_schedule and len(mix.injection_schedule) != mix.malicious_count:
            raise ConfigError("injection_schedule needs one tick per malicious flow")
        if any(t < 0 for t in mix.injection_schedule):
            raise ConfigError("injection ticks must be >= 0")
        if len(self.latency) != 2 or not 0 <= self.latency[0] <= self.latency[1]:
            raise ConfigError("latency must be [min, max] with 0 <= min <= max")
        if self.horizon < 1 or self.flows_per_tick < 1 or self.tick_seconds <= 0 or self.hash_rate <= 0:
            raise ConfigError("horizon, flows_per_tick, tick_seconds and hash_rate must be positive")
        if self.retrain_every < 0:
            raise ConfigError("retrain_every must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        out = _camel_keys(asdict(self))
        out["latency"] = list(self.latency)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        try:
            return cls(**_snake_keys(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _snake(name: str) -> str:
    return "".join("_" + c.lower() if c.isupper() else c for c in name)


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(p.title() for p in rest)


def _snake_keys(d: dict[str, Any]) -> dict[str, Any]:
    return {_snake(k): v for k, v in d.items()}


def _camel_keys(d: Any) -> Any:
    if isinstance(d, dict):
        return {_camel(k): _camel_keys(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_camel_keys(v) for v in d]
    return d


class Network:
    """Nodes wired to one broker; chain snapshots are fetched straight from peers."""

    def __init__(
        self,
        n_nodes: int,
        seed: int = 0,
        latency: tuple[int, int] = (1, 3),
        difficulty: int = 2,
        model: Model | None = None,
        capable: int | None = None,
        tick_ms: int = 1000,
    ):
        self.broker = pubsub.Broker(seed, latency)
        self.clock = SimClock(tick_ms=tick_ms)
        self.nodes: dict[str, Node] = {}
        capable = n_nodes if capable is None else capable
        for i in range(n_nodes):
            node_id = f"node-{i}"
            config = NodeConfig(node_id, generate_keypair(f"{seed}:{node_id}"), classifier_capable=i < capable)
            self.nodes[node_id] = Node(
                config, model, self.broker, clock=self.clock, difficulty=difficulty, fetch_chain=self.fetch
            )
        for node in self.nodes.values():
            node.peers = [p for p in self.nodes if p != node.node_id]
        self.tick = 0

    def fetch(self, node_id: str) -> Chain | None:
        node = self.nodes.get(node_id)
        return node.chain.snapshot() if node else None

    def set_tick(self, tick: int) -> None:
        self.tick = tick
        self.clock.tick = tick
        for node in self.nodes.values():
            node.tick = tick

    def deliver(self, tick: int) -> int:
        self.set_tick(tick)
        delivered = self.broker.step(tick)
        for sub, msg in delivered:
            self.nodes[sub].handle(msg)
        return len(delivered)

    def heads(self) -> dict[str, str]:
        return {nid: n.chain.head_hash for nid, n in self.nodes.items()}

    def converged(self) -> bool:
        return len(set(self.heads().values())) == 1

    def run_until_converged(self, start_tick: int, max_ticks: int) -> int | None:
        """Step the broker until every head agrees and nothing is in flight.
        Returns the tick at which that first held, or None."""
        for tick in range(start_tick, start_tick + max_ticks + 1):
            self.deliver(tick)
            if self.converged() and self.broker.pending() == 0:
                return tick
        return None


@dataclass
class _Flow:
    record: FlowRecord
    node: str
    tick: int
    malicious: bool


def _schedule_traffic(config: ScenarioConfig, rng: np.random.Generator, node_ids: list[str]) -> list[_Flow]:
    mix = config.traffic_mix
    flows = []
    mal_ticks = list(mix.injection_schedule) or sorted(
        int(t) for t in rng.integers(0, config.horizon, size=mix.malicious_count)
    )
    for k, tick in enumerate(mal_ticks):
        target = node_ids[int(rng.integers(len(node_ids)))]
        rec = synth_flow(rng, True, config.separation, src_addr=f"203.0.113.{k + 1}")
        flows.append(_Flow(rec, target, tick, True))
    for k in range(mix.benign_count):
        tick = int(rng.integers(0, config.horizon))
        target = node_ids[int(rng.integers(len(node_ids)))]
        rec = synth_flow(rng, False, config.separation, src_addr=f"10.0.{target.split('-')[-1]}.{k + 1}")
        flows.append(_Flow(rec, target, tick, False))
    flows.sort(key=lambda f: (f.tick, f.node, not f.malicious, f.record.src_addr))
    return flows


def _perf_summary(config: ScenarioConfig, total_flows: int) -> dict[str, Any]:
    mu_node = config.flows_per_tick / config.tick_seconds
    rates = [mu_node] * config.nodes
    lam = max(total_flows, 1) / (config.horizon * config.tick_seconds)
    work = perfmodel.expected_pow_work(config.difficulty)
    out: dict[str, Any] = {
        "serviceRates": rates,
        "arrivalRate": lam,
        "hashRate": config.hash_rate,
        "work": work,
        "mttd": perfmodel.mttd(rates),
        "blockTime": perfmodel.block_time_model(work, config.hash_rate),
    }
    try:
        breakdown = perfmodel.mttr_breakdown(perfmodel.QueueParams(lam, sum(rates)), work, config.hash_rate)
        out.update(wq=breakdown.wq, mttr=breakdown.total)
    except perfmodel.UnstableQueue:
        out.update(wq=None, mttr=None)
    return out


def _latency_summary(ticks: list[int], tick_seconds: float) -> dict[str, Any]:
    if not ticks:
        return {"samples": [], "meanTicks": None, "meanSeconds": None}
    mean = sum(ticks) / len(ticks)
    return {"samples": ticks, "meanTicks": mean, "meanSeconds": mean * tick_seconds}


def run_scenario(config: ScenarioConfig) -> dict[str, Any]:
    """Run one seeded scenario and return a JSON-ready report."""
    rng = np.random.default_rng(config.seed)
    initial = train(
        synth_dataset(config.seed, config.initial_train_size, config.separation),
        TrainConfig(seed=config.seed),
        version=1,
    )
    net = Network(
        config.nodes, config.seed, config.latency, config.difficulty, initial,
        config.classifier_capable, int(round(config.tick_seconds * 1000)),
    )
    node_ids = list(net.nodes)
    flows = _schedule_traffic(config, rng, node_ids)
    by_tick: dict[int, list[_Flow]] = {}
    for f in flows:
        by_tick.setdefault(f.tick, []).append(f)
    inbox: dict[str, deque] = {nid: deque() for nid in node_ids}
    last_injection = max((f.tick for f in flows), default=0)

    trace: list[dict[str, Any]] = []
    detection: list[int] = []
    alert_ticks: dict[str, int] = {}
    reaction: dict[str, int] = {}
    transfers: list[dict[str, Any]] = []
    retrains: list[dict[str, Any]] = []
    transferee = generate_keypair(f"{config.seed}:transferee").address
    last_retrain = 0
    end_tick = None

    for tick in range(config.max_ticks):
        net.deliver(tick)
        for f in by_tick.get(tick, ()):
            inbox[f.node].append(f)
            trace.append({"tick": tick, "node": f.node, "event": "flow-injected",
                          "sourceAddr": f.record.src_addr, "malicious": f.malicious})
        for nid in node_ids:
            node = net.nodes[nid]
            for _ in range(config.flows_per_tick):
                if not inbox[nid]:
                    break
                f = inbox[nid].popleft()
                alert = node.on_flow(f.record)
                if alert is not None:
                    detection.append(tick - f.tick)
                    alert_ticks[alert.token_id] = tick

        for tid, t_alert in alert_ticks.items():
            if tid not in reaction and all(
                cybernft.is_minted(n.chain, tid) for n in net.nodes.values()
            ):
                reaction[tid] = tick - t_alert

        if config.transfer_demo and not transfers and reaction:
            tid = min(reaction, key=lambda k: (alert_ticks[k], k))
            owner_addr = cybernft.owner_of(net.nodes[node_ids[0]].chain, tid)
            owner = next(n for n in net.nodes.values() if n.address == owner_addr)
            cybernft.transfer_nft(owner.chain, tid, owner.config.keypair, transferee)
            block = owner.chain.mine_pending(owner.address)
            owner.announce_chain()
            transfers.append({"tokenId": tid, "from": owner_addr, "to": transferee,
                              "tick": tick, "blockHash": block.hash})
            trace.append({"tick": tick, "node": owner.node_id, "event": "nft-transfer",
                          "tokenId": tid, "to": transferee, "blockHash": block.hash})

        if config.retrain_every and tick - last_retrain >= config.retrain_every:
            last_retrain = tick
            chosen = select_retrain_nodes(list(net.nodes.values()), config.retrain_nodes)
            entry = {"tick": tick, "nodes": [n.node_id for n in chosen]}
            try:
                model = aggregate_retrain(chosen, TrainConfig(seed=config.seed + tick))
                entry.update(status="trained", version=model.version, trainedOn=model.trained_on)
            except RetrainSkipped as exc:
                entry.update(status="skipped", reason=exc.reason)
            retrains.append(entry)
            trace.append({"tick": tick, "node": "-", "event": "retrain", **entry})

        idle = (
            tick >= last_injection
            and not any(inbox.values())
            and net.broker.pending() == 0
            and net.converged()
        )
        # Once idle and converged nothing changes, so a transfer can only still
        # be owed if some discovery has already been confirmed everywhere.
        if idle and (not config.transfer_demo or transfers or not reaction):
            end_tick = tick
            break

    for node in net.nodes.values():
        trace.extend(node.events)
    trace.sort(key=lambda e: (e["tick"], e["node"], e["event"], json.dumps(e, sort_keys=True)))

    return _build_report(config, net, flows, trace, detection, reaction, transfers, retrains, end_tick)


def _build_report(config, net, flows, trace, detection, reaction, transfers, retrains, end_tick):
    reference = net.nodes[next(iter(net.nodes))].chain
    registry = cybernft.list_nfts(reference)
    balances = reference.balances()
    mined_blocks = len(reference) - 1
    alerts = sorted(
        (dict(a.to_dict(), node=n.node_id) for n in net.nodes.values() for a in n.alert_log),
        key=lambda a: (a["tick"], a["node"]),
    )
    mints_per_token: dict[str, int] = {}
    for block in reference.chain:
        for tx in block.transactions:
            if tx.is_coinbase and cybernft.NFT_KEY in tx.metadata:
                tid = tx.metadata[cybernft.NFT_KEY]
                mints_per_token[tid] = mints_per_token.get(tid, 0) + 1

    invariants = {
        "headsConverged": net.converged(),
        "chainsValid": all(bool(n.chain.validate()) for n in net.nodes.values()),
        "rewardConservation": sum(balances.values()) == reference.mining_reward * mined_blocks,
        "nftUnique": all(v == 1 for v in mints_per_token.values()),
        "quarantineSound": all(
            n.quarantined.get(a.source_addr) == a.tick for n in net.nodes.values() for a in n.alert_log
        ),
        "modelVersionMonotonic": all(
            all(a <= b for a, b in zip(n.model_versions, n.model_versions[1:])) for n in net.nodes.values()
        ),
        "finishedWithinMaxTicks": end_tick is not None,
    }
    if config.transfer_demo and transfers:
        t = transfers[0]
        invariants["transferConfirmed"] = all(
            cybernft.owner_of(n.chain, t["tokenId"]) == t["to"] for n in net.nodes.values()
        )

    return {
        "config": config.to_dict(),
        "endTick": end_tick,
        "summary": {
            "flows": len(flows),
            "maliciousFlows": sum(f.malicious for f in flows),
            "alerts": len(alerts),
            "mints": len(registry),
            "transfers": len(transfers),
            "blocks": mined_blocks,
            "retrains": sum(r["status"] == "trained" for r in retrains),
        },
        "nodes": {
            nid: {
                "address": n.address,
                "headHash": n.chain.head_hash,
                "chainLength": len(n.chain),
                "balance": n.chain.balance_of(n.address),
                "modelVersion": n.model.version if n.model else None,
                "quarantined": sorted(n.quarantined),
                "classifierCapable": n.config.classifier_capable,
            }
            for nid, n in net.nodes.items()
        },
        "nfts": [nft.to_dict() for nft in registry],
        "balances": dict(sorted(balances.items())),
        "alerts": alerts,
        "transfers": transfers,
        "retrains": retrains,
        "latency": {
            "detection": _latency_summary(detection, config.tick_seconds),
            "reaction": _latency_summary([reaction[k] for k in sorted(reaction)], config.tick_seconds),
        },
        "perf": _perf_summary(config, len(flows)),
        "invariants": invariants,
        "ok": all(invariants.values()),
        "trace": trace,
    }


def report_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def render_report(report: dict[str, Any]) -> str:
    s = report["summary"]
    lines = [
        f"scenario seed={report['config']['seed']} nodes={report['config']['nodes']} end tick={report['endTick']}",
        f"flows {s['flows']} (malicious {s['maliciousFlows']})  alerts {s['alerts']}  mints {s['mints']}  "
        f"transfers {s['transfers']}  blocks {s['blocks']}  retrains {s['retrains']}",
        "",
        f"{'node':<8} {'len':>4} {'balance':>8} {'model':>5}  head",
    ]
    for nid, n in report["nodes"].items():
        lines.append(f"{nid:<8} {n['chainLength']:>4} {n['balance']:>8} {str(n['modelVersion']):>5}  {n['headHash'][:16]}")
    lat, perf = report["latency"], report["perf"]

    def fmt(x):
        return "n/a" if x is None else f"{x:.4g}"

    lines += [
        "",
        f"detection latency  {fmt(lat['detection']['meanSeconds'])} s   model MTTD {fmt(perf['mttd'])} s",
        f"reaction latency   {fmt(lat['reaction']['meanSeconds'])} s   model MTTR {fmt(perf['mttr'])} s "
        f"(Wq {fmt(perf['wq'])} + T {fmt(perf['blockTime'])})",
        "",
    ]
    lines += [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in report["invariants"].items()]
    return "\n".join(lines) + "\n"
