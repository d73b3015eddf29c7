"""Tick-driven in-process publish/subscribe broker shared by simulated nodes."""
from __future__ import annotations

import heapq
import json
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Any

TOPIC_CHAIN_UPDATED = "chain.updated"
TOPIC_ALERT = "alert.intrusion"
TOPIC_MODEL_UPDATE = "model.update"
TOPICS = (TOPIC_CHAIN_UPDATED, TOPIC_ALERT, TOPIC_MODEL_UPDATE)


def encode_event(event: dict[str, Any]) -> bytes:
    return json.dumps(event, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class Message:
    topic: str
    payload: bytes
    publisher_id: str
    seq: int
    enqueue_tick: int

    def event(self) -> dict[str, Any]:
        return json.loads(self.payload)


class Broker:
    """Topics appear on first use. Each delivery is delayed by a seeded
    uniform integer latency in ``[latency[0], latency[1]]`` ticks, never
    overtaking an earlier message on the same publisher/subscriber channel."""

    def __init__(self, seed: int = 0, latency: tuple[int, int] = (1, 3)):
        lo, hi = latency
        if lo < 0 or hi < lo:
            raise ValueError("latency must satisfy 0 <= min <= max")
        self.latency = (int(lo), int(hi))
        self.tick = 0
        self.subscriptions: dict[str, list[str]] = {}
        self._rng = random.Random(seed)
        self._seq: dict[str, int] = defaultdict(int)
        self._channel_tail: dict[tuple[str, str], int] = {}
        self._queue: list[tuple[int, str, int, str, Message]] = []

    @property
    def topics(self) -> set[str]:
        return set(self.subscriptions)

    def create_topic(self, topic: str) -> None:
        self.subscriptions.setdefault(topic, [])

    def delete_topic(self, topic: str) -> None:
        self.subscriptions.pop(topic, None)

    def subscribe(self, node_id: str, topic: str) -> None:
        members = self.subscriptions.setdefault(topic, [])
        if node_id not in members:
            members.append(node_id)

    def unsubscribe(self, node_id: str, topic: str) -> None:
        members = self.subscriptions.get(topic)
        if members and node_id in members:
            members.remove(node_id)

    def subscribers(self, topic: str) -> list[str]:
        return list(self.subscriptions.get(topic, ()))

    def pending(self) -> int:
        return len(self._queue)

    def publish(self, publisher_id: str, topic: str, payload: bytes | dict[str, Any]) -> Message:
        if isinstance(payload, dict):
            payload = encode_event(payload)
        self.create_topic(topic)
        seq = self._seq[publisher_id]
        self._seq[publisher_id] = seq + 1
        msg = Message(topic, payload, publisher_id, seq, self.tick)
        for sub in self.subscriptions[topic]:
            if sub == publisher_id:
                continue
            due = self.tick + self._rng.randint(*self.latency)
            channel = (publisher_id, sub)
            due = max(due, self._channel_tail.get(channel, due))
            self._channel_tail[channel] = due
            heapq.heappush(self._queue, (due, publisher_id, seq, sub, msg))
        return msg

    def step(self, until_tick: int) -> list[tuple[str, Message]]:
        """Deliver everything due at or before ``until_tick`` and advance the clock."""
        if until_tick < self.tick:
            raise ValueError("cannot step backwards")
        delivered = []
        while self._queue and self._queue[0][0] <= until_tick:
            _, _, _, sub, msg = heapq.heappop(self._queue)
            delivered.append((sub, msg))
        self.tick = until_tick
        return delivered
