"""JSON-over-HTTP interface to one node.

Mutating requests carry the caller's private key as ``key`` in the JSON body.
Doing so is only acceptable on a trusted local network: anyone who sees the
request can spend from the account. Keys in the query string are refused so
they never land in access logs.
"""
from __future__ import annotations

import json
import logging
import re
import ssl
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import urlsplit

from . import cybernft
from .chain import Chain, ChainFileError, Transaction, TransactionRejected
from .node import Node
from .wallet import MalformedKeyError, keypair_from_private

log = logging.getLogger(__name__)

STATUS = {
    "bad-request": 400,
    "bad-signature": 400,
    "invalid-chain": 400,
    "not-owner": 403,
    "unknown-token": 404,
    "not-found": 404,
    "duplicate": 409,
    "overdraft": 409,
}


class ApiError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code
        self.message = message or code

    @property
    def http_status(self) -> int:
        return STATUS[self.code]

    def to_dict(self) -> dict[str, Any]:
        return {"error": {"code": self.code, "message": self.message, "httpStatus": self.http_status}}


def _keypair(body: dict[str, Any]):
    key = body.get("key")
    if not isinstance(key, str) or not key:
        raise ApiError("bad-request", "missing 'key'")
    try:
        return keypair_from_private(key)
    except MalformedKeyError as exc:
        raise ApiError("bad-request", str(exc)) from exc


def _metadata(body: dict[str, Any]) -> dict[str, str]:
    metadata = body.get("metadata", {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise ApiError("bad-request", "metadata must map strings to strings")
    return metadata


def fetch_remote_chain(base_url: str, timeout: float = 5.0) -> Chain:
    with urllib.request.urlopen(base_url.rstrip("/") + "/chain", timeout=timeout) as resp:
        return Chain.from_dict(json.loads(resp.read()), validate=False)


class NodeApi:
    """Routes requests to node operations. Usable without a socket."""

    def __init__(self, node: Node, on_change: Callable[[Node], None] | None = None):
        self.node = node
        self.on_change = on_change
        self.routes = [
            ("GET", re.compile(r"/chain"), self.get_chain),
            ("GET", re.compile(r"/blocks/(\d+)"), self.get_block),
            ("GET", re.compile(r"/pending"), self.get_pending),
            ("GET", re.compile(r"/balance/([^/]+)"), self.get_balance),
            ("GET", re.compile(r"/nfts"), self.get_nfts),
            ("GET", re.compile(r"/nfts/([0-9a-zA-Z]+)"), self.get_nft),
            ("GET", re.compile(r"/alerts"), self.get_alerts),
            ("GET", re.compile(r"/peers"), self.get_peers),
            ("POST", re.compile(r"/transactions"), self.post_transaction),
            ("POST", re.compile(r"/mine"), self.post_mine),
            ("POST", re.compile(r"/nfts/([0-9a-zA-Z]+)/transfer"), self.post_transfer),
            ("POST", re.compile(r"/peers"), self.post_peer),
        ]

    @property
    def chain(self) -> Chain:
        return self.node.chain

    def dispatch(self, method: str, target: str, body: bytes = b"") -> tuple[int, Any]:
        parts = urlsplit(target)
        try:
            if "key=" in parts.query:
                raise ApiError("bad-request", "send 'key' in the JSON body, not the query string")
            payload: dict[str, Any] = {}
            if method == "POST":
                try:
                    payload = json.loads(body or b"{}")
                except json.JSONDecodeError as exc:
                    raise ApiError("bad-request", f"invalid JSON: {exc}") from exc
                if not isinstance(payload, dict):
                    raise ApiError("bad-request", "body must be a JSON object")
            for verb, pattern, handler in self.routes:
                match = pattern.fullmatch(parts.path.rstrip("/") or "/")
                if verb == method and match:
                    result = handler(*match.groups(), **({"body": payload} if verb == "POST" else {}))
                    if verb == "POST" and self.on_change:
                        self.on_change(self.node)
                    return 200, result
            raise ApiError("not-found", f"no route for {method} {parts.path}")
        except ApiError as exc:
            return exc.http_status, exc.to_dict()

    # -- reads --

    def get_chain(self):
        return self.chain.to_dict()

    def get_block(self, index: str):
        i = int(index)
        with self.chain.lock:
            if i >= len(self.chain):
                raise ApiError("not-found", f"no block {i}")
            return self.chain.chain[i].to_dict()

    def get_pending(self):
        with self.chain.lock:
            return [tx.to_dict() for tx in self.chain.pending_transactions]

    def get_balance(self, address: str):
        return {"address": address, "balance": self.chain.balance_of(address)}

    def get_nfts(self):
        return [nft.to_dict() for nft in cybernft.list_nfts(self.chain)]

    def get_nft(self, token_id: str):
        with self.chain.lock:
            registry = cybernft.scan_registry(self.chain.chain)
        if token_id not in registry:
            raise ApiError("unknown-token", token_id)
        return registry[token_id].to_dict()

    def get_alerts(self):
        return [a.to_dict() for a in self.node.alert_log]

    def get_peers(self):
        return list(self.node.peers)

    # -- writes --

    def post_transaction(self, body):
        keypair = _keypair(body)
        claimed = body.get("fromAddress")
        to_address, amount = body.get("toAddress"), body.get("amount")
        if not isinstance(to_address, str) or not isinstance(amount, int) or isinstance(amount, bool):
            raise ApiError("bad-request", "toAddress (string) and amount (integer) are required")
        tx = Transaction(keypair.address, to_address, amount, _metadata(body), self.chain.clock())
        tx.sign(keypair)
        if claimed is not None and claimed != keypair.address:
            # The signature is made with the supplied key, so it cannot verify for another address.
            tx.from_address = claimed
        try:
            self.chain.add_transaction(tx)
        except TransactionRejected as exc:
            raise ApiError("bad-request" if exc.reason == "malformed" else exc.reason, str(exc)) from exc
        return tx.to_dict()

    def post_mine(self, body):
        keypair = _keypair(body)
        try:
            block = self.chain.mine_pending(keypair.address, _metadata(body))
        except TransactionRejected as exc:
            raise ApiError("bad-request", str(exc)) from exc
        self.node.announce_chain()
        return block.to_dict()

    def post_transfer(self, token_id: str, body):
        keypair = _keypair(body)
        to_address = body.get("toAddress")
        if not isinstance(to_address, str) or not to_address:
            raise ApiError("bad-request", "toAddress is required")
        try:
            tx = cybernft.transfer_nft(self.chain, token_id, keypair, to_address)
        except cybernft.NFTRejected as exc:
            raise ApiError(exc.reason, str(exc)) from exc
        except TransactionRejected as exc:
            raise ApiError(exc.reason, str(exc)) from exc
        return tx.to_dict()

    def post_peer(self, body):
        base_url = body.get("baseUrl")
        if not isinstance(base_url, str) or not base_url.startswith(("http://", "https://")):
            raise ApiError("bad-request", "baseUrl must be an http(s) URL")
        if base_url not in self.node.peers:
            self.node.peers.append(base_url)
        try:
            outcome = self.chain.replace_chain(fetch_remote_chain(base_url))
            sync = "replaced" if outcome else outcome.reason
        except (urllib.error.URLError, OSError, ValueError, ChainFileError) as exc:
            log.info("peer %s unreachable: %s", base_url, exc)
            sync = "unreachable"
        return {"peers": list(self.node.peers), "sync": sync}


@dataclass
class ApiServer:
    httpd: ThreadingHTTPServer
    thread: threading.Thread
    url: str

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)

    def __enter__(self) -> "ApiServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _handler_for(api: NodeApi):
    class Handler(BaseHTTPRequestHandler):
        def _respond(self, status: int, payload: Any) -> None:
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            self._respond(*api.dispatch("GET", self.path))

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            self._respond(*api.dispatch("POST", self.path, self.rfile.read(length)))

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

    return Handler


def serve(
    node: Node,
    bind: tuple[str, int] = ("127.0.0.1", 0),
    ssl_context: ssl.SSLContext | None = None,
    on_change: Callable[[Node], None] | None = None,
) -> ApiServer:
    """Start serving in a background thread. Port 0 picks a free port."""
    api = NodeApi(node, on_change)
    httpd = ThreadingHTTPServer(bind, _handler_for(api))
    scheme = "http"
    if ssl_context is not None:
        httpd.socket = ssl_context.wrap_socket(httpd.socket, server_side=True)
        scheme = "https"
    host, port = httpd.server_address[:2]
    thread = threading.Thread(target=httpd.serve_forever, name=f"api-{node.node_id}", daemon=True)
    thread.start()
    return ApiServer(httpd, thread, f"{scheme}://{host}:{port}")
