import datetime
import ipaddress
import json
import ssl
import urllib.error
import urllib.request

import pytest
from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import NameOID

from autonom import cybernft
from autonom.chain import Chain, Transaction, load_chain, save_chain
from autonom.cybernft import IntrusionSignature, token_id
from autonom.netapi import NodeApi, serve
from autonom.node import Node, NodeConfig
from autonom.wallet import generate_keypair

from conftest import StepClock


def make_node(name="api", clock=None):
    chain = Chain(2, clock=clock or StepClock())
    return Node(NodeConfig(name, generate_keypair(name)), chain=chain)


def call(url, method="GET", body=None, context=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(url, data=data, method=method, headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10, context=context) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


@pytest.fixture
def server():
    node = make_node()
    with serve(node) as srv:
        yield srv, node


def test_fresh_chain(server):
    srv, _ = server
    status, doc = call(srv.url + "/chain")
    assert status == 200 and doc == Chain().to_dict()
    assert call(srv.url + "/blocks/0")[1]["previousHash"] == "0"
    assert call(srv.url + "/blocks/7")[0] == 404
    assert call(srv.url + "/nowhere")[0] == 404


def test_mine_credits_caller(server, alice):
    srv, node = server
    status, block = call(srv.url + "/mine", "POST", {"key": alice.private_key, "metadata": {}})
    assert status == 200 and block["transactions"][-1]["amount"] == 10
    assert call(srv.url + f"/balance/{alice.address}")[1] == {"address": alice.address, "balance": 10}
    assert len(node.chain) == 2


def test_transaction_errors(server, alice, bob):
    srv, _ = server
    call(srv.url + "/mine", "POST", {"key": alice.private_key})
    status, err = call(srv.url + "/transactions", "POST",
                       {"key": bob.private_key, "fromAddress": alice.address, "toAddress": bob.address, "amount": 1})
    assert status == 400 and err["error"]["code"] == "bad-signature"
    status, tx = call(srv.url + "/transactions", "POST",
                      {"key": alice.private_key, "toAddress": bob.address, "amount": 7, "metadata": {"m": "x"}})
    assert status == 200 and tx["fromAddress"] == alice.address and "signature" in tx
    assert len(call(srv.url + "/pending")[1]) == 1
    status, err = call(srv.url + "/transactions", "POST",
                       {"key": alice.private_key, "toAddress": bob.address, "amount": 7})
    assert (status, err["error"]["code"]) == (409, "overdraft")
    assert call(srv.url + "/transactions", "POST", {"key": alice.private_key, "toAddress": bob.address,
                                                    "amount": "7"})[0] == 400
    assert call(srv.url + "/mine", "POST", {"metadata": {}})[0] == 400
    assert call(srv.url + "/mine", "POST", {"key": "nothex"})[0] == 400


def test_key_in_query_string_refused(server, alice):
    srv, node = server
    status, err = call(srv.url + f"/mine?key={alice.private_key}", "POST", {"key": alice.private_key})
    assert status == 400 and "body" in err["error"]["message"]
    assert len(node.chain) == 1


def test_malformed_body(server):
    srv, _ = server
    req = urllib.request.Request(srv.url + "/mine", data=b"{oops", method="POST")
    with pytest.raises(urllib.error.HTTPError) as exc:
        urllib.request.urlopen(req, timeout=10)
    assert exc.value.code == 400


def test_nft_endpoints(server, alice, bob):
    srv, node = server
    sig = IntrusionSignature("api", (1.0, 2.0), "malicious", 0)
    tid = token_id(sig)
    assert call(srv.url + f"/nfts/{tid}")[0] == 404
    cybernft.mint_discovery(node.chain, alice.address, sig)
    status, nfts = call(srv.url + "/nfts")
    assert status == 200 and [n["tokenId"] for n in nfts] == [tid]
    status, err = call(srv.url + f"/nfts/{tid}/transfer", "POST", {"key": bob.private_key, "toAddress": bob.address})
    assert (status, err["error"]["code"]) == (403, "not-owner")
    unknown = "ab" * 32
    assert call(srv.url + f"/nfts/{unknown}/transfer", "POST",
                {"key": alice.private_key, "toAddress": bob.address})[0] == 404
    status, _ = call(srv.url + f"/nfts/{tid}/transfer", "POST", {"key": alice.private_key, "toAddress": bob.address})
    assert status == 200
    call(srv.url + "/mine", "POST", {"key": alice.private_key})
    assert call(srv.url + f"/nfts/{tid}")[1]["currentOwner"] == bob.address


def test_gets_are_repeatable(server, alice):
    srv, _ = server
    call(srv.url + "/mine", "POST", {"key": alice.private_key})
    for path in ("/chain", "/pending", "/nfts", "/alerts", "/peers", f"/balance/{alice.address}"):
        assert call(srv.url + path) == call(srv.url + path)


def test_peer_sync(alice):
    a, b = make_node("a"), make_node("b")
    with serve(a) as sa, serve(b) as sb:
        call(sa.url + "/mine", "POST", {"key": alice.private_key})
        status, out = call(sb.url + "/peers", "POST", {"baseUrl": sa.url})
        assert status == 200 and out["sync"] == "replaced"
        assert b.chain.head_hash == a.chain.head_hash
        assert call(sb.url + "/peers")[1] == [sa.url]
        assert call(sb.url + "/peers", "POST", {"baseUrl": sa.url})[1]["sync"] == "not-longer"
        assert call(sb.url + "/peers", "POST", {"baseUrl": "ftp://x"})[0] == 400
        assert call(sb.url + "/peers", "POST", {"baseUrl": "http://127.0.0.1:9"})[1]["sync"] == "unreachable"


def test_api_matches_direct_calls(alice, bob):
    via_api, direct = make_node("eq"), make_node("eq")
    api = NodeApi(via_api)
    api.dispatch("POST", "/mine", json.dumps({"key": alice.private_key}).encode())
    api.dispatch("POST", "/transactions",
                 json.dumps({"key": alice.private_key, "toAddress": bob.address, "amount": 3}).encode())
    api.dispatch("POST", "/mine", json.dumps({"key": bob.private_key, "metadata": {"k": "v"}}).encode())

    direct.chain.mine_pending(alice.address)
    tx = Transaction(alice.address, bob.address, 3, {}, direct.chain.clock()).sign(alice)
    direct.chain.add_transaction(tx)
    direct.chain.mine_pending(bob.address, {"k": "v"})
    assert via_api.chain.to_dict() == direct.chain.to_dict()


def test_on_change_persists(tmp_path, alice):
    node = make_node()
    path = tmp_path / "chain.json"
    api = NodeApi(node, on_change=lambda n: save_chain(n.chain, path))
    api.dispatch("POST", "/mine", json.dumps({"key": alice.private_key}).encode())
    assert load_chain(path) == node.chain


def _self_signed(tmp_path):
    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "localhost")])
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder().subject_name(name).issuer_name(name).public_key(key.public_key())
        .serial_number(x509.random_serial_number()).not_valid_before(now - datetime.timedelta(days=1))
        .not_valid_after(now + datetime.timedelta(days=1))
        .add_extension(x509.SubjectAlternativeName([x509.IPAddress(ipaddress.ip_address("127.0.0.1"))]),
                       critical=False)
        .sign(key, hashes.SHA256())
    )
    cert_path, key_path = tmp_path / "cert.pem", tmp_path / "key.pem"
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                                           serialization.NoEncryption()))
    return cert_path, key_path


def test_tls(tmp_path):
    cert, key = _self_signed(tmp_path)
    server_ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    server_ctx.load_cert_chain(cert, key)
    client_ctx = ssl.create_default_context(cafile=str(cert))
    with serve(make_node(), ssl_context=server_ctx) as srv:
        assert srv.url.startswith("https://")
        status, doc = call(srv.url + "/chain", context=client_ctx)
        assert status == 200 and len(doc["chain"]) == 1
