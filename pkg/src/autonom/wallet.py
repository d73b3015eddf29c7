"""secp256k1 key pairs; an account address is the uncompressed public key in hex."""
from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import Prehashed

CURVE = ec.SECP256K1()
CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141

# RFC 6979 nonces: identical (key, digest) pairs always give identical signatures.
_ALGORITHM = ec.ECDSA(Prehashed(hashes.SHA256()), deterministic_signing=True)


class MalformedKeyError(ValueError):
    pass


@dataclass(frozen=True)
class KeyPair:
    private_key: str
    public_key: str

    @property
    def address(self) -> str:
        return self.public_key

    def to_dict(self) -> dict:
        return {"privateKey": self.private_key, "publicKey": self.public_key}


def _private_from_hex(private_key: str) -> ec.EllipticCurvePrivateKey:
    try:
        scalar = int(private_key, 16)
    except (TypeError, ValueError) as exc:
        raise MalformedKeyError(f"private key is not hex: {private_key!r}") from exc
    if not 0 < scalar < CURVE_ORDER:
        raise MalformedKeyError("private key scalar out of range")
    return ec.derive_private_key(scalar, CURVE)


def _public_from_hex(public_key: str) -> ec.EllipticCurvePublicKey:
    try:
        raw = bytes.fromhex(public_key)
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, raw)
    except (TypeError, ValueError) as exc:
        raise MalformedKeyError(f"not an encoded secp256k1 point: {public_key!r}") from exc


def _encode_public(key: ec.EllipticCurvePublicKey) -> str:
    return key.public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
    ).hex()


def public_key_of(private_key: str) -> str:
    return _encode_public(_private_from_hex(private_key).public_key())


def keypair_from_private(private_key: str) -> KeyPair:
    private_key = private_key.lower()
    return KeyPair(private_key=private_key, public_key=public_key_of(private_key))


def generate_keypair(seed: bytes | str | int | None = None) -> KeyPair:
    """Create a key pair, deterministically when ``seed`` is given.

    A seed of any type is hashed with SHA-256 and reduced into [1, n-1].
    """
    if seed is None:
        scalar = secrets.randbelow(CURVE_ORDER - 1) + 1
    else:
        if isinstance(seed, int):
            seed = str(seed)
        if isinstance(seed, str):
            seed = seed.encode("utf-8")
        scalar = int.from_bytes(hashlib.sha256(seed).digest(), "big") % (CURVE_ORDER - 1) + 1
    return keypair_from_private(f"{scalar:064x}")


def sign(private_key: str, digest: bytes) -> str:
    """Sign a 32-byte digest; returns the DER signature as hex."""
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    return _private_from_hex(private_key).sign(digest, _ALGORITHM).hex()


def verify(public_key: str, digest: bytes, signature: str) -> bool:
    key = _public_from_hex(public_key)
    if len(digest) != 32:
        return False
    try:
        key.verify(bytes.fromhex(signature), digest, _ALGORITHM)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True
