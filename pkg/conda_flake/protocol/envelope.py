"""
Seed envelopes: the leader's seed, encrypted for one recipient and signed by
the leader, relayed unopened by the function party.

The crypto schemes sit behind `CryptoSuite`; `SealedBoxSuite` is the default
(Ed25519 signatures, X25519 + HKDF-SHA256 + AES-256-GCM encryption).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Protocol, Tuple

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from conda_flake.exceptions import DecryptionError, EnvelopeError, SignatureError
from conda_flake.linalg import MaskDims
from conda_flake.protocol.wire import encode_party_id

if TYPE_CHECKING:
    from conda_flake.protocol.registry import PartyKeys, RegistryEntry

SEED_PLAINTEXT = struct.Struct("<QQQ")
ENVELOPE_HEADER = struct.Struct("<8s8sII")
HKDF_INFO_SEED = b"flake-seed-envelope"
NONCE_BYTES = 12
KEY_BYTES = 32


class CryptoSuite(Protocol):
    def generate_signing_key(self) -> Tuple[bytes, bytes]: ...

    def generate_encryption_key(self) -> Tuple[bytes, bytes]: ...

    def sign(self, message: bytes, private_key: bytes) -> bytes: ...

    def verify(self, signature: bytes, message: bytes, public_key: bytes) -> None: ...

    def seal(self, plaintext: bytes, public_key: bytes, associated: bytes) -> bytes: ...

    def unseal(self, ciphertext: bytes, private_key: bytes, associated: bytes) -> bytes: ...


def _raw_public(key) -> bytes:
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def _raw_private(key) -> bytes:
    return key.private_bytes(
        serialization.Encoding.Raw,
        serialization.PrivateFormat.Raw,
        serialization.NoEncryption(),
    )


def _derive_key(shared: bytes) -> bytes:
    hkdf = HKDF(algorithm=hashes.SHA256(), length=KEY_BYTES, salt=None, info=HKDF_INFO_SEED)
    return hkdf.derive(shared)


class SealedBoxSuite:
    """
    ``seal`` output is ``ephemeral X25519 public key | nonce | AES-GCM ciphertext``;
    the AES key is HKDF-SHA256 over the ephemeral-static X25519 secret.
    """

    def generate_signing_key(self) -> Tuple[bytes, bytes]:
        key = Ed25519PrivateKey.generate()
        return _raw_private(key), _raw_public(key.public_key())

    def generate_encryption_key(self) -> Tuple[bytes, bytes]:
        key = X25519PrivateKey.generate()
        return _raw_private(key), _raw_public(key.public_key())

    def sign(self, message: bytes, private_key: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private_key).sign(message)

    def verify(self, signature: bytes, message: bytes, public_key: bytes) -> None:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError) as exc:
            raise SignatureError(f"signature verification failed: {exc!r}")

    def seal(self, plaintext: bytes, public_key: bytes, associated: bytes) -> bytes:
        ephemeral = X25519PrivateKey.generate()
        shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(public_key))
        nonce = os.urandom(NONCE_BYTES)
        sealed = AESGCM(_derive_key(shared)).encrypt(nonce, plaintext, associated)
        return _raw_public(ephemeral.public_key()) + nonce + sealed

    def unseal(self, ciphertext: bytes, private_key: bytes, associated: bytes) -> bytes:
        if len(ciphertext) < KEY_BYTES + NONCE_BYTES:
            raise DecryptionError("ciphertext is too short")
        ephemeral = X25519PublicKey.from_public_bytes(ciphertext[:KEY_BYTES])
        nonce = ciphertext[KEY_BYTES : KEY_BYTES + NONCE_BYTES]
        try:
            shared = X25519PrivateKey.from_private_bytes(private_key).exchange(ephemeral)
            return AESGCM(_derive_key(shared)).decrypt(
                nonce, ciphertext[KEY_BYTES + NONCE_BYTES :], associated
            )
        except (InvalidTag, ValueError) as exc:
            raise DecryptionError(f"envelope does not decrypt with this key: {exc!r}")


DEFAULT_SUITE = SealedBoxSuite()


@dataclass(frozen=True)
class SeedEnvelope:
    sender_id: str
    recipient_id: str
    ciphertext: bytes
    signature: bytes

    def signed_message(self) -> bytes:
        return _signed_message(self.sender_id, self.recipient_id, self.ciphertext)

    def to_bytes(self) -> bytes:
        header = ENVELOPE_HEADER.pack(
            encode_party_id(self.sender_id),
            encode_party_id(self.recipient_id),
            len(self.ciphertext),
            len(self.signature),
        )
        return header + self.ciphertext + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "SeedEnvelope":
        if len(data) < ENVELOPE_HEADER.size:
            raise EnvelopeError("envelope is shorter than its header")
        sender, recipient, ct_len, sig_len = ENVELOPE_HEADER.unpack_from(data)
        body = data[ENVELOPE_HEADER.size :]
        if len(body) != ct_len + sig_len:
            raise EnvelopeError("envelope lengths do not match its body")
        return cls(
            sender_id=sender.rstrip(b"\0").decode("ascii"),
            recipient_id=recipient.rstrip(b"\0").decode("ascii"),
            ciphertext=body[:ct_len],
            signature=body[ct_len:],
        )


def _signed_message(sender_id: str, recipient_id: str, ciphertext: bytes) -> bytes:
    return encode_party_id(sender_id) + encode_party_id(recipient_id) + ciphertext


def seal_seed(
    seed: int,
    dims: MaskDims,
    recipient: "RegistryEntry",
    sender_keys: "PartyKeys",
    suite: Optional[CryptoSuite] = None,
) -> SeedEnvelope:
    suite = suite or DEFAULT_SUITE
    associated = encode_party_id(sender_keys.party_id) + encode_party_id(recipient.party_id)
    plaintext = SEED_PLAINTEXT.pack(seed, dims.f, dims.k)
    ciphertext = suite.seal(plaintext, recipient.encryption_key, associated)
    signature = suite.sign(
        _signed_message(sender_keys.party_id, recipient.party_id, ciphertext),
        sender_keys.signing_private,
    )
    return SeedEnvelope(sender_keys.party_id, recipient.party_id, ciphertext, signature)


def open_seed(
    envelope: SeedEnvelope,
    recipient_keys: "PartyKeys",
    sender: "RegistryEntry",
    suite: Optional[CryptoSuite] = None,
) -> Tuple[int, MaskDims]:
    suite = suite or DEFAULT_SUITE
    if envelope.sender_id != sender.party_id:
        raise SignatureError(
            f"envelope claims sender {envelope.sender_id!r}, expected {sender.party_id!r}"
        )
    suite.verify(envelope.signature, envelope.signed_message(), sender.signing_key)
    if envelope.recipient_id != recipient_keys.party_id:
        raise DecryptionError(
            f"envelope is addressed to {envelope.recipient_id!r}, not {recipient_keys.party_id!r}"
        )
    associated = encode_party_id(envelope.sender_id) + encode_party_id(envelope.recipient_id)
    plaintext = suite.unseal(envelope.ciphertext, recipient_keys.encryption_private, associated)
    if len(plaintext) != SEED_PLAINTEXT.size:
        raise DecryptionError("seed envelope has an unexpected plaintext length")
    seed, f, k = SEED_PLAINTEXT.unpack(plaintext)
    return seed, MaskDims(f=f, k=k)
