import hashlib
import hmac
import itertools
from pathlib import Path

from conda_flake.exceptions import DecryptionError, SignatureError

HERE = Path(__file__).parent

# Small grids keep cross-validation in tests to a few seconds
SMALL_C_GRID = (0.5, 4.0)
SMALL_DEGREE_GRID = (1, 2)
# mask seed shared by the parties in masking and Gram tests
SHARED_SEED = 0x5EED_F1A4E


class FakeSuite:
    """
    Deterministic crypto suite for hermetic protocol tests.

    Keys come from a counter and private == public, so it has none of the
    properties of the real suite except that tampering and wrong keys fail.
    """

    def __init__(self):
        self._counter = itertools.count()

    def _key(self, kind: str):
        key = hashlib.sha256(f"{kind}-{next(self._counter)}".encode()).digest()
        return key, key

    def generate_signing_key(self):
        return self._key("sign")

    def generate_encryption_key(self):
        return self._key("seal")

    def sign(self, message: bytes, private_key: bytes) -> bytes:
        return hmac.new(private_key, message, "sha256").digest()

    def verify(self, signature: bytes, message: bytes, public_key: bytes) -> None:
        if not hmac.compare_digest(signature, self.sign(message, public_key)):
            raise SignatureError("fake signature does not match")

    def seal(self, plaintext: bytes, public_key: bytes, associated: bytes) -> bytes:
        stream = hashlib.sha256(public_key + associated).digest()
        body = bytes(a ^ b for a, b in zip(plaintext, stream))
        return body + hmac.new(public_key, associated + body, "sha256").digest()

    def unseal(self, ciphertext: bytes, private_key: bytes, associated: bytes) -> bytes:
        body, tag = ciphertext[:-32], ciphertext[-32:]
        expected = hmac.new(private_key, associated + body, "sha256").digest()
        if not hmac.compare_digest(tag, expected):
            raise DecryptionError("fake tag does not match")
        stream = hashlib.sha256(private_key + associated).digest()
        return bytes(a ^ b for a, b in zip(body, stream))


class BufferConnection:
    """In-memory `Connection`: reads from ``incoming``, collects writes in ``sent``."""

    def __init__(self, incoming: bytes = b""):
        self.incoming = bytearray(incoming)
        self.sent = bytearray()

    def sendall(self, data: bytes) -> None:
        self.sent += data

    def recv(self, size: int) -> bytes:
        chunk = bytes(self.incoming[:size])
        del self.incoming[:size]
        return chunk
