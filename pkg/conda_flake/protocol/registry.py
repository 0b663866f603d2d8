"""
Static key registry.

A trusted third party generates every input party's signing and encryption
key pairs, hands each party its private keys and publishes a registry of the
public halves plus network addresses. The registry file is JSON, keys are
base64, and the whole document can be signed by an authority Ed25519 key.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from conda_flake.exceptions import RegistryError, SignatureError
from conda_flake.protocol.envelope import DEFAULT_SUITE, CryptoSuite
from conda_flake.protocol.wire import encode_party_id

log = logging.getLogger(__name__)

DEFAULT_ADDRESS = "127.0.0.1"
DEFAULT_FUNCTION_PORT = 47600


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def _unb64(text: str, what: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise RegistryError(f"{what} is not valid base64: {exc}")


@dataclass(frozen=True)
class RegistryEntry:
    party_id: str
    signing_key: bytes
    encryption_key: bytes
    address: str = DEFAULT_ADDRESS
    port: int = 0

    def to_dict(self) -> dict:
        return {
            "party_id": self.party_id,
            "signing_key": _b64(self.signing_key),
            "encryption_key": _b64(self.encryption_key),
            "address": self.address,
            "port": self.port,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegistryEntry":
        try:
            party_id = data["party_id"]
            return cls(
                party_id=party_id,
                signing_key=_unb64(data["signing_key"], f"{party_id} signing key"),
                encryption_key=_unb64(data["encryption_key"], f"{party_id} encryption key"),
                address=data.get("address", DEFAULT_ADDRESS),
                port=int(data.get("port", 0)),
            )
        except KeyError as exc:
            raise RegistryError(f"registry entry is missing {exc}")


@dataclass(frozen=True)
class PartyKeys:
    """A party's own key material; never leaves that party."""

    party_id: str
    signing_private: bytes
    signing_public: bytes
    encryption_private: bytes
    encryption_public: bytes

    def entry(self, address: str = DEFAULT_ADDRESS, port: int = 0) -> RegistryEntry:
        return RegistryEntry(
            self.party_id, self.signing_public, self.encryption_public, address, port
        )

    def to_dict(self) -> dict:
        return {
            "party_id": self.party_id,
            "signing_private": _b64(self.signing_private),
            "signing_public": _b64(self.signing_public),
            "encryption_private": _b64(self.encryption_private),
            "encryption_public": _b64(self.encryption_public),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PartyKeys":
        try:
            return cls(
                party_id=data["party_id"],
                **{
                    name: _unb64(data[name], name)
                    for name in (
                        "signing_private",
                        "signing_public",
                        "encryption_private",
                        "encryption_public",
                    )
                },
            )
        except KeyError as exc:
            raise RegistryError(f"key file is missing {exc}")


@dataclass(frozen=True)
class PartyRegistry:
    entries: Tuple[RegistryEntry, ...]
    function_address: str = DEFAULT_ADDRESS
    function_port: int = DEFAULT_FUNCTION_PORT
    signature: Optional[bytes] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for entry in self.entries:
            encode_party_id(entry.party_id)
            if entry.party_id in seen:
                raise RegistryError(f"party id {entry.party_id!r} is registered twice")
            seen.add(entry.party_id)

    @property
    def party_ids(self) -> List[str]:
        return [entry.party_id for entry in self.entries]

    def entry(self, party_id: str) -> RegistryEntry:
        for entry in self.entries:
            if entry.party_id == party_id:
                return entry
        raise RegistryError(f"party {party_id!r} is not in the registry")

    def __contains__(self, party_id: str) -> bool:
        return party_id in self.party_ids

    def body(self) -> dict:
        return {
            "function_party": {"address": self.function_address, "port": self.function_port},
            "parties": [entry.to_dict() for entry in self.entries],
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.body(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "PartyRegistry":
        try:
            function_party = data["function_party"]
            parties = data["parties"]
        except KeyError as exc:
            raise RegistryError(f"registry is missing {exc}")
        signature = data.get("signature")
        return cls(
            entries=tuple(RegistryEntry.from_dict(item) for item in parties),
            function_address=function_party.get("address", DEFAULT_ADDRESS),
            function_port=int(function_party.get("port", DEFAULT_FUNCTION_PORT)),
            signature=_unb64(signature, "registry signature") if signature else None,
        )


def elect_leader(registry: PartyRegistry) -> str:
    """The lexicographically smallest party id leads."""
    if not registry.entries:
        raise RegistryError("cannot elect a leader from an empty registry")
    if len(registry.entries) < 2:
        raise RegistryError(
            "a private session needs at least two input parties, "
            f"registry holds only {registry.party_ids[0]!r}"
        )
    return min(registry.party_ids)


def generate_party_keys(party_id: str, suite: Optional[CryptoSuite] = None) -> PartyKeys:
    suite = suite or DEFAULT_SUITE
    encode_party_id(party_id)
    signing_private, signing_public = suite.generate_signing_key()
    encryption_private, encryption_public = suite.generate_encryption_key()
    return PartyKeys(
        party_id, signing_private, signing_public, encryption_private, encryption_public
    )


def build_registry(
    keys: Iterable[PartyKeys],
    function_address: str = DEFAULT_ADDRESS,
    function_port: int = DEFAULT_FUNCTION_PORT,
    addresses: Optional[Dict[str, Tuple[str, int]]] = None,
) -> PartyRegistry:
    addresses = addresses or {}
    entries = tuple(
        party.entry(*addresses.get(party.party_id, (DEFAULT_ADDRESS, 0))) for party in keys
    )
    return PartyRegistry(entries, function_address, function_port)


def write_registry(
    registry: PartyRegistry,
    path: Path,
    authority_private: Optional[bytes] = None,
    suite: Optional[CryptoSuite] = None,
) -> Path:
    suite = suite or DEFAULT_SUITE
    document = registry.body()
    if authority_private is not None:
        document["signature"] = _b64(suite.sign(registry.canonical_bytes(), authority_private))
    path = Path(path)
    path.write_text(json.dumps(document, indent=2, sort_keys=True))
    log.debug("wrote registry of %d parties to %s", len(registry.entries), path)
    return path


def load_registry(
    path: Path,
    authority_public: Optional[bytes] = None,
    suite: Optional[CryptoSuite] = None,
) -> PartyRegistry:
    """
    Read a registry file. With ``authority_public`` the document signature is
    required and verified.
    """
    suite = suite or DEFAULT_SUITE
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RegistryError(f"cannot read registry {path}: {exc}")
    registry = PartyRegistry.from_dict(data)
    if authority_public is not None:
        if registry.signature is None:
            raise SignatureError(f"registry {path} is not signed")
        suite.verify(registry.signature, registry.canonical_bytes(), authority_public)
    return registry


def write_party_keys(keys: PartyKeys, path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(keys.to_dict(), indent=2))
    path.chmod(0o600)
    return path


def load_party_keys(path: Path) -> PartyKeys:
    path = Path(path)
    try:
        return PartyKeys.from_dict(json.loads(path.read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise RegistryError(f"cannot read key file {path}: {exc}")


def provision(
    party_ids: Iterable[str],
    directory: Path,
    function_address: str = DEFAULT_ADDRESS,
    function_port: int = DEFAULT_FUNCTION_PORT,
    suite: Optional[CryptoSuite] = None,
) -> Tuple[Path, Dict[str, Path], bytes]:
    """
    Play the trusted third party: key every party, write ``<id>.keys.json``
    files and a signed ``registry.json`` into ``directory``.

    Returns the registry path, the key file per party and the authority's
    public key.
    """
    suite = suite or DEFAULT_SUITE
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    keys = [generate_party_keys(party_id, suite) for party_id in party_ids]
    key_files = {
        party.party_id: write_party_keys(party, directory / f"{party.party_id}.keys.json")
        for party in keys
    }
    authority_private, authority_public = suite.generate_signing_key()
    registry = build_registry(keys, function_address, function_port)
    registry_path = write_registry(registry, directory / "registry.json", authority_private, suite)
    return registry_path, key_files, authority_public
