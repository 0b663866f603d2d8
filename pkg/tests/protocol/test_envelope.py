"""Tests for the envelope module."""

from dataclasses import replace

import pytest

from conda_flake.exceptions import DecryptionError, EnvelopeError, SignatureError
from conda_flake.linalg import MaskDims
from conda_flake.protocol.envelope import SealedBoxSuite, SeedEnvelope, open_seed, seal_seed
from conda_flake.protocol.registry import generate_party_keys

SEED = 0xDEAD_BEEF_0BAD_F00D
DIMS = MaskDims(f=20, k=40)


@pytest.fixture(params=["sealed-box", "fake"])
def suite(request, fake_suite):
    return SealedBoxSuite() if request.param == "sealed-box" else fake_suite


@pytest.fixture
def keys(suite):
    return {party_id: generate_party_keys(party_id, suite) for party_id in ("a", "b", "c")}


def test_open_recovers_seed(suite, keys):
    envelope = seal_seed(SEED, DIMS, keys["b"].entry(), keys["a"], suite)
    assert (envelope.sender_id, envelope.recipient_id) == ("a", "b")
    assert open_seed(envelope, keys["b"], keys["a"].entry(), suite) == (SEED, DIMS)


def test_envelope_bytes(suite, keys):
    envelope = seal_seed(SEED, DIMS, keys["c"].entry(), keys["a"], suite)
    assert SeedEnvelope.from_bytes(envelope.to_bytes()) == envelope
    with pytest.raises(EnvelopeError):
        SeedEnvelope.from_bytes(b"short")
    with pytest.raises(EnvelopeError):
        SeedEnvelope.from_bytes(envelope.to_bytes() + b"x")


def test_wrong_recipient_cannot_open(suite, keys):
    envelope = seal_seed(SEED, DIMS, keys["b"].entry(), keys["a"], suite)
    with pytest.raises(DecryptionError):
        open_seed(envelope, keys["c"], keys["a"].entry(), suite)
    readdressed = replace(envelope, recipient_id="c")
    with pytest.raises(SignatureError):
        open_seed(readdressed, keys["c"], keys["a"].entry(), suite)


def test_tampered_ciphertext_fails_signature(suite, keys):
    envelope = seal_seed(SEED, DIMS, keys["b"].entry(), keys["a"], suite)
    flipped = bytes([envelope.ciphertext[0] ^ 1]) + envelope.ciphertext[1:]
    with pytest.raises(SignatureError):
        open_seed(replace(envelope, ciphertext=flipped), keys["b"], keys["a"].entry(), suite)


def test_forged_sender_is_rejected(suite, keys):
    forged = seal_seed(SEED, DIMS, keys["b"].entry(), keys["c"], suite)
    with pytest.raises(SignatureError):
        open_seed(forged, keys["b"], keys["a"].entry(), suite)
    relabelled = replace(forged, sender_id="a")
    with pytest.raises(SignatureError):
        open_seed(relabelled, keys["b"], keys["a"].entry(), suite)


def test_sealed_box_is_randomized():
    suite = SealedBoxSuite()
    sender, recipient = generate_party_keys("a", suite), generate_party_keys("b", suite)
    first = seal_seed(SEED, DIMS, recipient.entry(), sender, suite)
    second = seal_seed(SEED, DIMS, recipient.entry(), sender, suite)
    assert first.ciphertext != second.ciphertext
