"""Tests for the session module, with every party on a thread of this process."""

import socket
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List

import numpy as np
import pytest

from conda_flake.data import DataMatrix, gen_synthetic, partition
from conda_flake.exceptions import (
    DecryptionError,
    HandshakeTimeout,
    MissingPartyError,
    RegistryError,
    SessionAborted,
)
from conda_flake.experiments import ExperimentConfig, run_session
from conda_flake.protocol.envelope import DEFAULT_SUITE, SEED_PLAINTEXT, SeedEnvelope
from conda_flake.protocol.registry import build_registry, generate_party_keys
from conda_flake.protocol.session import (
    FunctionParty,
    FunctionPartyConfig,
    InputPartyConfig,
    run_input_party,
)
from conda_flake.protocol.wire import (
    Frame,
    MsgType,
    decode_matrix,
    encode_frame,
    encode_party_id,
    read_frame,
    read_matrix_file,
)
from conda_flake.reports import read_matrix


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.linalg.norm(actual - expected) / np.linalg.norm(expected))


@pytest.fixture
def shares(rng: np.random.Generator, small_config: ExperimentConfig) -> List[DataMatrix]:
    """Unlabeled shares, so the function party only assembles the Gram matrix."""
    return [
        DataMatrix(rng.standard_normal((n, small_config.features))) for n in (6, 4, 5)
    ]


@pytest.fixture
def labeled_shares(small_config: ExperimentConfig) -> List[DataMatrix]:
    data = gen_synthetic(60, small_config.features, 2, seed=3, separation=2.0)
    return partition(data, small_config.parties)


def free_port() -> int:
    with socket.socket() as listener:
        listener.bind(("127.0.0.1", 0))
        return listener.getsockname()[1]


def test_gram_matches_plaintext(shares, small_config, fake_suite):
    result, inputs = run_session(shares, small_config, suite=fake_suite)
    plain = np.vstack([share.values for share in shares])
    assert relative_error(result.gram.values, plain @ plain.T) <= 1e-8
    assert result.gram.parties == ["party1", "party2", "party3"]
    assert result.model is None
    assert result.labels is None

    leader, *others = inputs
    assert leader.is_leader
    assert leader.envelopes_sent == 2
    assert all(not party.is_leader and party.envelopes_received == 1 for party in others)
    assert {party.width for party in inputs} == {small_config.dims.k}
    assert len(result.observed_envelopes) == 2
    assert [record.iteration for record in result.rounds] == [0]


def test_function_party_cannot_open_envelopes(shares, small_config):
    result, _ = run_session(shares, small_config)
    seed, _ = small_config.seeds()
    seed_bytes = SEED_PLAINTEXT.pack(seed, small_config.features, small_config.dims.k)
    for raw in result.observed_envelopes:
        assert seed_bytes not in raw
        envelope = SeedEnvelope.from_bytes(raw)
        guess, _ = DEFAULT_SUITE.generate_encryption_key()
        associated = encode_party_id(envelope.sender_id) + encode_party_id(envelope.recipient_id)
        with pytest.raises(DecryptionError):
            DEFAULT_SUITE.unseal(envelope.ciphertext, guess, associated)
    assert all(seed_bytes not in frame.payload for frame in result.observed_frames)


def test_session_trains_on_labels(labeled_shares, small_config, fake_suite, tmp_path: Path):
    result, _ = run_session(
        labeled_shares,
        small_config,
        suite=fake_suite,
        cross_validate=False,
        c_param=2.0,
        output_dir=tmp_path,
    )
    expected = np.concatenate([share.labels for share in labeled_shares])
    np.testing.assert_array_equal(result.labels, expected)
    assert result.model is not None
    assert result.model.c_param == 2.0
    assert result.cv_report is None
    assert result.kernel.gamma != "scale"
    np.testing.assert_array_equal(read_matrix_file(tmp_path / "gram.flk"), result.gram.values)
    assert (tmp_path / "kernel.flk").exists()
    assert (tmp_path / "model.json").exists()
    assert not (tmp_path / "cv_report.json").exists()
    assert not (tmp_path / "gram.csv").exists()


def test_session_exports_csv(labeled_shares, small_config, fake_suite, tmp_path: Path):
    result, _ = run_session(
        labeled_shares,
        small_config,
        suite=fake_suite,
        cross_validate=False,
        output_dir=tmp_path,
        export_csv=True,
    )
    np.testing.assert_array_equal(read_matrix(tmp_path / "gram.csv"), result.gram.values)
    np.testing.assert_array_equal(
        read_matrix(tmp_path / "kernel.csv"), read_matrix_file(tmp_path / "kernel.flk")
    )


def test_session_cross_validates(labeled_shares, small_config, fake_suite):
    result, _ = run_session(labeled_shares, small_config, suite=fake_suite)
    assert result.cv_report is not None
    assert result.cv_report.best_c in small_config.c_grid
    assert result.kernel.p == result.cv_report.best_p


def test_update_rounds_extend_gram(shares, small_config, fake_suite, rng, tmp_path: Path):
    batches = [
        [DataMatrix(rng.standard_normal((n, small_config.features))) for n in (2, 3)]
        for _ in shares
    ]
    result, inputs = run_session(
        shares, small_config, update_batches=batches, suite=fake_suite, store_dir=tmp_path
    )
    order = shares + [party[0] for party in batches] + [party[1] for party in batches]
    plain = np.vstack([part.values for part in order])
    assert relative_error(result.gram.values, plain @ plain.T) <= 1e-8
    assert [record.size for record in result.rounds] == [15, 21, 30]
    assert [segment.iteration for segment in result.gram.segments] == [0] * 3 + [1] * 3 + [2] * 3
    assert inputs[1].rows_sent == [4, 2, 3]
    assert len(result.store.stored_files("party3")) == 3


def test_missing_party_times_out(shares, fake_suite):
    keys = [generate_party_keys(f"party{i}", fake_suite) for i in (1, 2, 3)]
    registry = build_registry(keys, function_port=0)
    config = FunctionPartyConfig(registry, port=0, timeout=1.0)
    with FunctionParty(config) as function_party:
        port = function_party.bind()
        with ThreadPoolExecutor(max_workers=3) as pool:
            served = pool.submit(function_party.serve)
            inputs = [
                pool.submit(
                    run_input_party,
                    InputPartyConfig(
                        party_id=party.party_id,
                        registry=registry,
                        keys=party,
                        data=share,
                        function_address=("127.0.0.1", port),
                        timeout=5.0,
                        suite=fake_suite,
                    ),
                )
                for party, share in zip(keys[:2], shares)
            ]
            with pytest.raises(MissingPartyError, match="party3"):
                served.result()
            for future in inputs:
                assert future.exception() is not None


def test_input_party_must_be_registered(shares, fake_suite):
    keys = [generate_party_keys(f"party{i}", fake_suite) for i in (1, 2)]
    registry = build_registry(keys)
    stranger = generate_party_keys("party9", fake_suite)
    with pytest.raises(RegistryError):
        run_input_party(InputPartyConfig("party9", registry, stranger, shares[0]))
    with pytest.raises(RegistryError):
        run_input_party(InputPartyConfig("party1", registry, keys[1], shares[0]))


def test_unreachable_function_party(shares, fake_suite):
    keys = [generate_party_keys(f"party{i}", fake_suite) for i in (1, 2)]
    config = InputPartyConfig(
        "party1",
        build_registry(keys),
        keys[0],
        shares[0],
        function_address=("127.0.0.1", free_port()),
        timeout=0.3,
        suite=fake_suite,
    )
    with pytest.raises(HandshakeTimeout):
        run_input_party(config)


def test_observed_frames_hold_only_protocol_messages(shares, small_config, fake_suite):
    result, _ = run_session(shares, small_config, suite=fake_suite)
    kinds = {frame.msg_type for frame in result.observed_frames}
    assert kinds <= {MsgType.SEED_ENVELOPE, MsgType.MASKED_CHUNK, MsgType.CHUNK_END}


def test_wire_frames_carry_masked_width_only(rng, small_config, fake_suite):
    config = replace(small_config, features=3, k=7, chunk_rows=2)
    shares = [DataMatrix(rng.standard_normal((5, 3))) for _ in range(config.parties)]
    result, _ = run_session(shares, config, suite=fake_suite)
    chunks = [
        decode_matrix(frame.payload)
        for frame in result.observed_frames
        if frame.msg_type == MsgType.MASKED_CHUNK
    ]
    assert len(chunks) == 3 * 3
    assert {chunk.shape[1] for chunk in chunks} == {7}


def test_reset_connection_aborts_session(shares, fake_suite):
    keys = [generate_party_keys(f"party{i}", fake_suite) for i in (1, 2)]
    registry = build_registry(keys, function_port=0)
    config = FunctionPartyConfig(registry, port=0, timeout=10.0)
    with FunctionParty(config) as function_party:
        port = function_party.bind()
        with ThreadPoolExecutor(max_workers=2) as pool:
            start = time.monotonic()
            served = pool.submit(function_party.serve)
            leader = pool.submit(
                run_input_party,
                InputPartyConfig(
                    party_id="party1",
                    registry=registry,
                    keys=keys[0],
                    data=shares[0],
                    function_address=("127.0.0.1", port),
                    timeout=10.0,
                    suite=fake_suite,
                ),
            )
            with socket.create_connection(("127.0.0.1", port)) as connection:
                connection.sendall(encode_frame(Frame(MsgType.HELLO, "party2")))
                # the relayed envelope proves party2 is registered
                assert read_frame(connection).msg_type == MsgType.SEED_ENVELOPE
                chunk = encode_frame(Frame(MsgType.MASKED_CHUNK, "party2", 0, b"\0" * 64))
                connection.sendall(chunk[:40])
                connection.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0))
            with pytest.raises(SessionAborted, match="party2"):
                served.result(timeout=5.0)
            assert time.monotonic() - start < 5.0
            with pytest.raises(SessionAborted):
                leader.result(timeout=5.0)
