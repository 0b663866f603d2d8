"""
Party state machines.

Input parties connect to the function party and say HELLO. The leader seals
one seed envelope per peer; the function party relays those envelopes
unopened, queueing any whose recipient has not connected yet. Every input
party then masks its data and streams it in chunks. Once every party's batch
has arrived the function party assembles the Gram matrix and acknowledges.
Update rounds repeat the mask/send/ack cycle with fresh left inverses, and
the function party extends the Gram matrix instead of recomputing it.
"""

from __future__ import annotations

import json
import logging
import queue
import secrets
import socket
import threading
import time
from contextlib import closing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from conda_flake.data import DataMatrix
from conda_flake.exceptions import (
    CondaFlakeError,
    FrameError,
    HandshakeTimeout,
    MissingPartyError,
    ProtocolError,
    RegistryError,
    SessionAborted,
)
from conda_flake.gram import GramMatrix, PayloadStore, compute_gram, extend_with_data
from conda_flake.kernels import KernelSpec, kernel_matrix
from conda_flake.linalg import MaskDims
from conda_flake.masking import MaskedMatrix, advance_iteration, build_mask_context, mask
from conda_flake.metrics import Averaging
from conda_flake.model_selection import (
    DEFAULT_C_GRID,
    DEFAULT_DEGREE_GRID,
    FOLD_SEED,
    CvReport,
    best_kernel,
    cross_validate_grid,
)
from conda_flake.protocol.envelope import (
    DEFAULT_SUITE,
    CryptoSuite,
    SeedEnvelope,
    open_seed,
    seal_seed,
)
from conda_flake.protocol.registry import PartyKeys, PartyRegistry, elect_leader
from conda_flake.protocol.wire import (
    DEFAULT_CHUNK_ROWS,
    ChunkAssembler,
    Connection,
    Frame,
    MsgType,
    chunk_and_send,
    read_frame,
    send_frame,
)
from conda_flake.reports import write_matrix
from conda_flake.svm import TrainedModel, train

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
FUNCTION_PARTY_ID = "function"
CONNECT_RETRY_S = 0.05
ACCEPT_POLL_S = 0.2


def _send_error(connection: Connection, message: str) -> None:
    try:
        send_frame(connection, Frame(MsgType.ERROR, FUNCTION_PARTY_ID, 0, message.encode()))
    except (SessionAborted, OSError):
        pass


def _expect(connection: Connection, msg_type: MsgType, iteration: Optional[int] = None) -> Frame:
    frame = read_frame(connection)
    if frame.msg_type == MsgType.ERROR:
        message = frame.payload.decode("utf-8", "replace")
        raise SessionAborted(f"peer aborted the session: {message}")
    if frame.msg_type != msg_type:
        raise FrameError(f"expected {msg_type.name}, got {frame.msg_type.name}")
    if iteration is not None and frame.iteration != iteration:
        raise FrameError(
            f"expected {msg_type.name} for iteration {iteration}, got {frame.iteration}"
        )
    return frame


def _connect(endpoint: Tuple[str, int], timeout: float) -> socket.socket:
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        try:
            return socket.create_connection(endpoint, timeout=max(remaining, CONNECT_RETRY_S))
        except OSError as exc:
            if remaining <= 0:
                raise HandshakeTimeout(
                    f"could not reach the function party at {endpoint[0]}:{endpoint[1]} "
                    f"within {timeout}s: {exc}"
                )
            time.sleep(CONNECT_RETRY_S)


@dataclass
class InputPartyConfig:
    party_id: str
    registry: PartyRegistry
    keys: PartyKeys
    data: DataMatrix
    #: seeds this party's private left inverses; never sent anywhere
    private_seed: Optional[int] = None
    #: shared mask seed, only used by the leader
    seed: Optional[int] = None
    #: masked width chosen by the leader, default ``2f``
    k: Optional[int] = None
    update_batches: Sequence[DataMatrix] = ()
    function_address: Optional[Tuple[str, int]] = None
    chunk_rows: int = DEFAULT_CHUNK_ROWS
    timeout: float = DEFAULT_TIMEOUT
    suite: Optional[CryptoSuite] = None

    @property
    def endpoint(self) -> Tuple[str, int]:
        if self.function_address is not None:
            return self.function_address
        return self.registry.function_address, self.registry.function_port


@dataclass
class InputPartyResult:
    party_id: str
    is_leader: bool
    envelopes_sent: int = 0
    envelopes_received: int = 0
    bytes_sent: int = 0
    width: int = 0
    rows_sent: List[int] = field(default_factory=list)
    masking_s: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _distribute_seed(
    connection: Connection, config: InputPartyConfig, result: InputPartyResult
) -> Tuple[int, MaskDims]:
    suite = config.suite or DEFAULT_SUITE
    seed = config.seed if config.seed is not None else secrets.randbits(64)
    dims = MaskDims.for_features(config.data.n_features, config.k)
    for entry in config.registry.entries:
        if entry.party_id == config.party_id:
            continue
        envelope = seal_seed(seed, dims, entry, config.keys, suite)
        frame = Frame(MsgType.SEED_ENVELOPE, config.party_id, 0, envelope.to_bytes())
        result.bytes_sent += send_frame(connection, frame)
        result.envelopes_sent += 1
    log.info("leader %s sent %d seed envelopes", config.party_id, result.envelopes_sent)
    return seed, dims


def _receive_seed(
    connection: Connection, config: InputPartyConfig, leader: str, result: InputPartyResult
) -> Tuple[int, MaskDims]:
    frame = _expect(connection, MsgType.SEED_ENVELOPE)
    envelope = SeedEnvelope.from_bytes(frame.payload)
    seed, dims = open_seed(
        envelope, config.keys, config.registry.entry(leader), config.suite or DEFAULT_SUITE
    )
    result.envelopes_received += 1
    log.info("party %s opened the seed envelope from %s", config.party_id, leader)
    return seed, dims


def run_input_party(config: InputPartyConfig) -> InputPartyResult:
    """
    Run one input party to completion: seed exchange, masking of the initial
    data and of every update batch, each batch acknowledged by the function
    party before the next is sent.
    """
    if config.party_id not in config.registry:
        raise RegistryError(f"party {config.party_id!r} is not in the registry")
    if config.keys.party_id != config.party_id:
        raise RegistryError(
            f"key file belongs to {config.keys.party_id!r}, not {config.party_id!r}"
        )
    leader = elect_leader(config.registry)
    result = InputPartyResult(party_id=config.party_id, is_leader=leader == config.party_id)
    private_seed = (
        config.private_seed if config.private_seed is not None else secrets.randbits(64)
    )

    with closing(_connect(config.endpoint, config.timeout)) as connection:
        connection.settimeout(config.timeout)
        try:
            result.bytes_sent += send_frame(connection, Frame(MsgType.HELLO, config.party_id))
            if result.is_leader:
                seed, dims = _distribute_seed(connection, config, result)
            else:
                seed, dims = _receive_seed(connection, config, leader, result)

            ctx = build_mask_context(seed, dims, config.party_id, private_seed)
            result.width = dims.k
            for iteration, batch in enumerate([config.data, *config.update_batches]):
                if iteration:
                    ctx = advance_iteration(ctx)
                start = time.perf_counter()
                masked = mask(batch, ctx)
                result.masking_s.append(time.perf_counter() - start)
                result.bytes_sent += chunk_and_send(
                    masked, config.chunk_rows, connection, batch.labels
                )
                result.rows_sent.append(masked.sample_count)
                _expect(connection, MsgType.GRAM_ACK, iteration)
                log.info("party %s iteration %d acknowledged", config.party_id, iteration)
        except socket.timeout:
            raise HandshakeTimeout(
                f"party {config.party_id} heard nothing from the function party "
                f"for {config.timeout}s"
            )
        except SessionAborted:
            raise
        except CondaFlakeError as exc:
            error = Frame(MsgType.ERROR, config.party_id, 0, str(exc).encode())
            try:
                send_frame(connection, error)
            except SessionAborted:
                pass
            raise
    return result


@dataclass
class FunctionPartyConfig:
    registry: PartyRegistry
    listen_address: str = "127.0.0.1"
    #: ``None`` uses the registry's port, ``0`` binds an ephemeral one
    port: Optional[int] = None
    timeout: float = DEFAULT_TIMEOUT
    update_rounds: int = 0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    c_grid: Sequence[float] = DEFAULT_C_GRID
    degree_grid: Sequence[int] = DEFAULT_DEGREE_GRID
    sigma_grid: Optional[Sequence[float]] = None
    averaging: Averaging = "macro"
    fold_seed: int = FOLD_SEED
    cross_validate: bool = True
    #: C of the final model when cross-validation is off
    c_param: float = 1.0
    output_dir: Optional[Path] = None
    #: also write the Gram and kernel matrices as CSV into ``output_dir``
    export_csv: bool = False
    store_dir: Optional[Path] = None


@dataclass
class RoundRecord:
    iteration: int
    rows: Dict[str, int]
    gram_s: float
    size: int


@dataclass
class FunctionPartyResult:
    gram: GramMatrix
    store: PayloadStore
    labels: Optional[np.ndarray] = None
    kernel: Optional[KernelSpec] = None
    kernel_values: Optional[np.ndarray] = None
    cv_report: Optional[CvReport] = None
    model: Optional[TrainedModel] = None
    gram_s: float = 0.0
    training_s: float = 0.0
    rounds: List[RoundRecord] = field(default_factory=list)
    observed_envelopes: List[bytes] = field(default_factory=list)
    observed_frames: List[Frame] = field(default_factory=list)


class _Link:
    """An accepted connection plus the lock serializing writes to it."""

    def __init__(self, connection: socket.socket):
        self.connection = connection
        self.lock = threading.Lock()

    def send(self, frame: Frame) -> None:
        with self.lock:
            send_frame(self.connection, frame)


class FunctionParty:
    """
    Relay, Gram assembler and trainer.

    Each accepted connection is served by its own thread; batches are handed
    to the thread running `serve` through a queue, so Gram assembly happens
    on one thread only.
    """

    def __init__(self, config: FunctionPartyConfig):
        self.config = config
        self.store = PayloadStore(config.store_dir)
        self.observed_envelopes: List[bytes] = []
        self.observed_frames: List[Frame] = []
        self._listener: Optional[socket.socket] = None
        self._events: "queue.Queue[Tuple[str, Optional[str], object]]" = queue.Queue()
        self._lock = threading.Lock()
        self._links: Dict[str, _Link] = {}
        self._pending: Dict[str, List[Frame]] = {}
        self._closed_parties: set = set()
        self._connections: List[socket.socket] = []
        self._threads: List[threading.Thread] = []
        self._closing = threading.Event()

    def __enter__(self) -> "FunctionParty":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    @property
    def port(self) -> Optional[int]:
        return self._listener.getsockname()[1] if self._listener else None

    def bind(self) -> int:
        if self._listener is None:
            port = self.config.port
            if port is None:
                port = self.config.registry.function_port
            self._listener = socket.create_server((self.config.listen_address, port))
            self._listener.settimeout(ACCEPT_POLL_S)
            log.info("function party listening on %s:%d", self.config.listen_address, self.port)
        return self.port

    def serve(self) -> FunctionPartyResult:
        registry = self.config.registry
        elect_leader(registry)
        self.bind()
        acceptor = threading.Thread(target=self._accept_loop, name="flake-accept", daemon=True)
        acceptor.start()
        self._threads.append(acceptor)
        try:
            return self._run()
        except CondaFlakeError as exc:
            self._broadcast_error(str(exc))
            raise
        finally:
            self.close()

    def close(self) -> None:
        self._closing.set()
        if self._listener is not None:
            self._listener.close()
        with self._lock:
            connections = list(self._connections)
        for connection in connections:
            try:
                connection.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            connection.close()
        for thread in self._threads:
            if thread is not threading.current_thread():
                thread.join(timeout=1.0)

    def _run(self) -> FunctionPartyResult:
        order = self.config.registry.party_ids
        batches = self._collect(0)
        start = time.perf_counter()
        payloads = _uniform_width([batches[party_id][0] for party_id in order])
        gram = compute_gram(payloads)
        gram_s = time.perf_counter() - start
        for masked in payloads:
            self.store.add(masked)
        labels = [
            batches[party_id][1] if batches[party_id][0].sample_count else np.empty(0, np.int64)
            for party_id in order
        ]
        log.info("assembled Gram matrix of size %d from %d parties", gram.size, len(order))
        self._acknowledge(0)

        rounds = [RoundRecord(0, _row_counts(batches, order), gram_s, gram.size)]
        for iteration in range(1, self.config.update_rounds + 1):
            batches = self._collect(iteration)
            start = time.perf_counter()
            for party_id in order:
                gram = extend_with_data(gram, batches[party_id][0], self.store)
            round_s = time.perf_counter() - start
            labels.extend(
                batches[party_id][1] for party_id in order if batches[party_id][0].sample_count
            )
            rounds.append(RoundRecord(iteration, _row_counts(batches, order), round_s, gram.size))
            log.info("update round %d extended the Gram matrix to %d", iteration, gram.size)
            self._acknowledge(iteration)

        result = FunctionPartyResult(
            gram=gram,
            store=self.store,
            gram_s=gram_s,
            rounds=rounds,
            observed_envelopes=list(self.observed_envelopes),
            observed_frames=list(self.observed_frames),
        )
        if all(batch is not None for batch in labels):
            result.labels = np.concatenate(labels) if labels else np.empty(0, dtype=np.int64)
            self._train(result)
        if self.config.output_dir is not None:
            write_outputs(result, self.config.output_dir, export_csv=self.config.export_csv)
        return result

    def _train(self, result: FunctionPartyResult) -> None:
        config = self.config
        spec = config.kernel.resolved(result.gram)
        c_param = config.c_param
        start = time.perf_counter()
        if config.cross_validate:
            result.cv_report = cross_validate_grid(
                result.gram,
                result.labels,
                config.c_grid,
                config.degree_grid,
                kernel=spec,
                sigma_grid=config.sigma_grid,
                averaging=config.averaging,
                seed=config.fold_seed,
            )
            spec = best_kernel(result.cv_report, spec)
            c_param = result.cv_report.best_c
        result.kernel = spec
        result.kernel_values = kernel_matrix(result.gram, spec)
        result.model = train(result.kernel_values, result.labels, c_param, kernel=spec)
        result.training_s = time.perf_counter() - start

    def _collect(self, iteration: int) -> Dict[str, Tuple[MaskedMatrix, Optional[np.ndarray]]]:
        expected = set(self.config.registry.party_ids)
        received: Dict[str, Tuple[MaskedMatrix, Optional[np.ndarray]]] = {}
        deadline = time.monotonic() + self.config.timeout
        while set(received) != expected:
            with self._lock:
                dropped = (expected - set(received)) & self._closed_parties
            if dropped:
                raise SessionAborted(
                    f"parties {sorted(dropped)} disconnected before sending iteration "
                    f"{iteration}; partial data discarded"
                )
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._timed_out(expected - set(received), iteration)
            try:
                kind, party_id, value = self._events.get(timeout=min(remaining, ACCEPT_POLL_S))
            except queue.Empty:
                continue
            if kind == "error":
                raise value
            if kind != "batch":
                continue
            masked, labels = value
            if masked.iteration != iteration:
                raise ProtocolError(
                    f"party {party_id} sent iteration {masked.iteration} while "
                    f"iteration {iteration} was expected"
                )
            received[party_id] = (masked, labels)
            log.debug("received %d masked rows from %s", masked.sample_count, party_id)
        return received

    def _timed_out(self, missing: set, iteration: int):
        with self._lock:
            never = sorted(missing - set(self._links))
        if never:
            raise MissingPartyError(
                f"parties {never} did not connect within {self.config.timeout}s"
            )
        raise HandshakeTimeout(
            f"parties {sorted(missing)} sent no iteration {iteration} data "
            f"within {self.config.timeout}s"
        )

    def _acknowledge(self, iteration: int) -> None:
        with self._lock:
            links = list(self._links.values())
        for link in links:
            link.send(Frame(MsgType.GRAM_ACK, FUNCTION_PARTY_ID, iteration))

    def _broadcast_error(self, message: str) -> None:
        with self._lock:
            links = list(self._links.values())
        for link in links:
            with link.lock:
                _send_error(link.connection, message)

    def _accept_loop(self) -> None:
        while not self._closing.is_set():
            try:
                connection, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            connection.settimeout(None)
            with self._lock:
                self._connections.append(connection)
            handler = threading.Thread(
                target=self._handle, args=(connection,), name="flake-party", daemon=True
            )
            self._threads.append(handler)
            handler.start()

    def _register(self, party_id: str, connection: socket.socket) -> None:
        if party_id not in self.config.registry:
            _send_error(connection, f"party {party_id!r} is not registered")
            raise RegistryError(f"unregistered party {party_id!r} tried to join")
        with self._lock:
            if party_id in self._links:
                raise ProtocolError(f"party {party_id!r} connected twice")
            link = self._links[party_id] = _Link(connection)
            pending = self._pending.pop(party_id, [])
            for frame in pending:
                link.send(frame)
        log.info("party %s joined, %d queued envelopes relayed", party_id, len(pending))

    def _relay(self, frame: Frame) -> None:
        envelope = SeedEnvelope.from_bytes(frame.payload)
        if envelope.sender_id != frame.party_id:
            raise ProtocolError(
                f"{frame.party_id} relayed an envelope claiming sender {envelope.sender_id}"
            )
        if envelope.recipient_id not in self.config.registry:
            raise RegistryError(f"envelope addressed to unknown party {envelope.recipient_id!r}")
        with self._lock:
            self.observed_envelopes.append(frame.payload)
            link = self._links.get(envelope.recipient_id)
            if link is None:
                self._pending.setdefault(envelope.recipient_id, []).append(frame)
            else:
                try:
                    link.send(frame)
                except SessionAborted:
                    self._closed_parties.add(envelope.recipient_id)
        log.debug("relayed seed envelope %s -> %s", envelope.sender_id, envelope.recipient_id)

    def _handle(self, connection: socket.socket) -> None:
        party_id = None
        assembler = ChunkAssembler()
        try:
            hello = read_frame(connection)
            if hello.msg_type != MsgType.HELLO:
                raise FrameError(f"connection opened with {hello.msg_type.name}, not HELLO")
            party_id = hello.party_id
            self._register(party_id, connection)
            while True:
                frame = read_frame(connection)
                with self._lock:
                    self.observed_frames.append(frame)
                if frame.party_id != party_id:
                    raise FrameError(f"{party_id} sent a frame as {frame.party_id}")
                if frame.msg_type == MsgType.SEED_ENVELOPE:
                    self._relay(frame)
                elif frame.msg_type == MsgType.MASKED_CHUNK:
                    assembler.add(frame)
                elif frame.msg_type == MsgType.CHUNK_END:
                    self._events.put(("batch", party_id, assembler.finish(frame)))
                elif frame.msg_type == MsgType.ERROR:
                    message = frame.payload.decode("utf-8", "replace")
                    self._events.put(("error", party_id, SessionAborted(f"{party_id}: {message}")))
                    return
                else:
                    raise FrameError(f"unexpected {frame.msg_type.name} from {party_id}")
        except (SessionAborted, OSError) as exc:
            assembler.discard()
            log.debug("connection of %s ended: %s", party_id or "an unnamed party", exc)
            if party_id is not None:
                with self._lock:
                    self._closed_parties.add(party_id)
        except CondaFlakeError as exc:
            assembler.discard()
            if not self._closing.is_set():
                self._events.put(("error", party_id, exc))


def _row_counts(batches: dict, order: Sequence[str]) -> Dict[str, int]:
    return {party_id: batches[party_id][0].sample_count for party_id in order}


def _uniform_width(payloads: List[MaskedMatrix]) -> List[MaskedMatrix]:
    """Give empty batches the common width so they join the Gram matrix."""
    widths = {masked.width for masked in payloads if masked.sample_count}
    if len(widths) != 1:
        return payloads
    (width,) = widths
    return [
        masked
        if masked.sample_count
        else MaskedMatrix(np.empty((0, width)), masked.party_id, masked.iteration)
        for masked in payloads
    ]


def write_outputs(
    result: FunctionPartyResult, directory: Path, export_csv: bool = False
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    matrices = {"gram": result.gram.values, "kernel": result.kernel_values}
    for name, values in matrices.items():
        if values is None:
            continue
        write_matrix(directory / f"{name}.flk", values)
        if export_csv:
            write_matrix(directory / f"{name}.csv", values)
    if result.cv_report is not None:
        (directory / "cv_report.json").write_text(json.dumps(asdict(result.cv_report), indent=2))
    if result.model is not None:
        (directory / "model.json").write_text(json.dumps(result.model.to_dict()))
    log.info("wrote function party outputs to %s", directory)
    return directory


def run_function_party(
    config: FunctionPartyConfig, on_ready: Optional[Callable[[int], None]] = None
) -> FunctionPartyResult:
    """Bind, report the bound port through ``on_ready``, then serve one session."""
    with FunctionParty(config) as party:
        port = party.bind()
        if on_ready is not None:
            on_ready(port)
        return party.serve()
