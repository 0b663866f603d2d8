"""
Run one party of a session as an isolated process.

Invoked as ``python -m conda_flake.party_subprocess ROLE SESSION_FILE`` where
ROLE is ``input`` or ``function`` and SESSION_FILE is the JSON description the
orchestrator wrote. A summary of the party's result is printed as JSON and,
when the session file names one, written to its ``result`` path.
"""

import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from conda_flake.data import load_csv
from conda_flake.kernels import KernelSpec
from conda_flake.model_selection import DEFAULT_C_GRID, DEFAULT_DEGREE_GRID, FOLD_SEED
from conda_flake.protocol.registry import load_party_keys, load_registry
from conda_flake.protocol.session import (
    DEFAULT_TIMEOUT,
    FunctionPartyConfig,
    InputPartyConfig,
    run_function_party,
    run_input_party,
)
from conda_flake.protocol.wire import DEFAULT_CHUNK_ROWS

ROLES = ("input", "function")


def _authority(session: dict):
    key = session.get("authority_key")
    return bytes.fromhex(key) if key else None


def _write_ready(path: Path, port: int) -> None:
    partial = path.with_suffix(".partial")
    partial.write_text(str(port))
    os.replace(partial, path)


def run_input(session: dict) -> dict:
    registry = load_registry(session["registry"], _authority(session))
    address = session.get("function_address")
    config = InputPartyConfig(
        party_id=session["party_id"],
        registry=registry,
        keys=load_party_keys(session["keys"]),
        data=load_csv(session["data"]),
        private_seed=session.get("private_seed"),
        seed=session.get("seed"),
        k=session.get("k"),
        update_batches=[load_csv(path) for path in session.get("update_batches", [])],
        function_address=tuple(address) if address else None,
        chunk_rows=session.get("chunk_rows", DEFAULT_CHUNK_ROWS),
        timeout=session.get("timeout", DEFAULT_TIMEOUT),
    )
    return run_input_party(config).to_dict()


def run_function(session: dict) -> dict:
    registry = load_registry(session["registry"], _authority(session))
    ready_file = session.get("ready_file")
    config = FunctionPartyConfig(
        registry=registry,
        listen_address=session.get("listen_address", "127.0.0.1"),
        port=session.get("port"),
        timeout=session.get("timeout", DEFAULT_TIMEOUT),
        update_rounds=session.get("update_rounds", 0),
        kernel=KernelSpec.from_dict(session.get("kernel", {})),
        c_grid=session.get("c_grid", DEFAULT_C_GRID),
        degree_grid=session.get("degree_grid", DEFAULT_DEGREE_GRID),
        sigma_grid=session.get("sigma_grid"),
        averaging=session.get("averaging", "macro"),
        fold_seed=session.get("fold_seed", FOLD_SEED),
        cross_validate=session.get("cross_validate", True),
        c_param=session.get("c_param", 1.0),
        output_dir=session.get("output_dir"),
        export_csv=session.get("export_csv", False),
        store_dir=session.get("store_dir"),
    )
    on_ready = (lambda port: _write_ready(Path(ready_file), port)) if ready_file else None
    result = run_function_party(config, on_ready=on_ready)
    return {
        "size": result.gram.size,
        "gram_s": result.gram_s,
        "training_s": result.training_s,
        "rounds": [asdict(record) for record in result.rounds],
        "cv_report": asdict(result.cv_report) if result.cv_report else None,
        "kernel": result.kernel.to_dict() if result.kernel else None,
    }


def main(argv):
    name, role, session_file = argv
    assert role in ROLES
    session = json.loads(Path(session_file).read_text())
    if session.get("verbose"):
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.INFO,
            format=f"%(asctime)s {role}[%(process)d] %(name)s: %(message)s",
        )
    summary = run_input(session) if role == "input" else run_function(session)
    if session.get("result"):
        Path(session["result"]).write_text(json.dumps(summary))
    return json.dumps(summary)


if __name__ == "__main__":  # pragma: no cover
    print(main(sys.argv))
