from __future__ import annotations

from conda.common.configuration import PrimitiveParameter
from conda.plugins import hookimpl
from conda.plugins.types import CondaSetting, CondaSubcommand

from conda_flake import cli
from conda_flake.protocol.session import DEFAULT_TIMEOUT
from conda_flake.protocol.wire import DEFAULT_CHUNK_ROWS


@hookimpl
def conda_subcommands():
    yield CondaSubcommand(
        name="flake",
        action=cli.main.execute,
        configure_parser=cli.main.configure_parser,
        summary="Train kernel SVMs on masked, horizontally partitioned data",
    )


@hookimpl
def conda_settings():
    yield CondaSetting(
        name="flake_chunk_rows",
        description="Rows of masked data per MASKED_CHUNK frame",
        parameter=PrimitiveParameter(DEFAULT_CHUNK_ROWS, element_type=int),
    )
    yield CondaSetting(
        name="flake_timeout",
        description="Seconds a party waits on its peers before giving up on a session",
        parameter=PrimitiveParameter(DEFAULT_TIMEOUT, element_type=float),
    )
    yield CondaSetting(
        name="flake_listen_address",
        description="Address the function party listens on",
        parameter=PrimitiveParameter("127.0.0.1", element_type=str),
    )
