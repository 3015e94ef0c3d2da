from __future__ import annotations

from dataclasses import dataclass

import pytest

from restsec.auth import CredentialResolver, load_auth_file
from restsec.executor import HttpExecutor
from restsec.fixtures import (
    FIXTURES,
    FixtureHandle,
    auth_path,
    data_path,
    schema_path,
    start_fixture,
    stop_fixture,
)
from restsec.schema import SchemaModel, load_schema_source


@dataclass
class Rig:
    """A running fixture wired to its schema, identities, and executor."""

    handle: FixtureHandle
    schema: SchemaModel
    identities: list
    executor: HttpExecutor

    @property
    def base_url(self) -> str:
        return self.handle.base_url


@pytest.fixture
def start_server():
    handles = []

    def _start(name: str, port: int = 0, **options) -> FixtureHandle:
        handle = start_fixture(FIXTURES[name], port=port, **options)
        handles.append(handle)
        return handle

    yield _start
    for handle in handles:
        stop_fixture(handle)


@pytest.fixture
def rig(start_server):
    def _rig(name: str, schema_file: str | None = None, timeout_s: float = 10.0, **options) -> Rig:
        handle = start_server(name, **options)
        spec = FIXTURES[name]
        source = schema_path(spec) if schema_file is None else data_path(schema_file)
        schema = load_schema_source(str(source))
        identities = load_auth_file(str(auth_path(spec)))
        executor = HttpExecutor(handle.base_url, timeout_s=timeout_s)
        executor.resolver = CredentialResolver(executor, identities)
        return Rig(handle, schema, identities, executor)

    return _rig


def fixture_schema_source(name: str) -> str:
    return str(schema_path(FIXTURES[name]))


def fixture_auth_source(name: str) -> str:
    return str(auth_path(FIXTURES[name]))
