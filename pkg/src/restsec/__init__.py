"""Black-box REST API security fuzzer with post-fuzzing security oracles."""

__version__ = "0.1.0"

from restsec.schema import EndpointId, SchemaModel, load_schema
from restsec.auth import AuthIdentity, load_auth_config
from restsec.executor import HttpAction, TestCase, HttpExecutor

__all__ = [
    "EndpointId",
    "SchemaModel",
    "load_schema",
    "AuthIdentity",
    "load_auth_config",
    "HttpAction",
    "TestCase",
    "HttpExecutor",
]
