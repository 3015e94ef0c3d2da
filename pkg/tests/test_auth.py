import pytest

from restsec.auth import (
    ANONYMOUS,
    AuthError,
    CredentialResolver,
    load_auth_config,
    resolve_identity,
)
from restsec.executor import HttpExecutor

USERS_YAML = """
auth:
  - name: FOO
    headers:
      Authorization: FOO
  - name: BAR
    headers:
      Authorization: BAR
"""

LOGIN_YAML = """
auth:
  - name: Veileder
    login:
      endpoint: /azuread/token
      method: POST
      contentType: application/x-www-form-urlencoded
      payload: "name=Veileder&grant_type=client_credentials"
      token:
        extractFrom: body
        field: access_token
        headerTemplate: "Bearer {token}"
"""


def test_static_config_yields_declared_plus_anonymous():
    identities = load_auth_config(USERS_YAML)
    assert [i.name for i in identities] == ["FOO", "BAR", ANONYMOUS]
    foo = identities[0]
    assert dict(foo.static_headers) == {"Authorization": "FOO"}
    assert identities[-1].is_anonymous


def test_empty_users_list_rejected():
    with pytest.raises(AuthError, match="at least one user"):
        load_auth_config("auth: []")


def test_login_flow_parsed():
    identities = load_auth_config(LOGIN_YAML)
    veileder = identities[0]
    assert veileder.kind == "loginFlow"
    assert veileder.login.header_template == "Bearer {token}"
    assert veileder.login.field == "access_token"
    assert "name=Veileder" in veileder.login.payload


def test_duplicate_names_rejected():
    doc = USERS_YAML + "  - name: FOO\n    headers:\n      Authorization: X\n"
    with pytest.raises(AuthError, match="duplicate"):
        load_auth_config(doc)


def test_reserved_anonymous_name_rejected():
    with pytest.raises(AuthError, match="reserved"):
        load_auth_config("auth:\n  - name: anonymous\n    headers:\n      X: y\n")


def test_entry_without_headers_or_login_rejected():
    with pytest.raises(AuthError):
        load_auth_config("auth:\n  - name: FOO\n")


def test_malformed_login_recipe_rejected():
    with pytest.raises(AuthError):
        load_auth_config("auth:\n  - name: X\n    login:\n      method: POST\n")
    with pytest.raises(AuthError, match="placeholder"):
        load_auth_config(
            "auth:\n  - name: X\n    login:\n      endpoint: /t\n      token:\n"
            "        headerTemplate: 'no placeholder'\n"
        )


def test_resolve_anonymous_yields_empty_headers():
    identities = load_auth_config(USERS_YAML)
    credential = resolve_identity(identities[-1], executor=None)
    assert credential.headers == {}


def test_resolve_static_copies_headers():
    identities = load_auth_config(USERS_YAML)
    credential = resolve_identity(identities[0], executor=None)
    assert credential.headers == {"Authorization": "FOO"}


def test_resolve_login_flow_against_fixture(start_server):
    handle = start_server("login-flow")
    executor = HttpExecutor(handle.base_url)
    identities = load_auth_config(LOGIN_YAML)
    credential = resolve_identity(identities[0], executor)
    assert credential.headers == {"Authorization": "Bearer tok-Veileder"}
    status, _, _ = executor.raw_request(
        "GET", "/api/task/logg/7", headers=credential.headers
    )
    assert status == 200


def test_resolve_login_non_2xx_raises(start_server):
    handle = start_server("login-flow")
    executor = HttpExecutor(handle.base_url)
    identities = load_auth_config(LOGIN_YAML.replace("/azuread/token", "/azuread/denied"))
    with pytest.raises(AuthError, match="401"):
        resolve_identity(identities[0], executor)


def test_resolve_login_missing_token_field_raises(start_server):
    handle = start_server("login-flow")
    executor = HttpExecutor(handle.base_url)
    identities = load_auth_config(LOGIN_YAML.replace("/azuread/token", "/azuread/empty"))
    with pytest.raises(AuthError, match="absent"):
        resolve_identity(identities[0], executor)


def test_resolver_caches_until_invalidated(start_server):
    handle = start_server("login-flow")
    executor = HttpExecutor(handle.base_url)
    identities = load_auth_config(LOGIN_YAML)
    resolver = CredentialResolver(executor, identities)
    first = resolver.resolve("Veileder")
    assert resolver.resolve("Veileder") is first
    resolver.invalidate()
    assert resolver.resolve("Veileder") is not first


def test_resolver_unknown_identity():
    resolver = CredentialResolver(None, load_auth_config(USERS_YAML))
    with pytest.raises(AuthError, match="unknown identity"):
        resolver.resolve("NOPE")
