"""Authentication config: named credential recipes resolved into request headers."""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field

import yaml

logger = logging.getLogger(__name__)

ANONYMOUS = "anonymous"

KIND_ANONYMOUS = "anonymous"
KIND_STATIC = "staticHeaders"
KIND_LOGIN = "loginFlow"

_TOKEN_PLACEHOLDER = "{token}"


class AuthError(Exception):
    """Configuration or credential-resolution failure."""


@dataclass(frozen=True)
class LoginRecipe:
    """How to obtain a dynamic token: one login call plus an extraction rule."""

    endpoint: str
    method: str = "POST"
    content_type: str = "application/json"
    payload: str = ""
    extract_from: str = "body"   # body | header
    field: str = "access_token"
    header_template: str = "Bearer {token}"

    def __post_init__(self):
        if self.extract_from not in ("body", "header"):
            raise AuthError(f"token extractFrom must be 'body' or 'header', got {self.extract_from!r}")
        if self.header_template.count(_TOKEN_PLACEHOLDER) != 1:
            raise AuthError("headerTemplate must contain the {token} placeholder exactly once")
        if not self.field:
            raise AuthError("token field must be non-empty")


@dataclass(frozen=True)
class AuthIdentity:
    """A named credential recipe; the anonymous identity carries no headers."""

    name: str
    kind: str
    static_headers: tuple[tuple[str, str], ...] = ()
    login: LoginRecipe | None = None

    @property
    def is_anonymous(self) -> bool:
        return self.kind == KIND_ANONYMOUS


ANONYMOUS_IDENTITY = AuthIdentity(ANONYMOUS, KIND_ANONYMOUS)


@dataclass
class ResolvedCredential:
    identity: str
    headers: dict[str, str] = field(default_factory=dict)
    obtained_at: float = 0.0


def load_auth_config(document: bytes | str) -> list[AuthIdentity]:
    """Parse the auth YAML and return declared identities plus the implicit anonymous one.

    Expected document shape::

        auth:
          - name: FOO
            headers:
              Authorization: FOO
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
    if isinstance(document, bytes):
        document = document.decode("utf-8", errors="replace")
    try:
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise AuthError(f"invalid auth YAML: {exc}") from exc
    if not isinstance(data, dict) or "auth" not in data:
        raise AuthError("auth config must be a mapping with a top-level 'auth' list")
    entries = data["auth"]
    if not isinstance(entries, list) or not entries:
        raise AuthError("at least one user required in 'auth'")
    return identities_from_entries(entries)


def identities_from_entries(entries: list[dict]) -> list[AuthIdentity]:
    """Build identities from config-shaped entries, appending the anonymous one."""
    identities: list[AuthIdentity] = []
    seen: set[str] = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "name" not in entry:
            raise AuthError(f"auth entry #{i} missing 'name'")
        name = str(entry["name"])
        if name == ANONYMOUS:
            raise AuthError(f"identity name {ANONYMOUS!r} is reserved")
        if name in seen:
            raise AuthError(f"duplicate identity name: {name}")
        seen.add(name)
        if "headers" in entry:
            headers = entry["headers"]
            if not isinstance(headers, dict) or not headers:
                raise AuthError(f"{name}: 'headers' must be a non-empty mapping")
            identities.append(
                AuthIdentity(
                    name,
                    KIND_STATIC,
                    static_headers=tuple(sorted((str(k), str(v)) for k, v in headers.items())),
                )
            )
        elif "login" in entry:
            login = entry["login"]
            if not isinstance(login, dict) or "endpoint" not in login:
                raise AuthError(f"{name}: malformed login recipe (missing 'endpoint')")
            token = login.get("token") or {}
            if not isinstance(token, dict):
                raise AuthError(f"{name}: malformed login recipe ('token' must be a mapping)")
            recipe = LoginRecipe(
                endpoint=str(login["endpoint"]),
                method=str(login.get("method", "POST")).upper(),
                content_type=str(login.get("contentType", "application/json")),
                payload=str(login.get("payload", "")),
                extract_from=str(token.get("extractFrom", "body")),
                field=str(token.get("field", "access_token")),
                header_template=str(token.get("headerTemplate", "Bearer {token}")),
            )
            identities.append(AuthIdentity(name, KIND_LOGIN, login=recipe))
        else:
            raise AuthError(f"{name}: entry needs either 'headers' or 'login'")
    identities.append(ANONYMOUS_IDENTITY)
    return identities


def load_auth_file(path: str) -> list[AuthIdentity]:
    with open(path, "rb") as fh:
        return load_auth_config(fh.read())


def _field_lookup(data, dotted: str):
    node = data
    for part in dotted.split("."):
        if isinstance(node, dict) and part in node:
            node = node[part]
        else:
            raise AuthError(f"token field {dotted!r} absent in login response")
    return node


class CredentialResolver:
    """Resolves identities to concrete headers, caching per identity.

    Resolution calls are serialized; `invalidate` drops the cache so the
    security phase starts from freshly acquired tokens.
    """

    def __init__(self, executor, identities: list[AuthIdentity]):
        self._executor = executor
        self._by_name = {ident.name: ident for ident in identities}
        self._cache: dict[str, ResolvedCredential] = {}
        self._lock = threading.Lock()

    def identity(self, name: str) -> AuthIdentity:
        if name not in self._by_name:
            raise AuthError(f"unknown identity: {name}")
        return self._by_name[name]

    def invalidate(self):
        with self._lock:
            self._cache.clear()

    def resolve(self, name: str) -> ResolvedCredential:
        with self._lock:
            if name in self._cache:
                return self._cache[name]
            credential = resolve_identity(self.identity(name), self._executor)
            self._cache[name] = credential
            return credential


def resolve_identity(identity: AuthIdentity, executor) -> ResolvedCredential:
    """Resolve one identity through the given call sink (an HttpExecutor)."""
    if identity.kind == KIND_ANONYMOUS:
        return ResolvedCredential(identity.name, {}, time.time())
    if identity.kind == KIND_STATIC:
        return ResolvedCredential(identity.name, dict(identity.static_headers), time.time())

    recipe = identity.login
    status, headers, body = executor.raw_request(
        recipe.method,
        recipe.endpoint,
        headers={"Content-Type": recipe.content_type},
        body=recipe.payload,
    )
    if not 200 <= status < 300:
        raise AuthError(f"login for {identity.name!r} failed with status {status}")
    if recipe.extract_from == "header":
        token = headers.get(recipe.field)
        if token is None:
            raise AuthError(f"token header {recipe.field!r} absent in login response")
    else:
        try:
            data = json.loads(body)
        except (json.JSONDecodeError, TypeError) as exc:
            raise AuthError(f"login response for {identity.name!r} is not JSON") from exc
        token = _field_lookup(data, recipe.field)
    if not isinstance(token, str) or not token:
        raise AuthError(f"token field {recipe.field!r} is empty or not a string")
    value = recipe.header_template.replace(_TOKEN_PLACEHOLDER, token)
    logger.debug("resolved login identity %s", identity.name)
    return ResolvedCredential(identity.name, {"Authorization": value}, time.time())
