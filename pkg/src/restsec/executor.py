"""HTTP execution with wall-clock timing, test-case replay, and dynamic-resource binding."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from urllib.parse import quote, urljoin

import requests

from restsec.auth import ANONYMOUS, ResolvedCredential
from restsec.schema import EndpointId

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 10.0
DEFAULT_BODY_CAP_BYTES = 1024 * 1024

STATUS_CLASSES = ("1xx", "2xx", "3xx", "4xx", "5xx")

EXTRACT_LOCATION = "locationHeader"
EXTRACT_BODY_FIELD = "bodyField"

SLOT_PATH_ARG = "pathArg"
SLOT_QUERY = "queryParam"
SLOT_BODY_FIELD = "bodyField"

PROVENANCE_BASE = "baseFuzzing"
PROVENANCE_SECURITY = "securitySynthesis"


class TransportError(Exception):
    """Connection-level failure (refused, DNS); distinct from a timeout."""


class BindingError(Exception):
    """A binding could not be applied (extraction source absent)."""


def match_status(expected: int | str | None, actual: int) -> bool:
    """True when an observed status satisfies an expected code or status class."""
    if expected is None:
        return True
    if isinstance(expected, str):
        if expected not in STATUS_CLASSES:
            raise ValueError(f"unknown status class: {expected!r}")
        low = int(expected[0]) * 100
        return low <= actual < low + 100
    return expected == actual


def status_class(status: int) -> str:
    return f"{status // 100}xx"


@dataclass
class HttpAction:
    """One HTTP call: endpoint, acting identity, and concrete inputs."""

    endpoint: EndpointId
    identity: str = ANONYMOUS
    path_args: dict[str, str] = field(default_factory=dict)
    query: dict[str, str] = field(default_factory=dict)
    headers: dict[str, str] = field(default_factory=dict)
    body_media_type: str | None = None
    body: str | None = None
    expected_status: int | str | None = None
    # Timing assertions for emitted reproductions (set by the injection oracles).
    min_duration_ms: int | None = None
    max_duration_ms: int | None = None

    def rendered_path(self) -> str:
        path = self.endpoint.path
        for name in self.endpoint.placeholders:
            if name not in self.path_args:
                raise ValueError(f"missing path argument {name!r} for {self.endpoint}")
            path = path.replace("{%s}" % name, quote(str(self.path_args[name]), safe=""))
        return path

    def clone(self) -> "HttpAction":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        out = {
            "endpoint": {"verb": self.endpoint.verb, "path": self.endpoint.path},
            "identity": self.identity,
            "pathArgs": {k: str(v) for k, v in self.path_args.items()},
            "query": {k: str(v) for k, v in self.query.items()},
            "headers": dict(self.headers),
            "body": None,
            "expectedStatus": self.expected_status,
        }
        if self.body is not None:
            out["body"] = {"mediaType": self.body_media_type or "application/json", "payload": self.body}
        if self.min_duration_ms is not None:
            out["minDurationMs"] = self.min_duration_ms
        if self.max_duration_ms is not None:
            out["maxDurationMs"] = self.max_duration_ms
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "HttpAction":
        body = data.get("body")
        return cls(
            endpoint=EndpointId(data["endpoint"]["verb"], data["endpoint"]["path"]),
            identity=data.get("identity", ANONYMOUS),
            path_args=dict(data.get("pathArgs") or {}),
            query=dict(data.get("query") or {}),
            headers=dict(data.get("headers") or {}),
            body_media_type=None if body is None else body.get("mediaType"),
            body=None if body is None else body.get("payload"),
            expected_status=data.get("expectedStatus"),
            min_duration_ms=data.get("minDurationMs"),
            max_duration_ms=data.get("maxDurationMs"),
        )


@dataclass
class Binding:
    """Carry a dynamic value from one call's response into a later call's input slot."""

    source_call_index: int
    extractor_kind: str
    target_call_index: int
    target_slot_kind: str
    target_slot_name: str
    extractor_path: str | None = None   # dotted field path for bodyField extraction

    def __post_init__(self):
        if self.source_call_index >= self.target_call_index:
            raise ValueError("binding source index must precede target index")
        if self.extractor_kind not in (EXTRACT_LOCATION, EXTRACT_BODY_FIELD):
            raise ValueError(f"unknown extractor kind: {self.extractor_kind!r}")
        if self.target_slot_kind not in (SLOT_PATH_ARG, SLOT_QUERY, SLOT_BODY_FIELD):
            raise ValueError(f"unknown target slot kind: {self.target_slot_kind!r}")

    def shifted(self, offset: int) -> "Binding":
        return Binding(
            self.source_call_index + offset,
            self.extractor_kind,
            self.target_call_index + offset,
            self.target_slot_kind,
            self.target_slot_name,
            self.extractor_path,
        )

    def to_dict(self) -> dict:
        extractor = {"kind": self.extractor_kind}
        if self.extractor_path is not None:
            extractor["path"] = self.extractor_path
        return {
            "sourceCallIndex": self.source_call_index,
            "extractor": extractor,
            "targetCallIndex": self.target_call_index,
            "targetSlot": {"kind": self.target_slot_kind, "name": self.target_slot_name},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Binding":
        return cls(
            source_call_index=data["sourceCallIndex"],
            extractor_kind=data["extractor"]["kind"],
            extractor_path=data["extractor"].get("path"),
            target_call_index=data["targetCallIndex"],
            target_slot_kind=data["targetSlot"]["kind"],
            target_slot_name=data["targetSlot"]["name"],
        )


@dataclass
class Provenance:
    kind: str = PROVENANCE_BASE
    oracle_code: int | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.oracle_code is not None:
            out["oracleCode"] = self.oracle_code
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Provenance":
        return cls(data.get("kind", PROVENANCE_BASE), data.get("oracleCode"))


@dataclass
class TestCase:
    """Ordered sequence of HTTP calls plus the bindings between them."""

    __test__ = False    # domain type, not a pytest class

    calls: list[HttpAction]
    bindings: list[Binding] = field(default_factory=list)
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self):
        if not self.calls:
            raise ValueError("test case must contain at least one call")
        for b in self.bindings:
            if b.target_call_index >= len(self.calls):
                raise ValueError("binding target index out of bounds")

    def clone(self) -> "TestCase":
        return copy.deepcopy(self)

    def bindings_into(self, call_index: int) -> list[Binding]:
        return [b for b in self.bindings if b.target_call_index == call_index]

    def to_dict(self) -> dict:
        return {
            "calls": [c.to_dict() for c in self.calls],
            "bindings": [b.to_dict() for b in self.bindings],
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestCase":
        return cls(
            calls=[HttpAction.from_dict(c) for c in data["calls"]],
            bindings=[Binding.from_dict(b) for b in data.get("bindings") or []],
            provenance=Provenance.from_dict(data.get("provenance") or {}),
        )


@dataclass
class ExecutedCall:
    """One executed action (with bindings resolved) and its observed response."""

    action: HttpAction
    status: int
    response_headers: dict[str, str] = field(default_factory=dict)
    response_body: str = ""
    duration_ms: float = 0.0
    timed_out: bool = False
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "action": self.action.to_dict(),
            "status": self.status,
            "responseHeaders": dict(self.response_headers),
            "responseBody": self.response_body,
            "durationMs": self.duration_ms,
            "timedOut": self.timed_out,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutedCall":
        return cls(
            action=HttpAction.from_dict(data["action"]),
            status=data["status"],
            response_headers=dict(data.get("responseHeaders") or {}),
            response_body=data.get("responseBody", ""),
            duration_ms=data.get("durationMs", 0.0),
            timed_out=data.get("timedOut", False),
            truncated=data.get("truncated", False),
        )


@dataclass
class RunResult:
    """Outcome of running one test case end to end."""

    calls: list[ExecutedCall]
    unbindable: bool = False
    failure: str | None = None

    @property
    def complete(self) -> bool:
        return not self.unbindable


def _extract(binding: Binding, source: ExecutedCall) -> str:
    if binding.extractor_kind == EXTRACT_LOCATION:
        location = None
        for name, value in source.response_headers.items():
            if name.lower() == "location":
                location = value
                break
        if not location:
            raise BindingError("Location header absent in source response")
        if binding.target_slot_kind == SLOT_PATH_ARG:
            segments = [s for s in location.split("?")[0].split("/") if s]
            if not segments:
                raise BindingError(f"Location header has no path segments: {location!r}")
            return segments[-1]
        return location
    try:
        data = json.loads(source.response_body)
    except (json.JSONDecodeError, TypeError) as exc:
        raise BindingError("source response body is not JSON") from exc
    node = data
    for part in (binding.extractor_path or "").split("."):
        if isinstance(node, dict) and part in node:
            node = node[part]
        else:
            raise BindingError(f"body field {binding.extractor_path!r} absent in source response")
    return str(node)


def _apply_slot(action: HttpAction, binding: Binding, value: str):
    if binding.target_slot_kind == SLOT_PATH_ARG:
        action.path_args[binding.target_slot_name] = value
    elif binding.target_slot_kind == SLOT_QUERY:
        action.query[binding.target_slot_name] = value
    else:
        try:
            data = json.loads(action.body or "{}")
        except json.JSONDecodeError as exc:
            raise BindingError("target body is not JSON") from exc
        node = data
        parts = binding.target_slot_name.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise BindingError(f"body path {binding.target_slot_name!r} not an object")
        node[parts[-1]] = value
        action.body = json.dumps(data)


def verify_statuses(test: TestCase, observed: list[ExecutedCall]) -> bool:
    """True iff every call's expected status (code or class) matches the observation."""
    if len(observed) != len(test.calls):
        return False
    return all(
        match_status(call.expected_status, obs.status)
        for call, obs in zip(test.calls, observed)
    )


class HttpExecutor:
    """Serialized HTTP/1.1 client against one target base URL.

    Calls of one test case never interleave with another test's calls (single
    session, single thread). Redirects are not followed: 3xx statuses are
    evidence. Proxies come from the environment (HTTP_PROXY) via requests.
    """

    def __init__(
        self,
        base_url: str,
        resolver=None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        body_cap_bytes: int = DEFAULT_BODY_CAP_BYTES,
    ):
        self.base_url = base_url.rstrip("/")
        self.resolver = resolver
        self.timeout_s = timeout_s
        self.body_cap_bytes = body_cap_bytes
        self._session = requests.Session()

    def close(self):
        self._session.close()

    def raw_request(self, method: str, url: str, headers=None, body=None):
        """Low-level request (login flows); returns (status, headers, body text)."""
        if not url.startswith(("http://", "https://")):
            url = urljoin(self.base_url + "/", url.lstrip("/"))
        try:
            resp = self._session.request(
                method,
                url,
                headers=headers or {},
                data=body.encode("utf-8") if isinstance(body, str) else body,
                timeout=self.timeout_s,
                allow_redirects=False,
            )
        except requests.exceptions.ConnectionError as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc
        return resp.status_code, dict(resp.headers), resp.text

    def execute(self, action: HttpAction, credentials: ResolvedCredential) -> ExecutedCall:
        """Execute one action, measuring request-start to response-complete."""
        url = self.base_url + action.rendered_path()
        headers = dict(action.headers)
        headers.update(credentials.headers)
        body = None
        if action.body is not None:
            body = action.body.encode("utf-8")
            headers.setdefault("Content-Type", action.body_media_type or "application/json")
        start = time.perf_counter()
        try:
            resp = self._session.request(
                action.endpoint.verb,
                url,
                params=action.query or None,
                headers=headers,
                data=body,
                timeout=self.timeout_s,
                allow_redirects=False,
                stream=True,
            )
            chunks, size, truncated = [], 0, False
            for chunk in resp.iter_content(chunk_size=65536):
                chunks.append(chunk)
                size += len(chunk)
                if size > self.body_cap_bytes:
                    truncated = True
                    break
            duration_ms = (time.perf_counter() - start) * 1000.0
            raw = b"".join(chunks)[: self.body_cap_bytes]
            text = raw.decode(resp.encoding or "utf-8", errors="replace")
            executed = ExecutedCall(
                action=action,
                status=resp.status_code,
                response_headers=dict(resp.headers),
                response_body=text,
                duration_ms=duration_ms,
                timed_out=False,
                truncated=truncated,
            )
            resp.close()
            return executed
        except requests.exceptions.Timeout:
            duration_ms = (time.perf_counter() - start) * 1000.0
            logger.debug("timeout on %s %s after %.0f ms", action.endpoint.verb, url, duration_ms)
            return ExecutedCall(
                action=action,
                status=0,
                duration_ms=duration_ms,
                timed_out=True,
            )
        except requests.exceptions.ConnectionError as exc:
            raise TransportError(f"{action.endpoint.verb} {url}: {exc}") from exc

    def run_test_case(self, test: TestCase) -> RunResult:
        """Execute all calls in order, applying bindings before each dependent call.

        A failed extraction marks the run unbindable and skips the remaining calls.
        Binding and extraction work happens outside the per-call duration window.
        """
        executed: list[ExecutedCall] = []
        for index, call in enumerate(test.calls):
            action = call.clone()
            try:
                for binding in test.bindings_into(index):
                    value = _extract(binding, executed[binding.source_call_index])
                    _apply_slot(action, binding, value)
            except BindingError as exc:
                logger.debug("unbindable test at call %d: %s", index, exc)
                return RunResult(executed, unbindable=True, failure=str(exc))
            credentials = self.credentials_for(action.identity)
            executed.append(self.execute(action, credentials))
        return RunResult(executed)

    def credentials_for(self, identity: str) -> ResolvedCredential:
        if self.resolver is None:
            if identity != ANONYMOUS:
                raise ValueError(f"no credential resolver configured for identity {identity!r}")
            return ResolvedCredential(ANONYMOUS, {})
        return self.resolver.resolve(identity)
