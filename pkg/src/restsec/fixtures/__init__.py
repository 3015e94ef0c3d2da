"""Seeded-fault mock APIs: nine faulty servers, one correct one, one login server.

Each fixture ships with an OpenAPI schema (JSON) and an auth config (YAML) in
``restsec/fixtures/data``. Fixture PUT semantics are create-or-replace for the
owner with a 201, which keeps recorded call sequences re-executable against
the stateful in-memory store.
"""

from __future__ import annotations

import html
import json
import logging
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from restsec.fixtures.server import INVALID, FixtureApi, Request, Response, serve

logger = logging.getLogger(__name__)

SQLI_SLEEP_SIGNATURES = ("sleep(", "pg_sleep(", "waitfor delay", "benchmark(", "randomblob(")

_JVM_TRACE = {
    "error": {
        "type": "java.lang.NullPointerException",
        "message": "",
        "stack": [
            "java.lang.NullPointerException",
            "\tat com.example.demo.ResourceController.nullPointerJson(ResourceController.kt:36)",
            "\tat jdk.internal.reflect.GeneratedMethodAccessor90.invoke(Unknown Source)",
            "\tat java.base/jdk.internal.reflect.DelegatingMethodAccessorImpl.invoke(DelegatingMethodAccessorImpl.java:43)",
            "\tat java.base/java.lang.reflect.Method.invoke(Method.java:569)",
            "\tat org.springframework.web.method.support.InvocableHandlerMethod.doInvoke(InvocableHandlerMethod.java:197)",
            "\tat org.springframework.web.method.support.InvocableHandlerMethod.invokeForRequest(InvocableHandlerMethod.java:141)",
            "\tat org.springframework.web.servlet.mvc.method.annotation.ServletInvocableHandlerMethod.invokeAndHandle(ServletInvocableHandlerMethod.java:118)",
            "\tat org.apache.catalina.core.ApplicationFilterChain.doFilter(ApplicationFilterChain.java:162)",
        ],
    }
}


class NotRecognizedAuthApi(FixtureApi):
    """Seeded 205: FOO gets a wrong 401 (instead of 403) on the collection POST."""

    ROUTES = [
        ("POST", "/api/resources/", "post_collection"),
        ("PUT", "/api/resources/{id}", "put_resource"),
    ]
    ALLOW = {
        "/api/resources/{id}": "PUT,OPTIONS",
        "/api/resources/": "POST,OPTIONS",
    }

    def post_collection(self, req: Request, args):
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        if req.user == "FOO":
            # Bug under test: authorization denial reported as 401 instead of 403.
            return Response(401, "authentication required")
        rid = self.next_id()
        self.resources[rid] = req.user
        return Response(201, "", headers={"Location": f"/api/resources/{rid}"})

    def put_resource(self, req: Request, args):
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        if owner is not None and owner != req.user:
            return Response(403, "forbidden")
        self.resources[rid] = req.user
        return Response(201, "", headers={"Location": f"/api/resources/{rid}"})


class ExistenceLeakageApi(FixtureApi):
    """Seeded 204: GET answers 403 for foreign resources but 404 for missing ones.

    With ancestor_get=True a collection GET exists: 200 when the caller owns
    anything, 404 otherwise (exercises the ancestor branches of the oracle).
    """

    ROUTES = [
        ("GET", "/api/resources/{id}", "get_resource"),
        ("PUT", "/api/resources/{id}", "put_resource"),
        ("GET", "/api/resources", "get_collection"),
    ]
    ALLOW = {
        "/api/resources/{id}": "GET,PUT,OPTIONS",
        "/api/resources": "GET,OPTIONS",
    }

    def put_resource(self, req: Request, args):
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        if owner is not None and owner != req.user:
            return Response(403, "forbidden")
        self.resources[rid] = req.user
        return Response(201, "")

    def get_resource(self, req: Request, args):
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        if owner is None:
            return Response(404, "no such resource")   # leaks existence
        if owner != req.user:
            return Response(403, "forbidden")
        return Response.json(200, {"id": rid, "owner": owner})

    def get_collection(self, req: Request, args):
        if not self.options.get("ancestor_get"):
            return Response(404, "no such path")
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        owned = sorted(rid for rid, owner in self.resources.items() if owner == req.user)
        if not owned:
            return Response(404, "nothing owned")
        return Response.json(200, {"resources": owned})


class MissedAuthorizationApi(FixtureApi):
    """Seeded 206: DELETE checks ownership, PUT forgets to (others may replace)."""

    ROUTES = [
        ("PUT", "/api/forbiddendelete/resources/{id}", "put_resource"),
        ("DELETE", "/api/forbiddendelete/resources/{id}", "delete_resource"),
    ]
    ALLOW = {"/api/forbiddendelete/resources/{id}": "PUT,DELETE,OPTIONS"}

    def put_resource(self, req: Request, args):
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        if owner is None:
            self.resources[rid] = req.user
            return Response(201, "")
        if owner == req.user:
            return Response(201, "")
        # Bug under test: a foreign PUT should be 403 but the check is missing.
        return Response(204, "")

    def delete_resource(self, req: Request, args):
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        if owner is None:
            return Response(404, "no such resource")
        if owner != req.user:
            return Response(403, "forbidden")
        del self.resources[rid]
        return Response(204, "")


class AnonymousModificationsApi(FixtureApi):
    """Seeded 901: PUT succeeds without any authentication (204 on replace)."""

    ROUTES = [("PUT", "/api/resources/{id}", "put_resource")]
    ALLOW = {"/api/resources/{id}": "PUT,OPTIONS"}

    def put_resource(self, req: Request, args):
        rid = args["id"]
        created = rid not in self.resources
        self.resources[rid] = req.user if req.user != INVALID else None
        return Response(201 if created else 204, "")


class IgnoreAnonymousApi(FixtureApi):
    """Seeded 900: GET enforces authorization only when credentials are present."""

    ROUTES = [
        ("GET", "/api/resources/{id}", "get_resource"),
        ("PUT", "/api/resources/{id}", "put_resource"),
    ]
    ALLOW = {"/api/resources/{id}": "GET,PUT,OPTIONS"}

    def put_resource(self, req: Request, args):
        if req.user is None or req.user == INVALID:
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        if owner is not None and owner != req.user:
            return Response(403, "forbidden")
        self.resources[rid] = req.user
        return Response(201, "")

    def get_resource(self, req: Request, args):
        rid = args["id"]
        owner = self.resources.get(rid)
        if req.user == INVALID:
            return Response(401, "authentication required")
        if req.user is not None:
            if owner is None or owner != req.user:
                return Response(403, "forbidden")
            return Response(200, f"resource {rid} owned by {owner}")
        # Bug under test: anonymous requests skip the authorization check.
        if owner is None:
            return Response(403, "forbidden")
        return Response(200, f"resource {rid} owned by {owner}")


class LeakedStackTraceApi(FixtureApi):
    """Seeded 902: the crashing endpoint returns a JVM-style stack trace body."""

    ROUTES = [("GET", "/api/resources/null-pointer-json", "crash")]
    ALLOW = {"/api/resources/null-pointer-json": "GET,OPTIONS"}

    def crash(self, req: Request, args):
        if self.options.get("trace_enabled", True):
            return Response.json(500, _JVM_TRACE)
        return Response.json(500, {"error": "internal error"})


class HiddenAccessibleApi(FixtureApi):
    """Seeded 903: Allow advertises verbs the schema does not declare.

    Hidden GET answers 200 and hidden PUT 415 (both flagged); hidden DELETE
    answers 405 (exempt). Only POST is declared.
    """

    ROUTES = [
        ("POST", "/api/resources", "post_collection"),
        ("GET", "/api/resources", "hidden_get"),
        ("PUT", "/api/resources", "hidden_put"),
        ("DELETE", "/api/resources", "hidden_delete"),
    ]
    ALLOW = {"/api/resources": "HEAD,DELETE,POST,GET,OPTIONS,PUT"}

    def post_collection(self, req: Request, args):
        return Response(201, "")

    def hidden_get(self, req: Request, args):
        return Response(200, "OK")

    def hidden_put(self, req: Request, args):
        return Response(415, "Content type not supported")

    def hidden_delete(self, req: Request, args):
        return Response(405, "method not allowed")


class SqlInjectionApi(FixtureApi):
    """Seeded 200: sleeps for sleep_seconds whenever an input carries a sleep payload.

    Detection is by substring signature, no real database involved. Options:
    sleep_enabled (default True), sleep_seconds (default 5.0), and
    baseline_delay_ms to slow every response down.
    """

    ROUTES = [("POST", "/api/sqli/body/vulnerable", "login_check")]
    ALLOW = {"/api/sqli/body/vulnerable": "POST,OPTIONS"}

    def login_check(self, req: Request, args):
        baseline_delay_ms = self.options.get("baseline_delay_ms", 0)
        if baseline_delay_ms:
            time.sleep(baseline_delay_ms / 1000.0)
        haystack = (req.body + " " + " ".join(req.query.values())).lower()
        if self.options.get("sleep_enabled", True) and any(
            sig in haystack for sig in SQLI_SLEEP_SIGNATURES
        ):
            time.sleep(float(self.options.get("sleep_seconds", 5.0)))
        return Response(200, "MATCHED: 0")


class XssGuestbookApi(FixtureApi):
    """Seeded 201: guestbook stores entries verbatim and echoes them on GET."""

    ROUTES = [
        ("POST", "/api/stored/json/guestbook", "sign"),
        ("GET", "/api/stored/json/guestbook", "list_entries"),
    ]
    ALLOW = {"/api/stored/json/guestbook": "GET,POST,OPTIONS"}

    def __init__(self, **options):
        super().__init__(**options)
        self.entries: list[dict] = []

    def sign(self, req: Request, args):
        name = req.query.get("name", "")
        entry = req.query.get("entry", "")
        if self.options.get("sanitize"):
            name, entry = html.escape(name), html.escape(entry)
        self.entries.append({"name": name, "entry": entry})
        return Response.json(
            200,
            {"message": "Guestbook Entry Stored! Thank you for signing our guestbook!", "success": True},
        )

    def list_entries(self, req: Request, args):
        payload = {"entries": list(self.entries)}
        if self.options.get("reflect") and "q" in req.query:
            payload["echo"] = req.query["q"]
        return Response.json(200, payload)


class CorrectApi(FixtureApi):
    """Fault-free API: strict auth, foreign and missing resources both answer 403."""

    ROUTES = [
        ("GET", "/api/resources/{id}", "get_resource"),
        ("PUT", "/api/resources/{id}", "put_resource"),
        ("DELETE", "/api/resources/{id}", "delete_resource"),
        ("GET", "/api/resources", "get_collection"),
        ("POST", "/api/resources", "post_collection"),
    ]
    ALLOW = {
        "/api/resources/{id}": "GET,PUT,DELETE,OPTIONS",
        "/api/resources": "GET,POST,OPTIONS",
    }

    def _authed(self, req: Request):
        return req.user is not None and req.user != INVALID

    def post_collection(self, req: Request, args):
        if not self._authed(req):
            return Response(401, "authentication required")
        rid = self.next_id()
        self.resources[rid] = req.user
        resp = Response.json(201, {"id": rid})
        resp.headers["Location"] = f"/api/resources/{rid}"
        return resp

    def get_collection(self, req: Request, args):
        if not self._authed(req):
            return Response(401, "authentication required")
        owned = sorted(rid for rid, owner in self.resources.items() if owner == req.user)
        return Response.json(200, {"resources": [{"id": rid, "owner": req.user} for rid in owned]})

    def get_resource(self, req: Request, args):
        if not self._authed(req):
            return Response(401, "authentication required")
        owner = self.resources.get(args["id"])
        if owner is None or owner != req.user:
            return Response(403, "forbidden")   # missing hidden behind 403: no leakage
        return Response.json(200, {"id": args["id"], "owner": owner})

    def put_resource(self, req: Request, args):
        if not self._authed(req):
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        # Creation happens via POST only; missing ids answer 403 like foreign ones.
        if owner is None or owner != req.user:
            return Response(403, "forbidden")
        self.resources[rid] = req.user
        return Response(201, "")

    def delete_resource(self, req: Request, args):
        if not self._authed(req):
            return Response(401, "authentication required")
        rid = args["id"]
        owner = self.resources.get(rid)
        if owner is None or owner != req.user:
            return Response(403, "forbidden")
        del self.resources[rid]
        return Response(204, "")


class LoginFlowApi(FixtureApi):
    """Token-issuing API used by the dynamic-login tests."""

    ROUTES = [
        ("POST", "/azuread/token", "issue_token"),
        ("POST", "/azuread/empty", "empty_token"),
        ("POST", "/azuread/denied", "denied"),
        ("GET", "/api/task/logg/{id}", "task_log"),
        ("GET", "/redirect", "redirect"),
    ]
    ALLOW = {"/api/task/logg/{id}": "GET,OPTIONS"}

    def redirect(self, req: Request, args):
        return Response(302, "", headers={"Location": "/api/task/logg/1"})

    def issue_token(self, req: Request, args):
        fields = dict(
            pair.split("=", 1) for pair in req.body.split("&") if "=" in pair
        )
        name = fields.get("name")
        if not name:
            return Response(400, "missing name")
        return Response.json(200, {"access_token": f"tok-{name}", "token_type": "Bearer"})

    def empty_token(self, req: Request, args):
        return Response.json(200, {})

    def denied(self, req: Request, args):
        return Response(401, "denied")

    def task_log(self, req: Request, args):
        auth = req.headers.get("Authorization", "")
        if auth != "Bearer tok-Veileder":
            return Response(401, "authentication required")
        return Response.json(200, {"data": [], "status": "OK"})


@dataclass(frozen=True)
class FixtureSpec:
    """One mock API: behavior class plus its schema and auth config files."""

    name: str
    seeded_fault_code: int | None
    api_class: type
    schema_file: str
    auth_file: str = "users.auth.yaml"


FIXTURES: dict[str, FixtureSpec] = {
    spec.name: spec
    for spec in [
        FixtureSpec("not-recognized-auth", 205, NotRecognizedAuthApi, "not-recognized-auth.schema.json"),
        FixtureSpec("existence-leakage", 204, ExistenceLeakageApi, "existence-leakage.schema.json"),
        FixtureSpec("missed-authorization", 206, MissedAuthorizationApi, "missed-authorization.schema.json"),
        FixtureSpec("anonymous-modifications", 901, AnonymousModificationsApi, "anonymous-modifications.schema.json"),
        FixtureSpec("ignore-anonymous", 900, IgnoreAnonymousApi, "ignore-anonymous.schema.json"),
        FixtureSpec("leaked-stack-trace", 902, LeakedStackTraceApi, "leaked-stack-trace.schema.json"),
        FixtureSpec("hidden-accessible", 903, HiddenAccessibleApi, "hidden-accessible.schema.json"),
        FixtureSpec("sql-injection", 200, SqlInjectionApi, "sql-injection.schema.json"),
        FixtureSpec("xss-guestbook", 201, XssGuestbookApi, "xss-guestbook.schema.json"),
        FixtureSpec("correct", None, CorrectApi, "correct.schema.json"),
        FixtureSpec("login-flow", None, LoginFlowApi, "login-flow.schema.json", "login.auth.yaml"),
    ]
}

SEEDED_FIXTURES = tuple(
    name for name, spec in FIXTURES.items() if spec.seeded_fault_code is not None
)


@dataclass
class FixtureHandle:
    spec: FixtureSpec
    api: FixtureApi
    server: object
    thread: object
    base_url: str
    stopped: bool = False


def data_path(filename: str) -> Path:
    return Path(resources.files("restsec.fixtures") / "data" / filename)


def schema_path(spec: FixtureSpec) -> Path:
    return data_path(spec.schema_file)


def auth_path(spec: FixtureSpec) -> Path:
    return data_path(spec.auth_file)


def start_fixture(spec: FixtureSpec, port: int = 0, **options) -> FixtureHandle:
    """Start the fixture server on an ephemeral (or given) port."""
    api = spec.api_class(**options)
    server, thread = serve(api, port=port)
    host, bound_port = server.server_address[:2]
    handle = FixtureHandle(spec, api, server, thread, f"http://{host}:{bound_port}")
    logger.info("fixture %s listening on %s", spec.name, handle.base_url)
    return handle


def stop_fixture(handle: FixtureHandle):
    """Stop the server and drop all in-memory state; safe to call twice."""
    if handle.stopped:
        return
    handle.server.shutdown()
    handle.server.server_close()
    handle.thread.join(timeout=5)
    handle.stopped = True
