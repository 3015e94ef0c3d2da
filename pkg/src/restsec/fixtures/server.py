"""In-memory mock API servers: request plumbing shared by every fixture behavior."""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, unquote, urlsplit

logger = logging.getLogger(__name__)

USERS = ("FOO", "BAR")
INVALID = "<invalid>"


@dataclass
class Request:
    verb: str
    path: str
    query: dict[str, str]
    headers: dict[str, str]
    body: str
    user: str | None   # FOO/BAR, None when anonymous, INVALID for unknown tokens


@dataclass
class Response:
    status: int
    body: str = ""
    content_type: str = "text/plain"
    headers: dict[str, str] = field(default_factory=dict)

    @classmethod
    def json(cls, status: int, payload) -> "Response":
        return cls(status, json.dumps(payload), "application/json")


def _compile_template(template: str):
    pattern = re.sub(r"\{([^{}/]+)\}", r"(?P<\1>[^/]+)", template)
    return re.compile("^" + pattern + "$")


class FixtureApi:
    """Base behavior: resource store, auth lookup, OPTIONS/405/404 defaults.

    Subclasses list (verb, template, method-name) ROUTES and an ALLOW map from
    template to the Allow header advertised on OPTIONS. State is in memory
    only: a restart equals a full reset.
    """

    ROUTES: list[tuple[str, str, str]] = []
    ALLOW: dict[str, str] = {}

    def __init__(self, **options):
        self.options = options
        self.lock = threading.RLock()
        self.resources: dict[str, str | None] = {}
        self._counter = 0
        self._compiled = [
            (verb, _compile_template(template), template, handler)
            for verb, template, handler in self.ROUTES
        ]

    def next_id(self) -> str:
        self._counter += 1
        return str(self._counter)

    def dispatch(self, req: Request) -> Response:
        with self.lock:
            if req.verb == "OPTIONS":
                return self.handle_options(req)
            known_path = False
            for verb, regex, template, handler in self._compiled:
                m = regex.match(req.path)
                if m is None:
                    continue
                known_path = True
                if verb == req.verb:
                    return getattr(self, handler)(req, {k: unquote(v) for k, v in m.groupdict().items()})
            if known_path:
                resp = Response(405, "method not allowed")
                allow = self._allow_for(req.path)
                if allow:
                    resp.headers["Allow"] = allow
                return resp
            return Response(404, "no such path")

    def _allow_for(self, path: str) -> str | None:
        for template, allow in self.ALLOW.items():
            if _compile_template(template).match(path):
                return allow
        return None

    def handle_options(self, req: Request) -> Response:
        allow = self._allow_for(req.path)
        if allow is None:
            return Response(404, "no such path")
        return Response(200, "", headers={"Allow": allow})


def identify(headers: dict[str, str]) -> str | None:
    token = None
    for name, value in headers.items():
        if name.lower() == "authorization":
            token = value
            break
    if token is None:
        return None
    return token if token in USERS else INVALID


class _FixtureHandler(BaseHTTPRequestHandler):
    api: FixtureApi = None
    protocol_version = "HTTP/1.1"
    # Headers and body go out as separate writes; without TCP_NODELAY every
    # response pays the Nagle + delayed-ACK penalty (~40 ms).
    disable_nagle_algorithm = True

    def log_message(self, fmt, *args):
        logger.debug("fixture %s: " + fmt, self.api.__class__.__name__, *args)

    def _handle(self, verb: str):
        parts = urlsplit(self.path)
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length).decode("utf-8", errors="replace") if length else ""
        headers = {k: v for k, v in self.headers.items()}
        req = Request(
            verb=verb,
            path=unquote(parts.path),
            query={k: v for k, v in parse_qsl(parts.query)},
            headers=headers,
            body=body,
            user=identify(headers),
        )
        try:
            resp = self.api.dispatch(req)
        except Exception:
            logger.exception("fixture handler crashed on %s %s", verb, self.path)
            resp = Response(500, "fixture crash")
        payload = resp.body.encode("utf-8")
        self.send_response(resp.status)
        for name, value in resp.headers.items():
            self.send_header(name, value)
        if payload:
            self.send_header("Content-Type", resp.content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload and verb != "HEAD":
            self.wfile.write(payload)

    def do_GET(self):
        self._handle("GET")

    def do_POST(self):
        self._handle("POST")

    def do_PUT(self):
        self._handle("PUT")

    def do_PATCH(self):
        self._handle("PATCH")

    def do_DELETE(self):
        self._handle("DELETE")

    def do_HEAD(self):
        self._handle("HEAD")

    def do_OPTIONS(self):
        self._handle("OPTIONS")


def serve(api: FixtureApi, port: int = 0):
    """Start a threading HTTP server for the given behavior; returns (server, thread)."""
    handler = type("Handler", (_FixtureHandler,), {"api": api})
    server = ThreadingHTTPServer(("127.0.0.1", port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
