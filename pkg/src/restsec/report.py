"""Fault reports and re-executable suites: JSON report, json-plan/shell/httpfile emission,
plus the CSV summary and matplotlib charts written alongside."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlencode

import restsec
from restsec.auth import ANONYMOUS, KIND_LOGIN, KIND_STATIC, AuthIdentity
from restsec.executor import EXTRACT_LOCATION, SLOT_PATH_ARG, TestCase
from restsec.oracles import Fault, PhaseStats

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
PLAN_FORMAT_VERSION = 1

SUITE_FORMATS = ("json-plan", "shell", "httpfile")


@dataclass
class FaultReport:
    target_base_url: str
    schema_source: str
    run_seed: int
    faults: list[Fault]
    phase_stats: PhaseStats
    tool_version: str = restsec.__version__
    generated_at: str = ""

    def __post_init__(self):
        if not self.generated_at:
            self.generated_at = datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class EmittedSuite:
    files: list[tuple[str, str]] = field(default_factory=list)


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_") or "root"


def fault_test_name(fault: Fault) -> str:
    return f"test_fault_{fault.code}_{_slug(fault.endpoint.verb)}_{_slug(fault.endpoint.path)}"


def fault_comment(fault: Fault) -> str:
    return f"Fault{fault.code}. {fault.label}."


def fault_to_dict(fault: Fault) -> dict:
    return {
        "code": fault.code,
        "label": fault.label,
        "endpoint": {"verb": fault.endpoint.verb, "path": fault.endpoint.path},
        "flaggedCallIndex": fault.flagged_call_index,
        "evidence": fault.evidence,
        "test": fault.reproduction.to_dict(),
    }


def report_to_dict(report: FaultReport) -> dict:
    return {
        "formatVersion": REPORT_FORMAT_VERSION,
        "targetBaseUrl": report.target_base_url,
        "schemaSource": report.schema_source,
        "runSeed": report.run_seed,
        "toolVersion": report.tool_version,
        "generatedAt": report.generated_at,
        "faults": [
            fault_to_dict(f)
            for f in sorted(report.faults, key=lambda f: (f.code, f.endpoint))
        ],
        "phaseStats": {
            "perOracle": [
                {
                    "code": s.code,
                    "newTestsExecuted": s.new_tests_executed,
                    "elapsedMs": s.elapsed_ms,
                }
                for s in report.phase_stats.per_oracle
            ],
            "totalElapsedMs": report.phase_stats.total_elapsed_ms,
        },
    }


def write_report(report: FaultReport, path: str | Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")
    logger.info("report written to %s (%d faults)", path, len(report.faults))


def write_csv_summary(report: FaultReport, path: str | Path):
    """Delimited fault summary next to the JSON report."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["code", "label", "verb", "path", "flaggedCallIndex", "evidence"])
        for f in sorted(report.faults, key=lambda f: (f.code, f.endpoint)):
            writer.writerow(
                [f.code, f.label, f.endpoint.verb, f.endpoint.path, f.flagged_call_index, f.evidence]
            )


def render_figures(report: FaultReport, out_dir: str | Path) -> list[Path]:
    """Summary charts rendered to PNG files alongside the report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    counts: dict[int, int] = {}
    for f in report.faults:
        counts[f.code] = counts.get(f.code, 0) + 1
    fig, ax = plt.subplots(figsize=(7, 4))
    if counts:
        codes = sorted(counts)
        ax.bar([f"F{c}" for c in codes], [counts[c] for c in codes], color="#b23b3b")
        ax.set_ylabel("faults")
    else:
        ax.text(0.5, 0.5, "no faults detected", ha="center", va="center", transform=ax.transAxes)
        ax.set_axis_off()
    ax.set_title("Detected faults by code")
    fig.tight_layout()
    path = out_dir / "faults_by_code.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    stats = report.phase_stats.per_oracle
    if stats:
        labels = [f"F{s.code}" if s.code in range(100, 1000) else "403-synthesis" for s in stats]
        ax.barh(labels[::-1], [s.elapsed_ms for s in stats][::-1], color="#3b6bb2")
        ax.set_xlabel("elapsed (ms)")
    else:
        ax.text(0.5, 0.5, "security phase skipped", ha="center", va="center", transform=ax.transAxes)
        ax.set_axis_off()
    ax.set_title(f"Security-phase overhead (total {report.phase_stats.total_elapsed_ms} ms)")
    fig.tight_layout()
    path = out_dir / "phase_overhead.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


# -- identity serialization ---------------------------------------------------


def identity_to_entry(identity: AuthIdentity) -> dict | None:
    if identity.is_anonymous:
        return None
    if identity.kind == KIND_STATIC:
        return {"name": identity.name, "headers": dict(identity.static_headers)}
    if identity.kind == KIND_LOGIN:
        recipe = identity.login
        return {
            "name": identity.name,
            "login": {
                "endpoint": recipe.endpoint,
                "method": recipe.method,
                "contentType": recipe.content_type,
                "payload": recipe.payload,
                "token": {
                    "extractFrom": recipe.extract_from,
                    "field": recipe.field,
                    "headerTemplate": recipe.header_template,
                },
            },
        }
    return None


def _identities_used(faults: list[Fault], identities: list[AuthIdentity]) -> list[AuthIdentity]:
    used = {
        call.identity
        for fault in faults
        for call in fault.reproduction.calls
        if call.identity != ANONYMOUS
    }
    return [i for i in identities if i.name in used]


# -- json-plan -----------------------------------------------------------------


def build_plan(faults: list[Fault], identities: list[AuthIdentity], target_base_url: str) -> dict:
    plan_tests = []
    for fault in sorted(faults, key=lambda f: (f.code, f.endpoint)):
        test_dict = fault.reproduction.to_dict()
        test_dict["calls"][fault.flagged_call_index]["comment"] = fault_comment(fault)
        plan_tests.append(
            {
                "name": fault_test_name(fault),
                "faultCode": fault.code,
                "faultLabel": fault.label,
                "endpoint": {"verb": fault.endpoint.verb, "path": fault.endpoint.path},
                "flaggedCallIndex": fault.flagged_call_index,
                "test": test_dict,
            }
        )
    return {
        "formatVersion": PLAN_FORMAT_VERSION,
        "kind": "json-plan",
        "targetBaseUrl": target_base_url,
        "auth": [
            entry
            for entry in (identity_to_entry(i) for i in _identities_used(faults, identities))
            if entry is not None
        ],
        "tests": plan_tests,
    }


@dataclass
class PlanTest:
    name: str
    fault_code: int | None
    test: TestCase


def parse_plan(data: dict) -> tuple[str, list[dict], list[PlanTest]]:
    """Returns (targetBaseUrl, auth entries, tests) from a json-plan document."""
    if data.get("kind") != "json-plan" or data.get("formatVersion") != PLAN_FORMAT_VERSION:
        raise ValueError("not a restsec json-plan document")
    tests = [
        PlanTest(t.get("name", f"test_{i}"), t.get("faultCode"), TestCase.from_dict(t["test"]))
        for i, t in enumerate(data.get("tests", []))
    ]
    return data.get("targetBaseUrl", ""), data.get("auth", []), tests


# -- shell ----------------------------------------------------------------------


def _sh_quote(text: str) -> str:
    return "'" + text.replace("'", "'\\''") + "'"


def _shell_url(call, bind_names: dict[tuple[int, str], str], call_index: int) -> str:
    path = call.endpoint.path
    for name in call.endpoint.placeholders:
        var = bind_names.get((call_index, name))
        if var is not None:
            path = path.replace("{%s}" % name, f"${{{var}}}")
        else:
            path = path.replace("{%s}" % name, str(call.path_args.get(name, "")))
    url = '"$BASE_URL"' + _sh_quote(path)
    if call.query:
        url += _sh_quote("?" + urlencode(call.query))
    return url


def _render_shell_test(fault: Fault, identities: list[AuthIdentity]) -> str:
    lines = [f"# ---- {fault_test_name(fault)} ----"]
    test = fault.reproduction
    login_idents = {
        i.name: i
        for i in identities
        if i.kind == KIND_LOGIN and any(c.identity == i.name for c in test.calls)
    }
    for ident in login_idents.values():
        recipe = ident.login
        extract = (
            f"python3 -c 'import json,sys; print(json.load(sys.stdin){_py_index(recipe.field)})'"
            if recipe.extract_from == "body"
            else f"grep -i '^{recipe.field}:' | head -1 | cut -d' ' -f2- | tr -d '\\r'"
        )
        lines.append(f"# login for identity {ident.name}")
        lines.append(
            f"TOKEN_{_slug(ident.name)}=$(curl -s -X {recipe.method} "
            f"-H {_sh_quote('Content-Type: ' + recipe.content_type)} "
            f"--data {_sh_quote(recipe.payload)} "
            f'"$BASE_URL"{_sh_quote(recipe.endpoint)} | {extract})'
        )

    # Variables produced by bindings: (target index, slot name) -> shell var.
    bind_names: dict[tuple[int, str], str] = {}
    sources: dict[int, list] = {}
    for b in test.bindings:
        if b.target_slot_kind != SLOT_PATH_ARG:
            continue
        var = f"BIND_{b.source_call_index}_{_slug(b.target_slot_name)}"
        bind_names[(b.target_call_index, b.target_slot_name)] = var
        sources.setdefault(b.source_call_index, []).append((b, var))

    for index, call in enumerate(test.calls):
        lines.append("")
        if index == fault.flagged_call_index:
            lines.append(f"# {fault_comment(fault)}")
        expected = call.expected_status
        lines.append(f"# call {index}: {call.endpoint}  expect-status: {expected}")
        header_args = []
        for name, value in call.headers.items():
            header_args.append(f"-H {_sh_quote(f'{name}: {value}')}")
        ident = next((i for i in identities if i.name == call.identity), None)
        if ident is not None and ident.kind == KIND_STATIC:
            for name, value in ident.static_headers:
                header_args.append(f"-H {_sh_quote(f'{name}: {value}')}")
        elif ident is not None and ident.kind == KIND_LOGIN:
            header_args.append(f'-H "Authorization: $TOKEN_{_slug(ident.name)}"')
        data_arg = ""
        if call.body is not None:
            header_args.append(
                f"-H {_sh_quote('Content-Type: ' + (call.body_media_type or 'application/json'))}"
            )
            data_arg = f" --data {_sh_quote(call.body)}"
        capture = f'-D "$HDR" -o "$BODY"' if index in sources else "-o /dev/null"
        lines.append(
            f"OUT=$(curl -s {capture} -w '%{{http_code}} %{{time_total}}' "
            f"-X {call.endpoint.verb} {' '.join(header_args)}{data_arg} "
            f"{_shell_url(call, bind_names, index)})"
        )
        lines.append('STATUS="${OUT%% *}"; MS=$(awk -v t="${OUT##* }" \'BEGIN{printf "%d", t*1000}\')')
        if expected is not None:
            lines.append(
                f'[ "$STATUS" = "{expected}" ] || note_failure '
                f'"{fault_test_name(fault)} call {index}: expected status {expected}, got $STATUS"'
            )
        if call.max_duration_ms is not None:
            lines.append(
                f'[ "$MS" -lt {call.max_duration_ms} ] || note_failure '
                f'"{fault_test_name(fault)} call {index}: should be less than '
                f'{call.max_duration_ms} ms, took $MS ms"'
            )
        if call.min_duration_ms is not None:
            lines.append(
                f'[ "$MS" -gt {call.min_duration_ms} ] || note_failure '
                f'"{fault_test_name(fault)} call {index}: should be greater than '
                f'{call.min_duration_ms} ms, took $MS ms"'
            )
        for b, var in sources.get(index, []):
            if b.extractor_kind == EXTRACT_LOCATION:
                lines.append(
                    f"LOC=$(grep -i '^location:' \"$HDR\" | head -1 | cut -d' ' -f2- | tr -d '\\r')"
                )
                lines.append(f'{var}=$(basename "${{LOC%%\\?*}}")')
            else:
                lines.append(
                    f"{var}=$(python3 -c 'import json,sys; "
                    f"print(json.load(open(sys.argv[1])){_py_index(b.extractor_path or 'id')})' \"$BODY\")"
                )
    return "\n".join(lines)


def _py_index(dotted: str) -> str:
    return "".join(f"[{part!r}]" for part in dotted.split("."))


def build_shell_suite(faults: list[Fault], identities: list[AuthIdentity], target_base_url: str) -> str:
    preamble = [
        "#!/usr/bin/env bash",
        "# Fault-reproducing test suite; statuses and timings asserted per call.",
        "set -u",
        f'BASE_URL="${{BASE_URL:-{target_base_url}}}"',
        'HDR=$(mktemp); BODY=$(mktemp); trap \'rm -f "$HDR" "$BODY"\' EXIT',
        "FAILURES=0",
        'note_failure() { echo "FAIL: $1" >&2; FAILURES=$((FAILURES+1)); }',
        "",
    ]
    parts = [
        _render_shell_test(f, identities)
        for f in sorted(faults, key=lambda f: (f.code, f.endpoint))
    ]
    footer = [
        "",
        'echo "$FAILURES failure(s)"',
        '[ "$FAILURES" -eq 0 ]',
        "",
    ]
    return "\n".join(preamble + parts + footer)


# -- httpfile --------------------------------------------------------------------


def _render_httpfile_test(fault: Fault, identities: list[AuthIdentity], target_base_url: str) -> str:
    lines = [f"### {fault_test_name(fault)}"]
    test = fault.reproduction
    for index, call in enumerate(test.calls):
        lines.append("")
        if index == fault.flagged_call_index:
            lines.append(f"# {fault_comment(fault)}")
        bound = [b for b in test.bindings if b.target_call_index == index]
        for b in bound:
            origin = (
                "Location header" if b.extractor_kind == EXTRACT_LOCATION
                else f"body field {b.extractor_path!r}"
            )
            lines.append(f"# {b.target_slot_name} bound from call {b.source_call_index} {origin}")
        path = call.endpoint.path
        for name in call.endpoint.placeholders:
            path = path.replace("{%s}" % name, str(call.path_args.get(name, "")))
        url = target_base_url + path
        if call.query:
            url += "?" + urlencode(call.query)
        lines.append(f"{call.endpoint.verb} {url}")
        ident = next((i for i in identities if i.name == call.identity), None)
        if ident is not None and ident.kind == KIND_STATIC:
            for name, value in ident.static_headers:
                lines.append(f"{name}: {value}")
        elif ident is not None and ident.kind == KIND_LOGIN:
            lines.append(f"Authorization: {{{{token_{_slug(ident.name)}}}}}")
        for name, value in call.headers.items():
            lines.append(f"{name}: {value}")
        if call.body is not None:
            lines.append(f"Content-Type: {call.body_media_type or 'application/json'}")
            lines.append("")
            lines.append(call.body)
        lines.append("")
        lines.append(f"# expect: {call.expected_status}")
        if call.max_duration_ms is not None:
            lines.append(f"# expect-duration: < {call.max_duration_ms} ms")
        if call.min_duration_ms is not None:
            lines.append(f"# expect-duration: > {call.min_duration_ms} ms")
    return "\n".join(lines)


def build_httpfile_suite(faults: list[Fault], identities: list[AuthIdentity], target_base_url: str) -> str:
    login_idents = [i for i in identities if i.kind == KIND_LOGIN]
    header = ["# Fault-reproducing requests, one block per call; expected statuses as comments."]
    for ident in login_idents:
        header.append(
            f"# token_{_slug(ident.name)}: POST {ident.login.endpoint} with "
            f"payload {ident.login.payload!r}, token from {ident.login.field}"
        )
    parts = [
        _render_httpfile_test(f, identities, target_base_url)
        for f in sorted(faults, key=lambda f: (f.code, f.endpoint))
    ]
    return "\n\n".join(["\n".join(header)] + parts) + "\n"


# -- suite emission ---------------------------------------------------------------


def emit_suite(
    faults: list[Fault],
    identities: list[AuthIdentity],
    target_base_url: str,
    formats: list[str],
) -> EmittedSuite:
    """One re-executable test per fault, in each requested format."""
    suite = EmittedSuite()
    for fmt in formats:
        if fmt == "json-plan":
            plan = build_plan(faults, identities, target_base_url)
            suite.files.append(("faults.json", json.dumps(plan, indent=2) + "\n"))
        elif fmt == "shell":
            suite.files.append(("faults.sh", build_shell_suite(faults, identities, target_base_url)))
        elif fmt == "httpfile":
            suite.files.append(
                ("faults.http", build_httpfile_suite(faults, identities, target_base_url))
            )
        else:
            raise ValueError(f"unknown suite format: {fmt!r} (expected one of {SUITE_FORMATS})")
    return suite


def write_suite(suite: EmittedSuite, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, content in suite.files:
        path = out_dir / name
        path.write_text(content, encoding="utf-8")
        if name.endswith(".sh"):
            path.chmod(0o755)
        written.append(path)
    return written
