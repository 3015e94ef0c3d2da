"""Command-line entry point: fuzz, security-only, replay, and fixture serving.

Exit codes: 0 when no faults were found, 2 when faults were found, 1 on
operational errors (unreachable target, bad config, failed assertions).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from restsec import __version__
from restsec.auth import (
    ANONYMOUS_IDENTITY,
    AuthError,
    CredentialResolver,
    identities_from_entries,
    load_auth_file,
)
from restsec.corpus import CorpusMeta, base_fuzz, load_corpus, save_corpus
from restsec.executor import HttpExecutor, TransportError, match_status
from restsec.oracles import (
    ORACLE_ORDER,
    SecurityConfig,
    load_payload_file,
    render_sqli_payloads,
    run_security_phase,
)
from restsec.report import (
    FaultReport,
    SUITE_FORMATS,
    emit_suite,
    parse_plan,
    render_figures,
    write_csv_summary,
    write_report,
    write_suite,
)
from restsec.schema import SchemaError, load_schema_source
from restsec.stacktrace import load_patterns_file

logger = logging.getLogger(__name__)

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FAULTS = 2


class ConfigError(Exception):
    pass


def _add_target_options(parser: argparse.ArgumentParser):
    parser.add_argument("--schema", required=True, help="OpenAPI v3 document (file path or URL)")
    parser.add_argument("--base-url", required=True, help="base URL of the API under test")
    parser.add_argument("--auth", help="auth config YAML (omit for anonymous-only)")
    parser.add_argument("--timeout-seconds", type=float, default=10.0, help="per-call timeout")
    parser.add_argument(
        "--body-cap-bytes", type=int, default=1024 * 1024, help="response body cap (default 1 MiB)"
    )


def _add_security_options(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--oracle",
        action="append",
        default=[],
        metavar="CODE=on|off",
        help="toggle one oracle, e.g. --oracle 200=off (repeatable)",
    )
    parser.add_argument("--sqli-sleep-seconds", type=float, default=5.0)
    parser.add_argument("--sqli-baseline-max-ms", type=int, default=2000)
    parser.add_argument("--sqli-payloads", help="payload file, one per line ({S}/{SI} templated)")
    parser.add_argument("--xss-payloads", help="payload file, one per line")
    parser.add_argument("--stack-patterns", help="named-pattern JSON file")
    budget = parser.add_mutually_exclusive_group()
    budget.add_argument("--security-budget-seconds", type=float)
    budget.add_argument(
        "--security-budget-percent",
        type=float,
        help="security-phase budget as a percentage of the fuzz budget",
    )


def _add_output_options(parser: argparse.ArgumentParser):
    parser.add_argument("--out-dir", default="restsec-out", help="report and suite directory")
    parser.add_argument(
        "--emit",
        default="json-plan,shell,httpfile",
        help=f"comma-separated suite formats from {SUITE_FORMATS}",
    )
    parser.add_argument("--no-figures", action="store_true", help="skip the PNG summary charts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="restsec",
        description="Black-box REST API security fuzzer with post-fuzzing security oracles.",
    )
    parser.add_argument("--version", action="version", version=f"restsec {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    fuzz = sub.add_parser("fuzz", help="fuzz the target, run the security phase, emit reports")
    _add_target_options(fuzz)
    fuzz.add_argument("--budget-seconds", type=float, default=30.0)
    fuzz.add_argument("--seed", type=int, default=0)
    fuzz.add_argument("--corpus-out", help="persist the base pool to this JSON file")
    fuzz.add_argument(
        "--deny-path",
        action="append",
        default=[],
        metavar="PREFIX",
        help="exclude non-GET endpoints under this path prefix from fuzzing (repeatable)",
    )
    _add_security_options(fuzz)
    _add_output_options(fuzz)

    security = sub.add_parser("security", help="run the security phase on a saved corpus")
    _add_target_options(security)
    security.add_argument("--corpus-in", required=True, help="corpus JSON from a previous fuzz run")
    _add_security_options(security)
    _add_output_options(security)

    replay = sub.add_parser("replay", help="re-execute an emitted json-plan suite")
    replay.add_argument("plan", help="path to a faults.json emitted by this tool")
    replay.add_argument("--base-url", help="override the base URL recorded in the plan")
    replay.add_argument("--timeout-seconds", type=float, default=10.0)

    fixture = sub.add_parser("fixture", help="serve one of the bundled mock APIs")
    fixture.add_argument("name", nargs="?", help="fixture name (see --list)")
    fixture.add_argument("--port", type=int, default=0)
    fixture.add_argument("--list", action="store_true", help="list available fixtures")
    return parser


def _parse_oracle_toggles(raw: list[str]) -> frozenset[int]:
    enabled = set(ORACLE_ORDER)
    for item in raw:
        if "=" not in item:
            raise ConfigError(f"--oracle expects CODE=on|off, got {item!r}")
        code_text, _, state = item.partition("=")
        try:
            code = int(code_text)
        except ValueError:
            raise ConfigError(f"--oracle expects a numeric code, got {code_text!r}") from None
        if code not in ORACLE_ORDER:
            raise ConfigError(f"unknown oracle code {code} (known: {sorted(ORACLE_ORDER)})")
        if state == "on":
            enabled.add(code)
        elif state == "off":
            enabled.discard(code)
        else:
            raise ConfigError(f"--oracle state must be on or off, got {state!r}")
    return frozenset(enabled)


def _security_config(args, fuzz_budget: float | None) -> SecurityConfig:
    sqli_payloads = None
    if args.sqli_payloads:
        sqli_payloads = render_sqli_payloads(
            load_payload_file(args.sqli_payloads), args.sqli_sleep_seconds
        )
    xss_payloads = load_payload_file(args.xss_payloads) if args.xss_payloads else None
    patterns = load_patterns_file(args.stack_patterns) if args.stack_patterns else None
    budget = args.security_budget_seconds
    if args.security_budget_percent is not None:
        if not 0 < args.security_budget_percent <= 100:
            raise ConfigError("--security-budget-percent must be in (0, 100]")
        if fuzz_budget is None:
            raise ConfigError("--security-budget-percent requires a fuzz budget")
        budget = fuzz_budget * args.security_budget_percent / 100.0
    config = SecurityConfig(
        enabled_oracles=_parse_oracle_toggles(args.oracle),
        sqli_sleep_seconds=args.sqli_sleep_seconds,
        sqli_baseline_max_ms=args.sqli_baseline_max_ms,
        sqli_payloads=sqli_payloads,
        xss_payloads=xss_payloads,
        stack_trace_patterns=patterns,
        phase_time_budget_s=budget,
    )
    config.validate()
    if 200 in config.enabled_oracles:
        needed = args.sqli_sleep_seconds + args.sqli_baseline_max_ms / 1000.0 + 1.0
        if args.timeout_seconds < needed:
            raise ConfigError(
                f"--timeout-seconds {args.timeout_seconds} too small: needs at least "
                f"{needed:.1f}s (sqli sleep + baseline cap + margin)"
            )
    return config


def _load_identities(args):
    if args.auth:
        return load_auth_file(args.auth)
    logger.warning("no auth config: fuzzing with the anonymous identity only")
    return [ANONYMOUS_IDENTITY]


def _make_executor(args, identities) -> HttpExecutor:
    executor = HttpExecutor(
        args.base_url,
        timeout_s=args.timeout_seconds,
        body_cap_bytes=args.body_cap_bytes,
    )
    executor.resolver = CredentialResolver(executor, identities)
    return executor


def _write_outputs(args, report: FaultReport, identities) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, out_dir / "report.json")
    write_csv_summary(report, out_dir / "faults.csv")
    if not args.no_figures:
        render_figures(report, out_dir)
    formats = [f.strip() for f in args.emit.split(",") if f.strip()]
    suite = emit_suite(report.faults, identities, report.target_base_url, formats)
    write_suite(suite, out_dir)
    return out_dir


def _print_summary(report: FaultReport, out_dir: Path):
    if report.faults:
        print(f"{len(report.faults)} fault(s) detected:")
        for fault in report.faults:
            print(f"  F{fault.code} {fault.label}: {fault.endpoint}")
    else:
        print("no faults detected")
    print(f"security phase took {report.phase_stats.total_elapsed_ms} ms")
    print(f"outputs in {out_dir}")


def cmd_fuzz(args) -> int:
    if args.budget_seconds <= 0:
        raise ConfigError("--budget-seconds must be > 0")
    config = _security_config(args, args.budget_seconds)
    schema = load_schema_source(args.schema)
    identities = _load_identities(args)
    executor = _make_executor(args, identities)
    started = time.monotonic()
    pool = base_fuzz(
        schema,
        identities,
        executor,
        budget_seconds=args.budget_seconds,
        seed=args.seed,
        deny_paths=tuple(args.deny_path),
    )
    logger.info(
        "base fuzzing done in %.1fs: %d tests, %d coverage keys",
        time.monotonic() - started,
        len(pool),
        len(pool.index_keys()),
    )
    if args.corpus_out:
        save_corpus(
            pool,
            args.corpus_out,
            CorpusMeta(args.base_url, _schema_source_key(args.schema), args.seed),
        )
    faults, stats = run_security_phase(pool, schema, identities, executor, config)
    report = FaultReport(args.base_url, _schema_source_key(args.schema), args.seed, faults, stats)
    out_dir = _write_outputs(args, report, identities)
    _print_summary(report, out_dir)
    return EXIT_FAULTS if faults else EXIT_CLEAN


def _schema_source_key(source: str) -> str:
    if source.startswith(("http://", "https://")):
        return source
    return str(Path(source).resolve())


def cmd_security(args) -> int:
    config = _security_config(args, None)
    pool, meta = load_corpus(args.corpus_in)
    if meta.target_base_url != args.base_url:
        print(
            f"error: corpus was recorded against {meta.target_base_url!r}, "
            f"not {args.base_url!r}",
            file=sys.stderr,
        )
        return EXIT_ERROR
    if meta.schema_source and meta.schema_source != _schema_source_key(args.schema):
        print(
            f"error: corpus was recorded for schema {meta.schema_source!r}, "
            f"not {_schema_source_key(args.schema)!r}",
            file=sys.stderr,
        )
        return EXIT_ERROR
    schema = load_schema_source(args.schema)
    identities = _load_identities(args)
    executor = _make_executor(args, identities)
    faults, stats = run_security_phase(pool, schema, identities, executor, config)
    report = FaultReport(args.base_url, meta.schema_source, meta.seed, faults, stats)
    out_dir = _write_outputs(args, report, identities)
    _print_summary(report, out_dir)
    return EXIT_FAULTS if faults else EXIT_CLEAN


def cmd_replay(args) -> int:
    try:
        with open(args.plan, encoding="utf-8") as fh:
            data = json.load(fh)
        target, auth_entries, tests = parse_plan(data)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot parse plan: {exc}", file=sys.stderr)
        return EXIT_ERROR
    base_url = args.base_url or target
    identities = identities_from_entries(auth_entries) if auth_entries else [ANONYMOUS_IDENTITY]
    executor = HttpExecutor(base_url, timeout_s=args.timeout_seconds)
    executor.resolver = CredentialResolver(executor, identities)
    failures = 0
    for plan_test in tests:
        problems = []
        try:
            result = executor.run_test_case(plan_test.test)
            if not result.complete:
                problems.append(f"unbindable: {result.failure}")
            elif len(result.calls) != len(plan_test.test.calls):
                problems.append("incomplete run")
            else:
                for i, (call, obs) in enumerate(zip(plan_test.test.calls, result.calls)):
                    if not match_status(call.expected_status, obs.status):
                        problems.append(
                            f"call {i}: expected status {call.expected_status}, got {obs.status}"
                        )
                    if call.max_duration_ms is not None and obs.duration_ms >= call.max_duration_ms:
                        problems.append(
                            f"call {i}: took {obs.duration_ms:.0f} ms, "
                            f"should be less than {call.max_duration_ms} ms"
                        )
                    if call.min_duration_ms is not None and obs.duration_ms <= call.min_duration_ms:
                        problems.append(
                            f"call {i}: took {obs.duration_ms:.0f} ms, "
                            f"should be greater than {call.min_duration_ms} ms"
                        )
        except (TransportError, AuthError) as exc:
            problems.append(str(exc))
        if problems:
            failures += 1
            print(f"FAIL {plan_test.name}")
            for p in problems:
                print(f"     {p}")
        else:
            print(f"PASS {plan_test.name}")
    print(f"{len(tests) - failures}/{len(tests)} test(s) passed")
    return EXIT_CLEAN if failures == 0 else EXIT_ERROR


def cmd_fixture(args) -> int:
    from restsec.fixtures import FIXTURES, auth_path, schema_path, start_fixture, stop_fixture

    if args.list or not args.name:
        for name, spec in FIXTURES.items():
            seeded = f"seeded F{spec.seeded_fault_code}" if spec.seeded_fault_code else "fault-free"
            print(f"{name:28s} {seeded}")
        return EXIT_CLEAN
    if args.name not in FIXTURES:
        print(f"error: unknown fixture {args.name!r}", file=sys.stderr)
        return EXIT_ERROR
    spec = FIXTURES[args.name]
    handle = start_fixture(spec, port=args.port)
    print(f"fixture:  {spec.name}")
    print(f"base URL: {handle.base_url}")
    print(f"schema:   {schema_path(spec)}")
    print(f"auth:     {auth_path(spec)}")
    print("Ctrl-C to stop")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        stop_fixture(handle)
    return EXIT_CLEAN


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "fuzz": cmd_fuzz,
        "security": cmd_security,
        "replay": cmd_replay,
        "fixture": cmd_fixture,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, SchemaError, AuthError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except TransportError as exc:
        print(f"error: target unreachable: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
