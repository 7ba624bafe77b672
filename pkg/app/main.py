from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence, TextIO

from app.core.config import LOG_LEVELS, AppConfig, get_app_version
from app.core.engine import EngineError, decide_and_commit
from app.core.models import EVENT, Request
from app.core.policy import PolicySet
from app.core.scenario import RequestUniverse, Scenario
from app.core.validation import validate
from app.dsl.errors import ParseFailure
from app.dsl.printer import pretty_print
from app.sim.analyzer import DEFAULT_GRANULARITY, analyze
from app.sim.formatting import format_decision_line
from app.sim.messages import (
    MSG_CONFIG_ERROR,
    MSG_ENGINE_ERROR,
    MSG_EXPECTATION_FAILED,
    MSG_FILE_ERROR,
    MSG_NOT_CANONICAL,
    MSG_PARSE_ERROR,
    MSG_REPLAY_OK,
    MSG_UNKNOWN_DEVICE,
    MSG_UNKNOWN_SUBJECT,
    MSG_VALIDATION_ERROR,
    get_message,
)
from app.sim.simulator import ExpectationFailure, initial_state, run
from app.storage.file_repo import FileRepository, RepositoryError
from app.storage.repo import PolicyRepository

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

DEFAULT_DEPTH = 6


class _UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _load_policy(repo: PolicyRepository, name: str) -> PolicySet:
    """Parse and validate; validation problems become a usage-class error."""
    policy = repo.load_policy(name=name)
    problems = validate(policy)
    if problems:
        for problem in problems:
            print(get_message(MSG_VALIDATION_ERROR, file=name, error=problem), file=sys.stderr)
        raise _UsageError(f"{name}: {len(problems)} validation error(s)")
    return policy


def _without_expectations(scenario: Scenario) -> Scenario:
    return Scenario(events=scenario.events)


def cmd_check(args: argparse.Namespace, *, repo: PolicyRepository, out: TextIO) -> int:
    policy = _load_policy(repo, args.policy)
    state = initial_state(policy)
    if args.state:
        prefix = repo.load_scenario(name=args.state)
        state = run(policy, _without_expectations(prefix)).final_state

    if args.subject != EVENT and args.subject not in policy.subjects:
        print(get_message(MSG_UNKNOWN_SUBJECT, subject=args.subject), file=sys.stderr)
        return EXIT_ERROR
    if args.object not in policy.devices:
        print(get_message(MSG_UNKNOWN_DEVICE, device=args.object), file=sys.stderr)
        return EXIT_ERROR

    time = args.at if args.at is not None else state.clock
    request = Request(subject=args.subject, op=args.op, object=args.object, activity=args.activity, time=time)
    _, decision = decide_and_commit(state, policy, request)
    print(format_decision_line(request, decision), file=out)
    return EXIT_OK if decision.permitted else EXIT_FAIL


def cmd_replay(args: argparse.Namespace, *, repo: PolicyRepository, out: TextIO) -> int:
    policy = _load_policy(repo, args.policy)
    scenario = repo.load_scenario(name=args.scenario)
    try:
        trace = run(policy, scenario)
    except ExpectationFailure as ex:
        _emit(repo, args.out, ex.trace.render(), out)
        print(
            get_message(MSG_EXPECTATION_FAILED, index=ex.index, expected=ex.expected, actual=ex.actual_text),
            file=out,
        )
        return EXIT_FAIL
    _emit(repo, args.out, trace.render(), out)
    print(get_message(MSG_REPLAY_OK, events=len(trace.entries), expectations=trace.expectations_met), file=out)
    return EXIT_OK


def _emit(repo: PolicyRepository, name: Optional[str], text: str, out: TextIO) -> None:
    if name:
        repo.write_text(name=name, text=text)
    else:
        out.write(text)


def cmd_analyze(args: argparse.Namespace, *, repo: PolicyRepository, out: TextIO) -> int:
    policy = _load_policy(repo, args.policy)
    universe = repo.load_universe(name=args.universe) if args.universe else None
    granularity = args.granularity or (universe.granularity if universe else None) or DEFAULT_GRANULARITY
    if args.depth < 0:
        raise _UsageError("--depth must be >= 0")
    if args.workers < 1:
        raise _UsageError("--workers must be >= 1")

    result = analyze(
        policy,
        initial_state(policy),
        universe or RequestUniverse(),
        args.depth,
        granularity=granularity,
        workers=args.workers,
    )
    out.write(result.render())
    return EXIT_OK if result.safe else EXIT_FAIL


def cmd_fmt(args: argparse.Namespace, *, repo: PolicyRepository, out: TextIO) -> int:
    name = args.policy or args.scenario
    text = repo.read_text(name=name)
    if args.policy:
        document = repo.load_policy(name=name)
    else:
        document = repo.load_scenario(name=name)
    canonical = pretty_print(document)
    if args.check:
        if text != canonical:
            print(get_message(MSG_NOT_CANONICAL, file=name), file=out)
            return EXIT_FAIL
        return EXIT_OK
    out.write(canonical)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="acac", description="Activity-centric access control toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {get_app_version()}")
    parser.add_argument("--log-level", choices=LOG_LEVELS, help="override ACAC_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    check = commands.add_parser("check", help="decide one request")
    check.add_argument("-p", "--policy", required=True)
    check.add_argument("--state", help="scenario replayed first to build the state")
    check.add_argument("--at", type=int, help="request time (default: current clock)")
    check.add_argument("subject")
    check.add_argument("op")
    check.add_argument("object")
    check.add_argument("activity")

    replay = commands.add_parser("replay", help="replay a scenario and check its expectations")
    replay.add_argument("-p", "--policy", required=True)
    replay.add_argument("-s", "--scenario", required=True)
    replay.add_argument("--out", help="write the trace here instead of stdout")

    analyzer = commands.add_parser("analyze", help="bounded safety analysis")
    analyzer.add_argument("-p", "--policy", required=True)
    analyzer.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help=f"transition bound (default: {DEFAULT_DEPTH})")
    analyzer.add_argument("--universe", help="request universe file")
    analyzer.add_argument("--granularity", type=int, help=f"clock step in seconds (default: universe setting or {DEFAULT_GRANULARITY})")
    analyzer.add_argument("--workers", type=int, default=1, help="threads expanding each search level")

    fmt = commands.add_parser("fmt", help="print canonical text")
    target = fmt.add_mutually_exclusive_group(required=True)
    target.add_argument("--policy")
    target.add_argument("--scenario")
    fmt.add_argument("--check", action="store_true", help="exit 1 unless the file is already canonical")
    return parser


def main(argv: Optional[Sequence[str]] = None, *, out: Optional[TextIO] = None) -> int:
    out = out if out is not None else sys.stdout
    try:
        cfg = AppConfig.from_env()
    except RuntimeError as ex:
        print(get_message(MSG_CONFIG_ERROR, error=ex), file=sys.stderr)
        return EXIT_ERROR

    try:
        args = build_parser().parse_args(argv)
    except _UsageError as ex:
        print(get_message(MSG_PARSE_ERROR, error=ex), file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as ex:  # --help, --version
        return int(ex.code or 0)

    _configure_logging(args.log_level or cfg.log_level)
    repo = FileRepository()
    logger.debug("acac %s: %s", get_app_version(), args.command)

    try:
        if args.command == "check":
            return cmd_check(args, repo=repo, out=out)
        if args.command == "replay":
            return cmd_replay(args, repo=repo, out=out)
        if args.command == "analyze":
            return cmd_analyze(args, repo=repo, out=out)
        return cmd_fmt(args, repo=repo, out=out)
    except ParseFailure as ex:
        for error in ex.errors:
            print(get_message(MSG_PARSE_ERROR, error=error), file=sys.stderr)
    except RepositoryError as ex:
        print(get_message(MSG_FILE_ERROR, error=ex), file=sys.stderr)
    except _UsageError as ex:
        print(get_message(MSG_PARSE_ERROR, error=ex), file=sys.stderr)
    except EngineError as ex:
        print(get_message(MSG_ENGINE_ERROR, error=ex), file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
