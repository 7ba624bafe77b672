"""Policy, scenario and universe languages."""

from app.dsl.errors import ParseError, ParseFailure, SourceSpan
from app.dsl.parser import parse_policy, parse_scenario, parse_universe
from app.dsl.printer import pretty_print

__all__ = [
    "ParseError",
    "ParseFailure",
    "SourceSpan",
    "parse_policy",
    "parse_scenario",
    "parse_universe",
    "pretty_print",
]
