from __future__ import annotations

import random
import textwrap

import pytest

from app.core.validation import ValidationCode, ValidationError, validate
from app.dsl import parse_policy, pretty_print
from tests.support import POLICY_SUFFIX, list_fixtures, load_policy, policy_of

BASE = (
    "device PestSprayer type=Sprayer location=field1 attr capacity=40\n"
    "device WaterSprinkler type=Sprinkler location=field1\n"
    "subject farmer kind=user\n"
    "env humidity = 30\n"
)


def _errors(extra: str) -> list[ValidationError]:
    return validate(policy_of(BASE + textwrap.dedent(extra)))


def _codes(extra: str) -> list[ValidationCode]:
    return [e.code for e in _errors(extra)]


@pytest.mark.parametrize("name", list_fixtures(POLICY_SUFFIX))
def test_fixtures_are_valid(name: str) -> None:
    assert validate(load_policy(name)) == []


def test_conflicting_relations() -> None:
    errors = _errors(
        """
    relation incompatible PestSpray WaterSpray scope=same-location
    relation concurrent WaterSpray PestSpray scope=same-location detail mode=must
    """
    )
    assert [e.code for e in errors] == [ValidationCode.CONFLICTING_RELATIONS]
    assert "incompatible PestSpray WaterSpray" in str(errors[0])


def test_different_scopes_do_not_conflict() -> None:
    assert _codes(
        """
    relation incompatible PestSpray WaterSpray scope=same
    relation concurrent PestSpray WaterSpray scope=different detail mode=must on=WaterSprinkler
    """
    ) == []


@pytest.mark.parametrize(
    "extra, code",
    [
        ("rule on Tractor:\n  allow PLOUGH by farmer as Ploughing\n", ValidationCode.DANGLING_REFERENCE),
        ("rule on PestSprayer:\n  allow SPRAY by nobody as PestSpray\n", ValidationCode.DANGLING_REFERENCE),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  cur Ploughing(Tractor, ANY)\n", ValidationCode.DANGLING_REFERENCE),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  then stop Ploughing(Tractor)\n", ValidationCode.DANGLING_REFERENCE),
        ("device Gate type=Gate owner=ghost\n", ValidationCode.DANGLING_REFERENCE),
        ("subject robot kind=device\n", ValidationCode.DANGLING_REFERENCE),
        ("subject EVENT kind=user\n", ValidationCode.DANGLING_REFERENCE),
        ("relation incompatible PestSpray WaterSpray window=0s\n", ValidationCode.ZERO_WINDOW),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  pre Ploughing(ANY, ANY) within 0s\n", ValidationCode.ZERO_WINDOW),
        ("limit system-wide PestSpray 0/1d\n", ValidationCode.INVALID_LIMIT),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  limit per-source PestSpray 2/0s\n", ValidationCode.INVALID_LIMIT),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  when value(humidity) < dry\n", ValidationCode.TYPE_ERROR),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  when object(capacity) = full\n", ValidationCode.TYPE_ERROR),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  when source(certified) > true\n", ValidationCode.TYPE_ERROR),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  when time in 0s..2d\n", ValidationCode.TYPE_ERROR),
        ("rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  cur Ploughing(ANY, ANY) within 1h\n", ValidationCode.MISPLACED_WINDOW),
        ("rule on $object:\n  allow SPRAY by ANY as PestSpray\n", ValidationCode.MISPLACED_REFERENCE),
        ("rule on PestSprayer:\n  allow OFF by ANY as inactive\n", ValidationCode.INVALID_INACTIVE_RULE),
        ("relation ordered PestSpray PestSpray\n", ValidationCode.INVALID_RELATION),
        ("relation precedence PestSpray WaterSpray detail winner=Mixing\n", ValidationCode.INVALID_RELATION),
        ("relation dependence PestSpray Mixing scope=different detail mode=parallel\n", ValidationCode.INVALID_RELATION),
    ],
)
def test_reports_problem(extra: str, code: ValidationCode) -> None:
    assert _codes("\n" + extra) == [code]


def test_all_problems_are_reported_sorted() -> None:
    errors = _errors(
        """
    relation incompatible PestSpray WaterSpray window=0s

    rule on Tractor:
      allow PLOUGH by nobody as Ploughing
    """
    )
    assert [e.code for e in errors] == [
        ValidationCode.DANGLING_REFERENCE,
        ValidationCode.DANGLING_REFERENCE,
        ValidationCode.ZERO_WINDOW,
    ]
    assert errors == sorted(errors)


DECLARATIONS = [
    "device PestSprayer type=Sprayer location=field1 attr capacity=40",
    "device WaterSprinkler type=Sprinkler location=field1",
    "device Gate type=Gate owner=ghost",
    "subject farmer kind=user",
    "subject robot kind=device",
    "env humidity = 30",
    "rule on Tractor:\n  allow PLOUGH by nobody as Ploughing",
    "rule on PestSprayer:\n  allow SPRAY by ANY as PestSpray\n  when value(humidity) < dry",
    "rule on WaterSprinkler:\n  allow OFF by farmer as inactive",
    "rule on WaterSprinkler:\n  allow WATER by farmer as WaterSpray\n  pre PestSpray(ANY, ANY) within 1h",
    "relation incompatible PestSpray WaterSpray scope=same-location window=0s",
    "relation concurrent WaterSpray PestSpray scope=same-location detail mode=must",
    "relation ordered Ploughing Ploughing",
    "limit system-wide PestSpray 0/1d",
]


def test_validation_ignores_declaration_order() -> None:
    baseline = validate(policy_of("\n\n".join(DECLARATIONS) + "\n"))
    assert {e.code for e in baseline} == {
        ValidationCode.DANGLING_REFERENCE,
        ValidationCode.TYPE_ERROR,
        ValidationCode.INVALID_INACTIVE_RULE,
        ValidationCode.ZERO_WINDOW,
        ValidationCode.CONFLICTING_RELATIONS,
        ValidationCode.INVALID_RELATION,
        ValidationCode.INVALID_LIMIT,
    }
    rng = random.Random(7)
    for _ in range(20):
        blocks = DECLARATIONS[:]
        rng.shuffle(blocks)
        assert validate(policy_of("\n\n".join(blocks) + "\n")) == baseline


@pytest.mark.parametrize("name", [*list_fixtures(POLICY_SUFFIX), None])
def test_validation_is_idempotent(name: str | None) -> None:
    policy = load_policy(name) if name else policy_of("\n\n".join(DECLARATIONS) + "\n")
    first = validate(policy)
    assert validate(policy) == first
    # printing and re-reading the policy does not change what is reported
    assert validate(parse_policy(pretty_print(policy))) == first
