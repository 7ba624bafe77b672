"""
Recursive-descent parsers for policy (.acac), scenario (.acsc) and request
universe (.acu) files.

The grammars are line-oriented: each declaration sits on one line, and a
`rule` owns the indented clause lines below it. Errors are collected per line
so one bad line does not hide the others; any error raises ParseFailure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, TypeVar

from app.core.models import (
    ANY,
    AttributeValue,
    CounterScope,
    DenyReason,
    DeviceObject,
    EntityId,
    Outcome,
    Phase,
    Request,
    Subject,
    SubjectKind,
    Timestamp,
)
from app.core.policy import (
    ANY_PATTERN,
    OBJECT_REF,
    SOURCE_REF,
    ActivityRule,
    AllOf,
    AnyOf,
    Compare,
    Comparator,
    ConcurrencyMode,
    DependenceMode,
    DeviceScope,
    Expr,
    LocationIs,
    Not,
    ObligationAction,
    ObligationKind,
    Pattern,
    PatternKind,
    PolicySet,
    PreemptEffect,
    RelationDecl,
    RelationDetail,
    RelationHolds,
    RelationKind,
    SourceIs,
    StateCondition,
    TimeIn,
    UsageLimit,
    ValueScope,
)
from app.core.scenario import (
    DeviceAction,
    DeviceEvent,
    EnvEvent,
    Expectation,
    RequestEvent,
    RequestUniverse,
    Scenario,
    ScenarioEvent,
    TickEvent,
)
from app.dsl.errors import ParseError, ParseFailure, SourceSpan
from app.dsl.lexer import LexError, Token, TokenKind, duration_seconds, tokenize, unquote

logger = logging.getLogger(__name__)

E = TypeVar("E", bound=Enum)

_COMPARATORS = {c.value for c in Comparator}
_VALUE_SCOPES = {s.value for s in ValueScope}


class _LineError(Exception):
    def __init__(self, error: ParseError) -> None:
        self.error = error
        super().__init__(str(error))


class _Cursor:
    def __init__(self, tokens: list[Token], line: str, *, file: str, line_no: int) -> None:
        self.tokens = tokens
        self.line = line
        self.file = file
        self.line_no = line_no
        self.pos = 0

    def peek(self, offset: int = 0) -> Optional[Token]:
        index = self.pos + offset
        return self.tokens[index] if index < len(self.tokens) else None

    def peek_is(self, text: str, offset: int = 0) -> bool:
        tok = self.peek(offset)
        return tok is not None and tok.is_(text)

    @property
    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def next(self, expected: str = "more input") -> Token:
        tok = self.peek()
        if tok is None:
            raise self.fail(expected)
        self.pos += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.peek_is(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.peek_is(text):
            raise self.fail(f"'{text}'")
        return self.next()

    def ident(self, what: str = "identifier") -> str:
        tok = self.peek()
        if tok is None or tok.kind is not TokenKind.IDENT:
            raise self.fail(what)
        self.pos += 1
        return tok.text

    def choice(self, enum: type[E], what: str) -> E:
        tok = self.peek()
        options = "|".join(str(m.value) for m in enum)  # type: ignore[attr-defined]
        if tok is not None and tok.kind is TokenKind.IDENT:
            for member in enum:
                if member.value == tok.text:
                    self.pos += 1
                    return member
        raise self.fail(f"{what} ({options})")

    def done(self) -> None:
        if not self.at_end:
            raise self.fail("end of line")

    def span(self, tok: Optional[Token] = None) -> SourceSpan:
        if tok is not None:
            return SourceSpan(self.file, self.line_no, tok.column, len(tok.text))
        # end of line: point at the last character so the span stays inside the input
        return SourceSpan(self.file, self.line_no, max(1, len(self.line)), 1)

    def fail(self, expected: str, tok: Optional[Token] = None) -> _LineError:
        tok = tok if tok is not None else self.peek()
        found = repr(tok.text) if tok is not None else "end of line"
        return _LineError(ParseError(self.span(tok), expected, found))


def _lines(text: str) -> list[tuple[int, str]]:
    return [(no, raw.rstrip("\r")) for no, raw in enumerate(text.split("\n"), start=1)]


def _cursors(text: str, file: str, errors: list[ParseError]):
    """Yield (cursor, indented) for every line holding tokens."""
    for line_no, line in _lines(text):
        try:
            tokens = tokenize(line, file=file, line_no=line_no)
        except LexError as ex:
            errors.append(ex.error)
            continue
        if tokens:
            yield _Cursor(tokens, line, file=file, line_no=line_no), line[:1] in (" ", "\t")


# --- terminals ---

def _pattern(cur: _Cursor) -> Pattern:
    tok = cur.peek()
    if tok is not None and tok.kind is TokenKind.REF:
        cur.next()
        return SOURCE_REF if tok.text == "$source" else OBJECT_REF
    name = cur.ident("pattern (id, type:<id>, group:<id>, ANY)")
    if name in ("type", "group") and cur.accept(":"):
        target = cur.ident(f"{name} name")
        return Pattern.of_type(target) if name == "type" else Pattern.of_group(target)
    if name == ANY:
        return ANY_PATTERN
    return Pattern.exact(name)


def _value(cur: _Cursor) -> AttributeValue:
    tok = cur.peek()
    if tok is None or tok.kind not in (TokenKind.NUMBER, TokenKind.STRING, TokenKind.IDENT):
        raise cur.fail("value (number, true/false, identifier or quoted string)")
    cur.next()
    if tok.kind is TokenKind.NUMBER:
        return int(tok.text) if tok.text.lstrip("-").isdigit() else float(tok.text)
    if tok.kind is TokenKind.STRING:
        return unquote(tok.text)
    if tok.text in ("true", "false"):
        return tok.text == "true"
    return tok.text


def _seconds(cur: _Cursor, what: str = "duration") -> int:
    tok = cur.peek()
    if tok is not None and tok.kind is TokenKind.DURATION:
        cur.next()
        return duration_seconds(tok.text)
    if tok is not None and tok.kind is TokenKind.NUMBER and tok.text.isdigit():
        cur.next()
        return int(tok.text)
    raise cur.fail(what)


def _count(cur: _Cursor) -> int:
    tok = cur.peek()
    if tok is None or tok.kind is not TokenKind.NUMBER or not tok.text.isdigit():
        raise cur.fail("whole number")
    cur.next()
    return int(tok.text)


def _id_list(cur: _Cursor) -> frozenset[str]:
    names = {cur.ident()}
    while cur.accept(","):
        names.add(cur.ident())
    return frozenset(names)


def _attributes(cur: _Cursor) -> dict[str, AttributeValue]:
    attrs: dict[str, AttributeValue] = {}
    while not cur.at_end:
        tok = cur.peek()
        name = cur.ident("attribute name")
        if name in attrs:
            raise cur.fail("unique attribute name", tok)
        cur.expect("=")
        attrs[name] = _value(cur)
    if not attrs:
        raise cur.fail("attribute name")
    return attrs


# --- expressions ---

def _expr(cur: _Cursor, phase: Phase) -> Expr:
    items = [_conjunction(cur, phase)]
    while cur.accept("|"):
        items.append(_conjunction(cur, phase))
    return items[0] if len(items) == 1 else AnyOf(tuple(items))


def _conjunction(cur: _Cursor, phase: Phase) -> Expr:
    items = [_unary(cur, phase)]
    while cur.accept("&"):
        items.append(_unary(cur, phase))
    return items[0] if len(items) == 1 else AllOf(tuple(items))


def _unary(cur: _Cursor, phase: Phase) -> Expr:
    if cur.accept("!"):
        if cur.accept("("):
            inner = _expr(cur, phase)
            cur.expect(")")
            return Not(inner)
        inner = _unary(cur, phase)
        if isinstance(inner, StateCondition) and not inner.negated:
            return replace(inner, negated=True)
        return Not(inner)
    if cur.accept("("):
        inner = _expr(cur, phase)
        cur.expect(")")
        return inner
    return _atom(cur, phase)


def _atom(cur: _Cursor, phase: Phase) -> Expr:
    head = cur.peek()
    if head is None or head.kind is not TokenKind.IDENT:
        raise cur.fail("condition")

    if head.text == "time" and cur.peek_is("in", 1):
        cur.next()
        cur.next()
        start = _seconds(cur, "time of day")
        cur.expect("..")
        return TimeIn(start=start, end=_seconds(cur, "time of day"))
    if head.text == "by" and not cur.peek_is("(", 1):
        cur.next()
        return SourceIs(_pattern(cur))

    name = cur.next().text
    cur.expect("(")
    args = [_pattern(cur)]
    while cur.accept(","):
        args.append(_pattern(cur))
    cur.expect(")")
    follow = cur.peek()

    if (
        name in _VALUE_SCOPES
        and len(args) == 1
        and follow is not None
        and follow.kind is TokenKind.PUNCT
        and follow.text in _COMPARATORS
    ):
        if args[0].kind is not PatternKind.ID:
            raise cur.fail("attribute name", head)
        cur.next()
        return Compare(scope=ValueScope(name), name=str(args[0].name), op=Comparator(follow.text), literal=_value(cur))
    if name == "location" and len(args) == 1 and (cur.peek_is("=") or cur.peek_is("!=")):
        negated = cur.next().text == "!="
        return LocationIs(target=args[0], location=cur.ident("location"), negated=negated)
    if name == "rel" and len(args) == 3:
        if args[0].kind is not PatternKind.ID:
            raise cur.fail("relation name", head)
        return RelationHolds(relation=str(args[0].name), subject=args[1], target=args[2])
    if len(args) == 2:
        window = _seconds(cur) if cur.accept("within") else None
        return StateCondition(phase=phase, activity=name, object=args[0], source=args[1], window=window)
    raise cur.fail("(object, source) arguments", head)


# --- rule pieces ---

def _obligation(cur: _Cursor) -> ObligationAction:
    kind = cur.choice(ObligationKind, "obligation")
    activity = cur.ident("activity")
    cur.expect("(")
    target = _pattern(cur)
    cur.expect(")")
    return ObligationAction(kind=kind, activity=activity, object=target)


def _obligations(cur: _Cursor) -> tuple[ObligationAction, ...]:
    actions = [_obligation(cur)]
    while cur.accept(";"):
        actions.append(_obligation(cur))
    return tuple(actions)


def _limit(cur: _Cursor) -> UsageLimit:
    scope = cur.choice(CounterScope, "counter scope")
    activity = cur.ident("activity")
    max_count = _count(cur)
    cur.expect("/")
    window = _seconds(cur)
    fixed = cur.accept("fixed")
    return UsageLimit(scope=scope, activity=activity, max_count=max_count, window=window, fixed=fixed)


@dataclass
class _RuleDraft:
    cursor: _Cursor
    object: Optional[Pattern] = None
    head: Optional[tuple[EntityId, Pattern, EntityId]] = None
    clauses: dict[str, object] = field(default_factory=dict)
    limits: list[UsageLimit] = field(default_factory=list)
    broken: bool = False

    def build(self) -> ActivityRule:
        assert self.object is not None and self.head is not None
        op, source, activity = self.head
        return ActivityRule(
            object=self.object,
            op=op,
            source=source,
            activity=activity,
            pre_conditions=self.clauses.get("pre"),  # type: ignore[arg-type]
            current_conditions=self.clauses.get("cur"),  # type: ignore[arg-type]
            obligations=self.clauses.get("then", ()),  # type: ignore[arg-type]
            contextual=self.clauses.get("when"),  # type: ignore[arg-type]
            limits=tuple(self.limits),
            continuous_current=bool(self.clauses.get("cur*")),
            continuous_contextual=bool(self.clauses.get("when*")),
        )


def _allow(cur: _Cursor, draft: _RuleDraft) -> None:
    tok = cur.peek()
    cur.expect("allow")
    if draft.head is not None:
        raise cur.fail("a single allow clause", tok)
    op = cur.ident("operation")
    cur.expect("by")
    source = _pattern(cur)
    cur.expect("as")
    draft.head = (op, source, cur.ident("activity"))
    cur.done()


def _clause(cur: _Cursor, draft: _RuleDraft) -> None:
    tok = cur.peek()
    if cur.peek_is("allow"):
        _allow(cur, draft)
        return
    keyword = cur.ident("rule clause (allow, pre, cur, then, when, limit)")
    if keyword == "limit":
        draft.limits.append(_limit(cur))
        cur.done()
        return
    if keyword not in ("pre", "cur", "then", "when"):
        raise cur.fail("rule clause (allow, pre, cur, then, when, limit)", tok)
    if keyword in draft.clauses:
        raise cur.fail(f"a single {keyword} clause", tok)
    continuous = keyword in ("cur", "when") and cur.accept("*")
    if keyword == "then":
        draft.clauses["then"] = _obligations(cur)
    else:
        draft.clauses[keyword] = _expr(cur, Phase.PRE if keyword == "pre" else Phase.CURRENT)
        draft.clauses[f"{keyword}*"] = continuous
    cur.done()


# --- relations ---

_DETAIL_KEYS: dict[RelationKind, tuple[str, ...]] = {
    RelationKind.ORDERED: ("first",),
    RelationKind.CONCURRENT: ("mode", "on"),
    RelationKind.PRECEDENCE: ("winner", "effect", "resume"),
    RelationKind.DEPENDENCE: ("trigger", "mode", "on"),
}


def _detail(cur: _Cursor, kind: RelationKind) -> RelationDetail:
    allowed = _DETAIL_KEYS.get(kind, ())
    values: dict[str, object] = {}
    while cur.peek_is("=", 1):
        tok = cur.peek()
        key = cur.ident("detail key")
        if key not in allowed or key in values:
            what = ", ".join(allowed) if allowed else "no detail"
            raise cur.fail(f"{kind.value} detail ({what})", tok)
        cur.expect("=")
        if key in ("first", "winner", "trigger"):
            values[key] = cur.ident("activity")
        elif key == "mode":
            enum = ConcurrencyMode if kind is RelationKind.CONCURRENT else DependenceMode
            values[key] = cur.choice(enum, "mode")
        elif key == "effect":
            values[key] = cur.choice(PreemptEffect, "effect")
        elif key == "resume":
            flag = _value(cur)
            if not isinstance(flag, bool):
                raise cur.fail("true or false")
            values[key] = flag
        else:
            values[key] = _pattern(cur)
    if not values:
        raise cur.fail("detail key")
    return RelationDetail(**values)  # type: ignore[arg-type]


def _relation_body(cur: _Cursor) -> RelationDecl:
    kind = cur.choice(RelationKind, "relation kind")
    a = cur.ident("activity")
    b = cur.ident("activity")
    scope = DeviceScope.ANY
    if cur.accept("scope"):
        cur.expect("=")
        scope = cur.choice(DeviceScope, "device scope")
    window = None
    if cur.accept("window"):
        cur.expect("=")
        window = _seconds(cur)
    guard = _expr(cur, Phase.CURRENT) if cur.accept("when") else None
    detail = _detail(cur, kind) if cur.accept("detail") else RelationDetail()
    if cur.accept("then"):
        detail = replace(detail, then=_obligations(cur))
    cur.done()
    return RelationDecl(kind=kind, a=a, b=b, scope=scope, window=window, guard=guard, detail=detail)


# --- declarations ---

def _device(cur: _Cursor) -> DeviceObject:
    device_id = cur.ident("device id")
    options: dict[str, object] = {}
    attrs: dict[str, AttributeValue] = {}
    while not cur.at_end:
        tok = cur.peek()
        key = cur.ident("device option (type, group, location, owner, attr)")
        if key == "attr":
            attrs = _attributes(cur)
            break
        if key not in ("type", "group", "location", "owner") or key in options:
            raise cur.fail("device option (type, group, location, owner, attr)", tok)
        cur.expect("=")
        options[key] = _id_list(cur) if key == "group" else cur.ident()
    if "type" not in options:
        raise cur.fail("type=<id>")
    return DeviceObject(
        id=device_id,
        object_type=str(options["type"]),
        groups=options.get("group", frozenset()),  # type: ignore[arg-type]
        location=options.get("location"),  # type: ignore[arg-type]
        owner=options.get("owner"),  # type: ignore[arg-type]
        attributes=attrs,
    )


def _subject(cur: _Cursor) -> Subject:
    subject_id = cur.ident("subject id")
    cur.expect("kind")
    cur.expect("=")
    kind_tok = cur.peek()
    kind = cur.choice(SubjectKind, "subject kind")
    if kind is SubjectKind.EVENT:
        raise cur.fail("subject kind (user|device)", kind_tok)
    groups: frozenset[str] = frozenset()
    relations: set[tuple[str, EntityId]] = set()
    attrs: dict[str, AttributeValue] = {}
    if cur.accept("group"):
        cur.expect("=")
        groups = _id_list(cur)
    if cur.accept("rel"):
        relations.add((cur.ident("relation name"), _arrow_target(cur)))
        while cur.peek_is("->", 1):
            relations.add((cur.ident("relation name"), _arrow_target(cur)))
    if cur.accept("attr"):
        attrs = _attributes(cur)
    cur.done()
    return Subject(id=subject_id, kind=kind, groups=groups, relations=frozenset(relations), attributes=attrs)


def _arrow_target(cur: _Cursor) -> EntityId:
    cur.expect("->")
    return cur.ident("relation target")


def parse_policy(text: str, *, file: str = "<policy>") -> PolicySet:
    errors: list[ParseError] = []
    devices: dict[EntityId, DeviceObject] = {}
    subjects: dict[EntityId, Subject] = {}
    environment: dict[str, AttributeValue] = {}
    rules: list[ActivityRule] = []
    relations: list[RelationDecl] = []
    limits: list[UsageLimit] = []
    draft: Optional[_RuleDraft] = None

    def close(draft: Optional[_RuleDraft]) -> None:
        if draft is None or draft.broken:
            return
        if draft.head is None:
            cur = draft.cursor
            errors.append(ParseError(cur.span(cur.tokens[0]), "allow clause", "end of rule"))
            return
        rules.append(draft.build())

    for cur, indented in _cursors(text, file, errors):
        try:
            if indented:
                if draft is None:
                    raise cur.fail("declaration at the start of the line")
                _clause(cur, draft)
                continue

            close(draft)
            draft = None
            tok = cur.peek()
            keyword = cur.ident("declaration (device, subject, env, limit, rule, relation)")
            if keyword == "rule":
                draft = _RuleDraft(cursor=cur, broken=True)
                cur.expect("on")
                draft.object = _pattern(cur)
                cur.expect(":")
                if not cur.at_end:
                    _allow(cur, draft)
                cur.done()
                draft.broken = False
            elif keyword == "device":
                name_tok = cur.peek()
                device = _device(cur)
                if device.id in devices:
                    raise cur.fail("unique device id", name_tok)
                devices[device.id] = device
            elif keyword == "subject":
                name_tok = cur.peek()
                subject = _subject(cur)
                if subject.id in subjects:
                    raise cur.fail("unique subject id", name_tok)
                subjects[subject.id] = subject
            elif keyword == "env":
                name_tok = cur.peek()
                name = cur.ident("environment name")
                cur.expect("=")
                value = _value(cur)
                cur.done()
                if name in environment:
                    raise cur.fail("unique environment name", name_tok)
                environment[name] = value
            elif keyword == "limit":
                limits.append(_limit(cur))
                cur.done()
            elif keyword == "relation":
                relations.append(_relation_body(cur))
            else:
                raise cur.fail("declaration (device, subject, env, limit, rule, relation)", tok)
        except _LineError as ex:
            errors.append(ex.error)
    close(draft)

    if errors:
        logger.debug("Policy %s: %d parse errors", file, len(errors))
        raise ParseFailure(errors)
    return PolicySet(
        rules=tuple(rules),
        relations=tuple(relations),
        devices=devices,
        subjects=subjects,
        environment=environment,
        limits=tuple(limits),
    )


# --- scenarios ---

def _expectation(cur: _Cursor) -> Expectation:
    outcome_tok = cur.peek()
    word = cur.ident("permit or deny")
    if word not in ("permit", "deny"):
        raise cur.fail("permit or deny", outcome_tok)
    reason = None
    if word == "deny" and cur.accept(":"):
        code_tok = cur.peek()
        code = cur.ident("reason code")
        try:
            reason = DenyReason(code)
        except ValueError:
            raise cur.fail("reason code", code_tok) from None
    revoked: list[tuple[str, str]] = []
    if cur.accept("revoked"):
        cur.expect("=")
        while True:
            device = cur.ident("device")
            cur.expect("/")
            revoked.append((device, cur.ident("activity")))
            if not cur.accept(","):
                break
    outcome = Outcome.PERMIT if word == "permit" else Outcome.DENY
    return Expectation(outcome=outcome, reason=reason, revoked=tuple(revoked))


def parse_scenario(text: str, *, file: str = "<scenario>") -> Scenario:
    errors: list[ParseError] = []
    events: list[ScenarioEvent] = []
    expectations: dict[int, Expectation] = {}
    last_request: Optional[int] = None
    clock: Timestamp = 0

    for cur, _ in _cursors(text, file, errors):
        try:
            cur.expect("at")
            time_tok = cur.peek()
            time = _seconds(cur, "time")
            if time < clock:
                raise cur.fail(f"time >= {clock} (events must be sorted)", time_tok)
            clock = time
            kind_tok = cur.peek()
            kind = cur.ident("request, env, event, expect or tick")
            event: Optional[ScenarioEvent] = None
            if kind == "request":
                subject = cur.ident("subject")
                op = cur.ident("operation")
                obj = cur.ident("object")
                event = RequestEvent(time=time, subject=subject, op=op, object=obj, activity=cur.ident("activity"))
            elif kind == "env":
                name = cur.ident("environment name")
                cur.expect("=")
                event = EnvEvent(time=time, name=name, value=_value(cur))
            elif kind == "event":
                obj = cur.ident("object")
                activity = cur.ident("activity")
                event = DeviceEvent(time=time, object=obj, activity=activity, action=cur.choice(DeviceAction, "action"))
            elif kind == "tick":
                event = TickEvent(time=time)
            elif kind == "expect":
                expectation = _expectation(cur)
                if last_request is None:
                    raise cur.fail("a preceding request or event start", kind_tok)
                if last_request in expectations:
                    raise cur.fail("one expectation per decision", kind_tok)
                cur.done()
                expectations[last_request] = expectation
                continue
            else:
                raise cur.fail("request, env, event, expect or tick", kind_tok)
            cur.done()
            # event starts pass the decision pipeline, so they can carry an expectation too
            if isinstance(event, RequestEvent) or (
                isinstance(event, DeviceEvent) and event.action is DeviceAction.START
            ):
                last_request = len(events)
            events.append(event)
        except _LineError as ex:
            errors.append(ex.error)

    if errors:
        raise ParseFailure(errors)
    return Scenario(events=tuple(events), expectations=expectations)


def parse_universe(text: str, *, file: str = "<universe>") -> RequestUniverse:
    errors: list[ParseError] = []
    requests: list[Request] = []
    properties: list[RelationDecl] = []
    granularity: Optional[int] = None

    for cur, _ in _cursors(text, file, errors):
        try:
            tok = cur.peek()
            keyword = cur.ident("request, granularity or property")
            if keyword == "request":
                subject = cur.ident("subject")
                op = cur.ident("operation")
                obj = cur.ident("object")
                requests.append(Request(subject=subject, op=op, object=obj, activity=cur.ident("activity")))
                cur.done()
            elif keyword == "granularity":
                if granularity is not None:
                    raise cur.fail("a single granularity line", tok)
                granularity = _seconds(cur)
                cur.done()
            elif keyword == "property":
                properties.append(_relation_body(cur))
            else:
                raise cur.fail("request, granularity or property", tok)
        except _LineError as ex:
            errors.append(ex.error)

    if errors:
        raise ParseFailure(errors)
    return RequestUniverse(requests=tuple(requests), granularity=granularity, properties=tuple(properties))

