"""Expectation-rule DSL compiler and edge-triggered evaluator.

Rule files are line based, case sensitive, ``#`` starts a comment::

    version 3
    rule door_max class=UUB when door_open_duration_s gt 60 then log debounce=1
    rule power_crit class=UFB when power_w gt 280 then alarm
    rule save class=UFB when duty_ratio gt 2.0 then control:thermostat_band

A rule fires on the false-to-true crossing of its condition, not on every
frame where it holds: level-triggered firing at sampling rate would flood the
uplink. ``debounce=<sec>`` re-fires a still-held condition every so often so
persistence remains visible; aggregation downstream compresses the repeats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    DuplicateRuleId,
    MissingVersion,
    NonFiniteThreshold,
    ParseError,
    StaleVersion,
    StateMismatch,
    UnknownParameter,
)
from .telemetry import (
    NS_PER_S,
    Severity,
    Timestamp,
    TOKEN_RE,
    ViolationClass,
    make_violation_record,
    parameter_registry,
)


class Comparator(Enum):
    GT = "gt"
    GE = "ge"
    LT = "lt"
    LE = "le"


class ActionKind(Enum):
    LOG = "log"
    ALARM = "alarm"
    CONTROL = "control"


@dataclass(frozen=True)
class RuleCondition:
    parameter: str
    cmp: Comparator
    threshold: float


@dataclass(frozen=True)
class RuleAction:
    kind: ActionKind
    actuator_id: str | None = None


@dataclass(frozen=True)
class ExpectationRule:
    id: str
    violation_class: ViolationClass
    condition: RuleCondition
    action: RuleAction
    debounce_s: float = 0.0
    snapshot_extra: tuple = ()


_CMP_CODE = {Comparator.GT: 0, Comparator.GE: 1, Comparator.LT: 2, Comparator.LE: 3}


@dataclass
class RuleSet:
    """Versioned, ordered rule list. Treated as immutable once built."""

    version: int
    rules: tuple
    _ids: tuple = field(init=False, repr=False)
    _plan: list = field(init=False, repr=False)

    def __post_init__(self):
        self.rules = tuple(self.rules)
        self._ids = tuple(rule.id for rule in self.rules)
        if len(set(self._ids)) != len(self._ids):
            raise DuplicateRuleId(0, "rule ids must be pairwise distinct")
        self._plan = []
        for rule in self.rules:
            severity = Severity.ALARM if rule.action.kind is ActionKind.ALARM else Severity.LOG
            self._plan.append((
                rule,
                rule.condition.parameter,
                _CMP_CODE[rule.condition.cmp],
                rule.condition.threshold,
                int(round(rule.debounce_s * NS_PER_S)),
                rule.snapshot_extra,
                severity,
            ))


class ParameterFrame:
    """Latest value of each raw and derived parameter, keyed by name.

    ``values`` maps name -> (value, at_ns); ``time_ns`` is the newest
    timestamp seen, which is the evaluation time for debounce arithmetic.
    """

    __slots__ = ("values", "time_ns")

    def __init__(self, values=None, time_ns=0):
        self.values = dict(values) if values else {}
        self.time_ns = time_ns

    def set(self, parameter: str, value: float, at_ns: int) -> None:
        self.values[parameter] = (value, at_ns)
        if at_ns > self.time_ns:
            self.time_ns = at_ns

    def get(self, parameter: str):
        entry = self.values.get(parameter)
        return entry[0] if entry is not None else None


@dataclass
class RuleEvalState:
    """Edge-trigger memory: per rule, is the condition currently held and
    when did it last fire."""

    version: int
    rule_ids: tuple
    violated: list
    last_fire_ns: list


def new_eval_state(ruleset: RuleSet) -> RuleEvalState:
    n = len(ruleset.rules)
    return RuleEvalState(ruleset.version, ruleset._ids, [False] * n, [None] * n)


def evaluate(ruleset: RuleSet, frame: ParameterFrame, state: RuleEvalState):
    """Evaluate every rule once, in source order, against `frame`.

    Pure: returns (fired, state') and never mutates its inputs. A rule whose
    parameter is absent from the frame is skipped (derived signals such as
    duty_ratio are undefined until their first cycle completes).
    """
    if state.version != ruleset.version or state.rule_ids != ruleset._ids:
        raise StateMismatch(
            f"state is for version {state.version}, rule set is {ruleset.version}"
        )
    values = frame.values
    t_ns = frame.time_ns
    violated = state.violated.copy()
    last_fire = state.last_fire_ns.copy()
    fired = []
    for idx, (rule, param, code, thr, deb_ns, extras, severity) in enumerate(ruleset._plan):
        entry = values.get(param)
        if entry is None:
            continue
        v = entry[0]
        if code == 0:
            cond = v > thr
        elif code == 1:
            cond = v >= thr
        elif code == 2:
            cond = v < thr
        else:
            cond = v <= thr
        if cond:
            if not violated[idx]:
                fire = True
            elif deb_ns > 0 and t_ns - last_fire[idx] >= deb_ns:
                fire = True
            else:
                fire = False
            if fire:
                snapshot = [(param, v)]
                for extra in extras:
                    e = values.get(extra)
                    if e is not None and extra != param:
                        snapshot.append((extra, e[0]))
                record = make_violation_record(
                    rule.id, rule.violation_class, snapshot,
                    Timestamp.from_ns(t_ns), severity,
                )
                fired.append((rule, record))
                last_fire[idx] = t_ns
            violated[idx] = True
        else:
            violated[idx] = False
    return fired, RuleEvalState(state.version, state.rule_ids, violated, last_fire)


def swap_ruleset(current: RuleSet, incoming: RuleSet) -> RuleSet:
    """Replace `current` iff `incoming` is strictly newer.

    The caller must create a fresh RuleEvalState for the returned set; edge
    state never carries across versions.
    """
    if incoming.version <= current.version:
        raise StaleVersion(
            f"incoming version {incoming.version} <= active {current.version}"
        )
    return incoming


# -- compiler ------------------------------------------------------------------

_COMPARATORS = {c.value: c for c in Comparator}
_CLASSES = {c.value: c for c in ViolationClass}


def compile_ruleset(source: str, registry=None, actuators=None) -> RuleSet:
    """Compile rule-DSL text into a RuleSet.

    `registry` is the closed parameter set (defaults to the standard two
    chamber registry); `actuators`, when given, validates control targets.
    """
    if registry is None:
        registry = parameter_registry()
    version = None
    rules = []
    seen_ids = set()
    for line_no, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "version":
            if version is not None:
                raise ParseError(line_no, "duplicate version line")
            if rules:
                raise MissingVersion(line_no, "version must precede rules")
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise ParseError(line_no, "expected: version <non-negative integer>")
            version = int(tokens[1])
            continue
        if tokens[0] != "rule":
            raise ParseError(line_no, f"unknown directive {tokens[0]!r}")
        if version is None:
            raise MissingVersion(line_no, "rule before version line")
        rules.append(_parse_rule(tokens, line_no, registry, actuators, seen_ids))
    if version is None:
        raise MissingVersion(0, "no version line")
    return RuleSet(version, tuple(rules))


def _parse_rule(tokens, line_no, registry, actuators, seen_ids) -> ExpectationRule:
    if len(tokens) < 9:
        raise ParseError(line_no, "rule line too short")
    _, rule_id, class_tok, when_kw, param, cmp_tok, thr_tok, then_kw, action_tok = tokens[:9]
    if not TOKEN_RE.match(rule_id):
        raise ParseError(line_no, f"bad rule id {rule_id!r}")
    if rule_id in seen_ids:
        raise DuplicateRuleId(line_no, f"duplicate rule id {rule_id!r}")
    if not class_tok.startswith("class="):
        raise ParseError(line_no, "expected class=<UFB|UEB|UUB>")
    cls = _CLASSES.get(class_tok[len("class="):])
    if cls is None:
        raise ParseError(line_no, f"unknown class {class_tok!r}")
    if when_kw != "when" or then_kw != "then":
        raise ParseError(line_no, "expected: when <param> <cmp> <num> then <action>")
    if param not in registry:
        raise UnknownParameter(line_no, f"parameter {param!r} not in registry")
    cmp = _COMPARATORS.get(cmp_tok)
    if cmp is None:
        raise ParseError(line_no, f"comparator must be one of gt/ge/lt/le, got {cmp_tok!r}")
    try:
        threshold = float(thr_tok)
    except ValueError:
        raise ParseError(line_no, f"bad threshold {thr_tok!r}") from None
    if not math.isfinite(threshold):
        raise NonFiniteThreshold(line_no, f"threshold {thr_tok!r} is not finite")
    action = _parse_action(action_tok, line_no, actuators)
    debounce = 0.0
    extras = ()
    for clause in tokens[9:]:
        key, eq, value = clause.partition("=")
        if not eq:
            raise ParseError(line_no, f"bad clause {clause!r}")
        if key == "debounce":
            try:
                debounce = float(value)
            except ValueError:
                raise ParseError(line_no, f"bad debounce {value!r}") from None
            if not math.isfinite(debounce) or debounce < 0:
                raise ParseError(line_no, "debounce must be a non-negative number")
        elif key == "snapshot":
            extras = tuple(value.split(","))
            for name in extras:
                if name not in registry:
                    raise UnknownParameter(line_no, f"snapshot parameter {name!r} not in registry")
        else:
            raise ParseError(line_no, f"unknown clause {key!r}")
    seen_ids.add(rule_id)
    return ExpectationRule(rule_id, cls, RuleCondition(param, cmp, threshold),
                           action, debounce, extras)


def _parse_action(token, line_no, actuators) -> RuleAction:
    if token == "log":
        return RuleAction(ActionKind.LOG)
    if token == "alarm":
        return RuleAction(ActionKind.ALARM)
    if token.startswith("control:"):
        actuator_id = token[len("control:"):]
        if not TOKEN_RE.match(actuator_id):
            raise ParseError(line_no, f"bad actuator id {actuator_id!r}")
        if actuators is not None and actuator_id not in actuators:
            raise ParseError(line_no, f"actuator {actuator_id!r} is not registered")
        return RuleAction(ActionKind.CONTROL, actuator_id)
    raise ParseError(line_no, f"action must be log, alarm or control:<id>, got {token!r}")
