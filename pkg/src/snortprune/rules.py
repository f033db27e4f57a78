"""Snort 3 rule model: parsing, serialization and removable-option policy.

A rule is a header plus an ordered tuple of options. ``content`` values are
decoded to bytes at parse time (``|41 42|`` hex blocks, ``\\"``, ``\\\\``,
``\\;``) and re-escaped canonically on output, so the AST survives a
parse/serialize/parse round trip even when the source text does not.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable

__all__ = [
    "ACTIONS",
    "PROTOCOLS",
    "DEFAULT_EXCLUDED",
    "RuleSyntaxError",
    "DuplicateSidError",
    "RuleHeader",
    "RuleOption",
    "Rule",
    "RemovablePolicy",
    "parse_rule",
    "parse_ruleset",
    "serialize_rule",
    "serialize_ruleset",
    "removable_options",
    "is_multi_content",
    "decode_content",
    "encode_content",
]

ACTIONS = ("alert", "block", "drop", "log", "pass")
PROTOCOLS = ("ip", "tcp", "udp", "icmp")
DIRECTIONS = ("->", "<>")

DEFAULT_EXCLUDED = frozenset(
    {"msg", "sid", "rev", "gid", "reference", "classtype", "metadata", "priority"}
)

# Options that carry comma-separated modifiers in Snort 3 syntax.
MODIFIER_OPTIONS = frozenset({"content", "isdataat"})

# Snort 2 style stand-alone content modifiers; bound to the preceding content.
CONTENT_MODIFIERS = frozenset(
    {"nocase", "offset", "depth", "distance", "within", "fast_pattern", "rawbytes"}
)


class RuleSyntaxError(ValueError):
    """Malformed rule text. ``offset`` is the character index of the fault."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        self.message = message
        self.offset = offset
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class DuplicateSidError(ValueError):
    def __init__(self, sid: int, first_line: int, second_line: int):
        self.sid = sid
        self.lines = (first_line, second_line)
        super().__init__(
            f"duplicate sid {sid} on lines {first_line} and {second_line}"
        )


@dataclass(frozen=True)
class RuleHeader:
    action: str
    protocol: str
    src_addr: str
    src_port: str
    direction: str
    dst_addr: str
    dst_port: str

    def __str__(self) -> str:
        return " ".join(
            (self.action, self.protocol, self.src_addr, self.src_port,
             self.direction, self.dst_addr, self.dst_port)
        )


@dataclass(frozen=True)
class RuleOption:
    """One option of a rule body.

    ``value`` is ``bytes`` for ``content`` (already unescaped) and the raw
    stripped text for every other keyword. ``negated`` is only meaningful
    for ``content``.
    """

    keyword: str
    value: str | bytes = ""
    modifiers: tuple[tuple[str, str], ...] = ()
    position: int = 0
    negated: bool = False

    def modifier(self, name: str) -> str | None:
        for key, val in self.modifiers:
            if key == name:
                return val
        return None

    def has_modifier(self, name: str) -> bool:
        return any(key == name for key, _ in self.modifiers)


@dataclass(frozen=True)
class Rule:
    header: RuleHeader
    options: tuple[RuleOption, ...]
    sid: int
    rev: int = 1
    raw_text: str = field(default="", compare=False, repr=False)

    def option_at(self, position: int) -> RuleOption:
        for opt in self.options:
            if opt.position == position:
                return opt
        raise KeyError(position)

    def keywords(self) -> list[str]:
        return [opt.keyword for opt in self.options]

    def without(self, positions: Iterable[int]) -> "Rule":
        """Copy with the options at ``positions`` dropped and the rest renumbered."""
        drop = set(positions)
        kept = [opt for opt in self.options if opt.position not in drop]
        renumbered = tuple(replace(opt, position=i) for i, opt in enumerate(kept))
        return replace(self, options=renumbered, raw_text="")


@dataclass(frozen=True)
class RemovablePolicy:
    excluded_keywords: frozenset[str] = DEFAULT_EXCLUDED
    dependency_check: bool = True

    def __post_init__(self):
        # sid and rev can never be removed, whatever the caller passes.
        object.__setattr__(
            self, "excluded_keywords",
            frozenset(self.excluded_keywords) | {"sid", "rev"},
        )


# --------------------------------------------------------------------------
# content escaping

_PRINTABLE = set(range(0x20, 0x7F)) - {ord('"'), ord(";"), ord("\\"), ord("|")}
_BACKSLASHED = {ord('"'), ord(";"), ord("\\")}


def decode_content(text: str, base_offset: int = 0) -> bytes:
    """Decode the inside of a quoted content string into bytes."""
    out = bytearray()
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\\":
            if i + 1 >= n:
                raise RuleSyntaxError("dangling escape in content", base_offset + i)
            out += text[i + 1].encode("latin-1")
            i += 2
        elif ch == "|":
            end = text.find("|", i + 1)
            if end < 0:
                raise RuleSyntaxError("unterminated hex block in content", base_offset + i)
            digits = "".join(text[i + 1:end].split())
            if len(digits) % 2 or not re.fullmatch(r"[0-9A-Fa-f]*", digits):
                raise RuleSyntaxError("bad hex block in content", base_offset + i)
            out += bytes.fromhex(digits)
            i = end + 1
        else:
            out += ch.encode("latin-1")
            i += 1
    return bytes(out)


def encode_content(data: bytes) -> str:
    """Canonical escaping: printable ASCII literally, ``"`;`\\`` backslashed,
    everything else (including ``|``) in uppercase hex blocks."""
    parts: list[str] = []
    hex_run: list[str] = []
    for b in data:
        if b in _PRINTABLE or b in _BACKSLASHED:
            if hex_run:
                parts.append("|" + " ".join(hex_run) + "|")
                hex_run = []
            parts.append("\\" + chr(b) if b in _BACKSLASHED else chr(b))
        else:
            hex_run.append(f"{b:02X}")
    if hex_run:
        parts.append("|" + " ".join(hex_run) + "|")
    return "".join(parts)


# --------------------------------------------------------------------------
# parsing

def _split_body(body: str, base: int) -> list[tuple[str, int]]:
    """Split the text between the parentheses on unquoted ``;``."""
    pieces = []
    start = 0
    in_quote = False
    quote_at = 0
    i = 0
    while i < len(body):
        ch = body[i]
        if in_quote:
            if ch == "\\":
                i += 2
                continue
            if ch == '"':
                in_quote = False
        elif ch == '"':
            in_quote = True
            quote_at = i
        elif ch == ";":
            pieces.append((body[start:i], base + start))
            start = i + 1
        i += 1
    if in_quote:
        raise RuleSyntaxError("unbalanced quote", base + quote_at)
    tail = body[start:]
    if tail.strip():
        raise RuleSyntaxError("option not terminated by ';'", base + start)
    return pieces


def _split_commas(text: str) -> list[str]:
    """Split on commas outside double quotes."""
    parts, buf, in_quote, i = [], [], False, 0
    while i < len(text):
        ch = text[i]
        if in_quote and ch == "\\" and i + 1 < len(text):
            buf.append(text[i:i + 2])
            i += 2
            continue
        if ch == '"':
            in_quote = not in_quote
        if ch == "," and not in_quote:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return parts


def _parse_modifier(text: str) -> tuple[str, str]:
    text = text.strip()
    if ":" in text and " " not in text.split(":", 1)[0]:
        key, val = text.split(":", 1)
    else:
        key, _, val = text.partition(" ")
    return key.strip(), val.strip()


def _parse_content(value: str, offset: int) -> tuple[bytes, bool, tuple[tuple[str, str], ...]]:
    stripped = value.lstrip()
    lead = len(value) - len(stripped)
    negated = False
    if stripped.startswith("!"):
        negated = True
        stripped = stripped[1:].lstrip()
        lead = len(value) - len(stripped)
    if not stripped.startswith('"'):
        raise RuleSyntaxError("content value must be quoted", offset + lead)
    i = 1
    while i < len(stripped):
        if stripped[i] == "\\":
            i += 2
            continue
        if stripped[i] == '"':
            break
        i += 1
    else:
        raise RuleSyntaxError("unbalanced quote in content", offset + lead)
    pattern = decode_content(stripped[1:i], offset + lead + 1)
    rest = stripped[i + 1:].strip()
    modifiers: list[tuple[str, str]] = []
    if rest:
        if not rest.startswith(","):
            raise RuleSyntaxError("junk after content pattern", offset + lead + i + 1)
        for part in _split_commas(rest[1:]):
            if part.strip():
                modifiers.append(_parse_modifier(part))
    return pattern, negated, tuple(modifiers)


def parse_rule(text: str) -> Rule:
    """Parse one complete rule line into a :class:`Rule`."""
    raw = text.strip()
    open_at = text.find("(")
    if open_at < 0:
        raise RuleSyntaxError("missing rule body", len(text))
    head_tokens = text[:open_at].split()
    if len(head_tokens) != 7:
        raise RuleSyntaxError(
            f"malformed header: expected 7 fields, got {len(head_tokens)}", 0
        )
    action, proto, src, sport, direction, dst, dport = head_tokens
    if action not in ACTIONS:
        raise RuleSyntaxError(f"unknown action {action!r}", text.find(action))
    if proto not in PROTOCOLS:
        raise RuleSyntaxError(f"unknown protocol {proto!r}", text.find(proto))
    if direction not in DIRECTIONS:
        raise RuleSyntaxError(f"bad direction {direction!r}", text.find(direction))
    header = RuleHeader(action, proto, src, sport, direction, dst, dport)

    # locate the closing parenthesis outside quotes
    in_quote = False
    close_at = -1
    i = open_at + 1
    while i < len(text):
        ch = text[i]
        if in_quote:
            if ch == "\\":
                i += 2
                continue
            if ch == '"':
                in_quote = False
        elif ch == '"':
            in_quote = True
        elif ch == ")":
            close_at = i
            break
        elif ch == "(":
            raise RuleSyntaxError("unbalanced parenthesis", i)
        i += 1
    if in_quote:
        raise RuleSyntaxError("unbalanced quote", open_at)
    if close_at < 0:
        raise RuleSyntaxError("unterminated rule body", len(text))
    if text[close_at + 1:].strip():
        raise RuleSyntaxError("trailing text after rule body", close_at + 1)

    options: list[RuleOption] = []
    sid = rev = None
    for piece, at in _split_body(text[open_at + 1:close_at], open_at + 1):
        if not piece.strip():
            raise RuleSyntaxError("empty option", at)
        keyword, colon, value = piece.partition(":")
        keyword = keyword.strip()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.]*", keyword):
            raise RuleSyntaxError(f"bad option keyword {keyword!r}", at)
        value_at = at + len(piece) - len(value) if colon else at
        if keyword == "content":
            pattern, negated, mods = _parse_content(value, value_at)
            opt = RuleOption("content", pattern, mods, len(options), negated)
        elif keyword in MODIFIER_OPTIONS:
            head, *tail = _split_commas(value)
            mods = tuple(_parse_modifier(t) for t in tail if t.strip())
            opt = RuleOption(keyword, head.strip(), mods, len(options))
        elif keyword in CONTENT_MODIFIERS:
            target = next(
                (k for k in range(len(options) - 1, -1, -1)
                 if options[k].keyword == "content"),
                None,
            )
            if target is None:
                raise RuleSyntaxError(f"{keyword} without preceding content", at)
            bound = options[target]
            options[target] = replace(
                bound, modifiers=bound.modifiers + ((keyword, value.strip()),)
            )
            continue
        else:
            opt = RuleOption(keyword, value.strip(), (), len(options))
            if keyword in ("sid", "rev"):
                try:
                    number = int(opt.value)
                except ValueError:
                    raise RuleSyntaxError(f"{keyword} must be an integer", value_at) from None
                if number <= 0:
                    raise RuleSyntaxError(f"{keyword} must be positive", value_at)
                if keyword == "sid":
                    if sid is not None:
                        raise RuleSyntaxError("sid given twice", at)
                    sid = number
                else:
                    rev = number
        options.append(opt)

    if sid is None:
        raise RuleSyntaxError("rule has no sid", open_at)
    return Rule(header, tuple(options), sid, rev if rev is not None else 1, raw)


def parse_ruleset(text: str) -> list[Rule]:
    """Parse a rules file; ``#`` comment and blank lines are skipped."""
    rules: list[Rule] = []
    seen: dict[int, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            rule = parse_rule(line)
        except RuleSyntaxError as exc:
            raise RuleSyntaxError(exc.message, exc.offset, lineno) from None
        if rule.sid in seen:
            raise DuplicateSidError(rule.sid, seen[rule.sid], lineno)
        seen[rule.sid] = lineno
        rules.append(rule)
    return rules


# --------------------------------------------------------------------------
# serialization

def _format_modifier(key: str, val: str) -> str:
    return f"{key} {val}" if val else key


def serialize_option(opt: RuleOption) -> str:
    if opt.keyword == "content":
        assert isinstance(opt.value, bytes)
        text = ("!" if opt.negated else "") + '"' + encode_content(opt.value) + '"'
        parts = [text] + [_format_modifier(k, v) for k, v in opt.modifiers]
        return "content:" + ",".join(parts) + ";"
    value = opt.value
    if opt.modifiers:
        value = ",".join([str(value)] + [_format_modifier(k, v) for k, v in opt.modifiers])
    if value == "":
        return f"{opt.keyword};"
    return f"{opt.keyword}:{value};"


def serialize_rule(rule: Rule) -> str:
    body = " ".join(serialize_option(opt) for opt in rule.options)
    return f"{rule.header} ( {body} )"


def serialize_ruleset(rules: Iterable[Rule]) -> str:
    return "".join(serialize_rule(r) + "\n" for r in rules)


# --------------------------------------------------------------------------
# removal policy

def _defined_variable(opt: RuleOption) -> str | None:
    if opt.keyword == "byte_extract":
        fields = [f.strip() for f in str(opt.value).split(",")]
        return fields[2] if len(fields) > 2 else None
    if opt.keyword == "byte_math":
        for f in str(opt.value).split(","):
            key, _, val = f.strip().partition(" ")
            if key == "result" and val.strip():
                return val.strip()
    return None


def _references(opt: RuleOption, name: str) -> bool:
    texts = [opt.value if isinstance(opt.value, str) else ""]
    texts += [v for _, v in opt.modifiers]
    pattern = re.compile(r"(?<![\w])" + re.escape(name) + r"(?![\w])")
    return any(pattern.search(t) for t in texts)


def removable_options(rule: Rule, policy: RemovablePolicy | None = None) -> list[int]:
    """Positions of the options that may be removed, ascending."""
    policy = policy or RemovablePolicy()
    positions = []
    for idx, opt in enumerate(rule.options):
        if opt.keyword in policy.excluded_keywords:
            continue
        if policy.dependency_check:
            name = _defined_variable(opt)
            if name and any(_references(later, name) for later in rule.options[idx + 1:]):
                continue
        positions.append(opt.position)
    return sorted(positions)


def is_multi_content(rule: Rule) -> bool:
    return sum(1 for opt in rule.options if opt.keyword == "content") >= 2
