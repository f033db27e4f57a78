"""A small Snort-style signature matcher.

Options are checked in rule order and evaluation stops at the first option
that fails, so a failed rule never touches ``detection_filter`` state.
Supported: ``content`` (nocase, offset, depth, distance, within, negation),
``http_header`` / ``pkt_data`` buffers, ``isdataat``, ``flags``,
``ip_proto``, ``flow`` (direction only) and ``detection_filter``. General
options (msg, sid, ...) are no-ops. Anything else is *unevaluable*: in
``permissive`` mode it is treated as true, in ``strict`` mode the whole rule
is left out of the run and reported.

``pass`` rules never alert; every other action counts as a detection.
"""

from __future__ import annotations

import csv
import ipaddress
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from .mutation import RuleVariant, VariantRuleset, original_variant
from .rules import DEFAULT_EXCLUDED, Rule, RuleHeader, RuleOption
from .traffic import FLAG_LETTERS, NO_FLAGS, PacketRecord, TcpFlag

__all__ = [
    "PERMISSIVE",
    "STRICT",
    "EVALUATED_KEYWORDS",
    "MatchContext",
    "AlertRecord",
    "RunResult",
    "eval_rule",
    "header_matches",
    "unevaluable_options",
    "run_ruleset",
    "write_alerts_csv",
    "read_alerts_csv",
]

PERMISSIVE = "permissive"
STRICT = "strict"

EVALUATED_KEYWORDS = frozenset({
    "content", "http_header", "pkt_data", "isdataat", "flags",
    "ip_proto", "flow", "detection_filter",
})
NOOP_KEYWORDS = DEFAULT_EXCLUDED | {"sid", "rev"}

PROTO_NUMBERS = {"ip": None, "tcp": 6, "udp": 17, "icmp": 1}
IP_PROTO_NAMES = {
    "icmp": 1, "igmp": 2, "ipip": 4, "tcp": 6, "egp": 8, "igp": 9, "udp": 17,
    "rdp": 27, "ipv6": 41, "rsvp": 46, "gre": 47, "esp": 50, "ah": 51,
    "icmpv6": 58, "ospf": 89, "pim": 103, "sctp": 132,
}
FLOW_DIRECTIONS = {
    "to_server": "to_server", "from_client": "to_server",
    "to_client": "to_client", "from_server": "to_client",
}
FLOW_STATES = frozenset({
    "established", "not_established", "stateless", "no_stream",
    "only_stream", "no_frag", "only_frag",
})


class Unevaluable(Exception):
    """Raised while decoding an option this engine cannot evaluate."""


@dataclass
class MatchContext:
    """Mutable per-run state; use a fresh one for every ruleset evaluation."""

    filter_state: dict[tuple[str, str], deque] = field(default_factory=dict)
    unevaluable: str = PERMISSIVE


@dataclass(frozen=True, order=True)
class AlertRecord:
    timestamp: float
    variant_id: str
    sid: int
    src_ip: str


@dataclass(frozen=True)
class RunResult:
    flagged: frozenset[str]
    alerts: tuple[AlertRecord, ...]
    skipped: tuple[str, ...] = ()

    def __iter__(self):
        # allows ``flagged, alerts = run_ruleset(...)``
        return iter((self.flagged, self.alerts))


# --------------------------------------------------------------------------
# header

@lru_cache(maxsize=4096)
def _address_spec(spec: str):
    """Return ``None`` for "any", else (positives, negatives) network tuples."""
    spec = spec.strip()
    negate = False
    while spec.startswith("!"):
        negate = not negate
        spec = spec[1:].strip()
    if spec == "any" or spec.startswith("$"):
        return None if not negate else ((), (ipaddress.IPv4Network("0.0.0.0/0"),))
    if spec.startswith("[") and spec.endswith("]"):
        pos: list = []
        neg: list = []
        for item in _split_list(spec[1:-1]):
            sub = _address_spec(item)
            if sub is None:
                return None if not negate else ((), (ipaddress.IPv4Network("0.0.0.0/0"),))
            sp, sn = sub
            pos.extend(sp)
            neg.extend(sn)
        if negate:
            return tuple(neg), tuple(pos)
        return tuple(pos), tuple(neg)
    net = ipaddress.IPv4Network(spec, strict=False)
    return ((), (net,)) if negate else ((net,), ())


def _split_list(text: str) -> list[str]:
    items, depth, buf = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            items.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    if buf:
        items.append("".join(buf))
    return [i.strip() for i in items if i.strip()]


def _address_matches(spec: str, ip: str) -> bool:
    parsed = _address_spec(spec)
    if parsed is None:
        return True
    pos, neg = parsed
    addr = ipaddress.IPv4Address(ip)
    if any(addr in n for n in neg):
        return False
    return not pos or any(addr in n for n in pos)


@lru_cache(maxsize=4096)
def _port_spec(spec: str):
    spec = spec.strip()
    negate = False
    while spec.startswith("!"):
        negate = not negate
        spec = spec[1:].strip()
    if spec == "any" or spec.startswith("$"):
        ranges = None
    elif spec.startswith("[") and spec.endswith("]"):
        pos, neg = [], []
        for item in _split_list(spec[1:-1]):
            sub = _port_spec(item)
            if sub is None:
                return None if not negate else ((), ((0, 65535),))
            pos.extend(sub[0])
            neg.extend(sub[1])
        return (tuple(neg), tuple(pos)) if negate else (tuple(pos), tuple(neg))
    elif ":" in spec:
        lo, _, hi = spec.partition(":")
        ranges = ((int(lo) if lo else 0, int(hi) if hi else 65535),)
    else:
        ranges = ((int(spec), int(spec)),)
    if ranges is None:
        return None if not negate else ((), ((0, 65535),))
    return ((), ranges) if negate else (ranges, ())


def _port_matches(spec: str, port: int) -> bool:
    parsed = _port_spec(spec)
    if parsed is None:
        return True
    pos, neg = parsed
    if any(lo <= port <= hi for lo, hi in neg):
        return False
    return not pos or any(lo <= port <= hi for lo, hi in pos)


def header_matches(header: RuleHeader, packet: PacketRecord) -> bool:
    wanted = PROTO_NUMBERS[header.protocol]
    if wanted is not None and packet.ip_proto != wanted:
        return False
    check_ports = header.protocol in ("tcp", "udp")

    def oriented(src_ip, src_port, dst_ip, dst_port) -> bool:
        if not (_address_matches(header.src_addr, src_ip)
                and _address_matches(header.dst_addr, dst_ip)):
            return False
        if check_ports:
            return (_port_matches(header.src_port, src_port)
                    and _port_matches(header.dst_port, dst_port))
        return True

    if oriented(packet.src_ip, packet.src_port, packet.dst_ip, packet.dst_port):
        return True
    return header.direction == "<>" and oriented(
        packet.dst_ip, packet.dst_port, packet.src_ip, packet.src_port
    )


# --------------------------------------------------------------------------
# option decoding (cached per option value)

def _int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise Unevaluable(f"non-numeric argument {text!r}") from None


@dataclass(frozen=True)
class _ContentArgs:
    pattern: bytes
    nocase: bool
    negated: bool
    relative: bool
    offset: int
    depth: int | None
    distance: int
    within: int | None


@lru_cache(maxsize=65536)
def _content_args(opt: RuleOption) -> _ContentArgs:
    mods = dict(opt.modifiers)
    relative = "distance" in mods or "within" in mods
    return _ContentArgs(
        pattern=opt.value.lower() if "nocase" in mods else opt.value,
        nocase="nocase" in mods,
        negated=opt.negated,
        relative=relative,
        offset=_int(mods["offset"]) if "offset" in mods else 0,
        depth=_int(mods["depth"]) if "depth" in mods else None,
        distance=_int(mods["distance"]) if "distance" in mods else 0,
        within=_int(mods["within"]) if "within" in mods else None,
    )


@lru_cache(maxsize=65536)
def _isdataat_args(opt: RuleOption) -> tuple[bool, int, bool]:
    text = str(opt.value).strip()
    negated = text.startswith("!")
    relative = opt.has_modifier("relative")
    return negated, _int(text.lstrip("!")), relative


@lru_cache(maxsize=4096)
def _flags_args(value: str) -> tuple[str, TcpFlag, TcpFlag]:
    main, _, ignore = value.partition(",")
    main = main.strip()
    mode = "="
    if main and main[0] in "+*!":
        mode, main = main[0], main[1:]
    elif main and main[-1] in "+*!":
        mode, main = main[-1], main[:-1]

    def letters(text: str) -> TcpFlag:
        out = NO_FLAGS
        for ch in text.strip():
            if ch == "0":
                continue
            if ch not in FLAG_LETTERS:
                raise Unevaluable(f"bad flag letter {ch!r}")
            out |= FLAG_LETTERS[ch]
        return out

    return mode, letters(main), letters(ignore)


@lru_cache(maxsize=4096)
def _ip_proto_args(value: str) -> tuple[str, int]:
    text = value.strip()
    op = "="
    if text[:1] in "!<>=":
        op, text = text[0], text[1:].strip()
    if text.isdigit():
        return op, int(text)
    if text.lower() in IP_PROTO_NAMES:
        return op, IP_PROTO_NAMES[text.lower()]
    raise Unevaluable(f"unknown protocol {text!r}")


@lru_cache(maxsize=4096)
def _flow_args(value: str, mode: str) -> str | None:
    direction = None
    for token in (t.strip() for t in value.split(",")):
        if not token:
            continue
        if token in FLOW_DIRECTIONS:
            direction = FLOW_DIRECTIONS[token]
        elif token in FLOW_STATES:
            if mode == STRICT and token != "stateless":
                raise Unevaluable(f"flow state {token!r}")
        else:
            raise Unevaluable(f"flow keyword {token!r}")
    return direction


@lru_cache(maxsize=4096)
def _filter_args(value: str) -> tuple[str, int, float]:
    track = "by_src"
    count = seconds = None
    for part in value.split(","):
        key, _, val = part.strip().partition(" ")
        val = val.strip()
        if key == "track":
            track = val
        elif key == "count":
            count = _int(val)
        elif key == "seconds":
            try:
                seconds = float(val)
            except ValueError:
                raise Unevaluable(f"bad seconds {val!r}") from None
    if count is None or seconds is None or track not in ("by_src", "by_dst"):
        raise Unevaluable(f"bad detection_filter {value!r}")
    return track, count, seconds


def _check_option(opt: RuleOption, mode: str) -> None:
    """Raise :class:`Unevaluable` if the engine cannot evaluate ``opt``."""
    kw = opt.keyword
    if kw in NOOP_KEYWORDS:
        return
    if kw not in EVALUATED_KEYWORDS:
        raise Unevaluable(kw)
    if kw == "content":
        _content_args(opt)
    elif kw == "isdataat":
        _isdataat_args(opt)
    elif kw == "flags":
        _flags_args(str(opt.value))
    elif kw == "ip_proto":
        _ip_proto_args(str(opt.value))
    elif kw == "flow":
        _flow_args(str(opt.value), mode)
    elif kw == "detection_filter":
        _filter_args(str(opt.value))


def unevaluable_options(rule: Rule, mode: str = STRICT) -> list[str]:
    """Keywords of ``rule`` this engine cannot evaluate under ``mode``."""
    bad = []
    for opt in rule.options:
        try:
            _check_option(opt, mode)
        except Unevaluable:
            bad.append(opt.keyword)
    return bad


# --------------------------------------------------------------------------
# evaluation

def _search(args: _ContentArgs, buf: bytes, lowered: bytes | None, cursor: int) -> int:
    """Index of the leftmost match inside the content's window, or -1."""
    if args.relative:
        start = cursor + args.distance
        end = start + args.within if args.within is not None else len(buf)
    else:
        start = args.offset
        end = start + args.depth if args.depth is not None else len(buf)
    start = max(start, 0)
    end = min(end, len(buf))
    if end - start < len(args.pattern):
        return -1
    hay = lowered if args.nocase else buf
    return hay.find(args.pattern, start, end)


def _body_matches(rule: Rule, packet: PacketRecord, mode: str):
    """Evaluate every non-filter option in order.

    Returns ``(matched, filter_args)`` where ``filter_args`` is the decoded
    ``detection_filter`` if the rule has one.
    """
    buf = packet.payload
    lowered: bytes | None = None
    cursor = 0
    filt = None
    for opt in rule.options:
        kw = opt.keyword
        try:
            if kw == "content":
                args = _content_args(opt)
                if args.nocase and lowered is None:
                    lowered = buf.lower()
                idx = _search(args, buf, lowered, cursor)
                if args.negated:
                    if idx >= 0:
                        return False, None
                elif idx < 0:
                    return False, None
                else:
                    cursor = idx + len(args.pattern)
            elif kw == "http_header":
                if packet.http_header is None:
                    return False, None
                buf, lowered, cursor = packet.http_header, None, 0
            elif kw == "pkt_data":
                buf, lowered, cursor = packet.payload, None, 0
            elif kw == "isdataat":
                negated, n, relative = _isdataat_args(opt)
                present = len(buf) > n + (cursor if relative else 0)
                if present == negated:
                    return False, None
            elif kw == "flags":
                if packet.ip_proto != 6:
                    return False, None
                fmode, wanted, ignore = _flags_args(str(opt.value))
                have = packet.tcp_flags & ~ignore
                ok = {
                    "=": have == wanted,
                    "+": have & wanted == wanted,
                    "*": bool(have & wanted),
                    "!": not have & wanted,
                }[fmode]
                if not ok:
                    return False, None
            elif kw == "ip_proto":
                op, number = _ip_proto_args(str(opt.value))
                p = packet.ip_proto
                ok = {"=": p == number, "!": p != number, ">": p > number, "<": p < number}[op]
                if not ok:
                    return False, None
            elif kw == "flow":
                direction = _flow_args(str(opt.value), mode)
                if direction is not None and packet.direction != direction:
                    return False, None
            elif kw == "detection_filter":
                filt = _filter_args(str(opt.value))
            elif kw not in NOOP_KEYWORDS:
                raise Unevaluable(kw)
        except Unevaluable:
            if mode == STRICT:
                return False, None
            # permissive: the option is taken as satisfied
    return True, filt


def eval_rule(
    rule: Rule,
    packet: PacketRecord,
    ctx: MatchContext | None = None,
    *,
    variant_id: str | None = None,
) -> bool:
    """True if ``rule`` alerts on ``packet``.

    ``ctx`` carries ``detection_filter`` history keyed by ``variant_id``
    (defaults to the sid) and the tracked address.
    """
    ctx = ctx if ctx is not None else MatchContext()
    if rule.header.action == "pass":
        return False
    if not header_matches(rule.header, packet):
        return False
    matched, filt = _body_matches(rule, packet, ctx.unevaluable)
    if not matched:
        return False
    if filt is None:
        return True
    track, count, seconds = filt
    key = (variant_id if variant_id is not None else str(rule.sid),
           packet.src_ip if track == "by_src" else packet.dst_ip)
    window = ctx.filter_state.setdefault(key, deque())
    now = packet.timestamp
    window.append(now)
    while window and now - window[0] >= seconds:
        window.popleft()
    return len(window) >= count


# --------------------------------------------------------------------------
# ruleset runs

_BUFFER_SWITCHES = EVALUATED_KEYWORDS - {"content", "isdataat", "flags", "ip_proto",
                                         "flow", "detection_filter"}


def _fast_pattern(rule: Rule) -> tuple[bytes, bool] | None:
    """Longest positive payload content; a necessary condition for a match."""
    best = None
    for opt in rule.options:
        kw = opt.keyword
        if kw in _BUFFER_SWITCHES or (kw not in EVALUATED_KEYWORDS and kw not in NOOP_KEYWORDS):
            break
        if kw == "content" and not opt.negated:
            try:
                args = _content_args(opt)
            except Unevaluable:
                continue
            if best is None or len(args.pattern) > len(best[0]):
                best = (args.pattern, args.nocase)
    return best


def _as_variants(rules) -> Sequence[RuleVariant]:
    if isinstance(rules, VariantRuleset):
        return rules.variants
    out = []
    for item in rules:
        out.append(item if isinstance(item, RuleVariant) else original_variant(item))
    return sorted(out, key=lambda v: v.sort_key)


def run_ruleset(
    rules: VariantRuleset | Iterable[Rule | RuleVariant],
    traffic: Iterable[PacketRecord],
    *,
    unevaluable: str = PERMISSIVE,
    prefilter: bool = True,
) -> RunResult:
    """Run every variant over the traffic, packets in timestamp order."""
    if unevaluable not in (PERMISSIVE, STRICT):
        raise ValueError(f"unknown unevaluable policy {unevaluable!r}")
    variants = list(_as_variants(rules))
    skipped: list[str] = []
    if unevaluable == STRICT:
        keep = []
        for v in variants:
            (skipped if unevaluable_options(v.derived, STRICT) else keep).append(v)
        skipped = [v.variant_id for v in skipped]
        variants = keep
    compiled = [(v, _fast_pattern(v.derived) if prefilter else None) for v in variants]

    ctx = MatchContext(unevaluable=unevaluable)
    alerts: list[tuple[float, str, int, AlertRecord]] = []
    last_ts = float("-inf")
    for index, packet in enumerate(traffic):
        if packet.timestamp < last_ts:
            raise ValueError("traffic is not in timestamp order")
        last_ts = packet.timestamp
        lowered = None
        for variant, fast in compiled:
            if fast is not None:
                pattern, nocase = fast
                if nocase:
                    if lowered is None:
                        lowered = packet.payload.lower()
                    if pattern not in lowered:
                        continue
                elif pattern not in packet.payload:
                    continue
            if eval_rule(variant.derived, packet, ctx, variant_id=variant.variant_id):
                rec = AlertRecord(packet.timestamp, variant.variant_id,
                                  variant.derived.sid, packet.src_ip)
                alerts.append((packet.timestamp, variant.variant_id, index, rec))
    alerts.sort(key=lambda a: a[:3])
    records = tuple(a[3] for a in alerts)
    return RunResult(frozenset(r.src_ip for r in records), records, tuple(skipped))


ALERT_FIELDS = ("variant_id", "sid", "src_ip", "timestamp")


def write_alerts_csv(alerts: Iterable[AlertRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ALERT_FIELDS)
        for a in alerts:
            writer.writerow((a.variant_id, a.sid, a.src_ip, repr(a.timestamp)))


def read_alerts_csv(path: str | Path) -> list[AlertRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            AlertRecord(float(row["timestamp"]), row["variant_id"], int(row["sid"]), row["src_ip"])
            for row in csv.DictReader(fh)
        ]
