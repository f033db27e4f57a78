from __future__ import annotations

import random

import pytest

from gen import monotone_rule, oracle_case, random_payload, random_traffic
from oracles import naive_detection_filter, naive_eval
from snortprune.matching import (
    PERMISSIVE,
    STRICT,
    AlertRecord,
    MatchContext,
    eval_rule,
    header_matches,
    read_alerts_csv,
    run_ruleset,
    unevaluable_options,
    write_alerts_csv,
)
from snortprune.mutation import RemovalMask, VariantRuleset, apply_mask
from snortprune.rules import parse_rule, removable_options
from snortprune.traffic import PacketRecord, TcpFlag


def rule(body, header="alert tcp any any -> any any", sid=1):
    return parse_rule(f"{header} ( {body} sid:{sid}; )")


def pkt(payload=b"", ts=0.0, src="10.0.0.1", proto=6, flags=TcpFlag.ACK, direction="to_server",
        header=None, sport=40000, dport=80, dst="192.0.2.1"):
    if proto not in (6, 17):
        sport = dport = 0
    if proto != 6:
        flags = TcpFlag(0)
    return PacketRecord(ts, src, dst, proto, sport, dport, flags, direction, payload, header)


def test_content_substring():
    assert eval_rule(rule('content:"GET";'), pkt(b"GET /index"))
    assert not eval_rule(rule('content:"POST";'), pkt(b"GET /index"))


def test_short_circuit_leaves_filter_state_untouched():
    r = rule('content:"ZZZ"; detection_filter:track by_src, count 1, seconds 60;')
    ctx = MatchContext()
    assert not eval_rule(r, pkt(b"abc"), ctx)
    assert ctx.filter_state == {}


def test_detection_filter_fires_from_count_th_match():
    r = rule('content:"x"; detection_filter:track by_src, count 3, seconds 60;')
    ctx = MatchContext()
    fired = [eval_rule(r, pkt(b"x", ts=t), ctx) for t in (0, 10, 20, 30)]
    assert fired == [False, False, True, True]


def test_detection_filter_windows_and_sources():
    r = rule('content:"x"; detection_filter:track by_src, count 2, seconds 10;')
    ctx = MatchContext()
    events = [(0, "a"), (5, "b"), (11, "a"), (12, "b"), (20, "a"), (21, "a")]
    fired = [eval_rule(r, pkt(b"x", ts=t, src=f"10.0.0.{ord(s)}"), ctx) for t, s in events]
    # a: 0, 11 (10 apart, out of window), 20 (9 after 11), 21
    assert fired == [False, False, False, True, True, True]


def test_detection_filter_by_dst():
    r = rule('content:"x"; detection_filter:track by_dst, count 2, seconds 10;')
    ctx = MatchContext()
    assert not eval_rule(r, pkt(b"x", ts=0, src="10.0.0.1"), ctx)
    assert eval_rule(r, pkt(b"x", ts=1, src="10.0.0.2"), ctx)


def test_content_modifiers():
    assert eval_rule(rule('content:"get",nocase;'), pkt(b"GeT /"))
    assert not eval_rule(rule('content:"get";'), pkt(b"GeT /"))
    assert eval_rule(rule('content:"B",offset 1,depth 1;'), pkt(b"AB"))
    assert not eval_rule(rule('content:"B",depth 1;'), pkt(b"AB"))
    assert eval_rule(rule('content:"a"; content:"c",distance 1,within 1;'), pkt(b"abc"))
    assert not eval_rule(rule('content:"a"; content:"c",within 1;'), pkt(b"abc"))
    assert eval_rule(rule('content:"USER"; content:!"PASS";'), pkt(b"USER bob"))
    assert not eval_rule(rule('content:"USER"; content:!"PASS";'), pkt(b"USER x PASS y"))


def test_isdataat():
    assert eval_rule(rule('content:"LEN"; isdataat:2,relative;'), pkt(b"LENabc"))
    assert not eval_rule(rule('content:"LEN"; isdataat:3,relative;'), pkt(b"LENabc"))
    assert eval_rule(rule("isdataat:5;"), pkt(b"123456"))
    assert not eval_rule(rule("isdataat:6;"), pkt(b"123456"))
    assert eval_rule(rule('content:"END"; isdataat:!1,relative;'), pkt(b"xEND"))


def test_http_header_sticky_buffer():
    r = rule('http_header; content:"Host: evil";')
    assert eval_rule(r, pkt(b"GET /", header=b"Host: evil\r\n"))
    assert not eval_rule(r, pkt(b"Host: evil"))  # no header sub-buffer
    both = rule('http_header; content:"Agent"; pkt_data; content:"body";')
    assert eval_rule(both, pkt(b"body", header=b"Agent: z"))
    assert not eval_rule(both, pkt(b"nope", header=b"Agent: z"))


@pytest.mark.parametrize("spec, flags, expected", [
    ("S", TcpFlag.SYN, True),
    ("S", TcpFlag.SYN | TcpFlag.ACK, False),
    ("SA", TcpFlag.SYN | TcpFlag.ACK, True),
    ("+S", TcpFlag.SYN | TcpFlag.ACK, True),
    ("*FU", TcpFlag.URG, True),
    ("*FU", TcpFlag.SYN, False),
    ("!R", TcpFlag.ACK, True),
    ("!R", TcpFlag.RST, False),
    ("S,12", TcpFlag.SYN | TcpFlag.ECE | TcpFlag.CWR, True),
])
def test_flags(spec, flags, expected):
    assert eval_rule(rule(f"flags:{spec};"), pkt(flags=flags)) is expected


def test_flags_require_tcp():
    assert not eval_rule(rule("flags:0;", "alert ip any any -> any any"), pkt(proto=17))


@pytest.mark.parametrize("spec, proto, expected", [
    ("47", 47, True), ("47", 6, False), ("!6", 17, True), ("!6", 6, False),
    (">100", 103, True), ("<2", 1, True), ("<2", 2, False), ("igmp", 2, True),
])
def test_ip_proto(spec, proto, expected):
    r = rule(f"ip_proto:{spec};", "alert ip any any -> any any")
    assert eval_rule(r, pkt(proto=proto)) is expected


def test_flow_direction_and_state():
    assert eval_rule(rule("flow:to_server,established;"), pkt())
    assert not eval_rule(rule("flow:to_client;"), pkt())
    # state keywords are not evaluable without stream tracking
    r = rule("flow:to_server,established;")
    assert unevaluable_options(r, STRICT) == ["flow"]
    assert unevaluable_options(rule("flow:to_server,stateless;"), STRICT) == []


def test_header_matching():
    r = rule('content:"x";', "alert tcp !10.0.0.0/8 any -> [192.0.2.0/24,198.51.100.1] 1024:")
    assert header_matches(r.header, pkt(src="11.0.0.1", dport=2000))
    assert not header_matches(r.header, pkt(src="10.0.0.1", dport=2000))
    assert not header_matches(r.header, pkt(src="11.0.0.1", dport=80))
    udp = rule('content:"x";', "alert udp any any -> any [53,5353]")
    assert header_matches(udp.header, pkt(proto=17, dport=5353))
    assert not header_matches(udp.header, pkt(proto=6, dport=53))
    var = rule('content:"x";', "alert tcp $EXTERNAL_NET any -> $HOME_NET $HTTP_PORTS")
    assert header_matches(var.header, pkt(dport=12345))
    bi = rule('content:"x";', "alert tcp 192.0.2.1 80 <> any any")
    assert header_matches(bi.header, pkt(src="10.0.0.1", sport=40000, dport=80))
    icmp = rule("isdataat:0;", "alert icmp any any -> any any")
    assert header_matches(icmp.header, pkt(proto=1))
    assert not header_matches(icmp.header, pkt(proto=6))


def test_pass_action_never_alerts():
    assert not eval_rule(rule('content:"x";', "pass tcp any any -> any any"), pkt(b"x"))


def test_unevaluable_policy():
    r = rule('content:"x"; pcre:"/y/";')
    assert eval_rule(r, pkt(b"x"), MatchContext(unevaluable=PERMISSIVE))
    result = run_ruleset([r], [pkt(b"x")], unevaluable=STRICT)
    assert result.flagged == frozenset() and result.skipped == ("1:",)


def test_empty_ruleset():
    assert run_ruleset([], [pkt(b"x")]).flagged == frozenset()


def test_universal_matching():
    r = rule('flow:to_server; content:"needle";')
    stripped = apply_mask(r, RemovalMask.of(1, [1]))
    traffic = [pkt(src=f"10.0.0.{i}", ts=i) for i in range(1, 9)]
    assert run_ruleset([stripped], traffic).flagged == {p.src_ip for p in traffic}


def test_alert_order_and_prefilter_equivalence():
    rng = random.Random(3)
    rules = [monotone_rule(rng, sid) for sid in range(1, 30)]
    traffic = random_traffic(rng)
    with_pf = run_ruleset(rules, traffic)
    without = run_ruleset(rules, traffic, prefilter=False)
    assert with_pf == without
    keys = [(a.timestamp, a.variant_id) for a in with_pf.alerts]
    assert keys == sorted(keys)
    assert with_pf.flagged == {a.src_ip for a in with_pf.alerts}


def test_alerts_csv_round_trip(tmp_path):
    alerts = [AlertRecord(1.25, "5:1,2", 5, "10.0.0.1"), AlertRecord(2.0, "6:", 6, "10.0.0.2")]
    write_alerts_csv(alerts, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "variant_id,sid,src_ip,timestamp"
    assert read_alerts_csv(tmp_path / "a.csv") == alerts


def test_oracle_sample():
    rng = random.Random(99)
    for _ in range(2000):
        text, steps = oracle_case(rng)
        payload = random_payload(rng)
        assert eval_rule(parse_rule(text), pkt(payload)) == naive_eval(steps, payload), (text, payload)


def test_detection_filter_against_oracle():
    rng = random.Random(5)
    for _ in range(50):
        count, seconds = rng.randint(1, 4), rng.choice([1, 5, 10])
        r = rule(f'content:"x"; detection_filter:track by_src, count {count}, seconds {seconds};')
        times = sorted(rng.choice([0, 0.5, 1, 2, 3, 5, 8, 13]) + k * 0.25 for k in range(12))
        ctx = MatchContext()
        got = [eval_rule(r, pkt(b"x", ts=t), ctx) for t in times]
        assert got == naive_detection_filter(times, count, seconds)


def test_single_removal_monotone_on_safe_subset():
    rng = random.Random(21)
    traffic = random_traffic(rng)
    for sid in range(1, 41):
        r = monotone_rule(rng, sid)
        base = run_ruleset([r], traffic).flagged
        for pos in removable_options(r):
            try:
                v = apply_mask(r, RemovalMask.of(sid, [pos]))
            except Exception:
                continue
            assert run_ruleset(VariantRuleset((v,)), traffic).flagged >= base


@pytest.mark.parametrize("body, payload", [
    # dropping the middle content moves the cursor left, so "within" misses
    ('content:"x"; content:"yyyy"; content:"z",within 1;', b"xyyyyz"),
    # dropping the first content lets the negated pattern see earlier bytes
    ('content:"a"; content:!"b",distance 0;', b"ba"),
])
def test_cursor_semantics_are_not_removal_monotone(body, payload):
    r = rule(body)
    assert eval_rule(r, pkt(payload))
    pos = 1 if "within" in body else 0
    assert not eval_rule(apply_mask(r, RemovalMask.of(1, [pos])).derived, pkt(payload))
