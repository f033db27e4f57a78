from __future__ import annotations

import json
import random
from math import comb

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gen import random_rule
from oracles import brute_force_masks
from snortprune.mutation import (
    MULTI_CONTENT_ONLY,
    MaskError,
    PolicyViolationError,
    RemovalMask,
    TrivialRuleError,
    VariantRuleset,
    apply_mask,
    count_removal_space,
    enumerate_removals,
    load_mask_file,
    ruleset_from_masks,
    select_by_option,
)
from snortprune.rules import parse_rule, parse_ruleset, removable_options, serialize_rule


def rule(body: str, sid: int = 1):
    return parse_rule(f"alert tcp any any -> any any ( {body} sid:{sid}; )")


def test_apply_mask_drops_one_option():
    r = rule('flow:to_server; content:"a"; pcre:"/b/";')
    v = apply_mask(r, RemovalMask.of(1, [1]))
    assert v.derived.keywords() == ["flow", "pcre", "sid"]
    assert v.variant_id == "1:1"
    assert v.derived.sid == r.sid and v.derived.rev == r.rev


def test_removing_all_removable_is_trivial():
    r = rule('content:"a"; content:"b";')
    with pytest.raises(TrivialRuleError):
        apply_mask(r, RemovalMask.of(1, [0, 1]))


def test_mask_errors():
    r = rule('msg:"m"; content:"a"; content:"b";')
    with pytest.raises(PolicyViolationError):
        apply_mask(r, RemovalMask.of(1, [0]))
    with pytest.raises(MaskError):
        apply_mask(r, RemovalMask.of(2, [1]))
    with pytest.raises(MaskError):
        apply_mask(r, RemovalMask.of(1, []))


def test_removed_content_takes_its_modifiers():
    r = rule('content:"keep"; content:"gone",nocase,offset 4;')
    text = serialize_rule(apply_mask(r, RemovalMask.of(1, [1])).derived)
    assert "gone" not in text and "nocase" not in text and "offset" not in text
    assert parse_rule(text).keywords() == ["content", "sid"]


def test_enumerate_counts():
    three = rule('flow:to_server; content:"a"; content:"b";')
    assert len(enumerate_removals(three, 1)) == 3
    assert len(enumerate_removals(three, 2)) == 3
    assert enumerate_removals(three, 3) == []
    assert enumerate_removals(rule('content:"a";'), 1) == []


def test_enumerate_is_sorted():
    r = rule(" ".join(f'content:"{c}";' for c in "abcdefghijkl"))
    ids = [v.sort_key for v in enumerate_removals(r, 2)]
    assert ids == sorted(ids)


def test_count_removal_space_examples():
    five = rule(" ".join(f'content:"{c}";' for c in "abcde"))
    assert count_removal_space([five]) == 30
    one, two = rule('content:"a";', 1), rule('content:"a"; flow:to_server;', 2)
    assert count_removal_space([one, two]) == 2


def test_count_matches_brute_force():
    rng = random.Random(7)
    rules = [random_rule(rng, sid, rng.randint(0, 12)) for sid in range(1, 11)]
    brute = sum(len(brute_force_masks(len(removable_options(r)))) for r in rules)
    assert count_removal_space(rules) == brute


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 9), st.randoms(use_true_random=False))
def test_cardinality_property(n, rnd):
    r = random_rule(rnd, 1, n)
    n_rem = len(removable_options(r))
    total = 0
    for k in range(1, n_rem + 1):
        got = enumerate_removals(r, k)
        assert len(got) == (comb(n_rem, k) if k < n_rem else 0)
        total += len(got)
    assert total == count_removal_space([r])


@settings(max_examples=100)
@given(st.randoms(use_true_random=False))
def test_masks_compose(rnd):
    r = random_rule(rnd, 1, 6)
    removable = removable_options(r)
    if len(removable) < 3:
        return
    i, j = rnd.sample(removable, 2)
    both = apply_mask(r, RemovalMask.of(1, [i, j])).derived
    # drop i first, then j re-indexed against the shorter rule
    step = r.without([i])
    j_new = j - (1 if i < j else 0)
    assert step.without([j_new]) == both


def test_select_by_option_alongside_originals():
    a = rule('http_header; content:"a";', 1)
    b = rule('content:"b"; flow:to_server;', 2)
    rs = select_by_option([a, b], "http_header")
    assert rs.variant_ids == ["1:0", "2:"]
    assert rs.label == "http_header"


def test_select_absent_keyword_is_identity():
    rules = [rule('content:"a"; flow:to_server;', 1), rule('content:"b";', 2)]
    rs = select_by_option(rules, "pcre")
    assert [v.derived for v in rs] == rules
    assert all(v.is_original for v in rs)


def test_select_multi_content_scope():
    multi = rule('content:"a"; content:"b"; content:"c"; flow:to_server;', 1)
    single = rule('content:"d"; flow:to_server;', 2)
    rs = select_by_option([multi, single], "content", content_scope=MULTI_CONTENT_ONLY)
    assert rs.variant_ids == ["1:0", "1:1", "1:2", "2:"]
    assert rs.label == "content@multi"
    wide = select_by_option([multi, single], "content")
    assert wide.variant_ids == ["1:0", "1:1", "1:2", "2:0"]


def test_select_keeps_rule_when_removal_is_trivial():
    only = rule('content:"a";', 1)
    assert select_by_option([only], "content").variant_ids == ["1:"]


def test_digest_ignores_label_and_order():
    rules = parse_ruleset('alert tcp any any -> any any ( content:"a"; sid:1; )\n'
                          'alert tcp any any -> any any ( content:"b"; sid:2; )\n')
    a = VariantRuleset.from_rules(rules, "x")
    b = VariantRuleset.from_rules(reversed(rules), "y")
    assert a.digest() == b.digest()


def test_write_with_sidecar(tmp_path):
    r = rule('flow:to_server; content:"a"; content:"b";')
    rs = select_by_option([r], "content")
    rs.write(tmp_path / "v.rules")
    # variants keep their base sid, so lines are re-read one by one
    lines = (tmp_path / "v.rules").read_text().splitlines()
    assert [parse_rule(line) for line in lines] == [v.derived for v in rs]
    side = json.loads((tmp_path / "v.rules.manifest.json").read_text())
    assert side["variants"]["1:1"]["removed_keywords"] == ["content"]
    assert side["variants"]["1:2"]["removed_positions"] == [2]


def test_mask_file(tmp_path):
    rules = [rule('flow:to_server; content:"a"; content:"b";', 1), rule('content:"c";', 2)]
    path = tmp_path / "m.json"
    path.write_text(json.dumps([{"sid": 1, "positions": [0, 2]}]))
    rs = ruleset_from_masks(rules, load_mask_file(path))
    assert rs.variant_ids == ["1:0,2", "2:"]
    path.write_text(json.dumps([{"sid": 1}]))
    with pytest.raises(MaskError):
        load_mask_file(path)
