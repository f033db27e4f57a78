"""Option-removal variants of rules and of whole rulesets.

Masks always name positions in the *base* rule; derived rules are renumbered
but a variant never exposes the renumbering. That keeps masks composable:
``{i} | {j}`` on the base is the same variant as removing ``i`` then ``j``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .rules import (
    RemovablePolicy,
    Rule,
    is_multi_content,
    removable_options,
    serialize_rule,
)

__all__ = [
    "ALL",
    "MULTI_CONTENT_ONLY",
    "MaskError",
    "TrivialRuleError",
    "PolicyViolationError",
    "RemovalMask",
    "RuleVariant",
    "VariantRuleset",
    "apply_mask",
    "original_variant",
    "enumerate_removals",
    "count_removal_space",
    "select_by_option",
    "extend_ruleset",
    "ruleset_from_masks",
    "load_mask_file",
]

ALL = "all"
MULTI_CONTENT_ONLY = "multi_content_only"


class MaskError(ValueError):
    pass


class TrivialRuleError(MaskError):
    """The mask would remove every removable option of the rule."""


class PolicyViolationError(MaskError):
    """The mask names a position the policy does not allow removing."""


@dataclass(frozen=True)
class RemovalMask:
    sid: int
    removed_positions: frozenset[int]

    @classmethod
    def of(cls, sid: int, positions: Iterable[int]) -> "RemovalMask":
        return cls(sid, frozenset(positions))

    def __or__(self, other: "RemovalMask") -> "RemovalMask":
        if other.sid != self.sid:
            raise MaskError(f"cannot compose masks of sid {self.sid} and {other.sid}")
        return RemovalMask(self.sid, self.removed_positions | other.removed_positions)

    @property
    def variant_id(self) -> str:
        return f"{self.sid}:" + ",".join(str(p) for p in sorted(self.removed_positions))


@dataclass(frozen=True)
class RuleVariant:
    base: Rule
    mask: RemovalMask
    derived: Rule = field(compare=False)

    @property
    def variant_id(self) -> str:
        return self.mask.variant_id

    @property
    def sort_key(self) -> tuple[int, tuple[int, ...]]:
        return (self.mask.sid, tuple(sorted(self.mask.removed_positions)))

    @property
    def removed_keywords(self) -> list[str]:
        return [self.base.option_at(p).keyword for p in sorted(self.mask.removed_positions)]

    @property
    def is_original(self) -> bool:
        return not self.mask.removed_positions


def original_variant(rule: Rule) -> RuleVariant:
    """The unmodified rule, wrapped so it can sit in a variant ruleset."""
    return RuleVariant(rule, RemovalMask(rule.sid, frozenset()), rule)


def apply_mask(rule: Rule, mask: RemovalMask, policy: RemovablePolicy | None = None) -> RuleVariant:
    if mask.sid != rule.sid:
        raise MaskError(f"mask for sid {mask.sid} applied to rule {rule.sid}")
    if not mask.removed_positions:
        raise MaskError("empty removal mask")
    removable = set(removable_options(rule, policy))
    illegal = sorted(mask.removed_positions - removable)
    if illegal:
        raise PolicyViolationError(
            f"positions {illegal} of sid {rule.sid} are not removable"
        )
    if mask.removed_positions >= removable or len(mask.removed_positions) >= len(rule.options):
        raise TrivialRuleError(
            f"removing {sorted(mask.removed_positions)} leaves sid {rule.sid} trivial"
        )
    return RuleVariant(rule, mask, rule.without(mask.removed_positions))


def enumerate_removals(rule: Rule, k: int, policy: RemovablePolicy | None = None) -> list[RuleVariant]:
    """Every variant of ``rule`` with exactly ``k`` removable options dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    removable = removable_options(rule, policy)
    if k >= len(removable):
        return []
    return [
        RuleVariant(rule, RemovalMask(rule.sid, frozenset(combo)), rule.without(combo))
        for combo in itertools.combinations(removable, k)
    ]


def count_removal_space(rules: Iterable[Rule], policy: RemovablePolicy | None = None) -> int:
    total = 0
    for rule in rules:
        n = len(removable_options(rule, policy))
        if n > 1:
            total += 2**n - 2
    return total


@dataclass(frozen=True)
class VariantRuleset:
    """A set of rule variants evaluated together as one configuration."""

    variants: tuple[RuleVariant, ...]
    label: str = "original"

    def __post_init__(self):
        unique = {v.variant_id: v for v in self.variants}
        ordered = tuple(sorted(unique.values(), key=lambda v: v.sort_key))
        object.__setattr__(self, "variants", ordered)

    @classmethod
    def from_rules(cls, rules: Iterable[Rule], label: str = "original") -> "VariantRuleset":
        return cls(tuple(original_variant(r) for r in rules), label)

    def __len__(self) -> int:
        return len(self.variants)

    def __iter__(self):
        return iter(self.variants)

    @property
    def variant_ids(self) -> list[str]:
        return [v.variant_id for v in self.variants]

    def relabel(self, label: str) -> "VariantRuleset":
        return VariantRuleset(self.variants, label)

    def digest(self) -> str:
        """Content hash over variant ids and derived rule text; label excluded."""
        h = hashlib.sha256()
        for v in self.variants:
            h.update(v.variant_id.encode())
            h.update(b"\0")
            h.update(serialize_rule(v.derived).encode())
            h.update(b"\n")
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            v.variant_id: {
                "sid": v.mask.sid,
                "removed_positions": sorted(v.mask.removed_positions),
                "removed_keywords": v.removed_keywords,
            }
            for v in self.variants
        }

    def to_rules_text(self) -> str:
        return "".join(serialize_rule(v.derived) + "\n" for v in self.variants)

    def write(self, path: str | Path) -> None:
        """Write the derived rules plus a ``<name>.manifest.json`` sidecar."""
        path = Path(path)
        path.write_text(self.to_rules_text())
        sidecar = path.with_name(path.name + ".manifest.json")
        sidecar.write_text(json.dumps(
            {"label": self.label, "variants": self.manifest()}, indent=2, sort_keys=True
        ) + "\n")


def _occurrences(variant: RuleVariant, keyword: str, removable: Sequence[int]) -> list[int]:
    return [
        p for p in removable
        if p not in variant.mask.removed_positions
        and variant.base.option_at(p).keyword == keyword
    ]


def extend_ruleset(
    ruleset: VariantRuleset,
    keyword: str,
    policy: RemovablePolicy | None = None,
    content_scope: str = ALL,
    label: str | None = None,
) -> VariantRuleset:
    """Remove one more occurrence of ``keyword`` from every variant that has one.

    Each occurrence yields its own variant. Variants without the keyword, and
    occurrences whose removal would leave the rule trivial, pass through.
    """
    if content_scope not in (ALL, MULTI_CONTENT_ONLY):
        raise ValueError(f"unknown content scope {content_scope!r}")
    out: list[RuleVariant] = []
    for variant in ruleset:
        removable = removable_options(variant.base, policy)
        if (keyword == "content" and content_scope == MULTI_CONTENT_ONLY
                and not is_multi_content(variant.derived)):
            out.append(variant)
            continue
        emitted = False
        for pos in _occurrences(variant, keyword, removable):
            mask = variant.mask | RemovalMask(variant.mask.sid, frozenset({pos}))
            try:
                out.append(apply_mask(variant.base, mask, policy))
                emitted = True
            except TrivialRuleError:
                continue
        if not emitted:
            out.append(variant)
    return VariantRuleset(tuple(out), label if label is not None else ruleset.label)


def select_by_option(
    rules: Iterable[Rule],
    keyword: str,
    policy: RemovablePolicy | None = None,
    content_scope: str = ALL,
) -> VariantRuleset:
    """The evaluation ruleset for "remove ``keyword``": single-occurrence
    variants of every affected rule alongside every unaffected original."""
    label = keyword if content_scope == ALL or keyword != "content" else f"{keyword}@multi"
    return extend_ruleset(VariantRuleset.from_rules(rules), keyword, policy, content_scope, label)


def ruleset_from_masks(
    rules: Iterable[Rule],
    masks: Iterable[RemovalMask],
    policy: RemovablePolicy | None = None,
    label: str = "masks",
) -> VariantRuleset:
    """Apply explicit masks; rules no mask touches run unmodified."""
    by_sid = {r.sid: r for r in rules}
    masked: dict[int, list[RuleVariant]] = {}
    for mask in masks:
        if mask.sid not in by_sid:
            raise MaskError(f"mask names unknown sid {mask.sid}")
        masked.setdefault(mask.sid, []).append(apply_mask(by_sid[mask.sid], mask, policy))
    variants: list[RuleVariant] = []
    for sid, rule in by_sid.items():
        variants.extend(masked.get(sid, [original_variant(rule)]))
    return VariantRuleset(tuple(variants), label)


def load_mask_file(path: str | Path) -> list[RemovalMask]:
    """Read ``[{"sid": 1, "positions": [2, 3]}, ...]``."""
    data = json.loads(Path(path).read_text())
    try:
        return [RemovalMask.of(int(m["sid"]), (int(p) for p in m["positions"])) for m in data]
    except (KeyError, TypeError, ValueError) as exc:
        raise MaskError(f"bad mask file {path}: {exc}") from None
