"""Per-capture labelling rules: a capture default plus IP-based overrides."""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Union

import yaml

from .errors import ConflictingRule, SpecInvalid, UncoveredCapture

LABELS = ("benign", "malicious")
UNLABELED = "unlabeled"


def _ip(text) -> str:
    try:
        return str(ipaddress.ip_address(str(text)))
    except ValueError as exc:
        raise SpecInvalid(f"not an IP address: {text!r}") from exc


@dataclass(frozen=True)
class CaptureRule:
    default: Optional[str] = None
    malicious_ips: FrozenSet[str] = frozenset()
    benign_ips: FrozenSet[str] = frozenset()

    def label_for(self, ips: Sequence[str]) -> str:
        ips = {_ip(a) for a in ips}
        bad, good = ips & self.malicious_ips, ips & self.benign_ips
        if bad and good:
            raise ConflictingRule(f"session endpoints {sorted(ips)} match both IP sets")
        if bad:
            return "malicious"
        if good:
            return "benign"
        return self.default or UNLABELED


@dataclass(frozen=True)
class LabelManifest:
    captures: Dict[str, CaptureRule] = field(default_factory=dict)
    default: Optional[str] = None

    def rule(self, capture: str) -> CaptureRule:
        if capture in self.captures:
            return self.captures[capture]
        if self.default is None:
            raise UncoveredCapture(f"no labelling rule covers capture {capture!r}")
        return CaptureRule(default=self.default)

    def check_covers(self, captures: Iterable[str]) -> None:
        for c in captures:
            self.rule(c)

    def label(self, capture: str, ips: Sequence[str]) -> str:
        return self.rule(capture).label_for(ips)

    @classmethod
    def from_mapping(cls, m: dict) -> "LabelManifest":
        if not isinstance(m, dict):
            raise SpecInvalid("label manifest must be a mapping")
        unknown = set(m) - {"captures", "default"}
        if unknown:
            raise SpecInvalid(f"unknown label manifest keys {sorted(unknown)}")
        default = _check_label(m.get("default"))
        rules = {}
        for cap, r in (m.get("captures") or {}).items():
            r = r or {}
            if isinstance(r, str):
                r = {"default": r}
            bad = frozenset(_ip(a) for a in r.get("malicious_ips") or ())
            good = frozenset(_ip(a) for a in r.get("benign_ips") or ())
            if bad & good:
                raise ConflictingRule(f"capture {cap!r}: {sorted(bad & good)} listed as malicious and benign")
            rules[str(cap)] = CaptureRule(_check_label(r.get("default")), bad, good)
        return cls(rules, default)

    def to_mapping(self) -> dict:
        caps = {}
        for name, r in sorted(self.captures.items()):
            caps[name] = {"default": r.default, "malicious_ips": sorted(r.malicious_ips),
                          "benign_ips": sorted(r.benign_ips)}
        return {"captures": caps, "default": self.default}

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=True)


def _check_label(v) -> Optional[str]:
    if v is None or v in LABELS:
        return v
    raise SpecInvalid(f"label must be one of {LABELS}, got {v!r}")


def loads_label_manifest(text: str) -> LabelManifest:
    return LabelManifest.from_mapping(yaml.safe_load(text) or {})


def load_label_manifest(path) -> LabelManifest:
    with open(path, encoding="utf-8") as fh:
        return loads_label_manifest(fh.read())


def apply_labels(items: Sequence, manifest: LabelManifest) -> List:
    """Label sessions or feature records; both expose ``capture`` and ``ips``/``endpoints``."""
    out = []
    for it in items:
        ips = it.endpoints if hasattr(it, "endpoints") else it.ips
        lab = manifest.label(it.capture, ips)
        out.append(replace(it, label=lab) if hasattr(it, "label") else (it, lab))
    return out
