"""Packet records, blocklists and the ground-truth labelling of source IPs.

Traffic is line-delimited JSON, one packet per line::

    {"ts": 0.5, "src": "10.0.0.1", "dst": "10.0.0.2", "proto": 6,
     "sport": 4444, "dport": 80, "flags": "S", "dir": "to_server",
     "payload": "<base64>", "http_header": "<base64>"}

``http_header`` is optional. Blocklists use the fireHOL netset format:
one address or CIDR per line, ``#`` comments.
"""

from __future__ import annotations

import base64
import binascii
import bisect
import enum
import ipaddress
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

__all__ = [
    "TcpFlag",
    "TrafficFormatError",
    "BlocklistFormatError",
    "PacketRecord",
    "Blocklist",
    "Label",
    "LabelPolicy",
    "LabeledIpSpace",
    "iter_traffic",
    "load_traffic",
    "dump_traffic",
    "load_blocklist",
    "label_ips",
    "observed_sources",
    "parse_flags",
    "format_flags",
]


class TcpFlag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


# Snort letters; '1'/'2' are the old names of CWR/ECE.
FLAG_LETTERS = {
    "F": TcpFlag.FIN, "S": TcpFlag.SYN, "R": TcpFlag.RST, "P": TcpFlag.PSH,
    "A": TcpFlag.ACK, "U": TcpFlag.URG, "E": TcpFlag.ECE, "C": TcpFlag.CWR,
    "2": TcpFlag.ECE, "1": TcpFlag.CWR,
}
_CANONICAL_LETTERS = "SAFRPU21"

NO_FLAGS = TcpFlag(0)


def parse_flags(text: str) -> TcpFlag:
    """``"SA"`` -> SYN|ACK. ``"0"`` and ``""`` mean no flags."""
    flags = NO_FLAGS
    for ch in text:
        if ch == "0":
            continue
        try:
            flags |= FLAG_LETTERS[ch]
        except KeyError:
            raise ValueError(f"unknown TCP flag {ch!r}") from None
    return flags


def format_flags(flags: TcpFlag) -> str:
    return "".join(ch for ch in _CANONICAL_LETTERS if flags & FLAG_LETTERS[ch])


class TrafficFormatError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class BlocklistFormatError(ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


PORTED_PROTOCOLS = (6, 17)


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    ip_proto: int
    src_port: int = 0
    dst_port: int = 0
    tcp_flags: TcpFlag = NO_FLAGS
    direction: str = "to_server"
    payload: bytes = b""
    http_header: bytes | None = None

    def __post_init__(self):
        if not 0 <= self.ip_proto <= 255:
            raise ValueError(f"ip_proto {self.ip_proto} out of range")
        for name in ("src_port", "dst_port"):
            port = getattr(self, name)
            if not 0 <= port <= 65535:
                raise ValueError(f"{name} {port} out of range")
            if port and self.ip_proto not in PORTED_PROTOCOLS:
                raise ValueError(f"{name} set for protocol {self.ip_proto}")
        if self.tcp_flags and self.ip_proto != 6:
            raise ValueError("tcp flags on a non-TCP packet")
        if self.direction not in ("to_server", "to_client"):
            raise ValueError(f"bad direction {self.direction!r}")
        ipaddress.IPv4Address(self.src_ip)
        ipaddress.IPv4Address(self.dst_ip)

    def to_json(self) -> dict:
        obj = {
            "ts": self.timestamp,
            "src": self.src_ip,
            "dst": self.dst_ip,
            "proto": self.ip_proto,
            "sport": self.src_port,
            "dport": self.dst_port,
            "flags": format_flags(self.tcp_flags),
            "dir": self.direction,
            "payload": base64.b64encode(self.payload).decode("ascii"),
        }
        if self.http_header is not None:
            obj["http_header"] = base64.b64encode(self.http_header).decode("ascii")
        return obj


def _b64(value, field_name: str, lineno: int) -> bytes:
    if not isinstance(value, str):
        raise TrafficFormatError(f"{field_name} must be a base64 string", lineno)
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        raise TrafficFormatError(f"invalid base64 in {field_name}", lineno) from None


def _record_from_json(obj: Mapping, lineno: int) -> PacketRecord:
    if not isinstance(obj, dict):
        raise TrafficFormatError("expected a JSON object", lineno)
    try:
        ts = obj["ts"]
        proto = obj["proto"]
        sport = obj.get("sport", 0)
        dport = obj.get("dport", 0)
        for name, val in (("ts", ts), ("proto", proto), ("sport", sport), ("dport", dport)):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise TrafficFormatError(f"{name} must be a number", lineno)
        for name, val in (("proto", proto), ("sport", sport), ("dport", dport)):
            if int(val) != val:
                raise TrafficFormatError(f"{name} must be an integer", lineno)
        flags = parse_flags(obj.get("flags", "") or "")
        payload = _b64(obj.get("payload", ""), "payload", lineno)
        header = obj.get("http_header")
        header = None if header is None else _b64(header, "http_header", lineno)
        return PacketRecord(
            timestamp=float(ts),
            src_ip=str(ipaddress.IPv4Address(obj["src"])),
            dst_ip=str(ipaddress.IPv4Address(obj["dst"])),
            ip_proto=int(proto),
            src_port=int(sport),
            dst_port=int(dport),
            tcp_flags=flags,
            direction=obj.get("dir", "to_server"),
            payload=payload,
            http_header=header,
        )
    except TrafficFormatError:
        raise
    except KeyError as exc:
        raise TrafficFormatError(f"missing field {exc.args[0]!r}", lineno) from None
    except ValueError as exc:
        raise TrafficFormatError(str(exc), lineno) from None


def iter_traffic(path: str | Path) -> Iterator[PacketRecord]:
    """Yield packets in file order, validating timestamps never go backwards."""
    last_ts = float("-inf")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TrafficFormatError(f"malformed JSON: {exc.msg}", lineno) from None
            record = _record_from_json(obj, lineno)
            if record.timestamp < last_ts:
                raise TrafficFormatError("timestamp decreases", lineno)
            last_ts = record.timestamp
            yield record


def load_traffic(path: str | Path) -> list[PacketRecord]:
    return list(iter_traffic(path))


def dump_traffic(records: Iterable[PacketRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


class Blocklist:
    """IPv4 addresses and CIDR prefixes with O(log n) membership.

    Entries are merged into disjoint integer intervals; a lookup is one
    bisection over the interval starts.
    """

    def __init__(self, entries: Iterable[str | ipaddress.IPv4Network] = ()):
        nets = []
        for entry in entries:
            net = entry if isinstance(entry, ipaddress.IPv4Network) else ipaddress.IPv4Network(entry, strict=False)
            nets.append(net)
        self.entries: frozenset[ipaddress.IPv4Network] = frozenset(nets)
        spans = sorted((int(n.network_address), int(n.broadcast_address)) for n in nets)
        starts: list[int] = []
        ends: list[int] = []
        for lo, hi in spans:
            if ends and lo <= ends[-1] + 1:
                ends[-1] = max(ends[-1], hi)
            else:
                starts.append(lo)
                ends.append(hi)
        self._starts = starts
        self._ends = ends

    def __contains__(self, address) -> bool:
        value = int(ipaddress.IPv4Address(address))
        idx = bisect.bisect_right(self._starts, value) - 1
        return idx >= 0 and value <= self._ends[idx]

    def __len__(self) -> int:
        return len(self.entries)

    def __repr__(self) -> str:
        return f"Blocklist({len(self.entries)} entries)"


def load_blocklist(path: str | Path) -> Blocklist:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                entries.append(ipaddress.IPv4Network(text, strict=False))
            except ValueError:
                raise BlocklistFormatError(f"not an IPv4 address or CIDR: {text!r}", lineno) from None
    return Blocklist(entries)


class Label(str, enum.Enum):
    MALICIOUS = "malicious"
    BENIGN = "benign"


class LabelPolicy(str, enum.Enum):
    # Telescope sources that only scan (listed) are benign; unlisted ones,
    # hitting unallocated addresses, are malicious.
    PAPER_INVERTED = "paper_inverted"
    BLOCKLIST_MALICIOUS = "blocklist_malicious"


@dataclass(frozen=True)
class LabeledIpSpace:
    labels: Mapping[str, Label]

    @property
    def malicious(self) -> frozenset[str]:
        return frozenset(ip for ip, lab in self.labels.items() if lab is Label.MALICIOUS)

    @property
    def benign(self) -> frozenset[str]:
        return frozenset(ip for ip, lab in self.labels.items() if lab is Label.BENIGN)

    @property
    def counts(self) -> tuple[int, int]:
        mal = sum(1 for lab in self.labels.values() if lab is Label.MALICIOUS)
        return mal, len(self.labels) - mal

    def __getitem__(self, ip: str) -> Label:
        return self.labels[ip]

    def __contains__(self, ip: str) -> bool:
        return ip in self.labels

    def __len__(self) -> int:
        return len(self.labels)


def observed_sources(traffic: Iterable[PacketRecord]) -> set[str]:
    return {p.src_ip for p in traffic}


def label_ips(
    observed: Iterable[str],
    blocklist: Blocklist,
    policy: LabelPolicy | str = LabelPolicy.PAPER_INVERTED,
) -> LabeledIpSpace:
    policy = LabelPolicy(policy)
    listed, unlisted = Label.BENIGN, Label.MALICIOUS
    if policy is LabelPolicy.BLOCKLIST_MALICIOUS:
        listed, unlisted = unlisted, listed
    labels = {ip: (listed if ip in blocklist else unlisted) for ip in sorted(set(observed))}
    return LabeledIpSpace(labels)
