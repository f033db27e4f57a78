"""A small deterministic telescope corpus with a known best removal.

Twenty rules, two hundred packets and a forty-prefix blocklist. Exactly one
removal matters: dropping the ``VARIANT_A`` content from the multi-content
rule 1001 catches ten more malicious sources (near-miss payloads carrying
``EXPLOIT`` without ``VARIANT_A``) and one benign source. Every other single
removal either changes nothing, only adds false positives, or degenerates to
universal matching at (1, 1).

Sources ``10.0.0.1``-``10.0.0.60`` are off the blocklist (malicious under the
default label policy); ``198.18.<i>.7`` for ``i`` in 0..39 are listed
(benign).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .traffic import PacketRecord, TcpFlag, dump_traffic

__all__ = ["SyntheticCorpus", "synthetic_corpus", "write_synthetic_corpus",
           "TARGET_SID", "TARGET_CONFIGURATION"]

TARGET_SID = 1001
TARGET_CONFIGURATION = "content@multi"

SERVER = "203.0.113.10"

RULES = [
    'alert tcp any any -> any 80 ( msg:"target exploit"; flow:to_server; content:"EXPLOIT"; content:"VARIANT_A"; sid:1001; rev:1; )',
    'alert tcp any any -> any any ( msg:"alpha beta"; flow:to_server; content:"ALPHA"; content:"BETA",distance 1; sid:1002; rev:1; )',
    'alert tcp any any -> any any ( msg:"login brute"; flow:to_server; content:"LOGIN"; detection_filter:track by_src, count 3, seconds 60; sid:1003; rev:1; )',
    'alert ip any any -> any any ( msg:"gre tunnel"; ip_proto:47; content:"GRE_TUNNEL"; sid:1004; rev:1; )',
    'alert tcp any any -> any any ( msg:"zgrab"; flow:to_server; http_header; content:"User-Agent: zgrab"; sid:1005; rev:1; )',
    'alert tcp any any -> any any ( msg:"banner"; flow:to_server; content:"BANNER"; isdataat:10,relative; sid:1006; rev:1; )',
    'alert tcp any any -> any any ( msg:"admin panel"; service:http; flow:to_server; content:"ADMINPANEL",nocase; sid:1007; rev:1; )',
    'alert tcp any any -> any any ( msg:"cmd exec"; flow:to_server; content:"CMD"; content:"EXEC",distance 0; sid:1008; rev:1; )',
    'alert tcp any any -> any any ( msg:"syn probe"; flow:to_server; flags:S; content:"|DE AD BE EF|"; sid:1009; rev:1; )',
] + [
    f'alert tcp any any -> any any ( msg:"unused {i}"; flow:to_server; content:"NOPE_{i:02d}"; sid:{1010 + i}; rev:1; )'
    for i in range(11)
]

MALICIOUS = [f"10.0.0.{i}" for i in range(1, 61)]
BENIGN = [f"198.18.{i}.7" for i in range(40)]
BLOCKLIST = [f"198.18.{i}.0/24" for i in range(40)]


@dataclass(frozen=True)
class SyntheticCorpus:
    rules_text: str
    packets: tuple[PacketRecord, ...]
    blocklist_text: str


def _tcp(ts, src, payload=b"", dport=80, flags="PA", direction="to_server", header=None):
    flag_bits = TcpFlag(0)
    for ch in flags:
        flag_bits |= {"S": TcpFlag.SYN, "A": TcpFlag.ACK, "P": TcpFlag.PSH}[ch]
    return PacketRecord(ts, src, SERVER, 6, 40000, dport, flag_bits, direction, payload, header)


def synthetic_corpus() -> SyntheticCorpus:
    raw: list[PacketRecord] = []
    t = 0.0

    def tick(step=1.0):
        nonlocal t
        t += step
        return t

    # every source scans port 80 once: universal matching flags everyone
    for ip in MALICIOUS + BENIGN:
        raw.append(_tcp(tick(), ip, flags="S"))
    # rule 1001 originals: both contents
    for ip in MALICIOUS[0:20]:
        raw.append(_tcp(tick(), ip, b"GET /x EXPLOIT VARIANT_A"))
    # near misses: EXPLOIT without VARIANT_A
    for ip in MALICIOUS[20:30]:
        raw.append(_tcp(tick(), ip, b"GET /x EXPLOIT VARIANT_B"))
    raw.append(_tcp(tick(), BENIGN[0], b"EXPLOIT probe"))
    # rule 1002: ALPHA and BETA always together
    for ip in MALICIOUS[30:35] + BENIGN[1:3]:
        raw.append(_tcp(tick(), ip, b"ALPHA BETA", dport=8080))
    # rule 1003: five sources log in three times within a minute, two once
    for ip in MALICIOUS[35:40]:
        start = tick()
        for k in range(3):
            raw.append(_tcp(start + 5 * k, ip, b"LOGIN root", dport=23))
        tick(15)
    for ip in BENIGN[3:5]:
        raw.append(_tcp(tick(), ip, b"LOGIN guest", dport=23))
    # rule 1004: GRE payload; a benign TCP copy only shows up without ip_proto
    raw.append(PacketRecord(tick(), MALICIOUS[40], SERVER, 47, payload=b"GRE_TUNNEL x"))
    raw.append(_tcp(tick(), BENIGN[5], b"GRE_TUNNEL x", dport=1723))
    # rule 1005: header hit vs body-only hit
    head = b"GET / HTTP/1.1\r\nUser-Agent: zgrab\r\n"
    raw.append(_tcp(tick(), MALICIOUS[41], head + b"\r\n", header=head))
    head2 = b"POST / HTTP/1.1\r\nHost: x\r\n"
    raw.append(_tcp(tick(), BENIGN[6], head2 + b"\r\nUser-Agent: zgrab", header=head2))
    # rule 1006: enough data after BANNER vs not
    raw.append(_tcp(tick(), MALICIOUS[42], b"BANNER" + b"x" * 20, dport=21))
    raw.append(_tcp(tick(), BENIGN[7], b"BANNERxx", dport=21))
    # rule 1007
    raw.append(_tcp(tick(), MALICIOUS[43], b"/adminpanel/login"))
    # rule 1008: CMD and EXEC together
    raw.append(_tcp(tick(), MALICIOUS[44], b"CMD EXEC whoami", dport=8000))
    # responses and UDP noise that no rule or removal can use
    k = 0
    while len(raw) < 200:
        ip = (MALICIOUS + BENIGN)[k % 100]
        if k % 2:
            raw.append(PacketRecord(tick(), ip, SERVER, 17, 5353, 53, payload=b"noise %d" % k))
        else:
            raw.append(_tcp(tick(), ip, b"HTTP/1.1 404", dport=80, direction="to_client"))
        k += 1
    packets = tuple(sorted(raw, key=lambda p: p.timestamp))
    return SyntheticCorpus(
        rules_text="\n".join(RULES) + "\n",
        packets=packets,
        blocklist_text="# synthetic level4-style netset\n" + "\n".join(BLOCKLIST) + "\n",
    )


def write_synthetic_corpus(directory: str | Path) -> dict[str, Path]:
    """Write ``rules.rules``, ``traffic.jsonl`` and ``blocklist.netset``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus = synthetic_corpus()
    paths = {
        "rules": directory / "rules.rules",
        "traffic": directory / "traffic.jsonl",
        "blocklist": directory / "blocklist.netset",
    }
    paths["rules"].write_text(corpus.rules_text)
    dump_traffic(corpus.packets, paths["traffic"])
    paths["blocklist"].write_text(corpus.blocklist_text)
    return paths
