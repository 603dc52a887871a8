"""Append-only log of every matrix a party transmits.

Serialized as JSON lines, one entry per message::

    {"protocol": ..., "seq": 0, "sender": "owner1", "receiver": "central",
     "label": "ZB", "iteration": 3, "shape": [30, 2], "values": [[...], ...]}

A broadcast uses receiver ``"*"`` and is visible to every party.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BROADCAST = "*"


@dataclass(frozen=True)
class TranscriptEntry:
    sender: str
    receiver: str
    label: str
    values: np.ndarray
    iteration: int | None = None
    seq: int = 0

    @property
    def shape(self) -> tuple:
        return tuple(self.values.shape)

    def visible_to(self, party: str) -> bool:
        return party in (self.sender, self.receiver) or self.receiver == BROADCAST


@dataclass
class ProtocolTranscript:
    protocol: str = "protocol"
    entries: list = field(default_factory=list)

    def log(self, sender, receiver, label, values, iteration=None) -> TranscriptEntry:
        arr = np.array(values, dtype=float, copy=True)
        arr.flags.writeable = False
        entry = TranscriptEntry(sender, receiver, label, arr, iteration, len(self.entries))
        self.entries.append(entry)
        return entry

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def select(self, *, sender=None, receiver=None, label=None, iteration=None):
        out = []
        for e in self.entries:
            if sender is not None and e.sender != sender:
                continue
            if receiver is not None and e.receiver != receiver:
                continue
            if label is not None and e.label != label:
                continue
            if iteration is not None and e.iteration != iteration:
                continue
            out.append(e)
        return out

    def view_of(self, party: str) -> "ProtocolTranscript":
        """Entries ``party`` sent, received, or saw broadcast."""
        return ProtocolTranscript(
            f"{self.protocol}@{party}", [e for e in self.entries if e.visible_to(party)]
        )

    def values_received(self, party: str) -> int:
        return sum(
            e.values.size for e in self.entries
            if e.sender != party and (e.receiver == party or e.receiver == BROADCAST)
        )

    def extend(self, other: "ProtocolTranscript"):
        for e in other.entries:
            self.log(e.sender, e.receiver, e.label, e.values, e.iteration)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps({
                    "protocol": self.protocol,
                    "seq": e.seq,
                    "sender": e.sender,
                    "receiver": e.receiver,
                    "label": e.label,
                    "iteration": e.iteration,
                    "shape": list(e.shape),
                    "values": e.values.tolist(),
                }) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "ProtocolTranscript":
        tr = None
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if tr is None:
                tr = cls(rec["protocol"])
            vals = np.asarray(rec["values"], dtype=float).reshape(rec["shape"])
            tr.log(rec["sender"], rec["receiver"], rec["label"], vals, rec["iteration"])
        return tr if tr is not None else cls()
