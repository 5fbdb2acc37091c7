"""10-20 channel names: parsing into semantic attributes, montages.

A channel label like "FP1" decomposes into four attributes: scalp region
(letter prefix), hemisphere (digit parity, "Z" = midline), number
(distance rank from the midline, 0 for "Z"), and the montage's reference
type. Bipolar derivations are written "FP1-F7".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

REGIONS = ("frontopolar", "frontal", "central", "parietal", "occipital", "temporal", "auricular")
HEMISPHERES = ("left", "right", "midline")
REFERENCES = ("average", "linked_ear", "bipolar")

_REGION_PREFIXES = {
    "FP": "frontopolar",
    "F": "frontal",
    "C": "central",
    "P": "parietal",
    "O": "occipital",
    "T": "temporal",
    "A": "auricular",
}

STANDARD_19 = (
    "FP1", "FP2", "F7", "F3", "FZ", "F4", "F8",
    "T3", "C3", "CZ", "C4", "T4",
    "T5", "P3", "PZ", "P4", "T6",
    "O1", "O2",
)


class ChannelParseError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelAttributes:
    region: str
    hemisphere: str
    number: int
    reference: str = "average"

    def __post_init__(self):
        if self.region not in REGIONS:
            raise ChannelParseError(f"unknown region '{self.region}'")
        if self.hemisphere not in HEMISPHERES:
            raise ChannelParseError(f"unknown hemisphere '{self.hemisphere}'")
        if self.reference not in REFERENCES:
            raise ChannelParseError(f"unknown reference '{self.reference}'")
        if (self.hemisphere == "midline") != (self.number == 0):
            raise ChannelParseError(f"midline iff number 0, got {self.hemisphere}/{self.number}")
        if self.hemisphere == "left" and self.number % 2 == 0:
            raise ChannelParseError(f"left hemisphere requires an odd number, got {self.number}")
        if self.hemisphere == "right" and (self.number % 2 == 1 or self.number == 0):
            raise ChannelParseError(f"right hemisphere requires an even number > 0, got {self.number}")

    def with_reference(self, reference: str) -> "ChannelAttributes":
        return ChannelAttributes(self.region, self.hemisphere, self.number, reference)


def parse_channel_name(name: str, reference: str = "average") -> ChannelAttributes:
    """Parse a 10-20 label (case-insensitive) into its attributes.

    Extension labels (FC3, CP1, ...) are rejected rather than guessed.
    """
    token = name.strip().upper()
    if not token:
        raise ChannelParseError("empty channel name")
    i = 0
    while i < len(token) and token[i].isalpha():
        i += 1
    prefix, suffix = token[:i], token[i:]
    region = None
    if prefix.endswith("Z") and prefix[:-1] in _REGION_PREFIXES:
        # midline labels like FZ, CZ: the Z belongs to the suffix
        region = _REGION_PREFIXES[prefix[:-1]]
        if suffix:
            raise ChannelParseError(f"malformed channel name '{name}': text after midline Z")
        return ChannelAttributes(region, "midline", 0, reference)
    if prefix not in _REGION_PREFIXES:
        raise ChannelParseError(f"unrecognized region letters '{prefix}' in channel name '{name}'")
    region = _REGION_PREFIXES[prefix]
    if not suffix.isdigit():
        raise ChannelParseError(f"malformed channel name '{name}': expected digits or Z after '{prefix}'")
    number = int(suffix)
    if number == 0:
        raise ChannelParseError(f"malformed channel name '{name}': electrode number 0 is reserved for Z")
    hemisphere = "left" if number % 2 == 1 else "right"
    return ChannelAttributes(region, hemisphere, number, reference)


@dataclass(frozen=True)
class ChannelId:
    """A unipolar electrode or a bipolar derivation (minuend, subtrahend)."""

    electrodes: tuple[str, ...]

    def __post_init__(self):
        if len(self.electrodes) not in (1, 2):
            raise ChannelParseError(f"channel must have 1 or 2 electrodes, got {self.electrodes}")
        if len(self.electrodes) == 2 and self.electrodes[0] == self.electrodes[1]:
            raise ChannelParseError(f"bipolar derivation needs two distinct electrodes, got {self.electrodes}")
        for e in self.electrodes:
            parse_channel_name(e)  # raises on malformed names
        object.__setattr__(self, "electrodes", tuple(e.strip().upper() for e in self.electrodes))

    @property
    def kind(self) -> str:
        return "unipolar" if len(self.electrodes) == 1 else "bipolar"

    @property
    def name(self) -> str:
        return "-".join(self.electrodes)

    @classmethod
    def from_name(cls, name: str) -> "ChannelId":
        parts = tuple(p for p in name.strip().split("-") if p)
        if not parts:
            raise ChannelParseError(f"empty channel id '{name}'")
        return cls(parts)


@dataclass(frozen=True)
class Montage:
    """An ordered set of channels plus the montage reference type."""

    channels: tuple[ChannelId, ...]
    reference: str = "average"

    def __post_init__(self):
        if self.reference not in REFERENCES:
            raise ChannelParseError(f"unknown reference '{self.reference}'")
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ChannelParseError("montage contains duplicate channels")
        for c in self.channels:
            if c.kind == "bipolar" and self.reference != "bipolar":
                raise ChannelParseError(f"bipolar channel {c.name} in a {self.reference} montage")

    def __len__(self) -> int:
        return len(self.channels)

    def names(self) -> list[str]:
        return [c.name for c in self.channels]

    def channel_reference(self, channel: ChannelId) -> str:
        return "bipolar" if channel.kind == "bipolar" else self.reference

    @classmethod
    def from_names(cls, names, reference: str = "average") -> "Montage":
        return cls(tuple(ChannelId.from_name(n) for n in names), reference)


def standard_montage(reference: str = "average") -> Montage:
    """The 19-channel 10-20 montage used by the synthetic corpus."""
    return Montage.from_names(STANDARD_19, reference)


def load_channel_fixture(path=None) -> list[dict]:
    """Read the nomenclature table `channels.tsv` (name, region, hemisphere, number)."""
    if path is not None:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f, delimiter="\t"))
    else:
        src = resources.files("eegalign.data").joinpath("channels.tsv")
        with src.open(newline="") as f:
            rows = list(csv.DictReader(f, delimiter="\t"))
    for r in rows:
        r["number"] = int(r["number"])
    return rows
