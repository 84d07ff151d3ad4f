"""EPA-style air quality index mathematics.

Sub-indices come from piecewise-linear interpolation over per-pollutant
breakpoint segments; the composite AQI is the maximum sub-index. The
breakpoint table ships as a checksum-pinned CSV so deployments can swap
in alternative schemes without touching code.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    ChecksumError,
    DimensionError,
    DomainError,
    TableOverflowError,
    VocabularyError,
)

# sha256 of the shipped breakpoint file. Guards against silent edits;
# regenerate deliberately if the table is ever revised.
EPA_BREAKPOINTS_SHA256 = "edbc1578001377296eff272213bffd6982480551f31ee7b7d51fb2f277235597"

DEFAULT_SCHEME = "us_epa"


class PollutantKind(Enum):
    """The six pollutants scored by the index.

    Declaration order doubles as the tie-break priority when two
    pollutants produce the same sub-index.
    """

    PM25 = "pm25"
    PM10 = "pm10"
    O3 = "o3"
    CO = "co"
    SO2 = "so2"
    NO2 = "no2"


class AqiCategory(Enum):
    GOOD = "Good"
    MODERATE = "Moderate"
    UNHEALTHY_SENSITIVE = "Unhealthy for Sensitive Groups"
    UNHEALTHY = "Unhealthy"
    VERY_UNHEALTHY = "Very Unhealthy"
    HAZARDOUS = "Hazardous"


# Inclusive integer index ranges, one per category. Together they
# partition 0..500.
CATEGORY_RANGES: dict[AqiCategory, tuple[int, int]] = {
    AqiCategory.GOOD: (0, 50),
    AqiCategory.MODERATE: (51, 100),
    AqiCategory.UNHEALTHY_SENSITIVE: (101, 150),
    AqiCategory.UNHEALTHY: (151, 200),
    AqiCategory.VERY_UNHEALTHY: (201, 300),
    AqiCategory.HAZARDOUS: (301, 500),
}

# Display colors matching the standard index chart; served to clients
# so the UI never hard-codes its own copy.
CATEGORY_COLORS: dict[AqiCategory, str] = {
    AqiCategory.GOOD: "#00E400",
    AqiCategory.MODERATE: "#FFFF00",
    AqiCategory.UNHEALTHY_SENSITIVE: "#FF7E00",
    AqiCategory.UNHEALTHY: "#FF0000",
    AqiCategory.VERY_UNHEALTHY: "#8F3F97",
    AqiCategory.HAZARDOUS: "#7E0023",
}


@dataclass(frozen=True)
class BreakpointSegment:
    """One linear piece of a pollutant's concentration-to-index map."""

    conc_lo: float
    conc_hi: float
    index_lo: float
    index_hi: float

    def __post_init__(self) -> None:
        for name in ("conc_lo", "conc_hi", "index_lo", "index_hi"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"breakpoint segment {name} must be finite, got {value!r}")
        if not self.conc_lo < self.conc_hi:
            raise DomainError(
                f"segment concentration range is empty: [{self.conc_lo}, {self.conc_hi}]"
            )
        if not self.index_lo < self.index_hi:
            raise DomainError(
                f"segment index range is empty: [{self.index_lo}, {self.index_hi}]"
            )

    def contains(self, conc: float) -> bool:
        return self.conc_lo <= conc <= self.conc_hi

    def interpolate(self, conc: float) -> float:
        slope = (self.index_hi - self.index_lo) / (self.conc_hi - self.conc_lo)
        return slope * (conc - self.conc_lo) + self.index_lo


class BreakpointTable:
    """Ordered breakpoint segments per pollutant, validated on build.

    Segments must tile the concentration axis without gaps or overlap,
    start at zero concentration, and span the full 0..500 index scale.
    """

    def __init__(self, segments: Mapping[PollutantKind, Sequence[BreakpointSegment]]):
        cleaned: dict[PollutantKind, tuple[BreakpointSegment, ...]] = {}
        for kind, segs in segments.items():
            segs = tuple(segs)
            if not segs:
                raise DomainError(f"no breakpoint segments for {kind.value}")
            if segs[0].conc_lo != 0.0:
                raise DomainError(
                    f"{kind.value} coverage must start at 0, got {segs[0].conc_lo}"
                )
            if segs[0].index_lo != 0.0 or segs[-1].index_hi != 500.0:
                raise DomainError(
                    f"{kind.value} index range must span 0..500, got "
                    f"{segs[0].index_lo}..{segs[-1].index_hi}"
                )
            for prev, cur in zip(segs, segs[1:]):
                if prev.conc_hi != cur.conc_lo or prev.index_hi != cur.index_lo:
                    raise DomainError(
                        f"{kind.value} segments are not contiguous at "
                        f"concentration {prev.conc_hi}"
                    )
            cleaned[kind] = segs
        self._segments = cleaned

    @property
    def pollutants(self) -> tuple[PollutantKind, ...]:
        return tuple(k for k in PollutantKind if k in self._segments)

    def segments_for(self, kind: PollutantKind) -> tuple[BreakpointSegment, ...]:
        try:
            return self._segments[kind]
        except KeyError:
            raise VocabularyError(
                f"no breakpoint data for pollutant {kind.value!r}",
                value=kind.value,
                allowed=[k.value for k in self.pollutants],
            ) from None

    def max_concentration(self, kind: PollutantKind) -> float:
        return self.segments_for(kind)[-1].conc_hi


class CategoryResult(NamedTuple):
    """Category for a composite AQI plus an above-scale marker."""

    category: AqiCategory
    out_of_scale: bool


def subindex(conc: float, kind: PollutantKind, table: BreakpointTable) -> float:
    """Map one pollutant concentration to its AQI sub-index.

    Linear interpolation on the segment containing ``conc``. Shared
    segment endpoints make the map continuous, so boundary values are
    unambiguous.
    """
    conc = float(conc)
    if not math.isfinite(conc):
        raise DomainError(f"{kind.value} concentration must be finite, got {conc!r}")
    if conc < 0.0:
        raise DomainError(f"{kind.value} concentration must be >= 0, got {conc}")
    segs = table.segments_for(kind)
    for seg in segs:
        if conc <= seg.conc_hi:
            return seg.interpolate(conc)
    raise TableOverflowError(
        f"{kind.value} concentration {conc} exceeds table maximum "
        f"{segs[-1].conc_hi}",
        max_index=segs[-1].index_hi,
    )


def composite_aqi(
    readings: Mapping[PollutantKind, float], table: BreakpointTable
) -> tuple[float, PollutantKind]:
    """Composite AQI: the maximum sub-index over the supplied readings.

    Ties go to the pollutant declared first in PollutantKind, so the
    result does not depend on the mapping's iteration order.
    """
    if not readings:
        raise DomainError("readings must contain at least one pollutant")
    for key in readings:
        if not isinstance(key, PollutantKind):
            raise VocabularyError(
                f"unknown pollutant key {key!r}",
                value=str(key),
                allowed=[k.value for k in PollutantKind],
            )
    best: tuple[float, PollutantKind] | None = None
    for kind in PollutantKind:
        if kind not in readings:
            continue
        value = subindex(readings[kind], kind, table)
        if best is None or value > best[0]:
            best = (value, kind)
    assert best is not None
    return best


def categorize(aqi: float) -> CategoryResult:
    """Band for an AQI value, rounding half away from zero.

    Values whose rounded index exceeds 500 clamp to Hazardous and set
    the out-of-scale flag instead of erroring, so extreme readings
    still get an answer.
    """
    aqi = float(aqi)
    if not math.isfinite(aqi):
        raise DomainError(f"AQI must be finite, got {aqi!r}")
    if aqi < 0.0:
        raise DomainError(f"AQI must be >= 0, got {aqi}")
    rounded = int(math.floor(aqi + 0.5))
    for category, (lo, hi) in CATEGORY_RANGES.items():
        if lo <= rounded <= hi:
            return CategoryResult(category, False)
    return CategoryResult(AqiCategory.HAZARDOUS, True)


def classification_accuracy(
    pred_aqi: Iterable[float], true_aqi: Iterable[float]
) -> float:
    """Fraction of positions whose predicted and true AQI share a band."""
    pred = np.asarray(list(pred_aqi), dtype=np.float64)
    true = np.asarray(list(true_aqi), dtype=np.float64)
    if pred.shape != true.shape:
        raise DimensionError(
            "prediction and truth lengths differ", left=pred.shape, right=true.shape
        )
    if pred.size == 0:
        raise DomainError("accuracy needs at least one pair")
    hits = sum(
        categorize(p).category is categorize(t).category
        for p, t in zip(pred.tolist(), true.tolist())
    )
    return hits / pred.size


def _parse_row(row: dict[str, str], line: int) -> tuple[str, PollutantKind, BreakpointSegment]:
    try:
        kind = PollutantKind(row["pollutant"])
    except ValueError:
        raise VocabularyError(
            f"line {line}: unknown pollutant {row['pollutant']!r}",
            value=row["pollutant"],
            allowed=[k.value for k in PollutantKind],
        ) from None
    try:
        seg = BreakpointSegment(
            conc_lo=float(row["conc_lo"]),
            conc_hi=float(row["conc_hi"]),
            index_lo=float(row["index_lo"]),
            index_hi=float(row["index_hi"]),
        )
    except (KeyError, ValueError) as exc:
        raise DomainError(f"line {line}: malformed breakpoint row: {exc}") from exc
    return row["scheme"], kind, seg


def load_breakpoint_table(
    path: str | None = None, scheme: str = DEFAULT_SCHEME
) -> BreakpointTable:
    """Load a breakpoint table from CSV.

    With no path the packaged EPA file is used and its checksum is
    verified against the pinned digest.
    """
    if path is None:
        raw = (
            resources.files("airhealth")
            .joinpath("data/epa_breakpoints.csv")
            .read_bytes()
        )
        digest = hashlib.sha256(raw).hexdigest()
        if digest != EPA_BREAKPOINTS_SHA256:
            raise ChecksumError(
                "packaged breakpoint table failed checksum verification: "
                f"expected {EPA_BREAKPOINTS_SHA256}, got {digest}"
            )
    else:
        with open(path, "rb") as fh:
            raw = fh.read()
    text = raw.decode("utf-8")
    grouped: dict[PollutantKind, list[BreakpointSegment]] = {}
    schemes_seen: set[str] = set()
    reader = csv.DictReader(text.splitlines())
    for line, row in enumerate(reader, start=2):
        row_scheme, kind, seg = _parse_row(row, line)
        schemes_seen.add(row_scheme)
        if row_scheme != scheme:
            continue
        grouped.setdefault(kind, []).append(seg)
    if not grouped:
        raise VocabularyError(
            f"breakpoint file has no rows for scheme {scheme!r}",
            value=scheme,
            allowed=sorted(schemes_seen),
        )
    for segs in grouped.values():
        segs.sort(key=lambda s: s.conc_lo)
    return BreakpointTable(grouped)


_default_table: BreakpointTable | None = None


def default_table() -> BreakpointTable:
    """The packaged EPA table, loaded once and shared (it is immutable)."""
    global _default_table
    if _default_table is None:
        _default_table = load_breakpoint_table()
    return _default_table
