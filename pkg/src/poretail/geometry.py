"""Pore geometry metrics and specimen ingestion.

Converts raw per-pore measurements (volume, surface area, Feret diameters)
into the derived metrics used downstream: equivalent spherical diameter,
aspect ratio and sphericity. A specimen is an immutable collection of pore
records plus the scanned volume, kept sorted by equivalent diameter
descending so that tail operations read a prefix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import IO, Mapping

import numpy as np

# Pore-level measurements are in um / um^2 / um^3; specimen volumes in mm^3.
UM3_PER_MM3 = 1.0e9

REQUIRED_COLUMNS = (
    "pore_id",
    "volume_um3",
    "surface_area_um2",
    "min_feret_um",
    "max_feret_um",
)
CENTROID_COLUMNS = ("centroid_x_um", "centroid_y_um", "centroid_z_um")
DERIVED_COLUMNS = ("equiv_diameter_um", "aspect_ratio", "sphericity")

FLAG_SPHERICITY_ABOVE_UNITY = "sphericity above 1 (surface area below spherical minimum)"


class GeometryError(ValueError):
    """A pore measurement is outside its physical domain."""


class IngestError(ValueError):
    """A pore table could not be ingested; names the offending row/column."""


def equiv_diameter(volume: float) -> float:
    """Diameter (um) of the sphere with the same volume (um^3)."""
    if not volume > 0:
        raise GeometryError(f"volume must be positive, got {volume}")
    return (6.0 * volume / math.pi) ** (1.0 / 3.0)


def aspect_ratio(min_feret: float, max_feret: float) -> float:
    """Smallest over largest Feret diameter, in (0, 1]."""
    if not min_feret > 0 or not max_feret > 0:
        raise GeometryError(
            f"Feret diameters must be positive, got ({min_feret}, {max_feret})"
        )
    if min_feret > max_feret:
        raise GeometryError(
            f"min_feret {min_feret} exceeds max_feret {max_feret}"
        )
    return min_feret / max_feret


def sphericity(volume: float, surface_area: float) -> float:
    """Surface-area ratio of the equal-volume sphere to the pore; 1 for a sphere."""
    if not volume > 0:
        raise GeometryError(f"volume must be positive, got {volume}")
    if not surface_area > 0:
        raise GeometryError(f"surface_area must be positive, got {surface_area}")
    return math.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / surface_area


def sphere_surface_area(volume: float) -> float:
    """Surface area (um^2) of the sphere with the given volume (um^3)."""
    if not volume > 0:
        raise GeometryError(f"volume must be positive, got {volume}")
    return math.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0)


@dataclass(frozen=True)
class PoreRecord:
    """One segmented pore: raw measurements plus derived metrics."""

    pore_id: str
    volume_um3: float
    surface_area_um2: float
    min_feret_um: float
    max_feret_um: float
    equiv_diameter_um: float
    aspect_ratio: float
    sphericity: float
    centroid_um: tuple[float, float, float] | None = None
    quality_flags: tuple[str, ...] = ()
    # Original cell strings, kept so re-serialization is bit-exact.
    raw: Mapping[str, str] | None = field(default=None, compare=False, repr=False)


def make_pore_record(
    pore_id: str,
    volume_um3: float,
    surface_area_um2: float,
    min_feret_um: float,
    max_feret_um: float,
    centroid_um: tuple[float, float, float] | None = None,
    raw: Mapping[str, str] | None = None,
) -> PoreRecord:
    """Build a record, computing derived metrics and data-quality flags.

    Sphericity above 1 is physically impossible for a true surface but can
    occur when the reported surface area underestimates the spherical
    minimum (voxel effects); it is flagged, not rejected.
    """
    psi = sphericity(volume_um3, surface_area_um2)
    flags: tuple[str, ...] = ()
    if psi > 1.0:
        flags = (FLAG_SPHERICITY_ABOVE_UNITY,)
    return PoreRecord(
        pore_id=str(pore_id),
        volume_um3=volume_um3,
        surface_area_um2=surface_area_um2,
        min_feret_um=min_feret_um,
        max_feret_um=max_feret_um,
        equiv_diameter_um=equiv_diameter(volume_um3),
        aspect_ratio=aspect_ratio(min_feret_um, max_feret_um),
        sphericity=psi,
        centroid_um=centroid_um,
        quality_flags=flags,
        raw=raw,
    )


@dataclass(frozen=True)
class SpecimenDataset:
    """A specimen's pore population plus scanned volume and metadata.

    Pores are stored sorted by equivalent diameter descending (canonical
    order). Immutable after construction; safe for concurrent reads.
    """

    specimen_id: str
    geometry_label: str
    scan_velocity_mm_s: float
    scanned_volume_mm3: float
    pores: tuple[PoreRecord, ...]
    build_location_mm: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not self.scanned_volume_mm3 > 0:
            raise ValueError(
                f"scanned_volume_mm3 must be positive, got {self.scanned_volume_mm3}"
            )
        ordered = tuple(
            sorted(self.pores, key=lambda p: -p.equiv_diameter_um)
        )
        object.__setattr__(self, "pores", ordered)

    def __len__(self) -> int:
        return len(self.pores)

    @cached_property
    def diameters_um(self) -> np.ndarray:
        """Equivalent diameters, descending (read-only view)."""
        d = np.array([p.equiv_diameter_um for p in self.pores], dtype=float)
        d.setflags(write=False)
        return d


def _parse_cell(row_label: str, column: str, text: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise IngestError(
            f"{row_label}, column {column}: could not parse {text!r}"
        ) from None


def _parse_positive(row_label: str, column: str, text: str) -> float:
    value = _parse_cell(row_label, column, text)
    if not value > 0:
        raise IngestError(
            f"{row_label}, column {column}: must be positive, got {text!r}"
        )
    return value


def ingest_specimen(
    pore_table: str | Path | IO[str],
    *,
    specimen_id: str,
    geometry_label: str = "",
    scan_velocity_mm_s: float = 0.0,
    scanned_volume_mm3: float,
    build_location_mm: tuple[float, float] | None = None,
) -> SpecimenDataset:
    """Read a comma-separated pore table into a SpecimenDataset.

    The table must carry a header row with the columns in REQUIRED_COLUMNS;
    the three centroid columns are optional. Every data row maps to exactly
    one PoreRecord and the original cell strings are retained, so dumping
    the dataset reproduces the raw measurement columns bit-exactly.

    Raises IngestError naming the row and column on the first malformed or
    non-positive measurement.
    """
    if isinstance(pore_table, (str, Path)):
        with open(pore_table, "r", encoding="utf-8", newline="") as handle:
            return ingest_specimen(
                handle,
                specimen_id=specimen_id,
                geometry_label=geometry_label,
                scan_velocity_mm_s=scan_velocity_mm_s,
                scanned_volume_mm3=scanned_volume_mm3,
                build_location_mm=build_location_mm,
            )

    # Leading "# key=value" provenance comments are allowed and skipped;
    # row numbers in error messages count the remaining lines, header first.
    lines = (line for line in pore_table if not line.lstrip().startswith("#"))
    reader = csv.DictReader(lines)
    if reader.fieldnames is None:
        raise IngestError("empty file: no header row, no rows")
    missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise IngestError(f"missing column(s): {', '.join(missing)}")
    has_centroid = all(c in reader.fieldnames for c in CENTROID_COLUMNS)

    records = []
    for line_no, row in enumerate(reader, start=2):
        label = f"row {line_no}"
        if row.get("pore_id") is None:
            raise IngestError(f"{label}: missing cells")
        volume = _parse_positive(label, "volume_um3", row["volume_um3"])
        area = _parse_positive(label, "surface_area_um2", row["surface_area_um2"])
        fmin = _parse_positive(label, "min_feret_um", row["min_feret_um"])
        fmax = _parse_positive(label, "max_feret_um", row["max_feret_um"])
        if fmin > fmax:
            raise IngestError(
                f"{label}, column min_feret_um: exceeds max_feret_um "
                f"({row['min_feret_um']} > {row['max_feret_um']})"
            )
        centroid = None
        if has_centroid:
            cells = [row[c] for c in CENTROID_COLUMNS]
            if all(c not in (None, "") for c in cells):
                centroid = tuple(
                    _parse_cell(label, col, cell)
                    for col, cell in zip(CENTROID_COLUMNS, cells)
                )
        records.append(
            make_pore_record(
                pore_id=row["pore_id"],
                volume_um3=volume,
                surface_area_um2=area,
                min_feret_um=fmin,
                max_feret_um=fmax,
                centroid_um=centroid,
                raw={k: row[k] for k in reader.fieldnames if row.get(k) is not None},
            )
        )

    return SpecimenDataset(
        specimen_id=specimen_id,
        geometry_label=geometry_label,
        scan_velocity_mm_s=scan_velocity_mm_s,
        scanned_volume_mm3=scanned_volume_mm3,
        pores=tuple(records),
        build_location_mm=build_location_mm,
    )


def _format_value(value: float) -> str:
    return repr(float(value))


def dump_specimen(dataset: SpecimenDataset, dest: str | Path | IO[str]) -> None:
    """Write the canonical dataset dump: raw columns plus derived columns.

    Raw measurement cells are emitted verbatim when the record was ingested
    from a table; synthesized records fall back to shortest round-trip
    float formatting. Rows appear in canonical (descending diameter) order.
    """
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as handle:
            dump_specimen(dataset, handle)
            return

    with_centroid = any(p.centroid_um is not None for p in dataset.pores)
    columns = list(REQUIRED_COLUMNS)
    if with_centroid:
        columns += list(CENTROID_COLUMNS)
    columns += list(DERIVED_COLUMNS)

    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(columns)
    for pore in dataset.pores:
        row = []
        for col in REQUIRED_COLUMNS:
            if pore.raw is not None and col in pore.raw:
                row.append(pore.raw[col])
            elif col == "pore_id":
                row.append(pore.pore_id)
            else:
                attr = {
                    "volume_um3": pore.volume_um3,
                    "surface_area_um2": pore.surface_area_um2,
                    "min_feret_um": pore.min_feret_um,
                    "max_feret_um": pore.max_feret_um,
                }[col]
                row.append(_format_value(attr))
        if with_centroid:
            if pore.raw is not None and all(c in pore.raw for c in CENTROID_COLUMNS):
                row += [pore.raw[c] for c in CENTROID_COLUMNS]
            elif pore.centroid_um is not None:
                row += [_format_value(v) for v in pore.centroid_um]
            else:
                row += ["", "", ""]
        row += [
            _format_value(pore.equiv_diameter_um),
            _format_value(pore.aspect_ratio),
            _format_value(pore.sphericity),
        ]
        writer.writerow(row)
