"""Line-oriented report and table formats used by the CLI.

Reports are flat "key = value" text; tables are comma-separated with a
header row, optionally preceded by "# key=value" provenance comments.
Floats are written with shortest round-trip formatting so that re-running
a command with the same inputs and seed reproduces files byte-identically.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .extremes import LargestPoreDistribution
from .gpd import GpdParams, TailFit

FIT_FORMAT = "poretail-fit/1"
PREDICTION_FORMAT = "poretail-prediction/1"


class ReportParseError(ValueError):
    """A report file is malformed or of an unexpected format."""


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def config_sha256(options: Mapping[str, object]) -> str:
    """Hash of the effective run configuration, for provenance stamping."""
    lines = "".join(f"{key}={fmt(options[key])}\n" for key in sorted(options))
    return hashlib.sha256(lines.encode("utf-8")).hexdigest()


def provenance_lines(provenance: Mapping[str, object] | None) -> list[str]:
    if not provenance:
        return []
    return [f"# {key}={fmt(value)}" for key, value in provenance.items()]


def write_table(
    dest: str | Path | IO[str],
    columns: Sequence[str],
    rows: Iterable[Sequence],
    provenance: Mapping[str, object] | None = None,
) -> None:
    """Comma-separated table with header row and optional provenance comments."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="") as handle:
            write_table(handle, columns, rows, provenance)
            return
    for line in provenance_lines(provenance):
        dest.write(line + "\n")
    dest.write(",".join(columns) + "\n")
    for row in rows:
        dest.write(",".join("" if cell is None else fmt(cell) for cell in row) + "\n")


def _write_keyvalues(handle: IO[str], items: Sequence[tuple[str, object]]) -> None:
    for key, value in items:
        handle.write(f"{key} = {fmt(value)}\n")


def _read_keyvalues(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ReportParseError(f"{path}: line {line_no} is not 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def write_fit_report(
    fit: TailFit,
    dest: str | Path,
    provenance: Mapping[str, object] | None = None,
) -> None:
    """Serialize a fitted tail, including the sub-threshold empirical sample."""
    items: list[tuple[str, object]] = [("format", FIT_FORMAT), ("toolkit_version", __version__)]
    items += list((provenance or {}).items())
    items += [
        ("fit_id", fit.fit_id),
        ("threshold_um", fit.params.threshold_um),
        ("estimator", fit.estimator),
        ("sigma_um", fit.params.scale_um),
        ("xi", fit.params.shape),
        ("n_exceed", fit.n_exceed),
        ("covariance_available", fit.covariance is not None),
    ]
    if fit.covariance is not None:
        items += [
            ("cov_sigma_sigma", float(fit.covariance[0, 0])),
            ("cov_sigma_xi", float(fit.covariance[0, 1])),
            ("cov_xi_xi", float(fit.covariance[1, 1])),
        ]
    if fit.lambda_above_per_mm3 is not None:
        items += [
            ("lambda_above_per_mm3", fit.lambda_above_per_mm3),
            ("lambda_above_se", fit.lambda_above_se or 0.0),
            ("lambda_below_per_mm3", fit.lambda_below_per_mm3),
            ("lambda_below_se", fit.lambda_below_se or 0.0),
        ]
    items.append(("flags", "|".join(fit.flags)))
    emp = fit.empirical_below_um
    if emp is not None:
        items.append(("empirical_below_um", ",".join(repr(float(v)) for v in emp)))
    with open(dest, "w", encoding="utf-8") as handle:
        _write_keyvalues(handle, items)


def read_fit_report(path: str | Path) -> TailFit:
    values = _read_keyvalues(path)
    if values.get("format") != FIT_FORMAT:
        raise ReportParseError(f"{path}: not a {FIT_FORMAT} report")
    try:
        params = GpdParams(
            threshold_um=float(values["threshold_um"]),
            scale_um=float(values["sigma_um"]),
            shape=float(values["xi"]),
        )
        covariance = None
        if values.get("covariance_available") == "true":
            css = float(values["cov_sigma_sigma"])
            csx = float(values["cov_sigma_xi"])
            cxx = float(values["cov_xi_xi"])
            covariance = np.array([[css, csx], [csx, cxx]])
        empirical = None
        if "empirical_below_um" in values:
            text = values["empirical_below_um"]
            empirical = (
                np.array([float(v) for v in text.split(",")]) if text else np.empty(0)
            )
        flags = tuple(f for f in values.get("flags", "").split("|") if f)

        def opt_float(key: str) -> float | None:
            return float(values[key]) if key in values else None

        return TailFit(
            params=params,
            covariance=covariance,
            estimator=values.get("estimator", ""),
            n_exceed=int(values["n_exceed"]),
            flags=flags,
            fit_id=values.get("fit_id", ""),
            lambda_above_per_mm3=opt_float("lambda_above_per_mm3"),
            lambda_above_se=opt_float("lambda_above_se"),
            lambda_below_per_mm3=opt_float("lambda_below_per_mm3"),
            lambda_below_se=opt_float("lambda_below_se"),
            empirical_below_um=empirical,
        )
    except (KeyError, ValueError) as exc:
        raise ReportParseError(f"{path}: {exc}") from exc


def prediction_paths(prefix: str | Path) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return (
        prefix.with_name(prefix.name + "_cdf.csv"),
        prefix.with_name(prefix.name + "_summary.txt"),
    )


def write_prediction(
    dist: LargestPoreDistribution,
    prefix: str | Path,
    provenance: Mapping[str, object] | None = None,
) -> tuple[Path, Path]:
    """Write a distribution as a CDF table plus a line-oriented summary."""
    cdf_path, summary_path = prediction_paths(prefix)
    stamp = dict(provenance or {})
    write_table(
        cdf_path,
        ("edge_um", "cdf"),
        zip(dist.bin_edges_um, dist.cdf_at_edges),
        provenance=stamp,
    )
    items: list[tuple[str, object]] = [
        ("format", PREDICTION_FORMAT),
        ("toolkit_version", __version__),
    ]
    items += list(stamp.items())
    items += [(key, value) for key, value in dist.provenance.items()]
    items += [
        ("mean_um", dist.mean_um),
        ("p2_5_um", dist.p2_5_um),
        ("p50_um", dist.p50_um),
        ("p97_5_um", dist.p97_5_um),
        ("no_pore_mass", dist.no_pore_mass),
        ("overflow_mass", dist.overflow_mass),
        ("n_samples_total", dist.n_samples_total),
        ("dist_flags", "|".join(dist.flags)),
    ]
    with open(summary_path, "w", encoding="utf-8") as handle:
        _write_keyvalues(handle, items)
    return cdf_path, summary_path


def read_prediction(prefix: str | Path) -> LargestPoreDistribution:
    """Rebuild a distribution from the CDF table and summary pair."""
    cdf_path, summary_path = prediction_paths(prefix)
    summary = _read_keyvalues(summary_path)
    if summary.get("format") != PREDICTION_FORMAT:
        raise ReportParseError(f"{summary_path}: not a {PREDICTION_FORMAT} summary")
    edges = []
    cdf = []
    with open(cdf_path, "r", encoding="utf-8") as handle:
        header = None
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header[:2] != ["edge_um", "cdf"]:
                    raise ReportParseError(f"{cdf_path}: unexpected columns {header}")
                continue
            cells = line.split(",")
            edges.append(float(cells[0]))
            cdf.append(float(cells[1]))
    if header is None or len(edges) < 2:
        raise ReportParseError(f"{cdf_path}: no CDF rows")
    edges_arr = np.array(edges)
    cdf_arr = np.array(cdf)
    try:
        dist = LargestPoreDistribution(
            bin_edges_um=edges_arr,
            pdf_mass=np.diff(cdf_arr),
            cdf_at_edges=cdf_arr,
            no_pore_mass=float(summary["no_pore_mass"]),
            overflow_mass=float(summary["overflow_mass"]),
            mean_um=float(summary["mean_um"]),
            p2_5_um=float(summary["p2_5_um"]),
            p50_um=float(summary["p50_um"]),
            p97_5_um=float(summary["p97_5_um"]),
            n_samples_total=int(summary.get("n_samples_total", 0)),
            provenance={
                key: summary[key]
                for key in ("fit_id", "volume_mm3", "uncertainty_mode", "seed")
                if key in summary
            },
            flags=tuple(f for f in summary.get("dist_flags", "").split("|") if f),
        )
    except (KeyError, ValueError) as exc:
        raise ReportParseError(f"{summary_path}: {exc}") from exc
    if "volume_mm3" in dist.provenance:
        dist.provenance["volume_mm3"] = float(dist.provenance["volume_mm3"])
    return dist
