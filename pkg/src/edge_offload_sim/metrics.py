"""Aggregate analyses of outcome files, with Student-t confidence intervals across seeds."""

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy import stats

from edge_offload_sim.enums import ApplicationName, DenialCategory, MobilityType, RequestClass
from edge_offload_sim.exceptions import ArtifactIOError, PairingError
from edge_offload_sim.experiment import outcome_file
from edge_offload_sim.privacy import epsilon_label
from edge_offload_sim.sim_logging import log

KEY_COLUMNS = ["t", "user_id", "mobility", "app", "true_bs", "ideal_mh"]
_DTYPES = {
    "t": np.int64,
    "user_id": np.int64,
    "mobility": str,
    "app": str,
    "true_bs": np.int64,
    "selected_mh": np.int64,
    "ideal_mh": np.int64,
    "accepted": np.int8,
    "reason_latency": np.int8,
    "reason_throughput": np.int8,
    "reason_capacity": np.int8,
    "achieved_latency_ms": np.float64,
    "ideal_latency_ms": np.float64,
}
ALL = "all"


@dataclass(frozen=True)
class ConfidenceInterval:
    mean: float
    half_width: float | None
    n: int


def confidence_interval(values: list[float] | np.ndarray, level: float = 0.95) -> ConfidenceInterval:
    """
    Two-sided Student-t interval on the mean of per-seed values.

    With fewer than two values only the mean is given.
    """
    values = np.asarray(values, dtype=np.float64)
    n = int(values.size)
    if n == 0:
        return ConfidenceInterval(math.nan, None, 0)
    mean = float(values.mean())
    if n < 2:
        return ConfidenceInterval(mean, None, n)
    sd = float(values.std(ddof=1))
    half = float(stats.t.ppf(0.5 + level / 2, n - 1)) * sd / math.sqrt(n)
    return ConfidenceInterval(mean, half, n)


@dataclass
class PairedOutcomes:
    """Outcomes of one seed under every privacy level, aligned row by row on (t, user_id).

    Attributes:
        seed: Master seed
        epsilons: Privacy levels, weakest protection first
        keys: Columns shared by every level (t, user_id, mobility, app, true_bs, ideal_mh)
        levels: Per-level frames with the level-dependent columns
    """

    seed: int
    epsilons: list[float]
    keys: pd.DataFrame
    levels: list[pd.DataFrame]

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.epsilons) or not self.levels:
            raise PairingError(f"Seed {self.seed}: {len(self.levels)} outcome sets for {len(self.epsilons)} levels")
        for eps, frame in zip(self.epsilons, self.levels, strict=True):
            if len(frame) != len(self.keys):
                raise PairingError(
                    f"Seed {self.seed}, epsilon {epsilon_label(eps)}: {len(frame)} rows, expected {len(self.keys)}"
                )

    @classmethod
    def from_frames(cls, seed: int, frames: dict[float, pd.DataFrame]) -> "PairedOutcomes":
        """
        Align per-level outcome frames.

        Raises:
            PairingError: If a level lacks a request another level has, or a shared column differs
        """
        epsilons = sorted(frames, reverse=True)
        ordered = [frames[e].sort_values(["t", "user_id"], kind="stable").reset_index(drop=True) for e in epsilons]
        keys = ordered[0][KEY_COLUMNS]
        for eps, frame in zip(epsilons[1:], ordered[1:], strict=True):
            if len(frame) != len(keys):
                raise PairingError(
                    f"Seed {seed}, epsilon {epsilon_label(eps)}: {len(frame)} requests, "
                    f"epsilon {epsilon_label(epsilons[0])} has {len(keys)}"
                )
            for column in KEY_COLUMNS:
                differs = frame[column].to_numpy() != keys[column].to_numpy()
                if differs.any():
                    row = int(np.argmax(differs))
                    raise PairingError(
                        f"Seed {seed}, epsilon {epsilon_label(eps)}: request (t={keys['t'].iat[row]}, "
                        f"user={keys['user_id'].iat[row]}) differs in {column}"
                    )
        return cls(seed, epsilons, keys.reset_index(drop=True), ordered)

    def accepted_matrix(self) -> np.ndarray:
        """Boolean (requests, levels) matrix of acceptance."""
        return np.column_stack([f["accepted"].to_numpy().astype(bool) for f in self.levels])


def classify_requests(accepted: np.ndarray) -> np.ndarray:
    """
    Class of every request from its acceptance under each privacy level.

    Args:
        accepted: Boolean array (requests, levels)

    Returns:
        np.ndarray: RequestClass values, one per request
    """
    accepted = np.asarray(accepted, dtype=bool)
    if accepted.ndim == 1:
        accepted = accepted[:, None]
    out = np.full(accepted.shape[0], RequestClass.PRIVACY_DEPENDENT.value, dtype=object)
    out[accepted.all(axis=1)] = RequestClass.ALWAYS_OFFLOADED.value
    out[~accepted.any(axis=1)] = RequestClass.NEVER_OFFLOADED.value
    return out


def _pattern(row: np.ndarray) -> str:
    return ",".join("Y" if a else "N" for a in row)


def _denial_categories(lat: np.ndarray, tput: np.ndarray, cap: np.ndarray) -> dict[DenialCategory, int]:
    return {
        DenialCategory.LATENCY_ONLY: int((lat & ~tput).sum()),
        DenialCategory.THROUGHPUT_ONLY: int((tput & ~lat).sum()),
        DenialCategory.BOTH: int((lat & tput).sum()),
        DenialCategory.CAPACITY_ONLY: int((cap & ~lat & ~tput).sum()),
    }


@dataclass
class MetricsAccumulator:
    """
    Per-seed counts and sums from which every analysis is finalized.

    Seeds are the unit of replication. Merging unions the per-seed tables, so merge order
    does not affect the results.
    """

    epsilons: list[float] = field(default_factory=list)
    seeds: dict[int, Counter] = field(default_factory=dict)

    def add_seed(self, paired: PairedOutcomes) -> None:
        if self.epsilons and self.epsilons != paired.epsilons:
            raise PairingError(f"Seed {paired.seed} has levels {paired.epsilons}, expected {self.epsilons}")
        if paired.seed in self.seeds:
            raise PairingError(f"Seed {paired.seed} added twice")
        self.epsilons = list(paired.epsilons)
        self.seeds[paired.seed] = self._count(paired)

    def merge(self, other: "MetricsAccumulator") -> "MetricsAccumulator":
        if self.epsilons and other.epsilons and self.epsilons != other.epsilons:
            raise PairingError("Cannot merge accumulators over different privacy levels")
        overlap = set(self.seeds) & set(other.seeds)
        if overlap:
            raise PairingError(f"Seeds {sorted(overlap)} present in both accumulators")
        return MetricsAccumulator(self.epsilons or other.epsilons, {**self.seeds, **other.seeds})

    def _count(self, paired: PairedOutcomes) -> Counter:
        c: Counter = Counter()
        keys = paired.keys
        mobilities = [m.value for m in MobilityType]
        apps = [a.value for a in ApplicationName]
        mob_code = pd.Categorical(keys["mobility"], categories=mobilities).codes.astype(np.int64)
        app_code = pd.Categorical(keys["app"], categories=apps).codes.astype(np.int64)
        if (mob_code < 0).any() or (app_code < 0).any():
            raise PairingError(f"Seed {paired.seed}: unknown mobility type or application in outcomes")
        cell = mob_code * len(apps) + app_code
        n_cells = len(mobilities) * len(apps)

        def per_cell(mask: np.ndarray | None = None, weights: np.ndarray | None = None) -> np.ndarray:
            """(mobility + all, app + all) table of counts or sums."""
            w = np.ones(cell.size) if weights is None else weights
            if mask is not None:
                w = np.where(mask, w, 0.0)
            table = np.bincount(cell, weights=w, minlength=n_cells).reshape(len(mobilities), len(apps))
            table = np.vstack((table, table.sum(axis=0)))
            return np.hstack((table, table.sum(axis=1, keepdims=True)))

        def put(name: str, table: np.ndarray, *prefix: str, by_app: bool = True, integer: bool = True) -> None:
            for i, m in enumerate([*mobilities, ALL]):
                if by_app:
                    for j, a in enumerate([*apps, ALL]):
                        c[(name, *prefix, m, a)] = int(round(table[i, j])) if integer else float(table[i, j])
                else:
                    c[(name, *prefix, m)] = int(round(table[i, -1])) if integer else float(table[i, -1])

        accepted = paired.accepted_matrix()
        c["total"] = len(keys)
        classes = classify_requests(accepted)
        for cls in RequestClass:
            table = per_cell(classes == cls.value)
            c["class", cls.value] = int(round(table[-1, -1]))
            for j, a in enumerate(apps):
                c["class_app", a, cls.value] = int(round(table[-1, j]))
        totals = per_cell()
        for j, a in enumerate(apps):
            c["app_n", a] = int(round(totals[-1, j]))

        if accepted.shape[0]:
            packed = np.packbits(accepted, axis=1, bitorder="little")
            patterns, counts = np.unique(packed, axis=0, return_counts=True)
            for row, count in zip(patterns, counts, strict=True):
                bits = np.unpackbits(row, bitorder="little")[: accepted.shape[1]].astype(bool)
                c["pattern", _pattern(bits)] = int(count)

        if accepted.shape[1] >= 2:
            c["medium_success"] = int(accepted[:, :2].all(axis=1).sum())
            put("impact", per_cell(accepted[:, 0] & ~accepted[:, 1:].any(axis=1)))
            put("impact_n", totals)

        for level, (eps, frame) in enumerate(zip(paired.epsilons, paired.levels, strict=True)):
            label = epsilon_label(eps)
            lat = frame["reason_latency"].to_numpy().astype(bool)
            tput = frame["reason_throughput"].to_numpy().astype(bool)
            cap = frame["reason_capacity"].to_numpy().astype(bool)
            acc = accepted[:, level]
            c["n", label] = len(frame)
            c["denied", label] = int((~acc).sum())
            categories = _denial_categories(lat, tput, cap)
            for category, count in categories.items():
                c["category", label, category.value] = count
            c["domain", label] = c["denied", label] - categories[DenialCategory.CAPACITY_ONLY]

            nonideal = frame["selected_mh"].to_numpy() != keys["ideal_mh"].to_numpy()
            achieved = frame["achieved_latency_ms"].to_numpy()
            ideal = frame["ideal_latency_ms"].to_numpy()
            positive = ideal > 0
            pct = np.zeros_like(achieved)
            np.divide(100.0 * (achieved - ideal), ideal, out=pct, where=positive)

            put("cell_n", totals, label)
            put("cell_acc", per_cell(acc), label)
            put("mob_n", totals, label, by_app=False)
            put("nonideal", per_cell(nonideal), label, by_app=False)
            put("zero_ideal", per_cell(nonideal & ~positive), label, by_app=False)
            put("pct_nonideal_n", per_cell(nonideal & positive), label, by_app=False)
            put("pct_nonideal_sum", per_cell(nonideal & positive, pct), label, by_app=False, integer=False)
            put("pct_all_n", per_cell(positive), label, by_app=False)
            put("pct_all_sum", per_cell(positive, pct), label, by_app=False, integer=False)
        return c

    def total(self, key: tuple | str) -> float:
        return sum(counts[key] for counts in self.seeds.values())

    def summarize(self, num: tuple | str, den: tuple | str) -> dict[str, Any]:
        """Pooled ratio plus the mean and CI of the per-seed ratios (seeds with a zero denominator skipped)."""
        total_num = self.total(num)
        total_den = self.total(den)
        per_seed = [c[num] / c[den] for _, c in sorted(self.seeds.items()) if c[den] > 0]
        ci = confidence_interval(per_seed)
        return {
            "count": total_num,
            "n": total_den,
            "fraction": total_num / total_den if total_den else math.nan,
            "mean": ci.mean,
            "ci_half_width": ci.half_width,
            "n_seeds": ci.n,
        }

    @property
    def labels(self) -> list[str]:
        return [epsilon_label(e) for e in self.epsilons]


def classify(acc: MetricsAccumulator) -> pd.DataFrame:
    """Share of requests always offloaded, privacy dependent and never offloaded."""
    total = int(acc.total("total"))
    rows = []
    for cls in RequestClass:
        summary = acc.summarize(("class", cls.value), "total")
        exact = Fraction(int(summary["count"]), total) if total else None
        rows.append({"class": cls.value, **summary, "fraction": float(exact) if exact is not None else math.nan})
    return pd.DataFrame(rows)


def classify_by_app(acc: MetricsAccumulator) -> pd.DataFrame:
    rows = [
        {"app": a.value, "class": cls.value, **acc.summarize(("class_app", a.value, cls.value), ("app_n", a.value))}
        for a in ApplicationName
        for cls in RequestClass
    ]
    return pd.DataFrame(rows)


def acceptance_patterns(acc: MetricsAccumulator) -> pd.DataFrame:
    """Share of requests for every accept (Y) / deny (N) pattern across the privacy levels."""
    patterns = sorted({k[1] for c in acc.seeds.values() for k in c if isinstance(k, tuple) and k[0] == "pattern"})
    rows = [{"pattern": p, **acc.summarize(("pattern", p), "total")} for p in reversed(patterns)]
    return pd.DataFrame(rows, columns=["pattern", "count", "n", "fraction", "mean", "ci_half_width", "n_seeds"])


def medium_privacy_success(acc: MetricsAccumulator) -> dict[str, Any]:
    """Share of requests accepted under both of the two weakest privacy levels."""
    return acc.summarize("medium_success", "total")


def denial_breakdown(acc: MetricsAccumulator) -> pd.DataFrame:
    """
    Denial reasons per privacy level.

    The latency, throughput and both categories are fractions of the denials that involve latency or
    throughput, so they sum to 1; capacity-only denials are a fraction of all denials and reported apart.
    Levels without denials yield rows with n_denied = 0.
    """
    rows = []
    for label in acc.labels:
        n_requests = acc.total(("n", label))
        for category in DenialCategory:
            den = ("denied", label) if category == DenialCategory.CAPACITY_ONLY else ("domain", label)
            summary = acc.summarize(("category", label, category.value), den)
            rows.append(
                {
                    "epsilon": label,
                    "category": category.value,
                    "count": summary["count"],
                    "n_denied": int(acc.total(("denied", label))),
                    "fraction_of_denied": summary["fraction"],
                    "fraction_of_requests": summary["count"] / n_requests if n_requests else math.nan,
                    "mean": summary["mean"],
                    "ci_half_width": summary["ci_half_width"],
                    "n_seeds": summary["n_seeds"],
                }
            )
    return pd.DataFrame(rows)


def non_ideal_fraction(acc: MetricsAccumulator) -> pd.DataFrame:
    """Share of requests whose selected MH is not the ideal one, per mobility type and privacy level."""
    rows = [
        {"mobility": m, "epsilon": label, **acc.summarize(("nonideal", label, m), ("mob_n", label, m))}
        for m in [*map(str, MobilityType), ALL]
        for label in acc.labels
    ]
    return pd.DataFrame(rows)


def latency_increase(acc: MetricsAccumulator) -> pd.DataFrame:
    """
    Mean latency increase (percent of the ideal latency) per mobility type and privacy level.

    mean_pct_nonideal pools the non-ideal selections; mean_pct_all pools every request with a positive
    ideal latency; seed_mean_pct_nonideal averages the per-seed means and carries the CI.
    """
    rows = []
    for m in [*map(str, MobilityType), ALL]:
        for label in acc.labels:
            n_pct = acc.total(("pct_nonideal_n", label, m))
            n_all = acc.total(("pct_all_n", label, m))
            summary = acc.summarize(("pct_nonideal_sum", label, m), ("pct_nonideal_n", label, m))
            rows.append(
                {
                    "mobility": m,
                    "epsilon": label,
                    "n_requests": int(acc.total(("mob_n", label, m))),
                    "n_nonideal": int(acc.total(("nonideal", label, m))),
                    "n_zero_ideal_excluded": int(acc.total(("zero_ideal", label, m))),
                    "mean_pct_nonideal": acc.total(("pct_nonideal_sum", label, m)) / n_pct if n_pct else math.nan,
                    "mean_pct_all": acc.total(("pct_all_sum", label, m)) / n_all if n_all else math.nan,
                    "seed_mean_pct_nonideal": summary["mean"],
                    "ci_half_width": summary["ci_half_width"],
                    "n_seeds": summary["n_seeds"],
                }
            )
    return pd.DataFrame(rows)


def privacy_impact_by_app(acc: MetricsAccumulator) -> pd.DataFrame:
    """
    Share of requests accepted at the weakest privacy level but denied under every other level, per (mobility, app).

    The weakest level is inf (no privacy) in a standard grid; the baseline column names it either way.
    """
    columns = ["baseline", "mobility", "app", "count", "n", "fraction", "mean", "ci_half_width", "n_seeds"]
    if len(acc.epsilons) < 2:
        return pd.DataFrame(columns=columns)
    baseline = acc.labels[0]
    if not math.isinf(acc.epsilons[0]):
        log.warning("No privacy-free level in the grid; privacy impact is measured against epsilon %s", baseline)
    rows = [
        {"baseline": baseline, "mobility": m, "app": a, **acc.summarize(("impact", m, a), ("impact_n", m, a))}
        for m in [*map(str, MobilityType), ALL]
        for a in [*map(str, ApplicationName), ALL]
    ]
    return pd.DataFrame(rows, columns=columns)


def acceptance_rate(acc: MetricsAccumulator) -> pd.DataFrame:
    """Share of accepted requests per (privacy level, mobility, app)."""
    rows = [
        {
            "epsilon": label,
            "mobility": m,
            "app": a,
            **acc.summarize(("cell_acc", label, m, a), ("cell_n", label, m, a)),
        }
        for label in acc.labels
        for m in [*map(str, MobilityType), ALL]
        for a in [*map(str, ApplicationName), ALL]
    ]
    return pd.DataFrame(rows)


def read_outcomes(path: Path) -> pd.DataFrame:
    """Read the columns of an outcome file the analyses need."""
    try:
        return pd.read_csv(path, usecols=list(_DTYPES), dtype=_DTYPES)
    except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactIOError(path, str(e)) from e


def load_paired(out_dir: Path, seed: int, epsilons: list[float]) -> PairedOutcomes:
    """
    Load every privacy level of a seed.

    Raises:
        PairingError: Naming the first missing (seed, epsilon) file
    """
    frames = {}
    for eps in epsilons:
        path = outcome_file(out_dir, seed, eps)
        if not path.exists():
            raise PairingError(f"Missing outcomes for seed {seed}, epsilon {epsilon_label(eps)}: {path}")
        frames[eps] = read_outcomes(path)
    return PairedOutcomes.from_frames(seed, frames)


def accumulate(out_dir: Path, seeds: list[int], epsilons: list[float]) -> MetricsAccumulator:
    acc = MetricsAccumulator(epsilons=sorted(epsilons, reverse=True))
    for seed in seeds:
        acc.add_seed(load_paired(out_dir, seed, epsilons))
    return acc


REPORT_TABLES = {
    "table3.csv": classify,
    "fig5.csv": denial_breakdown,
    "fig6.csv": non_ideal_fraction,
    "fig7.csv": latency_increase,
    "fig8.csv": privacy_impact_by_app,
    "classes_by_app.csv": classify_by_app,
    "acceptance_patterns.csv": acceptance_patterns,
    "acceptance_rate.csv": acceptance_rate,
}


def _missing(value: Any) -> bool:
    return isinstance(value, float) and math.isnan(value)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def _records(frame: pd.DataFrame) -> list[dict[str, Any]]:
    clean = frame.astype(object).where(frame.notna(), None)
    return clean.to_dict(orient="records")


def build_report(acc: MetricsAccumulator) -> dict[str, pd.DataFrame]:
    return {name: fn(acc) for name, fn in REPORT_TABLES.items()}


def write_report(acc: MetricsAccumulator, out_dir: Path, config_hash: str | None = None) -> list[Path]:
    """
    Write report.json, one CSV per analysis and report.md under out_dir/report.

    Returns:
        list[Path]: Every file written
    """
    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    tables = build_report(acc)
    written = []
    try:
        for name, frame in tables.items():
            path = report_dir / name
            frame.to_csv(path, index=False, float_format="%.6f")
            written.append(path)

        medium = medium_privacy_success(acc)
        document = {
            "config_hash": config_hash,
            "seeds": sorted(acc.seeds),
            "epsilons": acc.labels,
            "n_requests": int(acc.total("total")),
            "medium_privacy_success": {k: None if _missing(v) else v for k, v in medium.items()},
            **{name.removesuffix(".csv"): _records(frame) for name, frame in tables.items()},
        }
        path = report_dir / "report.json"
        path.write_text(json.dumps(document, indent=2, default=_json_default) + "\n", encoding="utf-8")
        written.append(path)

        lines = ["# Offloading report", "", f"Seeds: {len(acc.seeds)}; privacy levels: {', '.join(acc.labels)}", ""]
        for name, frame in tables.items():
            lines += [f"## {name.removesuffix('.csv')}", "", frame.to_markdown(index=False, floatfmt=".4f"), ""]
        path = report_dir / "report.md"
        path.write_text("\n".join(lines), encoding="utf-8")
        written.append(path)
    except OSError as e:
        raise ArtifactIOError(report_dir, str(e)) from e
    return written
