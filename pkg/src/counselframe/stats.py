"""Contingency analysis and agreement metrics.

The chi-squared upper tail is computed here rather than imported, via the
regularized upper incomplete gamma function, so the package carries no
numeric dependency.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Hashable, Iterable, Optional, Sequence

from .corpus import DeliveryGroup
from .framing import COUNSELING_CATEGORIES, FramingCategory, FramingLabel

_EPS = 1e-15
_MAX_ITER = 800


class StatsError(ValueError):
    pass


class DegenerateTableError(StatsError):
    pass


def round_half_up(value: float, ndigits: int = 1) -> float:
    """Decimal half-up rounding; 0.05 at one decimal goes to 0.1."""
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def _lower_series(a: float, x: float) -> float:
    """Regularized lower gamma P(a, x) by power series; valid for x < a+1."""
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_continued_fraction(a: float, x: float) -> float:
    """Regularized upper gamma Q(a, x) by Lentz's continued fraction."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_upper_gamma(a: float, x: float) -> float:
    """Q(a, x) = Γ(a, x)/Γ(a), relative error well below 1e-10."""
    if a <= 0.0:
        raise StatsError("shape parameter must be positive")
    if x < 0.0:
        raise StatsError("argument must be non-negative")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_continued_fraction(a, x)


def chi_square_sf(statistic: float, df: int) -> float:
    """Upper-tail probability of the chi-squared distribution."""
    if df < 1:
        raise StatsError("df must be at least 1")
    if statistic < 0.0:
        raise StatsError("statistic must be non-negative")
    return regularized_upper_gamma(df / 2.0, statistic / 2.0)


@dataclass(frozen=True)
class ContingencyTable:
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if not self.row_labels or not self.col_labels:
            raise StatsError("table needs at least one row and one column")
        if len(self.counts) != len(self.row_labels):
            raise StatsError("counts row count does not match row labels")
        if len(set(self.row_labels)) != len(self.row_labels):
            raise StatsError("row labels must be unique")
        if len(set(self.col_labels)) != len(self.col_labels):
            raise StatsError("column labels must be unique")
        for row in self.counts:
            if len(row) != len(self.col_labels):
                raise StatsError("counts column count does not match column labels")
            for value in row:
                if not isinstance(value, int) or value < 0:
                    raise StatsError("counts must be non-negative integers")

    @property
    def row_totals(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    @property
    def col_totals(self) -> tuple[int, ...]:
        return tuple(sum(col) for col in zip(*self.counts))

    @property
    def grand_total(self) -> int:
        return sum(self.row_totals)

    def cell(self, row_label: str, col_label: str) -> int:
        return self.counts[self.row_labels.index(row_label)][self.col_labels.index(col_label)]


GROUP_COLUMNS = (DeliveryGroup.RCS.value, DeliveryGroup.VBAC.value)


@dataclass(frozen=True)
class BuiltTable:
    table: ContingencyTable
    excluded_rows: tuple[str, ...]


def table_from_pairs(pairs: Iterable[tuple[FramingCategory, DeliveryGroup]]) -> BuiltTable:
    """Tally (category, group) observations into a category-by-group table.

    Categories unobserved in both groups are excluded (their expected
    counts would be zero) and reported back by name.
    """
    counts: Counter[tuple[FramingCategory, DeliveryGroup]] = Counter()
    n = 0
    for category, group in pairs:
        if category not in COUNSELING_CATEGORIES:
            raise StatsError(
                f"table input must be counseling-relevant labels, got {category.value}"
            )
        counts[(category, group)] += 1
        n += 1
    if n == 0:
        raise DegenerateTableError("no labels to tabulate")

    ordered = sorted(COUNSELING_CATEGORIES, key=lambda c: c.display_name)
    groups = (DeliveryGroup.RCS, DeliveryGroup.VBAC)
    rows: list[str] = []
    excluded: list[str] = []
    matrix: list[tuple[int, ...]] = []
    for category in ordered:
        values = tuple(counts.get((category, g), 0) for g in groups)
        if sum(values) == 0:
            excluded.append(category.display_name)
            continue
        rows.append(category.display_name)
        matrix.append(values)
    if len(rows) < 2:
        raise DegenerateTableError("fewer than two observed categories; df would be 0")
    table = ContingencyTable(tuple(rows), GROUP_COLUMNS, tuple(matrix))
    return BuiltTable(table=table, excluded_rows=tuple(excluded))


def build_table(labels: Iterable[FramingLabel]) -> BuiltTable:
    return table_from_pairs((label.category, label.group) for label in labels)


def expected_counts(table: ContingencyTable) -> tuple[tuple[float, ...], ...]:
    n = table.grand_total
    if n <= 0:
        raise StatsError("empty table")
    rows = table.row_totals
    cols = table.col_totals
    return tuple(tuple(r * c / n for c in cols) for r in rows)


@dataclass(frozen=True)
class ResidualCell:
    row_label: str
    col_label: str
    value: float

    @property
    def significant(self) -> bool:
        return abs(self.value) > 2.0


def adjusted_residuals(table: ContingencyTable) -> tuple[tuple[float, ...], ...]:
    """r_ij = (O - E) / sqrt(E (1 - row/N) (1 - col/N))."""
    n = table.grand_total
    rows = table.row_totals
    cols = table.col_totals
    if any(r == 0 for r in rows) or any(c == 0 for c in cols):
        raise StatsError("zero marginal total")
    if any(r >= n for r in rows) or any(c >= n for c in cols):
        raise StatsError("a margin equals the grand total; residuals undefined")
    expected = expected_counts(table)
    out: list[tuple[float, ...]] = []
    for i, row in enumerate(table.counts):
        adj_row = []
        for j, observed in enumerate(row):
            scale = math.sqrt(expected[i][j] * (1.0 - rows[i] / n) * (1.0 - cols[j] / n))
            adj_row.append((observed - expected[i][j]) / scale)
        out.append(tuple(adj_row))
    return tuple(out)


def significant_cells(table: ContingencyTable) -> list[ResidualCell]:
    residuals = adjusted_residuals(table)
    cells = [
        ResidualCell(table.row_labels[i], table.col_labels[j], residuals[i][j])
        for i in range(len(table.row_labels))
        for j in range(len(table.col_labels))
    ]
    return [c for c in cells if c.significant]


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    df: int
    p_value: float
    expected: tuple[tuple[float, ...], ...]
    residuals: tuple[tuple[float, ...], ...]


def chi_square(table: ContingencyTable) -> ChiSquareResult:
    expected = expected_counts(table)
    if any(e <= 0.0 for row in expected for e in row):
        raise StatsError("zero expected cell; drop the offending row or column")
    df = (len(table.row_labels) - 1) * (len(table.col_labels) - 1)
    if df < 1:
        raise DegenerateTableError("table has no degrees of freedom")
    statistic = sum(
        (observed - e) ** 2 / e
        for obs_row, exp_row in zip(table.counts, expected)
        for observed, e in zip(obs_row, exp_row)
    )
    return ChiSquareResult(
        statistic=statistic,
        df=df,
        p_value=chi_square_sf(statistic, df),
        expected=expected,
        residuals=adjusted_residuals(table),
    )


@dataclass(frozen=True)
class AgreementReport:
    any_match_rate: float
    mean_jaccard: float
    kappa: float
    n_items: int


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    if len(a) != len(b):
        raise StatsError("label sequences differ in length")
    if not a:
        raise StatsError("no items")
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    freq_a = Counter(a)
    freq_b = Counter(b)
    p_e = sum(freq_a[label] * freq_b.get(label, 0) for label in freq_a) / (n * n)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def agreement_metrics(
    llm: Sequence[Hashable],
    expert: Sequence[frozenset | set],
    expert_primary: Sequence[Hashable],
) -> AgreementReport:
    """Any-match, mean Jaccard against expert label sets, and kappa against
    the expert's first-listed label."""
    if not (len(llm) == len(expert) == len(expert_primary)):
        raise StatsError("llm, expert, and primary sequences differ in length")
    if not llm:
        raise StatsError("no items")
    jaccards = []
    matches = 0
    for guess, truth_set in zip(llm, expert):
        if not truth_set:
            raise StatsError("expert label set is empty")
        truth = set(truth_set)
        if guess in truth:
            matches += 1
        jaccards.append(len({guess} & truth) / len({guess} | truth))
    return AgreementReport(
        any_match_rate=matches / len(llm),
        mean_jaccard=sum(jaccards) / len(jaccards),
        kappa=cohen_kappa(llm, expert_primary),
        n_items=len(llm),
    )


def distribution(table: ContingencyTable) -> dict[str, dict[str, float]]:
    """Per-column category percentages, half-up rounded to one decimal."""
    out: dict[str, dict[str, float]] = {}
    for j, col in enumerate(table.col_labels):
        total = table.col_totals[j]
        if total == 0:
            raise StatsError(f"column {col!r} has no observations")
        out[col] = {
            row: round_half_up(100.0 * table.counts[i][j] / total)
            for i, row in enumerate(table.row_labels)
        }
    return out


def distribution_report(labels: Iterable[FramingLabel]) -> dict[str, dict[str, float]]:
    return distribution(build_table(labels).table)
