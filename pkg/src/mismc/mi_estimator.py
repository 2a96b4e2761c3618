"""Multi-index combination, sample allocation and empirical rate fitting."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .multi_index import MultiIndex, as_index


@dataclass(frozen=True)
class EstimateRecord:
    alpha: MultiIndex
    value: float
    n_alpha: int
    cost: float
    seed: int = 0
    replicate: int = 0
    n: int = 0

    def __post_init__(self):
        if self.n_alpha < 1:
            raise ValueError("n_alpha must be >= 1")
        if not self.cost > 0:
            raise ValueError("cost must be positive")


RECORD_HEADER = "alpha_x,alpha_t,n_alpha,value,cost_units,seed,replicate,n"


def write_records(records: Iterable[EstimateRecord], path: str | Path) -> None:
    lines = [RECORD_HEADER]
    for r in records:
        lines.append(f"{r.alpha[0]},{r.alpha[1]},{r.n_alpha},{r.value!r},{r.cost!r},{r.seed},{r.replicate},{r.n}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(path: str | Path) -> list[EstimateRecord]:
    out = []
    for ln in Path(path).read_text().splitlines()[1:]:
        if not ln.strip():
            continue
        ax, at, na, v, c, s, rep, n = ln.split(",")
        out.append(EstimateRecord((int(ax), int(at)), float(v), int(na), float(c), int(s), int(rep), int(n)))
    return out


def group_by_alpha(records: Iterable[EstimateRecord]) -> dict[MultiIndex, list[EstimateRecord]]:
    groups: dict[MultiIndex, list[EstimateRecord]] = defaultdict(list)
    for r in records:
        groups[tuple(r.alpha)].append(r)
    return dict(groups)


def combine(values: Mapping[MultiIndex, float] | Iterable[EstimateRecord], index_set: Sequence[MultiIndex] | None = None) -> float:
    """Sum of per-index DOD estimates over ``index_set``.

    ``values`` is either a map from index to value or a collection of
    records, in which case replicates at the same index are averaged.
    """
    if not isinstance(values, Mapping):
        values = {a: float(np.mean([r.value for r in rs])) for a, rs in group_by_alpha(values).items()}
    keys = list(values) if index_set is None else [as_index(a) for a in index_set]
    missing = [a for a in keys if a not in values]
    if missing:
        raise KeyError(f"no estimate for indices {missing}")
    return float(sum(values[a] for a in keys))


def allocate_n(
    epsilon: float,
    index_set: Sequence[MultiIndex],
    c: float = 1.0,
    n_min: int = 50,
) -> dict[MultiIndex, int]:
    """N_alpha = max(n_min, ceil(c eps^-2 m_x 2^(-alpha_x - 1.5 alpha_t))), m_x the largest alpha_x in the set."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    alphas = [as_index(a) for a in index_set]
    m_x = max(a[0] for a in alphas)
    # m_x = 0 would allocate nothing; treat the single-column set as m_x = 1
    scale = c * epsilon**-2 * max(m_x, 1)
    return {a: max(n_min, math.ceil(scale * 2.0 ** (-a[0] - 1.5 * a[1]))) for a in alphas}


@dataclass(frozen=True)
class RateFit:
    beta: tuple[float, ...]
    w: tuple[float, ...]
    gamma: tuple[float, ...]
    beta_se: tuple[float, ...]
    w_se: tuple[float, ...]
    gamma_se: tuple[float, ...]


def _slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and its standard error (nan with two points)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(x) - 2
    if dof <= 0:
        return float(coef[0]), float("nan")
    resid = y - A @ coef
    s2 = resid @ resid / dof
    return float(coef[0]), float(math.sqrt(s2 / np.sum((x - x.mean()) ** 2)))


def fit_rates(
    records: Iterable[EstimateRecord],
    truths: Mapping[MultiIndex, float] | None = None,
    min_level: int = 1,
    hold: str = "max",
) -> RateFit:
    """Decay and cost exponents along each axis of a tensor grid of records.

    Along axis i the other coordinates are held at their maxima (``hold="max"``,
    mixed differences) or minima (``hold="min"``, pure differences along i), and
    only levels >= ``min_level`` enter the regression, since at level 0 the
    estimator is not a difference along that axis.  The bias exponent uses
    ``truths`` (exact DOD values per index) when given, else replicate means.
    Exponents are reported as positive decay rates (growth for gamma).
    """
    groups = group_by_alpha(records)
    if not groups:
        raise ValueError("no records")
    d = len(next(iter(groups)))
    if hold not in ("max", "min"):
        raise ValueError("hold must be 'max' or 'min'")
    pick = max if hold == "max" else min
    anchor = tuple(pick(a[i] for a in groups) for i in range(d))
    stats = {}
    for a, rs in groups.items():
        vals = np.array([r.value for r in rs])
        n_alpha = np.mean([r.n_alpha for r in rs])
        var = vals.var(ddof=1) if len(vals) > 1 else float("nan")
        mean = truths[a] if truths is not None and a in truths else vals.mean()
        stats[a] = (n_alpha * var, abs(mean), np.mean([r.cost / r.n_alpha for r in rs]))

    beta, w, gamma, beta_se, w_se, gamma_se = [], [], [], [], [], []
    for i in range(d):
        line = sorted(
            (a for a in stats if a[i] >= min_level and all(a[j] == anchor[j] for j in range(d) if j != i)),
            key=lambda a: a[i],
        )
        if len(line) < 2:
            raise ValueError(f"need at least two levels >= {min_level} along axis {i}")
        lv = np.array([a[i] for a in line], dtype=float)
        nv, mb, cs = (np.array([stats[a][m] for a in line]) for m in range(3))
        b, bse = _slope(lv, np.log2(nv))
        g, gse = _slope(lv, np.log2(cs))
        with np.errstate(divide="ignore"):
            wv, wse = _slope(lv, np.log2(mb)) if np.all(mb > 0) else (float("nan"), float("nan"))
        beta.append(-b)
        beta_se.append(bse)
        w.append(-wv)
        w_se.append(wse)
        gamma.append(g)
        gamma_se.append(gse)
    return RateFit(tuple(beta), tuple(w), tuple(gamma), tuple(beta_se), tuple(w_se), tuple(gamma_se))
