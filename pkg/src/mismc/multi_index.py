"""Multi-index algebra: index sets and the signed expansion of the mixed difference."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

MultiIndex = tuple[int, ...]


def as_index(levels: Iterable[int]) -> MultiIndex:
    alpha = tuple(int(a) for a in levels)
    if len(alpha) < 1:
        raise ValueError("dimension must be >= 1")
    if any(a < 0 for a in alpha):
        raise ValueError(f"multi-index entries must be non-negative, got {alpha}")
    return alpha


def tensor_index_set(m: Sequence[int]) -> list[MultiIndex]:
    """All alpha with 0 <= alpha_i <= m_i, in lexicographic order."""
    bounds = as_index(m)
    return [tuple(a) for a in itertools.product(*(range(b + 1) for b in bounds))]


def total_degree_index_set(zeta: Sequence[float], M: float) -> list[MultiIndex]:
    """All alpha with sum_i alpha_i * zeta_i <= M, in lexicographic order."""
    if len(zeta) < 1:
        raise ValueError("dimension must be >= 1")
    if any(z <= 0 for z in zeta):
        raise ValueError(f"weights must be positive, got {tuple(zeta)}")
    if M < 0:
        raise ValueError("budget must be non-negative")
    # small slack so that exact budgets survive float roundoff
    tol = 1e-12 * max(1.0, M)
    bounds = [int(M // z) for z in zeta]
    return [
        a
        for a in tensor_index_set(bounds)
        if sum(ai * zi for ai, zi in zip(a, zeta)) <= M + tol
    ]


def is_downward_closed(index_set: Iterable[MultiIndex]) -> bool:
    members = set(index_set)
    for alpha in members:
        for i, a in enumerate(alpha):
            if a > 0 and alpha[:i] + (a - 1,) + alpha[i + 1 :] not in members:
                return False
    return True


@dataclass(frozen=True)
class DodExpansion:
    """Signed pairing of the k_alpha levels entering the mixed difference at alpha.

    ``terms`` are labelled so that ``terms[2i+1] - terms[2i]`` is a unit vector
    (0-based), ``terms[-1] == alpha``, and the i-th pair enters with sign
    ``pair_signs[i]``.
    """

    alpha: MultiIndex
    terms: tuple[MultiIndex, ...]
    pair_signs: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.terms)

    @property
    def n_pairs(self) -> int:
        return len(self.pair_signs)

    @property
    def pairs(self) -> list[tuple[int, int, int]]:
        """(sign, upper term position, lower term position) per pair, 0-based."""
        return [(s, 2 * i + 1, 2 * i) for i, s in enumerate(self.pair_signs)]

    def coefficients(self) -> dict[MultiIndex, int]:
        """The +-1 coefficient each term carries in the expansion."""
        if self.k == 1:
            return {self.alpha: 1}
        coef: dict[MultiIndex, int] = {}
        for sign, hi, lo in self.pairs:
            coef[self.terms[hi]] = sign
            coef[self.terms[lo]] = -sign
        return coef

    def decrements(self, position: int) -> MultiIndex:
        """alpha minus the term at ``position``; each entry is 0 or 1."""
        return tuple(a - b for a, b in zip(self.alpha, self.terms[position]))


def dod_expand(alpha: Sequence[int]) -> DodExpansion:
    """Expand the mixed difference at ``alpha`` into signed pairs of levels.

    Pairs differ along the first axis with a positive level.  Pairs are ordered
    by the coordinate sum of their lower member, ties broken lexicographically,
    which keeps coordinate sums non-decreasing along the labelling for d <= 2.
    """
    alpha = as_index(alpha)
    positive = [i for i, a in enumerate(alpha) if a > 0]
    if not positive:
        return DodExpansion(alpha, (alpha,), ())
    pair_axis, others = positive[0], positive[1:]

    lowers = []
    for subset in itertools.product((0, 1), repeat=len(others)):
        low = list(alpha)
        low[pair_axis] -= 1
        for axis, dec in zip(others, subset):
            low[axis] -= dec
        lowers.append(tuple(low))
    lowers.sort(key=lambda t: (sum(t), t))

    terms: list[MultiIndex] = []
    signs: list[int] = []
    for low in lowers:
        high = low[:pair_axis] + (low[pair_axis] + 1,) + low[pair_axis + 1 :]
        terms.extend((low, high))
        signs.append(-1 if (sum(alpha) - sum(high)) % 2 else 1)
    return DodExpansion(alpha, tuple(terms), tuple(signs))


def apply_dod(expansion: DodExpansion, values: Mapping[MultiIndex, float]) -> float:
    """Evaluate the mixed difference of a tabulated function of the level."""
    if expansion.k == 1:
        return float(values[expansion.alpha])
    total = 0.0
    for sign, hi, lo in expansion.pairs:
        total += sign * (values[expansion.terms[hi]] - values[expansion.terms[lo]])
    return float(total)


def write_index_set(index_set: Iterable[MultiIndex], path: str | Path) -> None:
    lines = [",".join(str(a) for a in alpha) for alpha in index_set]
    Path(path).write_text("\n".join(lines) + "\n")


def read_index_set(path: str | Path) -> list[MultiIndex]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            out.append(as_index(int(v) for v in line.split(",")))
    return out
