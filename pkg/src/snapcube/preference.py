"""Bradley-Terry analysis of forced-choice pairwise preference votes.

Fits positive preference scales pi (summing to one) under
P(i beats j) = pi_i / (pi_i + pi_j) by the classic minorization-maximization
iteration, and tests pairwise equality of scales with likelihood-ratio tests
against a chi-squared(1) reference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.stats import chi2

from .errors import DivergenceError, EstimationError, IterationLimitError, ShapeError


@dataclass(frozen=True)
class PairwiseVoteTable:
    """Win counts between named methods; wins[i, j] = votes preferring i over j."""

    methods: tuple[str, ...]
    wins: npt.NDArray[np.int64]

    def __post_init__(self):
        methods = tuple(self.methods)
        wins = np.asarray(self.wins, dtype=np.int64)
        m = len(methods)
        if m < 2:
            raise ShapeError("need at least two methods")
        if len(set(methods)) != m:
            raise ShapeError("method names must be unique")
        if wins.shape != (m, m):
            raise ShapeError(f"wins must be {m}x{m}, got {wins.shape}")
        if np.any(wins < 0):
            raise ShapeError("win counts must be non-negative")
        if np.any(np.diag(wins) != 0):
            raise ShapeError("diagonal of the win matrix must be zero")
        wins.setflags(write=False)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "wins", wins)

    @property
    def comparisons(self) -> npt.NDArray[np.int64]:
        """n[i, j] = total votes cast between i and j (symmetric)."""
        return self.wins + self.wins.T

    def index(self, method: str) -> int:
        try:
            return self.methods.index(method)
        except ValueError:
            raise KeyError(f"unknown method {method!r}") from None

    def is_connected(self) -> bool:
        """True when every pair of methods is linked by observed comparisons."""
        n = self.comparisons > 0
        m = len(self.methods)
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in range(m):
                if n[i, j] and j not in seen:
                    seen.add(j)
                    frontier.append(j)
        return len(seen) == m

    @classmethod
    def from_csv(cls, path) -> "PairwiseVoteTable":
        """Read rows of (method_a, method_b, wins_a, wins_b), accumulating counts."""
        methods: list[str] = []
        counts: dict[tuple[str, str], int] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"method_a", "method_b", "wins_a", "wins_b"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise ShapeError(
                    f"vote CSV must have columns {sorted(required)}, "
                    f"got {reader.fieldnames}")
            for row in reader:
                a, b = row["method_a"].strip(), row["method_b"].strip()
                if a == b:
                    raise ShapeError(f"self-comparison for method {a!r}")
                for name in (a, b):
                    if name not in methods:
                        methods.append(name)
                counts[(a, b)] = counts.get((a, b), 0) + int(row["wins_a"])
                counts[(b, a)] = counts.get((b, a), 0) + int(row["wins_b"])
        wins = np.zeros((len(methods), len(methods)), dtype=np.int64)
        for (a, b), count in counts.items():
            wins[methods.index(a), methods.index(b)] = count
        return cls(tuple(methods), wins)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method_a", "method_b", "wins_a", "wins_b"])
            m = len(self.methods)
            for i in range(m):
                for j in range(i + 1, m):
                    if self.comparisons[i, j]:
                        writer.writerow([self.methods[i], self.methods[j],
                                         int(self.wins[i, j]), int(self.wins[j, i])])


def log_likelihood(table: PairwiseVoteTable, pi: npt.NDArray[np.floating]) -> float:
    """Bradley-Terry log-likelihood of the vote table under scales pi."""
    pi = np.asarray(pi, dtype=np.float64)
    wins = table.wins
    i, j = np.nonzero(wins)
    probs = pi[i] / (pi[i] + pi[j])
    return float(np.sum(wins[i, j] * np.log(probs)))


def _check_table(table: PairwiseVoteTable) -> None:
    total_wins = table.wins.sum(axis=1)
    total_losses = table.wins.sum(axis=0)
    games = table.comparisons.sum(axis=1)
    for idx, method in enumerate(table.methods):
        if games[idx] == 0:
            raise EstimationError(
                f"method {method!r} has no comparisons at all")
        if total_losses[idx] == 0:
            raise DivergenceError(
                f"method {method!r} wins every comparison; its maximum-"
                f"likelihood scale is infinite")
        if total_wins[idx] == 0:
            raise DivergenceError(
                f"method {method!r} loses every comparison; its maximum-"
                f"likelihood scale is zero")
    if not table.is_connected():
        raise EstimationError(
            "comparison graph is disconnected; relative scales between the "
            "components are not identifiable")


def fit_bradley_terry(table: PairwiseVoteTable, tol: float = 1e-10,
                      max_iter: int = 10000) -> npt.NDArray[np.float64]:
    """Maximum-likelihood preference scales, normalized to sum to one.

    Minorization-maximization update: pi_i <- W_i / sum_j n_ij / (pi_i + pi_j),
    iterated until the largest relative change drops below ``tol``.
    """
    _check_table(table)
    pi = _mm_iterate(table.wins.astype(np.float64), tol, max_iter)
    if pi is None:
        raise IterationLimitError(
            f"Bradley-Terry fit did not converge within {max_iter} iterations")
    return pi


def _mm_iterate(wins: npt.NDArray[np.float64], tol: float,
                max_iter: int) -> npt.NDArray[np.float64] | None:
    n = wins + wins.T
    total_wins = wins.sum(axis=1)
    m = wins.shape[0]
    pi = np.full(m, 1.0 / m)
    for _ in range(max_iter):
        # diagonal of n is zero, so the i == j terms vanish from the sum
        denom = (n / (pi[:, None] + pi[None, :])).sum(axis=1)
        new_pi = total_wins / denom
        new_pi /= new_pi.sum()
        change = np.max(np.abs(new_pi - pi) / np.maximum(pi, 1e-300))
        pi = new_pi
        if change < tol:
            return pi
    return None


def preference_ratio(pi: npt.NDArray[np.floating], i: int, j: int) -> float:
    """How much more likely method i is to be preferred than method j."""
    pi = np.asarray(pi, dtype=np.float64)
    return float(pi[i] / pi[j])


def _sup_log_likelihood(wins: npt.NDArray[np.float64], tol: float,
                        max_iter: int) -> float:
    """Supremum of the log-likelihood, valid even at boundary MLEs.

    A method that wins (or loses) every comparison pushes its scale to the
    boundary; in the limit its games contribute log(1) = 0 and the remaining
    methods decouple, so such methods are peeled off before fitting. Distinct
    connected components factorize and are fitted independently.
    """
    wins = np.asarray(wins, dtype=np.float64)
    while True:
        games = (wins + wins.T).sum(axis=1)
        losses = wins.sum(axis=0)
        victories = wins.sum(axis=1)
        active = games > 0
        boundary = active & ((losses == 0) | (victories == 0))
        if not boundary.any():
            break
        keep = ~boundary
        wins = wins[np.ix_(keep, keep)]
    m = wins.shape[0]
    if m < 2:
        return 0.0
    # fit each connected component separately (the likelihood factorizes)
    n = wins + wins.T
    unassigned = set(range(m))
    total = 0.0
    while unassigned:
        seed = next(iter(unassigned))
        comp = {seed}
        frontier = [seed]
        while frontier:
            a = frontier.pop()
            for b in range(m):
                if n[a, b] > 0 and b not in comp:
                    comp.add(b)
                    frontier.append(b)
        unassigned -= comp
        idx = sorted(comp)
        sub = wins[np.ix_(idx, idx)]
        if len(idx) >= 2 and sub.sum() > 0:
            pi = _mm_iterate(sub, tol, max_iter)
            if pi is None:
                raise IterationLimitError(
                    f"constrained Bradley-Terry fit did not converge within "
                    f"{max_iter} iterations")
            i, j = np.nonzero(sub)
            total += float(np.sum(sub[i, j] * np.log(pi[i] / (pi[i] + pi[j]))))
    return total


def _fit_constrained(table: PairwiseVoteTable, i: int, j: int,
                     tol: float, max_iter: int) -> float:
    """Max log-likelihood under pi_i == pi_j (merged-item fit)."""
    m = len(table.methods)
    keep = [idx for idx in range(m) if idx != j]
    wins = np.zeros((m - 1, m - 1), dtype=np.float64)
    for a_new, a in enumerate(keep):
        for b_new, b in enumerate(keep):
            if a_new == b_new:
                continue
            wins[a_new, b_new] = table.wins[a, b]
            if a == i:
                wins[a_new, b_new] += table.wins[j, b]
            if b == i:
                wins[a_new, b_new] += table.wins[a, j]
    head_to_head = int(table.wins[i, j] + table.wins[j, i])
    ll = _sup_log_likelihood(wins, tol, max_iter) if m - 1 >= 2 else 0.0
    # i-vs-j games are coin flips under the equality constraint
    return ll + head_to_head * np.log(0.5)


def significance_test(table: PairwiseVoteTable,
                      pi: npt.NDArray[np.floating] | None = None,
                      tol: float = 1e-10,
                      max_iter: int = 10000) -> npt.NDArray[np.float64]:
    """Pairwise p-values for H0: pi_i == pi_j, by likelihood-ratio tests.

    Returns a symmetric matrix with ones on the diagonal; entry (i, j) is the
    chi-squared(1) tail probability of the deviance between the fitted model
    and the model constrained to equal scales for i and j.
    """
    if pi is None:
        pi = fit_bradley_terry(table, tol, max_iter)
    ll_full = log_likelihood(table, np.asarray(pi))
    m = len(table.methods)
    pvals = np.ones((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            ll_eq = _fit_constrained(table, i, j, tol, max_iter)
            stat = max(0.0, 2.0 * (ll_full - ll_eq))
            p = float(chi2.sf(stat, df=1))
            pvals[i, j] = pvals[j, i] = p
    return pvals


def write_preference_report(table: PairwiseVoteTable,
                            pi: npt.NDArray[np.floating],
                            pvals: npt.NDArray[np.floating],
                            path, test_name: str = "likelihood-ratio chi2(1)") -> None:
    """CSV report: one scale row per method, then the pairwise p-value matrix."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# significance test", test_name])
        writer.writerow(["method", "pi"])
        for name, value in zip(table.methods, pi):
            writer.writerow([name, f"{value:.6f}"])
        writer.writerow(["p_value", *table.methods])
        for i, name in enumerate(table.methods):
            writer.writerow([name, *(f"{pvals[i, j]:.3e}"
                                     for j in range(len(table.methods)))])
