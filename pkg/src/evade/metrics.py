"""Human-normalised score aggregates over the bundled Atari 100K score tables.

Bundled CSVs (``evade/data``):

* ``baseline_scores.csv``: game, human, random
* ``mean_scores.csv``: game, simple, simple30, curl, otrainbow, effrainbow, evade
* ``runs_{method}.csv``: game, run1..run5 for simple30, evade (26 games) and
  inter, weight, trans (12-game ablation subset)
"""
import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

METHODS = ("simple", "simple30", "curl", "otrainbow", "effrainbow", "evade")
ABLATION = ("simple30", "inter", "weight", "trans", "evade")


class TableError(ValueError):
    pass


def hns(agent, random, human):
    """(agent - random) / (human - random)."""
    denom = human - random
    if denom == 0:
        raise ZeroDivisionError("human and random scores are equal")
    return (agent - random) / denom


def iqm(scores):
    """Mean of the values left after dropping floor(n/4) from each end."""
    x = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = len(x)
    if n < 4:
        raise ValueError(f"iqm needs at least 4 values, got {n}")
    k = n // 4
    return float(x[k:n - k].mean())


def paired_t_test(a, b):
    """Paired t statistic of a - b and its upper-tail p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("differences have zero variance")
    t = d.mean() / (sd / math.sqrt(n))
    return float(t), float(stats.t.sf(t, df=n - 1))


# score tables -------------------------------------------------------------

@dataclass
class ScoreTable:
    games: list
    human: dict
    random: dict
    means: dict   # method -> {game: score}
    runs: dict    # method -> {game: [scores]}

    def hns_means(self, method, games=None):
        games = self.games if games is None else games
        return np.array([hns(self.means[method][g], self.random[g], self.human[g]) for g in games])

    def hns_runs(self, method, games=None):
        """[n_games, n_runs] HNS of every individual run."""
        table = self.runs[method]
        games = list(table) if games is None else games
        return np.array([[hns(s, self.random[g], self.human[g]) for s in table[g]] for g in games])

    def run_means(self, method, games):
        return np.array([np.mean(self.runs[method][g]) for g in games])


def _read_csv(path):
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except FileNotFoundError:
        raise TableError(f"missing table {path}") from None
    if not rows:
        raise TableError(f"empty table {path}")
    return rows


def _num(value, path, game):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise TableError(f"{path}: bad number {value!r} for {game}") from None


def default_tables_dir():
    return Path(str(resources.files("evade") / "data"))


def load_tables(tables_dir=None):
    d = Path(tables_dir) if tables_dir is not None else default_tables_dir()
    human, random = {}, {}
    for row in _read_csv(d / "baseline_scores.csv"):
        g = row["game"]
        human[g] = _num(row.get("human"), "baseline_scores.csv", g)
        random[g] = _num(row.get("random"), "baseline_scores.csv", g)
        if human[g] == random[g]:
            raise TableError(f"human == random for {g}")
    games = list(human)
    means = {m: {} for m in METHODS}
    for row in _read_csv(d / "mean_scores.csv"):
        g = row["game"]
        if g not in human:
            raise TableError(f"mean_scores.csv: unknown game {g}")
        for m in METHODS:
            means[m][g] = _num(row.get(m), "mean_scores.csv", g)
    runs = {}
    for m in ABLATION:
        table = {}
        for row in _read_csv(d / f"runs_{m}.csv"):
            g = row["game"]
            if g not in human:
                raise TableError(f"runs_{m}.csv: unknown game {g}")
            table[g] = [_num(row.get(f"run{i}"), f"runs_{m}.csv", g) for i in range(1, 6)]
        runs[m] = table
    return ScoreTable(games, human, random, means, runs)


# reproduction -------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: object
    target: object
    tol: float = 0.0
    kind: str = "abs"   # "abs": |value - target| <= tol, "eq": exact, "le": value <= target

    @property
    def passed(self):
        if self.kind == "eq":
            return self.value == self.target
        if self.kind == "le":
            return self.value <= self.target
        return abs(self.value - self.target) <= self.tol + 1e-12

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        if self.kind == "eq":
            return f"{status}  {self.name:<40} {self.value}  (published {self.target})"
        if self.kind == "le":
            return f"{status}  {self.name:<40} {self.value:.3g}  (<= {self.target:g})"
        return f"{status}  {self.name:<40} {self.value:.4f}  (published {self.target} +/- {self.tol})"


HEADLINE_TARGETS = {
    "mean": {"simple": 0.443, "simple30": 0.525, "curl": 0.381, "otrainbow": 0.264,
             "effrainbow": 0.285, "evade": 0.682},
    "median": {"simple": 0.144, "simple30": 0.151, "curl": 0.175, "otrainbow": 0.204,
               "effrainbow": 0.161, "evade": 0.267},
    "wl": {"simple": (7, 19), "simple30": (3, 23), "curl": (9, 17), "otrainbow": (6, 20),
           "effrainbow": (9, 17)},
    "best": {"simple": 5, "simple30": 2, "curl": 4, "otrainbow": 1, "effrainbow": 3, "evade": 11},
}
IQM_TARGETS = {"simple30": 0.202, "evade": 0.339}
ABLATION_TARGETS = {
    "hns": {"simple30": 0.52, "inter": 0.56, "weight": 0.65, "trans": 0.69, "evade": 0.77},
    "iqm": {"simple30": 0.22, "inter": 0.29, "weight": 0.26, "trans": 0.29, "evade": 0.4},
    "wl": {"inter": (8, 4), "weight": (9, 3), "trans": (11, 1), "evade": (11, 1)},
}
P_VALUE_BOUND = 5e-3


def win_loss(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return int((a > b).sum()), int((a < b).sum())


def reproduce_paper_metrics(tables_dir=None):
    """Recompute every published aggregate; returns (checks, extra values)."""
    t = load_tables(tables_dir)
    checks = []
    extra = {}
    for m in METHODS:
        h = t.hns_means(m)
        checks.append(Check(f"mean HNS {m}", float(h.mean()), HEADLINE_TARGETS["mean"][m], 0.005))
        checks.append(Check(f"median HNS {m}", float(np.median(h)), HEADLINE_TARGETS["median"][m], 0.005))
    evade_scores = [t.means["evade"][g] for g in t.games]
    for m, wl in HEADLINE_TARGETS["wl"].items():
        ours = win_loss([t.means[m][g] for g in t.games], evade_scores)
        checks.append(Check(f"{m} vs evade W/L", ours, wl, kind="eq"))
    score_matrix = np.array([[t.means[m][g] for m in METHODS] for g in t.games])
    best = score_matrix.argmax(axis=1)
    for i, m in enumerate(METHODS):
        checks.append(Check(f"best-performing games {m}", int((best == i).sum()), HEADLINE_TARGETS["best"][m], kind="eq"))
    for m, target in IQM_TARGETS.items():
        checks.append(Check(f"IQM {m} (26 games x 5 runs)", iqm(t.hns_runs(m, t.games)), target, 0.01))
        extra[f"median over runs {m}"] = float(np.median(t.hns_runs(m, t.games)))

    ablation_games = list(t.runs["inter"])
    base = t.run_means("simple30", ablation_games)
    for m in ABLATION:
        checks.append(Check(f"ablation HNS {m}", float(t.hns_runs(m, ablation_games).mean(axis=1).mean()),
                            ABLATION_TARGETS["hns"][m], 0.01))
        checks.append(Check(f"ablation IQM {m}", iqm(t.hns_runs(m, ablation_games)), ABLATION_TARGETS["iqm"][m], 0.01))
        if m in ABLATION_TARGETS["wl"]:
            checks.append(Check(f"ablation {m} vs simple30 W/L",
                                win_loss(t.run_means(m, ablation_games), base), ABLATION_TARGETS["wl"][m], kind="eq"))

    tstat, p = paired_t_test(t.hns_means("evade"), t.hns_means("simple30"))
    extra["paired t statistic"] = tstat
    checks.append(Check("paired t one-tailed p (evade > simple30)", p, P_VALUE_BOUND, kind="le"))
    return checks, extra


def format_report(checks, extra):
    lines = [c.line() for c in checks]
    lines.append("")
    for k, v in extra.items():
        lines.append(f"      {k:<40} {v:.4f}")
    n_fail = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - n_fail}/{len(checks)} checks passed")
    return "\n".join(lines)
