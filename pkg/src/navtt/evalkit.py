"""Evaluation metrics: identity accuracy, pairwise accuracy against judge
majorities, tie-corrected Spearman rank correlation, and Mann-Whitney U.

Two-sided p-values double the smaller one-sided tail, capped at 1.0. Trials
whose judge majority is a tie are excluded from pairwise accuracy.
"""

from dataclasses import dataclass, field
from itertools import combinations
from math import comb, erfc, sqrt
from typing import List, Optional

import numpy as np


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ranking


def rank_average(values) -> np.ndarray:
    """Average ranks (1-based); tied values share the mean of their ranks."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rank(x, y) -> Optional[float]:
    """Tie-corrected Spearman rho: Pearson correlation of average ranks.

    Returns None when either input has zero rank variance (undefined).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"mismatched inputs {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise MetricError("need at least 2 observations")
    rx = rank_average(x)
    ry = rank_average(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        return None
    return float((dx * dy).sum() / (sx * sy))


# ---------------------------------------------------------------------------
# Mann-Whitney U


def _u_statistic(sample1, sample2) -> float:
    """U for sample1 via rank sums with average ranks for ties."""
    x = np.asarray(sample1, dtype=np.float64)
    y = np.asarray(sample2, dtype=np.float64)
    n1, n2 = len(x), len(y)
    ranks = rank_average(np.concatenate([x, y]))
    r1 = float(ranks[:n1].sum())
    return r1 - n1 * (n1 + 1) / 2.0


def _exact_p(x, y, u_obs) -> float:
    """Two-sided p by exact enumeration: doubled smaller tail, capped at 1."""
    pooled = np.concatenate([x, y])
    n = len(pooled)
    n1 = len(x)
    ranks = rank_average(pooled)
    total = comb(n, n1)
    base = n1 * (n1 + 1) / 2.0
    low = high = 0
    for idx in combinations(range(n), n1):
        u = ranks[list(idx)].sum() - base
        low += u <= u_obs + 1e-12
        high += u >= u_obs - 1e-12
    return min(1.0, 2.0 * min(low, high) / total)


def mann_whitney_u(sample1, sample2, exact_threshold: int = 16):
    """(U1, two-sided p). Exact enumeration when n1+n2 <= exact_threshold,
    otherwise normal approximation with tie and continuity corrections."""
    x = np.asarray(sample1, dtype=np.float64)
    y = np.asarray(sample2, dtype=np.float64)
    if len(x) == 0 or len(y) == 0:
        raise MetricError("both samples must be non-empty")
    n1, n2 = len(x), len(y)
    u1 = _u_statistic(x, y)
    if n1 + n2 <= exact_threshold:
        return u1, _exact_p(x, y, u1)
    mu = n1 * n2 / 2.0
    n = n1 + n2
    pooled = np.concatenate([x, y])
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(((counts ** 3 - counts)).sum()) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0.0:
        return u1, 1.0  # all values tied: no evidence either way
    z = (abs(u1 - mu) - 0.5) / sqrt(var)  # continuity-corrected
    z = max(z, 0.0)
    p = erfc(z / sqrt(2.0))  # two-sided: both tails of the normal
    return u1, min(1.0, p)


# ---------------------------------------------------------------------------
# judgment aggregation


@dataclass
class TrialTruth:
    trial_id: str
    video_a: str
    video_b: str
    source_a: str
    source_b: str
    judge_count: int
    proportion_a: float
    majority: str              # "A" | "B" | "tie"
    mean_uncertainty: Optional[float]
    condition: str = ""        # e.g. "human-agent" | "hybrid-symbolic"


@dataclass
class GroundTruth:
    trials: List[TrialTruth] = field(default_factory=list)

    def by_id(self):
        return {t.trial_id: t for t in self.trials}


def aggregate_judgments(trials, judgments) -> GroundTruth:
    """Collapse individual judgments into per-trial ground truth.

    trials: iterable of dicts with trial_id, video_a, video_b, source_a,
    source_b, and optionally condition. judgments: iterable of dicts with
    trial_id, choice ("A" | "B"), uncertainty (1-5 Likert or None).
    """
    index = {}
    for t in trials:
        index[t["trial_id"]] = t
    votes = {tid: [] for tid in index}
    uncertainties = {tid: [] for tid in index}
    for j in judgments:
        tid = j["trial_id"]
        if tid not in index:
            raise MetricError(f"judgment references unknown trial {tid!r}")
        choice = j["choice"]
        if choice not in ("A", "B"):
            raise MetricError(f"invalid choice {choice!r}")
        votes[tid].append(choice)
        if j.get("uncertainty") is not None:
            uncertainties[tid].append(float(j["uncertainty"]))
    out = GroundTruth()
    for tid, t in index.items():
        vs = votes[tid]
        n = len(vs)
        prop_a = (vs.count("A") / n) if n else 0.0
        if n == 0 or prop_a == 0.5:
            majority = "tie"
        else:
            majority = "A" if prop_a > 0.5 else "B"
        unc = uncertainties[tid]
        out.trials.append(TrialTruth(
            trial_id=tid, video_a=t["video_a"], video_b=t["video_b"],
            source_a=t["source_a"], source_b=t["source_b"],
            judge_count=n, proportion_a=prop_a, majority=majority,
            mean_uncertainty=(sum(unc) / len(unc)) if unc else None,
            condition=t.get("condition", ""),
        ))
    return out


# ---------------------------------------------------------------------------
# accuracies


def identity_accuracy(verdicts, true_sources) -> float:
    """Fraction of majority labels matching true human/agent identity.

    verdicts: mapping video id -> predicted label (1 human, 0 agent).
    true_sources: mapping video id -> source string ("human" or agent kind).
    """
    if not verdicts:
        raise MetricError("no verdicts")
    correct = 0
    for vid, pred in verdicts.items():
        if vid not in true_sources:
            raise MetricError(f"verdict for unknown video {vid!r}")
        truth = 1 if true_sources[vid] == "human" else 0
        correct += int(int(pred) == truth)
    return correct / len(verdicts)


def pairwise_accuracy(logits, truth: GroundTruth, condition: Optional[str] = None):
    """Agreement between logit ordering and judge-majority choice per trial.

    logits: mapping video id -> mean trajectory logit (higher = more
    human-like). Tie trials are excluded; equal logits score as incorrect.
    Returns (accuracy, n_scored, n_tie_trials).
    """
    scored = 0
    correct = 0
    ties = 0
    for t in truth.trials:
        if condition is not None and t.condition != condition:
            continue
        if t.majority == "tie":
            ties += 1
            continue
        if t.video_a not in logits or t.video_b not in logits:
            raise MetricError(f"missing verdict for trial {t.trial_id!r}")
        la, lb = float(logits[t.video_a]), float(logits[t.video_b])
        model_side = "A" if la > lb else ("B" if lb > la else "equal")
        correct += int(model_side == t.majority)
        scored += 1
    if scored == 0 and ties == 0:
        raise MetricError("no trials matched the condition")
    return (correct / scored if scored else 0.0), scored, ties


def judge_human_proportions(truth: GroundTruth, condition: Optional[str] = None):
    """Per-video proportion of judges that called the video human.

    In each trial the judges pick the side they consider human, so video A
    accrues proportion_a and video B accrues 1 - proportion_a. Videos
    appearing in several trials average their proportions.
    """
    sums, counts = {}, {}
    for t in truth.trials:
        if condition is not None and t.condition != condition:
            continue
        for vid, p in ((t.video_a, t.proportion_a),
                       (t.video_b, 1.0 - t.proportion_a)):
            sums[vid] = sums.get(vid, 0.0) + p
            counts[vid] = counts.get(vid, 0) + 1
    return {vid: sums[vid] / counts[vid] for vid in sums}


def rank_correlation_vs_judges(logits, truth: GroundTruth,
                               condition: Optional[str] = None):
    """Spearman rho between model logits and judge human-proportions,
    pooled over every video of the condition."""
    props = judge_human_proportions(truth, condition)
    vids = sorted(props)
    if len(vids) < 2:
        raise MetricError("need at least 2 videos for rank correlation")
    model = [float(logits[v]) for v in vids]
    judge = [props[v] for v in vids]
    return spearman_rank(model, judge)


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricsReport:
    """Mean (std) over training repeats for the Table 3-shaped summary."""
    rows: List[dict] = field(default_factory=list)

    def add(self, name: str, identity, human_agent_acc, human_agent_rho,
            hybrid_symbolic_acc, hybrid_symbolic_rho):
        def stat(xs):
            xs = [x for x in xs if x is not None]
            if not xs:
                return None, None
            arr = np.asarray(xs, dtype=np.float64)
            return float(arr.mean()), float(arr.std())

        self.rows.append({
            "name": name,
            "identity": stat(identity),
            "human_agent_acc": stat(human_agent_acc),
            "human_agent_rho": stat(human_agent_rho),
            "hybrid_symbolic_acc": stat(hybrid_symbolic_acc),
            "hybrid_symbolic_rho": stat(hybrid_symbolic_rho),
        })

    def render(self) -> str:
        cols = [("identity", "Identity"),
                ("human_agent_acc", "Hum-Agent Acc"),
                ("human_agent_rho", "Hum-Agent Rank"),
                ("hybrid_symbolic_acc", "Hyb-Sym Acc"),
                ("hybrid_symbolic_rho", "Hyb-Sym Rank")]
        lines = ["model".ljust(12) + "".join(h.rjust(16) for _, h in cols)]
        for row in self.rows:
            cells = []
            for key, _ in cols:
                mean, std = row[key]
                cells.append("--".rjust(16) if mean is None
                             else f"{mean:.3f} ({std:.3f})".rjust(16))
            lines.append(row["name"].ljust(12) + "".join(cells))
        return "\n".join(lines)
