"""Frame-level ROC-AUC (micro and macro) and the two-Gaussian local-mode exhibit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.stats import rankdata


class UndefinedAUC(ValueError):
    """Raised when the labels contain a single class."""


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with mid-ranks for ties: P(pos > neg) + P(tie) / 2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores for {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise UndefinedAUC("AUC is undefined when only one class is present")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y == 1].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


@dataclass
class LabeledScores:
    scores: dict[str, np.ndarray]
    labels: dict[str, np.ndarray]

    def __post_init__(self):
        if set(self.scores) != set(self.labels):
            raise ValueError("scores and labels cover different videos")
        for vid in self.scores:
            if len(self.scores[vid]) != len(self.labels[vid]):
                raise ValueError(f"{vid}: {len(self.scores[vid])} scores for {len(self.labels[vid])} labels")

    @classmethod
    def join(cls, scores: dict, labels: dict) -> "LabeledScores":
        """Keep the videos and frames present in both maps (scores may omit a dropped tail)."""
        s, l = {}, {}
        for vid in sorted(set(scores) & set(labels)):
            k = min(len(scores[vid]), len(labels[vid]))
            s[vid], l[vid] = np.asarray(scores[vid][:k]), np.asarray(labels[vid][:k])
        if not s:
            raise ValueError("no video appears in both scores and labels")
        return cls(s, l)


def micro_auc(data: LabeledScores) -> float:
    vids = sorted(data.scores)
    return roc_auc(np.concatenate([data.scores[v] for v in vids]),
                   np.concatenate([data.labels[v] for v in vids]))


def macro_auc(data: LabeledScores) -> tuple[float, list[str]]:
    """Mean per-video AUC and the ids of videos excluded for lacking a class."""
    aucs, excluded = [], []
    for vid in sorted(data.scores):
        y = np.asarray(data.labels[vid])
        if y.min() == y.max():
            excluded.append(vid)
            continue
        aucs.append(roc_auc(data.scores[vid], y))
    if not aucs:
        raise UndefinedAUC("no video contains both normal and anomalous frames")
    return float(np.mean(aucs)), excluded


# ---------------------------------------------------------------- local modes

@dataclass
class GaussianMixture2D:
    weights: np.ndarray     # (K,)
    means: np.ndarray       # (K, 2)
    variances: np.ndarray   # (K,) isotropic

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 2)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if not (len(self.weights) == len(self.means) == len(self.variances)):
            raise ValueError("weights, means and variances differ in length")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")

    @classmethod
    def parse(cls, spec: str) -> "GaussianMixture2D":
        """``"w,mx,my,var;w,mx,my,var"``."""
        rows = [[float(v) for v in part.split(",")] for part in spec.split(";") if part.strip()]
        if not rows or any(len(r) != 4 for r in rows):
            raise ValueError(f"mixture spec {spec!r}: expected 'w,mx,my,var' per component")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1:3], arr[:, 3])


def mixture_score_field(m: GaussianMixture2D, points) -> dict[str, np.ndarray]:
    """Closed-form density, score ``grad log p`` and score norm at ``points`` (P, 2)."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    diff = x[:, None, :] - m.means[None]                                   # (P, K, 2)
    log_comp = (np.log(m.weights) - np.log(2 * np.pi * m.variances)
                - (diff ** 2).sum(-1) / (2 * m.variances))                 # (P, K)
    top = log_comp.max(axis=1, keepdims=True)
    r = np.exp(log_comp - top)
    density = r.sum(axis=1) * np.exp(top[:, 0])
    resp = r / r.sum(axis=1, keepdims=True)
    score = -(resp[..., None] * diff / m.variances[None, :, None]).sum(axis=1)
    return {"density": density, "score": score, "norm": np.linalg.norm(score, axis=1)}


def log_density(m: GaussianMixture2D, points) -> np.ndarray:
    return np.log(mixture_score_field(m, points)["density"])


def minor_mode(m: GaussianMixture2D, k: int = 1, axis_point: int = 0) -> np.ndarray:
    """Stationary point of ``log p`` near component ``k`` on the line from component ``axis_point``.

    For a two-component mixture the stationary points lie on the line
    through both means, so a 1-D root search of the projected gradient
    suffices.
    """
    a, b = m.means[axis_point], m.means[k]
    u = (b - a) / np.linalg.norm(b - a)
    sd = np.sqrt(m.variances[k])

    def g(t):
        return float(mixture_score_field(m, b + t * u)["score"][0] @ u)

    # a maximum is where the projected gradient crosses from + to -; the
    # saddle between the components crosses the other way
    ts = np.linspace(-2.0 * sd, 2.0 * sd, 401)
    gs = np.array([g(t) for t in ts])
    cross = np.flatnonzero((gs[:-1] > 0) & (gs[1:] <= 0))
    if len(cross) == 0:
        raise ValueError("no local maximum of the density near the minor component")
    j = cross[np.argmin(np.abs(ts[cross]))]
    if gs[j + 1] == 0:
        return b + ts[j + 1] * u
    t = brentq(g, ts[j], ts[j + 1], xtol=1e-14, rtol=1e-15, maxiter=200)
    return b + t * u
