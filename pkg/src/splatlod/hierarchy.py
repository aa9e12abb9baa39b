"""Level progression and gradient-informed construction of the disjoint
base/enhancement partition.

Level sizes follow the logarithmic law |G_l| = floor(c_min * b^l) with
b = exp((ln c_max - ln c_min) / (L - 1)). The partition is built top-down:
at each step the lowest-importance active Gaussians are masked out into an
enhancement layer, importance being the per-Gaussian L2 norm of the
rendering-loss gradient accumulated over all training views (or plain
opacity for the cheap ranking variant). When the model is larger than
c_max, the first masking step also discards the overflow for good: those
Gaussians belong to no layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .loss import loss_and_grad
from .model import GaussianModel, subset
from .render import render, render_backward
from .views import View

SCORE_KINDS = ("gradient", "opacity")
ACCUMULATIONS = ("norm-sum", "sum-norm")


@dataclass
class LevelProgression:
    c_min: int
    c_max: int
    levels: int
    cumulative: list[int]  # |G_l| for l = 0..L-1
    k_s: list[int]         # increments; k_s[0] = c_min

    def __post_init__(self):
        if self.cumulative[0] != self.c_min or len(self.cumulative) != self.levels:
            raise ValueError("cumulative counts inconsistent with c_min/levels")
        if any(b < a for a, b in zip(self.cumulative, self.cumulative[1:])):
            raise ValueError("cumulative counts must be non-decreasing")
        if self.k_s[0] != self.c_min or len(self.k_s) != self.levels:
            raise ValueError("k_s inconsistent with c_min/levels")
        if sum(self.k_s) != self.cumulative[-1]:
            raise ValueError("k_s must sum to the top-level count")


def guarded_floor(value: float) -> int:
    """floor() that forgives float dust when the true value is integral."""
    nearest = round(value)
    return nearest if abs(value - nearest) < 1e-6 else math.floor(value)


def compute_progression(c_min: int, c_max: int, levels: int) -> LevelProgression:
    """Logarithmic per-level target counts between c_min and c_max."""
    if levels < 2:
        raise ValueError(f"need at least 2 levels, got {levels}")
    if c_min < 1:
        raise ValueError(f"c_min must be >= 1, got {c_min}")
    if c_max < c_min:
        raise ValueError(f"c_max ({c_max}) must be >= c_min ({c_min})")
    step = (math.log(c_max) - math.log(c_min)) / (levels - 1)
    cumulative = [guarded_floor(c_min * math.exp(level * step))
                  for level in range(levels)]
    k_s = [c_min] + [b - a for a, b in zip(cumulative, cumulative[1:])]
    return LevelProgression(c_min, c_max, levels, cumulative, k_s)


@dataclass
class Hierarchy:
    """Disjoint partition of model rows: base holds G_0, enhancements[l-1]
    holds E_l; G_l is their cumulative union. Rows of the source model
    beyond c_max appear in no layer. Index lists are stored ascending."""
    progression: LevelProgression
    base: np.ndarray
    enhancements: list[np.ndarray] = field(default_factory=list)
    source_count: int = 0

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.int64)
        self.enhancements = [np.asarray(e, dtype=np.int64) for e in self.enhancements]
        prog = self.progression
        if len(self.enhancements) != prog.levels - 1:
            raise ValueError("enhancement layer count must be L - 1")
        if self.base.size != prog.cumulative[0]:
            raise ValueError(f"base size {self.base.size} != c_min {prog.cumulative[0]}")
        for l, enh in enumerate(self.enhancements, start=1):
            if enh.size != prog.k_s[l]:
                raise ValueError(f"layer {l} size {enh.size} != k_s[{l}] = {prog.k_s[l]}")
        union = np.concatenate([self.base] + self.enhancements)
        if np.unique(union).size != union.size:
            raise ValueError("hierarchy layers overlap")
        if union.size and (union.min() < 0 or union.max() >= self.source_count):
            raise ValueError("hierarchy indices out of model range")

    @property
    def levels(self) -> int:
        return self.progression.levels

    def active_indices(self, level: int) -> np.ndarray:
        """Rows of G_level in layer order (base first, then E_1..E_level)."""
        if not 0 <= level < self.levels:
            raise ValueError(f"level {level} out of range 0..{self.levels - 1}")
        return np.concatenate([self.base] + self.enhancements[:level])


def accumulate_scores(model: GaussianModel, active, views: list[View],
                      score: str = "gradient", ssim_weight: float = 0.2,
                      accumulation: str = "norm-sum",
                      background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Importance scores over the active subset; inactive rows get +inf.

    gradient kind: render the active subset against every view, backpropagate
    the loss, and reduce the 59-entry per-Gaussian gradient to a scalar,
    either as the sum over views of per-view L2 norms (norm-sum) or the L2
    norm of the view-summed gradient (sum-norm). opacity kind: sigmoid of the
    opacity logit, view-independent.
    """
    if score not in SCORE_KINDS:
        raise ValueError(f"unknown score kind {score!r}")
    if accumulation not in ACCUMULATIONS:
        raise ValueError(f"unknown accumulation {accumulation!r}")
    active = np.asarray(active, dtype=np.int64)
    scores = np.full(model.n, np.inf)
    if score == "opacity":
        scores[active] = 1.0 / (1.0 + np.exp(-model.opacity_logit[active]))
        return scores
    if not views:
        raise ValueError("gradient scoring needs at least one view")
    sub = subset(model, active)
    total = np.zeros(active.size)
    flat_sum = np.zeros((active.size, 59))
    for view in views:
        image = render(sub, view.camera, background)
        _, d_image = loss_and_grad(image, view.target, ssim_weight)
        grads = render_backward(sub, view.camera, d_image, background)
        flat = grads.flat_per_gaussian()
        if accumulation == "norm-sum":
            total += np.linalg.norm(flat, axis=1)
        else:
            flat_sum += flat
    if accumulation == "sum-norm":
        total = np.linalg.norm(flat_sum, axis=1)
    scores[active] = total
    return scores


def build_hierarchy(model: GaussianModel, views: list[View],
                    progression: LevelProgression, score: str = "gradient",
                    one_shot: bool = False, ssim_weight: float = 0.2,
                    accumulation: str = "norm-sum",
                    background=(0.0, 0.0, 0.0)) -> Hierarchy:
    """Top-down iterative masking into base + enhancement layers.

    For l = L-1 .. 1: score the active set (a single initial scoring is
    reused when one_shot), then mask the lowest-scoring Gaussians, ties
    broken by lower index. The first step masks down to |G_{L-2}| and
    permanently discards the overflow beyond c_max, so exactly L-1 scoring
    passes run regardless of the source model size.
    """
    n = model.n
    prog = progression
    if prog.cumulative[-1] > n:
        raise ValueError(
            f"progression c_max {prog.cumulative[-1]} exceeds model size {n}")
    active = np.ones(n, dtype=bool)
    initial_scores = None
    enhancements: list[np.ndarray] = [None] * (prog.levels - 1)
    for l in range(prog.levels - 1, 0, -1):
        if one_shot and initial_scores is not None:
            scores = np.where(active, initial_scores, np.inf)
        else:
            scores = accumulate_scores(model, np.nonzero(active)[0], views,
                                       score, ssim_weight, accumulation,
                                       background)
            if initial_scores is None:
                initial_scores = scores
        target = prog.cumulative[l - 1]
        n_mask = int(active.sum()) - target
        order = np.lexsort((np.arange(n), scores))[:n_mask]
        # On the first pass the lowest overflow beyond c_max is dropped for
        # good; the rest of the masked block is this enhancement layer.
        n_drop = n_mask - prog.k_s[l]
        enhancements[l - 1] = np.sort(order[n_drop:])
        active[order] = False
    return Hierarchy(prog, np.nonzero(active)[0], enhancements, source_count=n)


def save_hierarchy(hierarchy: Hierarchy, path) -> None:
    prog = hierarchy.progression
    record = {
        "c_min": prog.c_min,
        "c_max": prog.c_max,
        "L": prog.levels,
        "k_s": list(prog.k_s),
        "source_count": hierarchy.source_count,
        "base": [int(i) for i in hierarchy.base],
        "enhancements": [[int(i) for i in e] for e in hierarchy.enhancements],
    }
    with open(path, "w") as fh:
        json.dump(record, fh)


def load_hierarchy(path) -> Hierarchy:
    with open(path) as fh:
        record = json.load(fh)
    k_s = record["k_s"]
    cumulative = list(np.cumsum(k_s))
    prog = LevelProgression(record["c_min"], record["c_max"], record["L"],
                            [int(c) for c in cumulative], [int(k) for k in k_s])
    return Hierarchy(prog, record["base"], record["enhancements"],
                     source_count=record["source_count"])
