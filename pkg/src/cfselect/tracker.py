"""Multi-model correlation-filter tracking loop with pluggable model selection.

Each frame: search patches at three scales, pick the scale whose accumulated
model response peaks highest, compute all k responses at that scale, let the
strategy choose one response, move the box to its peak, then update the pool
with features extracted at the new box.
"""

from dataclasses import dataclass, field

import numpy as np

from .cf_core import localize, response_from_spectra
from .decision_net import forward, sample_action
from .feature import TEMPLATE_SIZE, Rect, extract_patch, featurize, iou
from .model_pool import pool_init, pool_update
from .spectral import dft2, gaussian_label

STRATEGIES = ("decision", "always_update", "random_update", "initial_only")


@dataclass(frozen=True)
class TrackerConfig:
    k: int = 3
    padding: float = 2.0
    lam: float = 1e-4
    eta: float = 0.05
    scale_step: float = 1.025
    scale_penalty: float = 0.97  # multiplies the peak of the two off-unit scales

    @property
    def scales(self):
        return (1.0 / self.scale_step, 1.0, self.scale_step)

    def label_sigma(self):
        # target occupies TEMPLATE_SIZE/padding template pixels per side
        side = TEMPLATE_SIZE / self.padding
        return np.sqrt(side * side) / 10.0


def normalize_state(maps):
    """Min-max normalize each response map to [0, 1]; flat maps become zeros."""
    maps = np.asarray(maps, dtype=np.float64)
    lo = maps.min(axis=(-2, -1), keepdims=True)
    span = maps.max(axis=(-2, -1), keepdims=True) - lo
    return np.where(span > 0, (maps - lo) / np.where(span > 0, span, 1.0), 0.0)


@dataclass
class Observation:
    scale: float
    responses: list
    state: np.ndarray  # (k, 64, 64), normalized


class MultiModelTracker:
    def __init__(self, frame, rect: Rect, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.rect = rect
        self.label = gaussian_label(TEMPLATE_SIZE, TEMPLATE_SIZE, cfg.label_sigma())
        feats = featurize(extract_patch(frame, rect, cfg.padding))
        self.pool = pool_init(feats, self.label, cfg.lam, cfg.eta, cfg.k)

    def observe(self, frame) -> Observation:
        best = None
        for s in self.cfg.scales:
            Z = dft2(featurize(extract_patch(frame, self.rect, self.cfg.padding, scale=s)))
            acc = response_from_spectra(self.pool.models[1], Z)
            score = acc.peak_value * (1.0 if s == 1.0 else self.cfg.scale_penalty)
            if best is None or score > best[0]:
                best = (score, s, acc, Z)
        _, s, acc, Z = best
        responses = [acc if i == 1 else response_from_spectra(m, Z) for i, m in enumerate(self.pool.models)]
        state = normalize_state([r.values for r in responses])
        return Observation(s, responses, state)

    def commit(self, frame, obs: Observation, index) -> Rect:
        dy, dx, _ = localize(obs.responses[index])
        r = self.rect
        step_y = self.cfg.padding * r.h * obs.scale / TEMPLATE_SIZE
        step_x = self.cfg.padding * r.w * obs.scale / TEMPLATE_SIZE
        self.rect = Rect.from_center(r.cx + dx * step_x, r.cy + dy * step_y, r.w * obs.scale, r.h * obs.scale)
        feats = featurize(extract_patch(frame, self.rect, self.cfg.padding))
        self.pool = pool_update(self.pool, index, feats)
        return self.rect


@dataclass
class TrackResult:
    rects: list
    selected_indices: list  # -1 on frame 0
    ious: list = field(default=None)

    def __len__(self):
        return len(self.rects)


def make_selector(strategy, k, params=None, seed=0, dtype=np.float64):
    """Return ``select(obs) -> index`` for a named strategy."""
    if strategy == "always_update":
        return lambda obs: 1
    if strategy == "initial_only":
        return lambda obs: 0
    if strategy == "random_update":
        rng = np.random.default_rng(seed)
        return lambda obs: int(rng.integers(0, k))
    if strategy == "decision":
        if params is None:
            raise ValueError("decision strategy needs network parameters")
        if params.k != k:
            raise ValueError(f"network was built for k={params.k} models, tracker runs k={k}")

        def select(obs):
            out = forward(params, obs.state, dtype=dtype)
            return sample_action(out.action_probs[0], mode="greedy")[0]

        return select
    raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")


def track_sequence(seq, init_rect=None, strategy="always_update", params=None, cfg=None, seed=0,
                   on_step=None, dtype=np.float64) -> TrackResult:
    """One-pass tracking of ``seq`` from ``init_rect`` (default: first ground-truth box).

    ``on_step(t, tracker, index)`` is called after each frame's pool update.
    """
    if len(seq.frames) == 0:
        raise ValueError("cannot track an empty sequence")
    cfg = cfg or TrackerConfig(k=params.k if params is not None else 3)
    init_rect = init_rect or seq.ground_truth[0]
    select = make_selector(strategy, cfg.k, params, seed, dtype)
    tracker = MultiModelTracker(seq.frames[0], init_rect, cfg)
    rects, chosen = [init_rect], [-1]
    for t in range(1, len(seq.frames)):
        obs = tracker.observe(seq.frames[t])
        index = select(obs)
        rects.append(tracker.commit(seq.frames[t], obs, index))
        chosen.append(index)
        if on_step is not None:
            on_step(t, tracker, index)
    ious = None
    if seq.ground_truth is not None and len(seq.ground_truth) == len(seq.frames):
        ious = [iou(p, g) for p, g in zip(rects, seq.ground_truth)]
    return TrackResult(rects, chosen, ious)
