"""PPO training of the model-selection network on tracking episodes.

A rollout runs the multi-model tracker from a ground-truth box, sampling the
selected model from the policy each frame and scoring the result by IOU.
Training alternates rollout collection with ``epochs_d`` full-batch Adam steps
on the clipped surrogate plus value and entropy terms.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .decision_net import AdamState, adam_step, backward, forward, net_init, sample_action
from .feature import iou
from .tracker import MultiModelTracker, TrackerConfig

LOG_COLUMNS = ("iteration", "mean_reward", "policy_loss", "value_loss", "entropy")


def reward(iou_value):
    """Per-frame reward from the overlap with ground truth (strict thresholds)."""
    iou_value = float(iou_value)
    if not 0.0 <= iou_value <= 1.0:
        raise ValueError(f"IOU must lie in [0, 1], got {iou_value}")
    if iou_value > 0.7:
        return iou_value + 1.0
    if iou_value < 0.2:
        return -1.0
    return -0.1


def returns_and_advantages(rewards, values, gamma):
    """Discounted returns to the end of the episode (no bootstrap) and
    advantages ``return - value``."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("empty trajectory")
    if rewards.shape != values.shape:
        raise ValueError(f"{rewards.size} rewards but {values.size} values")
    returns = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns, returns - values


def clipped_objective(ratio, advantage, eps):
    """Per-step surrogate ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


@dataclass(frozen=True)
class TrainConfig:
    k: int = 3
    gamma: float = 0.95
    clip_eps: float = 0.2
    epochs_d: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 1e-4
    T_max: int = 32
    batch_episodes: int = 8
    iterations: int = 2000
    clip_enabled: bool = True
    seed: int = 0
    precision: str = "float64"  # compute dtype of the network; master weights stay float64

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.clip_enabled and self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive when clipping is enabled")
        if self.epochs_d < 1:
            raise ValueError("epochs_d must be at least 1")
        if self.T_max < 1 or self.batch_episodes < 1 or self.iterations < 0:
            raise ValueError("T_max and batch_episodes must be positive, iterations non-negative")
        if self.k < 3:
            raise ValueError("k must be at least 3")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")

    @property
    def dtype(self):
        return np.dtype(self.precision)


@dataclass
class LossTerms:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def ppo_loss(logits, actions, log_prob_old, advantages, values, returns, cfg: TrainConfig):
    """Total loss and its partials with respect to the logits and value outputs.

    loss = -mean(objective) + value_coef * mean((V - R)^2) - entropy_coef * mean(H)
    where objective is the clipped surrogate, or ``log_prob_new * A`` with
    clipping disabled.
    """
    logits = np.asarray(logits, dtype=np.float64)
    actions = np.asarray(actions)
    n = logits.shape[0]
    log_p = _log_softmax(logits)
    p = np.exp(log_p)
    rows = np.arange(n)
    lp_new = log_p[rows, actions]
    adv = np.asarray(advantages, dtype=np.float64)

    if cfg.clip_enabled:
        ratio = np.exp(lp_new - np.asarray(log_prob_old, dtype=np.float64))
        clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
        unclipped_term = ratio * adv
        objective = np.minimum(unclipped_term, clipped * adv)
        # the clipped branch is constant in theta; ties (ratio inside the band) take the live branch
        d_obj_d_lp = np.where(unclipped_term <= clipped * adv, unclipped_term, 0.0)
    else:
        objective = lp_new * adv
        d_obj_d_lp = adv

    entropy = -(p * log_p).sum(axis=1)
    diff = np.asarray(values, dtype=np.float64) - np.asarray(returns, dtype=np.float64)
    policy_loss = -objective.mean()
    value_loss = (diff * diff).mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy.mean()

    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    d_logits = (-d_obj_d_lp / n)[:, None] * (onehot - p)
    # dH/dz_j = -p_j (log p_j + H)
    d_logits -= cfg.entropy_coef / n * (-p * (log_p + entropy[:, None]))
    d_values = cfg.value_coef * 2.0 * diff / n
    return LossTerms(float(loss), float(policy_loss), float(value_loss), float(entropy.mean())), d_logits, d_values


@dataclass
class Trajectory:
    states: np.ndarray  # (T, k, 64, 64)
    actions: np.ndarray
    rewards: np.ndarray
    log_prob_old: np.ndarray
    value_old: np.ndarray
    ious: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.actions)
        if not (len(self.states) == len(self.rewards) == len(self.log_prob_old) == len(self.value_old) == n):
            raise ValueError("trajectory arrays differ in length")

    def __len__(self):
        return len(self.actions)

    @property
    def total_reward(self):
        return float(self.rewards.sum())


def _center_inside(rect, shape):
    h, w = shape
    return 0.0 <= rect.cx < w and 0.0 <= rect.cy < h


def collect_rollout(seq, params, cfg: TrainConfig, rng, start=0, tracker_cfg=None, mode="sample"):
    """Track ``seq`` from ground truth at frame ``start`` for up to ``T_max``
    frames, sampling the model index from the policy."""
    gt = seq.ground_truth
    if gt is None or len(gt) != len(seq.frames):
        raise ValueError("rollouts need a ground-truth rect for every frame")
    if not 0 <= start < len(seq.frames) - 1:
        raise ValueError(f"start frame {start} leaves no frame to track in a {len(seq.frames)}-frame sequence")
    tracker_cfg = tracker_cfg or TrackerConfig(k=params.k)
    tracker = MultiModelTracker(seq.frames[start], gt[start], tracker_cfg)
    states, actions, rewards, lps, vals, ious = [], [], [], [], [], []
    stop = min(len(seq.frames), start + 1 + cfg.T_max)
    for t in range(start + 1, stop):
        obs = tracker.observe(seq.frames[t])
        out = forward(params, obs.state, dtype=cfg.dtype)
        a = sample_action(out.action_probs[0], rng, mode=mode)[0]
        rect = tracker.commit(seq.frames[t], obs, a)
        overlap = iou(rect, gt[t])
        inside = _center_inside(rect, seq.frames[t].shape)
        states.append(obs.state)
        actions.append(a)
        rewards.append(reward(overlap) if inside else -1.0)
        lps.append(out.log_probs[0, a])
        vals.append(out.value[0])
        ious.append(overlap)
        if not inside:
            break
    return Trajectory(np.asarray(states), np.asarray(actions, dtype=np.int64), np.asarray(rewards),
                      np.asarray(lps), np.asarray(vals), np.asarray(ious))


def episode_starts(train_set, cfg: TrainConfig, seed):
    """One fixed start frame per sequence so every pass over the set sees the same episodes."""
    rng = np.random.default_rng([seed, 7])
    starts = []
    for seq in train_set:
        last = max(len(seq.frames) - 1 - cfg.T_max, 0)
        starts.append(int(rng.integers(0, last + 1)))
    return starts


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (iteration, mean_reward, policy_loss, value_loss, entropy)
    optimizer_epochs: list = field(default_factory=list)

    def append(self, iteration, mean_reward, terms: LossTerms, epochs):
        self.rows.append((iteration, mean_reward, terms.policy_loss, terms.value_loss, terms.entropy))
        self.optimizer_epochs.append(epochs)

    def mean_rewards(self):
        return np.array([r[1] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for it, *vals in self.rows:
                w.writerow([it] + [repr(float(v)) for v in vals])


def update_step(params, opt, batch, cfg: TrainConfig):
    """``epochs_d`` full-batch Adam steps on one batch; returns params, opt and
    the loss terms of the first epoch (evaluated at the collection policy)."""
    states, actions, lp_old, adv, returns = batch
    first = None
    for epoch in range(cfg.epochs_d):
        out = forward(params, states, dtype=cfg.dtype)
        if epoch == 0 and cfg.dtype != np.float64:
            # batched low-precision forward differs from the per-frame one in the last bits;
            # take theta_old's log-probs from this pass so the first ratio is exactly 1
            lp_old = out.log_probs[np.arange(len(actions)), actions]
        terms, d_logits, d_values = ppo_loss(out.logits, actions, lp_old, adv, out.value, returns, cfg)
        if first is None:
            first = terms
        grads = backward(params, out.cache, d_logits, d_values)
        params, opt = adam_step(params, grads, opt)
    return params, opt, first


def make_batch(trajectories, cfg: TrainConfig):
    states = np.concatenate([tr.states for tr in trajectories])
    actions = np.concatenate([tr.actions for tr in trajectories])
    lp_old = np.concatenate([tr.log_prob_old for tr in trajectories])
    returns, adv = [], []
    for tr in trajectories:
        r, a = returns_and_advantages(tr.rewards, tr.value_old, cfg.gamma)
        returns.append(r)
        adv.append(a)
    returns = np.concatenate(returns)
    adv = np.concatenate(adv)
    std = adv.std()
    adv = (adv - adv.mean()) / std if std > 1e-12 else adv - adv.mean()
    return states, actions, lp_old, adv, returns


def train(train_set, cfg: TrainConfig, params=None, log=None, on_iteration=None):
    """Run ``cfg.iterations`` PPO iterations over ``train_set``.

    Sequences are visited in a fixed cycle, ``batch_episodes`` per iteration,
    each from its fixed start frame.  Returns (params, AdamState, TrainLog).
    """
    train_set = list(train_set)
    if not train_set:
        raise ValueError("empty training set")
    for seq in train_set:
        if len(seq.frames) < 2:
            raise ValueError(f"sequence {seq.name or '?'} has fewer than 2 frames")
    params = params or net_init(cfg.seed, cfg.k)
    if params.k != cfg.k:
        raise ValueError(f"network has k={params.k}, config asks for k={cfg.k}")
    opt = AdamState.fresh(params, lr=cfg.lr, dtype=cfg.dtype)
    log = log or TrainLog()
    rng = np.random.default_rng([cfg.seed, 3])
    starts = episode_starts(train_set, cfg, cfg.seed)
    tracker_cfg = TrackerConfig(k=cfg.k)
    n = len(train_set)
    for it in range(cfg.iterations):
        picks = [(it * cfg.batch_episodes + j) % n for j in range(cfg.batch_episodes)]
        trajs = [collect_rollout(train_set[i], params, cfg, rng, starts[i], tracker_cfg) for i in picks]
        batch = make_batch(trajs, cfg)
        params, opt, terms = update_step(params, opt, batch, cfg)
        log.append(it, float(np.mean([tr.total_reward for tr in trajs])), terms, cfg.epochs_d)
        if on_iteration is not None:
            on_iteration(it, params, log)
    return params, opt, log


def evaluate_policy(params, sequences, cfg: TrainConfig, seed=0, passes=1, mode="sample"):
    """Mean episode reward of ``params`` over ``sequences`` from the training
    start frames, with a fixed action-sampling seed."""
    starts = episode_starts(sequences, cfg, cfg.seed)
    tracker_cfg = TrackerConfig(k=params.k)
    totals = []
    for p in range(passes):
        rng = np.random.default_rng([seed, 11, p])
        for seq, s in zip(sequences, starts):
            totals.append(collect_rollout(seq, params, cfg, rng, s, tracker_cfg, mode=mode).total_reward)
    return float(np.mean(totals))
