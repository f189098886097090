"""Deterministic synthetic tracking sequences and difficulty tiers.

A sequence is a textured target rectangle moving over a static textured
background.  Optional per-frame events perturb it: static occluder blocks,
global illumination gain, appearance drift of the target texture, and gradual
scale change.  Everything is a pure function of the configured seeds.

On disk a sequence is a directory holding ``0001.pgm ...`` (binary P5,
maxval 255), ``groundtruth_rect.txt`` with one 1-based ``x,y,w,h`` line per
frame, and ``events.txt`` with one comma-separated tag list per frame.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .feature import Rect

EVENTS = ("occlusion", "illumination", "drift", "scale")
EASY, MODERATE, HARD = "easy", "moderate", "hard"

_TEX = 64  # canonical target texture resolution
_GRID = 256.0  # ground truth is kept on a 1/256 px grid so text round trips are exact


@dataclass(frozen=True)
class ScenarioConfig:
    height: int = 240
    width: int = 320
    n_frames: int = 60
    init_rect: tuple = None  # (x, y, w, h), 0-based; random when None
    velocity_range: tuple = (0.5, 2.5)  # px/frame
    texture_seed: int = 0
    occlusion_rate: float = 0.0
    illumination_rate: float = 0.0
    drift_rate: float = 0.0
    scale_rate: float = 0.0
    coverage_range: tuple = (0.4, 0.7)
    gain_range: tuple = (0.6, 1.4)
    background_range: tuple = (110.0, 145.0)  # intensity span of the background texture
    event_length: tuple = (3, 10)
    seed: int = 0

    def rate(self, event):
        return getattr(self, f"{event}_rate")


@dataclass
class Sequence:
    frames: list
    ground_truth: list
    event_tags: list = field(default=None)
    name: str = ""

    def __post_init__(self):
        if self.event_tags is None:
            self.event_tags = [frozenset() for _ in self.frames]
        if not (len(self.frames) == len(self.ground_truth) == len(self.event_tags)):
            raise ValueError(
                f"sequence arrays differ in length: {len(self.frames)} frames, "
                f"{len(self.ground_truth)} rects, {len(self.event_tags)} tag sets"
            )

    def __len__(self):
        return len(self.frames)

    def same_as(self, other):
        return (
            len(self) == len(other)
            and all(np.array_equal(a, b) for a, b in zip(self.frames, other.frames))
            and list(self.ground_truth) == list(other.ground_truth)
            and [set(t) for t in self.event_tags] == [set(t) for t in other.event_tags]
        )


def _texture(rng, shape, smooth, lo, hi):
    noise = gaussian_filter(rng.random(shape), smooth, mode="wrap")
    noise = (noise - noise.min()) / max(noise.max() - noise.min(), 1e-12)
    return lo + (hi - lo) * noise


def _snap(v):
    return round(v * _GRID) / _GRID


def _pixel_span(shape, rect):
    H, W = shape
    y0 = max(int(np.ceil(rect.y - 0.5)), 0)
    y1 = min(int(np.ceil(rect.y + rect.h - 0.5)), H)
    x0 = max(int(np.ceil(rect.x - 0.5)), 0)
    x1 = min(int(np.ceil(rect.x + rect.w - 0.5)), W)
    return y0, y1, x0, x1


def _paint(canvas, rect, texture):
    """Paint ``texture`` (nearest-neighbour resampled) over pixels whose centers lie in ``rect``."""
    th, tw = texture.shape
    y0, y1, x0, x1 = _pixel_span(canvas.shape, rect)
    if y1 <= y0 or x1 <= x0:
        return
    ty = np.clip(((np.arange(y0, y1) + 0.5 - rect.y) / rect.h * th).astype(int), 0, th - 1)
    tx = np.clip(((np.arange(x0, x1) + 0.5 - rect.x) / rect.w * tw).astype(int), 0, tw - 1)
    canvas[y0:y1, x0:x1] = texture[np.ix_(ty, tx)]


def rect_pixel_mask(shape, rect):
    """Boolean mask of pixels whose centers fall inside ``rect``."""
    mask = np.zeros(shape, dtype=bool)
    y0, y1, x0, x1 = _pixel_span(shape, rect)
    mask[y0:y1, x0:x1] = True
    return mask


def _occluder_block(rect, coverage, side):
    """Block hiding ``ceil(coverage * n) + 1`` of the n pixel rows or columns of
    the target from one side, overhanging the target by 2 px on the outside.
    The extra line keeps the hidden fraction above ``coverage`` even where an
    occluder pixel happens to match the target pixel below it."""
    m = 2.0
    y0, y1 = int(np.ceil(rect.y - 0.5)), int(np.ceil(rect.y + rect.h - 0.5))
    x0, x1 = int(np.ceil(rect.x - 0.5)), int(np.ceil(rect.x + rect.w - 0.5))
    # pixel r spans [r, r + 1), so integer edges select whole rows and columns
    top, bottom, left, right = y0 - m, y1 + m, x0 - m, x1 + m
    if side in (0, 1):
        c = min(int(np.ceil(coverage * (x1 - x0))) + 1, x1 - x0)
        if side == 0:  # left
            return Rect(left, top, x0 + c - left, bottom - top)
        return Rect(x1 - c, top, right - (x1 - c), bottom - top)
    c = min(int(np.ceil(coverage * (y1 - y0))) + 1, y1 - y0)
    if side == 2:  # top
        return Rect(left, top, right - left, y0 + c - top)
    return Rect(left, y1 - c, right - left, bottom - (y1 - c))


def gen_sequence(cfg: ScenarioConfig, with_clean=False):
    """Render a sequence.  With ``with_clean`` also return the frames rendered
    without occluders (used to measure occlusion coverage)."""
    H, W = cfg.height, cfg.width
    if cfg.init_rect is not None:
        x, y, w, h = cfg.init_rect
        if w <= 0 or h <= 0 or w > W or h > H:
            raise ValueError(f"target {w}x{h} does not fit a {W}x{H} frame")
        if not (0 <= x + w / 2 < W and 0 <= y + h / 2 < H):
            raise ValueError("initial target center lies outside the frame")
    for ev in EVENTS:
        if not 0.0 <= cfg.rate(ev) <= 1.0:
            raise ValueError(f"{ev} rate must be in [0, 1]")
    tex_rng = np.random.default_rng([cfg.texture_seed, 1])
    # each event type draws its timing and its parameters from its own streams, and the
    # motion has another, so changing one event's rate leaves everything else in place
    timing = {ev: np.random.default_rng([cfg.seed, 10 + i]) for i, ev in enumerate(EVENTS)}
    draws = {ev: np.random.default_rng([cfg.seed, 20 + i]) for i, ev in enumerate(EVENTS)}
    motion = np.random.default_rng([cfg.seed, 3])

    background = _texture(tex_rng, (H, W), 3.0, *cfg.background_range)
    target_tex = _texture(tex_rng, (_TEX, _TEX), 1.5, 10.0, 245.0)

    max_side = np.sqrt(0.25 * H * W)
    if cfg.init_rect is None:
        w = float(motion.integers(24, 41))
        h = float(motion.integers(24, 41))
        x = float(motion.uniform(0.1 * W, 0.9 * W - w))
        y = float(motion.uniform(0.1 * H, 0.9 * H - h))
    cx, cy = x + w / 2.0, y + h / 2.0

    vmin, vmax = cfg.velocity_range
    speed = motion.uniform(vmin, vmax) if vmax > 0 else 0.0
    angle = motion.uniform(0, 2 * np.pi)
    vel = np.array([np.cos(angle), np.sin(angle)]) * speed

    active = {}  # event -> dict(state), with "left" frames remaining
    frames, clean_frames, rects, tags = [], [], [], []
    for t in range(cfg.n_frames):
        if t > 0:
            # events start/stop (never on frame 0 so initialization is clean)
            for ev in EVENTS:
                u = timing[ev].random()  # drawn every frame so the timeline does not depend on the rate
                if ev in active:
                    active[ev]["left"] -= 1
                    if active[ev]["left"] <= 0:
                        if ev == "drift":
                            target_tex = active[ev]["new"]
                        del active[ev]
                elif u < cfg.rate(ev):
                    rng = draws[ev]
                    n = int(rng.integers(cfg.event_length[0], cfg.event_length[1] + 1))
                    state = {"left": n, "n": n}
                    if ev == "occlusion":
                        state["coverage"] = rng.uniform(*cfg.coverage_range)
                        state["side"] = int(rng.integers(0, 4))
                        # background-textured: a crop of the background from elsewhere in the frame
                        c = min(48, H, W)
                        oy = int(rng.integers(0, H - c + 1))
                        ox = int(rng.integers(0, W - c + 1))
                        state["texture"] = background[oy:oy + c, ox:ox + c]
                    elif ev == "illumination":
                        state["gain"] = rng.uniform(*cfg.gain_range)
                    elif ev == "drift":
                        state["new"] = _texture(rng, (_TEX, _TEX), 1.5, 10.0, 245.0)
                    elif ev == "scale":
                        state["factor"] = rng.uniform(0.95, 1.05)
                    active[ev] = state
            # motion: bounded random walk, reflected at the frame edges
            if speed > 0:
                vel = vel + motion.normal(0.0, 0.3 * vmax, size=2)
                s = np.hypot(*vel)
                vel = vel / max(s, 1e-12) * np.clip(s, vmin, vmax)
            if "scale" in active:
                f = active["scale"]["factor"]
                w = float(np.clip(w * f, 12.0, max_side))
                h = float(np.clip(h * f, 12.0, max_side))
            cx += vel[0]
            cy += vel[1]
            if cx - w / 2 < 0 or cx + w / 2 > W:
                vel[0] = -vel[0]
                cx = float(np.clip(cx, w / 2, W - w / 2))
            if cy - h / 2 < 0 or cy + h / 2 > H:
                vel[1] = -vel[1]
                cy = float(np.clip(cy, h / 2, H - h / 2))
        rect = Rect(_snap(cx - w / 2), _snap(cy - h / 2), _snap(w), _snap(h))

        tex = target_tex
        if "drift" in active:
            st = active["drift"]
            alpha = (st["n"] - st["left"] + 1) / st["n"]
            tex = (1 - alpha) * target_tex + alpha * st["new"]
        canvas = background.copy()
        _paint(canvas, rect, tex)
        clean = canvas
        if "occlusion" in active:
            clean = canvas.copy()
            st = active["occlusion"]
            _paint(canvas, _occluder_block(rect, st["coverage"], st["side"]), st["texture"])
        gain = active["illumination"]["gain"] if "illumination" in active else 1.0
        frames.append(np.clip(np.rint(canvas * gain), 0, 255).astype(np.uint8))
        if with_clean:
            clean_frames.append(np.clip(np.rint(clean * gain), 0, 255).astype(np.uint8))
        rects.append(rect)
        tags.append(frozenset(active))
    seq = Sequence(frames, rects, tags)
    return (seq, clean_frames) if with_clean else seq


# -- difficulty tiers ------------------------------------------------------------


def rate_iou(mean_iou):
    if mean_iou >= 0.7:
        return EASY
    if mean_iou <= 0.2:
        return HARD
    return MODERATE


def baseline_iou(seq, **track_kw):
    """Mean IOU of a single always-updated filter over ``seq`` (frame 0 excluded)."""
    from .tracker import track_sequence

    result = track_sequence(seq, seq.ground_truth[0], "always_update", **track_kw)
    return float(np.mean(result.ious[1:]))


def difficulty_rating(seq, baseline_mean_iou=None):
    if baseline_mean_iou is None:
        baseline_mean_iou = baseline_iou(seq)
    return rate_iou(baseline_mean_iou)


TIER_PRESETS = {
    # short, event-dense clips kept only when the baseline rates them moderate: the training pool
    "moderate": dict(
        n_frames=21, occlusion_rate=0.08, illumination_rate=0.04, drift_rate=0.12, scale_rate=0.06,
        coverage_range=(0.5, 0.8), velocity_range=(1.0, 3.0),
    ),
    # frequent heavy occlusion, used unfiltered as an evaluation tier
    "occlusion": dict(
        n_frames=60, occlusion_rate=0.08, illumination_rate=0.02, drift_rate=0.0, scale_rate=0.0,
        coverage_range=(0.5, 0.8), velocity_range=(1.0, 3.0),
    ),
    "easy": dict(n_frames=60, velocity_range=(0.0, 0.0)),
}
TIER_FILTER = {"moderate": {MODERATE}, "occlusion": {EASY, MODERATE, HARD}, "easy": {EASY, MODERATE, HARD}}


def generate_tier(tier, n, seed, keep=None, max_candidates=None, **overrides):
    """Generate ``n`` sequences from a preset, keeping only candidates whose
    baseline rating is in ``keep`` (default from ``TIER_FILTER``)."""
    if tier not in TIER_PRESETS:
        raise ValueError(f"unknown tier {tier!r}; choose from {sorted(TIER_PRESETS)}")
    if keep is None:
        keep = TIER_FILTER[tier]
    params = dict(TIER_PRESETS[tier])
    params.update(overrides)
    max_candidates = max_candidates or 20 * n
    keep_all = set(keep) >= {EASY, MODERATE, HARD}
    out = []
    for i in range(max_candidates):
        cseed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        cfg = ScenarioConfig(seed=cseed, texture_seed=cseed, **params)
        seq = gen_sequence(cfg)
        seq.name = f"{tier}_{seed}_{i:04d}"
        if keep_all or difficulty_rating(seq) in keep:
            out.append(seq)
            if len(out) == n:
                return out
    raise RuntimeError(f"only {len(out)} of {n} {tier} sequences found in {max_candidates} candidates")


# -- directory I/O ------------------------------------------------------------------


def write_pgm(path, image):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM frames must be 2-D uint8 arrays")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    raster = data[pos:]
    if len(raster) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def frame_name(i):
    return f"{i + 1:04d}.pgm"


def write_sequence(seq: Sequence, directory):
    os.makedirs(directory, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_pgm(os.path.join(directory, frame_name(i)), frame)
    with open(os.path.join(directory, "groundtruth_rect.txt"), "w") as fh:
        for r in seq.ground_truth:
            fh.write(",".join(_fmt(v) for v in (r.x + 1, r.y + 1, r.w, r.h)) + "\n")
    with open(os.path.join(directory, "events.txt"), "w") as fh:
        for tags in seq.event_tags:
            fh.write(",".join(sorted(tags)) + "\n")


def parse_groundtruth_line(line):
    """One 1-based ``x,y,w,h`` line -> 0-based :class:`Rect`."""
    parts = line.replace("\t", ",").replace(" ", ",").split(",")
    parts = [p for p in parts if p]
    if len(parts) != 4:
        raise ValueError(f"expected 4 comma-separated values, got {line.strip()!r}")
    x, y, w, h = (float(p) for p in parts)
    return Rect(x - 1, y - 1, w, h)


def read_sequence(directory):
    gt_path = os.path.join(directory, "groundtruth_rect.txt")
    if not os.path.isfile(gt_path):
        raise FileNotFoundError(f"missing ground truth file {gt_path}")
    with open(gt_path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    rects = []
    for n, line in enumerate(lines, start=1):
        try:
            rects.append(parse_groundtruth_line(line))
        except ValueError as exc:
            raise ValueError(f"{gt_path}:{n}: {exc}") from None
    frames = []
    for i in range(len(rects)):
        path = os.path.join(directory, frame_name(i))
        if not os.path.isfile(path):
            raise FileNotFoundError(f"missing frame file {path}")
        frames.append(read_pgm(path))
    extra = sorted(f for f in os.listdir(directory) if f.endswith(".pgm") and f not in {frame_name(i) for i in range(len(rects))})
    if extra:
        raise ValueError(f"{directory}: {len(extra)} frame files beyond the {len(rects)} ground-truth lines (first: {extra[0]})")
    ev_path = os.path.join(directory, "events.txt")
    tags = None
    if os.path.isfile(ev_path):
        with open(ev_path) as fh:
            ev_lines = fh.read().split("\n")
        if ev_lines and ev_lines[-1] == "":
            ev_lines.pop()
        if len(ev_lines) != len(rects):
            raise ValueError(f"{ev_path}: {len(ev_lines)} lines but {len(rects)} frames")
        tags = [frozenset(t for t in ln.split(",") if t) for ln in ev_lines]
    return Sequence(frames, rects, tags, name=os.path.basename(os.path.normpath(directory)))
