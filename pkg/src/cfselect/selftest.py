"""Fast built-in checks against independent oracles (used by ``cfselect selftest``)."""

import time

import numpy as np

from .bench import OpeReport
from .cf_core import cf_init, cf_response, cf_update, localize
from .decision_net import backward, forward, net_init
from .feature import Rect, iou
from .rl_train import TrainConfig, clipped_objective, ppo_loss, returns_and_advantages, reward
from .spectral import circ_shift, gaussian_label, idft2


def circulant_ridge(x, g, lam):
    """Filter h minimising ||x (*) h - g||^2 + lam ||h||^2 with circular convolution,
    solved densely in the pixel domain."""
    h, w = x.shape
    n = h * w
    C = np.empty((n, n))
    for j in range(n):
        # column j of the convolution matrix is x circularly shifted to pixel j
        C[:, j] = np.roll(x, (j // w, j % w), axis=(0, 1)).ravel()
    return np.linalg.solve(C.T @ C + lam * np.eye(n), C.T @ g.ravel()).reshape(h, w)


def check_cf_oracle(n=20, seed=0):
    rng = np.random.default_rng(seed)
    g = gaussian_label(8, 8, 1.0)
    worst = 0.0
    for _ in range(n):
        x = rng.standard_normal((8, 8))
        lam = 10.0 ** rng.uniform(-3, 0)
        model = cf_init(x, g, lam)
        h_fourier = np.real(idft2(model.filter()[0]))
        worst = max(worst, np.abs(h_fourier - circulant_ridge(x, g, lam)).max())
    return worst <= 1e-8, f"max |fourier - dense| = {worst:.2e}"


def check_shift(n=5, seed=1):
    rng = np.random.default_rng(seed)
    g = gaussian_label(64, 64, 3.2)
    bad = 0
    for _ in range(n):
        x = rng.standard_normal((3, 64, 64))
        model = cf_init(x, g)
        for dy, dx in rng.integers(-16, 17, size=(10, 2)):
            bad += localize(cf_response(model, circ_shift(x, dy, dx)))[:2] != (dy, dx)
    return bad == 0, f"{bad} wrong displacements"


def check_update(seed=2):
    rng = np.random.default_rng(seed)
    g = gaussian_label(16, 16, 2.0)
    a, b = rng.standard_normal((2, 2, 16, 16))
    m = cf_init(a, g)
    ok = cf_update(m, b, 0.0).same_as(m) and cf_update(m, b, 1.0).same_as(cf_init(b, g))
    return ok, "eta=0 identity and eta=1 re-initialisation"


def check_reward_and_ppo():
    table = {0.8: 1.8, 0.71: 1.71, 0.7: -0.1, 0.5: -0.1, 0.2: -0.1, 0.19: -1.0}
    ok = all(reward(k) == v for k, v in table.items())
    ok &= float(clipped_objective(1.5, 2.0, 0.2)) == 2.4 and float(clipped_objective(0.5, -1.0, 0.2)) == -0.8
    r, _ = returns_and_advantages([-0.1, 1.8], [0.0, 0.0], 0.95)
    ok &= abs(r[0] - 1.61) < 1e-12 and r[1] == 1.8
    return ok, "reward table, clip spot values, returns"


def check_gradient(seed=3):
    rng = np.random.default_rng(seed)
    params = net_init(seed, k=2, input_size=16)
    x = rng.random((3, 2, 16, 16))
    actions = np.array([0, 1, 1])
    cfg = TrainConfig(k=3)
    out = forward(params, x)
    lp_old = out.log_probs[np.arange(3), actions] + rng.uniform(-0.05, 0.05, 3)
    adv, ret = rng.standard_normal(3), rng.standard_normal(3)

    def loss(p):
        o = forward(p, x)
        return ppo_loss(o.logits, actions, lp_old, adv, o.value, ret, cfg)[0].loss

    _, dl, dv = ppo_loss(out.logits, actions, lp_old, adv, out.value, ret, cfg)
    grads = backward(params, out.cache, dl, dv)
    errs = []
    for name in params.names():
        t = params.tensors[name]
        for _ in range(3):
            idx = tuple(int(rng.integers(0, s)) for s in t.shape)
            hi, lo = params.copy(), params.copy()
            hi.tensors[name][idx] += 1e-6
            lo.tensors[name][idx] -= 1e-6
            fd = (loss(hi) - loss(lo)) / 2e-6
            an = grads[name][idx]
            errs.append(abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    frac = np.mean(np.array(errs) <= 1e-5)
    return frac >= 0.99, f"{frac:.1%} of sampled entries within 1e-5"


def check_metrics():
    g = Rect(10, 10, 20, 20)
    preds = [Rect(10 + d, 10, 20, 20) for d in (0, 5, 15, 25, 60)]
    rep = OpeReport.from_frames([abs(p.cx - g.cx) for p in preds], [1.0, 0.8, 0.6, 0.4, 0.0])
    ok = rep.dp20 == 0.6 and rep.os06 == 0.6 and iou(g, g) == 1.0
    return ok, f"DP@20 {rep.dp20}, OS@0.6 {rep.os06}"


CHECKS = [
    ("cf oracle", check_cf_oracle),
    ("shift equivariance", check_shift),
    ("update algebra", check_update),
    ("reward and ppo", check_reward_and_ppo),
    ("gradient", check_gradient),
    ("metrics", check_metrics),
]


def run_all(verbose=True):
    all_ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        ok, detail = fn()
        all_ok &= bool(ok)
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name:20s} {detail}  ({time.perf_counter() - t0:.2f}s)")
    return all_ok
