"""Acceptance suite: one PASS/FAIL line per criterion.

Criteria 9-11 generate the datasets, train for 2000 iterations and benchmark
through the command line, twice (the second run checks byte-identical
outputs).  That takes about an hour on one core; set CFSELECT_SKIP_LONG=1 to
skip them.
"""

import csv
import os
import time

import numpy as np
import pytest

from cfselect.bench import OpeReport, compare_strategies
from cfselect.cf_core import ResponseMap, cf_init, cf_response_batch, cf_update, localize
from cfselect.cli import main as cli_main
from cfselect.decision_net import backward, forward, load_checkpoint, net_init
from cfselect.rl_train import (
    TrainConfig,
    clipped_objective,
    collect_rollout,
    evaluate_policy,
    ppo_loss,
    returns_and_advantages,
    reward,
)
from cfselect.selftest import circulant_ridge
from cfselect.sim_env import ScenarioConfig, gen_sequence, read_sequence
from cfselect.spectral import circ_shift, gaussian_label, idft2
from cfselect.tracker import MultiModelTracker, TrackerConfig, track_sequence

from fd_oracle import full_fd, relative_errors

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TRAIN_CFG = os.path.join(ROOT, "configs", "acceptance_train.cfg")
BENCH_CFG = os.path.join(ROOT, "configs", "acceptance_bench.cfg")
SKIP_LONG = os.environ.get("CFSELECT_SKIP_LONG") == "1"
long_only = pytest.mark.skipif(SKIP_LONG, reason="CFSELECT_SKIP_LONG=1")


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return emit


def test_c01_cf_oracle(report):
    rng = np.random.default_rng(1)
    g = gaussian_label(8, 8, 1.0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal((8, 8))
        lam = 10 ** rng.uniform(-3, 0)
        h = np.real(idft2(cf_init(x, g, lam).filter()[0]))
        worst = max(worst, np.abs(h - circulant_ridge(x, g, lam)).max())
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-8 and dt < 5, f"max |fourier - dense| = {worst:.2e} over 100 problems, {dt:.2f} s")


def test_c02_shift_equivariance(report):
    rng = np.random.default_rng(2)
    g = gaussian_label(64, 64, 3.2)
    shifts = [(dy, dx) for dy in range(-16, 17) for dx in range(-16, 17)]
    t0 = time.perf_counter()
    wrong = 0
    for _ in range(50):
        x = rng.standard_normal((1, 64, 64))  # windowless synthetic target
        model = cf_init(x, g)
        maps = cf_response_batch(model, np.stack([circ_shift(x, dy, dx) for dy, dx in shifts]))
        wrong += sum(localize(ResponseMap.from_values(v))[:2] != s for v, s in zip(maps, shifts))
    dt = time.perf_counter() - t0
    report(2, wrong == 0 and dt < 10, f"{wrong} of {50 * len(shifts)} shifts mislocalized, {dt:.2f} s")


def test_c03_update_algebra(report):
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, 3, 64, 64))
    g = gaussian_label(64, 64, 3.2)
    m0 = cf_init(a, g)
    identity = cf_update(m0, b, 0.0).same_as(m0)
    reinit = cf_update(m0, b, 1.0).same_as(cf_init(b, g))
    m2 = cf_update(cf_update(m0, b, 0.05), b, 0.05)
    w = 1 - 0.95**2
    target = cf_init(b, g)
    err = 0.0
    for got, x0, x1 in ((m2.numerator, m0.numerator, target.numerator), (m2.energy, m0.energy, target.energy)):
        # relative to the array scale: energies reach ~5e4, where one float64 ulp is ~7e-12
        scale = max(np.abs(x0).max(), np.abs(x1).max())
        err = max(err, np.abs(got - ((1 - w) * x0 + w * x1)).max() / scale)
    report(3, identity and reinit and err <= 1e-12,
           f"eta=0 identity {identity}, eta=1 re-init {reinit}, two-step blend relative error {err:.1e}")


def test_c04_reward_table(report):
    table = {0.8: 1.8, 0.71: 1.71, 0.7: -0.1, 0.5: -0.1, 0.2: -0.1, 0.19: -1.0}
    got = {u: reward(u) for u in table}
    report(4, got == table, "rewards " + ", ".join(f"{u}->{r}" for u, r in got.items()))


def test_c05_ppo_identities(report):
    seq = gen_sequence(ScenarioConfig(n_frames=12, occlusion_rate=0.2, seed=5, texture_seed=5))
    params = net_init(5)
    cfg = TrainConfig()
    tr = collect_rollout(seq, params, cfg, np.random.default_rng(0))
    lp_new = forward(params, tr.states).log_probs[np.arange(len(tr)), tr.actions]
    ratio_err = np.abs(np.exp(lp_new - tr.log_prob_old) - 1).max()
    spots = (float(clipped_objective(1.5, 2.0, 0.2)), float(clipped_objective(0.5, -1.0, 0.2)))
    rng = np.random.default_rng(5)
    rec_err = 0.0
    for _ in range(50):
        rew = rng.uniform(-1, 2, rng.integers(1, 40))
        ret, _ = returns_and_advantages(rew, np.zeros(len(rew)), 0.95)
        rec_err = max(rec_err, max((abs(ret[t] - (rew[t] + 0.95 * ret[t + 1])) for t in range(len(rew) - 1)),
                                   default=0.0))
    ok = ratio_err <= 1e-12 and spots == (2.4, -0.8) and rec_err <= 1e-12
    report(5, ok, f"|ratio - 1| = {ratio_err:.1e} on a {len(tr)}-step rollout, clip spots {spots}, "
                  f"return recursion error {rec_err:.1e}")


def test_c06_gradient_check(report):
    rng = np.random.default_rng(6)
    params = net_init(6, k=2, input_size=16)
    x = rng.random((3, 2, 16, 16))
    actions = rng.integers(0, 2, 3)
    out = forward(params, x)
    lp_old = out.log_probs[np.arange(3), actions] + rng.uniform(-0.05, 0.05, 3)
    adv, ret = rng.standard_normal((2, 3))
    t0 = time.perf_counter()
    _, dl, dv = ppo_loss(out.logits, actions, lp_old, adv, out.value, ret, TrainConfig())
    grads = backward(params, out.cache, dl, dv)
    _, fd = full_fd(params.tensors, x, actions, lp_old, adv, ret, h=1e-6)
    dt = time.perf_counter() - t0
    errs = np.concatenate([relative_errors(fd[n], grads[n]) for n in params.names()])
    frac = float(np.mean(errs <= 1e-5))
    report(6, frac >= 0.99 and dt < 60,
           f"{100 * frac:.2f}% of {errs.size} parameters within 1e-5 relative error, {dt:.1f} s")


def test_c07_pool_invariants(report):
    seq = gen_sequence(ScenarioConfig(n_frames=200, occlusion_rate=0.05, drift_rate=0.05, scale_rate=0.05,
                                      seed=7, texture_seed=7))
    cfg = TrackerConfig(k=4)
    frozen = MultiModelTracker(seq.frames[0], seq.ground_truth[0], cfg).pool.models[0]
    prev = {"models": MultiModelTracker(seq.frames[0], seq.ground_truth[0], cfg).pool.models}
    bad = []

    def check(t, tracker, index):
        models = tracker.pool.models
        if not models[0].same_as(frozen):
            bad.append((t, 0))
        for j in range(2, cfg.k):
            if (not models[j].same_as(prev["models"][j])) != (index == j):
                bad.append((t, j))
        prev["models"] = models

    res = track_sequence(seq, strategy="random_update", cfg=cfg, seed=7, on_step=check)
    picks = {j: res.selected_indices.count(j) for j in range(cfg.k)}
    report(7, not bad and len(res) == 200, f"{len(bad)} violations over {len(res)} frames, selections {picks}")


def _monotone(rep):
    return bool(np.all(np.diff(rep.precision) >= 0) and np.all(np.diff(rep.success) <= 0))


def test_c08_metrics_oracle(report):
    toy = OpeReport.from_frames([0, 5, 15, 25, 60], [1.0, 0.8, 0.6, 0.4, 0.0])
    seqs = [gen_sequence(ScenarioConfig(n_frames=25, occlusion_rate=0.2, seed=s, texture_seed=s)) for s in range(3)]
    rows = compare_strategies(seqs, baselines=("always_update", "random_update", "initial_only"), seeds=(0, 1))
    mono = all(_monotone(r) for r in [toy, *rows.values()])
    report(8, toy.dp20 == 0.6 and toy.os06 == 0.6 and mono,
           f"toy P@20 {toy.dp20}, OS@0.6 {toy.os06}, monotone curves on {1 + len(rows)} reports: {mono}")


# -- training, ordering and determinism through the command line ----------------------------


def _cli(*argv):
    status = cli_main([str(a) for a in argv])
    assert status == 0, f"cfselect {' '.join(map(str, argv))} exited with {status}"


def _pipeline(root):
    """gen + train + bench as a user would run them; returns paths and timings."""
    root = str(root)
    train_dir, eval_dir = os.path.join(root, "moderate"), os.path.join(root, "occlusion")
    ckpt, log_csv, bench_dir = (os.path.join(root, n) for n in ("net.ckpt", "train_log.csv", "bench"))
    _cli("gen", "--tier", "moderate", "--n", 50, "--seed", 1, "--out", train_dir)
    t0 = time.perf_counter()
    _cli("train", "--config", TRAIN_CFG, "--data", train_dir, "--out", ckpt, "--log", log_csv)
    train_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    _cli("gen", "--tier", "occlusion", "--n", 20, "--seed", 2, "--out", eval_dir)
    _cli("bench", "--config", BENCH_CFG, "--data", eval_dir, "--checkpoint", ckpt, "--out", bench_dir)
    bench_s = time.perf_counter() - t0
    return dict(root=root, train_dir=train_dir, ckpt=ckpt, log=log_csv, bench=bench_dir,
                train_s=train_s, bench_s=bench_s)


@pytest.fixture(scope="module")
def run_a(tmp_path_factory):
    return _pipeline(tmp_path_factory.mktemp("run_a"))


def _read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _acceptance_cfg():
    return TrainConfig(k=3, gamma=0.95, clip_eps=0.2, epochs_d=10, lr=1e-4, T_max=20, batch_episodes=1,
                       iterations=2000, seed=0, precision="float32")


@long_only
def test_c09_training_progress(report, run_a):
    cfg = _acceptance_cfg()
    train_set = [read_sequence(os.path.join(run_a["train_dir"], d)) for d in sorted(os.listdir(run_a["train_dir"]))]
    max_len = max(len(s.frames) for s in train_set)
    before = evaluate_policy(net_init(cfg.seed, cfg.k), train_set, cfg)
    after = evaluate_policy(load_checkpoint(run_a["ckpt"])[0], train_set, cfg)
    gain = after / before - 1
    rewards = np.array([float(r["mean_reward"]) for r in _read_rows(run_a["log"])])
    # trailing 200-iteration average sampled at iterations 1200, 1400, ..., 2000
    ma = [rewards[end - 200:end].mean() for end in range(1200, 2001, 200)]
    rising = all(b >= a for a, b in zip(ma, ma[1:]))
    ok = len(rewards) == 2000 and gain >= 0.20 and rising and run_a["train_s"] <= 1800 and max_len <= 60
    report(9, ok, f"mean episode reward {before:.3f} -> {after:.3f} ({100 * gain:+.1f}%), "
                  f"200-iteration averages over the final half {[round(v, 3) for v in ma]} "
                  f"(non-decreasing {rising}), training {run_a['train_s'] / 60:.1f} min")


@long_only
def test_c10_strategy_ordering(report, run_a):
    rows = {r["strategy"]: r for r in _read_rows(os.path.join(run_a["bench"], "comparison.csv"))}
    os_pts = {k: 100 * float(rows[k]["os_0.6"]) for k in ("decision_k3", "always_update", "random_update")}
    dec, alw, rnd = os_pts["decision_k3"], os_pts["always_update"], os_pts["random_update"]
    ok = dec >= alw + 2.0 and dec > rnd and run_a["bench_s"] <= 600
    report(10, ok, f"OS@0.6 decision {dec:.2f}, always_update {alw:.2f}, random_update {rnd:.2f} "
                   f"(needs decision >= always + 2.0 and > random), {run_a['bench_s']:.0f} s")


@long_only
def test_c11_determinism(report, run_a, tmp_path_factory):
    run_b = _pipeline(tmp_path_factory.mktemp("run_b"))
    names = [os.path.relpath(run_a["log"], run_a["root"])]
    names += [os.path.join("bench", n) for n in sorted(os.listdir(run_a["bench"])) if n.endswith(".csv")]
    differ = []
    for name in names:
        with open(os.path.join(run_a["root"], name), "rb") as fa, open(os.path.join(run_b["root"], name), "rb") as fb:
            if fa.read() != fb.read():
                differ.append(name)
    report(11, not differ and len(names) > 3, f"{len(names)} CSV files compared, differing: {differ or 'none'}")
