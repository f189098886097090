"""Command line: gen, rate, train, track, bench, selftest.

Every subcommand accepts ``--config FILE`` with flat ``key = value`` lines
(``#`` starts a comment).  Keys are the long flag names with dashes or
underscores; flags given on the command line override the file.
"""

import argparse
import os
import sys


STRATEGY_CHOICES = ("decision", "always_update", "random_update", "initial_only")


class CliError(Exception):
    pass


def read_config(path):
    """Parse a flat key=value file into a dict of strings."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    return [int(s) for s in str(text).replace(" ", "").split(",") if s]


def _str_list(text):
    return [s for s in str(text).split(",") if s]


def _build_parser():
    p = argparse.ArgumentParser(prog="cfselect", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="flat key=value file; flags override it")
        return sp

    g = add("gen", "write a synthetic dataset tier")
    g.add_argument("--tier", help="moderate, occlusion or easy")
    g.add_argument("--n", type=int, help="number of sequences")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")

    r = add("rate", "difficulty rating of every sequence in a dataset")
    r.add_argument("--data", help="dataset directory")
    r.add_argument("--out", help="optional CSV path (default: stdout)")

    t = add("train", "PPO training of the decision network")
    t.add_argument("--data", help="training dataset directory")
    t.add_argument("--k", type=int)
    t.add_argument("--gamma", type=float)
    t.add_argument("--clip-eps", type=float)
    t.add_argument("--no-clip", action="store_const", const=True)
    t.add_argument("--epochs-d", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--tmax", type=int)
    t.add_argument("--batch", type=int, help="episodes per iteration")
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--precision", choices=("float64", "float32"))
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="training log CSV path (default: <out>.log.csv)")

    k = add("track", "track one sequence and write x,y,w,h,selected_index lines")
    k.add_argument("--seq", help="sequence directory")
    k.add_argument("--strategy", choices=STRATEGY_CHOICES)
    k.add_argument("--checkpoint")
    k.add_argument("--seed", type=int)
    k.add_argument("--out", help="trace file (default: stdout)")

    b = add("bench", "compare strategies on a dataset")
    b.add_argument("--data", help="evaluation dataset directory")
    b.add_argument("--checkpoint", help="comma-separated checkpoints; one decision row each")
    b.add_argument("--seeds", help="comma-separated random_update seeds")
    b.add_argument("--out", help="report directory")
    b.add_argument("--plots", help="render PNG figures (default true)")

    add("selftest", "run the built-in oracle, gradient and property checks")
    return p


DEFAULTS = {
    "gen": dict(tier="moderate", n=50, seed=0, out=None),
    "rate": dict(data=None, out=None),
    "train": dict(data=None, k=3, gamma=0.95, clip_eps=0.2, no_clip=False, epochs_d=10, lr=1e-4, tmax=32,
                  batch=8, iters=2000, seed=0, precision="float64", out=None, log=None),
    "track": dict(seq=None, strategy="always_update", checkpoint=None, seed=0, out=None),
    "bench": dict(data=None, checkpoint=None, seeds="0", out=None, plots="true"),
    "selftest": dict(),
}
CONVERT = dict(n=int, seed=int, k=int, gamma=float, clip_eps=float, no_clip=_bool, epochs_d=int, lr=float,
               tmax=int, batch=int, iters=int)


def resolve(command, ns):
    """Merge defaults < config file < flags; returns a plain dict."""
    opts = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if getattr(ns, "config", None):
        for key, value in read_config(ns.config).items():
            if key not in opts:
                raise CliError(f"{ns.config}: unknown key {key!r} for {command}")
            try:
                opts[key] = CONVERT[key](value) if key in CONVERT else value
            except ValueError as exc:
                raise CliError(f"{ns.config}: bad value for {key}: {exc}") from None
    opts.update(flags)
    return opts


def _need(opts, *keys):
    for key in keys:
        if opts.get(key) in (None, ""):
            raise CliError(f"missing required option --{key.replace('_', '-')}")


def _dataset(path):
    from .sim_env import read_sequence

    if not os.path.isdir(path):
        raise CliError(f"dataset directory not found: {path}")
    names = sorted(d for d in os.listdir(path) if os.path.isdir(os.path.join(path, d)))
    if not names:
        raise CliError(f"no sequence directories in {path}")
    return [read_sequence(os.path.join(path, d)) for d in names]


def _load(path, expected_k=None):
    from .decision_net import load_checkpoint

    if not os.path.isfile(path):
        raise CliError(f"checkpoint not found: {path}")
    return load_checkpoint(path, expected_k)[0]


def cmd_gen(o):
    from .sim_env import generate_tier, write_sequence

    _need(o, "out")
    for seq in generate_tier(o["tier"], o["n"], o["seed"]):
        write_sequence(seq, os.path.join(o["out"], seq.name))
    print(f"wrote {o['n']} {o['tier']} sequences to {o['out']}")


def cmd_rate(o):
    from .sim_env import baseline_iou, rate_iou

    _need(o, "data")
    lines = ["sequence,baseline_mean_iou,rating"]
    for seq in _dataset(o["data"]):
        m = baseline_iou(seq)
        lines.append(f"{seq.name},{m:.6f},{rate_iou(m)}")
    _emit("\n".join(lines) + "\n", o.get("out"))


def cmd_train(o):
    from .decision_net import save_checkpoint
    from .rl_train import TrainConfig, train

    _need(o, "data", "out")
    cfg = TrainConfig(
        k=o["k"], gamma=o["gamma"], clip_eps=o["clip_eps"], epochs_d=o["epochs_d"], lr=o["lr"], T_max=o["tmax"],
        batch_episodes=o["batch"], iterations=o["iters"], clip_enabled=not o["no_clip"], seed=o["seed"],
        precision=o["precision"],
    )
    params, opt, log = train(_dataset(o["data"]), cfg)
    save_checkpoint(params, opt, o["out"])
    log_path = o.get("log") or o["out"] + ".log.csv"
    log.write_csv(log_path)
    print(f"wrote {o['out']} and {log_path}")


def cmd_track(o):
    from .sim_env import _fmt, read_sequence
    from .tracker import track_sequence

    _need(o, "seq")
    params = None
    if o["strategy"] == "decision":
        _need(o, "checkpoint")
        params = _load(o["checkpoint"])
    seq = read_sequence(o["seq"])
    res = track_sequence(seq, strategy=o["strategy"], params=params, seed=o["seed"])
    # same exact number format as groundtruth_rect.txt (1-based corner)
    out = "".join(
        ",".join(_fmt(v) for v in (r.x + 1, r.y + 1, r.w, r.h)) + f",{i}\n"
        for r, i in zip(res.rects, res.selected_indices)
    )
    _emit(out, o.get("out"))


def cmd_bench(o):
    from .bench import compare_strategies, write_reports

    _need(o, "data", "out")
    checkpoints = {}
    for path in _str_list(o["checkpoint"] or ""):
        params = _load(path)
        label = f"decision_k{params.k}"
        if label in checkpoints:
            label = f"{label}_{len(checkpoints)}"
        checkpoints[label] = params
    rows = compare_strategies(_dataset(o["data"]), checkpoints, seeds=_int_list(o["seeds"]))
    write_reports(rows, o["out"], plots=_bool(o["plots"]))
    for label, rep in rows.items():
        print(f"{label:16s} OS@0.6 {rep.os06:.4f}  DP@20 {rep.dp20:.4f}  AUC {rep.auc:.4f}")


def cmd_selftest(o):
    from .selftest import run_all

    return 0 if run_all(verbose=True) else 1


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


COMMANDS = dict(gen=cmd_gen, rate=cmd_rate, train=cmd_train, track=cmd_track, bench=cmd_bench, selftest=cmd_selftest)


def main(argv=None):
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return exc.code if isinstance(exc.code, int) else 2
    try:
        opts = resolve(ns.command, ns)
        status = COMMANDS[ns.command](opts)
    except CliError as exc:
        print(f"cfselect {ns.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"cfselect {ns.command}: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
