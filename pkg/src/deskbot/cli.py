"""Command-line pipeline: collect, validate, align, train, finetune, eval,
rollout, serve, plot.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 endpoint error.
Flag precedence: command-line flags > --config file > built-in defaults.
All primary outputs (checkpoints, report.json, loss.csv) are canonical, so
identical flags and seeds reproduce them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bridge as bridge_mod
from . import evalkit
from .errors import (AlignRateTooHigh, BadRange, BadSamplerConfig, BadTimestep,
                     BindError, BridgeTimeout, DeskbotError, EmptyDataset,
                     EndpointUnavailable, FrameTooLarge, HandshakeRejected)
from .policy import (BCPolicy, DiffusionPolicy, finetune, load_checkpoint,
                     save_checkpoint)
from .policy.base import round_f32
from .recorder import (align, load_episode, load_raw_recording, save_episode,
                       validate_frequencies)
from .simworld import (IDENTITY_VIEW, SessionConfig, collect_episode, get_task,
                       make_view, session_stream_specs)

_CONFIG_ERRORS = (BadRange, BadTimestep, BadSamplerConfig, ValueError,
                  FileNotFoundError, NotADirectoryError)
_ENDPOINT_ERRORS = (EndpointUnavailable, BridgeTimeout, HandshakeRejected,
                    BindError, FrameTooLarge)

# selection sampler: cheap, fixed; quality eval passes --steps explicitly
_SELECT_STEPS = 10


def _parse_view(text: str):
    """"front" or "name:degrees" (rotation about the workspace center)."""
    if ":" not in text:
        return IDENTITY_VIEW if text == "front" else make_view(text)
    name, _, deg = text.partition(":")
    return make_view(name, np.deg2rad(float(deg)))


def _episode_dirs(data_dir: Path) -> list[Path]:
    dirs = sorted(p for p in Path(data_dir).iterdir()
                  if p.is_dir() and (p / "meta.json").exists())
    if not dirs:
        raise EmptyDataset(f"no episode directories under {data_dir}")
    return dirs


def _load_episodes(data_dir: Path):
    return [load_episode(d) for d in _episode_dirs(data_dir)]


def _print_freq_report(name: str, report):
    for topic in sorted(report.topics):
        t = report.topics[topic]
        flag = "ok" if t.passed else "FAIL " + ";".join(t.reasons)
        print(f"{name} {topic}: {t.n_frames} frames {t.mean_hz:.2f} Hz {flag}")


# --- commands ---

def cmd_collect(args) -> int:
    task = get_task(args.task, args.task_file)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    view = _parse_view(args.view)

    def one(i: int) -> bool:
        ns = f"s{i % args.jobs}/" if args.jobs > 1 else ""
        cfg = SessionConfig(operator=args.operator, view=view,
                            include_grid=args.include_grid,
                            noise_sigma=args.noise, namespace=ns)
        raw, ep, res = collect_episode(task, args.seed + i, cfg,
                                       align_hz=args.align_hz)
        report = validate_frequencies(raw)
        ep.meta["success"] = res.success
        dirname = out / f"ep_{args.seed + i:05d}"
        save_episode(ep, dirname, recording=raw if args.keep_raw else None)
        _print_freq_report(dirname.name, report)
        return report.passed

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            passed = list(pool.map(one, range(args.n_demos)))
    else:
        passed = [one(i) for i in range(args.n_demos)]
    print(f"collected {args.n_demos} episodes -> {out}")
    return 0 if all(passed) else 3


def cmd_validate(args) -> int:
    ok = True
    for d in _episode_dirs(Path(args.data)):
        raw = load_raw_recording(d)
        report = validate_frequencies(raw)
        _print_freq_report(d.name, report)
        ok = ok and report.passed
    return 0 if ok else 3


def cmd_align(args) -> int:
    out = Path(args.out) if args.out else None
    for d in _episode_dirs(Path(args.data)):
        raw = load_raw_recording(d)
        ep = align(raw, align_hz=args.align_hz)
        ep.meta.setdefault("success", json.loads(
            (d / "meta.json").read_text()).get("success"))
        target = (out / d.name) if out else d
        save_episode(ep, target)
        print(f"{d.name}: {len(ep.ticks)} ticks at {args.align_hz} Hz -> {target}")
    return 0


def _write_loss_csv(path: Path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, repr(float(v))])


def _heldout_split(episodes):
    """Last 10% of episodes by seed order (at least one) for selection."""
    eps = sorted(episodes, key=lambda e: e.meta["seed"])
    n_hold = max(1, len(eps) // 10)
    return eps[:-n_hold], eps[-n_hold:]


def _build_policy(args):
    common = dict(hidden=tuple(args.enc_hidden), embedding_dim=args.embedding_dim,
                  T_o=args.T_o, T_p=args.T_p, T_a=args.T_a, epochs=args.epochs,
                  batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                  encoder=args.encoder, grid_field=args.grid_field)
    if args.arch == "bc":
        return BCPolicy(trunk_hidden=tuple(args.denoiser_hidden), **common)
    return DiffusionPolicy(denoiser_hidden=tuple(args.denoiser_hidden),
                           T=args.T, beta_min=args.beta_min,
                           beta_max=args.beta_max, **common)


def cmd_train(args) -> int:
    episodes = _load_episodes(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_eps, heldout = _heldout_split(episodes)
    policy = _build_policy(args)
    every = args.ckpt_every or max(1, args.epochs // 4)
    saved = []

    def hook(epoch: int, pol):
        if (epoch + 1) % every == 0 and (epoch + 1) < args.epochs:
            live = pol.params_
            pol.params_ = round_f32(live)
            path = out / f"ckpt_ep{epoch + 1:05d}.json"
            save_checkpoint(pol, path)
            saved.append(path)
            pol.params_ = live

    policy.fit(train_eps, epoch_hook=hook)
    final = out / f"ckpt_ep{args.epochs:05d}.json"
    save_checkpoint(policy, final)
    saved.append(final)
    _write_loss_csv(out / "loss.csv", policy.loss_curve_)

    best, best_mse = None, None
    for path in saved:
        m = evalkit.action_mse(str(path), heldout, seed=args.seed,
                               steps=_SELECT_STEPS)
        print(f"{path.name}: heldout action-MSE {m.aggregate:.6g}")
        if best_mse is None or m.aggregate < best_mse:
            best, best_mse = path, m.aggregate
    link = out / "best.json"
    if link.is_symlink() or link.exists():
        link.unlink()
    link.symlink_to(best.name)
    print(f"final loss {policy.loss_curve_[-1]:.6g}; best {best.name} "
          f"(heldout MSE {best_mse:.6g})")
    return 0


def cmd_finetune(args) -> int:
    parent = load_checkpoint(args.parent)
    episodes = _load_episodes(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tuned = finetune(parent, episodes, epochs=args.epochs, seed=args.seed,
                     parent_path=str(args.parent), lr=args.lr)
    path = out / "ckpt_finetuned.json"
    save_checkpoint(tuned, path)
    _write_loss_csv(out / "loss.csv", tuned.loss_curve_)
    prov = tuned.provenance_
    print(f"finetuned {args.parent} -> {path}")
    print(f"provenance: tasks={','.join(prov['tasks'])} epochs={prov['epochs']} "
          f"parent={prov['parent_checkpoint']}")
    return 0


def _make_endpoint(args):
    if getattr(args, "bridge", None):
        return bridge_mod.remote_policy(args.bridge)
    return load_checkpoint(args.ckpt)


def _eval_run(args, with_mse: bool) -> int:
    import time
    t0 = time.monotonic()
    endpoint = _make_endpoint(args)
    task = get_task(args.task, args.task_file)
    view = _parse_view(args.view)
    rr = evalkit.rollout(endpoint, task, n=args.n, seed=args.seed,
                         steps=args.steps, view=view)
    mse = None
    if with_mse and args.data:
        mse = evalkit.action_mse(endpoint, _load_episodes(Path(args.data)),
                                 seed=args.seed, steps=args.steps)
    coverage = None
    if task.name == "bimodal-avoid":
        coverage = _initial_mode_coverage(endpoint, task, args, view)
    report = evalkit.EvalReport(task=task.name, n=args.n, seed=args.seed,
                                success_rate=rr.success_rate, action_mse=mse,
                                mode_coverage=coverage, partial=rr.partial,
                                wall_time=time.monotonic() - t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(evalkit.report_bytes(report) + b"\n")
    evalkit.dump_trajectories(rr.traces, out / "trajectories.csv", "csv")
    evalkit.dump_trajectories(rr.traces, out / "trajectories.svg", "svg")
    print(f"success_rate {rr.success_rate:.3f} over n={args.n} "
          f"(partial={rr.partial}) -> {out}")
    if mse is not None:
        print(f"action_mse aggregate {mse.aggregate:.6g}")
    if coverage is not None:
        print("mode_coverage " + json.dumps(coverage, sort_keys=True))
    return 4 if rr.partial else 0


def _initial_mode_coverage(endpoint, task, args, view):
    from .frames import FieldValue
    from .policy.dataset import flatten_obs
    from .simworld import observe, reset
    from .noise_rng import derive_seed
    chunks = []
    include_grid = "grid" in endpoint.layout_.names
    for i in range(args.n):
        state = reset(task, args.seed + i)
        obs = observe(state, view, include_grid=include_grid)
        flat = flatten_obs({k: FieldValue("f32", v.shape, v)
                            for k, v in obs.items()}, endpoint.layout_)
        window = np.stack([flat] * endpoint.T_o)
        chunks.append(endpoint.sample_chunk(
            window, seed=derive_seed(args.seed, i, 0), steps=args.steps))
    return evalkit.mode_coverage(chunks, T_a=endpoint.T_a)


def cmd_eval(args) -> int:
    return _eval_run(args, with_mse=True)


def cmd_rollout(args) -> int:
    return _eval_run(args, with_mse=False)


def cmd_serve(args) -> int:
    import signal
    import threading
    srv = bridge_mod.serve_builtin(args.ckpt, args.addr)
    stop = threading.Event()
    # handler installed before the address is announced, so a ctrl-c (or a
    # wrapper's SIGINT) can never arrive ahead of the wait and kill us raw
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    print(f"serving {args.ckpt} at {srv.addr} (ctrl-c to stop)", flush=True)
    stop.wait()
    print("shutting down")
    srv.close()
    return 0


def cmd_plot(args) -> int:
    src = Path(args.data)
    out = Path(args.out)
    with open(src) as f:
        rows = list(csv.reader(f))
    header, rows = rows[0], rows[1:]
    if header[:2] == ["epoch", "loss"]:
        _plot_loss(rows, out)
    elif list(header) == list(evalkit._CSV_HEADER):
        traces = _traces_from_csv(rows)
        evalkit.dump_trajectories(traces, out, "svg")
    else:
        raise ValueError(f"unrecognized csv header {header}")
    print(f"wrote {out}")
    return 0


def _plot_loss(rows, out: Path):
    xs = [int(r[0]) for r in rows]
    ys = [float(r[1]) for r in rows]
    w, h, pad = 640, 360, 40
    lo, hi = min(ys), max(ys)
    span = (hi - lo) or 1.0
    pts = " ".join(
        f"{pad + (w - 2 * pad) * (x / max(1, xs[-1])):.1f},"
        f"{h - pad - (h - 2 * pad) * ((y - lo) / span):.1f}"
        for x, y in zip(xs, ys))
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
           f'<rect width="{w}" height="{h}" fill="#fff" stroke="#ccc"/>'
           f'<polyline points="{pts}" fill="none" stroke="#36c" stroke-width="1.5"/>'
           f'<text x="{pad}" y="{h - 8}" font-size="11">epoch 0..{xs[-1]}</text>'
           f'<text x="{pad}" y="14" font-size="11">loss {lo:.4g}..{hi:.4g}</text>'
           "</svg>\n")
    out.write_text(svg)


def _traces_from_csv(rows):
    by_ep = {}
    for ep, tick, t_ns, x, y, grip, succ in rows:
        t = by_ep.setdefault(int(ep), evalkit.EpisodeTrace(episode=int(ep)))
        t.rows.append((int(tick), int(t_ns), float(x), float(y),
                       float(grip), succ == "1"))
        t.success = t.success or succ == "1"
    return [by_ep[k] for k in sorted(by_ep)]


# --- argument plumbing ---

def _add_common(p):
    p.add_argument("--config", help="json file of defaults for this command")
    p.add_argument("--task-file", default=None, help="alternate task spec file")


def _int_list(text: str):
    return [int(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deskbot", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run scripted sessions, save episodes")
    _add_common(p)
    p.add_argument("--task", required=True)
    p.add_argument("--n-demos", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--operator", default="scripted")
    p.add_argument("--view", default="front", help='"front" or "name:degrees"')
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--align-hz", type=float, default=None)
    p.add_argument("--include-grid", action="store_true")
    p.add_argument("--keep-raw", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("validate", help="frequency QA over saved raw streams")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("align", help="re-align saved raw streams")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--align-hz", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_align)

    for name in ("train", "finetune"):
        p = sub.add_parser(name, help=f"{name} a policy, write checkpoints")
        _add_common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--lr", type=float, default=1e-3)
        if name == "train":
            p.add_argument("--arch", choices=("diffusion", "bc"),
                           default="diffusion")
            p.add_argument("--encoder", choices=("state-mlp", "grid-conv"),
                           default="state-mlp")
            p.add_argument("--grid-field", default=None)
            p.add_argument("--enc-hidden", type=_int_list, default=[128])
            p.add_argument("--denoiser-hidden", type=_int_list, default=[256, 256])
            p.add_argument("--embedding-dim", type=int, default=64)
            p.add_argument("--batch-size", type=int, default=64)
            p.add_argument("--T", type=int, default=100)
            p.add_argument("--beta-min", type=float, default=1e-4)
            p.add_argument("--beta-max", type=float, default=0.02)
            p.add_argument("--T-o", type=int, default=2)
            p.add_argument("--T-p", type=int, default=16)
            p.add_argument("--T-a", type=int, default=8)
            p.add_argument("--ckpt-every", type=int, default=0,
                           help="checkpoint period in epochs (0: epochs/4)")
            p.set_defaults(fn=cmd_train)
        else:
            p.add_argument("--parent", required=True)
            p.set_defaults(fn=cmd_finetune, lr=None)

    for name in ("eval", "rollout"):
        p = sub.add_parser(name, help="closed-loop evaluation")
        _add_common(p)
        p.add_argument("--ckpt")
        p.add_argument("--bridge", default=None, help="host:port of a server")
        p.add_argument("--task", required=True)
        p.add_argument("--n", type=int, default=50)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--steps", type=int, default=_SELECT_STEPS)
        p.add_argument("--view", default="front")
        p.add_argument("--out", required=True)
        if name == "eval":
            p.add_argument("--data", default=None,
                           help="episode dir for action-MSE")
            p.set_defaults(fn=cmd_eval)
        else:
            p.set_defaults(fn=cmd_rollout, data=None)

    p = sub.add_parser("serve", help="serve a checkpoint over the bridge")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--addr", default=None,
                   help=f"host:port (default ${bridge_mod.ADDR_ENV} or "
                        f"{bridge_mod.DEFAULT_ADDR})")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("plot", help="render loss.csv or trajectories.csv to svg")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return ap


def _apply_config_file(args, argv):
    """File values fill in only flags the user did not pass explicitly."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as f:
        overrides = json.load(f)
    passed = {a.split("=")[0].lstrip("-").replace("-", "_")
              for a in argv if a.startswith("--")}
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr not in passed and hasattr(args, attr):
            setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        args = _apply_config_file(args, argv)
        return args.fn(args)
    except _ENDPOINT_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 4
    except _CONFIG_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except DeskbotError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
