"""Command-line harness: theorem verification, training, recovery, reports.

Exit codes are a stable contract: 0 on success, 1 when a verification suite
or experiment fails, 2 for usage errors (bad flags, malformed configs).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import glob as globlib
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import diffcomp as dc
from . import findist
from .channel import ConfusionMatrix, analyze, make_uniform_flip, push_forward
from .data import MixtureSpec, inject_noise, make_mixture
from .errors import (
    FormatError,
    InvalidArgumentError,
    NcglError,
)
from .models import GeneratorParams, train_classifier
from .recovery import RecoveryConfig, recover_label_batch
from .theory import (
    build_counterexample,
    check_thm1,
    check_thm2_bounded,
    counterexample_instance,
    empirical_convergence,
    random_full_rank_channel,
    random_joint,
    transform_identity_gap,
    witness_tight,
)
from .training import ExperimentConfig, TrainingAborted, train

# evaluation-classifier recipe shared by every training run so that metric
# logs from different runs are comparable (and bitwise reproducible)
_EVAL_CLF = dict(hidden=(16,), epochs=40, lr=0.05, seed=5)


def _thread_count() -> int:
    raw = os.environ.get("NCGL_THREADS", "")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError as e:
            raise InvalidArgumentError(f"NCGL_THREADS must be an integer, got {raw!r}") from e
    return max(1, os.cpu_count() or 1)


# -- verify ----------------------------------------------------------------


def _instance_rng(seed: int, tag: int, i: int) -> np.random.Generator:
    # one independent stream per (suite, instance): results cannot depend on
    # scheduling order across the worker pool
    return np.random.default_rng(np.random.SeedSequence([seed, tag, i]))


def _check_sandwich(seed: int, i: int) -> bool:
    rng = _instance_rng(seed, 1, i)
    m = int(rng.integers(2, 6))
    support = int(rng.integers(2, 11))
    p, q = random_joint(rng, support, m), random_joint(rng, support, m)
    c = random_full_rank_channel(rng, m)
    tv, js = check_thm1(p, q, c)
    return tv.lower_ok and tv.upper_ok and js.lower_ok and js.upper_ok


def _check_bounded(seed: int, i: int) -> bool:
    rng = _instance_rng(seed, 2, i)
    m = int(rng.integers(2, 6))
    support = int(rng.integers(2, 11))
    p, q = random_joint(rng, support, m), random_joint(rng, support, m)
    c = random_full_rank_channel(rng, m)
    c1 = float(-rng.uniform(0.2, 2.0))
    c2 = float(rng.uniform(0.2, 2.0))
    rep = check_thm2_bounded(p, q, c, c1, c2)
    return (rep.lower_ok and rep.upper_ok
            and transform_identity_gap(p, q, c, c1, c2) <= 1e-10)


def _check_tightness(seed: int, i: int) -> bool:
    rng = _instance_rng(seed, 3, i)
    m = int(rng.integers(2, 7))
    c = random_full_rank_channel(rng, m)
    kappa = analyze(c).max_norm_inv
    p, q = witness_tight(c, 1e-3, "upper")
    ratio = findist.divergence(p, q, "TV") / findist.divergence(
        push_forward(p, c), push_forward(q, c), "TV")
    if abs(ratio - kappa) > 1e-9:
        return False
    p, q = witness_tight(c, 1e-3, "lower")
    gap = abs(findist.divergence(p, q, "TV") - findist.divergence(
        push_forward(p, c), push_forward(q, c), "TV"))
    return gap <= 1e-9


def _check_counterexample(seed: int, i: int) -> bool:
    rng = _instance_rng(seed, 4, i)
    try:
        p, q, c = counterexample_instance(rng)
    except RuntimeError:
        return False
    gaps = {eps: build_counterexample(p, q, c, eps) for eps in (0.1, 0.01, 0.001)}
    ga, gb = gaps[0.01]
    if ga < 10.0 or gb < 10.0:
        return False
    # the growth as the slab tightens is asserted, not searched for
    return (gaps[0.001][0] > gaps[0.01][0] > gaps[0.1][0]
            and gaps[0.001][1] > gaps[0.01][1] > gaps[0.1][1])


def _check_convergence(seed: int, i: int) -> bool:
    rng = _instance_rng(seed, 5, i)
    p, q = random_joint(rng, 4, 3), random_joint(rng, 4, 3)
    table = empirical_convergence(p, q, [100, 10000], trials=10, rng=rng)
    return table.monotone_ok and table.mean_devs[-1] <= table.mean_devs[0]


_SUITES = (
    ("tv-js-sandwich", _check_sandwich, 1.0),
    ("bounded-class-sandwich", _check_bounded, 1.0),
    ("tightness-witnesses", _check_tightness, 0.05),
    ("counterexample-gaps", _check_counterexample, 0.05),
    ("empirical-convergence", _check_convergence, 0.01),
)


def cmd_verify(args) -> int:
    total = args.instances
    rows = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        for name, fn, fraction in _SUITES:
            count = max(1, int(math.ceil(total * fraction)))
            results = list(pool.map(lambda i, f=fn: f(args.seed, i), range(count)))
            failures = results.count(False)
            rows.append((name, count, failures))
    width = max(len(r[0]) for r in rows)
    print(f"{'suite':{width}}  instances  failures  status")
    for name, count, failures in rows:
        status = "pass" if failures == 0 else "FAIL"
        print(f"{name:{width}}  {count:9d}  {failures:8d}  {status}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["suite,instances,failures,status"]
        lines += [f"{n},{c},{f},{'pass' if f == 0 else 'fail'}" for n, c, f in rows]
        (out / "verify.csv").write_text("\n".join(lines) + "\n")
    return 0 if all(f == 0 for _, _, f in rows) else 1


# -- train -------------------------------------------------------------------


def config_hash(doc: dict) -> str:
    """sha256 of the canonical-JSON form; stable under key reordering."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _channel_from_config(data_cfg: dict, m: int) -> ConfusionMatrix:
    if "channel" in data_cfg:
        entries = np.asarray(data_cfg["channel"], dtype=np.float64)
        return ConfusionMatrix(m=m, entries=entries)
    if "pi" in data_cfg:
        return make_uniform_flip(m, float(data_cfg["pi"]))
    raise InvalidArgumentError("data config needs either 'pi' or an explicit 'channel'")


def _load_run_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise InvalidArgumentError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "data" not in doc or "train" not in doc:
        raise FormatError("run config must be an object with 'data' and 'train' sections")
    return doc


def run_experiment(doc: dict, out_dir: Path) -> dict:
    """Build the dataset, train, save artifacts; returns the manifest."""
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    data_cfg = dict(doc["data"])
    data_seed = int(data_cfg.pop("seed", 0))
    noise_seed = int(data_cfg.pop("noise_seed", data_seed + 1000))
    pi_or_channel = {k: data_cfg.pop(k) for k in ("pi", "channel") if k in data_cfg}
    try:
        spec = MixtureSpec(**data_cfg)
        config = ExperimentConfig.from_json(json.dumps(doc["train"]))
    except TypeError as e:
        raise InvalidArgumentError(f"run config has an unknown field: {e}") from e
    c_true = _channel_from_config(pi_or_channel, spec.m)
    clean = make_mixture(spec, data_seed)
    noisy = inject_noise(clean, c_true, noise_seed)
    needs_c = config.variant in ("Unbiased", "RCGAN", "RCGAN_plus_y", "AmbientStyle")
    give_c = bool(doc.get("known_channel", needs_c))
    f_eval, _ = train_classifier(clean.x, clean.clean_labels, m=spec.m, **_EVAL_CLF)

    artifacts = train(config, noisy.train_view(),
                      c_known=c_true if give_c else None,
                      eval_classifier=f_eval, eval_channel=c_true)
    artifacts.save(out_dir)
    (out_dir / "run_config.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n")
    manifest = {
        "config_hash": config_hash(doc),
        "seed": config.seed,
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": sorted(p.name for p in out_dir.iterdir() if p.is_file()),
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def cmd_train(args) -> int:
    doc = _load_run_config(args.config)
    if args.seed is not None:
        doc["train"]["seed"] = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        manifest = run_experiment(doc, out)
    except TrainingAborted as e:
        print(f"run aborted: {e}", file=sys.stderr)
        return 1
    rows_path = out / "metrics.csv"
    n_rows = sum(1 for _ in rows_path.open()) - 1
    print(f"wrote {out} ({n_rows} metric rows, config {manifest['config_hash'][:12]})")
    return 0


# -- recover -----------------------------------------------------------------


def _load_generator(checkpoint_dir: Path) -> GeneratorParams:
    cfg_path = checkpoint_dir / "config.json"
    ckpt_path = checkpoint_dir / "gen.ckpt"
    if not cfg_path.exists() or not ckpt_path.exists():
        raise InvalidArgumentError(
            f"{checkpoint_dir} needs config.json and gen.ckpt from a training run")
    config = ExperimentConfig.from_json(cfg_path.read_text())
    weights = dc.load_checkpoint(ckpt_path)
    first = weights["w0"]
    last_idx = max(int(k[1:]) for k in weights if k.startswith("w"))
    d_x = weights[f"w{last_idx}"].shape[1]
    m = first.shape[0] - config.d_z
    return GeneratorParams(d_z=config.d_z, m=m, d_x=d_x,
                           hidden=config.g_hidden, weights=weights)


def _read_samples_csv(path) -> tuple[list, np.ndarray]:
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as e:
        raise InvalidArgumentError(f"cannot read {path}: {e}") from e
    if not lines:
        raise FormatError(f"{path} is empty")
    rows = [ln.split(",") for ln in lines]
    try:
        float(rows[0][1])
    except (ValueError, IndexError):
        rows = rows[1:]  # header row
    if not rows:
        raise FormatError(f"{path} has a header but no samples")
    ids = [r[0] for r in rows]
    try:
        x = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{path}: non-numeric feature value ({e})") from e
    return ids, x


def cmd_recover(args) -> int:
    gen = _load_generator(Path(args.checkpoint))
    ids, x = _read_samples_csv(args.input)
    if x.shape[1] != gen.d_x:
        raise InvalidArgumentError(
            f"samples have {x.shape[1]} features, generator outputs {gen.d_x}")
    cfg = RecoveryConfig(restarts=args.restarts, steps=args.steps)
    rng = np.random.default_rng(args.seed)
    labels, residuals = recover_label_batch(x, gen, cfg, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["sample_id", "recovered_label"] + [
        f"residual_{k}" for k in range(gen.m)]
    lines = [",".join(header)]
    for sid, lab, res in zip(ids, labels, residuals):
        lines.append(",".join([sid, str(int(lab))] + [repr(float(r)) for r in res]))
    (out / "recovered.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'recovered.csv'} ({len(ids)} samples)")
    return 0


# -- report --------------------------------------------------------------------


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _collect_runs(pattern: str) -> list[dict]:
    runs = []
    for match in sorted(globlib.glob(pattern)):
        p = Path(match)
        run_dir = p if p.is_dir() else p.parent
        metrics = run_dir / "metrics.csv"
        run_cfg = run_dir / "run_config.json"
        if not metrics.exists() or not run_cfg.exists():
            continue
        doc = json.loads(run_cfg.read_text())
        lines = metrics.read_text().splitlines()
        if len(lines) < 2:
            continue
        header, final = lines[0].split(","), lines[-1].split(",")
        row = dict(zip(header, final))
        runs.append({
            "variant": doc["train"]["variant"],
            "pi": float(doc["data"].get("pi", float("nan"))),
            "seed": int(doc["train"].get("seed", 0)),
            "epochs": int(row["epoch"]) + 1,
            "gen_label_acc": float(row["gen_label_acc"]),
            "m_error": float(row["m_error"]),
            "loss_d": float(row["loss_d"]),
            "loss_g": float(row["loss_g"]),
            "run_dir": str(run_dir),
        })
    return runs


def _svg_chart(series: dict, out_path: Path) -> None:
    """Accuracy-vs-noise line chart; one polyline per variant, no deps."""
    w, h, ml, mr, mt, mb = 640, 420, 60, 150, 20, 50
    pw, ph = w - ml - mr, h - mt - mb
    xs = sorted({pi for pts in series.values() for pi, _ in pts})
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 0.05, x_hi + 0.05

    def sx(pi):
        return ml + (pi - x_lo) / (x_hi - x_lo) * pw

    def sy(acc):
        return mt + (1.0 - acc) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end">{frac:.2f}</text>')
    for pi in xs:
        x = sx(pi)
        parts.append(f'<line x1="{x:.1f}" y1="{mt + ph}" x2="{x:.1f}" y2="{mt + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle">{pi:g}</text>')
    parts.append(f'<text x="{ml + pw / 2:.0f}" y="{h - 10}" text-anchor="middle">'
                 'channel diagonal (probability the label survives)</text>')
    parts.append(f'<text x="14" y="{mt + ph / 2:.0f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {mt + ph / 2:.0f})">generator label accuracy</text>')
    for k, (variant, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[k % len(_PALETTE)]
        pts = sorted(pts)
        coords = " ".join(f"{sx(pi):.1f},{sy(acc):.1f}" for pi, acc in pts)
        if len(pts) > 1:
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for pi, acc in pts:
            parts.append(f'<circle cx="{sx(pi):.1f}" cy="{sy(acc):.1f}" r="3" fill="{color}"/>')
        ly = mt + 16 + 18 * k
        parts.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 36}" y="{ly}">{variant}</text>')
    parts.append("</svg>")
    out_path.write_text("\n".join(parts) + "\n")


def cmd_report(args) -> int:
    runs = _collect_runs(args.glob)
    if not runs:
        raise InvalidArgumentError(f"no runs matched {args.glob!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["variant", "pi", "seed", "epochs", "gen_label_acc", "m_error",
            "loss_d", "loss_g", "run_dir"]
    lines = [",".join(cols)]
    for r in sorted(runs, key=lambda r: (r["variant"], r["pi"], r["seed"])):
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in cols))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    series: dict = {}
    for r in runs:
        if math.isfinite(r["pi"]) and math.isfinite(r["gen_label_acc"]):
            series.setdefault(r["variant"], {}).setdefault(r["pi"], []).append(
                r["gen_label_acc"])
    averaged = {v: [(pi, float(np.mean(accs))) for pi, accs in by_pi.items()]
                for v, by_pi in series.items()}
    _svg_chart(averaged, out / "report.svg")
    print(f"wrote {out / 'summary.csv'} and {out / 'report.svg'} "
          f"({len(runs)} runs, {len(averaged)} variants)")
    return 0


# -- entry -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncgl",
        description="Conditional GAN training under label noise: verification, "
                    "training, label recovery, and reporting.")
    parser.add_argument("--version", action="version", version=f"ncgl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the randomized bound-checking suites")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional directory for verify.csv")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("train", help="train one variant from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the training seed in the config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("recover", help="recover clean labels by generator inversion")
    p.add_argument("--checkpoint", required=True, help="a train output directory")
    p.add_argument("--input", required=True, help="CSV: sample_id, then features")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--steps", type=int, default=200)
    p.set_defaults(fn=cmd_recover)

    p = sub.add_parser("report", help="aggregate run logs into a summary CSV + SVG")
    p.add_argument("--glob", required=True, dest="glob",
                   help="pattern matching run directories or their metrics.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InvalidArgumentError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NcglError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
