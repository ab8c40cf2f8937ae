"""Command-line surface: experiment recipes driven by one JSON config.

    stochland <command> --config run.json [--seed N] [--out DIR]

Commands: simulate, sample, moments, fit-moments, bridge, likelihood, fit-em,
synth.  Every run writes its result files plus manifest.json (command, config
hash, embedded config, seed, versions), so outputs are reproducible from the
manifest alone.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, bridge as bridge_mod, datasets, dynamics, em as em_mod
from . import moments as moments_mod, noise as noise_mod, optimize, sde as sde_mod
from .config import ExperimentConfig, _array, _get, _number, load_config
from .dynamics import PhaseState
from .errors import ConfigError, NumericalError
from .params import Theta

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _manifest(out: Path, command: str, cfg: ExperimentConfig, outputs) -> None:
    _write_json(out / "manifest.json", {
        "schema_version": 1,
        "command": command,
        "config": cfg.raw,
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "stochland": __version__,
        },
        "outputs": sorted(outputs),
    })


def _trajectory_csv(path: Path, traj) -> None:
    d = traj.q.shape[-1]
    header = (["t", "landmark_index"]
              + [f"q_{a+1}" for a in range(d)] + [f"p_{a+1}" for a in range(d)])
    _write_csv(path, header, dynamics.trajectory_to_rows(traj))


def _load_dataset(cfg: ExperimentConfig) -> datasets.ShapeDataset:
    sec = cfg.section("data")
    path = _get(sec, "input", "data", types=str, required=True)
    base = Path(cfg.path).parent if cfg.path else Path(".")
    full = Path(path) if Path(path).is_absolute() else base / path
    if not full.exists():
        raise ConfigError(f"data.input: dataset file not found: {full}")
    return datasets.ShapeDataset.load(full)


# ---- commands -----------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> list[str]:
    q0, p0 = cfg.initial()
    kv = cfg.kernel()
    state0 = PhaseState(q0, p0)
    if "noise" in cfg.raw:
        noise = cfg.noise(n_landmarks=q0.shape[0])
        traj = sde_mod.integrate_sde(state0, kv, noise, cfg.sde())
    else:
        sec = cfg.section("sde")
        dt = _number(sec, "dt", "sde", required=True, positive=True)
        traj = dynamics.integrate_deterministic(state0, kv, cfg.horizon(), dt)
    _trajectory_csv(out / "trajectory.csv", traj)
    return ["trajectory.csv"]


def cmd_sample(cfg: ExperimentConfig, out: Path) -> list[str]:
    q0, p0 = cfg.initial()
    kv = cfg.kernel()
    noise = cfg.noise(n_landmarks=q0.shape[0])
    ens = cfg.section("ensemble")
    n = _get(ens, "n_samples", "ensemble", types=int, required=True)
    save_endpoints = bool(_get(ens, "save_endpoints", "ensemble", default=True))
    summary, endpoints = sde_mod.sample_ensemble(
        PhaseState(q0, p0), kv, noise, cfg.sde(), n, return_endpoints=True)
    outputs = []
    if save_endpoints:
        ds = datasets.ShapeDataset(d=q0.shape[1], n_landmarks=q0.shape[0],
                                   shapes=endpoints,
                                   provenance=f"simulated endpoints (seed={cfg.seed})")
        ds.save(out / "endpoints.json")
        outputs.append("endpoints.json")
    _write_json(out / "result.json", {
        "schema_version": 1,
        "n_samples": n,
        "mean_q": summary.mean_q.tolist(),
        "cov_qq": summary.cov_qq.tolist(),
    })
    outputs.append("result.json")
    return outputs


def cmd_moments(cfg: ExperimentConfig, out: Path) -> list[str]:
    q0, p0 = cfg.initial()
    kv = cfg.kernel()
    noise = cfg.noise(n_landmarks=q0.shape[0])
    sec = cfg.section("moments")
    dt = _number(sec, "dt", "moments", required=True, positive=True)
    ms0 = moments_mod.MomentState.zero_cov(q0, p0)
    ms1, path = moments_mod.integrate_moments(ms0, kv, noise, cfg.horizon(), dt,
                                              return_path=True)
    _write_csv(out / "moments.csv", ["t", "block", "i", "j", "value"],
               moments_mod.moments_to_rows(path))
    _write_json(out / "result.json", {
        "schema_version": 1,
        "mean_q": ms1.mean_q.tolist(),
        "cov_qq_blocks": ms1.landmark_cov_blocks().tolist(),
    })
    return ["moments.csv", "result.json"]


def cmd_fit_moments(cfg: ExperimentConfig, out: Path) -> list[str]:
    q0, p0 = cfg.initial()
    kv = cfg.kernel()
    noise_template = cfg.noise(n_landmarks=q0.shape[0])
    data = _load_dataset(cfg)
    if data.n_landmarks != q0.shape[0]:
        raise ConfigError(
            f"data.input: dataset has {data.n_landmarks} landmarks, "
            f"initial configuration has {q0.shape[0]}")
    targets = moments_mod.targets_from_shapes(data.shapes)
    sec = cfg.section("fit_moments")
    gamma1 = _number(sec, "gamma1", "fit_moments", default=1.0, positive=True)
    gamma2 = _number(sec, "gamma2", "fit_moments", default=1.0, positive=True)
    dt = _number(sec, "dt", "fit_moments", default=0.04, positive=True)
    estimate_p0 = bool(_get(sec, "estimate_p0", "fit_moments", default=True))
    lam_bounds = _array(sec, "lambda_bounds", "fit_moments", default=[0.0, 1.0])
    p0_bounds = _array(sec, "p0_bounds", "fit_moments", default=[-2.0, 2.0])
    lam_shape = np.asarray(noise_template.lams).shape \
        if isinstance(noise_template, noise_mod.EulerianNoise) \
        else np.asarray(noise_template.lambdas).shape
    n_lam = int(np.prod(lam_shape))
    n_p = p0.size if estimate_p0 else 0
    bounds = np.concatenate([
        np.tile(p0_bounds, (n_p, 1)) if n_p else np.empty((0, 2)),
        np.tile(lam_bounds, (n_lam, 1)),
    ])
    T = cfg.horizon()

    def unpack(x):
        mean_p0 = x[:n_p].reshape(p0.shape) if n_p else p0
        lams = x[n_p:].reshape(lam_shape)
        return mean_p0, lams

    def objective(x):
        mean_p0, lams = unpack(x)
        return moments_mod.moment_cost(mean_p0, lams, targets, gamma1, gamma2,
                                       kv, noise_template, q0, T, dt)

    de_cfg = cfg.de("fit_moments", bounds, cfg.seed)
    res = optimize.minimize(objective, de_cfg)
    best_p0, best_lams = unpack(res.best_x)
    _write_csv(out / "de_trace.csv", ["generation", "best_cost"],
               [[g, v] for g, v in enumerate(res.trace)])
    final = moments_mod.integrate_moments(
        moments_mod.MomentState.zero_cov(q0, best_p0), kv,
        noise_template.with_lambdas(best_lams), T, min(dt, 0.01))
    _write_json(out / "result.json", {
        "schema_version": 1,
        "cost": res.best_f,
        "n_evaluations": res.n_evaluations,
        "theta": {"q0": q0.tolist(), "p0": best_p0.tolist(),
                  "lambdas": best_lams.tolist()},
        "fitted_mean_q": final.mean_q.tolist(),
        "fitted_cov_blocks": final.landmark_cov_blocks().tolist(),
        "target_mean_q": targets.mean_q.tolist(),
        "target_cov_blocks": targets.cov_blocks.tolist(),
    })
    return ["de_trace.csv", "result.json"]


def cmd_bridge(cfg: ExperimentConfig, out: Path) -> list[str]:
    q0, p0 = cfg.initial()
    kv = cfg.kernel()
    noise = cfg.noise(n_landmarks=q0.shape[0])
    data = _load_dataset(cfg)
    sec = cfg.section("bridge")
    target_index = _get(sec, "target_index", "bridge", types=int, default=0)
    n_dump = _get(sec, "n_dump", "bridge", types=int, default=3)
    if not (0 <= target_index < len(data)):
        raise ConfigError(f"bridge.target_index: out of range for dataset of {len(data)}")
    v = data.shapes[target_index]
    bcfg = cfg.bridge()
    T = cfg.horizon()
    state0 = PhaseState(q0, p0)
    times, qs, ps, logw, gaps = bridge_mod.sample_bridges(state0, kv, noise, v, T, bcfg)
    w = np.exp(logw - logw.max())
    ess = float(w.sum()**2 / np.sum(w**2))
    outputs = []
    for m in range(min(n_dump, bcfg.n_samples)):
        traj = dynamics.Trajectory(times=times, q=qs[:, m], p=ps[:, m])
        name = f"bridge_{m:03d}.csv"
        _trajectory_csv(out / name, traj)
        _write_json(out / f"bridge_{m:03d}.json",
                    {"log_weight": float(logw[m]), "endpoint_gap": float(gaps[m])})
        outputs += [name, f"bridge_{m:03d}.json"]
    _write_json(out / "result.json", {
        "schema_version": 1,
        "n_samples": int(bcfg.n_samples),
        "mean_endpoint_gap": float(gaps.mean()),
        "ess": ess,
    })
    return outputs + ["result.json"]


def cmd_likelihood(cfg: ExperimentConfig, out: Path) -> list[str]:
    q0, p0 = cfg.initial()
    kv = cfg.kernel()
    noise = cfg.noise(n_landmarks=q0.shape[0])
    data = _load_dataset(cfg)
    lams = noise.lams if isinstance(noise, noise_mod.EulerianNoise) else noise.lambdas
    theta = Theta(q0, p0, np.asarray(lams))
    total, esses = bridge_mod.log_likelihood(theta, noise, data.shapes, kv,
                                             cfg.horizon(), cfg.bridge())
    _write_json(out / "result.json", {
        "schema_version": 1,
        "log_likelihood": total,
        "per_observation_ess": esses.tolist(),
        "n_observations": len(data),
    })
    return ["result.json"]


def cmd_fit_em(cfg: ExperimentConfig, out: Path) -> list[str]:
    kv = cfg.kernel()
    data = _load_dataset(cfg)
    sec = cfg.section("em")
    noise_template = cfg.noise(n_landmarks=data.n_landmarks)
    init_lambda = _number(sec, "init_lambda", "em", default=1.0, positive=True)
    if isinstance(noise_template, noise_mod.EulerianNoise):
        lam0 = np.full_like(np.asarray(noise_template.lams), init_lambda)
    else:
        lam0 = np.full_like(np.asarray(noise_template.lambdas), init_lambda)
    q0_init = data.shapes.mean(axis=0)
    p0_init = np.zeros_like(q0_init)
    init = Theta(q0_init, p0_init, lam0)
    em_cfg = em_mod.EmConfig(
        bridge=cfg.bridge(),
        lambda_bounds=tuple(_array(sec, "lambda_bounds", "em", default=[1e-3, 5.0])),
        q0_halfwidth=_number(sec, "q0_halfwidth", "em", default=0.5, positive=True),
        estimate_p0=bool(_get(sec, "estimate_p0", "em", default=False)),
        max_iters=_get(sec, "max_iters", "em", types=int, default=20),
        tol=_number(sec, "tol", "em", default=1e-3, positive=True),
        m_generations=_get(sec, "m_generations", "em", types=int, default=10),
        m_population=_get(sec, "m_population", "em", types=int, default=None),
        seed=cfg.seed,
    )
    theta, trace = em_mod.fit_em(data.shapes, init, kv, noise_template,
                                 cfg.horizon(), em_cfg)
    _write_csv(out / "em_trace.csv",
               ["iteration", "parameter_name", "value", "Q_estimate", "ess"],
               trace.to_rows())
    _write_json(out / "result.json", {
        "schema_version": 1,
        "converged": trace.converged,
        "iterations": len(trace),
        "theta": {"q0": theta.q0.tolist(), "p0": theta.p0.tolist(),
                  "lambdas": theta.lambdas.tolist()},
    })
    return ["em_trace.csv", "result.json"]


def cmd_synth(cfg: ExperimentConfig, out: Path) -> list[str]:
    sec = cfg.section("synth")
    kind = _get(sec, "kind", "synth", types=str, required=True)
    if kind == "ellipse":
        n = _get(sec, "n_landmarks", "synth", types=int, required=True)
        center = _array(sec, "center", "synth", default=[0.0, 0.0])
        axes = _array(sec, "axes", "synth", default=[1.0, 1.0])
        rotation = _number(sec, "rotation", "synth", default=0.0)
        try:
            shape = datasets.synth_ellipse(n, center, axes, rotation)
        except ValueError as exc:
            raise ConfigError(f"synth: {exc}") from None
        ds = datasets.ShapeDataset(d=2, n_landmarks=n, shapes=shape[None],
                                   provenance="synthetic ellipse")
    elif kind == "cc-like":
        ds = datasets.synth_cc_like(
            n_shapes=_get(sec, "n_shapes", "synth", types=int, default=65),
            n_landmarks=_get(sec, "n_landmarks", "synth", types=int, default=77),
            seed=cfg.seed,
            variability=_number(sec, "variability", "synth", default=0.03, positive=True),
        )
    else:
        raise ConfigError(f"synth.kind: unknown kind {kind!r}")
    ds.save(out / "dataset.json")
    return ["dataset.json"]


_COMMANDS = {
    "simulate": cmd_simulate,
    "sample": cmd_sample,
    "moments": cmd_moments,
    "fit-moments": cmd_fit_moments,
    "bridge": cmd_bridge,
    "likelihood": cmd_likelihood,
    "fit-em": cmd_fit_em,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochland",
        description="Stochastic landmark dynamics: simulation and estimation recipes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        outputs = _COMMANDS[args.command](cfg, out)
        _manifest(out, args.command, cfg, outputs + ["manifest.json"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
