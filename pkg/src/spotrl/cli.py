"""Command-line pipeline: dataset generation, density and policy training,
fine-tuning, evaluation, and analysis sweeps.

Every command writes into one output directory: its artifacts, the full
configuration as config.json (verbatim, every field), an append-only
metrics.jsonl of timestamped line records, and a manifest.json carrying the
seed plus content hashes of all inputs and outputs. Summary CSVs never
contain timestamps, so rerunning a command with the same inputs and seed
reproduces them byte for byte.

Exit codes separate error families for scripting:

    2  invalid or malformed configuration, bad argument values
    3  a referenced input file does not exist
    4  an input file exists but fails format validation
    5  artifacts disagree on dimensions (dataset vs model vs agent)

Errors print a single machine-parsable line to stderr:
`error: <family>: <message>`.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cvae, data, envs, finetune as ft, spot, tabular
from .autodiff.checkpoint import CheckpointError
from .data import DatasetFormatError

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_DIM = 5

DENSE_LAM_GRID = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
SPARSE_LAM_GRID = (0.025, 0.05, 0.1, 0.25, 0.5, 1.0)


class ConfigError(ValueError):
    """Bad configuration value or malformed config file."""


class DimensionError(ValueError):
    """Input artifacts disagree about state or action dimensions."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Every knob of the pipeline, with desk-scale defaults.

    A fully default config runs end to end on the point maze. Fields set to
    None resolve per environment at use time (dense/sparse splits) exactly as
    the library functions do.
    """

    env: str = "pointmaze"
    regime: str = "stitch"
    data_path: str = ""
    vae_path: str = ""
    agent_path: str = ""
    out_dir: str = ""
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    # dataset
    dataset_size: int = 30_000
    normalize: bool | None = None          # None: dense on, sparse off
    # density model
    vae_family: str = "cvae"               # "cvae" or "gaussian"
    vae_hidden: int = 64
    vae_depth: int = 3
    latent_dim: int | None = None          # None: twice the action dim
    sigma_dec: float = 1.0
    kl_weight: float = 0.5
    vae_iters: int = 20_000
    vae_batch_size: int = 256
    vae_lr: float = 1e-3
    vae_lr_final: float | None = None
    # policy
    hidden: int = 64
    depth: int = 3
    steps: int = 100_000
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_update_freq: int = 2
    actor_lr: float | None = None          # None: 1e-4 sparse, 3e-4 dense
    critic_lr: float = 3e-4
    actor_dropout: float | None = None     # None: 0 sparse, 0.1 dense
    q_norm: bool = True
    reg_samples: int = 1
    lam: float = 0.5
    lam_grid: tuple[float, ...] | None = None  # None: per-env default grid
    eval_interval: int = 5_000
    eval_episodes: int | None = None       # None: 20 sparse, 10 dense
    # fine-tuning
    finetune_steps: int = 30_000
    exploration_noise: float = 0.1
    decay_floor: float = 0.2
    # analysis
    profile_samples: int = 100
    profile_subsample: int = 1_000

    def validate(self) -> None:
        if self.lam < 0.0:
            raise ConfigError(f"lam must be nonnegative, got {self.lam}")
        if self.lam_grid is not None and any(l < 0.0 for l in self.lam_grid):
            raise ConfigError(f"lam grid contains negative entries: {self.lam_grid}")
        if self.vae_family not in ("cvae", "gaussian"):
            raise ConfigError(f"unknown density family {self.vae_family!r}")
        for name in ("dataset_size", "vae_iters", "batch_size", "vae_batch_size",
                     "eval_interval", "reg_samples", "profile_samples",
                     "profile_subsample"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("steps", "finetune_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0.0 < self.decay_floor <= 1.0:
            raise ConfigError(f"decay_floor must be in (0, 1], got {self.decay_floor}")


def config_json(cfg: RunConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True, indent=2) + "\n"


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    for key in ("seeds", "lam_grid"):
        if isinstance(raw.get(key), list):
            raw[key] = tuple(raw[key])
    try:
        return RunConfig(**raw)
    except TypeError as err:
        raise ConfigError(f"{path}: {err}") from None


def default_lam_grid(env_name: str) -> tuple[float, ...]:
    sparse = envs.make_env(env_name).spec.reward_kind == "sparse"
    return SPARSE_LAM_GRID if sparse else DENSE_LAM_GRID


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRecord:
    """One timestamped line of the append-only metrics log."""

    run_id: str
    stage: str
    step: int
    metrics: dict
    time: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def append_metrics(out_dir: Path, run_id: str, stage: str, step: int,
                   metrics: dict) -> None:
    record = MetricsRecord(
        run_id=run_id, stage=stage, step=int(step),
        metrics={k: float(v) for k, v in metrics.items()},
        time=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    with open(out_dir / "metrics.jsonl", "a", encoding="utf-8") as f:
        f.write(record.to_json() + "\n")


def _cell(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _resolve_out(args, command: str) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    else:
        out = Path(os.environ.get("SPOTRL_OUT", "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_config(out_dir: Path, cfg: RunConfig) -> Path:
    path = out_dir / "config.json"
    path.write_text(config_json(cfg), encoding="utf-8")
    return path


def write_manifest(out_dir: Path, *, command: str, seed: int, cfg: RunConfig,
                   inputs: dict, outputs: dict) -> Path:
    manifest = {
        "command": command,
        "seed": int(seed),
        "config_hash": hashlib.sha256(config_json(cfg).encode()).hexdigest(),
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)}
                   for name, p in inputs.items()},
        "outputs": {name: {"path": str(p), "sha256": _sha256(p)}
                    for name, p in outputs.items()},
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def _merged_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _prepare(args, command: str) -> tuple[RunConfig, Path]:
    """Merge config sources, validate, resolve and record the output dir."""
    cfg = _merged_config(args)
    out = _resolve_out(args, command)
    return dataclasses.replace(cfg, out_dir=str(out)), out


def _load_density_checked(path, dataset):
    density = cvae.load_density(path)
    if (density.state_dim != dataset.state_dim
            or density.action_dim != dataset.action_dim):
        raise DimensionError(
            f"density model dims ({density.state_dim}, {density.action_dim}) "
            f"do not match dataset dims ({dataset.state_dim}, {dataset.action_dim})")
    return density


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg, out = _prepare(args, "gen-data")
    dataset = data.generate(cfg.env, cfg.regime, cfg.dataset_size, cfg.seed)
    normalize = cfg.normalize
    if normalize is None:
        normalize = envs.make_env(cfg.env).spec.reward_kind == "dense"
    if normalize:
        dataset = data.normalize_states(dataset)
    ds_path = out / f"{cfg.env}_{cfg.regime}.ds"
    data.save_dataset(ds_path, dataset)
    returns = dataset.episode_returns()
    summary = out / "summary.csv"
    write_csv(summary,
              ["transitions", "episodes", "normalized", "mean_return",
               "min_return", "max_return"],
              [[len(dataset), len(returns), dataset.normalized,
                returns.mean(), returns.min(), returns.max()]])
    cfg_path = write_config(out, cfg)
    append_metrics(out, f"gen-data:{cfg.seed}", "gen-data", 0,
                   {"transitions": len(dataset), "episodes": len(returns)})
    write_manifest(out, command="gen-data", seed=cfg.seed, cfg=cfg, inputs={},
                   outputs={"dataset": ds_path, "summary": summary,
                            "config": cfg_path})
    print(f"wrote {ds_path} ({len(dataset)} transitions, "
          f"{len(returns)} episodes)")
    return 0


def cmd_train_vae(args) -> int:
    cfg, out = _prepare(args, "train-vae")
    if not cfg.data_path:
        raise ConfigError("train-vae needs --data")
    dataset = data.load_dataset(cfg.data_path)
    if cfg.vae_family == "cvae":
        model, losses = cvae.train_vae(
            dataset, iters=cfg.vae_iters, batch_size=cfg.vae_batch_size,
            lr=cfg.vae_lr, lr_final=cfg.vae_lr_final, hidden=cfg.vae_hidden,
            depth=cfg.vae_depth, latent_dim=cfg.latent_dim,
            sigma_dec=cfg.sigma_dec, kl_weight=cfg.kl_weight, seed=cfg.seed)
    else:
        model, losses = cvae.train_gaussian_baseline(
            dataset, iters=cfg.vae_iters, batch_size=cfg.vae_batch_size,
            lr=cfg.vae_lr, hidden=cfg.vae_hidden, depth=cfg.vae_depth,
            seed=cfg.seed)
    ckpt = out / "density.ckpt"
    cvae.save_density(ckpt, model)
    losses_csv = out / "losses.csv"
    write_csv(losses_csv, ["iter", "loss"],
              [[i, losses[i]] for i in range(len(losses))])
    run_id = f"train-vae:{cfg.seed}"
    for i in range(0, len(losses), max(len(losses) // 20, 1)):
        append_metrics(out, run_id, "train-vae", i, {"loss": losses[i]})
    cfg_path = write_config(out, cfg)
    write_manifest(out, command="train-vae", seed=cfg.seed, cfg=cfg,
                   inputs={"dataset": Path(cfg.data_path)},
                   outputs={"density": ckpt, "losses": losses_csv,
                            "config": cfg_path})
    print(f"wrote {ckpt} (final loss {losses[-1]:.4f})")
    return 0


def _profile_percentile5(agent, dataset, cfg) -> float | None:
    if agent.density is None:
        return None
    profile = spot.constraint_strength_profile(
        agent, dataset, num_samples=cfg.profile_samples,
        subsample=cfg.profile_subsample, seed=cfg.seed)
    return profile[5]


def cmd_train_spot(args) -> int:
    cfg, out = _prepare(args, "train-spot")
    if not cfg.data_path:
        raise ConfigError("train-spot needs --data")
    if cfg.lam > 0.0 and not cfg.vae_path:
        raise ConfigError("a positive lam needs --vae")
    dataset = data.load_dataset(cfg.data_path)
    density = _load_density_checked(cfg.vae_path, dataset) if cfg.vae_path else None
    agent, log = spot.train_offline(
        dataset, density, lam=cfg.lam, steps=cfg.steps,
        batch_size=cfg.batch_size, seed=cfg.seed,
        eval_interval=cfg.eval_interval, eval_episodes=cfg.eval_episodes,
        hidden=cfg.hidden, depth=cfg.depth, actor_lr=cfg.actor_lr,
        critic_lr=cfg.critic_lr, actor_dropout=cfg.actor_dropout,
        gamma=cfg.gamma, tau=cfg.tau, policy_noise=cfg.policy_noise,
        noise_clip=cfg.noise_clip, policy_update_freq=cfg.policy_update_freq,
        q_norm_enabled=cfg.q_norm, reg_samples=cfg.reg_samples)
    ckpt = out / "agent.ckpt"
    spot.save_agent(ckpt, agent)
    run_id = f"train-spot:{cfg.seed}"
    p5 = _profile_percentile5(agent, dataset, cfg)
    rows = []
    for i, (step, rets) in enumerate(zip(log.eval_steps, log.eval_returns)):
        mean_ret = float(rets.mean())
        score = envs.normalized_score(dataset.env_name, mean_ret)
        last = i == len(log.eval_steps) - 1
        rows.append([step, mean_ret, score, p5 if last else None])
        append_metrics(out, run_id, "train-spot", step,
                       {"eval_return": mean_ret, "normalized_score": score})
    summary = out / "summary.csv"
    write_csv(summary, ["step", "eval_return", "normalized_score",
                        "percentile5_logpb"], rows)
    cfg_path = write_config(out, cfg)
    inputs = {"dataset": Path(cfg.data_path)}
    if cfg.vae_path:
        inputs["density"] = Path(cfg.vae_path)
    write_manifest(out, command="train-spot", seed=cfg.seed, cfg=cfg,
                   inputs=inputs,
                   outputs={"agent": ckpt, "summary": summary,
                            "config": cfg_path})
    final = f"{log.final_eval_mean():.3f}" if log.eval_returns else "n/a"
    print(f"wrote {ckpt} (final eval return {final})")
    return 0


def cmd_finetune(args) -> int:
    cfg, out = _prepare(args, "finetune")
    if not cfg.agent_path:
        raise ConfigError("finetune needs --agent")
    if not cfg.data_path:
        raise ConfigError("finetune needs --data")
    dataset = data.load_dataset(cfg.data_path)
    density = _load_density_checked(cfg.vae_path, dataset) if cfg.vae_path else None
    agent = spot.load_agent(cfg.agent_path, density=density)
    if agent.lam > 0.0 and density is None:
        raise ConfigError(
            f"agent was trained with lam={agent.lam}; pass --vae to keep the "
            "regularizer during fine-tuning")
    if dataset.state_dim != agent.state_dim or dataset.action_dim != agent.action_dim:
        raise DimensionError(
            f"dataset dims ({dataset.state_dim}, {dataset.action_dim}) do not "
            f"match agent dims ({agent.state_dim}, {agent.action_dim})")
    agent, log = ft.finetune(
        agent, dataset, steps=cfg.finetune_steps, seed=cfg.seed,
        batch_size=cfg.batch_size, exploration_noise=cfg.exploration_noise,
        decay_floor=cfg.decay_floor, eval_interval=cfg.eval_interval,
        eval_episodes=cfg.eval_episodes)
    ckpt = out / "agent_finetuned.ckpt"
    spot.save_agent(ckpt, agent)
    run_id = f"finetune:{cfg.seed}"
    rows = []
    for step, rets in zip(log.eval_steps, log.eval_returns):
        mean_ret = float(rets.mean())
        score = envs.normalized_score(dataset.env_name, mean_ret)
        rows.append([step, log.lam[step - 1], mean_ret, score])
        append_metrics(out, run_id, "finetune", step,
                       {"lam": log.lam[step - 1], "eval_return": mean_ret,
                        "normalized_score": score})
    summary = out / "summary.csv"
    write_csv(summary, ["step", "lam", "eval_return", "normalized_score"], rows)
    cfg_path = write_config(out, cfg)
    inputs = {"agent": Path(cfg.agent_path), "dataset": Path(cfg.data_path)}
    if cfg.vae_path:
        inputs["density"] = Path(cfg.vae_path)
    write_manifest(out, command="finetune", seed=cfg.seed, cfg=cfg,
                   inputs=inputs,
                   outputs={"agent": ckpt, "summary": summary,
                            "config": cfg_path})
    final = f"{log.final_eval_mean():.3f}" if log.eval_returns else "n/a"
    print(f"wrote {ckpt} (final eval return {final})")
    return 0


def cmd_eval(args) -> int:
    cfg, out = _prepare(args, "eval")
    if not cfg.agent_path:
        raise ConfigError("eval needs --agent")
    agent = spot.load_agent(cfg.agent_path)
    if cfg.data_path:
        dataset = data.load_dataset(cfg.data_path)
        env_name = dataset.env_name
        policy = spot.make_eval_policy(agent, dataset)
    else:
        env_name = cfg.env
        policy = lambda obs: agent.act(obs)
    env = envs.make_env(env_name)
    if env.spec.state_dim != agent.state_dim:
        raise DimensionError(
            f"env {env_name!r} has state dim {env.spec.state_dim}, agent "
            f"expects {agent.state_dim}")
    episodes = cfg.eval_episodes
    if episodes is None:
        episodes = 20 if env.spec.reward_kind == "sparse" else 10
    returns = envs.evaluate_policy(env, policy, episodes, cfg.seed)
    episodes_csv = out / "episodes.csv"
    write_csv(episodes_csv, ["episode", "return", "normalized_score"],
              [[i, r, envs.normalized_score(env_name, float(r))]
               for i, r in enumerate(returns)])
    mean_ret = float(returns.mean())
    summary = out / "summary.csv"
    write_csv(summary,
              ["episodes", "mean_return", "normalized_score", "success_rate"],
              [[episodes, mean_ret, envs.normalized_score(env_name, mean_ret),
                float(np.mean(returns > 0.0))]])
    cfg_path = write_config(out, cfg)
    append_metrics(out, f"eval:{cfg.seed}", "eval", 0,
                   {"mean_return": mean_ret})
    inputs = {"agent": Path(cfg.agent_path)}
    if cfg.data_path:
        inputs["dataset"] = Path(cfg.data_path)
    write_manifest(out, command="eval", seed=cfg.seed, cfg=cfg, inputs=inputs,
                   outputs={"episodes": episodes_csv, "summary": summary,
                            "config": cfg_path})
    print(f"mean return {mean_ret:.3f} over {episodes} episodes")
    return 0


# ---------------------------------------------------------------------------
# analyze subcommands
# ---------------------------------------------------------------------------


def _analyze_tabular_bound(args, cfg: RunConfig, out: Path) -> dict:
    rows = []
    worst = -np.inf
    for seed in range(args.mdps):
        mdp = tabular.random_mdp(args.states, args.actions, args.mdp_gamma,
                                 np.random.default_rng(seed))
        for eps in args.eps:
            report = tabular.suboptimality_gap(mdp, eps)
            rows.append([seed, eps, report.gap, report.alpha, report.bound])
            worst = max(worst, report.gap - report.bound)
    csv_path = out / "tabular_bound.csv"
    write_csv(csv_path, ["mdp_seed", "eps", "gap", "alpha", "bound"], rows)
    print(f"{len(rows)} rows; max gap-bound excess {worst:.3e}")
    return {"summary": csv_path}


def _analyze_density_profile(args, cfg: RunConfig, out: Path) -> dict:
    if not cfg.agent_path or not cfg.vae_path or not cfg.data_path:
        raise ConfigError("density-profile needs --agent, --vae and --data")
    dataset = data.load_dataset(cfg.data_path)
    density = _load_density_checked(cfg.vae_path, dataset)
    agent = spot.load_agent(cfg.agent_path, density=density)
    if dataset.state_dim != agent.state_dim:
        raise DimensionError(
            f"dataset state dim {dataset.state_dim} does not match agent "
            f"state dim {agent.state_dim}")
    profile = spot.constraint_strength_profile(
        agent, dataset, num_samples=cfg.profile_samples,
        subsample=cfg.profile_subsample, seed=cfg.seed)
    csv_path = out / "density_profile.csv"
    write_csv(csv_path, ["percentile", "log_density"],
              [[pct, profile[pct]] for pct in sorted(profile)])
    print(f"5th percentile log density {profile[5]:.3f}")
    return {"summary": csv_path}


def _sweep_point(data_path: str, vae_path: str, lam: float, seed: int,
                 cfg_dict: dict) -> tuple[float, float]:
    """One isolated (lam, seed) training run; returns (score, percentile5).

    Module-level and path-based so it can run in a worker process: each
    worker loads its own copies of the artifacts.
    """
    cfg = RunConfig(**cfg_dict)
    dataset = data.load_dataset(data_path)
    density = _load_density_checked(vae_path, dataset) if lam > 0.0 else None
    agent, log = spot.train_offline(
        dataset, density, lam=lam, steps=cfg.steps, batch_size=cfg.batch_size,
        seed=seed, eval_interval=cfg.eval_interval,
        eval_episodes=cfg.eval_episodes, hidden=cfg.hidden, depth=cfg.depth,
        actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr,
        actor_dropout=cfg.actor_dropout, gamma=cfg.gamma, tau=cfg.tau,
        policy_noise=cfg.policy_noise, noise_clip=cfg.noise_clip,
        policy_update_freq=cfg.policy_update_freq, q_norm_enabled=cfg.q_norm,
        reg_samples=cfg.reg_samples)
    score = envs.normalized_score(dataset.env_name, log.final_eval_mean())
    if density is None:
        return score, float("nan")
    profile = spot.constraint_strength_profile(
        agent, dataset, num_samples=cfg.profile_samples,
        subsample=cfg.profile_subsample, seed=seed)
    return score, profile[5]


def _analyze_lambda_sweep(args, cfg: RunConfig, out: Path) -> dict:
    if not cfg.data_path or not cfg.vae_path:
        raise ConfigError("lambda-sweep needs --data and --vae")
    dataset = data.load_dataset(cfg.data_path)  # fail fast on bad inputs
    _load_density_checked(cfg.vae_path, dataset)
    grid = cfg.lam_grid if cfg.lam_grid is not None else default_lam_grid(dataset.env_name)
    cfg_dict = dataclasses.asdict(cfg)
    points = [(lam, seed) for lam in grid for seed in cfg.seeds]
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_sweep_point, cfg.data_path, cfg.vae_path,
                                   lam, seed, cfg_dict)
                       for lam, seed in points]
            results = [f.result() for f in futures]
    else:
        results = [_sweep_point(cfg.data_path, cfg.vae_path, lam, seed, cfg_dict)
                   for lam, seed in points]
    run_rows = [[lam, seed, score, p5]
                for (lam, seed), (score, p5) in zip(points, results)]
    write_csv(out / "runs.csv",
              ["lam", "seed", "normalized_score", "percentile5_logpb"], run_rows)
    sweep_rows = []
    for lam in grid:
        scores = [s for (l, _), (s, _) in zip(points, results) if l == lam]
        p5s = [p for (l, _), (_, p) in zip(points, results) if l == lam]
        sweep_rows.append([lam, float(np.mean(p5s)), float(np.mean(scores))])
    csv_path = out / "lambda_sweep.csv"
    write_csv(csv_path, ["lam", "percentile5_logpb", "normalized_score"],
              sweep_rows)
    best = max(sweep_rows, key=lambda r: r[2])
    print(f"best lam {best[0]} (mean normalized score {best[2]:.2f})")
    return {"summary": csv_path, "runs": out / "runs.csv"}


def _analyze_l_effect(args, cfg: RunConfig, out: Path) -> dict:
    if not cfg.data_path or not cfg.vae_path:
        raise ConfigError("l-effect needs --data and --vae")
    dataset = data.load_dataset(cfg.data_path)
    _load_density_checked(cfg.vae_path, dataset)
    cfg_dict = dataclasses.asdict(cfg)
    rows = []
    for L in args.samples_grid:
        if L <= 0:
            raise ConfigError(f"sample counts must be positive, got {L}")
        cfg_dict["reg_samples"] = L
        scores = [_sweep_point(cfg.data_path, cfg.vae_path, cfg.lam, seed,
                               cfg_dict)[0]
                  for seed in cfg.seeds]
        rows.append([L, float(np.mean(scores))])
    csv_path = out / "l_effect.csv"
    write_csv(csv_path, ["L", "normalized_score"], rows)
    print(f"scores by L: {', '.join(f'{r[0]}: {r[1]:.2f}' for r in rows)}")
    return {"summary": csv_path}


_ANALYSES = {
    "tabular-bound": _analyze_tabular_bound,
    "density-profile": _analyze_density_profile,
    "lambda-sweep": _analyze_lambda_sweep,
    "l-effect": _analyze_l_effect,
}


def cmd_analyze(args) -> int:
    cfg, out = _prepare(args, f"analyze-{args.analysis}")
    outputs = _ANALYSES[args.analysis](args, cfg, out)
    cfg_path = write_config(out, cfg)
    outputs["config"] = cfg_path
    inputs = {}
    for name, attr in [("dataset", "data_path"), ("density", "vae_path"),
                       ("agent", "agent_path")]:
        if getattr(cfg, attr):
            inputs[name] = Path(getattr(cfg, attr))
    write_manifest(out, command=f"analyze {args.analysis}", seed=cfg.seed,
                   cfg=cfg, inputs=inputs, outputs=outputs)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _float_tuple(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", help="output directory (default: $SPOTRL_OUT/<command>)")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spotrl",
        description="Offline RL with a density-supported policy constraint: "
                    "dataset generation, density and policy training, "
                    "fine-tuning, evaluation, and analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="roll out a behavior policy into a dataset")
    _add_common(p)
    p.add_argument("--env", default=None, choices=envs.ENV_NAMES)
    p.add_argument("--regime", default=None, choices=data.REGIMES)
    p.add_argument("--size", dest="dataset_size", type=int, default=None)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction,
                   default=None, help="standardize states (default: dense only)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-vae", help="fit the behavior density model")
    _add_common(p)
    p.add_argument("--data", dest="data_path", default=None, required=True)
    p.add_argument("--family", dest="vae_family", default=None,
                   choices=("cvae", "gaussian"))
    p.add_argument("--iters", dest="vae_iters", type=int, default=None)
    p.add_argument("--batch-size", dest="vae_batch_size", type=int, default=None)
    p.add_argument("--lr", dest="vae_lr", type=float, default=None)
    p.add_argument("--lr-final", dest="vae_lr_final", type=float, default=None)
    p.add_argument("--hidden", dest="vae_hidden", type=int, default=None)
    p.add_argument("--depth", dest="vae_depth", type=int, default=None)
    p.add_argument("--latent-dim", dest="latent_dim", type=int, default=None)
    p.add_argument("--sigma-dec", dest="sigma_dec", type=float, default=None)
    p.add_argument("--kl-weight", dest="kl_weight", type=float, default=None)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train-spot", help="offline policy training")
    _add_common(p)
    p.add_argument("--data", dest="data_path", default=None, required=True)
    p.add_argument("--vae", dest="vae_path", default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--eval-interval", dest="eval_interval", type=int, default=None)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--actor-lr", dest="actor_lr", type=float, default=None)
    p.add_argument("--critic-lr", dest="critic_lr", type=float, default=None)
    p.add_argument("--q-norm", dest="q_norm",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--reg-samples", dest="reg_samples", type=int, default=None)
    p.set_defaults(func=cmd_train_spot)

    p = sub.add_parser("finetune", help="online fine-tuning of a trained agent")
    _add_common(p)
    p.add_argument("--agent", dest="agent_path", default=None, required=True)
    p.add_argument("--data", dest="data_path", default=None, required=True)
    p.add_argument("--vae", dest="vae_path", default=None)
    p.add_argument("--steps", dest="finetune_steps", type=int, default=None)
    p.add_argument("--eval-interval", dest="eval_interval", type=int, default=None)
    p.add_argument("--eval-episodes", dest="eval_episodes", type=int, default=None)
    p.add_argument("--exploration-noise", dest="exploration_noise", type=float,
                   default=None)
    p.add_argument("--decay-floor", dest="decay_floor", type=float, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a saved agent")
    _add_common(p)
    p.add_argument("--agent", dest="agent_path", default=None, required=True)
    p.add_argument("--data", dest="data_path", default=None,
                   help="dataset whose normalization stats the agent expects")
    p.add_argument("--env", default=None, choices=envs.ENV_NAMES,
                   help="environment name when no --data is given")
    p.add_argument("--episodes", dest="eval_episodes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="analysis sweeps over trained artifacts")
    asub = p.add_subparsers(dest="analysis", required=True)

    a = asub.add_parser("tabular-bound", help="suboptimality gap vs bound sweep")
    _add_common(a)
    a.add_argument("--mdps", type=int, default=100)
    a.add_argument("--states", type=int, default=6)
    a.add_argument("--actions", type=int, default=4)
    a.add_argument("--mdp-gamma", dest="mdp_gamma", type=float, default=0.9)
    a.add_argument("--eps", type=_float_tuple, default=(0.0, 0.05, 0.1, 0.2))
    a.set_defaults(func=cmd_analyze)

    a = asub.add_parser("density-profile", help="log-density percentiles of a policy")
    _add_common(a)
    a.add_argument("--agent", dest="agent_path", default=None, required=True)
    a.add_argument("--vae", dest="vae_path", default=None, required=True)
    a.add_argument("--data", dest="data_path", default=None, required=True)
    a.add_argument("--profile-samples", dest="profile_samples", type=int,
                   default=None)
    a.add_argument("--profile-subsample", dest="profile_subsample", type=int,
                   default=None)
    a.set_defaults(func=cmd_analyze)

    a = asub.add_parser("lambda-sweep", help="train across a lam grid and report")
    _add_common(a)
    a.add_argument("--data", dest="data_path", default=None, required=True)
    a.add_argument("--vae", dest="vae_path", default=None, required=True)
    a.add_argument("--lams", dest="lam_grid", type=_float_tuple, default=None)
    a.add_argument("--seeds", type=_int_tuple, default=None)
    a.add_argument("--steps", type=int, default=None)
    a.add_argument("--eval-interval", dest="eval_interval", type=int, default=None)
    a.add_argument("--eval-episodes", dest="eval_episodes", type=int, default=None)
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_analyze)

    a = asub.add_parser("l-effect", help="effect of the sample count in the regularizer")
    _add_common(a)
    a.add_argument("--data", dest="data_path", default=None, required=True)
    a.add_argument("--vae", dest="vae_path", default=None, required=True)
    a.add_argument("--lambda", dest="lam", type=float, default=None)
    a.add_argument("--samples-grid", dest="samples_grid", type=_int_tuple,
                   default=(1, 5, 25, 125))
    a.add_argument("--seeds", type=_int_tuple, default=None)
    a.add_argument("--steps", type=int, default=None)
    a.add_argument("--eval-interval", dest="eval_interval", type=int, default=None)
    a.add_argument("--eval-episodes", dest="eval_episodes", type=int, default=None)
    a.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        return _fail(EXIT_MISSING, "missing-file", err)
    except (DatasetFormatError, CheckpointError) as err:
        return _fail(EXIT_FORMAT, "bad-format", err)
    except DimensionError as err:
        return _fail(EXIT_DIM, "dim-mismatch", err)
    except (ConfigError, ValueError) as err:
        return _fail(EXIT_CONFIG, "config", err)


def _fail(code: int, family: str, err: Exception) -> int:
    print(f"error: {family}: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
