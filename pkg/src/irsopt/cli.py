"""Command line entry point: ``irsopt train | eval | bench``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .agent import AgentConfig, NoiseState, train
from .env import IRSEnv
from .harness import (
    ConfigError,
    ExperimentConfig,
    MissingCheckpointError,
    load_config_file,
    run_experiment,
    substream,
    write_manifest,
)
from .neural import save_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_CHECKPOINT = 0, 2, 3

log = logging.getLogger("irsopt")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML file with ExperimentConfig keys")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="checkpoint path ('{m}' is replaced by the element count)")
    common.add_argument("--method", help="comma-separated subset of drl,vamp,admm,bcd,random,oracle")
    common.add_argument("--trials", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="irsopt", description=__doc__)
    p.add_argument("--version", action="version", version=f"irsopt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the DDPG agent and write a checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="run snr-vs-m / robust-noise / robust-mobility")
    ev.add_argument("--experiment", choices=["snr-vs-m", "robust-noise", "robust-mobility"])
    sub.add_parser("bench", parents=[common], help="time inference per element count")
    return p


def _load(args, experiment: str | None) -> ExperimentConfig:
    data = load_config_file(args.config) if args.config else {}
    methods = args.method.split(",") if args.method else None
    return ExperimentConfig.from_mapping(
        data,
        experiment=experiment,
        seed=args.seed,
        out=args.out,
        checkpoint=args.checkpoint,
        methods=methods,
        trials=args.trials,
    )


def _train(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    env = IRSEnv(cfg.env_config(), rng=substream(cfg.seed, 0, 0))
    agent_cfg = AgentConfig(total_env_steps=cfg.total_env_steps)
    nets, curve, noise = train(env, agent_cfg, NoiseState(), substream(cfg.seed, 0, 1))
    ckpt = Path(cfg.checkpoint.replace("{m}", str(cfg.m))) if cfg.checkpoint else out / "checkpoint.npz"
    meta = {"n_bs": cfg.n_bs, "m": cfg.m, "seed": cfg.seed, "sigma_k": noise.sigma_k}
    save_checkpoint(
        ckpt,
        {"actor": nets.actor, "critic": nets.critic,
         "target_actor": nets.target_actor, "target_critic": nets.target_critic},
        step=cfg.total_env_steps,
        meta=meta,
    )
    out.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out / "train_curve.csv")
    write_manifest(out / "manifest.txt", cfg, {"checkpoint_path": str(ckpt), **curve.meta})
    log.info("checkpoint written to %s", ckpt)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = _load(args, "train")
            return _train(cfg)
        if args.command == "bench":
            cfg = _load(args, "bench-inference")
            name = "bench.csv"
        else:
            cfg = _load(args, args.experiment)
            if cfg.experiment in ("train", "bench-inference"):
                raise ConfigError(f"'eval' cannot run experiment {cfg.experiment!r}")
            name = "results.csv"
        table = run_experiment(cfg)
        out = Path(cfg.out)
        table.to_csv(out / name)
        write_manifest(out / "manifest.txt", cfg, {"rows": len(table), "csv": name})
        log.info("wrote %d rows to %s", len(table), out / name)
        return EXIT_OK
    except MissingCheckpointError as exc:
        print(f"irsopt: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ConfigError as exc:
        print(f"irsopt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
