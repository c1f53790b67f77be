"""``kunn`` command line: simulate, reconstruct, evaluate, verify and ablate.

Every command reads an optional ``--config`` key=value file, applies flag
overrides, validates the result and writes the resolved config next to its
outputs.  Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure during a run.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .io import ExperimentConfig, FormatError
from .metrics import CSV_HEADER, score

log = logging.getLogger("kunn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

# flag name -> config key
FLAG_KEYS = {
    "n": "n", "coils": "coils", "mask": "mask", "r": "r", "acs": "acs", "pf_fraction": "pf_fraction",
    "sigma": "sigma", "iters": "iters", "lr": "lr", "seed": "seed", "mask_seed": "mask_seed",
    "ablation": "ablation", "dc": "dc", "weighting": "weighting", "out": "out", "trials": "trials",
    "z_arch": "z_arch", "csm_arch": "csm_arch", "phase_arch": "phase_arch",
}


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override its entries")
    p.add_argument("--n", help="image size (power of two)")
    p.add_argument("--coils")
    p.add_argument("--mask", help="random, vd_regular, partial_fourier, entrywise or full")
    p.add_argument("--r", help="acceleration factor")
    p.add_argument("--acs")
    p.add_argument("--pf-fraction", dest="pf_fraction")
    p.add_argument("--sigma")
    p.add_argument("--iters")
    p.add_argument("--lr")
    p.add_argument("--seed")
    p.add_argument("--mask-seed", dest="mask_seed")
    p.add_argument("--ablation", help="full, sensitivity_only or phase_only")
    p.add_argument("--dc", help="true/false: re-insert measured samples")
    p.add_argument("--weighting", help="true/false: radial residual weighting")
    p.add_argument("--trials")
    p.add_argument("--z-arch", dest="z_arch", help="layers,channels")
    p.add_argument("--csm-arch", dest="csm_arch", help="layers,channels,size")
    p.add_argument("--phase-arch", dest="phase_arch", help="layers,channels,size")
    p.add_argument("--out", help="output directory")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    mapping: dict[str, str] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        base = ExperimentConfig.read(path)
        mapping = {k: io.format_value(getattr(base, k)) for k in ExperimentConfig.keys()}
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            mapping[key] = str(val)
    return ExperimentConfig.from_mapping(mapping)


def _limit_threads() -> None:
    raw = os.environ.get("KUNN_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"KUNN_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits
    threadpool_limits(n)


# ---------------------------------------------------------------- commands

def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    from .pipeline import save_scene, scene_from_config
    scene = scene_from_config(cfg)
    save_scene(scene, cfg.out, cfg)
    log.info("scene written to %s (%d sampled locations)", cfg.out, scene.mask.n_sampled)
    return EXIT_OK


def cmd_reconstruct(cfg: ExperimentConfig, args) -> int:
    from .pipeline import load_scene, run_reconstruction, write_reconstruction
    if not args.scene:
        raise UsageError("reconstruct needs --scene DIR")
    try:
        scene = load_scene(args.scene)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    if cfg.n != scene.N or cfg.coils != scene.n_coils:
        cfg = cfg.replace(n=scene.N, coils=scene.n_coils)
    res = run_reconstruction(cfg, scene)
    write_reconstruction(res, cfg.out, cfg)
    h = res.trained.loss_history
    log.info("loss %.4e -> %.4e over %d iterations", h[0], h[-1], len(h))
    return EXIT_OK


def _load_image(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{p} not found")
    x = io.read_kten(p)
    return np.abs(x) if np.iscomplexobj(x) else x


def cmd_evaluate(cfg, args) -> int:
    if not (args.recon and args.reference):
        raise UsageError("evaluate needs --recon FILE and --reference FILE")
    x, ref = _load_image(args.recon), _load_image(args.reference)
    if x.shape != ref.shape:
        raise UsageError(f"shape mismatch {x.shape} vs {ref.shape}")
    row = score(x, ref).csv_row(args.slice_id)
    text = f"{CSV_HEADER}\n{row}\n"
    if args.scores:
        io.write_text(args.scores, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    from .generator import train
    from .pipeline import generator_for, scene_from_config
    from .theory import assumption1_check, lemma1_verify, theorem_bound_verify
    scene = scene_from_config(cfg)
    gen = generator_for(cfg, scene)
    trained = train(gen, scene, cfg.iters, cfg.lr)
    report = theorem_bound_verify(trained, scene, cfg.trials, d=cfg.hankel_d, beta=cfg.beta,
                                  seed=cfg.seed)
    lem = lemma1_verify(trained, scene, cfg.trials, seed=cfg.seed + 7, d=cfg.hankel_d, beta=cfg.beta)
    a1 = assumption1_check(trained, cfg.hankel_d, cfg.trials, seed=cfg.seed + 11)
    out = Path(cfg.out)
    io.write_text(out / "theory_report.txt", report.to_text())
    io.write_text(out / "theory_trials.csv", report.trials_csv())
    io.write_text(out / "lemma1_ratios.csv",
                  "trial,ratio\n" + "".join(f"{i},{r!r}\n" for i, r in enumerate(lem.ratios)))
    io.write_text(out / "assumption1.txt", io.metadata_text(
        {"max_rank": a1.max_rank, "rank_cap": a1.rank_cap, "structural_ok": a1.structural_ok,
         "ranks": ",".join(map(str, a1.ranks))}))
    cfg.write(out / "config.txt")
    status = "vacuous" if report.vacuous else f"{report.theorem_bound_pass_fraction:.3f}"
    log.info("bound pass fraction %s; empirical c %.4g", status, report.c2_estimate)
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    from .pipeline import baseline_scores, run_reconstruction, scene_from_config
    variant = cfg.ablation
    if variant == "sensitivity_only" and cfg.coils < 2:
        raise UsageError("sensitivity_only ablation needs a multi-coil scene (coils >= 2)")
    if variant == "phase_only" and cfg.coils != 1:
        raise UsageError("phase_only ablation needs a single-coil scene (coils = 1)")
    if variant == "full":
        variant = "phase_only" if cfg.coils == 1 else "sensitivity_only"
    scene = scene_from_config(cfg)
    ref = scene.reference_image()
    rows = [("zero_filled", baseline_scores(scene)["zero_filled"])]
    out = Path(cfg.out)
    for kind in (variant, "full"):
        res = run_reconstruction(cfg, scene, kind=kind)
        io.write_kten(out / kind / "image_recon.kten", res.image)
        io.write_text(out / kind / "loss_history.csv", io.loss_csv(res.trained.loss_history))
        rows.append((kind, score(res.image, ref)))
    table = "method," + CSV_HEADER.split(",", 1)[1] + "\n"
    table += "".join(f"{name},{s.csv_row(name).split(',', 1)[1]}\n" for name, s in rows)
    io.write_text(out / "ablation.csv", table)
    cfg.write(out / "config.txt")
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate,
            "verify": cmd_verify, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kunn", description="Untrained k-space generator toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "reconstruct", "verify", "ablate"):
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name == "reconstruct":
            p.add_argument("--scene", help="directory written by 'simulate'")
    p = sub.add_parser("evaluate")
    p.add_argument("--recon")
    p.add_argument("--reference")
    p.add_argument("--scores", help="CSV output path (also printed)")
    p.add_argument("--slice-id", dest="slice_id", default="0")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _limit_threads()
        cfg = None if args.command == "evaluate" else resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, FormatError, ValueError) as exc:
        print(f"kunn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"kunn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
