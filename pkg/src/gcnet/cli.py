"""Command-line pipeline driver.

Subcommands cover each stage: ``solve`` (nominal boundary-value solution),
``generate`` (backward bundle generation into train/refine/validation
datasets), ``clone`` (behavioural cloning), ``refine-node`` (trajectory-
gradient refinement), ``refine-dagger`` (imitation refinement with dataset
aggregation), ``eval`` (batch error report), and ``compare`` (error
reduction versus a baseline report).

Every run writes a manifest recording the tool version, seed, resolved
configuration hash, and the digest of each input file.  Outputs carry no
timestamps, so rerunning a stage with identical inputs reproduces its
files byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O or file-format error.

Heavy imports happen inside the command handlers so that ``--threads``
can cap the linear-algebra thread pools before they are initialized.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger(__name__)

_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _cap_threads(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        from .errors import ConfigError
        raise ConfigError("--threads must be >= 1")
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing input file: {path}")
    return path


def _load_config(args):
    import dataclasses

    from .config import PipelineConfig, load_config
    if args.config is not None:
        cfg = load_config(_require_file(args.config))
    else:
        cfg = PipelineConfig()
    if getattr(args, "problem", None) is not None:
        cfg = dataclasses.replace(cfg, problem=args.problem)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg, inputs: dict) -> None:
    from .config import resolved_document
    from .manifest import build_manifest, write_manifest
    manifest = build_manifest(command, resolved_document(cfg), cfg.seed,
                              inputs)
    write_manifest(out / f"{command}.manifest.json", manifest)
    logger.info("%s manifest digest %s", command, manifest["digest"])


def _config_input(args) -> dict:
    return {"config": args.config} if args.config is not None else {}


def _json_dump(path: Path, doc: dict) -> None:
    import json
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> None:
    from .datasets import Dataset, save_dataset
    from .problems import YEAR_S
    from .shooting import solve_landing_with_continuation, solve_tpbvp

    cfg = _load_config(args)
    out = _out_dir(args)
    problem = cfg.build_problem()
    solve_cfg = cfg.solve_config()

    stage_docs = []
    if cfg.problem == "transfer":
        solution = solve_tpbvp(problem, solve_cfg)
    else:
        result = solve_landing_with_continuation(problem, solve_cfg,
                                                 cfg.continuation_values())
        solution = result.final
        stage_docs = [{"eps": s.eps, "tof": s.tof, "cost": s.cost,
                       "residual_norm": s.residual_norm,
                       "final_mass": s.final_mass} for s in result.stages]

    dataset = Dataset(problem=cfg.problem,
                      trajectories=[solution.trajectory], eps=solution.eps)
    save_dataset(out / "nominal.ds", dataset)
    doc = {
        "problem": cfg.problem,
        "costates0": solution.costates0.tolist(),
        "tof": solution.tof,
        "cost": solution.cost,
        "residual_norm": solution.residual_norm,
        "eps": solution.eps,
        "final_mass": solution.final_mass,
        "restart_index": solution.restart_index,
        "n_converged": solution.n_converged,
    }
    if stage_docs:
        doc["continuation_stages"] = stage_docs
    _json_dump(out / "solve.json", doc)
    _write_manifest(out, "solve", cfg, _config_input(args))

    if cfg.problem == "transfer":
        horizon = f"{solution.tof * problem.units.time_s / YEAR_S:.4f} years"
    else:
        horizon = f"{solution.tof / 60.0:.4f} minutes"
    print(f"solve: t*={solution.tof:.9g} ({horizon}), "
          f"residual={solution.residual_norm:.3e}, "
          f"wrote {out / 'nominal.ds'}")


def cmd_generate(args) -> None:
    import dataclasses

    from .bgoe import generate_bundle
    from .datasets import (Dataset, load_dataset, merge_datasets,
                           save_dataset, split_dataset)
    from .errors import ConfigError

    cfg = _load_config(args)
    out = _out_dir(args)
    problem = cfg.build_problem()
    nominal_path = _require_file(args.nominal or out / "nominal.ds")
    nominal_ds = load_dataset(nominal_path)
    if nominal_ds.problem != cfg.problem:
        raise ConfigError(
            f"nominal dataset is for {nominal_ds.problem!r}, "
            f"config wants {cfg.problem!r}")
    nominal = nominal_ds.trajectories[0]

    bundle_docs = []
    parts = []
    for bcfg in cfg.bc_bundle_configs():
        trajs, stats = generate_bundle(problem, nominal, bcfg)
        parts.append(Dataset(cfg.problem, trajs, eps=nominal_ds.eps))
        bundle_docs.append({"config": dataclasses.asdict(bcfg),
                            "requested": stats.requested,
                            "generated": stats.generated,
                            "failures": len(stats.failures)})
        logger.info("bundle delta=%g: %d/%d generated", bcfg.delta,
                    stats.generated, stats.requested)
    train = merge_datasets(parts)

    rcfg = cfg.refine_bundle_config()
    trajs, stats = generate_bundle(problem, nominal, rcfg)
    refine_all = Dataset(cfg.problem, trajs, eps=nominal_ds.eps)
    refine_doc = {"config": dataclasses.asdict(rcfg),
                  "requested": stats.requested,
                  "generated": stats.generated,
                  "failures": len(stats.failures)}
    d_t, d_v = split_dataset(refine_all, 1.0 - cfg.val_fraction(),
                             cfg.split_seed())

    save_dataset(out / "train.ds", train)
    save_dataset(out / "refine_train.ds", d_t)
    save_dataset(out / "refine_val.ds", d_v)
    _json_dump(out / "generate.json", {
        "problem": cfg.problem,
        "bc_bundles": bundle_docs,
        "refine_bundle": refine_doc,
        "counts": {"train": len(train), "refine_train": len(d_t),
                   "refine_val": len(d_v)},
    })
    _write_manifest(out, "generate", cfg,
                    {**_config_input(args), "nominal": nominal_path})
    print(f"generate: train={len(train)} refine_train={len(d_t)} "
          f"refine_val={len(d_v)} trajectories, wrote {out}")


def cmd_clone(args) -> None:
    from .cloning import train
    from .datasets import load_dataset
    from .errors import ConfigError
    from .policy import initialize_policy

    cfg = _load_config(args)
    out = _out_dir(args)
    problem = cfg.build_problem()
    dataset_path = _require_file(args.dataset or out / "train.ds")
    dataset = load_dataset(dataset_path)
    if dataset.problem != cfg.problem:
        raise ConfigError(f"dataset is for {dataset.problem!r}, "
                          f"config wants {cfg.problem!r}")

    net = initialize_policy(cfg.problem, problem.input_scale,
                            hidden=cfg.hidden_layers(),
                            seed=cfg.stage_seed("clone", index=1))
    best, history = train(net, dataset, cfg.train_config())
    best.save(out / "policy_bc.wts")
    history.save(out / "clone_history.csv")
    _json_dump(out / "clone.json", {
        "best_epoch": int(history.best_epoch),
        "best_val_loss": float(history.best_val_loss),
        "epochs_run": int(len(history.epochs)),
        "hidden": list(cfg.hidden_layers()),
    })
    _write_manifest(out, "clone", cfg,
                    {**_config_input(args), "dataset": dataset_path})
    print(f"clone: best val loss {history.best_val_loss:.6e} "
          f"at epoch {history.best_epoch}, wrote {out / 'policy_bc.wts'}")


def _load_policy_and_sets(args, cfg, out):
    from .datasets import load_dataset
    from .policy import PolicyNetwork
    weights_path = _require_file(args.weights or out / "policy_bc.wts")
    train_path = _require_file(args.train or out / "refine_train.ds")
    val_path = _require_file(args.val or out / "refine_val.ds")
    net = PolicyNetwork.load(weights_path)
    d_t = load_dataset(train_path)
    d_v = load_dataset(val_path)
    return net, d_t, d_v, {"weights": weights_path, "train": train_path,
                           "val": val_path}


def cmd_refine_node(args) -> None:
    from .refine import refine, save_records

    cfg = _load_config(args)
    out = _out_dir(args)
    net, d_t, d_v, inputs = _load_policy_and_sets(args, cfg, out)
    best, records = refine(net, d_t, d_v, cfg.refine_config())
    best.save(out / "policy_node.wts")
    save_records(records, out / "refine_node_records.csv")
    _write_manifest(out, "refine-node", cfg,
                    {**_config_input(args), **inputs})
    final = records[-1].val_loss if records else float("nan")
    print(f"refine-node: {len(records)} iterations, final val loss "
          f"{final:.6e}, wrote {out / 'policy_node.wts'}")


def cmd_refine_dagger(args) -> None:
    import dataclasses

    from .dagger import dagger_refine, save_dagger_records
    from .datasets import load_dataset, save_dataset

    cfg = _load_config(args)
    out = _out_dir(args)
    net, d_t, d_v, inputs = _load_policy_and_sets(args, cfg, out)
    bc_path = _require_file(args.bc or out / "train.ds")
    d_bc = load_dataset(bc_path)
    best, d_dg, records, provenance = dagger_refine(net, d_bc, d_t, d_v,
                                                    cfg.dagger_config())
    best.save(out / "policy_dagger.wts")
    if len(d_dg) > 0:
        save_dataset(out / "dagger.ds", d_dg)
    save_dagger_records(records, out / "dagger_records.csv")
    _json_dump(out / "dagger.ds.provenance.json", {
        "aggregated": len(d_dg),
        "entries": [dataclasses.asdict(e) for e in provenance],
    })
    _write_manifest(out, "refine-dagger", cfg,
                    {**_config_input(args), **inputs, "bc": bc_path})
    print(f"refine-dagger: {len(records)} iterations, aggregated "
          f"{len(d_dg)} trajectories, wrote {out / 'policy_dagger.wts'}")


def cmd_eval(args) -> None:
    from .datasets import load_dataset
    from .evaluation import evaluate, save_report
    from .policy import PolicyNetwork

    cfg = _load_config(args)
    out = _out_dir(args)
    weights_path = _require_file(args.weights or out / "policy_bc.wts")
    dataset_path = _require_file(args.dataset or out / "refine_val.ds")
    label = args.label or Path(weights_path).stem
    net = PolicyNetwork.load(weights_path)
    dataset = load_dataset(dataset_path)
    report = evaluate(net, dataset, label=label, rel_tol=cfg.eval_rel_tol())
    save_report(report, out / f"eval_{label}.csv", out / f"eval_{label}.json")
    _write_manifest(out, f"eval-{label}", cfg,
                    {**_config_input(args), "weights": weights_path,
                     "dataset": dataset_path})
    s = report.summary
    if s.get("count", 0) > 0:
        print(f"eval[{label}]: mean position error "
              f"{s['position_error']['mean']:.6g} {report.position_unit}, "
              f"mean velocity error "
              f"{s['velocity_error']['mean']:.6g} {report.velocity_unit}, "
              f"{report.n_failed} failures")
    else:
        print(f"eval[{label}]: no trajectory evaluated "
              f"({report.n_failed} failures)")


def cmd_compare(args) -> None:
    from .evaluation import compare, load_summary, save_comparison

    cfg = _load_config(args)
    out = _out_dir(args)
    paths = [_require_file(p) for p in args.reports]
    reports = [load_summary(p) for p in paths]
    rows = compare(reports)
    save_comparison(rows, out / "comparison.csv")
    _write_manifest(out, "compare", cfg,
                    {**_config_input(args),
                     **{f"report{i}": p for i, p in enumerate(paths)}})
    width = max(len(r.label) for r in rows)
    for r in rows:
        print(f"compare: {r.label:<{width}}  "
              f"position {r.mean_position_error:.6g} "
              f"({r.position_reduction_pct:+.1f}%)  "
              f"velocity {r.mean_velocity_error:.6g} "
              f"({r.velocity_reduction_pct:+.1f}%)")


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="YAML pipeline configuration file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the root seed")
    common.add_argument("--threads", type=int, default=None,
                        help="cap linear-algebra thread pools")
    common.add_argument("--out-dir", default="runs",
                        help="output directory (default: runs)")
    common.add_argument("--verbose", action="store_true",
                        help="debug-level logging")

    parser = argparse.ArgumentParser(
        prog="gcnet",
        description="Indirect optimal control and neural guidance pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common],
                       help="solve the nominal boundary-value problem")
    p.add_argument("--problem", choices=("transfer", "landing"))
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", parents=[common],
                       help="generate trajectory bundles backward")
    p.add_argument("--problem", choices=("transfer", "landing"))
    p.add_argument("--nominal", default=None,
                   help="nominal trajectory dataset (default: OUT/nominal.ds)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("clone", parents=[common],
                       help="behavioural cloning of the bundle controls")
    p.add_argument("--dataset", default=None,
                   help="training dataset (default: OUT/train.ds)")
    p.set_defaults(func=cmd_clone)

    p = sub.add_parser("refine-node", parents=[common],
                       help="trajectory-gradient policy refinement")
    p.add_argument("--weights", default=None,
                   help="starting policy (default: OUT/policy_bc.wts)")
    p.add_argument("--train", default=None,
                   help="refinement set (default: OUT/refine_train.ds)")
    p.add_argument("--val", default=None,
                   help="validation set (default: OUT/refine_val.ds)")
    p.set_defaults(func=cmd_refine_node)

    p = sub.add_parser("refine-dagger", parents=[common],
                       help="imitation refinement with dataset aggregation")
    p.add_argument("--weights", default=None,
                   help="starting policy (default: OUT/policy_bc.wts)")
    p.add_argument("--bc", default=None,
                   help="cloning dataset (default: OUT/train.ds)")
    p.add_argument("--train", default=None,
                   help="rollout set (default: OUT/refine_train.ds)")
    p.add_argument("--val", default=None,
                   help="validation set (default: OUT/refine_val.ds)")
    p.set_defaults(func=cmd_refine_dagger)

    p = sub.add_parser("eval", parents=[common],
                       help="batch terminal-error report for one policy")
    p.add_argument("--weights", default=None,
                   help="policy weights (default: OUT/policy_bc.wts)")
    p.add_argument("--dataset", default=None,
                   help="evaluation dataset (default: OUT/refine_val.ds)")
    p.add_argument("--label", default=None,
                   help="report label (default: weights file stem)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[common],
                       help="error reductions versus the first report")
    p.add_argument("reports", nargs="+",
                   help="report summary documents; first is the baseline")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    from .errors import ConfigError, FormatError, GcnetError, \
        NoConvergenceError

    args = _build_parser().parse_args(argv)
    try:
        _cap_threads(args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"file format error: {exc}", file=sys.stderr)
        return 4
    except NoConvergenceError as exc:
        best = getattr(exc, "best_residual", None)
        detail = f" (best residual {best:.3e})" if best is not None else ""
        print(f"numerical failure: {exc}{detail}", file=sys.stderr)
        return 3
    except GcnetError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
