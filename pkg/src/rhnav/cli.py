"""Command line front end.

Subcommands: gen-world, build-corpus, train, select-features, build-lut,
trajlib, run, evaluate, bench. Each one is thin glue over the library
modules; everything is reproducible from the seeds on the command line.
"""

import argparse
import json
import sys

import numpy as np

from . import bench, harness, kernels, learn, sim_world, traj_lib


def _add_episode_flags(p):
    p.add_argument("--mode", default=None,
                   choices=("oracle", "single", "multiple"))
    p.add_argument("--density", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-distance", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--use-true-pose", action="store_true", default=None)


_EPISODE_KEYS = {
    "mode": "mode", "density": "density", "seed": "seed",
    "max_distance": "max_distance", "width": "frame_width",
    "height": "frame_height", "patch": "patch_size", "tau": "tau",
    "use_true_pose": "use_true_pose",
}


def _episode_overrides(args):
    out = {}
    for arg_name, cfg_name in _EPISODE_KEYS.items():
        v = getattr(args, arg_name, None)
        if v is not None:
            out[cfg_name] = v
    return out


def cmd_gen_world(args):
    scenario = sim_world.generate_scenario(
        args.density, tuple(args.bounds), args.seed)
    sim_world.save_scenario(scenario, args.out)
    print(f"{scenario.n_trees} trees -> {args.out}")


def cmd_build_corpus(args):
    corpus = harness.build_corpus(
        n_scenarios=args.scenarios, frames_per_scenario=args.frames,
        seed=args.seed, width=args.width, height=args.height,
        patch_size=args.patch)
    harness.save_corpus(corpus, args.out)
    n = corpus["features"].shape[0]
    print(f"{n} rows x {corpus['features'].shape[1]} features -> {args.out}")


def _parse_costs(text):
    if not text:
        return None
    out = {}
    for part in text.split(","):
        name, ms = part.split("=")
        out[name.strip()] = float(ms)
    return out


def cmd_train(args):
    corpus = harness.load_corpus(args.corpus)
    model, plan = harness.train_model(
        corpus, n_stages=args.stages, ridge_lambda=args.ridge_lambda,
        budget_ms=args.budget_ms, costs=_parse_costs(args.costs))
    learn.save_model(args.out, model)
    rmse = harness.holdout_rmse(model, corpus)
    print(f"groups: {', '.join(model.group_names)}")
    if plan is not None:
        for e in plan.entries:
            print(f"  {e.group_name:<18} cum {e.cumulative_cost_ms:7.2f} ms  "
                  f"val rmse {e.validation_rmse:.3f} m")
    print(f"holdout rmse {rmse:.3f} m -> {args.out}")


def cmd_select_features(args):
    corpus = harness.load_corpus(args.corpus)
    group_names = tuple(str(g) for g in corpus["group_names"])
    costs = _parse_costs(args.costs)
    if costs is None:
        from . import features as features_mod
        costs = features_mod.measure_group_costs(
            width=int(corpus["width"]), height=int(corpus["height"]),
            patch_size=int(corpus["patch_size"]))
    mask = np.asarray(corpus["train_mask"], dtype=bool)
    blocks = harness.group_blocks(
        np.asarray(corpus["features"], dtype=np.float64)[mask], group_names)
    plan = learn.select_budgeted_groups(
        [blocks[g] for g in group_names],
        np.asarray(corpus["depths"], dtype=np.float64)[mask],
        [costs[g] for g in group_names], args.budget_ms)
    if plan.warning:
        print("warning: budget below the cheapest group; empty plan")
    for e in plan.entries:
        print(f"{e.group_name:<18} cum {e.cumulative_cost_ms:7.2f} ms  "
              f"val rmse {e.validation_rmse:.3f} m")


def cmd_build_lut(args):
    corpus = harness.load_corpus(args.corpus)
    model = learn.load_model(args.model)
    x = np.asarray(corpus["features"], dtype=np.float64)
    y = np.asarray(corpus["depths"], dtype=np.float64)
    mask = np.asarray(corpus["train_mask"], dtype=bool)
    group_names = tuple(str(g) for g in corpus["group_names"])
    x_sel, _ = harness.subset_columns(x, model.group_names, group_names)
    lut = learn.build_error_lut(model.regressor.predict, x_sel[~mask],
                                y[~mask], d_max=model.d_max)
    model.lut = lut
    learn.save_model(args.out or args.model, model)
    for d in range(1, int(model.d_max) + 1):
        near, far = lut.lookup(float(d))
        print(f"bin {d:2d}: near {near:6.2f}  far {far:6.2f}")


def cmd_trajlib(args):
    lib = traj_lib.TrajectoryLibrary.build(n=args.n, k=args.k)
    lib.save(args.out)
    print(f"{len(lib.dense)} dense -> {len(lib.selected_ids)} selected "
          f"-> {args.out}")


def cmd_run(args):
    overrides = _episode_overrides(args)
    if args.config:
        cfg = harness.load_config(args.config, **overrides)
    else:
        cfg = harness.RunConfig(**overrides)
    model = learn.load_model(args.model) if args.model else None
    scenario = sim_world.load_scenario(args.scenario) if args.scenario else None
    res = harness.run_episode(cfg, model=model, scenario=scenario,
                              cycle_log_path=args.cycle_log)
    text = harness.report_json(res.report)
    if args.out_report:
        with open(args.out_report, "w") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_evaluate(args):
    model = learn.load_model(args.model) if args.model else None
    cfg_kwargs = _episode_overrides(args)
    cfg_kwargs.pop("mode", None)
    cfg_kwargs.pop("density", None)
    cfg_kwargs.pop("seed", None)
    densities = [float(v) for v in args.densities.split(",")]
    modes = tuple(args.modes.split(","))
    suite = harness.evaluate_suite(model, cfg_kwargs, densities,
                                   n_seeds=args.seeds, modes=modes,
                                   seed0=args.seed0)
    if args.out_csv:
        harness.write_suite_csv(suite, args.out_csv)
    if args.out_json:
        with open(args.out_json, "w") as fh:
            json.dump(suite, fh, indent=2, sort_keys=True)
    for row in suite["rows"]:
        print(f"density {row['density']:.5f} {row['mode']:<9} "
              f"mean dist {row['mean_distance']:6.1f} m  "
              f"avoid {row['avoidance_pct']:5.1f}%  "
              f"collisions {row['collisions']}/{row['episodes']}")
    for density, t in suite["paired_tests"].items():
        print(f"density {density}: multiple {t['mean_multiple']:.1f} m vs "
              f"single {t['mean_single']:.1f} m, sign test p = "
              f"{t['sign_test_p']:.4f}")


def cmd_bench(args):
    if args.which in ("kernels", "all"):
        print(bench.format_kernel_table(bench.bench_kernels(reps=args.reps)))
    if args.which in ("cycle", "all"):
        stats = bench.bench_planning_cycle(n_cycles=args.cycles)
        print(f"planning cycle over {stats['cycles']} cycles "
              f"[{stats['backend']}]: mean {stats['mean_ms']:.1f} ms, "
              f"p95 {stats['p95_ms']:.1f} ms, max {stats['max_ms']:.1f} ms")


def build_parser():
    p = argparse.ArgumentParser(
        prog="rhnav",
        description="Receding-horizon monocular navigation simulator")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("gen-world", help="generate a forest scenario file")
    q.add_argument("--density", type=float, required=True)
    q.add_argument("--bounds", type=float, nargs=4,
                   default=(0.0, 0.0, 60.0, 60.0),
                   metavar=("X0", "Y0", "X1", "Y1"))
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_gen_world)

    q = sub.add_parser("build-corpus", help="render frames and extract "
                       "training features")
    q.add_argument("--scenarios", type=int, default=8)
    q.add_argument("--frames", type=int, default=60)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--width", type=int, default=320)
    q.add_argument("--height", type=int, default=240)
    q.add_argument("--patch", type=int, default=16)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_build_corpus)

    q = sub.add_parser("train", help="fit the stagewise depth model")
    q.add_argument("--corpus", required=True)
    q.add_argument("--stages", type=int, default=6)
    q.add_argument("--ridge-lambda", type=float, default=1e-2)
    q.add_argument("--budget-ms", type=float, default=None)
    q.add_argument("--costs", default=None,
                   help="fixed costs, e.g. 'hog=3.1,radon=2.0'")
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_train)

    q = sub.add_parser("select-features", help="budgeted group selection")
    q.add_argument("--corpus", required=True)
    q.add_argument("--budget-ms", type=float, required=True)
    q.add_argument("--costs", default=None)
    q.set_defaults(fn=cmd_select_features)

    q = sub.add_parser("build-lut", help="rebuild the error LUT on holdout")
    q.add_argument("--corpus", required=True)
    q.add_argument("--model", required=True)
    q.add_argument("--out", default=None)
    q.set_defaults(fn=cmd_build_lut)

    q = sub.add_parser("trajlib", help="build and save the trajectory library")
    q.add_argument("--n", type=int, default=traj_lib.DENSE_DEFAULT)
    q.add_argument("--k", type=int, default=traj_lib.SELECT_DEFAULT)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_trajlib)

    q = sub.add_parser("run", help="run one closed-loop episode")
    q.add_argument("--config", default=None)
    q.add_argument("--model", default=None)
    q.add_argument("--scenario", default=None)
    q.add_argument("--out-report", default=None)
    q.add_argument("--cycle-log", default=None)
    _add_episode_flags(q)
    q.set_defaults(fn=cmd_run)

    q = sub.add_parser("evaluate", help="paired-seed mode comparison")
    q.add_argument("--model", default=None)
    q.add_argument("--seeds", type=int, default=20)
    q.add_argument("--seed0", type=int, default=0)
    q.add_argument("--densities", default="0.027778,0.006944")
    q.add_argument("--modes", default="single,multiple")
    q.add_argument("--out-csv", default=None)
    q.add_argument("--out-json", default=None)
    _add_episode_flags(q)
    q.set_defaults(fn=cmd_evaluate)

    q = sub.add_parser("bench", help="kernel and planning-cycle benchmarks")
    q.add_argument("--which", choices=("kernels", "cycle", "all"),
                   default="all")
    q.add_argument("--cycles", type=int, default=100)
    q.add_argument("--reps", type=int, default=5)
    q.set_defaults(fn=cmd_bench)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
