"""Command line front end.

Subcommands mirror the library workflow:

* generate   write a synthetic request CSV
* segment    build a service map and save it as JSON
* train      fit a policy for one of the learned methods
* evaluate   run one method over repetitions, write reports
* compare    train plus evaluate every method side by side

Exit codes: 0 success, 2 configuration or usage problem, 3 planning
became infeasible. report.json never contains wall-clock numbers; the
timing breakdown lands in timing.json next to it.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .core import (Scenario, ScenarioError, generate_synthetic, load_requests,
                   read_scenario_file, write_requests_csv)
from .environment import SimulationError
from .experiments import (LEARNED_METHODS, CompareResult, MethodId, MetricsReport,
                          build_report, build_timing, compare_methods, fill_combined_costs,
                          load_policy, method_service_map, run_method, save_policy,
                          train_policy)
from .learning import LearningConfig, LearningError
from .planner import InfeasiblePartition, PlannerError
from .segmentation import ServiceMap

TRACE_FIELDS = ["method", "repetition", "window", "drone", "action", "start_area",
                "end_area", "customers", "path_length_m", "energy_j", "battery_after"]

CURVE_FIELDS = ["method", "episode", "mean_reward", "avg_delay_hours",
                "mean_energy_kj_per_drone", "actor_loss", "critic_loss"]


def _load_scenario(args: argparse.Namespace) -> Scenario:
    if args.config:
        scenario = read_scenario_file(args.config)
    else:
        scenario = Scenario.default()
    if getattr(args, "seed", None) is not None:
        scenario = scenario.with_seed(args.seed)
    if getattr(args, "alpha", None) is not None:
        from dataclasses import replace
        scenario = Scenario(config=replace(scenario.config, alpha=args.alpha),
                            drone=scenario.drone, constants=scenario.constants)
    return scenario


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_trace_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["customers"] = ";".join(str(c) for c in row.get("customers", []))
            writer.writerow(out)


def _write_curves_csv(path: Path, curves: dict[str, list[dict]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for method in sorted(curves):
            for row in curves[method]:
                writer.writerow({"method": method, **{k: row.get(k) for k in CURVE_FIELDS[1:]}})


def _learning_config(args: argparse.Namespace) -> LearningConfig:
    cfg = LearningConfig()
    overrides = {}
    if getattr(args, "episodes", None) is not None:
        overrides["episodes"] = args.episodes
    if getattr(args, "train_episodes", None) is not None:
        overrides["episodes"] = args.train_episodes
    if getattr(args, "recurrent", False):
        overrides["recurrent"] = True
    if getattr(args, "learn_seed", None) is not None:
        overrides["seed"] = args.learn_seed
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    return cfg


def _cmd_generate(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args)
    requests = generate_synthetic(scenario.config)
    write_requests_csv(requests, args.out)
    print(f"wrote {len(requests)} requests to {args.out}")
    return 0


def _cmd_segment(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args)
    method = MethodId.SQUARES if args.kind == "grid" else MethodId.MAR_OPS
    smap = method_service_map(scenario, method)
    smap.save(args.out)
    print(f"wrote {smap.num_areas}-area {smap.kind} map to {args.out}")
    if not args.no_figures:
        from .figures import render_service_map
        fig_path = Path(args.out).with_suffix(".png")
        requests = generate_synthetic(scenario.config)
        render_service_map(smap, fig_path, requests)
        print(f"wrote {fig_path}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args)
    method = MethodId(args.method)
    if method not in LEARNED_METHODS:
        raise ScenarioError(f"method {method.value} does not train a policy")
    cfg = _learning_config(args)

    def progress(ep: int, row: dict) -> None:
        if args.verbose and (ep + 1) % 25 == 0:
            print(f"episode {ep + 1}/{cfg.episodes} "
                  f"reward {row['mean_reward']:.4f} delay {row['avg_delay_hours']:.3f} h")

    policy = train_policy(scenario, method, cfg, progress=progress)
    save_policy(policy, args.out)
    print(f"wrote policy checkpoint to {args.out}")
    if args.curves:
        _write_curves_csv(Path(args.curves), {method.value: policy.curves})
        print(f"wrote {args.curves}")
    if not args.no_figures:
        from .figures import render_learning_curves
        fig_path = Path(args.out).with_suffix(".png")
        render_learning_curves({method.value: policy.curves}, fig_path)
        print(f"wrote {fig_path}")
    return 0


def _evaluation_outputs(outdir: Path, scenario: Scenario,
                        reports: dict[str, MetricsReport], trace: list[dict],
                        curves: dict[str, list[dict]], *, kind: str,
                        no_figures: bool, smap: ServiceMap | None = None) -> None:
    _write_json(outdir / "report.json", build_report(scenario, reports, kind=kind))
    _write_json(outdir / "timing.json", build_timing(reports))
    _write_trace_csv(outdir / "trace.csv", trace)
    if curves:
        _write_curves_csv(outdir / "curves.csv", curves)
    if smap is not None:
        smap.save(outdir / "servicemap.json")
    printed = ["report.json", "timing.json", "trace.csv"]
    if curves:
        printed.append("curves.csv")
    if smap is not None:
        printed.append("servicemap.json")
    if not no_figures:
        from .figures import (render_depot_load, render_method_comparison,
                              render_service_map, render_tradeoff)
        render_method_comparison(reports, outdir / "comparison.png")
        render_tradeoff(reports, outdir / "tradeoff.png")
        render_depot_load(reports, outdir / "depot_load.png")
        printed += ["comparison.png", "tradeoff.png", "depot_load.png"]
        if curves:
            from .figures import render_learning_curves
            render_learning_curves(curves, outdir / "learning.png")
            printed.append("learning.png")
        if smap is not None:
            render_service_map(smap, outdir / "servicemap.png")
            printed.append("servicemap.png")
    print(f"wrote {', '.join(printed)} to {outdir}")


def _cmd_evaluate(args: argparse.Namespace) -> int:
    if not args.config and not args.requests:
        raise ScenarioError("evaluate needs --config or --requests; nothing to run on")
    scenario = _load_scenario(args)
    method = MethodId(args.method)
    policy = None
    if method in LEARNED_METHODS:
        if not args.policy:
            raise ScenarioError(f"--policy is required for {method.value}")
        policy = load_policy(args.policy)
    requests = None
    if args.requests:
        requests = load_requests(args.requests, scenario.config, scenario.drone)
    trace: list[dict] = []
    report = run_method(method, scenario, args.repetitions, policy=policy,
                        requests_override=requests, trace_sink=trace)
    reports = {method.value: report}
    fill_combined_costs(reports)
    outdir = Path(args.outdir)
    smap = policy.smap if policy is not None else method_service_map(scenario, method)
    curves = {method.value: policy.curves} if policy is not None and policy.curves else {}
    _evaluation_outputs(outdir, scenario, reports, trace, curves,
                        kind="evaluation", no_figures=args.no_figures, smap=smap)
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    scenario = _load_scenario(args)
    methods = tuple(MethodId(m.strip()) for m in args.methods.split(",")) \
        if args.methods else tuple(MethodId)
    policies = {}
    for spec_arg in args.policy or []:
        name, _, path = spec_arg.partition("=")
        if not path:
            raise ScenarioError("--policy expects method=checkpoint.json")
        policies[MethodId(name).value] = load_policy(path)
    cfg = _learning_config(args)
    progress = (lambda msg: print(msg)) if args.verbose else None
    result: CompareResult = compare_methods(scenario, args.repetitions, cfg,
                                            methods=methods, policies=policies,
                                            progress=progress)
    curves = {name: p.curves for name, p in result.policies.items() if p.curves}
    outdir = Path(args.outdir)
    smap = next(iter(result.policies.values())).smap if result.policies else None
    _evaluation_outputs(outdir, scenario, result.reports, result.trace, curves,
                        kind="comparison", no_figures=args.no_figures, smap=smap)
    for name in sorted(result.reports):
        r = result.reports[name]
        print(f"{name:>10}: energy {r.mean_energy_kj:8.1f} kJ  "
              f"delay {r.avg_delay_hours:6.3f} h  combined {r.combined_cost:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmops",
        description="multi-depot drone delivery planning and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key=value scenario file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("generate", help="write a synthetic request CSV")
    common(p)
    p.add_argument("--out", default="requests.csv")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("segment", help="build and save a service map")
    common(p)
    p.add_argument("--kind", choices=["kmeans", "grid"], default="kmeans")
    p.add_argument("--out", default="servicemap.json")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("train", help="train a policy checkpoint")
    common(p)
    p.add_argument("--method", default=MethodId.MAR_OPS.value,
                   choices=[m.value for m in LEARNED_METHODS])
    p.add_argument("--episodes", type=int)
    p.add_argument("--recurrent", action="store_true",
                   help="use the recurrent policy head")
    p.add_argument("--learn-seed", type=int)
    p.add_argument("--alpha", type=float, help="energy weight in the reward")
    p.add_argument("--out", default="policy.json")
    p.add_argument("--curves", help="also write per-episode curves CSV")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate one method over repetitions")
    common(p)
    p.add_argument("--method", default=MethodId.MAR_OPS.value,
                   choices=[m.value for m in MethodId])
    p.add_argument("--policy", help="checkpoint from 'train' (learned methods)")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--requests", help="evaluate this CSV instead of generated days")
    p.add_argument("--alpha", type=float, help="energy weight in the reward")
    p.add_argument("--outdir", default="results")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="train and evaluate all methods")
    common(p)
    p.add_argument("--methods", help="comma list, default all five")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--train-episodes", type=int, dest="train_episodes")
    p.add_argument("--recurrent", action="store_true")
    p.add_argument("--learn-seed", type=int)
    p.add_argument("--alpha", type=float, help="energy weight in the reward")
    p.add_argument("--policy", action="append",
                   help="method=checkpoint.json, reuse instead of training")
    p.add_argument("--outdir", default="results")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, LearningError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InfeasiblePartition, PlannerError, SimulationError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
