"""Command-line entry point.

    colasim train    --topology sws --grid 100:1000:100 --target-ms 50 --out policy.json
    colasim evaluate --topology sws --rates 200,400 --policy cola --policy cpu:50 --policy-file policy.json
    colasim evaluate --spec experiment.json
    colasim oracle   --topology sws --rps 400 --target-ms 50
    colasim report   --policy-file policy.json --baseline-rate 120 --cola-rate 90
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from colasim.autoscalers import Objective, RewardParams
from colasim.harness import (
    ExperimentError,
    ExperimentSpec,
    amortization,
    exhaustive_oracle,
    oracle_reward,
    rows_to_csv,
    run_experiment,
    training_cost_report,
)
from colasim.simulator import SimConfig
from colasim.topology import CostMode, CostModel, TopologyError, load_topology
from colasim.trainer import SimSampler, TrainedPolicy, TrainerConfig, train
from colasim.evaluation import derive_seed
from colasim.workload import Segment, Workload, WorkloadError, WorkloadGrid, WorkloadSchedule, uniform


def parse_grid(text: str) -> tuple[float, float, float]:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lower:upper:step, got {text!r}") from None
    return lo, hi, step


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--topology", default="sws", help="bundled name (sws, bookinfo4, boutique11) or JSON path")
    p.add_argument("--target-ms", type=float, default=50.0)
    p.add_argument("--objective", choices=[o.value for o in Objective], default="median")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cost-mode", choices=[m.value for m in CostMode], default="vm")
    p.add_argument("--pods-per-vm", type=int, default=1)
    p.add_argument("--duration-s", type=float, default=30.0, help="length of one simulated sample window")
    p.add_argument("--timeout-ms", type=float, default=2000.0)


def _cost_model(args) -> CostModel:
    return CostModel(mode=CostMode(args.cost_mode), pods_per_vm=args.pods_per_vm)


def _trainer_cfg(args, cm: CostModel) -> TrainerConfig:
    params = RewardParams(
        l_target_ms=args.target_ms,
        objective=Objective(args.objective),
        cost_model=cm,
        timeout_ms=args.timeout_ms,
    )
    return TrainerConfig(reward=params)


def _grid(args, n_endpoints: int) -> WorkloadGrid:
    lo, hi, step = args.grid
    dists = tuple(args.dist) if args.dist else (uniform(n_endpoints),)
    return WorkloadGrid(lo, hi, step, dists)


def cmd_train(args) -> int:
    topo = load_topology(args.topology)
    cm = _cost_model(args)
    cfg = _trainer_cfg(args, cm)
    sim = SimConfig(duration_s=args.duration_s, timeout_ms=args.timeout_ms, seed=derive_seed(args.seed, 101))
    sampler = SimSampler(topo, cm, sim)
    policy = train(_grid(args, topo.n_endpoints), cfg, topo, sampler, warm_start=not args.cold_start)
    policy.save(args.out)
    for (d, rps), e in sorted(policy.entries.items()):
        flag = "" if e.met else "  (target unmet)"
        print(f"dist={d} rps={rps:g} replicas={list(e.state.replicas)} "
              f"latency_ms={e.achieved_latency_ms:.2f} samples={e.samples}{flag}")
    print(f"wrote {args.out} ({policy.total_samples} samples)")
    return 0


def _spec_from_args(args) -> ExperimentSpec:
    if args.spec:
        spec = ExperimentSpec.load(args.spec)
        if args.out:
            spec.output = args.out
        return spec
    topo = load_topology(args.topology)
    if args.schedule:
        schedule = WorkloadSchedule.load(args.schedule)
    elif args.rates:
        dist = args.dist[0] if args.dist else uniform(topo.n_endpoints)
        schedule = WorkloadSchedule(tuple(Segment(Workload(r, dist), args.segment_s) for r in args.rates))
    else:
        raise ExperimentError("evaluate needs --spec, --schedule or --rates")
    cm = _cost_model(args)
    return ExperimentSpec(
        topology=args.topology,
        policies=args.policy or ["cola"],
        schedule=schedule,
        grid=_grid(args, topo.n_endpoints) if args.grid else None,
        sim=SimConfig(duration_s=args.duration_s, timeout_ms=args.timeout_ms, seed=args.seed),
        cost_model=cm,
        trainer=_trainer_cfg(args, cm),
        output=args.out,
        seed=args.seed,
        settle_s=args.settle_s,
        policy_file=args.policy_file,
    )


def cmd_evaluate(args) -> int:
    spec = _spec_from_args(args)
    rows, _ = run_experiment(spec, write=bool(spec.output))
    if not spec.output:
        sys.stdout.write(rows_to_csv(rows))
    return 0


def cmd_oracle(args) -> int:
    topo = load_topology(args.topology)
    cm = _cost_model(args)
    cfg = _trainer_cfg(args, cm)
    params = cfg.reward.with_lambda(args.lambda_weight) if args.lambda_weight else oracle_reward(cfg)
    dist = args.dist[0] if args.dist else uniform(topo.n_endpoints)
    sim = SimConfig(duration_s=args.duration_s, timeout_ms=args.timeout_ms, seed=args.seed)
    ranked = exhaustive_oracle(Workload(args.rps, dist), topo, cm, params, sim, cap=args.cap)
    lines = ["rank,replicas,reward,latency_ms,cost"]
    for k, e in enumerate(ranked[: args.top]):
        reps = " ".join(str(r) for r in e.state.replicas)
        lines.append(f"{k},{reps},{e.reward:.4f},{e.latency_ms:.3f},{e.cost:.4f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    policy = TrainedPolicy.load(args.policy_file)
    rep = training_cost_report(policy, SimConfig(duration_s=args.duration_s))
    print(f"samples: {rep.total_samples}")
    print(f"simulated_hours: {rep.simulated_s / 3600:.4f}")
    print(f"cost_unit_hours: {rep.cost_unit_hours:.4f}")
    if args.baseline_rate is not None and args.cola_rate is not None:
        hours = amortization(rep, args.baseline_rate, args.cola_rate)
        print("break_even_hours: " + ("never" if hours is None else f"{hours:.2f}"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="colasim", description="Simulated microservice autoscaling experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy over an RPS grid and save it as JSON")
    _add_common(p)
    p.add_argument("--grid", type=parse_grid, required=True, help="lower:upper:step in RPS")
    p.add_argument("--dist", type=parse_floats, action="append", help="endpoint distribution, repeatable")
    p.add_argument("--cold-start", action="store_true", help="disable warm starting")
    p.add_argument("--out", default="policy.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run policies head to head and emit CSV")
    _add_common(p)
    p.add_argument("--spec", help="experiment JSON; overrides the other flags")
    p.add_argument("--schedule", help="schedule JSON with a segments list")
    p.add_argument("--rates", type=parse_floats, help="constant-rate segments, comma separated RPS")
    p.add_argument("--segment-s", type=float, default=300.0)
    p.add_argument("--settle-s", type=float, default=0.0, help="unrecorded pre-roll at the first rate")
    p.add_argument("--grid", type=parse_grid, help="training grid for cola/lr (default spans the rates)")
    p.add_argument("--dist", type=parse_floats, action="append")
    p.add_argument("--policy", action="append", help="cola | cpu:<T> | lr | oracle, repeatable")
    p.add_argument("--policy-file", help="trained policy cache; loaded if present, written otherwise")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="rank every cluster state for one workload")
    _add_common(p)
    p.add_argument("--rps", type=float, required=True)
    p.add_argument("--dist", type=parse_floats, action="append")
    p.add_argument("--lambda-weight", type=float, help="reward weight (default: the trainer's maximum)")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--cap", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="training cost and break-even time of a trained policy")
    p.add_argument("--policy-file", required=True)
    p.add_argument("--duration-s", type=float, default=30.0)
    p.add_argument("--baseline-rate", type=float, help="baseline cost per hour")
    p.add_argument("--cola-rate", type=float, help="trained policy cost per hour")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ExperimentError, TopologyError, WorkloadError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
