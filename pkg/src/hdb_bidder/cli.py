"""Command-line entry point: config handling, experiment commands, reports.

Commands (one per experiment stage): ``synth`` writes a synthetic price
series, ``train`` fits one method, ``backtest`` replays hourly bidding from
a checkpoint, ``extract`` dumps bids for chosen hours, ``compare`` trains
and scores several methods against the dispatch optimum, ``sweep-n`` scores
one policy at several bid sizes, and ``bench`` times bid generation.

All output is deterministic for a fixed config and seed; no wall-clock
values are written except the timings that ``bench`` exists to measure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, bids, data as mdata, envs, nets, ppo
from .ess import EssParams

SWEEP_N_VALUES = (1, 2, 3, 4, 6, 8, 10, 15)
BENCH_WIDTHS = (1, 4, 16, None)  # None = full grid width


@dataclass
class DataConfig:
    kind: str = "synth"          # "synth" or "csv"
    path: str | None = None      # directory with rt.csv/da.csv when kind=csv
    seed: int = 1
    days: int = 30
    node: str = "SYNTH"
    train_frac: float = 0.7


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    ess: EssParams = field(default_factory=EssParams)
    ppo: ppo.PpoConfig = field(default_factory=ppo.PpoConfig)
    lam_min: float = mdata.LAMBDA_MIN
    lam_max: float = mdata.LAMBDA_MAX
    n_pairs: int = 10
    m_samples: int = 512
    free_left: bool = False
    methods: list[str] = field(default_factory=lambda: ["hdb", "pair_bid", "self_bid"])
    seeds: list[int] = field(default_factory=lambda: [0])
    dp_soc_levels: int = 201
    dp_power_levels: int = 21
    out_dir: str = "out"


def config_to_obj(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_obj(obj: dict) -> RunConfig:
    cfg = RunConfig()
    known = {f.name for f in dataclasses.fields(RunConfig)}
    for key in obj:
        if key not in known:
            raise ValueError(f"unknown config field {key!r}")
    sections = {"data": DataConfig, "ess": EssParams, "ppo": ppo.PpoConfig}
    kwargs = {}
    for key, value in obj.items():
        if key in sections:
            kwargs[key] = sections[key](**value)
        else:
            kwargs[key] = value
    return dataclasses.replace(cfg, **kwargs)


def load_config(path) -> RunConfig:
    return config_from_obj(json.loads(Path(path).read_text()))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_obj(cfg), indent=2) + "\n")


def _resolve_out(args) -> Path:
    out = args.out or os.environ.get("HDB_BIDDER_OUT") or "out"
    return Path(out)


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.ppo.seed = args.seed
        cfg.data.seed = args.seed if cfg.data.kind == "synth" and args.command == "synth" \
            else cfg.data.seed
    if getattr(args, "node", None):
        cfg.data.node = args.node
    if getattr(args, "capacity_mwh", None) is not None:
        cfg.ess = dataclasses.replace(cfg.ess, e_max=args.capacity_mwh)
    if getattr(args, "n_pairs", None) is not None:
        cfg.n_pairs = args.n_pairs
    if getattr(args, "m_samples", None) is not None:
        cfg.m_samples = args.m_samples
    if getattr(args, "steps", None) is not None:
        cfg.ppo.total_steps = args.steps
    if getattr(args, "days", None) is not None:
        cfg.data.days = args.days
    if getattr(args, "data", None):
        cfg.data.kind = "csv"
        cfg.data.path = args.data
    if getattr(args, "methods", None):
        cfg.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "seeds", None):
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "free_left", False):
        cfg.free_left = True
    cfg.out_dir = str(_resolve_out(args))
    return cfg


def _load_series(cfg: RunConfig) -> mdata.MarketSeries:
    if cfg.data.kind == "csv":
        if not cfg.data.path:
            raise ValueError("config data.kind is csv but data.path is unset")
        return mdata.load_series(cfg.data.path)
    return mdata.synth_series(cfg.data.seed, cfg.data.days, cfg.data.node,
                              cfg.lam_min, cfg.lam_max)


def _series_split(cfg: RunConfig, which: str):
    series = _load_series(cfg)
    if which == "full":
        return series
    train, test = mdata.split(series, cfg.data.train_frac)
    return train if which == "train" else test


class Artifacts:
    """Tracks files a command writes so failures leave no partial output."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def cleanup(self):
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _write_lines(path: Path, lines) -> None:
    path.write_text("\n".join(lines) + "\n")


def method_from_policy(policy: nets.PolicyNet) -> str:
    """Recover the method name from a checkpointed policy's shape."""
    with_price = policy.obs_dim == mdata.OBS_DIM + 1
    if policy.head == "zero_band":
        return "hdb" if with_price else "pair_bid"
    if policy.head == "power":
        return "hdb_woa" if with_price else "self_bid"
    return "direct_hdb"


# ---------------------------------------------------------------- commands


def cmd_synth(args, art: Artifacts) -> int:
    cfg = _build_config(args)
    series = mdata.synth_series(cfg.data.seed, cfg.data.days, cfg.data.node,
                                cfg.lam_min, cfg.lam_max)
    art.path("rt.csv")
    art.path("da.csv")
    mdata.save_series(series, art.out_dir)
    print(f"wrote {series.n_days}-day series for {series.node_id} to {art.out_dir}")
    return 0


def _train_one(cfg: RunConfig, method: str, seed: int, train_series,
               checkpoint_path, progress=None) -> ppo.TrainResult:
    env = baselines.make_train_env(method, train_series, cfg.ess, cfg.lam_min,
                                   cfg.lam_max, cfg.ppo.reward_scale, cfg.n_pairs)
    run_cfg = dataclasses.replace(cfg.ppo, seed=seed)
    spec = baselines.METHODS[method]
    return ppo.train(env, run_cfg, head=spec.head,
                     checkpoint_path=checkpoint_path, progress=progress)


def cmd_train(args, art: Artifacts) -> int:
    cfg = _build_config(args)
    method = args.method or "hdb"
    if method not in baselines.METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(baselines.METHODS)}")
    train_series, _ = mdata.split(_load_series(cfg), cfg.data.train_frac)
    ckpt = art.path("checkpoint.json")
    log = art.path("training_log.csv")

    def progress(step, total, row):
        print(f"[{method} seed={cfg.ppo.seed}] {step}/{total} {row}")

    result = _train_one(cfg, method, cfg.ppo.seed, train_series, ckpt, progress)
    _write_lines(log, result.log_rows)
    print(f"trained {method} for {result.steps} steps -> {ckpt}")
    return 0


def _backtest_from_checkpoint(cfg: RunConfig, policy, series, n_pairs=None):
    method = method_from_policy(policy)
    bidder = baselines.make_bidder(method, n_pairs or cfg.n_pairs, cfg.m_samples,
                                   cfg.lam_min, cfg.lam_max, cfg.ess.p_max,
                                   cfg.free_left)
    return envs.backtest(policy, series, cfg.ess, n_pairs or cfg.n_pairs,
                         cfg.m_samples, cfg.lam_min, cfg.lam_max, bidder=bidder)


def _interval_rows(result: envs.BacktestResult):
    rows = ["timestamp,lambda_usd_mwh,power_mw,soc_mwh,reward_usd,violated"]
    for iv in result.intervals:
        rows.append(f"{mdata.format_timestamp(iv['t'])},{iv['lambda']:.6f},"
                    f"{iv['power']:.6f},{iv['soc_after']:.6f},{iv['reward_usd']:.6f},"
                    f"{int(iv['violated'])}")
    return rows


def cmd_backtest(args, art: Artifacts) -> int:
    cfg = _build_config(args)
    policy, _, _, _, _ = nets.load_checkpoint(args.checkpoint)
    series = _series_split(cfg, args.split)
    result = _backtest_from_checkpoint(cfg, policy, series)
    _write_json(art.path("backtest.json"), result.to_report_obj())
    _write_lines(art.path("intervals.csv"), _interval_rows(result))
    print(f"backtest profit: {result.total_profit_usd:.2f} USD over "
          f"{result.n_hours} hours ({result.n_violations} clipped intervals)")
    return 0


def cmd_extract(args, art: Artifacts) -> int:
    cfg = _build_config(args)
    policy, _, _, _, _ = nets.load_checkpoint(args.checkpoint)
    series = _series_split(cfg, args.split)
    result = _backtest_from_checkpoint(cfg, policy, series)
    hours = [int(h) for h in args.hours.split(",")]
    for h in hours:
        if not 0 <= h < result.n_hours:
            raise ValueError(f"hour index {h} outside 0..{result.n_hours - 1}")
    if len(hours) == 1:
        payload = result.hours[hours[0]]["bid"].to_json_obj()
    else:
        payload = [{"timestamp": mdata.format_timestamp(result.hours[h]["t"]),
                    "bid": result.hours[h]["bid"].to_json_obj()} for h in hours]
    _write_json(art.path("bid.json"), payload)
    print(f"wrote bids for hour(s) {hours} to {art.out_dir / 'bid.json'}")
    return 0


def cmd_compare(args, art: Artifacts) -> int:
    cfg = _build_config(args)
    for m in cfg.methods:
        if m not in baselines.METHODS:
            raise ValueError(f"unknown method {m!r}")
    series = _load_series(cfg)
    train_series, test_series = mdata.split(series, cfg.data.train_frac)
    start, stop = envs.backtest_window(test_series)
    window_prices = test_series.rt_price[start:stop]
    optimal = baselines.refined_optimum(window_prices, cfg.ess, cfg.dp_soc_levels,
                                        cfg.dp_power_levels)
    print(f"perfect-foresight optimum: {optimal:.2f} USD over {(stop - start) // 12} hours")

    detail = ["method,seed,profit_usd"]
    summary = ["method,capacity_mwh,profit_usd,optimal_usd,captured_pct"]
    for method in cfg.methods:
        profits = []
        for seed in cfg.seeds:
            result = _train_one(cfg, method, seed, train_series, None)
            back = _backtest_from_checkpoint(cfg, result.policy, test_series)
            profits.append(back.total_profit_usd)
            detail.append(f"{method},{seed},{back.total_profit_usd:.6f}")
            print(f"  {method} seed={seed}: {back.total_profit_usd:.2f} USD "
                  f"({baselines.captured_ratio(back.total_profit_usd, optimal):.2f}%)")
        mean_profit = float(np.mean(profits))
        summary.append(f"{method},{cfg.ess.e_max:.6g},{mean_profit:.6f},"
                       f"{optimal:.6f},{baselines.captured_ratio(mean_profit, optimal):.4f}")
    _write_lines(art.path("compare.csv"), summary)
    _write_lines(art.path("compare_seeds.csv"), detail)
    print(f"wrote {art.out_dir / 'compare.csv'}")
    return 0


def cmd_sweep_n(args, art: Artifacts) -> int:
    cfg = _build_config(args)
    policy, _, _, _, _ = nets.load_checkpoint(args.checkpoint)
    if method_from_policy(policy) not in ("hdb", "hdb_woa"):
        raise ValueError("sweep-n needs a supply-curve policy checkpoint")
    series = _series_split(cfg, args.split)
    start, stop = envs.backtest_window(series)
    optimal = baselines.refined_optimum(series.rt_price[start:stop], cfg.ess,
                                        cfg.dp_soc_levels, cfg.dp_power_levels)
    rows = ["n,profit_usd,optimal_usd,captured_pct"]
    for n in SWEEP_N_VALUES:
        result = _backtest_from_checkpoint(cfg, policy, series, n_pairs=n)
        ratio = baselines.captured_ratio(result.total_profit_usd, optimal)
        rows.append(f"{n},{result.total_profit_usd:.6f},{optimal:.6f},{ratio:.4f}")
        print(f"  N={n}: {result.total_profit_usd:.2f} USD ({ratio:.2f}%)")
    _write_lines(art.path("sweep_n.csv"), rows)
    return 0


def cmd_bench(args, art: Artifacts) -> int:
    cfg = _build_config(args)
    if args.checkpoint:
        policy, _, _, _, _ = nets.load_checkpoint(args.checkpoint)
    else:
        rng = np.random.default_rng(cfg.ppo.seed)
        policy = nets.make_policy(mdata.OBS_DIM + 1, 4, rng, cfg.lam_min, cfg.lam_max)
    grid = bids.price_grid(cfg.lam_min, cfg.lam_max, cfg.m_samples)
    rng = np.random.default_rng(cfg.ppo.seed + 1)
    obs_pool = rng.uniform(-1.0, 1.0, size=(64, mdata.OBS_DIM))
    obs_pool[:, -1] = rng.uniform(0.0, 1.0, size=64)  # soc component
    calls = max(args.calls, 1)

    report = {"m_samples": cfg.m_samples, "n_pairs": cfg.n_pairs, "calls": calls,
              "widths": []}
    for width in BENCH_WIDTHS:
        label = cfg.m_samples if width is None else width
        times = np.empty(calls)
        for i in range(calls):
            obs = obs_pool[i % len(obs_pool)]
            t0 = time.perf_counter()
            bids.generate_hdb(policy, obs, grid, cfg.n_pairs, p_scale=cfg.ess.p_max,
                              batch_width=width)
            times[i] = time.perf_counter() - t0
        ms = times * 1e3
        report["widths"].append({
            "batch_width": label,
            "mean_ms": float(ms.mean()),
            "p50_ms": float(np.percentile(ms, 50)),
            "p95_ms": float(np.percentile(ms, 95)),
            "p99_ms": float(np.percentile(ms, 99)),
        })
        print(f"  width {label}: mean {ms.mean():.3f} ms, p95 {np.percentile(ms, 95):.3f} ms")

    # Extraction share: discretize on a presampled monotone curve.
    curve = bids.monotonize(bids.sample_supply_curve(policy, obs_pool[0], grid,
                                                     p_scale=cfg.ess.p_max))
    times = np.empty(calls)
    for i in range(calls):
        t0 = time.perf_counter()
        bids.discretize(curve, cfg.n_pairs, p_bounds=(-cfg.ess.p_max, cfg.ess.p_max))
        times[i] = time.perf_counter() - t0
    report["extraction_mean_ms"] = float(times.mean() * 1e3)
    _write_json(art.path("bench.json"), report)
    print(f"wrote {art.out_dir / 'bench.json'}")
    return 0


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdb-bidder",
        description="Train storage bidding policies and extract N-pair market bids.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory (or $HDB_BIDDER_OUT)")
        p.add_argument("--node", help="price node label")
        p.add_argument("--capacity-mwh", type=float, dest="capacity_mwh")
        p.add_argument("--n-pairs", type=int, dest="n_pairs")
        p.add_argument("--m-samples", type=int, dest="m_samples")
        p.add_argument("--data", help="directory with rt.csv/da.csv (overrides synth)")
        p.add_argument("--free-left", action="store_true", dest="free_left",
                       help="optimize the below-first-pair power instead of pinning it")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", choices=["train", "test", "full"], default="test")

    p = sub.add_parser("synth", help="write a synthetic rt.csv/da.csv pair")
    common(p)
    p.add_argument("--days", type=int)

    p = sub.add_parser("train", help="train one bidding method")
    common(p)
    p.add_argument("--method", choices=sorted(baselines.METHODS))
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--days", type=int)

    p = sub.add_parser("backtest", help="replay hourly bidding from a checkpoint")
    common(p, checkpoint=True)

    p = sub.add_parser("extract", help="write bids for chosen backtest hours")
    common(p, checkpoint=True)
    p.add_argument("--hours", default="0", help="comma-separated hour indices")

    p = sub.add_parser("compare", help="train and score methods against the optimum")
    common(p)
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--steps", type=int)
    p.add_argument("--days", type=int)

    p = sub.add_parser("sweep-n", help="score one policy at several bid sizes")
    common(p, checkpoint=True)

    p = sub.add_parser("bench", help="time bid generation at several batch widths")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--calls", type=int, default=1000)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "backtest": cmd_backtest,
    "extract": cmd_extract,
    "compare": cmd_compare,
    "sweep-n": cmd_sweep_n,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    art = Artifacts(_resolve_out(args))
    try:
        return COMMANDS[args.command](args, art)
    except Exception as exc:  # one-line cause, partial artifacts removed
        art.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
