"""Command-line interface.

Every subcommand reads its inputs, writes deterministic files into the output
directory, and drops a manifest.json recording the command, the seed, and
sha256 digests of every input so a run can be reproduced byte for byte.

Exit codes: 0 success, 1 domain error (bad data, infeasible instance),
2 usage error (unknown flags, missing input paths).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import coalition as co
from . import ev as evx
from . import games
from . import market as mk
from . import scenario as sim
from . import storage as st
from .errors import GridswapError, InputError


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, np.bool_):
        return str(bool(value))
    if isinstance(value, np.integer):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_kv(path: Path, pairs: dict) -> None:
    lines = [f"{k} = {_fmt(v)}" for k, v in pairs.items()]
    path.write_text("\n".join(lines) + "\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _manifest(out_dir: Path, args, inputs: list[Path], outputs: list[str]) -> None:
    doc = {
        "command": args.command,
        "argv": sys.argv[1:] if args.from_argv else args.raw_argv,
        "inputs": {str(p): _sha256(p) for p in sorted(set(inputs))},
        "outputs": sorted(outputs),
        "package": "gridswap",
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )


def _progress(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _require(path_text: str, what: str) -> Path:
    path = Path(path_text)
    if not path.exists():
        raise FileNotFoundError(f"{what} {path} not found")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _thread_cap() -> int:
    raw = os.environ.get("GRIDSWAP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


# ---------------------------------------------------------------------------
# input readers


def _read_orders(path: Path):
    buys, sells = [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"agent_id", "side", "quantity", "limit_price"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise InputError(f"{path}: orders need agent_id,side,quantity,limit_price")
        for ln, row in enumerate(reader, start=2):
            try:
                order = mk.Order(
                    row["agent_id"].strip(),
                    row["side"].strip(),
                    float(row["quantity"]),
                    float(row["limit_price"]),
                    int(row.get("slot") or 0),
                )
            except (ValueError, TypeError) as exc:
                raise InputError(f"{path}:{ln}: bad order ({exc})") from exc
            (buys if order.side == mk.BUY else sells).append(order)
    return buys, sells


def _read_instance(path: Path, tariff: mk.Tariff) -> co.CoalitionInstance:
    customers = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"id", "role", "net_kwh"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise InputError(f"{path}: instance needs id,role,net_kwh")
        for ln, row in enumerate(reader, start=2):
            try:
                customers.append(
                    co.Customer(row["id"].strip(), row["role"].strip(), float(row["net_kwh"]))
                )
            except (ValueError, TypeError) as exc:
                raise InputError(f"{path}:{ln}: bad customer ({exc})") from exc
    return co.CoalitionInstance(tuple(customers), tariff)


def _read_rus(path: Path):
    rus = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"id", "capacity", "reservation_price", "reluctance"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise InputError(
                f"{path}: needs id,capacity,reservation_price,reluctance"
            )
        for ln, row in enumerate(reader, start=2):
            try:
                rus.append(
                    st.ResidentialUnit(
                        row["id"].strip(),
                        float(row["capacity"]),
                        float(row["reservation_price"]),
                        float(row["reluctance"]),
                    )
                )
            except (ValueError, TypeError) as exc:
                raise InputError(f"{path}:{ln}: bad unit ({exc})") from exc
    return rus


def _read_sfcs(path: Path):
    sfcs = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"id", "requirement", "bid_price"}
        if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
            raise InputError(f"{path}: needs id,requirement,bid_price")
        for ln, row in enumerate(reader, start=2):
            try:
                sfcs.append(
                    st.SfcAgent(
                        row["id"].strip(),
                        float(row["requirement"]),
                        float(row["bid_price"]),
                    )
                )
            except (ValueError, TypeError) as exc:
                raise InputError(f"{path}:{ln}: bad SFC ({exc})") from exc
    return sfcs


def _read_game(path: Path) -> games.FiniteGame:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: empty game file")
        strategy_cols = [c for c in reader.fieldnames if c.startswith("s")]
        if "player" not in reader.fieldnames or "utility" not in reader.fieldnames:
            raise InputError(f"{path}: game needs player,s0..sN,utility columns")
        n = len(strategy_cols)
        entries = {}
        for ln, row in enumerate(reader, start=2):
            try:
                key = (int(row["player"]),) + tuple(int(row[c]) for c in strategy_cols)
                entries[key] = float(row["utility"])
            except (ValueError, TypeError) as exc:
                raise InputError(f"{path}:{ln}: bad row ({exc})") from exc
    if not entries:
        raise InputError(f"{path}: no utility rows")
    dims = tuple(max(k[i + 1] for k in entries) + 1 for i in range(n))
    players = max(k[0] for k in entries) + 1
    if players != n:
        raise InputError(
            f"{path}: {players} players but {n} strategy columns"
        )
    expected = players * math.prod(dims)
    if len(entries) != expected:
        raise InputError(
            f"{path}: expected {expected} utility rows for a complete tensor, got {len(entries)}"
        )
    u = np.empty((players,) + dims)
    for key, val in entries.items():
        u[key] = val
    return games.FiniteGame(u)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_run(args) -> int:
    config = _require(args.config, "config file")
    out = _out_dir(args)
    scenario = sim.load_scenario(config)
    if args.seed is not None:
        scenario.seed = args.seed
    _progress(args, f"running {scenario.mechanism} scenario over {scenario.horizon} slots")
    report = sim.run_simulation(scenario)

    agent_rows = []
    for aid in report.agent_ids():
        r = report.per_agent[aid]
        agent_rows.append(
            [
                aid,
                r["role"],
                r["bill"],
                r["revenue"],
                r["fit_bill"],
                r["fit_revenue"],
                r["savings"],
                r["savings_pct"],
                r["energy_bought_kwh"],
                r["energy_sold_kwh"],
                r["utility"],
            ]
        )
    _write_csv(
        out / "report.csv",
        [
            "id",
            "role",
            "bill",
            "revenue",
            "fit_bill",
            "fit_revenue",
            "savings",
            "savings_pct",
            "energy_bought_kwh",
            "energy_sold_kwh",
            "utility",
        ],
        agent_rows,
    )
    _write_kv(out / "summary.txt", dict(sorted(report.system.items())))

    outputs = ["report.csv", "summary.txt", "baseline_notes.txt"]
    rows, notes = sim.compare_baselines(scenario)
    if rows:
        header = sorted(rows[0])
        _write_csv(out / "baselines.csv", header, [[r.get(k) for k in header] for r in rows])
        outputs.append("baselines.csv")
    (out / "baseline_notes.txt").write_text("".join(n + "\n" for n in notes))

    _manifest(out, args, [config], outputs)
    return 0


def _cmd_clear(args) -> int:
    orders_path = _require(args.orders, "orders file")
    out = _out_dir(args)
    buys, sells = _read_orders(orders_path)
    clearing = mk.clear_double_auction(buys, sells, pricing=args.pricing)
    _write_csv(
        out / "matches.csv",
        ["buyer_id", "seller_id", "quantity", "price"],
        [[m.buyer_id, m.seller_id, m.quantity, clearing.clearing_price] for m in clearing.matches],
    )
    residuals = [
        [aid, "buy", qty] for aid, qty in sorted(clearing.residual_buys.items())
    ] + [[aid, "sell", qty] for aid, qty in sorted(clearing.residual_sells.items())]
    _write_csv(out / "residuals.csv", ["agent_id", "side", "quantity"], residuals)
    _write_kv(
        out / "clearing.txt",
        {
            "clearing_price": clearing.clearing_price,
            "matched_volume": clearing.matched_volume,
            "matches": len(clearing.matches),
        },
    )
    _manifest(out, args, [orders_path], ["matches.csv", "residuals.csv", "clearing.txt"])
    return 0


def _cmd_ev_auction(args) -> int:
    pop_path = _require(args.population, "population file")
    out = _out_dir(args)
    chargers, dischargers = evx.read_ev_population_csv(pop_path)
    _progress(args, f"{len(chargers)} charging / {len(dischargers)} discharging vehicles")
    alloc, result = evx.run_iterative_auction(
        chargers, dischargers, eta=args.eta, eps=args.eps, max_iter=args.max_iter
    )
    rows = []
    for j, s in enumerate(dischargers):
        for i, c in enumerate(chargers):
            if alloc.sent[j, i] > 1e-12:
                rows.append([s.id, c.id, alloc.sent[j, i], alloc.eta * alloc.sent[j, i]])
    _write_csv(out / "allocation.csv", ["from", "to", "sent_kwh", "delivered_kwh"], rows)
    _write_csv(
        out / "trace.csv",
        ["iteration", "welfare", "max_price_change"],
        [
            [k, w, change]
            for k, (w, change) in enumerate(
                zip(
                    result.trace.welfare_history,
                    [None] + result.trace.price_change_history,
                )
            )
        ],
    )
    settle_rows = [
        ["buyer", cid, cash] for cid, cash in sorted(result.settlement.buyer_payments.items())
    ] + [
        ["seller", sid, cash] for sid, cash in sorted(result.settlement.seller_receipts.items())
    ]
    _write_csv(out / "settlement.csv", ["side", "agent_id", "cash"], settle_rows)
    _write_kv(
        out / "summary.txt",
        {
            "converged": result.trace.converged,
            "iterations": result.trace.iterations,
            "price": result.settlement.price,
            "welfare": result.trace.welfare_history[-1] if result.trace.welfare_history else None,
        },
    )
    _manifest(
        out, args, [pop_path],
        ["allocation.csv", "trace.csv", "settlement.csv", "summary.txt"],
    )
    return 0


def _cmd_shapley(args) -> int:
    inst_path = _require(args.instance, "instance file")
    out = _out_dir(args)
    tariff = mk.Tariff(p_wp=args.p_wp, p_rp=args.p_rp)
    instance = _read_instance(inst_path, tariff)
    if args.exact:
        alloc = co.shapley_exact(instance)
        method = "exact"
    else:
        alloc = co.shapley_monte_carlo(instance, args.samples, seed=args.seed or 0)
        method = f"monte_carlo[{args.samples}]"
    prices = {p.customer_id: p for p in co.implied_p2p_prices(instance, alloc)}
    rows = []
    for c in instance.customers:
        p = prices.get(c.id)
        rows.append(
            [
                c.id,
                c.role,
                c.net_energy,
                alloc.payoffs[c.id],
                p.price if p else None,
                p.within_band if p else None,
            ]
        )
    _write_csv(
        out / "allocation.csv",
        ["id", "role", "net_kwh", "payoff", "implied_price", "within_band"],
        rows,
    )
    _write_kv(
        out / "summary.txt",
        {
            "method": method,
            "grand_value": co.coalition_value(instance.customers, tariff),
            "total_payoff": alloc.total(),
        },
    )
    _manifest(out, args, [inst_path], ["allocation.csv", "summary.txt"])
    return 0


def _cmd_storage_auction(args) -> int:
    rus_path = _require(args.rus, "residential-units file")
    sfcs_path = _require(args.sfcs, "SFC file")
    out = _out_dir(args)
    rus = _read_rus(rus_path)
    sfcs = _read_sfcs(sfcs_path)
    outcome = st.run_storage_auction(rus, sfcs, rule=args.rule)
    ru_rows = [
        [
            rid,
            outcome.shares.get(rid),
            outcome.burdens.get(rid),
            outcome.ru_utilities.get(rid),
        ]
        for rid in sorted(outcome.participating_rus)
    ]
    _write_csv(out / "units.csv", ["id", "share_kwh", "burden_kwh", "utility"], ru_rows)
    sfc_rows = [
        [sid, outcome.sfc_allocations.get(sid), outcome.sfc_utilities.get(sid)]
        for sid in sorted(outcome.participating_sfcs)
    ]
    _write_csv(out / "sfcs.csv", ["id", "allocated_kwh", "utility"], sfc_rows)
    _write_kv(
        out / "summary.txt",
        {
            "vickrey_price": outcome.vickrey_price,
            "auction_price": outcome.auction_price,
            "total_shared_kwh": outcome.total_shared(),
            "total_allocated_kwh": outcome.total_allocated(),
            "total_burden_kwh": outcome.total_burden(),
            "rule": args.rule,
        },
    )
    _manifest(out, args, [rus_path, sfcs_path], ["units.csv", "sfcs.csv", "summary.txt"])
    return 0


def _cmd_ic_check(args) -> int:
    out = _out_dir(args)
    scenarios = st.make_ic_scenarios(args.trials, seed=args.seed or 0, rule=args.rule)
    _progress(args, f"searching misreports across {args.trials} scenarios")
    report = st.check_incentive_compatibility(scenarios)
    _write_csv(
        out / "ic_violations.csv",
        ["scenario", "agent_id", "parameter", "factor", "gain"],
        report.profitable_deviations,
    )
    _write_csv(
        out / "ir_violations.csv",
        ["scenario", "agent_id", "utility"],
        report.ir_violations,
    )
    _write_kv(
        out / "summary.txt",
        {
            "scenarios": report.scenarios_checked,
            "deviations_checked": report.deviations_checked,
            "profitable_deviations": len(report.profitable_deviations),
            "ir_violations": len(report.ir_violations),
            "clean": report.clean,
        },
    )
    _manifest(out, args, [], ["ic_violations.csv", "ir_violations.csv", "summary.txt"])
    return 0


def _cmd_nash(args) -> int:
    game_path = _require(args.game, "game file")
    out = _out_dir(args)
    game = _read_game(game_path)
    equilibria = games.find_pure_nash(game)
    _write_csv(
        out / "equilibria.csv",
        [f"s{k}" for k in range(game.n_players)],
        [list(profile) for profile in equilibria],
    )
    _write_kv(
        out / "summary.txt",
        {
            "players": game.n_players,
            "strategies": "x".join(str(k) for k in game.strategy_counts),
            "pure_equilibria": len(equilibria),
        },
    )
    _manifest(out, args, [game_path], ["equilibria.csv", "summary.txt"])
    return 0


def _cmd_sweep(args) -> int:
    config = _require(args.config, "config file")
    out = _out_dir(args)
    scenario = sim.load_scenario(config)
    if args.seed is not None:
        scenario.seed = args.seed
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise InputError(f"bad sweep values {args.values!r}") from exc

    cap = _thread_cap()
    if cap > 1 and len(values) > 1:
        _progress(args, f"sweeping {len(values)} points on {cap} threads")
        with ThreadPoolExecutor(max_workers=cap) as pool:
            chunks = list(pool.map(lambda v: sim.sweep(scenario, args.param, [v]), values))
        rows = [row for chunk in chunks for row in chunk]
    else:
        _progress(args, f"sweeping {len(values)} points")
        rows = sim.sweep(scenario, args.param, values)

    if rows:
        header = list(rows[0])
        _write_csv(out / "sweep.csv", header, [[r.get(k) for k in header] for r in rows])
    else:
        _write_csv(out / "sweep.csv", ["value"], [])
    _manifest(out, args, [config], ["sweep.csv"])
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridswap",
        description="Peer-to-peer energy trading simulations",
    )
    parser.add_argument("--version", action="version", version=f"gridswap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=None):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=seed_default, help="random seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress text")

    p = sub.add_parser("run", help="run a full scenario simulation")
    p.add_argument("--config", required=True)
    common(p)
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("clear", help="clear one slot's double auction from an orders CSV")
    p.add_argument("--orders", required=True)
    p.add_argument("--pricing", choices=["marginal_bid", "midpoint"], default="marginal_bid")
    common(p)
    p.set_defaults(handler=_cmd_clear)

    p = sub.add_parser("ev-auction", help="iterative EV double auction from a population CSV")
    p.add_argument("--population", required=True)
    p.add_argument("--eta", type=float, default=evx.DEFAULT_ETA)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=500)
    common(p)
    p.set_defaults(handler=_cmd_ev_auction)

    p = sub.add_parser("shapley", help="coalition payoff division from an instance CSV")
    p.add_argument("--instance", required=True)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--p-wp", type=float, default=0.05)
    p.add_argument("--p-rp", type=float, default=0.30)
    common(p, seed_default=0)
    p.set_defaults(handler=_cmd_shapley)

    p = sub.add_parser("storage-auction", help="storage-sharing auction from RU/SFC CSVs")
    p.add_argument("--rus", required=True)
    p.add_argument("--sfcs", required=True)
    p.add_argument("--rule", choices=[st.PROPORTIONAL, st.EQUAL], default=st.PROPORTIONAL)
    common(p)
    p.set_defaults(handler=_cmd_storage_auction)

    p = sub.add_parser("ic-check", help="search storage-auction misreports for profit")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--rule", choices=[st.PROPORTIONAL, st.EQUAL], default=st.PROPORTIONAL)
    common(p, seed_default=0)
    p.set_defaults(handler=_cmd_ic_check)

    p = sub.add_parser("nash", help="enumerate pure equilibria of a small game CSV")
    p.add_argument("--game", required=True)
    common(p)
    p.set_defaults(handler=_cmd_nash)

    p = sub.add_parser("sweep", help="run a parameter sweep over a scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    common(p)
    p.set_defaults(handler=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    args.from_argv = argv is None
    args.raw_argv = list(argv) if argv is not None else []
    try:
        return args.handler(args)
    except FileNotFoundError as exc:
        print(f"gridswap: {exc}", file=sys.stderr)
        return 2
    except GridswapError as exc:
        print(f"gridswap: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
