"""Scenario engine: config ingestion, per-slot simulation, baselines, sweeps.

A scenario names a tariff, a mechanism, a horizon of 15-minute slots, and a
set of agents with load/generation series or mechanism parameters. The engine
replays the configured market slot by slot, aggregates per-agent cash flows
and system energy totals, and compares them against feed-in-tariff,
equal-distribution, and grid-hybrid baselines where those apply.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import coalition as co
from . import ev as evx
from . import market as mk
from . import storage as st
from .errors import InputError, SchemaError

MECHANISMS = ("double_auction", "ev_auction", "coalition", "storage_auction")
ROLES = ("consumer", "prosumer", "ev", "residential_unit", "sfc")
SWEEPABLE = ("supplier_count", "solar_fraction", "sfc_requirement", "grid_price")


@dataclass(eq=False)
class AgentProfile:
    id: str
    role: str
    load: np.ndarray
    gen: np.ndarray
    params: dict = field(default_factory=dict)

    def net(self, t: int) -> float:
        return float(self.gen[t] - self.load[t])


@dataclass
class Scenario:
    agents: list[AgentProfile]
    tariff: mk.Tariff
    mechanism: str
    horizon: int
    slot_minutes: int = 15
    seed: int = 0
    options: dict = field(default_factory=dict)

    def agent(self, aid: str) -> AgentProfile:
        for a in self.agents:
            if a.id == aid:
                return a
        raise InputError(f"unknown agent {aid!r}")


@dataclass
class MetricsReport:
    per_agent: dict
    system: dict

    def agent_ids(self) -> list[str]:
        return sorted(self.per_agent)


# ---------------------------------------------------------------------------
# config ingestion


def _parse_number(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise SchemaError(f"{where}: expected a number, got {text!r}") from exc


def _read_series(path: Path, horizon: int, agent_id: str):
    if not path.exists():
        raise SchemaError(f"agent {agent_id!r}: series file {path} not found")
    loads, gens = [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"slot_index", "load_kwh", "gen_kwh"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SchemaError(
                f"{path}: header must contain slot_index,load_kwh,gen_kwh"
            )
        for ln, row in enumerate(reader, start=2):
            load = _parse_number(row["load_kwh"], f"{path}:{ln}")
            gen = _parse_number(row["gen_kwh"], f"{path}:{ln}")
            if load < 0 or gen < 0:
                raise SchemaError(f"{path}:{ln}: series values must be >= 0")
            loads.append(load)
            gens.append(gen)
    if len(loads) != horizon:
        raise SchemaError(
            f"agent {agent_id!r}: series length {len(loads)} does not match "
            f"horizon {horizon} ({path})"
        )
    return np.array(loads), np.array(gens)


def load_scenario(config_path, data_dir=None) -> Scenario:
    """Read a key-value scenario config.

    Lines look like `key = value`; `#` starts a comment. Agents are declared
    as `agent = <id> <role> <series.csv|-> [name=value ...]`; series files are
    resolved against data_dir (default: the config's directory).
    """
    config_path = Path(config_path)
    if not config_path.exists():
        raise FileNotFoundError(f"config file {config_path} not found")
    base = Path(data_dir) if data_dir is not None else config_path.parent

    keys: dict[str, str] = {}
    agent_specs: list[tuple[int, str]] = []
    for ln, raw in enumerate(config_path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{config_path}:{ln}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "agent":
            agent_specs.append((ln, value))
        else:
            keys[key] = value

    where = str(config_path)
    mechanism = keys.get("mechanism", "double_auction")
    if mechanism not in MECHANISMS:
        raise SchemaError(f"{where}: unknown mechanism {mechanism!r}")
    horizon = int(_parse_number(keys.get("horizon", "1"), where))
    if horizon < 1:
        raise SchemaError(f"{where}: horizon must be >= 1")
    slot_minutes = int(_parse_number(keys.get("slot_minutes", "15"), where))
    seed = int(_parse_number(keys.get("seed", "0"), where))
    p_wp = _parse_number(keys.get("p_wp", "0.05"), where)
    p_rp = _parse_number(keys.get("p_rp", "0.30"), where)
    try:
        tariff = mk.Tariff(p_wp=p_wp, p_rp=p_rp)
    except InputError as exc:
        raise SchemaError(f"{where}: {exc}") from exc

    options: dict = {}
    for key in ("eta", "eps", "grid_sell_out", "grid_buy_back", "mc_samples"):
        if key in keys:
            options[key] = _parse_number(keys[key], where)
    if "rule" in keys:
        if keys["rule"] not in (st.PROPORTIONAL, st.EQUAL):
            raise SchemaError(f"{where}: rule must be proportional or equal")
        options["rule"] = keys["rule"]
    for key in ("buyer_margin", "seller_margin"):
        if key in keys:
            lo, _, hi = keys[key].partition(":")
            options[key] = (
                _parse_number(lo, where),
                _parse_number(hi if hi else lo, where),
            )

    agents: list[AgentProfile] = []
    for ln, decl in agent_specs:
        parts = decl.split()
        if len(parts) < 3:
            raise SchemaError(
                f"{where}:{ln}: agent needs '<id> <role> <series|-> [k=v ...]'"
            )
        aid, role, series = parts[0], parts[1], parts[2]
        if role not in ROLES:
            raise SchemaError(f"{where}:{ln}: unknown role {role!r}")
        params: dict = {}
        for token in parts[3:]:
            if "=" not in token:
                raise SchemaError(f"{where}:{ln}: bad parameter token {token!r}")
            name, value = token.split("=", 1)
            try:
                params[name] = float(value)
            except ValueError:
                params[name] = value
        if series == "-":
            load = np.zeros(horizon)
            gen = np.zeros(horizon)
        else:
            load, gen = _read_series(base / series, horizon, aid)
        agents.append(AgentProfile(aid, role, load, gen, params))

    if not agents:
        raise SchemaError(f"{where}: no agents declared")
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{where}: duplicate agent ids")

    return Scenario(
        agents=agents,
        tariff=tariff,
        mechanism=mechanism,
        horizon=horizon,
        slot_minutes=slot_minutes,
        seed=seed,
        options=options,
    )


# ---------------------------------------------------------------------------
# mechanism adapters


def _draw_margins(scenario: Scenario):
    """One (buy, sell) margin pair per agent, drawn once from the seeded rng."""
    blo, bhi = scenario.options.get("buyer_margin", (0.02, 0.10))
    slo, shi = scenario.options.get("seller_margin", (0.02, 0.10))
    rng = np.random.default_rng(scenario.seed)
    margins = {}
    for agent in sorted(scenario.agents, key=lambda a: a.id):
        margins[agent.id] = (
            float(rng.uniform(blo, bhi)),
            float(rng.uniform(slo, shi)),
        )
    return margins


def _blank_row(role: str) -> dict:
    return {
        "role": role,
        "bill": 0.0,
        "revenue": 0.0,
        "fit_bill": 0.0,
        "fit_revenue": 0.0,
        "energy_bought_kwh": 0.0,
        "energy_sold_kwh": 0.0,
        "utility": 0.0,
    }


def _run_double_auction(scenario: Scenario) -> MetricsReport:
    tariff = scenario.tariff
    margins = _draw_margins(scenario)
    per_agent = {a.id: _blank_row(a.role) for a in scenario.agents}
    matched = imported = exported = 0.0
    buy_spend = buy_kwh = sell_earn = sell_kwh = 0.0

    for t in range(scenario.horizon):
        buys, sells = [], []
        for agent in sorted(scenario.agents, key=lambda a: a.id):
            net = agent.net(t)
            bmar, smar = margins[agent.id]
            if net > 1e-12:
                sells.append(mk.Order(agent.id, mk.SELL, net, tariff.p_wp + smar, t))
            elif net < -1e-12:
                buys.append(mk.Order(agent.id, mk.BUY, -net, tariff.p_rp - bmar, t))
        clearing = mk.clear_double_auction(buys, sells)
        settle = mk.settle_slot(clearing, tariff)

        for m in clearing.matches:
            matched += m.quantity
            per_agent[m.buyer_id]["energy_bought_kwh"] += m.quantity
            per_agent[m.seller_id]["energy_sold_kwh"] += m.quantity
        imported += sum(clearing.residual_buys.values())
        exported += sum(clearing.residual_sells.values())

        for aid, cash in settle.p2p_paid.items():
            per_agent[aid]["bill"] += cash
            buy_spend += cash
        for aid, cash in settle.p2p_received.items():
            per_agent[aid]["revenue"] += cash
            sell_earn += cash
        for aid, cash in settle.grid_charge.items():
            per_agent[aid]["bill"] += cash
            buy_spend += cash
            per_agent[aid]["energy_bought_kwh"] += clearing.residual_buys[aid]
        for aid, cash in settle.grid_credit.items():
            per_agent[aid]["revenue"] += cash
            sell_earn += cash
            per_agent[aid]["energy_sold_kwh"] += clearing.residual_sells[aid]

        for agent in scenario.agents:
            net = agent.net(t)
            if net < 0:
                per_agent[agent.id]["fit_bill"] += -net * tariff.p_rp
            elif net > 0:
                per_agent[agent.id]["fit_revenue"] += net * tariff.p_wp

    buy_kwh = matched + imported
    sell_kwh = matched + exported
    generation = float(sum(a.gen.sum() for a in scenario.agents))
    consumption = float(sum(a.load.sum() for a in scenario.agents))
    system = {
        "matched_kwh": matched,
        "grid_import_kwh": imported,
        "grid_export_kwh": exported,
        "loss_kwh": 0.0,
        "generation_kwh": generation,
        "consumption_kwh": consumption,
        "avg_buy_price": buy_spend / buy_kwh if buy_kwh > 0 else None,
        "avg_sell_price": sell_earn / sell_kwh if sell_kwh > 0 else None,
    }
    return MetricsReport(per_agent, system)


def _ev_population(scenario: Scenario):
    chargers, dischargers = [], []
    for agent in sorted(scenario.agents, key=lambda a: a.id):
        if agent.role != "ev":
            continue
        p = agent.params
        if "w" in p:
            chargers.append(
                evx.ChargingEV(
                    agent.id,
                    w=float(p["w"]),
                    c_min=float(p.get("c_min", 0.0)),
                    c_max=float(p.get("c_max", math.inf)),
                )
            )
        elif "l1" in p or "l2" in p:
            dischargers.append(
                evx.DischargingEV(
                    agent.id,
                    l1=float(p.get("l1", 0.0)),
                    l2=float(p.get("l2", 0.0)),
                    d_max=float(p.get("d_max", 0.0)),
                )
            )
        else:
            raise SchemaError(
                f"ev agent {agent.id!r} needs either w (charging) or l1/l2 (discharging)"
            )
    return chargers, dischargers


def _run_ev_auction(scenario: Scenario) -> MetricsReport:
    chargers, dischargers = _ev_population(scenario)
    eta = float(scenario.options.get("eta", evx.DEFAULT_ETA))
    eps = float(scenario.options.get("eps", 1e-4))
    per_agent = {a.id: _blank_row(a.role) for a in scenario.agents}
    sent_total = delivered_total = 0.0
    converged_slots = 0

    for _ in range(scenario.horizon):
        alloc, result = evx.run_iterative_auction(chargers, dischargers, eta, eps)
        converged_slots += result.trace.converged
        delivered = alloc.delivered_per_charger()
        sent = alloc.sent_per_discharger()
        for i, c in enumerate(chargers):
            row = per_agent[c.id]
            row["bill"] += result.settlement.buyer_payments[c.id]
            row["energy_bought_kwh"] += float(delivered[i])
            row["utility"] += evx.satisfaction(c, alloc.sent[:, i], eta)
            row["fit_bill"] += scenario.tariff.p_rp * float(delivered[i])
        for j, s in enumerate(dischargers):
            row = per_agent[s.id]
            row["revenue"] += result.settlement.seller_receipts[s.id]
            row["energy_sold_kwh"] += float(sent[j])
            row["utility"] -= evx.discharge_cost(s, alloc.sent[j, :])
            row["fit_revenue"] += scenario.tariff.p_wp * float(sent[j])
        sent_total += float(sent.sum())
        delivered_total += float(delivered.sum())

    system = {
        "matched_kwh": delivered_total,
        "grid_import_kwh": 0.0,
        "grid_export_kwh": 0.0,
        "loss_kwh": sent_total - delivered_total,
        "generation_kwh": sent_total,
        "consumption_kwh": delivered_total,
        "avg_buy_price": (
            sum(per_agent[c.id]["bill"] for c in chargers) / delivered_total
            if delivered_total > 0
            else None
        ),
        "avg_sell_price": (
            sum(per_agent[s.id]["revenue"] for s in dischargers) / sent_total
            if sent_total > 0
            else None
        ),
        "converged_slots": converged_slots,
    }
    return MetricsReport(per_agent, system)


def _coalition_instance(scenario: Scenario, t: int):
    customers = []
    for agent in sorted(scenario.agents, key=lambda a: a.id):
        net = agent.net(t)
        if abs(net) < 1e-12:
            continue
        role = co.SUPPLIER if net > 0 else co.USER
        customers.append(co.Customer(agent.id, role, net))
    if not customers:
        return None
    return co.CoalitionInstance(tuple(customers), scenario.tariff)


def _run_coalition(scenario: Scenario) -> MetricsReport:
    per_agent = {a.id: _blank_row(a.role) for a in scenario.agents}
    samples = int(scenario.options.get("mc_samples", 20_000))
    supply_total = demand_total = matched = 0.0

    for t in range(scenario.horizon):
        inst = _coalition_instance(scenario, t)
        if inst is None:
            continue
        if inst.n <= 10:
            alloc = co.shapley_exact(inst)
        else:
            alloc = co.shapley_monte_carlo(inst, samples, seed=scenario.seed + t)
        for c in inst.customers:
            row = per_agent[c.id]
            payoff = alloc.payoffs[c.id]
            if payoff >= 0:
                row["revenue"] += payoff
            else:
                row["bill"] += -payoff
            fit = co.fit_payoff(c, scenario.tariff)
            if fit >= 0:
                row["fit_revenue"] += fit
            else:
                row["fit_bill"] += -fit
            if c.net_energy > 0:
                row["energy_sold_kwh"] += c.net_energy
            else:
                row["energy_bought_kwh"] += -c.net_energy
        supply = sum(c.net_energy for c in inst.customers if c.net_energy > 0)
        demand = sum(-c.net_energy for c in inst.customers if c.net_energy < 0)
        supply_total += supply
        demand_total += demand
        matched += min(supply, demand)

    system = {
        "matched_kwh": matched,
        "grid_import_kwh": demand_total - matched,
        "grid_export_kwh": supply_total - matched,
        "loss_kwh": 0.0,
        "generation_kwh": supply_total,
        "consumption_kwh": demand_total,
        "avg_buy_price": None,
        "avg_sell_price": None,
    }
    return MetricsReport(per_agent, system)


def _storage_population(scenario: Scenario):
    rus, sfcs = [], []
    for agent in sorted(scenario.agents, key=lambda a: a.id):
        p = agent.params
        if agent.role == "residential_unit":
            rus.append(
                st.ResidentialUnit(
                    agent.id,
                    capacity=float(p["capacity"]),
                    reservation_price=float(p["reservation"]),
                    reluctance=float(p["reluctance"]),
                )
            )
        elif agent.role == "sfc":
            sfcs.append(
                st.SfcAgent(
                    agent.id,
                    requirement=float(p["requirement"]),
                    bid_price=float(p["bid"]),
                )
            )
    return rus, sfcs


def _run_storage(scenario: Scenario) -> MetricsReport:
    rus, sfcs = _storage_population(scenario)
    if not rus or not sfcs:
        raise SchemaError("storage_auction needs residential_unit and sfc agents")
    rule = scenario.options.get("rule", st.PROPORTIONAL)
    per_agent = {a.id: _blank_row(a.role) for a in scenario.agents}
    shared_total = 0.0

    for _ in range(scenario.horizon):
        out = st.run_storage_auction(rus, sfcs, rule)
        if out.empty:
            continue
        for r in rus:
            row = per_agent[r.id]
            share = out.shares.get(r.id, 0.0)
            sold = max(share - out.burdens.get(r.id, 0.0), 0.0)
            row["utility"] += out.ru_utilities.get(r.id, 0.0)
            row["revenue"] += out.auction_price * sold
            row["energy_sold_kwh"] += sold
        for s in sfcs:
            row = per_agent[s.id]
            got = out.sfc_allocations.get(s.id, 0.0)
            row["utility"] += out.sfc_utilities.get(s.id, 0.0)
            row["bill"] += out.auction_price * got
            row["energy_bought_kwh"] += got
        shared_total += out.total_allocated()

    system = {
        "matched_kwh": shared_total,
        "grid_import_kwh": 0.0,
        "grid_export_kwh": 0.0,
        "loss_kwh": 0.0,
        "generation_kwh": 0.0,
        "consumption_kwh": 0.0,
        "avg_buy_price": None,
        "avg_sell_price": None,
    }
    return MetricsReport(per_agent, system)


def run_simulation(scenario: Scenario) -> MetricsReport:
    """Replay the scenario's mechanism over its horizon.

    Deterministic for a given config and seed. Adds per-agent savings against
    the feed-in-tariff baseline and checks the energy accounting identity
    generation + imports = consumption + exports + losses to 1e-6 kWh.
    """
    runner = {
        "double_auction": _run_double_auction,
        "ev_auction": _run_ev_auction,
        "coalition": _run_coalition,
        "storage_auction": _run_storage,
    }[scenario.mechanism]
    report = runner(scenario)

    for row in report.per_agent.values():
        p2p_cost = row["bill"] - row["revenue"]
        fit_cost = row["fit_bill"] - row["fit_revenue"]
        row["savings"] = fit_cost - p2p_cost
        row["savings_pct"] = (
            100.0 * (fit_cost - p2p_cost) / fit_cost if fit_cost > 1e-12 else None
        )

    s = report.system
    residual = (
        s["generation_kwh"]
        + s["grid_import_kwh"]
        - s["consumption_kwh"]
        - s["grid_export_kwh"]
        - s["loss_kwh"]
    )
    s["energy_balance_residual_kwh"] = residual
    if abs(residual) > 1e-6:
        raise InputError(
            f"energy accounting identity violated by {residual:.3e} kWh"
        )
    return report


# ---------------------------------------------------------------------------
# baselines


def compare_baselines(scenario: Scenario):
    """Per-agent comparison of the configured mechanism against baselines.

    Columns that make no sense for the mechanism are omitted and listed in
    the returned notes. Returns (rows, notes).
    """
    report = run_simulation(scenario)
    notes: list[str] = []
    rows: list[dict] = []

    if scenario.mechanism in ("double_auction", "coalition"):
        notes.append("ed baseline applies to storage_auction scenarios only")
        notes.append("hybrid baseline applies to ev_auction scenarios only")
        for aid in report.agent_ids():
            r = report.per_agent[aid]
            rows.append(
                {
                    "id": aid,
                    "role": r["role"],
                    "p2p_cost": r["bill"] - r["revenue"],
                    "fit_cost": r["fit_bill"] - r["fit_revenue"],
                    "savings": r["savings"],
                    "savings_pct": r["savings_pct"],
                }
            )
        return rows, notes

    if scenario.mechanism == "ev_auction":
        notes.append("ed baseline applies to storage_auction scenarios only")
        sell_out = float(scenario.options.get("grid_sell_out", scenario.tariff.p_rp))
        buy_back = float(scenario.options.get("grid_buy_back", scenario.tariff.p_wp))
        eta_h = evx.DEFAULT_ETA_HYBRID
        for aid in report.agent_ids():
            r = report.per_agent[aid]
            if r["role"] != "ev":
                continue
            p2p_cost = r["bill"] - r["revenue"]
            if r["energy_bought_kwh"] > 0:
                # buyer may source delivered energy from the grid instead
                grid_cost = sell_out * r["energy_bought_kwh"] / eta_h
                hybrid_cost = min(r["bill"], grid_cost)
            elif r["energy_sold_kwh"] > 0:
                grid_rev = buy_back * r["energy_sold_kwh"]
                hybrid_cost = -max(r["revenue"], grid_rev)
            else:
                hybrid_cost = 0.0
            rows.append(
                {
                    "id": aid,
                    "role": "ev",
                    "p2p_cost": p2p_cost,
                    "fit_cost": r["fit_bill"] - r["fit_revenue"],
                    "hybrid_cost": hybrid_cost,
                    "savings": r["savings"],
                }
            )
        return rows, notes

    # storage_auction: equal-distribution and feed-in-tariff baselines
    notes.append("hybrid baseline applies to ev_auction scenarios only")
    rus, sfcs = _storage_population(scenario)
    v = st.vickrey_price(sfcs)
    total_q = math.fsum(s.requirement for s in sfcs)
    per_slot_ed = {}
    per_slot_fit = {}
    for r in rus:
        ed_share = min(total_q / len(rus), r.capacity)
        per_slot_ed[r.id] = (
            (v - r.reservation_price) * ed_share
            - 0.5 * r.reluctance * ed_share**2
        )
        fit_share = st.follower_best_response(r, scenario.tariff.p_wp)
        per_slot_fit[r.id] = (
            (scenario.tariff.p_wp - r.reservation_price) * fit_share
            - 0.5 * r.reluctance * fit_share**2
        )
    for aid in report.agent_ids():
        r = report.per_agent[aid]
        if r["role"] != "residential_unit":
            continue
        rows.append(
            {
                "id": aid,
                "role": r["role"],
                "p2p_utility": r["utility"],
                "ed_utility": per_slot_ed[aid] * scenario.horizon,
                "fit_utility": per_slot_fit[aid] * scenario.horizon,
            }
        )
    return rows, notes


# ---------------------------------------------------------------------------
# parameter sweeps


def sweep(scenario: Scenario, parameter: str, values) -> list[dict]:
    """One simulation per value with a common seed, emitted as table rows.

    Sweepable parameters: supplier_count (coalition population growth),
    solar_fraction (solar vs wind generation mix), sfc_requirement (storage
    demand), grid_price (hybrid grid sell-out price).
    """
    if parameter not in SWEEPABLE:
        raise InputError(
            f"unknown sweep parameter {parameter!r}; choose one of {', '.join(SWEEPABLE)}"
        )
    values = list(values)
    if not values:
        return []

    if parameter == "supplier_count":
        n_users = max(
            sum(1 for a in scenario.agents if a.role == "consumer"), 3
        )
        return co.supplier_count_sweep(
            scenario.seed,
            [int(v) for v in values],
            n_users=n_users,
            tariff=scenario.tariff,
            samples=int(scenario.options.get("mc_samples", 40_000)),
        )

    if parameter == "sfc_requirement":
        rus, sfcs = _storage_population(scenario)
        if not rus or not sfcs:
            raise InputError("sfc_requirement sweep needs a storage_auction scenario")
        return st.requirement_sweep(
            rus, sfcs, [float(v) for v in values],
            rule=scenario.options.get("rule", st.PROPORTIONAL),
        )

    if parameter == "grid_price":
        chargers, dischargers = _ev_population(scenario)
        if not chargers or not dischargers:
            raise InputError("grid_price sweep needs an ev_auction scenario")
        eta = float(scenario.options.get("eta", evx.DEFAULT_ETA))
        alloc, result = evx.run_iterative_auction(chargers, dischargers, eta)
        sent = alloc.sent_per_discharger()
        delivered = alloc.delivered_per_charger()
        buyers = tuple(
            evx.HybridBuyer(c.id, float(delivered[i]))
            for i, c in enumerate(chargers)
            if delivered[i] > 1e-9
        )
        price = result.settlement.price or scenario.tariff.p_rp
        sellers = tuple(
            evx.HybridSeller(s.id, float(sent[j]), price * eta)
            for j, s in enumerate(dischargers)
            if sent[j] > 1e-9
        )
        sc = evx.HybridScenario(buyers, sellers)
        buy_back = float(scenario.options.get("grid_buy_back", scenario.tariff.p_wp))
        rows = []
        for row in evx.hybrid_price_sweep(sc, [float(v) for v in values], buy_back):
            rows.append(
                {
                    "grid_sell_out_price": row["grid_sell_out_price"],
                    "p2p_avg_buying_price": row["p2p"]["avg_buying_price"],
                    "hybrid_avg_buying_price": row["hybrid"]["avg_buying_price"],
                    "p2p_transmitted_kwh": row["p2p"]["transmitted_kwh"],
                    "hybrid_transmitted_kwh": row["hybrid"]["transmitted_kwh"],
                }
            )
        return rows

    # solar_fraction: vary the share of supplying agents on a solar profile
    from . import synth

    rows = []
    suppliers = [a for a in scenario.agents if a.gen.sum() > 0]
    supplier_ids = {a.id for a in suppliers}
    if not suppliers:
        raise InputError("solar_fraction sweep needs generating agents")
    for v in values:
        frac = float(v)
        rng = np.random.default_rng(scenario.seed)
        agents = []
        n_solar = int(round(frac * len(suppliers)))
        solar_ids = {a.id for a in suppliers[:n_solar]}
        for a in scenario.agents:
            if a.id in supplier_ids:
                scale = float(a.gen.sum()) / max(scenario.horizon, 1) * 4.0
                gen = (
                    synth.solar_series(rng, scenario.horizon, scenario.slot_minutes, scale)
                    if a.id in solar_ids
                    else synth.wind_series(rng, scenario.horizon, scenario.slot_minutes, scale)
                )
                agents.append(AgentProfile(a.id, a.role, a.load.copy(), gen, dict(a.params)))
            else:
                agents.append(a)
        variant = Scenario(
            agents, scenario.tariff, scenario.mechanism, scenario.horizon,
            scenario.slot_minutes, scenario.seed, dict(scenario.options),
        )
        total_value = 0.0
        for t in range(variant.horizon):
            inst = _coalition_instance(variant, t)
            if inst is not None:
                total_value += co.coalition_value(inst.customers, variant.tariff)
        rows.append({"solar_fraction": frac, "community_value": total_value})
    return rows
