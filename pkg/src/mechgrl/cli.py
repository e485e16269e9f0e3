"""Command-line front end: ``simulate``, ``verify`` and ``captrade``.

Exit codes: 0 success, 1 verification failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import captrade as ct
from .agents import FixedAgent, OracleAgent, ScriptedAgent
from .envcore import REFERENCE_ENVS, check_chronological, make_env, random_small_env, run_protocol, total_social_welfare
from .errors import BudgetExceededError, ConfigurationError, DomainError, ProtocolError
from .markovvcg import EpisodicMDP, check_markov_ic_ir, markov_vcg, policy_value
from .mechanisms import ClarkVCG, ExponentialVCG, ExpVCGConfig, dp_ratio_check
from .oracle import (
    GUM,
    check_bayes_nash_ic,
    check_ir,
    expected_cumulative_utility,
    gum_martingale_check,
    make_tables,
    random_report,
)
from .validation import check_seed

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SUITES = ("ic", "ir", "dp", "gum", "chronological", "all")
RANDOM_ENVS = 50


# -- file helpers -------------------------------------------------------------


def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def rows_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def load_scenario(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read scenario: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"scenario is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("scenario must be a JSON object")
    return data


def resolve_seed(args, scenario, required=True):
    seed = args.seed if args.seed is not None else scenario.get("seed")
    if seed is None:
        if required:
            raise ConfigurationError("a seed is required: pass --seed or set \"seed\" in the scenario")
        return 0
    return check_seed(seed)


# -- scenario builders ----------------------------------------------------------


def build_env(spec):
    spec = spec or {"name": "factory"}
    if isinstance(spec, str):
        spec = {"name": spec}
    try:
        return make_env(spec.get("name", "factory"), **spec.get("params", {}))
    except (DomainError, TypeError) as e:
        raise ConfigurationError(f"bad environment spec: {e}") from None


def build_mechanism(spec):
    spec = spec or {"name": "clark-vcg"}
    name = spec.get("name", "clark-vcg")
    if name == "clark-vcg":
        return ClarkVCG()
    if name == "exp-vcg":
        return ExponentialVCG(float(spec.get("epsilon", 1.0)), float(spec.get("sensitivity", 1.0)))
    raise ConfigurationError(f"unknown mechanism {name!r}; expected clark-vcg or exp-vcg")


def _horizons(scenario, env, horizon):
    hs = scenario.get("horizons")
    if hs is None:
        return [horizon] * env.k
    if len(hs) != env.k:
        raise ConfigurationError("need one horizon per agent")
    return [int(m) for m in hs]


def build_agents(scenario, env, horizon):
    specs = scenario.get("agents", {"type": "oracle", "tables": "rational"})
    if isinstance(specs, dict):
        specs = [specs] * env.k
    if len(specs) != env.k:
        raise ConfigurationError(f"environment has {env.k} agents but {len(specs)} agent specs were given")
    horizons = _horizons(scenario, env, horizon)
    cache = {}

    def tables(kind):
        if kind not in cache:
            cache[kind] = make_tables(env, horizons, kind, T=max(horizons))
        return cache[kind]

    agents = []
    for sp in specs:
        kind = sp.get("type", "oracle")
        if kind == "oracle":
            agents.append(OracleAgent(tables(sp.get("tables", "rational"))))
        elif kind == "fixed":
            agents.append(FixedAgent(sp["values"]))
        elif kind == "scripted":
            base = OracleAgent(tables(sp.get("tables", "rational")))
            agents.append(ScriptedAgent(base, {int(t): v for t, v in sp.get("overrides", {}).items()}))
        else:
            raise ConfigurationError(f"unknown agent type {kind!r}")
    return agents


# -- simulate ---------------------------------------------------------------------


def cmd_simulate(args):
    sc = load_scenario(args.scenario)
    kind = sc.get("kind", "protocol")
    out = Path(args.out)
    if kind == "markov-vcg":
        return _simulate_markov(sc, out)
    if kind in ("captrade-greedy", "captrade-rl"):
        args.action = kind.split("-", 1)[1]
        return cmd_captrade(args, sc)
    seed = resolve_seed(args, sc)
    env = build_env(sc.get("env"))
    horizon = sc.get("horizon", 2)
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigurationError("horizon must be a positive integer")
    if kind == "oracle-eval":
        horizons = _horizons(sc, env, horizon)
        tabs = make_tables(env, horizons, sc.get("tables", "rational"), T=max(horizons))
        write_atomic(out / "tables.csv", tabs.to_csv())
        summary = {"kind": kind, "env": env.name, "tables": tabs.kind, "horizons": horizons,
                   "expected_cumulative_utility": [expected_cumulative_utility(env, tabs, i) for i in range(env.k)]}
        write_json(out / "summary.json", summary)
        print(json.dumps(summary, default=_plain))
        return EXIT_OK
    if kind != "protocol":
        raise ConfigurationError(f"unknown scenario kind {kind!r}")
    mech = build_mechanism(sc.get("mechanism"))
    agents = build_agents(sc, env, horizon)
    trace = run_protocol(env, mech, agents, horizon, seed, sc.get("visibility", "own"))
    write_atomic(out / "trace.jsonl", trace.to_jsonl())
    summary = {"kind": kind, "env": env.name, "mechanism": trace.mechanism_id, "seed": seed, "horizon": horizon,
               "cumulative_utilities": list(trace.cumulative_utilities()),
               "total_welfare": total_social_welfare(trace),
               "chosen_actions": [rec.to_json()["chosen_action"] for rec in trace.records]}
    write_json(out / "summary.json", summary)
    print(json.dumps(summary, default=_plain))
    return EXIT_OK


def _simulate_markov(sc, out):
    if "mdp" not in sc:
        raise ConfigurationError("markov-vcg scenarios need an \"mdp\" object")
    mdp = EpisodicMDP.from_dict(sc["mdp"])
    res = markov_vcg(mdp)
    rep = check_markov_ic_ir(mdp, int(sc.get("misreports", 100)), int(sc.get("seed", 0)))
    summary = {"kind": "markov-vcg", "prices": res.prices, "pi_star": res.pi_star, "values": res.values,
               "utilities": [policy_value(mdp, res.pi_star, mdp.rewards[i]) - res.prices[i - 1]
                             for i in range(1, mdp.k + 1)],
               "ic_ir": rep.to_json()}
    write_json(out / "summary.json", summary)
    print(json.dumps({"prices": res.prices, "ok": rep.ok}, default=_plain))
    return EXIT_OK if rep.ok else EXIT_FAIL


# -- verify -------------------------------------------------------------------------


def _random_instances(seed, count=RANDOM_ENVS):
    """Small random environments with k <= 3 agents and depth <= 3, plus per-agent horizons."""
    rng = np.random.default_rng(seed)
    out = []
    for n in range(count):
        k = int(rng.integers(1, 4))
        depth = int(rng.integers(1, 4))
        n_actions = 2 if k == 3 else int(rng.integers(2, 4))
        env = random_small_env(k, n_actions, 2, depth, seed=int(seed) * 1000 + n)
        horizons = [int(m) for m in rng.integers(1, depth + 1, size=k)]
        horizons[int(rng.integers(k))] = depth
        out.append((env, horizons))
    return out


def _suite_envs(sc, seed):
    if "env" in sc:
        env = build_env(sc["env"])
        T = int(sc.get("horizon", 2))
        return [(env, _horizons(sc, env, T))]
    return [(build_env("factory"), [2, 2, 2])] + _random_instances(seed)


def suite_ic(sc, seed):
    kind = sc.get("tables", "rational")
    reps = []
    for env, hs in _suite_envs(sc, seed):
        tabs = make_tables(env, hs, kind, T=max(hs))
        r = check_bayes_nash_ic(env, tabs, int(sc.get("misreports", 200)), seed)
        reps.append({"env": env.name, "horizons": hs, **r.to_json()})
    return reps


def suite_ir(sc, seed):
    kind = sc.get("tables", "rational")
    reps = []
    for env, hs in _suite_envs(sc, seed):
        tabs = make_tables(env, hs, kind, T=max(hs))
        r = check_ir(env, tabs)
        reps.append({"env": env.name, "horizons": hs, **r.to_json()})
    return reps


def suite_dp(sc, seed):
    reps = []
    for eps in sc.get("epsilons", [0.1, 1.0]):
        worst = dp_ratio_check(ExpVCGConfig(float(eps)), alt=3, n_agents=2)
        reps.append({"epsilon": eps, "max_log_ratio": worst, "ok": worst <= eps + 1e-9})
    return reps


def suite_gum(sc, seed):
    reps = []
    for env, hs in _suite_envs(sc, seed)[:11]:
        T = max(hs)
        for label, reports in (("truthful", None), ("adversarial", [random_report(seed + j) for j in range(env.k)])):
            g = GUM(env, T, reports)
            balance = 0.0
            for steps, _ in g.trajectories():
                _, pays = g.transfers_along(steps)
                balance = max(balance, float(np.abs(pays.sum(axis=1)).max()))
            entry = {"env": env.name, "T": T, "reports": label, "budget_residual": balance}
            if label == "truthful":
                entry["martingale_residual"] = max(gum_martingale_check(env, None, t, j, gum=g)
                                                   for t in range(1, T + 2) for j in range(env.k))
            entry["ok"] = balance <= 1e-9 and entry.get("martingale_residual", 0.0) < 1e-9
            reps.append(entry)
    return reps


def suite_chronological(sc, seed):
    if "env" in sc:
        envs = [build_env(sc["env"])]
    else:
        envs = [make_env(n) for n in REFERENCE_ENVS if n not in ("future-leak", "random-small")]
        envs += [env for env, _ in _random_instances(seed, 5)]
    depth = int(sc.get("depth", 3))
    reps = []
    for env in envs:
        r = check_chronological(env, depth)
        reps.append({"env": env.name, "depth": depth, "nodes": r.nodes, "ok": r.ok,
                     "violations": r.violations[:20]})
    return reps


SUITE_FUNCS = {"ic": suite_ic, "ir": suite_ir, "dp": suite_dp, "gum": suite_gum,
               "chronological": suite_chronological}


def cmd_verify(args):
    sc = load_scenario(args.scenario)
    suite = args.suite or sc.get("suite", "all")
    if suite not in SUITES:
        raise ConfigurationError(f"unknown suite {suite!r}; expected one of {SUITES}")
    seed = resolve_seed(args, sc, required=False)
    names = [s for s in SUITES if s != "all"] if suite == "all" else [suite]
    report = {"seed": seed, "suites": {}}
    ok = True
    for name in names:
        entries = SUITE_FUNCS[name](sc, seed)
        passed = all(e.get("ok", False) for e in entries)
        report["suites"][name] = {"ok": passed, "results": entries}
        ok &= passed
        print(f"{name}: {'pass' if passed else 'FAIL'}")
    report["ok"] = ok
    write_json(Path(args.out) / "verify_report.json", report)
    return EXIT_OK if ok else EXIT_FAIL


# -- captrade -----------------------------------------------------------------------


def cmd_captrade(args, sc=None):
    raw = load_scenario(args.scenario) if sc is None else sc
    try:
        scen = ct.Scenario.from_dict(raw)
    except (TypeError, ValueError, DomainError) as e:
        raise ConfigurationError(f"bad cap-and-trade scenario: {e}") from None
    out = Path(args.out)
    action = args.action
    if action == "greedy":
        ledger = ct.run_greedy_auction(scen.refineries, scen.permit_cap, scen.tranche_size)
        write_atomic(out / "ledger.csv", ledger.to_csv())
        tot = ledger.totals()
        write_json(out / "summary.json", tot)
        print(json.dumps(tot, default=_plain))
    elif action == "fixed-price":
        rows, total = [], 0.0
        for i, r in enumerate(scen.refineries):
            y, prof = ct.fixed_price_optimum(r.m, scen.permit_price_fixed, r.capacity, r.margin)
            e = ct.emissions(r.m, y)
            total += e
            rows.append((i + 1, r.m, y, prof, e))
        write_atomic(out / "fixed_price.csv", rows_csv(("agent", "m", "y_star", "profit", "emissions"), rows))
        summary = {"price_per_ton": scen.permit_price_fixed, "total_emissions": total,
                   "refineries": [dict(zip(("agent", "m", "y_star", "profit", "emissions"), r)) for r in rows]}
        write_json(out / "summary.json", summary)
        print(json.dumps(summary, default=_plain))
    elif action == "no-price":
        rows = [(i + 1, r.m, r.capacity, ct.emissions(r.m, r.capacity)) for i, r in enumerate(scen.refineries)]
        total = ct.no_price_emissions(scen.refineries)
        write_atomic(out / "no_price.csv", rows_csv(("agent", "m", "production", "emissions"), rows))
        write_json(out / "summary.json", {"total_emissions": total})
        print(json.dumps({"total_emissions": total}))
    elif action == "rl":
        seed = resolve_seed(args, raw)
        if getattr(args, "episodes", None) is not None:
            scen.rl.episodes = int(args.episodes)
        res = ct.rl_experiment(scen.rl.variant, scen.rl.episodes, seed, scen)
        write_atomic(out / "learning_curve.csv", res.curve_csv())
        write_json(out / "policy.json", {"matrices": res.policy_tables(),
                                         "q_tables": [ag.to_json() for ag in res.agents]})
        summary = {"variant": res.variant, "seed": seed, "episodes": scen.rl.episodes,
                   "final_profit": res.final_profit, "final_paid": res.final_paid,
                   "final_avg_permit_price": res.final_avg_price, "shared_profit": res.shared_profit}
        write_json(out / "summary.json", summary)
        print(json.dumps(summary, default=_plain))
    else:
        raise ConfigurationError(f"unknown captrade subcommand {action!r}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="mechgrl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", help="scenario JSON file")
        sp.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        sp.add_argument("--out", default="out", help="output directory")

    s = sub.add_parser("simulate", help="run a protocol, oracle or Markov VCG scenario")
    common(s)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="run property suites")
    common(v)
    v.add_argument("--suite", choices=SUITES)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("captrade", help="cap-and-trade experiments")
    c.add_argument("action", choices=("greedy", "rl", "fixed-price", "no-price"))
    common(c)
    c.add_argument("--episodes", type=int)
    c.set_defaults(func=cmd_captrade)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ProtocolError, BudgetExceededError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
