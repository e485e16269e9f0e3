"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
from __future__ import annotations

import math
import time

import numpy as np

from mechgrl import captrade as ct
from mechgrl.agents import (
    OracleAgent,
    ScriptedAgent,
    bayes_mixture_squared_error,
    hedge_init,
    hedge_step,
    matching_pennies_selfplay,
    mixture_log_loss,
)
from mechgrl.envcore import History, factory_env, random_small_env, run_protocol
from mechgrl.markovvcg import check_markov_ic_ir, markov_vcg, one_step_mdp, random_mdp
from mechgrl.mechanisms import (
    ClarkVCG,
    ExpVCGConfig,
    ValuationTable,
    clark_payments,
    dp_ratio_check,
    exp_mech_distribution,
    exp_vcg_expected_utility,
    gibbs_welfare,
    kl_divergence,
    soft_welfare,
    vcg_choose,
)
from mechgrl.actions import JointActionSet
from mechgrl.oracle import (
    GUM,
    alternative_tables,
    check_bayes_nash_ic,
    check_ir,
    gum_martingale_check,
    inflate_report,
    random_report,
    rational_tables,
    realisable_cu,
    self_rational_q,
    self_rational_tables,
)


def report(n, title, ok, detail=""):
    print(f"\ncriterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else ""))
    return ok


def run_factory(tables, seed, overrides=None):
    env = tables.env
    agents = [OracleAgent(tables) for _ in range(env.k)]
    if overrides:
        for i, o in overrides.items():
            agents[i] = ScriptedAgent(agents[i], o)
    return run_protocol(env, ClarkVCG(), agents, 2, seed)


def seed_for_first_choice(tables, consumer, limit=200):
    """First seed whose random tie-break at step 1 picks ``consumer`` (1-based)."""
    for s in range(limit):
        tr = run_factory(tables, s)
        if tr.records[0].chosen_action.index(1) + 1 == consumer:
            return s, tr
    raise AssertionError(f"no seed in range picks consumer {consumer}")


def cells(trace, with_cost=None):
    """Per agent, per step ``(declared value at chosen action, [cost,] reward, payment)``."""
    out = []
    for i in range(trace.k):
        row = []
        h = ()
        for rec in trace.records:
            a = rec.chosen_action
            cell = [rec.declared_valuations[i][a]]
            if with_cost is not None:
                cell.append(with_cost.c(i, h, a))
            cell += [rec.percept[i][1], rec.payments[i]]
            row.append(tuple(cell))
            h = h + ((a, rec.percept),)
        out.append(row)
    return out


# -- 1 ---------------------------------------------------------------------------


def test_criterion_01_factory_allocation():
    t0 = time.perf_counter()
    env = factory_env()
    tabs = rational_tables(env, [2, 2, 2])
    A = [env.consume_action(i) for i in range(3)]
    problems = []

    def expect(name, got, want):
        if got != want:
            problems.append(f"{name}: {got} != {want}")

    expect("q11", [tabs.q(0, (), a) for a in A], [100, 100, 100])
    expect("q12", [tabs.q(1, (), a) for a in A], [80, 80, 0])
    expect("q13", [tabs.q(2, (), a) for a in A], [0, 0, 0])
    expect("c11", [tabs.c(0, (), a) for a in A], [0, 60, 80])
    expect("c12", [tabs.c(1, (), a) for a in A], [60, 0, 0])
    expect("c13", [tabs.c(2, (), a) for a in A], [0, 0, 0])
    expect("v11", [tabs.v(0, (), a) for a in A], [100, 40, 20])
    expect("v12", [tabs.v(1, (), a) for a in A], [20, 80, 0])
    expect("v13", [tabs.v(2, (), a) for a in A], [0, 0, 0])
    for h in tabs.nodes:
        if len(h) == 1:
            for i in range(3):
                expect(f"c2{i + 1}", [tabs.c(i, h, a) for a in A], [0, 0, 0])
    # second-step valuations as listed for the example
    for a1 in A:
        h = env_history(env, [a1])
        expect("v21", [tabs.v(0, h, a) for a in A], [0, 0, 0] if a1 == A[0] else [100, 0, 0])
        expect("v22", [tabs.v(1, h, a) for a in A], [0, 0, 0] if a1 == A[1] else [0, 80, 0])
        expect("v23", [tabs.v(2, h, a) for a in A], [0, 0, 60])

    first_to_1 = [[(100, 100, 60), (0, 0, 0)], [(20, 0, 0), (80, 80, 60)], [(0, 0, 0), (0, 0, 0)]]
    first_to_2 = [[(40, 0, 0), (100, 100, 60)], [(80, 80, 60), (0, 0, 0)], [(0, 0, 0), (0, 0, 0)]]
    for consumer, table in ((1, first_to_1), (2, first_to_2)):
        _, tr = seed_for_first_choice(tabs, consumer)
        expect(f"table for a1*={consumer}", cells(tr), table)
        expect(f"CU for a1*={consumer}", tr.cumulative_utilities(), [40, 20, 0])
    dt = time.perf_counter() - t0
    ok = report(1, "factory allocation tables", not problems and dt < 1.0, f"{len(problems)} mismatches, {dt:.3f}s")
    assert ok, problems


def env_history(env, actions):
    h = History()
    for a in actions:
        (x, _), = env.percept_dist(h, a)
        h = h.extend(a, x)
    return h


# -- 2 ---------------------------------------------------------------------------


def test_criterion_02_self_rational_and_alternative():
    t0 = time.perf_counter()
    env = factory_env()
    problems = []

    def expect(name, got, want):
        if got != want:
            problems.append(f"{name}: {got} != {want}")

    qh = self_rational_q(env, [2, 2, 2])
    expect("q-hat", [float(qh[()][i, 0]) for i in range(3)], [100, 80, 60])
    expect("q-hat constant", [set(qh[()][i].tolist()) for i in range(3)], [{100.0}, {80.0}, {60.0}])
    sr = self_rational_tables(env, [2, 2, 2])
    sr_first_to_1 = [[(100, 100, 0), (0, 0, 0)], [(80, 0, 0), (80, 80, 60)], [(60, 0, 0), (0, 0, 0)]]
    sr_first_to_2 = [[(100, 0, 0), (100, 100, 60)], [(80, 80, 0), (0, 0, 0)], [(60, 0, 0), (0, 0, 0)]]
    sr_first_to_3 = [[(100, 0, 0), (100, 100, 80)], [(80, 0, 0), (0, 0, 0)], [(60, 0, 0), (0, 0, 0)]]
    for consumer, table, cu in ((1, sr_first_to_1, [100, 20, 0]), (2, sr_first_to_2, [40, 80, 0]),
                                (3, sr_first_to_3, [20, 0, 0])):
        _, tr = seed_for_first_choice(sr, consumer)
        expect(f"self-rational a1*={consumer}", cells(tr), table)
        expect(f"self-rational CU a1*={consumer}", tr.cumulative_utilities(), cu)

    alt = alternative_tables(env, [2, 2, 2])
    alt_first_to_1 = [[(100, 0, 100, 0), (0, 0, 0, 0)], [(80, 60, 0, 0), (80, 0, 80, 60)],
                      [(0, 0, 0, 0), (0, 0, 0, 0)]]
    alt_first_to_2 = [[(100, 60, 0, 0), (100, 0, 100, 60)], [(80, 0, 80, 0), (0, 0, 0, 0)],
                      [(0, 0, 0, 0), (0, 0, 0, 0)]]
    for consumer, table, cu in ((1, alt_first_to_1, [100, 20, 0]), (2, alt_first_to_2, [40, 80, 0])):
        _, tr = seed_for_first_choice(alt, consumer)
        expect(f"alternative a1*={consumer}", cells(tr, with_cost=alt), table)
        expect(f"alternative CU a1*={consumer}", tr.cumulative_utilities(), cu)

    lie = {1: {1: [80, 81, 0]}}
    for name, tabs in (("self-rational", sr), ("alternative", alt)):
        for seed in range(5):
            tr = run_factory(tabs, seed, lie)
            expect(f"{name} misreport allocation", [r.chosen_action for r in tr.records],
                   [env.consume_action(1), env.consume_action(0)])
            expect(f"{name} misreport CU", tr.cumulative_utilities(), [40, 80, 0])
    dt = time.perf_counter() - t0
    ok = report(2, "self-rational and alternative q scenarios", not problems and dt < 1.0,
                f"{len(problems)} mismatches, {dt:.3f}s")
    assert ok, problems


# -- 3 ---------------------------------------------------------------------------


GREEDY_LEDGER = [  # (R1 bid, R2 bid, payment, winner, winner profit) in $m
    (8.4, 6.1, 6.1, 1, 2.3),
    (1.6, 6.1, 1.6, 2, 4.5),
    (1.6, 2.4, 1.6, 2, 0.8),
    (1.6, 0.9, 0.9, 1, 0.7),
    (1.0, 0.9, 0.9, 1, 0.1),
]


def m01(x):
    """Round dollars to $0.1m."""
    return round(x / 1e6 + 1e-12, 1)


def test_criterion_03_greedy_ledger():
    t0 = time.perf_counter()
    ledger = ct.run_greedy_auction([ct.Refinery(1.0), ct.Refinery(2.0)], 15000, 3000)
    problems = []
    for t, want in enumerate(GREEDY_LEDGER):
        r1, r2 = ledger.rows[2 * t], ledger.rows[2 * t + 1]
        w = ledger.winners[t]
        got = (m01(r1["bid"]), m01(r2["bid"]), m01(ledger.payments[t]), w + 1, m01((r1, r2)[w]["+prof"]))
        for name, g, e in zip(("R1 bid", "R2 bid", "payment", "winner", "profit"), got, want):
            if g != e:
                problems.append(f"tranche {t + 1} {name}: {g} != {e}")
    tot = ledger.totals()
    for name, got, want in (("R1 permits", tot["permits"][0], 9000), ("R2 permits", tot["permits"][1], 6000),
                            ("R1 paid", m01(tot["paid"][0]), 8.0), ("R2 paid", m01(tot["paid"][1]), 3.2),
                            ("R1 profit", m01(tot["profit"][0]), 3.1), ("R2 profit", m01(tot["profit"][1]), 5.3),
                            ("collected", m01(tot["collected"]), 11.2),
                            ("R1 litres", round(tot["production"][0]), 55),
                            ("R2 litres", round(tot["production"][1]), 42)):
        if got != want:
            problems.append(f"{name}: {got} != {want}")
    dt = time.perf_counter() - t0
    ok = report(3, "greedy permit auction ledger at $0.1m", not problems and dt < 1.0,
                "; ".join(problems) or f"all cells match, {dt:.3f}s")
    assert ok, problems


# -- 4 ---------------------------------------------------------------------------


def test_criterion_04_emission_constants():
    problems = []
    total = ct.emissions(1, 100) + ct.emissions(2, 100)
    if total != 302664:
        problems.append(f"no-price emissions {total}")
    y1, n1 = ct.fixed_price_optimum(1, 190)
    y2, n2 = ct.fixed_price_optimum(2, 190)
    if abs(y1 - 62.7) > 0.1 or abs(n1 - 9.58e6) > 0.01 * 9.58e6:
        problems.append(f"R1 optimum {y1:.4f}, ${n1 / 1e6:.4f}m")
    if abs(y2 - 50.72) > 0.1 or abs(n2 - 7.77e6) > 0.01 * 7.77e6:
        problems.append(f"R2 optimum {y2:.4f}, ${n2 / 1e6:.4f}m")
    combined = ct.emissions(1, y1) + ct.emissions(2, y2)
    if abs(combined - 28682) > 0.01 * 28682:
        problems.append(f"combined emissions at optima {combined:.1f} vs 28682 ({(combined / 28682 - 1) * 100:+.2f}%)")
    ok = report(4, "emission constants and fixed-price optima", not problems, "; ".join(problems) or "all match")
    assert ok, problems


# -- 5 ---------------------------------------------------------------------------


def random_instances(count=50, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for n in range(count):
        k = int(rng.integers(1, 4))
        depth = int(rng.integers(1, 4))
        n_actions = 2 if k == 3 else int(rng.integers(2, 4))
        env = random_small_env(k, n_actions, 2, depth, seed=10_000 + n)
        hs = [int(m) for m in rng.integers(1, depth + 1, size=k)]
        hs[int(rng.integers(k))] = depth
        out.append((env, hs))
    return out


def test_criterion_05_ic_ir_suites():
    t0 = time.perf_counter()
    env = factory_env()
    instances = [(env, [2, 2, 2])] + random_instances()
    ic_viol = ir_viol = checked = 0
    for n, (e, hs) in enumerate(instances):
        tabs = rational_tables(e, hs)
        ic = check_bayes_nash_ic(e, tabs, 200, seed=n)
        ir = check_ir(e, tabs)
        ic_viol += ic.violations
        ir_viol += ir.violations
        checked += ic.checked + ir.checked
    sr = self_rational_tables(env, [2, 2, 2])
    flagged = check_bayes_nash_ic(env, sr, 200, seed=0)
    root_hits = [w for w in flagged.witnesses if w["t"] == 1 and w["agent"] == 2 and w["misreport_action"] == "0|1|0"]
    lie = [ValuationTable(env.alt, sr.node(()).declared[0]), ValuationTable(env.alt, [80, 81, 0]),
           ValuationTable(env.alt, sr.node(()).declared[2])]
    lie_cu = realisable_cu(env, sr, (), lie, 1)
    truth_cu = realisable_cu(env, sr, (), sr.declared_profile(()), 1)
    dt = time.perf_counter() - t0
    ok = (ic_viol == 0 and ir_viol == 0 and flagged.violations > 0 and root_hits
          and lie_cu == 80 and truth_cu == 20 and dt < 120)
    report(5, "Bayes-Nash IC and IR suites", ok,
           f"{len(instances)} envs, {checked} checks, IC violations {ic_viol}, IR violations {ir_viol}; "
           f"self-rational flagged {flagged.violations} (misreport CU {lie_cu} vs truthful {truth_cu}), {dt:.1f}s")
    assert ok


# -- 6 ---------------------------------------------------------------------------


def test_criterion_06_exponential_vcg():
    rng = np.random.default_rng(6)
    problems = []
    for eps in (0.1, 1.0):
        worst = dp_ratio_check(ExpVCGConfig(eps), alt=3, n_agents=2)
        if worst > eps + 1e-9:
            problems.append(f"DP ratio {worst} > {eps}")
    for _ in range(20):
        k, n = int(rng.integers(2, 4)), int(rng.integers(2, 5))
        V = rng.uniform(0, 1, size=(k, n))
        eps = float(rng.choice([0.5, 1.0, 4.0]))
        cfg = ExpVCGConfig(eps)
        star = exp_mech_distribution(V, cfg)
        best = gibbs_welfare(star, V, eps)
        xis = rng.dirichlet(np.ones(n) * rng.choice([0.2, 1.0, 5.0]), size=1000)
        if max(gibbs_welfare(x, V, eps) for x in xis) > best + 1e-12:
            problems.append("Gibbs welfare dominance")
        for i in range(k):
            truthful = exp_vcg_expected_utility(V[i], V, i, cfg)
            ir = soft_welfare(V, cfg) - soft_welfare(V, cfg, exclude=i)
            if abs(truthful - ir) > 1e-9 or ir < -1e-9:
                problems.append("IR identity")
            for _ in range(5):
                b = V.copy()
                b[i] = rng.uniform(0, 1, size=n)
                lie = exp_vcg_expected_utility(V[i], b, i, cfg)
                kl = kl_divergence(exp_mech_distribution(b, cfg), star)
                if abs(lie - (truthful - kl / cfg.beta)) > 1e-9:
                    problems.append("KL identity")
    ok = report(6, "exponential VCG privacy, Gibbs welfare, KL identity, IR", not problems,
                "; ".join(sorted(set(problems))) or "all hold")
    assert ok, problems


# -- 7 ---------------------------------------------------------------------------


def test_criterion_07_gum():
    problems = []
    envs = [(factory_env(), 2)] + [(random_small_env(k, 2, 2, T, seed=700 + k * 10 + T), T)
                                   for k in (1, 2, 3) for T in (1, 2)]
    worst_bal = worst_mart = 0.0
    for env, T in envs:
        for reports in (None, [random_report(j) for j in range(env.k)],
                        [inflate_report(0, 5.0)] + [None] * (env.k - 1)):
            g = GUM(env, T, reports)
            for steps, _ in g.trajectories():
                _, pays = g.transfers_along(steps)
                worst_bal = max(worst_bal, float(np.abs(pays.sum(axis=1)).max()))
        g = GUM(env, T)
        for t in range(1, T + 2):
            for j in range(env.k):
                worst_mart = max(worst_mart, gum_martingale_check(env, None, t, j, gum=g))
    if worst_bal > 1e-9:
        problems.append(f"budget residual {worst_bal}")
    if worst_mart >= 1e-9:
        problems.append(f"martingale residual {worst_mart}")
    g = GUM(factory_env(), 2)
    U = np.array([g.run(s).utilities for s in range(10_000)])
    target = np.array([g.guaranteed(i) for i in range(3)])
    se = U.std(axis=0, ddof=1) / math.sqrt(len(U))
    if np.any(np.abs(U.mean(axis=0) - target) > 3 * se + 1e-9):
        problems.append(f"Monte Carlo mean {U.mean(axis=0)} vs {target}")
    ok = report(7, "GUM budget balance, martingale, guaranteed utility", not problems,
                "; ".join(problems) or f"budget {worst_bal:.1e}, martingale {worst_mart:.1e}, "
                                       f"mean U {U.mean(axis=0).tolist()} = {target.tolist()}")
    assert ok, problems


# -- 8 ---------------------------------------------------------------------------


def test_criterion_08_hedge():
    rng = np.random.default_rng(8)
    problems = []
    worst_slack = math.inf
    for stream in range(100):
        n = int(rng.integers(2, 6))
        priors = rng.dirichlet(np.ones(n))
        eta = float(rng.choice([1.0, 0.5, 0.25]))
        st = hedge_init(dict(enumerate(priors)), eta)
        T = 200
        cum = np.zeros(n)
        mix = 0.0
        for t in range(T):
            # adversary: the currently leading specialist gets a bad prediction
            probs = rng.uniform(0.05, 1.0, size=n)
            probs[int(np.argmin(cum))] = rng.uniform(1e-4, 0.05)
            losses = dict(enumerate(-np.log(probs)))
            mix += mixture_log_loss(st, losses)
            st = hedge_step(st, losses)
            cum += -np.log(probs)
        for i in range(n):
            bound = cum[i] + math.log(1 / priors[i]) / eta
            worst_slack = min(worst_slack, bound - mix)
            if mix > bound + 1e-9:
                problems.append(f"regret bound stream {stream}")
    # eta = 1 posterior equals direct Bayes
    worst_post = 0.0
    for trial in range(20):
        n = 4
        priors = rng.dirichlet(np.ones(n))
        st = hedge_init(dict(enumerate(priors)), 1.0)
        logpost = np.log(priors)
        for t in range(100):
            p = rng.uniform(0.01, 1, size=n)
            st = hedge_step(st, dict(enumerate(-np.log(p))))
            logpost += np.log(p)
        post = np.exp(logpost - logpost.max())
        post /= post.sum()
        w = st.normalized()
        worst_post = max(worst_post, max(abs(w[i] - post[i]) for i in range(n)))
    if worst_post > 1e-12:
        problems.append(f"posterior mismatch {worst_post}")
    # squared-error bound with the true model among the specialists
    models = [markov_bit_model(0.2, 0.9), markov_bit_model(0.5, 0.5), markov_bit_model(0.7, 0.3)]
    priors = [0.2, 0.5, 0.3]
    for mu in range(3):
        err = bayes_mixture_squared_error(models, priors, mu, 10)
        if err > math.log(1 / priors[mu]) + 1e-6:
            problems.append(f"squared-error bound for model {mu}: {err}")
    ok = report(8, "Hedge regret, Bayes equivalence, squared-error bound", not problems,
                "; ".join(problems) or f"min slack {worst_slack:.3f}, posterior gap {worst_post:.1e}")
    assert ok, problems


def markov_bit_model(p_after0, p_after1):
    """Probability vector over {0, 1} for the next bit given the previous one."""
    def model(prefix):
        p1 = 0.5 if not prefix else (p_after0 if prefix[-1] == 0 else p_after1)
        return np.array([1 - p1, p1])
    return model


# -- 9 ---------------------------------------------------------------------------


def test_criterion_09_swap_regret():
    t0 = time.perf_counter()
    res = matching_pennies_selfplay(100_000, seed=9)
    dt = time.perf_counter() - t0
    ok = max(res["swap_regret"]) <= 0.05 and res["ce_violation"] <= 0.05 and dt < 60
    report(9, "swap regret and correlated equilibrium in self-play", ok,
           f"swap regret {res['swap_regret'][0]:.4f}/{res['swap_regret'][1]:.4f}, "
           f"CE violation {res['ce_violation']:.4f}, {dt:.1f}s")
    assert ok


# -- 10 --------------------------------------------------------------------------


def test_criterion_10_markov_vcg():
    rng = np.random.default_rng(10)
    problems = []
    for n in range(20):
        S, H, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        mdp = random_mdp(S, int(rng.integers(2, 4)), H, k, seed=1000 + n)
        rep = check_markov_ic_ir(mdp, 100, seed=n)
        if not rep.ok:
            problems.append(f"instance {n}: {rep.violations} violations")
        if np.any(markov_vcg(mdp).prices < -1e-9):
            problems.append(f"instance {n}: negative price")
    worst = 0.0
    for n in range(50):
        k, A = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        V = rng.uniform(0, 1, size=(k, A))
        res = markov_vcg(one_step_mdp(V))
        alt = JointActionSet.product([tuple(range(A))])
        tables = [ValuationTable(alt, V[i]) for i in range(k)]
        chosen = vcg_choose(tables).chosen
        if alt.position(chosen) != int(res.pi_star[0, 0]):
            problems.append("one-step choice differs")
        worst = max(worst, float(np.abs(np.array(clark_payments(tables, chosen)) - res.prices).max()))
    if worst > 1e-9:
        problems.append(f"one-step prices differ by {worst}")
    ok = report(10, "Markov VCG IC/IR, one-step equivalence, non-negative prices", not problems,
                "; ".join(problems) or f"20 instances clean, one-step gap {worst:.1e}")
    assert ok, problems


# -- 11 --------------------------------------------------------------------------


def test_criterion_11_captrade_rl():
    t0 = time.perf_counter()
    greedy = ct.run_greedy_auction([ct.Refinery(1.0), ct.Refinery(2.0)]).totals()["profit"]
    target = 19.49e6
    counts = {}
    detail = []
    for variant in ("r2", "r3", "r1"):
        good = 0
        for seed in range(10):
            res = ct.rl_experiment(variant, seed=seed)
            if variant == "r2":
                good += res.final_avg_price < 50 and abs(res.shared_profit - target) <= 0.05 * target
            elif variant == "r3":
                good += res.final_avg_price > 300
            else:
                good += bool(np.all(res.final_profit > np.array(greedy)))
        counts[variant] = good
        detail.append(f"{variant} {good}/10")
    dt = time.perf_counter() - t0
    ok = all(c >= 8 for c in counts.values()) and dt < 600
    report(11, "cap-and-trade Q-learning outcomes", ok, ", ".join(detail) + f", {dt:.0f}s")
    assert ok
