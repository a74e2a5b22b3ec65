"""Acceptance suite: one group of checks per criterion.

The terminal summary prints one PASS/FAIL line per criterion.  Criteria 6
and 7 run the real CLI on the packaged Table-1 experiment with its default
WOA budget (30 agents x 100 iterations) and seed; they take several minutes.
"""

import csv
import filecmp
import math
from fractions import Fraction as F

import numpy as np
import pytest

from doasim.cli import SUMMARY_HEADER, main
from doasim.config import default_experiment
from doasim.control import Controller, ControllerConfig
from doasim.fracops import gl_coefficients
from doasim.fuzzy import INPUT_DEFAULT, OUTPUT_DEFAULT, MembershipSet, RuleBase, infer
from doasim.pkpd import TABLE1_PATIENTS, PkCoefficients, PlantState, compute_pk, step_plant
from doasim.simloop import SimConfig, compute_metrics, run_sim
from doasim.woa import WoaConfig, optimize, tune_controller

crit = pytest.mark.criterion


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- criterion 1

def spreadsheet(age, weight, height, sex):
    a, w, h = F(age), F(weight), F(height)
    lbm = (F("1.1") * w - 128 * w * w / (h * h)) if sex == "male" else (F("1.07") * w - 148 * w * w / (h * h))
    v1, v2, v3 = F("4.27"), F("18.9") - F("0.391") * (a - 53), F(238)
    cl1 = F("1.89") + F("0.0456") * (w - 77) + F("0.0264") * (h - 177) - F("0.0681") * (lbm - 59)
    cl2, cl3 = F("1.29") - F("0.024") * (a - 53), F("0.836")
    return dict(v1=v1, v2=v2, v3=v3, cl1=cl1, cl2=cl2, cl3=cl3, k10=cl1 / v1, k12=cl2 / v1, k13=cl3 / v1,
                k21=cl2 / v2, k31=cl3 / v3)


@crit(1, "PK coefficient oracle (8 patients, 1e-9 relative)")
@pytest.mark.parametrize("p", TABLE1_PATIENTS, ids=lambda p: f"patient{p.id}")
def test_c1_pk_oracle(p):
    ref = spreadsheet(p.age, p.weight, p.height, p.sex)
    pk = compute_pk(p)
    for name, val in ref.items():
        assert abs(getattr(pk, name) - float(val)) <= 1e-9 * abs(float(val)), name


@crit(1, "PK coefficient oracle (8 patients, 1e-9 relative)")
def test_c1_patient1_anchor(note):
    pk = compute_pk(TABLE1_PATIENTS[0])
    assert pk.v2 == pytest.approx(27.893, rel=1e-12)
    assert pk.cl1 == pytest.approx(1.63813, abs=5e-6)
    note(f"patient 1: v2 = {pk.v2!r} L, cl1 = {pk.cl1:.8f} L/min")


# ---------------------------------------------------------------- criterion 2

def linear_system(pk, pd):
    return np.array([[-(pk.k10 + pk.k12 + pk.k13), pk.k21, pk.k31, 0.0],
                     [pk.k12, -pk.k21, 0.0, 0.0],
                     [pk.k13, 0.0, -pk.k31, 0.0],
                     [pd.ke0 / pk.v1, 0.0, 0.0, -pd.ke0]])


@crit(2, "RK4 vs dt=1e-5 Euler at t=10 min; mass drift with k10=0")
def test_c2_against_euler(note):
    p = TABLE1_PATIENTS[0]
    m, b = linear_system(p.pk, p.pd), np.array([10.0, 0, 0, 0])
    h, n = 1e-5, 10 ** 6
    # Euler on x' = Mx + b from 0 is x_n = ((I + hM)^n - I) M^-1 b
    euler = (np.linalg.matrix_power(np.eye(4) + h * m, n) - np.eye(4)) @ np.linalg.solve(m, b)
    s = PlantState()
    for _ in range(1000):
        s = step_plant(s, p.pk, p.pd, 10.0, 0.01)
    rel = np.abs(s.as_array() - euler) / np.abs(euler)
    note(f"max relative deviation {rel.max():.3e}")
    assert rel.max() < 1e-5


@crit(2, "RK4 vs dt=1e-5 Euler at t=10 min; mass drift with k10=0")
def test_c2_mass_conservation(note):
    p = TABLE1_PATIENTS[0]
    closed = PkCoefficients(**{**p.pk.__dict__, "k10": 0.0})
    s = PlantState(x1=100.0)
    for _ in range(3000):
        s = step_plant(s, closed, p.pd, 0.0, 0.01)
    drift = abs(s.x1 + s.x2 + s.x3 - 100.0) / 100.0
    note(f"relative mass drift over 30 min {drift:.3e}")
    assert drift < 1e-6


# ---------------------------------------------------------------- criterion 3

@crit(3, "FOPID(alpha=beta=1) == PID per step; GL order-0.5 weights")
def test_c3_degeneration(note):
    rng = np.random.default_rng(0)
    t = np.arange(1000) * 0.01
    bis = 50 + 50 * np.exp(-0.4 * t) * np.cos(0.8 * t) + rng.normal(0, 1.5, 1000)
    kw = dict(kp=0.9, ki=0.3, kd=0.05, u_max=1e9, anti_windup=False)
    pid = Controller(ControllerConfig("pid", **kw))
    fo = Controller(ControllerConfig("fopid", alpha=1.0, beta=1.0, **kw))
    diff = max(abs(pid(b) - fo(b)) for b in bis)
    note(f"max per-step difference {diff:.3e}")
    assert diff <= 1e-9


@crit(3, "FOPID(alpha=beta=1) == PID per step; GL order-0.5 weights")
def test_c3_gl_half():
    w = [1.0]
    for j in range(1, 12):
        w.append(w[-1] * (1 - 1.5 / j))
    assert gl_coefficients(0.5, 4).tolist() == [1, -0.5, -0.125, -0.0625]
    assert np.allclose(gl_coefficients(0.5, 12), w, rtol=0, atol=1e-16)


# ---------------------------------------------------------------- criterion 4

SETS = (MembershipSet(INPUT_DEFAULT), MembershipSet(INPUT_DEFAULT), MembershipSet(OUTPUT_DEFAULT))


@crit(4, "infer(0,0) = 0.5 and antisymmetry over 1000 pairs")
def test_c4_centre(note):
    g = infer(0.0, 0.0, RuleBase.default(), *SETS)
    note(f"infer(0, 0) = {tuple(g)}")
    assert np.allclose(g, 0.5, rtol=0, atol=1e-12)


@crit(4, "infer(0,0) = 0.5 and antisymmetry over 1000 pairs")
def test_c4_antisymmetry(note):
    rng = np.random.default_rng(42)
    worst = 0.0
    for e, de in rng.uniform(-1.2, 1.2, size=(1000, 2)):
        g = infer(e, de, RuleBase.default(), *SETS)
        h = infer(-e, -de, RuleBase.default(), *SETS)
        worst = max(worst, float(np.max(np.abs(np.add(g, h) - 1.0))))
    note(f"max |g(e,de) + g(-e,-de) - 1| = {worst:.3e}")
    assert worst <= 1e-9


# ---------------------------------------------------------------- criterion 5

@crit(5, "WOA sphere < 1e-3, monotone trace, 1-D grid oracle within 5%")
def test_c5_sphere(note):
    res = optimize(WoaConfig(30, 200, seed=0, bounds=((-10.0, 10.0),) * 5), lambda x: float(np.sum(x * x)))
    note(f"sphere best fitness {res.best_fitness:.3e}")
    assert res.best_fitness < 1e-3
    assert np.all(np.diff(res.trace) <= 0)


@crit(5, "WOA sphere < 1e-3, monotone trace, 1-D grid oracle within 5%")
def test_c5_grid_oracle(note):
    p, sim = TABLE1_PATIENTS[0], SimConfig()
    bounds = {"kp": (0.0, 500.0), "ki": (0.0, 0.0), "kd": (0.0, 0.0)}
    res = tune_controller("pid", [p], sim, WoaConfig(10, 25, seed=0), bounds=bounds)
    grid = np.linspace(0.0, 500.0, 1000)
    costs = [run_sim(p, ControllerConfig("pid", kp=k), sim).metrics.cost for k in grid]
    kp_star = grid[int(np.argmin(costs))]
    assert 0 < np.argmin(costs) < len(grid) - 1
    note(f"WOA kp = {res.config.kp:.6f}, grid kp = {kp_star:.6f}")
    assert abs(res.config.kp - kp_star) <= 0.05 * kp_star
    assert np.all(np.diff(res.woa.trace) <= 0)


# ---------------------------------------------------------------- criteria 6-8

@pytest.fixture(scope="session")
def cli_runs(tmp_path_factory):
    """Tune both variants twice with the packaged experiment, evaluate and compare."""
    root = tmp_path_factory.mktemp("acceptance")
    out = {}
    for v in ("fopid", "fofpid"):
        for rep in ("run1", "run2"):
            d = root / rep
            out[(v, rep)] = main(["tune", "--out", str(d), "--variant", v])
    for v in ("fopid", "fofpid"):
        out[("eval", v)] = main(["evaluate", "--out", str(root / f"eval_{v}"), "--controller",
                                 str(root / "run1" / f"optimum_{v}.cfg")])
    out["compare"] = main(["compare", "--out", str(root / "compare"), "--controller",
                           str(root / "run1" / "optimum_fopid.cfg"), str(root / "run1" / "optimum_fofpid.cfg")])
    return root, out


def summary(root, v):
    rows = read_rows(root / f"eval_{v}" / "summary.csv")
    assert tuple(rows[0]) == SUMMARY_HEADER
    return {r[0]: dict(zip(SUMMARY_HEADER, r)) for r in rows[1:]}


@crit(6, "tuned controllers in band, settle < 5 min; FOFPID < FOPID on cost, IAE, ITAE")
@pytest.mark.slow
@pytest.mark.parametrize("variant", ["fopid", "fofpid"])
def test_c6_band_and_settling(cli_runs, variant, note):
    root, codes = cli_runs
    assert codes[(variant, "run1")] == 0 and codes[("eval", variant)] == 0
    s = summary(root, variant)
    patients = [k for k in s if k != "mean"]
    assert len(patients) == 8
    worst = max(float(s[k]["settling_time_min"]) for k in patients)
    note(f"{variant}: slowest settling {worst:.2f} min, all in band: "
         f"{all(s[k]['in_band_after_settling'] == '1' for k in patients)}")
    for k in patients:
        assert s[k]["in_band_after_settling"] == "1", f"patient {k} leaves the band"
        assert float(s[k]["settling_time_min"]) < 5.0, f"patient {k} settles late"


@crit(6, "tuned controllers in band, settle < 5 min; FOFPID < FOPID on cost, IAE, ITAE")
@pytest.mark.slow
def test_c6_ordering(cli_runs, note):
    root, _ = cli_runs
    a, b = summary(root, "fopid")["mean"], summary(root, "fofpid")["mean"]
    for metric in ("cost", "iae", "itae"):
        note(f"mean {metric}: FOPID {float(a[metric]):.4f}  FOFPID {float(b[metric]):.4f}")
    for metric in ("cost", "iae", "itae"):
        assert float(b[metric]) < float(a[metric]), metric


@crit(7, "repeated cmd_tune gives byte-identical outputs")
@pytest.mark.slow
@pytest.mark.parametrize("variant", ["fopid", "fofpid"])
def test_c7_determinism(cli_runs, variant):
    root, codes = cli_runs
    assert codes[(variant, "run1")] == codes[(variant, "run2")] == 0
    for name in (f"optimum_{variant}.cfg", f"trace_{variant}.csv", f"manifest_tune_{variant}.yaml"):
        assert filecmp.cmp(root / "run1" / name, root / "run2" / name, shallow=False), name


@crit(8, "cost = iae + itae in every summary; analytic metric cases within 1%")
@pytest.mark.slow
def test_c8_emitted_identity(cli_runs):
    root, codes = cli_runs
    assert codes["compare"] == 0
    for v in ("fopid", "fofpid"):
        for r in read_rows(root / f"eval_{v}" / "summary.csv")[1:]:
            assert float(r[5]) == float(r[3]) + float(r[4])
    rows = read_rows(root / "compare" / "compare_summary.csv")
    head = rows[0]
    for r in rows[1:]:
        d = dict(zip(head, r))
        for side in ("a", "b"):
            assert float(d[f"cost_{side}"]) == float(d[f"iae_{side}"]) + float(d[f"itae_{side}"])


@crit(8, "cost = iae + itae in every summary; analytic metric cases within 1%")
def test_c8_analytic(note):
    sim = SimConfig(horizon=10.0)
    t = np.arange(1001) * 0.01
    m = compute_metrics(np.column_stack([t, np.full_like(t, 51.0)]), sim)
    assert m.iae == pytest.approx(10.0, rel=0.01) and m.itae == pytest.approx(50.0, rel=0.01)
    assert m.cost == m.iae + m.itae
    e = compute_metrics(np.column_stack([t, 50 + 50 * np.exp(-2 * t)]), sim)
    exact = math.log(10) / 2
    note(f"constant error: iae {m.iae:.4f}, itae {m.itae:.4f}; settling {e.settling_time} vs {exact:.4f}")
    assert e.settling_time == pytest.approx(exact, rel=0.01)
    assert abs(e.settling_time - exact) <= 0.01


def test_default_experiment_is_the_acceptance_setup():
    exp = default_experiment()
    assert exp.patients == TABLE1_PATIENTS
    assert (exp.woa.pop_size, exp.woa.max_iter) == (30, 100)
