"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import subprocess
import sys
import time

import numpy as np
import pytest
import sympy as sp

from conftest import record
from heisenvar.bubbles import (BubbleTrack, PSSpec, RecoverySpec, recovery_glued, recovery_single,
                               synth_ps_sequence)
from heisenvar.extremals import BubbleSpec, bubble_field, estimate_Sstar
from heisenvar.grid import DomainMask, Field, Grid, pairing
from heisenvar.group import GroupPoint, compose_arrays, gauge_arrays, koranyi_distance_arrays
from heisenvar.hdiff import apply_stiffness, dirichlet_energy, kohn_laplacian_array, solve_poisson, stiffness_matrix
from heisenvar.measures import (Atom, EnergyMeasure, XPair, cca_check, energy_density, F_eps, field_pairings,
                                gamma_limit_F)
from heisenvar.measures import test_bank as bank_of
from heisenvar.profiles import extract_profiles, splitting_report
from heisenvar.subcrit import epsilon_sweep, holder_bound

P = GroupPoint.from_xyt
SWEEP_EPS = (1.0, 0.5, 0.25, 0.1, 0.05)


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


# -- 1. group law ---------------------------------------------------------------------

def test_criterion_01_group_law():
    t0 = time.perf_counter()
    r = np.random.default_rng(1)
    n = 10_000
    a, b, c = (r.uniform(-10, 10, (3, n)) for _ in range(3))
    lam = np.exp(r.uniform(-5, 5, n))

    def dil(s, p):
        return s * p[0], s * p[1], s * s * p[2]

    ab_c = compose_arrays(*compose_arrays(*a, *b), *c)
    a_bc = compose_arrays(*a, *compose_arrays(*b, *c))
    assoc = max(rel_err(u, v).max() for u, v in zip(ab_c, a_bc))
    inv = max(rel_err(u, 0.0).max() for u in compose_arrays(*a, *(-a)))
    g = gauge_arrays(*a)
    homog = (np.abs(gauge_arrays(*dil(lam, a)) - lam * g) / (lam * g)).max()
    symm = (np.abs(gauge_arrays(*(-a)) - g) / g).max()
    lhs = dil(lam, compose_arrays(*a, *b))
    rhs = compose_arrays(*dil(lam, a), *dil(lam, b))
    auto = max((np.abs(u - v) / np.maximum(1.0, np.abs(u))).max() for u, v in zip(lhs, rhs))
    dt = time.perf_counter() - t0
    worst = max(assoc, inv, homog, symm, auto)
    ok = worst <= 1e-12 and dt < 1.0
    record(1, "group law", ok, f"max rel err {worst:.2e} over 4 x 1e4 cases in {dt:.2f} s")
    assert ok


# -- 2. operator suite ----------------------------------------------------------------

def test_criterion_02_operator():
    t0 = time.perf_counter()
    g = Grid.box((1, 1, 1), 33)
    m = DomainMask.koranyi_ball(g, 0.8)
    L = stiffness_matrix(m)
    sym = abs(L - L.T).max()
    r = np.random.default_rng(2)
    ident = 0.0
    for _ in range(5):
        u = Field(m, r.standard_normal(g.shape))
        e = dirichlet_energy(u)
        ident = max(ident, abs(pairing(apply_stiffness(u), u) - e) / e)
    X, Y, T = np.broadcast_arrays(*g.mesh)
    ustar = Field(m, np.exp(-X**2) * np.cos(T) * (1 + Y))
    f = apply_stiffness(ustar)
    cg_tol = 1e-10
    sol = solve_poisson(f, tol=cg_tol, preconditioner="amg")
    poisson = np.linalg.norm(sol.dofs() - ustar.dofs()) / np.linalg.norm(ustar.dofs())

    x, y, t = sp.symbols("x y t")
    z1 = lambda h: sp.diff(h, x) + 2 * y * sp.diff(h, t)
    z2 = lambda h: sp.diff(h, y) - 2 * x * sp.diff(h, t)
    sub = lambda h: sp.simplify(z1(z1(h)) + z2(z2(h)))
    smooth = sp.exp(-(x**2 + y**2)) * sp.cos(t)
    hand_err, smooth_err = [], []
    for n in (33, 65):
        gg = Grid.box((1, 1, 1), n)
        xs = np.broadcast_arrays(*gg.mesh)
        worst = 0.0
        for q in (x**2, t, t**2):
            got = kohn_laplacian_array(np.broadcast_to(sp.lambdify((x, y, t), q)(*xs), gg.shape), gg)
            want = np.broadcast_to(sp.lambdify((x, y, t), sub(q))(*xs), gg.shape)
            worst = max(worst, np.nanmax(np.abs(got - want)))
        hand_err.append(worst)
        got = kohn_laplacian_array(sp.lambdify((x, y, t), smooth)(*xs), gg)
        smooth_err.append(np.nanmax(np.abs(got - sp.lambdify((x, y, t), sub(smooth))(*xs))))
    h = [2 / 32, 2 / 64]
    hand_ok = all(e <= hh**2 for e, hh in zip(hand_err, h))
    order = np.log2(smooth_err[0] / smooth_err[1])
    dt = time.perf_counter() - t0
    ok = sym == 0 and ident <= 1e-10 and poisson <= 10 * cg_tol and hand_ok and order >= 1.8 and dt < 60
    record(2, "operator", ok, f"asym {sym:.1e}, identity {ident:.1e}, poisson {poisson:.1e}, "
           f"quadratics err {max(hand_err):.1e} (h^2 {h[1]**2:.1e}), order {order:.2f}, {dt:.1f} s")
    assert ok


# -- 3. S* stability ------------------------------------------------------------------

def test_criterion_03_sstar_stability(sstar_estimate):
    t0 = time.perf_counter()
    base = sstar_estimate.value
    moved = [estimate_Sstar(lam=2.0, center=P(0.3, -0.2, 0.5)).value,
             estimate_Sstar(lam=0.5, center=P(-0.1, 0.2, 0.3)).value,
             estimate_Sstar(center=P(0.5, 0.5, -0.5)).value]
    spread = max(abs(v / base - 1) for v in moved)
    shrink = sstar_estimate.shrink_factor
    dt = time.perf_counter() - t0
    ok = 3 <= shrink <= 5 and spread <= 0.01 and dt < 120
    record(3, "S* stability", ok, f"S* = {base:.8f}, shrink {shrink:.2f}, invariance spread {spread:.1e}, {dt:.1f} s")
    assert ok


# -- 4/5. subcritical sweep ------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    g = Grid.box((1, 1, 1), 65)
    m = DomainMask.koranyi_ball(g, 0.8)
    rows = epsilon_sweep(SWEEP_EPS, g, m)
    return g, m, rows, time.perf_counter() - t0


def test_criterion_04_subcritical_limit(sweep, s_star):
    g, m, rows, dt = sweep
    slack = [r.s_eps / holder_bound(s_star, m.volume, r.epsilon) for r in rows]
    last = abs(rows[-1].s_eps - s_star) / s_star
    ok = all(r.converged for r in rows) and max(slack) <= 1.05 and last <= 0.10 and dt < 600
    record(4, "subcritical limit", ok, f"max S_eps / Holder {max(slack):.3f}, |S_0.05 - S*| / S* = {last:.3f}, "
           f"sweep {dt:.0f} s")
    assert ok


def test_criterion_05_concentration(sweep):
    g, m, rows, _ = sweep
    frac = [r.fractions[0] for r in rows]
    mono = all(b >= a for a, b in zip(frac, frac[1:]))
    p0 = np.abs(field_pairings(rows[0].report.maximizer))
    p1 = np.abs(field_pairings(rows[-1].report.maximizer))
    decay = p0 / p1
    ok = mono and frac[-1] >= 0.9 and decay.min() >= 5
    record(5, "concentration", ok, f"fractions {', '.join(f'{f:.3f}' for f in frac)}; "
           f"pairing decay min {decay.min():.2f}x (need 5x)")
    assert ok


# -- 6. recovery sequences -------------------------------------------------------------

def test_criterion_06_recovery(s_star):
    t0 = time.perf_counter()
    e_min = 0.05
    rho = 8 * e_min
    g = Grid.box((2 * rho, 2 * rho, 4 * rho**2), (97, 97, 513))
    m = DomainMask.full(g)
    single = [recovery_single(GroupPoint.identity(), e, rho, g, m) for e in (0.4, 0.2, 0.1, e_min)]
    q_single = F_eps(single[-1], e_min) / s_star

    rho = 6 * e_min
    tau = 8 * rho**2 + 0.02
    half = (2 * rho, 2 * rho, 4 * rho**2 + tau)
    res = [int(round(2 * half[0] / (e_min / 3))) + 1] * 2 + [int(round(2 * half[2] / e_min**2)) + 1]
    g2 = Grid.box(half, res)
    m2 = DomainMask.full(g2)
    w = (0.3, 0.4)
    spec = RecoverySpec([(w[0], P(0, 0, -tau)), (w[1], P(0, 0, tau))], rho, (0.2, 0.1, e_min))
    u = recovery_glued(spec, e_min, g2, m2)
    e_err = abs(dirichlet_energy(u) - sum(w))
    q_glued = F_eps(u, e_min) / (s_star * sum(v * v for v in w))
    dt = time.perf_counter() - t0
    ok = abs(q_single - 1) <= 0.10 and e_err <= 1e-10 and abs(q_glued - 1) <= 0.10 and dt < 300
    record(6, "recovery sequences", ok, f"single F/S* {q_single:.3f}; glued energy err {e_err:.1e}, "
           f"F/(S* sum mu^2) {q_glued:.3f}; {dt:.0f} s")
    assert ok


# -- 7. limit functional bound ---------------------------------------------------------

def random_xpair(r, g, m, bank):
    kind = r.integers(3)
    if kind == 0:
        coef = r.uniform(-1, 1, len(bank))
        vals = np.tensordot(coef, bank, axes=1)
    elif kind == 1:
        c = P(*r.uniform(-0.5, 0.5, 2), r.uniform(-0.5, 0.5))
        vals = bubble_field(BubbleSpec(r.uniform(0.05, 0.5), c), g, m).values
    else:
        vals = r.standard_normal(g.shape)
    u = Field(m, vals)
    mu = energy_density(u)
    extra = r.uniform(0, 1) * np.abs(np.tensordot(r.uniform(0, 1, len(bank)), bank, axes=1))
    atoms = tuple(Atom(r.uniform(0.1, 1), P(*r.uniform(-0.9, 0.9, 3))) for _ in range(r.integers(4)))
    mu = EnergyMeasure(Field(mu.density.mask, mu.density.values + extra), atoms, r.uniform(0, 0.5))
    s = r.uniform(0.05, 1.0) / mu.total_mass
    return XPair(u.scaled(np.sqrt(s)), mu.scaled(s))


def test_criterion_07_limit_bound(s_star):
    g = Grid.box((1, 1, 1), 17)
    m = DomainMask.full(g)
    bank = bank_of(g)
    r = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        p = random_xpair(r, g, m, bank)
        worst = max(worst, gamma_limit_F(p, s_star) / (s_star * p.mass**2))
    dirac = 0.0
    zero = Field(m, np.zeros(g.shape))
    for wgt in r.uniform(0.01, 1.0, 100):
        p = XPair(Field.zeros(m), EnergyMeasure(zero, (Atom(wgt, P(*r.uniform(-0.9, 0.9, 3))),)))
        dirac = max(dirac, abs(gamma_limit_F(p, s_star) - s_star * p.mass**2) / (s_star * p.mass**2))
    ok = worst <= 1.02 and dirac <= 1e-12
    record(7, "limit functional bound", ok, f"max F / (S* mass^2) over 1e3 pairs {worst:.3f}; "
           f"Dirac equality err {dirac:.1e}")
    assert ok


# -- 8. concentration-compactness inequality ------------------------------------------

def test_criterion_08_cca(s_star):
    e_min = 0.05
    rho = 6 * e_min
    ladder = (0.2, 0.1, e_min)
    tau = 8 * rho**2 + 0.02
    half = (2 * rho, 2 * rho, 4 * rho**2 + tau)
    res = [int(round(2 * half[0] / (e_min / 3))) + 1] * 2 + [int(round(2 * half[2] / e_min**2)) + 1]
    g = Grid.box(half, res)
    m = DomainMask.full(g)
    pure = [recovery_single(P(0, 0, tau), e, rho, g, m) for e in ladder]
    v_pure = cca_check(pure, 2 * rho, s_star=s_star)
    lines, ok = [], True
    for w in [(0.5,), (0.3, 0.4), (0.4, 0.4)]:
        targets = [(w[0], P(0, 0, tau))] + ([(w[1], P(0, 0, -tau))] if len(w) > 1 else [])
        spec = RecoverySpec(targets, rho, ladder)
        v = cca_check([recovery_glued(spec, e, g, m) for e in ladder], 2 * rho, s_star=s_star)
        ok &= len(v) == len(w) and all(a.paired and a.ratio <= 1.05 for a in v)
        lines.append("/".join(f"{a.ratio:.3f}" for a in v))
    tight = len(v_pure) == 1 and v_pure[0].paired and abs(v_pure[0].ratio - 1) <= 0.05
    ok = ok and tight
    record(8, "nu_j <= S* mu_j^2", ok, f"pure bubble ratio {v_pure[0].ratio:.4f}; weighted ratios "
           + ", ".join(lines))
    assert ok


# -- 9. Palais-Smale splitting ---------------------------------------------------------

def _one_bubble_case():
    rho_c = 0.5
    lam6 = rho_c / 6
    g = Grid.box((1, 1, 1), (49, 49, 145))
    m = DomainMask.koranyi_ball(g, 0.999)
    c = P(0.013, -0.007, 0.004)
    return g, m, [BubbleTrack(64 * lam6, 2.0, c, cutoff_rho=rho_c)]


def _two_bubble_case():
    rho_c = 0.5
    lam6 = rho_c / 6
    tau = 2.05
    half = (1.0, 1.0, 1.0 + tau)
    g = Grid.box(half, (49, 49, int(round(2 * half[2] / (lam6**2 / 0.5))) + 1))
    c1, c2 = P(0.013, -0.007, tau + 0.004), P(-0.011, 0.009, -tau - 0.003)
    m = DomainMask.from_predicate(g, lambda x, y, t: (koranyi_distance_arrays(c1, x, y, t) < 0.999)
                                  | (koranyi_distance_arrays(c2, x, y, t) < 0.999))
    return g, m, [BubbleTrack(64 * lam6, 2.0, c1, cutoff_rho=rho_c),
                  BubbleTrack(1.5 * 64 * lam6, 2.0, c2, cutoff_rho=rho_c)]


def _ps_case(g, m, tracks):
    seq = synth_ps_sequence(PSSpec(tracks, (0, 6)), g, m)
    ps = extract_profiles(seq)
    rep = splitting_report(seq, None, ps, 0.0)
    h = np.array(g.spacing)
    found = len(ps) == len(tracks)
    scale_err, center_err = np.inf, np.inf
    if found:
        order = np.argsort([e.lam for e in ps.entries])
        truth = np.argsort([t.scale(6) for t in tracks])
        scale_err = center_err = 0.0
        for i, j in zip(order, truth):
            e, t = ps.entries[i], tracks[j]
            for k in range(7):
                scale_err = max(scale_err, abs(e.scales[k] / t.scale(k) - 1))
                d = np.abs(np.array(e.centers[k].as_tuple()) - np.array(t.center_at(k).as_tuple())) / h
                center_err = max(center_err, d.max())
    sep = ps.separation_matrix(-1)
    min_sep = sep[~np.eye(len(ps), dtype=bool)].min() if len(ps) > 1 else np.inf
    nd, ed = rep.relative_norm_defect(), rep.relative_energy_defect()
    res = rep.column("ps_residual")
    return dict(found=found, scale=scale_err, center=center_err, sep=min_sep, nd=nd, ed=ed, res=res)


def test_criterion_09_ps_splitting():
    t0 = time.perf_counter()
    cases = {"1-bubble": _ps_case(*_one_bubble_case()), "2-bubble": _ps_case(*_two_bubble_case())}
    dt = time.perf_counter() - t0
    dec = lambda v: bool(np.all(np.diff(v) < 0))
    parts, ok = [], dt < 600
    for name, c in cases.items():
        good = (c["found"] and c["scale"] <= 0.05 and c["center"] <= 2 and c["sep"] > 10
                and dec(c["nd"]) and dec(c["ed"]) and c["nd"][-1] <= 0.05 and c["ed"][-1] <= 0.05
                and dec(c["res"]))
        ok &= good
        parts.append(f"{name}: scale err {c['scale']:.1e}, centre err {c['center']:.1e} h, sep {c['sep']:.3g}, "
                     f"norm defect {'dec' if dec(c['nd']) else 'NOT dec'} (final {c['nd'][-1]:.4f}), "
                     f"energy defect {'dec' if dec(c['ed']) else 'NOT dec'} (final {c['ed'][-1]:.4f}), "
                     f"residual {'dec' if dec(c['res']) else 'NOT dec'}")
    record(9, "PS splitting", ok, "; ".join(parts) + f"; {dt:.0f} s")
    assert ok


# -- 10. determinism -------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    cmds = [["synth", "--kind", "ps", "--bubble", "0.3333333333333333,2,0.013,-0.007,0.004,0.5",
             "--k-range", "0,2", "--noise", "0.01", "--seed", "11", "--domain", "ball", "--rho", "0.999",
             "--res", "49,49,145"],
            ["pscheck", "--input", "seq_000.hsf", "seq_001.hsf", "seq_002.hsf"],
            ["sweep", "--eps", "1.0,0.5", "--init", "random", "--seed", "11", "--res", "17"],
            ["extremal", "--resolutions", "17,33", "--write-field", "--res", "17"]]
    runs = []
    for name in ("first", "second"):
        d = tmp_path / name
        d.mkdir()
        for c in cmds:
            out = subprocess.run([sys.executable, "-m", "heisenvar", *c, "--threads", "1"], cwd=d,
                                 capture_output=True, text=True)
            assert out.returncode == 0, out.stderr
        runs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    same = runs[0].keys() == runs[1].keys() and all(runs[0][k] == runs[1][k] for k in runs[0])
    record(10, "determinism", same, f"{len(runs[0])} artifacts from {len(cmds)} commands byte-identical: {same}")
    assert same
