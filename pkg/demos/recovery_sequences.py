"""Recovery sequences: cut-off bubbles reach the sharp constant, glued ones split it.

A normalised cut-off bubble of scale eps has int |u|^(4-eps) close to S*.  Gluing
two such bubbles with weights mu_1, mu_2 gives energy mu_1 + mu_2 and
int |u|^4 close to S* (mu_1^2 + mu_2^2).  The concentration-compactness check
then finds one atom per bubble with nu_j <= S* mu_j^2.

    python demos/recovery_sequences.py
"""
from heisenvar import (DomainMask, F_eps, Grid, GroupPoint, RecoverySpec, cca_check, dirichlet_energy,
                       estimate_Sstar, recovery_glued, recovery_single)

s_star = estimate_Sstar().value
eps_min = 0.05
ladder = (0.2, 0.1, eps_min)

rho = 6 * eps_min
tau = 8 * rho**2 + 0.02
half = (2 * rho, 2 * rho, 4 * rho**2 + tau)
# horizontal spacing eps/3, vertical spacing eps^2 (the t direction scales like lambda^2)
res = [int(round(2 * half[0] / (eps_min / 3))) + 1] * 2 + [int(round(2 * half[2] / eps_min**2)) + 1]
grid = Grid.box(half, res)
mask = DomainMask.full(grid)
print(f"grid {grid.resolution}, spacing {tuple(round(h, 5) for h in grid.spacing)}")

top = GroupPoint.from_xyt(0, 0, tau)
for e in ladder:
    u = recovery_single(top, e, rho, grid, mask)
    print(f"single bubble eps={e:5.2f}: energy {dirichlet_energy(u):.12f}, F_eps / S* = {F_eps(u, e) / s_star:.4f}")

spec = RecoverySpec([(0.3, top), (0.4, GroupPoint.from_xyt(0, 0, -tau))], rho, ladder)
seq = [recovery_glued(spec, e, grid, mask) for e in ladder]
u = seq[-1]
print(f"glued: energy {dirichlet_energy(u):.12f} (weights sum 0.7), "
      f"F_eps / (S* sum mu^2) = {F_eps(u, eps_min) / (s_star * 0.25):.4f}")
for v in cca_check(seq, 2 * rho, s_star=s_star):
    print(f"  atom at t={v.location.t:+.3f}: mu={v.mu:.4f} nu={v.nu:.6f} S* mu^2={v.bound:.6f} ratio={v.ratio:.4f}")
