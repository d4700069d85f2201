"""The modified forward problem that seeds the construction.

Replaces rho by an increasing rho* inside the flux band, solves the
Dirichlet problem from a sin^4 hump of height 0.8 and reports when the
density leaves the mixture range, the mass history and the decay rate.
"""
import numpy as np

from adhesion import model, pde


def main():
    p = model.FluxParams(0.75, 0.9)
    th = model.thresholds(p)
    th = model.with_levels(p, th, th.rho_at_s0_plus, th.r_star)
    mf = pde.build_modified_flux(p, th, th.r1, th.r2)
    grid = pde.Grid(1.0, 129, 1e-3, 0.6)
    sf = pde.solve_star(p, mf, pde.initial_density(0.8, p, grid), grid)

    mass = np.trapezoid(sf.u_star, grid.x, axis=1)
    print(f"max u*: {sf.u_star[0].max():.3f} at t = 0, {sf.u_star[-1].max():.2e} at t = 0.6")
    print(f"mass: {mass[0]:.4f} -> {mass[-1]:.4f}, never increasing: {np.all(np.diff(mass) <= 1e-12)}")
    print(f"T0 (u* below s-(r1) = {model.inverse_branch(p, th.r1, 'minus'):.4f}): {sf.T0:.3f}")
    C, gamma, r2 = pde.decay_fit(sf)
    print(f"tail fit max u* ~ {C:.3f} exp(-{gamma:.3f} t), r^2 = {r2:.4f}")
    print(f"w*_x = v* up to the truncation estimate {pde.truncation_estimate(sf):.2e}")


if __name__ == "__main__":
    main()
