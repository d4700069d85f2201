"""Which (alpha, beta) give a forward-backward-forward equation?

Sweeps the unit square, counts each equation type and prints the
critical densities and flux levels at the reference pair (0.75, 0.9).
"""
import numpy as np

from adhesion import model


def main():
    n = 101
    grid = np.linspace(0.0, 1.0, n)
    counts = dict.fromkeys(model.VARIANTS, 0)
    for b in grid:
        for a in grid:
            counts[model.classify(model.FluxParams(a, b)).variant] += 1
    print(f"{n} x {n} sweep of (alpha, beta):")
    for v, c in counts.items():
        print(f"  {v:<6} {c:6d}")

    p = model.FluxParams(0.75, 0.9)
    ec = model.classify(p)
    print(f"\n(0.75, 0.9) is {ec.variant}; sigma vanishes at "
          + ", ".join(f"{s:.6f}" for s in sorted(ec.degenerate_points)))
    th = model.thresholds(p)
    th = model.with_levels(p, th, th.rho_at_s0_plus, th.r_star)
    print(f"backward phase (s0-, s0+) = ({th.s0_minus:.6f}, {th.s0_plus:.6f})")
    print(f"flux band [r1, r2] = [{th.r1:.6f}, {th.r2:.6f}]")
    for r in (th.r1, th.r2):
        lo = model.inverse_branch(p, r, "minus")
        hi = model.inverse_branch(p, r, "plus")
        print(f"  rho = {r:.6f} at s- = {lo:.6f} and s+ = {hi:.6f}")
    print(f"wall gap S_m = {th.S_m:.4f}, S_M = {th.S_M:.4f}, d0 = {th.d0:.4f}")


if __name__ == "__main__":
    main()
