"""Mismatch decay on the 64-node chain.

Runs the tau halvings from the bundled chain config and fits log-log slopes
of the interpolant-mismatch metrics: the L1-in-Z family should shrink like
tau, the sup-in-W family like tau/eps.
"""

from ibvlab.harness import SweepPlan, loglog_slope, parse_config_file, run_sweep


def main():
    plan = SweepPlan.from_config(parse_config_file("configs/dw-chain.cfg"))
    result = run_sweep(plan, progress=lambda i, e: print(
        f"  pair {i}: eps={e.eps:g} tau={e.tau:g} steps={e.n_steps} wall={e.wall_time:.1f}s"))

    taus = [e.tau for e in result.entries]
    m3 = [e.mismatch.L1Z_right_left + e.mismatch.L1Z_linear_right + e.mismatch.L1Z_smooth_linear
          for e in result.entries]
    m2 = [e.mismatch.supW_right_left + e.mismatch.supW_linear_right + e.mismatch.supW_smooth_linear
          for e in result.entries]
    print(f"L1Z slope in tau      {loglog_slope(taus, m3):.3f}")
    print(f"supW slope in tau/eps {loglog_slope([t / e.eps for t, e in zip(taus, result.entries)], m2):.3f}")

    for d in result.distances:
        print(f"  d(({d['eps']:g},{d['tau']:g}) -> ({d['eps_next']:g},{d['tau_next']:g})): "
              f"supW {d['supW']:.2e}  L1Z {d['L1Z']:.2e}")
    print(f"contraction certificate: {'yes' if result.contraction_ok else 'no'}")


if __name__ == "__main__":
    main()
