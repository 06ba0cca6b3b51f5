"""One fold-driven jump, certified end to end.

Scalar double-well, load f(t) = t, friction half-width 0.2, started in the
left well. The left branch folds at u = -1/(sqrt 3); past it the state falls
to the right well. The run detects the fast window, replays it as a
stretched-time transition, prices it, and checks the admissibility and
reconciliation certificates.
"""

from ibvlab.harness import parse_config_file, run_single
from ibvlab.jumps import fold_time_extrapolation


def main():
    config = parse_config_file("configs/dw-scalar.cfg")
    onsets = []
    for eps, tau in zip(config.get("sweep.eps"), config.get("sweep.tau")):
        cfg = config.with_overrides({"scheme.eps": eps, "scheme.tau": tau})
        result = run_single(cfg)
        print(f"eps={eps:g} tau={tau:g}")
        for jump, verdict, adm in zip(result.jumps, result.verdicts, result.admissibility):
            onsets.append((eps, jump.t_star))
            print(f"  onset t*   {jump.t_star:.5f}")
            print(f"  u- -> u+   {jump.u_minus[0]:+.4f} -> {jump.u_plus[0]:+.4f}")
            print(f"  cost       {verdict.cost:.5f}  drop {verdict.drop:.5f}  rel {verdict.rel_err:.1e}")
            print(f"  floor R    {jump.R_jump:.5f}")
            print(f"  admissible {adm.passed} (beta_used {adm.beta_used:.3f})")
        print(f"  classified {result.classification.label}")

    # the onset trails the fold by ~ c * eps^(2/3); remove it by extrapolation
    t_fold = fold_time_extrapolation(onsets)
    print(f"extrapolated fold time {t_fold:.5f} (exact 0.58490)")


if __name__ == "__main__":
    main()
