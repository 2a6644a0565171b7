"""Table of -eps log q_hat against the variational rates as eps shrinks.

Runs the scalar two-channel example in failure mode 1 (drift -0.5 x) from
x0 = 0 toward the right end of a given interval. On the symmetric interval
both ends are equally likely, so -eps log q tends to 0; on an asymmetric
interval it tends to I(x0, right) - I(x0, boundary).

    python scripts/rate_convergence.py --upper 1.5 --trials 400000
"""
import argparse
import math
import time

from exitrate import ActionSettings, BoundarySection, DomainSpec, MultiChannelSystem, SimParams
from exitrate import rate_to_section, simulate_exits
from exitrate.sde import exit_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--upper", type=float, default=1.0, help="right end of the interval")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.5, 0.25, 0.125])
    ap.add_argument("--trials", type=int, default=400_000)
    ap.add_argument("--dt", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sys_ = MultiChannelSystem.build([[0.5]], [[[1.0]], [[1.0]]], [[[-1.0]], [[-1.0]]], [[1.0]])
    dom = DomainSpec.interval(-1.0, args.upper)
    target = BoundarySection.ball("right", [args.upper])
    settings = ActionSettings()
    I = rate_to_section(sys_, 1, [0.0], dom, target, settings).value
    V = rate_to_section(sys_, 1, [0.0], dom, BoundarySection.full(), settings).value
    print(f"I(0, right) = {I:.6f}   I(0, boundary) = {V:.6f}   difference = {I - V:.6f}")
    print(f"{'eps':>8} {'q_hat':>10} {'ci95':>10} {'-eps log q':>12} {'seconds':>8}")
    prev = None
    for eps in args.eps:
        t0 = time.perf_counter()
        p = SimParams(eps=eps, dt=args.dt, t_max=5000.0, trials=args.trials, seed=args.seed)
        st = exit_stats(simulate_exits(sys_, 1, [0.0], dom, p), dom, target)
        r = -eps * math.log(st.q_hat) if st.q_hat > 0 else math.inf
        print(f"{eps:8.4f} {st.q_hat:10.6f} {st.ci95:10.6f} {r:12.6f} "
              f"{time.perf_counter() - t0:8.1f}")
        if prev is not None:
            e1, r1 = prev
            print(f"{'':8} Richardson (O(eps) error) from eps {e1:g}, {eps:g}: "
                  f"{(e1 * r - eps * r1) / (e1 - eps):.6f}")
        prev = (eps, r)


if __name__ == "__main__":
    main()
