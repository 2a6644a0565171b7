"""Enumerate the three-candidate gain selection problem and print both orientations.

    python scripts/codesign_ex1.py
"""
from exitrate import CodesignProblem, DomainSpec, MultiChannelSystem, solve_codesign


def main():
    sys_ = MultiChannelSystem.build([[0.5]], [[[1.0]], [[1.0]]], [[[-1.0]], [[-1.0]]], [[1.0]])
    gains = (-1.0, -0.75, -1.5)
    cands = [([[k]], [[k]]) for k in gains]
    dom = DomainSpec.interval(-1.0, 1.0)
    for orientation in ("paper-literal", "reliability"):
        res = solve_codesign(CodesignProblem(sys_, dom, cands, (0.5, 0.5), [0.0],
                                             orientation=orientation))
        print(f"[{orientation}] I0* = {res.I0_star:.6f} (candidate {res.I0_index})")
        print(f"{'k':>7} {'I0':>9} {'I_1':>9} {'I_2':>9} {'gamma max':>10} {'min I/w':>9}")
        for r in res.rows:
            mark = "  <- selected" if r.candidate == res.selected else ""
            print(f"{gains[r.candidate]:7.2f} {r.I0:9.5f} {r.I[0]:9.5f} {r.I[1]:9.5f} "
                  f"{r.score_literal:10.5f} {r.score_reliability:9.5f}{mark}")
    print(res.note)


if __name__ == "__main__":
    main()
