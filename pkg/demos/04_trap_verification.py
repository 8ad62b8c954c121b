"""Trap-based verification against a few cheating servers.

Prints, for each strategy and round count, the estimated probability that the
client accepts a wrong answer next to the generic bound 2m/s and the tighter
frame-based bound.
"""

from __future__ import annotations

import numpy as np

from opq import dqc1, verifyproto
from opq.verifyproto import Honest, LabPauli, OutcomeFlip, RandomUnitary


def main(trials: int = 1000) -> None:
    spec = (2, 3)
    graph, _ = dqc1.brickwork(spec)
    rng = np.random.default_rng(11)
    angles = {v: int(rng.integers(1, 8)) for v in graph.non_outputs}
    strategies = {
        "honest": Honest(),
        "flip (1,2)": OutcomeFlip(frozenset({(None, (1, 2))})),
        "X on out(1)": LabPauli({(None, (1, 3)): "X"}),
        "random unitary": RandomUnitary(5, 0.3),
    }
    print(f"{'strategy':>15} {'s':>2} {'acc':>6} {'p_incorrect':>12} {'2m/s':>6} {'frame bound':>11}")
    for name, adversary in strategies.items():
        for s in (2, 4, 8):
            rep = verifyproto.estimate_p_incorrect(angles, spec, s, adversary, trials=trials, seed=s)
            bound = "n/a" if rep.analytic_bound is None else f"{rep.analytic_bound:.3f}"
            print(
                f"{name:>15} {s:>2} {rep.acc_rate:6.3f} {rep.p_incorrect:7.3f}±{rep.stderr:.3f}"
                f" {rep.epsilon_bound:6.3f} {bound:>11}"
            )


if __name__ == "__main__":
    main()
