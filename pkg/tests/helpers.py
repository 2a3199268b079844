"""Shared test utilities: complete-data simulation and brute-force counting."""

from fractions import Fraction

import numpy as np

from trafficdbn.cpd import make_kernel
from trafficdbn.particle_filter import zero_ess


def complete_data_run(params, net, n_steps, rng):
    """Simulate one chain from all-uncongested and return its steps and ESS.

    With a single particle of weight one the accumulated statistics are
    plain event counts.
    """
    kernel = make_kernel(params, net)
    ess = zero_ess(params.kind, net)
    states = np.zeros((1, net.n_links), dtype=bool)
    steps = []
    for _ in range(n_steps):
        step = kernel.step(states, rng)
        ess.accumulate(np.ones(1), step)
        steps.append(step)
        states = step.states
    return steps, ess


def noisyor_count_mle(steps, net, previous):
    """Per-entry Fraction estimates by direct event counting, None where undefined."""
    out = []
    for i, lid in enumerate(net.ids):
        k = net.degree(lid)
        off0 = sum(int(not s.aux0[0, i]) for s in steps)
        row = [Fraction(off0, len(steps))]
        for j in range(k):
            fail = sum(int(s.eta[0, i, j] and not s.auxj[0, i, j]) for s in steps)
            fire = sum(int(s.eta[0, i, j] and s.auxj[0, i, j]) for s in steps)
            row.append(Fraction(fail, fail + fire) if fail + fire else None)
        out.append(row)
    return out


def satpat_count_mle(states, net):
    """states: (T + 1, N) bool chain. Returns Fraction or None per (link, count)."""
    out = []
    for i, lid in enumerate(net.ids):
        nb = [net.index(j) for j in net.pi(lid)]
        cong = [0] * (len(nb) + 1)
        tot = [0] * (len(nb) + 1)
        for t in range(states.shape[0] - 1):
            c = int(sum(states[t, j] for j in nb))
            tot[c] += 1
            cong[c] += int(states[t + 1, i])
        out.append([Fraction(a, b) if b else None for a, b in zip(cong, tot)])
    return out
