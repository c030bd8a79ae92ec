"""Compiled inner loop of the aggregate-rate particle simulator.

Both the compiled and the pure-Python loop consume uniforms from a
pre-drawn block in the same order per jump: holding time, transition class,
then (only when a tagged particle sits in the source state) the mover.
"""

import math

import numpy as np
from numba import njit

OK = 0
DONE = 1
NEED_UNIFORMS = 2
BUFFER_FULL = 3
BAD_RATE = 4


@njit(cache=True)
def run_chunk(
    counts, t, T, N, src, dst, const, lin, amp, expw,
    tag_state, uniforms, upos,
    grid, gpos, grid_counts,
    record, out_times, out_edges, njumps,
    tag_times, tag_who, tag_to, ntag,
):
    n_edges = src.shape[0]
    n_states = counts.shape[0]
    n_tag = tag_state.shape[0]
    mu = np.empty(n_states)
    agg = np.empty(n_edges)
    while True:
        for z in range(n_states):
            mu[z] = counts[z] / N
        total = 0.0
        for e in range(n_edges):
            x = 0.0
            y = 0.0
            for z in range(n_states):
                x += lin[e, z] * mu[z]
                y += expw[e, z] * mu[z]
            lam = const[e] + x + amp[e] * math.exp(-y)
            if not (lam >= 0.0) or not math.isfinite(lam):
                return t, upos, gpos, njumps, ntag, BAD_RATE, e
            agg[e] = counts[src[e]] * lam
            total += agg[e]
        if total <= 0.0:
            t_next = math.inf
        else:
            if upos + 3 > uniforms.shape[0]:
                return t, upos, gpos, njumps, ntag, NEED_UNIFORMS, -1
            t_next = t - math.log1p(-uniforms[upos]) / total
        # grid samples see the configuration before the jump at t_next
        while gpos < grid.shape[0] and grid[gpos] < t_next and grid[gpos] <= T:
            for z in range(n_states):
                grid_counts[gpos, z] = counts[z]
            gpos += 1
        if t_next > T:
            return T, upos, gpos, njumps, ntag, DONE, -1
        if (record and njumps >= out_times.shape[0]) or ntag >= tag_times.shape[0]:
            return t, upos, gpos, njumps, ntag, BUFFER_FULL, -1
        upos += 1
        target = uniforms[upos] * total
        upos += 1
        e = 0
        acc = agg[0]
        while acc <= target and e < n_edges - 1:
            e += 1
            acc += agg[e]
        # a zero-rate class can never be selected
        while agg[e] == 0.0:
            e -= 1
        z0 = src[e]
        mover = -1
        k_here = 0
        for i in range(n_tag):
            if tag_state[i] == z0:
                k_here += 1
        if k_here > 0:
            j = int(uniforms[upos] * counts[z0])
            upos += 1
            if j < k_here:
                seen = 0
                for i in range(n_tag):
                    if tag_state[i] == z0:
                        if seen == j:
                            mover = i
                            break
                        seen += 1
                tag_state[mover] = dst[e]
                tag_times[ntag] = t_next
                tag_who[ntag] = mover
                tag_to[ntag] = dst[e]
                ntag += 1
        counts[z0] -= 1
        counts[dst[e]] += 1
        t = t_next
        if record:
            out_times[njumps] = t
            out_edges[njumps] = e
        njumps += 1
