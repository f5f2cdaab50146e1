"""Numba kernels for tree simulation.

Randomness is keyed by node identity rather than drawn from a stream: the
root of trial ``t`` gets ``key = mix(mix(seed) ^ mix(t + SALT))`` and the
``c``-th child of a node gets ``mix(parent ^ (GOLDEN * (c + 1)))``.  A node's
step and offspring count are functions of its key alone, so every tree is
fixed by ``(seed, trial)`` regardless of traversal order, thread count or
pruning, and the killed tree is literally a subtree of the un-killed one.
"""

import heapq
import math

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
SALT_TRIAL = np.uint64(0xD1B54A32D192ED03)
SALT_STEP = np.uint64(0x8CB92BA72F3D8DD7)
SALT_OFF = np.uint64(0xABC98388FB8FAC03)
SALT_SPINE = np.uint64(0xC13FA9A902A6328F)
SALT_PICK = np.uint64(0x91E10DA5C79E7B1D)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, inline="always")
def mix(x):
    z = x + GOLDEN
    z = (z ^ (z >> S30)) * M1
    z = (z ^ (z >> S27)) * M2
    return z ^ (z >> S31)


@nb.njit(cache=True, inline="always")
def unit(key, salt):
    return np.float64(mix(key ^ salt) >> S11) * INV53


@nb.njit(cache=True, inline="always")
def child_key(key, c):
    return mix(key ^ (GOLDEN * np.uint64(c + 1)))


@nb.njit(cache=True)
def root_key(seed, trial):
    return mix(mix(np.uint64(seed)) ^ mix(np.uint64(trial) + SALT_TRIAL))


@nb.njit(cache=True, inline="always")
def draw(cdf, vals, u):
    n = cdf.shape[0]
    for i in range(n - 1):
        if u < cdf[i]:
            return vals[i]
    return vals[n - 1]


@nb.njit(cache=True, nogil=True)
def killed_block(seed, start, count, step_vals, step_cdf, off_vals, off_cdf,
                 max_nodes, max_depth, level_cap):
    """Depth-first killed trees for trials ``start .. start+count-1``.

    Returns per-trial arrays and per-level sums of living counts (and their
    squares) for generations ``0..level_cap``.
    """
    z = np.zeros(count, np.int64)
    m_living = np.zeros(count, np.int64)
    depth = np.zeros(count, np.int64)
    truncated = np.zeros(count, np.bool_)
    explored = np.zeros(count, np.int64)
    m_gen = np.zeros(count, np.int64)
    m_mult = np.zeros(count, np.int64)
    level_sum = np.zeros(level_cap + 1, np.int64)
    level_sq = np.zeros(level_cap + 1, np.int64)
    levels = np.zeros(level_cap + 1, np.int64)

    cap = 1024
    st_pos = np.empty(cap, np.int64)
    st_dep = np.empty(cap, np.int64)
    st_key = np.empty(cap, np.uint64)

    for t in range(count):
        levels[:] = 0
        sp = 0
        st_pos[0] = 0
        st_dep[0] = 0
        st_key[0] = root_key(seed, start + t)
        sp = 1
        nz = 0
        best = 0
        best_gen = 0
        best_mult = 0
        deepest = 0
        cut = False
        gen_nodes = 1
        while sp > 0:
            sp -= 1
            s = st_pos[sp]
            d = st_dep[sp]
            key = st_key[sp]
            if nz >= max_nodes:
                # one more living node exists: Z > max_nodes
                cut = True
                break
            nz += 1
            if d <= level_cap:
                levels[d] += 1
            if d > deepest:
                deepest = d
            if s > best:
                best = s
                best_gen = d
                best_mult = 1
            elif s == best:
                if d < best_gen:
                    best_gen = d
                    best_mult = 1
                elif d == best_gen:
                    best_mult += 1
            b = draw(off_cdf, off_vals, unit(key, SALT_OFF))
            gen_nodes += b
            for c in range(b):
                ck = child_key(key, c)
                cs = s + draw(step_cdf, step_vals, unit(ck, SALT_STEP))
                if cs < 0:
                    continue
                if d >= max_depth:
                    cut = True
                    continue
                if sp >= cap:
                    cap *= 2
                    a1 = np.empty(cap, np.int64)
                    a2 = np.empty(cap, np.int64)
                    a3 = np.empty(cap, np.uint64)
                    a1[:sp] = st_pos[:sp]
                    a2[:sp] = st_dep[:sp]
                    a3[:sp] = st_key[:sp]
                    st_pos, st_dep, st_key = a1, a2, a3
                st_pos[sp] = cs
                st_dep[sp] = d + 1
                st_key[sp] = ck
                sp += 1
        z[t] = nz
        m_living[t] = best
        depth[t] = deepest
        truncated[t] = cut
        explored[t] = gen_nodes
        m_gen[t] = best_gen
        m_mult[t] = best_mult
        for i in range(level_cap + 1):
            level_sum[i] += levels[i]
            level_sq[i] += levels[i] * levels[i]
    return z, m_living, depth, truncated, explored, m_gen, m_mult, level_sum, level_sq


@nb.njit(cache=True, nogil=True)
def unkilled_max(seed, trial, step_vals, step_cdf, off_vals, off_cdf,
                 lam, target, log_threshold, frontier_cap, max_expansions):
    """Best-first search of the un-killed tree for its maximum displacement.

    ``target > 0`` stops as soon as a node reaches ``target``; ``target <= 0``
    tracks the running maximum.  A frontier node at ``s`` is pruned, together
    with everything below it in the heap, once
    ``-lam (goal - s) <= log_threshold``; the pruned mass
    ``sum exp(-lam (goal - s))`` is returned as the bias bound.

    Returns ``(best, bias, status, expansions)``, ``status`` 0 = done,
    1 = frontier cap, 2 = expansion cap.
    """
    best = 0
    bias = 0.0
    heap = [(0, root_key(seed, trial))]
    expansions = 0
    while len(heap) > 0:
        if len(heap) > frontier_cap:
            return best, bias, 1, expansions
        if target > 0 and best >= target:
            return best, 0.0, 0, expansions
        goal = target if target > 0 else best + 1
        negs, key = heap[0]
        s = -negs
        if -lam * (goal - s) <= log_threshold:
            acc = 0.0
            for item in heap:
                acc += math.exp(-lam * (goal + item[0]))
            return best, acc, 0, expansions
        heapq.heappop(heap)
        expansions += 1
        if expansions > max_expansions:
            return best, bias, 2, expansions
        b = draw(off_cdf, off_vals, unit(key, SALT_OFF))
        for c in range(b):
            ck = child_key(key, c)
            cs = s + draw(step_cdf, step_vals, unit(ck, SALT_STEP))
            if cs > best:
                best = cs
            heapq.heappush(heap, (-cs, ck))
    return best, bias, 0, expansions


@nb.njit(cache=True, nogil=True)
def spine_block(seed, start, count, n, step_vals, step_cdf, hat_vals, hat_cdf):
    """Spine walks of length ``n``: alive flags, positions, C_i counts and node keys."""
    alive = np.ones(count, np.bool_)
    positions = np.zeros((count, n + 1), np.int64)
    extra = np.zeros((count, n + 1), np.int64)
    keys = np.zeros((count, n + 1), np.uint64)
    for t in range(count):
        key = root_key(seed, start + t) ^ SALT_SPINE
        s = 0
        for i in range(n + 1):
            keys[t, i] = key
            bhat = draw(hat_cdf, hat_vals, unit(key, SALT_OFF))
            extra[t, i] = bhat - 1
            positions[t, i] = s
            if s < 0:
                alive[t] = False
            if i < n:
                key = mix(key ^ SALT_PICK)
                s += draw(step_cdf, step_vals, unit(key, SALT_STEP))
    return alive, positions, extra, keys


@nb.njit(cache=True, nogil=True)
def offspine_max(key, start_pos, children, step_vals, step_cdf, off_vals, off_cdf, budget):
    """Largest ``S_x - start_pos`` over living nodes hanging off one spine node.

    Children are killed by ``S < 0`` in absolute position; the spine node
    itself counts, so the result is at least 0.  Returns -1 on budget
    exhaustion.
    """
    best = start_pos
    cap = 256
    st_pos = np.empty(cap, np.int64)
    st_key = np.empty(cap, np.uint64)
    sp = 0
    for c in range(children):
        ck = child_key(key, c + 1)
        cs = start_pos + draw(step_cdf, step_vals, unit(ck, SALT_STEP))
        if cs >= 0:
            st_pos[sp] = cs
            st_key[sp] = ck
            sp += 1
    used = 0
    while sp > 0:
        sp -= 1
        s = st_pos[sp]
        k = st_key[sp]
        used += 1
        if used > budget:
            return -1
        if s > best:
            best = s
        b = draw(off_cdf, off_vals, unit(k, SALT_OFF))
        for c in range(b):
            ck = child_key(k, c)
            cs = s + draw(step_cdf, step_vals, unit(ck, SALT_STEP))
            if cs < 0:
                continue
            if sp >= cap:
                cap *= 2
                a1 = np.empty(cap, np.int64)
                a3 = np.empty(cap, np.uint64)
                a1[:sp] = st_pos[:sp]
                a3[:sp] = st_key[:sp]
                st_pos, st_key = a1, a3
            st_pos[sp] = cs
            st_key[sp] = ck
            sp += 1
    return best - start_pos
