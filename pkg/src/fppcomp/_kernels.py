"""Compiled inner loops: edge hashing, base quantiles and the growth race.

Everything that produces an edge weight goes through ``base_value`` so the
scalar, bulk and in-race paths agree bit for bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U = np.uint64
M1 = U(0xBF58476D1CE4E5B9)
M2 = U(0x94D049BB133111EB)
GOLDEN = U(0x9E3779B97F4A7C15)
AXIS_SALT = U(0xD1B54A32D192ED03)
TWO_M53 = 2.0**-53

EXPONENTIAL, UNIFORM, SHIFTED, DETERMINISTIC = 0, 1, 2, 3


@njit(cache=True, inline="always")
def mix(z):
    z = (z ^ (z >> U(30))) * M1
    z = (z ^ (z >> U(27))) * M2
    return z ^ (z >> U(31))


@njit(cache=True, inline="always")
def zigzag(c):
    return U((c << 1) ^ (c >> 63))


@njit(cache=True)
def edge_uniform(key, coords, axis, mirror):
    """Variate of the edge {coords, coords + e_axis}; ``mirror`` < 0 means none."""
    h = key
    for k in range(coords.shape[0]):
        c = coords[k]
        if k == mirror:
            c = max(c, -c - 1) if axis == k else abs(c)
        h = mix(h ^ (zigzag(c) * GOLDEN))
    h = mix(h ^ (U(axis + 1) * AXIS_SALT))
    return float(h >> U(11)) * TWO_M53


@njit(cache=True)
def base_value(u, kind, atom, p1, p2):
    if atom > 0.0:
        if u <= atom:
            return 0.0
        v = (u - atom) / (1.0 - atom)
    else:
        v = u
    if kind == EXPONENTIAL:
        return -np.log1p(-v)
    if kind == UNIFORM:
        return v if p1 == 0.0 else p1 + (p2 - p1) * v
    if kind == SHIFTED:
        return p1 + (-np.log1p(-v)) / p2
    return 1.0


@njit(cache=True)
def base_values(u, kind, atom, p1, p2):
    out = np.empty(u.shape[0])
    for i in range(u.shape[0]):
        out[i] = base_value(u[i], kind, atom, p1, p2)
    return out


@njit(cache=True)
def edge_uniforms(key, lower, axis, mirror):
    out = np.empty(lower.shape[0])
    for i in range(lower.shape[0]):
        out[i] = edge_uniform(key, lower[i], axis, mirror)
    return out


@njit(cache=True, inline="always")
def to_time(b, div, k):
    return b / k if div else b * k


# --- binary heap on parallel arrays, key (time, rank, target, parent) -------


@njit(cache=True, inline="always")
def _less(ht, hr, hj, hp, a, b):
    if ht[a] != ht[b]:
        return ht[a] < ht[b]
    if hr[a] != hr[b]:
        return hr[a] < hr[b]
    if hj[a] != hj[b]:
        return hj[a] < hj[b]
    return hp[a] < hp[b]


@njit(cache=True, inline="always")
def _swap(arrs_t, arrs_r, arrs_j, arrs_p, arrs_b, a, b):
    arrs_t[a], arrs_t[b] = arrs_t[b], arrs_t[a]
    arrs_r[a], arrs_r[b] = arrs_r[b], arrs_r[a]
    arrs_j[a], arrs_j[b] = arrs_j[b], arrs_j[a]
    arrs_p[a], arrs_p[b] = arrs_p[b], arrs_p[a]
    arrs_b[a], arrs_b[b] = arrs_b[b], arrs_b[a]


@njit(cache=True)
def race(
    inside,
    frame,
    strides,
    lo,
    src_idx,
    src_species,
    keys,
    kind,
    atom,
    p1,
    p2,
    div,
    scale,
    mirror,
    t_max,
    stop_on_frame,
    abandon_weak,
    targets,
):
    """Grow up to two species from their sources on a padded box.

    Species s (1 or 2) uses stream key ``keys[s]`` and law slot ``s``; rank
    is 1 for species 1 and 0 for species 2 so exact ties go to species 2.
    Returns per-site arrays, the claim order and counters.
    """
    n = inside.shape[0]
    d = strides.shape[0]
    species = np.zeros(n, np.int8)
    claim = np.full(n, np.inf)
    base = np.full(n, np.inf)
    parent = np.full(n, -1, np.int64)
    best = np.full((2, n), np.inf)
    order = np.empty(n, np.int64)
    n_order = 0
    coords = np.empty(d, np.int64)

    cap = 1024
    ht = np.empty(cap)
    hr = np.empty(cap, np.int8)
    hj = np.empty(cap, np.int64)
    hp = np.empty(cap, np.int64)
    hb = np.empty(cap)
    size = 0

    # unclaimed sites holding a finite tentative value, per species
    frontier = np.zeros(3, np.int64)
    reached = np.zeros(3, np.bool_)
    ties = 0
    complete = True
    abandoned = False

    is_target = np.zeros(n, np.bool_)
    left = 0
    for j in targets:
        if not is_target[j]:
            is_target[j] = True
            left += 1
    use_targets = targets.shape[0] > 0

    for s in range(src_idx.shape[0]):
        i = src_idx[s]
        sp = src_species[s]
        species[i] = sp
        claim[i] = 0.0
        base[i] = 0.0
        best[sp - 1, i] = 0.0
        order[n_order] = i
        n_order += 1
        if frame[i]:
            reached[sp] = True
        if is_target[i]:
            is_target[i] = False
            left -= 1

    # queue the sources' edges, then pop until a stop condition
    qi = 0
    pos = 0
    while True:
        if qi < src_idx.shape[0]:
            i = src_idx[qi]
            sp = species[i]
            b = 0.0
            qi += 1
        else:
            if use_targets and left == 0:
                complete = False
                break
            if size == 0:
                break
            if ht[0] > t_max:
                complete = False
                break
            t = ht[0]
            r = hr[0]
            j = hj[0]
            par = hp[0]
            b = hb[0]
            size -= 1
            if size > 0:
                ht[0] = ht[size]
                hr[0] = hr[size]
                hj[0] = hj[size]
                hp[0] = hp[size]
                hb[0] = hb[size]
                pos = 0
                while True:
                    c = 2 * pos + 1
                    if c >= size:
                        break
                    if c + 1 < size and _less(ht, hr, hj, hp, c + 1, c):
                        c += 1
                    if _less(ht, hr, hj, hp, c, pos):
                        _swap(ht, hr, hj, hp, hb, c, pos)
                        pos = c
                    else:
                        break
            sp = 2 if r == 0 else 1
            if species[j] != 0:
                if species[j] != sp and claim[j] == t:
                    ties += 1
                continue
            species[j] = sp
            claim[j] = t
            base[j] = b
            parent[j] = par
            for q in range(2):
                if best[q, j] < np.inf:
                    frontier[q + 1] -= 1
            order[n_order] = j
            n_order += 1
            if is_target[j]:
                is_target[j] = False
                left -= 1
            if frame[j]:
                reached[sp] = True
                if stop_on_frame:
                    complete = False
                    break
            i = j

        # relax the 2d edges out of i for species sp
        rank = 0 if sp == 2 else 1
        rem = i
        for k in range(d):
            coords[k] = rem // strides[k] + lo[k] - 1
            rem = rem % strides[k]
        for k in range(d):
            st = strides[k]
            for side in range(2):
                if side == 0:
                    j = i + st
                else:
                    j = i - st
                if not inside[j] or species[j] != 0:
                    continue
                # each edge is relaxed at most once per species, so no cache
                if side == 1:
                    coords[k] -= 1
                u = edge_uniform(keys[sp], coords, k, mirror)
                if side == 1:
                    coords[k] += 1
                nb = b + base_value(u, kind[sp], atom[sp], p1[sp], p2[sp])
                if nb < best[sp - 1, j]:
                    if best[sp - 1, j] == np.inf:
                        frontier[sp] += 1
                    best[sp - 1, j] = nb
                    if size == cap:
                        cap *= 2
                        ht2 = np.empty(cap)
                        hr2 = np.empty(cap, np.int8)
                        hj2 = np.empty(cap, np.int64)
                        hp2 = np.empty(cap, np.int64)
                        hb2 = np.empty(cap)
                        ht2[:size] = ht[:size]
                        hr2[:size] = hr[:size]
                        hj2[:size] = hj[:size]
                        hp2[:size] = hp[:size]
                        hb2[:size] = hb[:size]
                        ht, hr, hj, hp, hb = ht2, hr2, hj2, hp2, hb2
                    pos = size
                    ht[pos] = to_time(nb, div[sp], scale[sp])
                    hr[pos] = rank
                    hj[pos] = j
                    hp[pos] = i
                    hb[pos] = nb
                    size += 1
                    while pos > 0:
                        up = (pos - 1) // 2
                        if _less(ht, hr, hj, hp, pos, up):
                            _swap(ht, hr, hj, hp, hb, pos, up)
                            pos = up
                        else:
                            break
        if abandon_weak and qi >= src_idx.shape[0] and frontier[1] == 0 and not reached[1]:
            abandoned = True
            complete = False
            break

    return species, claim, base, parent, order[:n_order].copy(), ties, reached, complete, abandoned
