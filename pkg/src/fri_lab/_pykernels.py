"""Pure-Python kernels.

Reference implementation of every hot loop. ``_ckernels.pyx`` mirrors these
routines operation for operation, so both backends produce bit-identical
output for the same inputs.

Layout conventions shared by all kernels
----------------------------------------
* A box is given by its lower corner ``lo`` (absolute coordinates) and its
  ``shape``; sites are stored in C order, axis 0 slowest.
* A bond bitmap holds one byte per window site: bit ``a`` marks the bond
  ``{x, x + e_a}``, bit 7 marks the site as occupied.
* Walk directions are integers in ``[0, 2d)``: ``dir >> 1`` is the axis,
  ``dir & 1`` selects the plus step.
* Random numbers come from counter-based streams: ``draw(key, i)`` is a pure
  function, so any draw can be skipped without affecting the others.
"""
import math

import numpy as np

M64 = 0xFFFFFFFFFFFFFFFF
M32 = 0xFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
OCC = 128
POISSON_CHUNK = 30.0
INV53 = 1.0 / 9007199254740992.0


def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def draw(key, i):
    return mix64((key + (i + 1) * GOLDEN) & M64)


def u01(x):
    return (x >> 11) * INV53


def site_key(seed, coords):
    h = mix64((seed + GOLDEN) & M64)
    for c in coords:
        h = mix64(h ^ (int(c) & M64))
    return h


def child_key(key, k):
    return mix64(key ^ mix64((k + GOLDEN) & M64))


def poisson_count(key, lam):
    if lam <= 0.0:
        return 0
    m = 1 if lam <= POISSON_CHUNK else int(math.ceil(lam / POISSON_CHUNK))
    lc = lam / m
    total = 0
    for j in range(m):
        u = u01(draw(key, j))
        p = math.exp(-lc)
        f = p
        k = 0
        while u > f:
            k += 1
            p = p * lc / k
            f = f + p
            if p <= 0.0:
                break
        total += k
    return total


def geom_length(key, s):
    if s <= 0.0:
        return 0
    u = 1.0 - u01(draw(key, 1))
    if u >= 1.0:
        return 0
    return int(math.floor(math.log(u) / math.log(s)))


def direction(key, q, twod):
    r = draw(key, 2 + (q >> 1))
    h = (r >> 32) if (q & 1) else (r & M32)
    return (h * twod) >> 32


def walk_dirs(key, d, s):
    """Length and direction bytes of one killed walk driven by ``key``."""
    L = geom_length(key, s)
    twod = 2 * d
    dirs = np.empty(L, dtype=np.uint8)
    for q in range(L):
        dirs[q] = direction(key, q, twod)
    return L, dirs


def _strides(shape):
    d = len(shape)
    st = [1] * d
    for a in range(d - 2, -1, -1):
        st[a] = st[a + 1] * int(shape[a + 1])
    return st


def _box_sites(lo, shape):
    d = len(lo)
    n = 1
    for x in shape:
        n *= int(x)
    cur = [int(x) for x in lo]
    for _ in range(n):
        yield cur
        a = d - 1
        while a >= 0:
            cur[a] += 1
            if cur[a] < lo[a] + shape[a]:
                break
            cur[a] = int(lo[a])
            a -= 1


def _dist_outside(r, shape):
    m = 0
    for a in range(len(r)):
        if r[a] < 0:
            e = -r[a]
        elif r[a] >= shape[a]:
            e = r[a] - shape[a] + 1
        else:
            e = 0
        if e > m:
            m = e
    return m


def _kept(tkey, keep):
    return keep >= 1.0 or u01(draw(tkey, 0)) < keep


def sample_trajectories(seed, plo, pshape, lam, keep, s):
    """Materialize all trajectories started in the padded box.

    Returns ``(starts, lengths, dirs)`` with ``dirs`` the concatenation of
    every trajectory's direction bytes, in site order then trajectory order.
    """
    d = len(plo)
    twod = 2 * d
    starts, lengths, chunks = [], [], []
    for cur in _box_sites(plo, pshape):
        h = site_key(seed, cur)
        n = poisson_count(child_key(h, 0), lam)
        for k in range(1, n + 1):
            tkey = child_key(h, k)
            if not _kept(tkey, keep):
                continue
            L = geom_length(tkey, s)
            starts.append(list(cur))
            lengths.append(L)
            chunks.append([direction(tkey, q, twod) for q in range(L)])
    starts = np.array(starts, dtype=np.int64).reshape(-1, d)
    lengths = np.array(lengths, dtype=np.int64)
    flat = [x for c in chunks for x in c]
    return starts, lengths, np.array(flat, dtype=np.uint8)


def _walk_mark(pos0, L, dir_of, wlo, wshape, stride, bits, early):
    d = len(pos0)
    r = [int(pos0[a]) - int(wlo[a]) for a in range(d)]
    nout = 0
    idx = 0
    for a in range(d):
        if r[a] < 0 or r[a] >= wshape[a]:
            nout += 1
        idx += r[a] * stride[a]
    dist = 0
    if early and nout > 0:
        dist = _dist_outside(r, wshape)
        if dist > L:
            return 0
    if nout == 0:
        bits[idx] |= OCC
    q = 0
    while q < L:
        if nout > 0 and early:
            # from distance dist the window is at least dist steps away, and
            # the cutoff guarantees that many steps remain
            for _ in range(dist):
                dirn = dir_of(q)
                r[dirn >> 1] += 1 if dirn & 1 else -1
                q += 1
            dist = _dist_outside(r, wshape)
            if dist == 0:
                nout = 0
                idx = sum(r[a] * stride[a] for a in range(d))
                bits[idx] |= OCC
            elif L - q < dist:
                break
            continue
        dirn = dir_of(q)
        a = dirn >> 1
        old_in = 1 if 0 <= r[a] < wshape[a] else 0
        if dirn & 1:
            r[a] += 1
            nidx = idx + stride[a]
        else:
            r[a] -= 1
            nidx = idx - stride[a]
        new_in = 1 if 0 <= r[a] < wshape[a] else 0
        was_in = nout == 0
        nout += old_in - new_in
        q += 1
        if nout == 0:
            bits[nidx] |= OCC
            if was_in:
                bits[min(idx, nidx)] |= 1 << a
        elif was_in:
            dist = 1
        idx = nidx
    return q


def mark_bonds(starts, lengths, dirs, wlo, wshape):
    """Bond bitmap of a materialized trajectory list, clipped to the window."""
    wshape = [int(x) for x in wshape]
    stride = _strides(wshape)
    n = int(np.prod(wshape))
    bits = np.zeros(n, dtype=np.uint8)
    off = 0
    for i in range(len(lengths)):
        L = int(lengths[i])
        seg = dirs[off:off + L]
        _walk_mark(starts[i], L, lambda q: int(seg[q]), wlo, wshape, stride, bits, False)
        off += L
    return bits


def sample_bonds(seed, plo, pshape, lam, keep, s, wlo, wshape):
    """Sample the padded box and mark bonds directly, without storing walks.

    Walks that can no longer reach the window are cut short. Returns
    ``(bits, n_trajectories, n_steps_walked)``.
    """
    d = len(plo)
    twod = 2 * d
    wshape = [int(x) for x in wshape]
    stride = _strides(wshape)
    bits = np.zeros(int(np.prod(wshape)), dtype=np.uint8)
    ntraj = 0
    nsteps = 0
    for cur in _box_sites(plo, pshape):
        h = site_key(seed, cur)
        n = poisson_count(child_key(h, 0), lam)
        for k in range(1, n + 1):
            tkey = child_key(h, k)
            if not _kept(tkey, keep):
                continue
            ntraj += 1
            L = geom_length(tkey, s)
            nsteps += _walk_mark(cur, L, lambda q: direction(tkey, q, twod),
                                 wlo, wshape, stride, bits, True)
    return bits, ntraj, nsteps


def _walk_hit(pos0, L, dir_of, mlo, mshape, stride, mask, early):
    d = len(pos0)
    r = [int(pos0[a]) - int(mlo[a]) for a in range(d)]
    nout = 0
    idx = 0
    for a in range(d):
        if r[a] < 0 or r[a] >= mshape[a]:
            nout += 1
        idx += r[a] * stride[a]
    if nout == 0 and mask[idx]:
        return 0
    dist = 0
    if early and nout > 0:
        dist = _dist_outside(r, mshape)
        if dist > L:
            return -1
    q = 0
    while q < L:
        if nout > 0 and early:
            # as in _walk_mark: no entry before the end of a run of dist steps
            for _ in range(dist):
                dirn = dir_of(q)
                r[dirn >> 1] += 1 if dirn & 1 else -1
                q += 1
            dist = _dist_outside(r, mshape)
            if dist == 0:
                nout = 0
                idx = sum(r[a] * stride[a] for a in range(d))
                if mask[idx]:
                    return q
            elif L - q < dist:
                return -1
            continue
        dirn = dir_of(q)
        a = dirn >> 1
        old_in = 1 if 0 <= r[a] < mshape[a] else 0
        if dirn & 1:
            r[a] += 1
            idx += stride[a]
        else:
            r[a] -= 1
            idx -= stride[a]
        new_in = 1 if 0 <= r[a] < mshape[a] else 0
        nout += old_in - new_in
        q += 1
        if nout == 0:
            if mask[idx]:
                return q
        else:
            dist = 1
    return -1
    q = 0
    while q < L:
        dirn = dir_of(q)
        a = dirn >> 1
        old_in = 1 if 0 <= r[a] < mshape[a] else 0
        if dirn & 1:
            r[a] += 1
            idx += stride[a]
        else:
            r[a] -= 1
            idx -= stride[a]
        new_in = 1 if 0 <= r[a] < mshape[a] else 0
        nout += old_in - new_in
        q += 1
        if nout == 0:
            if mask[idx]:
                return q
        elif early and L - q < _dist_outside(r, mshape):
            return -1
    return -1


def first_hits(starts, lengths, dirs, mask, mlo, mshape):
    """First index at which each stored trajectory visits ``mask`` (-1: never)."""
    mshape = [int(x) for x in mshape]
    stride = _strides(mshape)
    mask = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    out = np.full(len(lengths), -1, dtype=np.int64)
    off = 0
    for i in range(len(lengths)):
        L = int(lengths[i])
        seg = dirs[off:off + L]
        out[i] = _walk_hit(starts[i], L, lambda q: int(seg[q]), mlo, mshape, stride, mask, False)
        off += L
    return out


def sample_hits(seed, plo, pshape, lam, keep, s, mask, mlo, mshape):
    """Sample the padded box, keeping only trajectories that visit ``mask``.

    Returns ``(starts, first_hit, lengths)`` for the hitting trajectories.
    """
    d = len(plo)
    twod = 2 * d
    mshape = [int(x) for x in mshape]
    stride = _strides(mshape)
    mask = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    starts, hits, lengths = [], [], []
    for cur in _box_sites(plo, pshape):
        h = site_key(seed, cur)
        n = poisson_count(child_key(h, 0), lam)
        for k in range(1, n + 1):
            tkey = child_key(h, k)
            if not _kept(tkey, keep):
                continue
            L = geom_length(tkey, s)
            m = _walk_hit(cur, L, lambda q: direction(tkey, q, twod),
                          mlo, mshape, stride, mask, True)
            if m >= 0:
                starts.append(list(cur))
                hits.append(m)
                lengths.append(L)
    return (np.array(starts, dtype=np.int64).reshape(-1, d),
            np.array(hits, dtype=np.int64), np.array(lengths, dtype=np.int64))


def hit_within(mask, mlo, mshape, starts, horizon, key):
    """For walker ``i`` (stream ``child_key(key, i)``), does it visit ``mask``
    at one of the times ``0 .. horizon - 1``?"""
    d = len(mlo)
    twod = 2 * d
    mshape = [int(x) for x in mshape]
    stride = _strides(mshape)
    mask = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    out = np.zeros(len(starts), dtype=bool)
    if horizon <= 0:
        return out
    for i in range(len(starts)):
        wkey = child_key(key, i)
        m = _walk_hit(starts[i], horizon - 1, lambda q: direction(wkey, q, twod),
                      mlo, mshape, stride, mask, True)
        out[i] = m >= 0
    return out


def escape_walks(state, shape, start, n, key):
    """Count walks from ``start`` that reach an escape cell before re-entering K.

    ``state`` codes: 0 escaped, 1 free, 2 in K; leaving the array counts as
    escaped. Walker ``i`` uses stream ``child_key(key, i)``.
    """
    d = len(shape)
    twod = 2 * d
    shape = [int(x) for x in shape]
    stride = _strides(shape)
    state = np.ascontiguousarray(state, dtype=np.uint8).ravel()
    escaped = 0
    for i in range(n):
        wkey = child_key(key, i)
        r = [int(x) for x in start]
        idx = sum(r[a] * stride[a] for a in range(d))
        q = 0
        while True:
            dirn = direction(wkey, q, twod)
            q += 1
            a = dirn >> 1
            if dirn & 1:
                r[a] += 1
                idx += stride[a]
            else:
                r[a] -= 1
                idx -= stride[a]
            if r[a] < 0 or r[a] >= shape[a]:
                escaped += 1
                break
            st = state[idx]
            if st == 0:
                escaped += 1
                break
            if st == 2:
                break
    return escaped


def lazy_walk(mask, shape, start, n_steps, key, checkpoints):
    """Lazy walk on the site set ``mask``.

    Each step picks one of the ``2d`` directions uniformly and moves only if
    the target site is in the set. Returns the positions (relative box
    coordinates) at each checkpoint step count and whether the walk ever
    stood on the box boundary.
    """
    d = len(shape)
    twod = 2 * d
    shape = [int(x) for x in shape]
    stride = _strides(shape)
    mask = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    r = [int(x) for x in start]
    idx = sum(r[a] * stride[a] for a in range(d))
    nb = sum(1 for a in range(d) if r[a] == 0 or r[a] == shape[a] - 1)
    touched = nb > 0
    out = np.empty((len(checkpoints), d), dtype=np.int64)
    ci = 0
    while ci < len(checkpoints) and checkpoints[ci] == 0:
        out[ci] = r
        ci += 1
    for q in range(n_steps):
        dirn = direction(key, q, twod)
        a = dirn >> 1
        if dirn & 1:
            if r[a] + 1 < shape[a] and mask[idx + stride[a]]:
                nb -= 1 if r[a] == 0 or r[a] == shape[a] - 1 else 0
                r[a] += 1
                idx += stride[a]
                nb += 1 if r[a] == 0 or r[a] == shape[a] - 1 else 0
        else:
            if r[a] - 1 >= 0 and mask[idx - stride[a]]:
                nb -= 1 if r[a] == 0 or r[a] == shape[a] - 1 else 0
                r[a] -= 1
                idx -= stride[a]
                nb += 1 if r[a] == 0 or r[a] == shape[a] - 1 else 0
        if nb > 0:
            touched = True
        while ci < len(checkpoints) and checkpoints[ci] == q + 1:
            out[ci] = r
            ci += 1
    return out, touched


def label_clusters(bits, shape):
    """Union-find labeling; each occupied site gets the smallest linear index
    of its cluster, unoccupied sites get -1."""
    shape = [int(x) for x in shape]
    d = len(shape)
    stride = _strides(shape)
    n = len(bits)
    parent = np.full(n, -1, dtype=np.int64)
    occ = (bits & OCC) != 0
    parent[occ] = np.nonzero(occ)[0]
    par = parent.tolist()

    def find(x):
        while par[x] != x:
            par[x] = par[par[x]]
            x = par[x]
        return x

    for idx in np.nonzero(bits & 0x7F)[0].tolist():
        b = int(bits[idx])
        for a in range(d):
            if b & (1 << a):
                ra = find(idx)
                rb = find(idx + stride[a])
                if ra < rb:
                    par[rb] = ra
                elif rb < ra:
                    par[ra] = rb
    out = np.full(n, -1, dtype=np.int32)
    for idx in np.nonzero(occ)[0].tolist():
        out[idx] = find(idx)
    return out


def bfs(bits, shape, sources, rlo, rhi, max_dist):
    """Breadth-first chemical distances over occupied bonds.

    The search is confined to the relative-coordinate region ``[rlo, rhi]``
    (inclusive) and stops expanding at ``max_dist``. Unreached sites get -1.
    """
    shape = [int(x) for x in shape]
    d = len(shape)
    stride = _strides(shape)
    dist = np.full(len(bits), -1, dtype=np.int32)
    queue = []
    for src in sources:
        src = int(src)
        if bits[src] & OCC and dist[src] < 0:
            dist[src] = 0
            queue.append(src)
    head = 0
    while head < len(queue):
        idx = queue[head]
        head += 1
        dv = int(dist[idx])
        if dv >= max_dist:
            continue
        rem = idx
        for a in range(d):
            ra = (rem // stride[a])
            rem -= ra * stride[a]
            if (bits[idx] >> a) & 1 and ra + 1 <= rhi[a]:
                j = idx + stride[a]
                if dist[j] < 0:
                    dist[j] = dv + 1
                    queue.append(j)
            if ra - 1 >= rlo[a]:
                j = idx - stride[a]
                if (bits[j] >> a) & 1 and dist[j] < 0:
                    dist[j] = dv + 1
                    queue.append(j)
    return dist


def cluster_sizes(labels):
    """Roots (ascending) and sizes of all clusters in a label array."""
    lab = np.asarray(labels)
    roots, sizes = np.unique(lab[lab >= 0], return_counts=True)
    return roots.astype(np.int64), sizes.astype(np.int64)
