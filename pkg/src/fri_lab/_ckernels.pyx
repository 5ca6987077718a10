# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; operation-for-operation mirror of ``_pykernels``.

Built without fast-math so floating-point draws (geometric lengths, Poisson
inversion) round exactly as in the pure-Python path.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, floor, ceil
from libc.stdint cimport uint64_t, int64_t, int32_t, uint8_t
from libc.stdlib cimport malloc, realloc, free

cnp.import_array()

DEF MAXD = 7

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t M32 = 0xFFFFFFFFULL
cdef uint8_t OCC = 128
cdef double POISSON_CHUNK = 30.0
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t draw(uint64_t key, uint64_t i) noexcept nogil:
    return mix64(key + (i + 1) * GOLDEN)


cdef inline double u01(uint64_t x) noexcept nogil:
    return <double>(x >> 11) * INV53


cdef inline uint64_t child_key(uint64_t key, uint64_t k) noexcept nogil:
    return mix64(key ^ mix64(k + GOLDEN))


cdef inline uint64_t site_key(uint64_t seed, int64_t* c, int d) noexcept nogil:
    cdef uint64_t h = mix64(seed + GOLDEN)
    cdef int a
    for a in range(d):
        h = mix64(h ^ <uint64_t>c[a])
    return h


cdef struct PoissonLaw:
    int64_t m
    double lc
    double p0


cdef inline PoissonLaw poisson_law(double lam) noexcept nogil:
    cdef PoissonLaw law
    law.m = 1
    if lam > POISSON_CHUNK:
        law.m = <int64_t>ceil(lam / POISSON_CHUNK)
    law.lc = lam / law.m
    law.p0 = exp(-law.lc)
    return law


cdef inline int64_t poisson_count(uint64_t key, PoissonLaw* law) noexcept nogil:
    if law.lc <= 0.0:
        return 0
    cdef int64_t m = law.m
    cdef double lc = law.lc
    cdef int64_t total = 0, k, j
    cdef double u, p, f
    for j in range(m):
        u = u01(draw(key, j))
        p = law.p0
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


cdef inline int64_t geom_length(uint64_t key, double s) noexcept nogil:
    if s <= 0.0:
        return 0
    cdef double u = 1.0 - u01(draw(key, 1))
    if u >= 1.0:
        return 0
    return <int64_t>floor(log(u) / log(s))


cdef inline int kept(uint64_t tkey, double keep) noexcept nogil:
    return keep >= 1.0 or u01(draw(tkey, 0)) < keep


cdef inline int64_t dist_outside(int64_t* r, int64_t* shape, int d) noexcept nogil:
    cdef int64_t m = 0, e
    cdef int a
    for a in range(d):
        if r[a] < 0:
            e = -r[a]
        elif r[a] >= shape[a]:
            e = r[a] - shape[a] + 1
        else:
            e = 0
        if e > m:
            m = e
    return m


cdef inline void strides_of(int64_t* shape, int64_t* st, int d) noexcept nogil:
    cdef int a
    st[d - 1] = 1
    for a in range(d - 2, -1, -1):
        st[a] = st[a + 1] * shape[a + 1]


cdef inline void advance(int64_t* cur, int64_t* lo, int64_t* shape, int d) noexcept nogil:
    cdef int a = d - 1
    while a >= 0:
        cur[a] += 1
        if cur[a] < lo[a] + shape[a]:
            return
        cur[a] = lo[a]
        a -= 1


cdef struct DirSrc:
    uint64_t key
    uint64_t twod
    const uint8_t* dirs
    uint64_t cache


cdef inline int next_dir(DirSrc* src, int64_t q) noexcept nogil:
    cdef uint64_t h
    if src.dirs != NULL:
        return src.dirs[q]
    if (q & 1) == 0:
        src.cache = draw(src.key, 2 + (q >> 1))
        h = src.cache & M32
    else:
        h = src.cache >> 32
    return <int>((h * src.twod) >> 32)


cdef int64_t walk_mark(int64_t* pos0, int d, int64_t L, DirSrc* src, int64_t* wlo,
                       int64_t* wshape, int64_t* stride, uint8_t* bits, int early) noexcept nogil:
    cdef int64_t r[MAXD]
    cdef int64_t dstr[2 * MAXD]
    cdef int64_t nout = 0, idx = 0, nidx, q = 0, lo_idx, dist = 0, j
    cdef int a, dirn, old_in, new_in
    for a in range(d):
        dstr[2 * a] = -stride[a]
        dstr[2 * a + 1] = stride[a]
        r[a] = pos0[a] - wlo[a]
        if <uint64_t>r[a] >= <uint64_t>wshape[a]:
            nout += 1
        idx += r[a] * stride[a]
    if early and nout > 0:
        dist = dist_outside(r, wshape, d)
        if dist > L:
            return 0
    if nout == 0:
        bits[idx] |= OCC
    while q < L:
        if nout > 0 and early:
            # from distance dist the window is at least dist steps away, and
            # the cutoff guarantees that many steps remain
            for j in range(dist):
                dirn = next_dir(src, q)
                r[dirn >> 1] += 2 * (dirn & 1) - 1
                q += 1
            dist = dist_outside(r, wshape, d)
            if dist == 0:
                nout = 0
                idx = 0
                for a in range(d):
                    idx += r[a] * stride[a]
                bits[idx] |= OCC
            elif L - q < dist:
                break
            continue
        dirn = next_dir(src, q)
        a = dirn >> 1
        nidx = idx + dstr[dirn]
        q += 1
        if nout == 0:
            r[a] += 2 * (dirn & 1) - 1
            if <uint64_t>r[a] < <uint64_t>wshape[a]:
                bits[nidx] |= OCC
                lo_idx = nidx if dirn & 1 == 0 else idx
                bits[lo_idx] |= <uint8_t>(1 << a)
            else:
                nout = 1
                dist = 1
        else:
            old_in = <uint64_t>r[a] < <uint64_t>wshape[a]
            r[a] += 2 * (dirn & 1) - 1
            new_in = <uint64_t>r[a] < <uint64_t>wshape[a]
            nout += old_in - new_in
            if nout == 0:
                bits[nidx] |= OCC
        idx = nidx
    return q


cdef int64_t walk_hit(int64_t* pos0, int d, int64_t L, DirSrc* src, int64_t* mlo,
                      int64_t* mshape, int64_t* stride, const uint8_t* mask, int early) noexcept nogil:
    cdef int64_t r[MAXD]
    cdef int64_t nout = 0, idx = 0, q = 0, dist = 0, j
    cdef int a, dirn, old_in, new_in
    for a in range(d):
        r[a] = pos0[a] - mlo[a]
        if r[a] < 0 or r[a] >= mshape[a]:
            nout += 1
        idx += r[a] * stride[a]
    if nout == 0 and mask[idx]:
        return 0
    if early and nout > 0:
        dist = dist_outside(r, mshape, d)
        if dist > L:
            return -1
    while q < L:
        if nout > 0 and early:
            # as in walk_mark: no entry before the end of a run of dist steps
            for j in range(dist):
                dirn = next_dir(src, q)
                r[dirn >> 1] += 2 * (dirn & 1) - 1
                q += 1
            dist = dist_outside(r, mshape, d)
            if dist == 0:
                nout = 0
                idx = 0
                for a in range(d):
                    idx += r[a] * stride[a]
                if mask[idx]:
                    return q
            elif L - q < dist:
                return -1
            continue
        dirn = next_dir(src, q)
        a = dirn >> 1
        old_in = 1 if (r[a] >= 0 and r[a] < mshape[a]) else 0
        if dirn & 1:
            r[a] += 1
            idx += stride[a]
        else:
            r[a] -= 1
            idx -= stride[a]
        new_in = 1 if (r[a] >= 0 and r[a] < mshape[a]) else 0
        nout += old_in - new_in
        q += 1
        if nout == 0:
            if mask[idx]:
                return q
        else:
            dist = 1
    return -1
    while q < L:
        dirn = next_dir(src, q)
        a = dirn >> 1
        old_in = 1 if (r[a] >= 0 and r[a] < mshape[a]) else 0
        if dirn & 1:
            r[a] += 1
            idx += stride[a]
        else:
            r[a] -= 1
            idx -= stride[a]
        new_in = 1 if (r[a] >= 0 and r[a] < mshape[a]) else 0
        nout += old_in - new_in
        q += 1
        if nout == 0:
            if mask[idx]:
                return q
        elif early and L - q < dist_outside(r, mshape, d):
            return -1
    return -1


def _check_dim(int d):
    if d < 1 or d > MAXD:
        raise ValueError(f"dimension {d} outside 1..{MAXD}")


def walk_dirs(uint64_t key, int d, double s):
    cdef int64_t L = geom_length(key, s)
    cdef DirSrc src
    src.key = key
    src.twod = 2 * d
    src.dirs = NULL
    out = np.empty(L, dtype=np.uint8)
    cdef uint8_t[::1] o = out
    cdef int64_t q
    for q in range(L):
        o[q] = next_dir(&src, q)
    return L, out


def sample_trajectories(uint64_t seed, plo, pshape, double lam, double keep, double s):
    cdef int d = len(plo)
    _check_dim(d)
    cdef int64_t lo[MAXD]
    cdef int64_t shp[MAXD]
    cdef int64_t cur[MAXD]
    cdef int a
    cdef int64_t nsite = 1
    for a in range(d):
        lo[a] = plo[a]
        shp[a] = pshape[a]
        cur[a] = lo[a]
        nsite *= shp[a]
    cdef int64_t i, k, n, ntraj = 0, nstep = 0, L
    cdef uint64_t h, tkey
    cdef PoissonLaw law = poisson_law(lam)
    with nogil:
        for i in range(nsite):
            h = site_key(seed, cur, d)
            n = poisson_count(child_key(h, 0), &law)
            for k in range(1, n + 1):
                tkey = child_key(h, k)
                if kept(tkey, keep):
                    ntraj += 1
                    nstep += geom_length(tkey, s)
            advance(cur, lo, shp, d)
    starts = np.empty((ntraj, d), dtype=np.int64)
    lengths = np.empty(ntraj, dtype=np.int64)
    dirs = np.empty(nstep, dtype=np.uint8)
    cdef int64_t[:, ::1] st = starts
    cdef int64_t[::1] ln = lengths
    cdef uint8_t[::1] dr = dirs
    cdef int64_t t = 0, off = 0, q
    cdef DirSrc src
    src.twod = 2 * d
    src.dirs = NULL
    for a in range(d):
        cur[a] = lo[a]
    with nogil:
        for i in range(nsite):
            h = site_key(seed, cur, d)
            n = poisson_count(child_key(h, 0), &law)
            for k in range(1, n + 1):
                tkey = child_key(h, k)
                if not kept(tkey, keep):
                    continue
                L = geom_length(tkey, s)
                for a in range(d):
                    st[t, a] = cur[a]
                ln[t] = L
                src.key = tkey
                for q in range(L):
                    dr[off + q] = next_dir(&src, q)
                off += L
                t += 1
            advance(cur, lo, shp, d)
    return starts, lengths, dirs


def mark_bonds(starts, lengths, dirs, wlo, wshape):
    cdef int d = len(wlo)
    _check_dim(d)
    cdef int64_t lo[MAXD]
    cdef int64_t shp[MAXD]
    cdef int64_t stride[MAXD]
    cdef int64_t pos[MAXD]
    cdef int a
    cdef int64_t n = 1
    for a in range(d):
        lo[a] = wlo[a]
        shp[a] = wshape[a]
        n *= shp[a]
    strides_of(shp, stride, d)
    bits = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[::1] b = bits
    cdef const int64_t[:, ::1] st = np.ascontiguousarray(starts, dtype=np.int64).reshape(-1, d)
    cdef const int64_t[::1] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    dirs_arr = np.ascontiguousarray(dirs, dtype=np.uint8)
    cdef const uint8_t[::1] dr = dirs_arr
    cdef int64_t i, off = 0, ntr = ln.shape[0]
    cdef DirSrc src
    src.twod = 2 * d
    if ntr == 0 or n == 0:
        return bits
    with nogil:
        for i in range(ntr):
            for a in range(d):
                pos[a] = st[i, a]
            src.dirs = &dr[0] + off if ln[i] > 0 else NULL
            if ln[i] > 0:
                walk_mark(pos, d, ln[i], &src, lo, shp, stride, &b[0], 0)
            else:
                walk_mark(pos, d, 0, &src, lo, shp, stride, &b[0], 0)
            off += ln[i]
    return bits


def sample_bonds(uint64_t seed, plo, pshape, double lam, double keep, double s, wlo, wshape):
    cdef int d = len(plo)
    _check_dim(d)
    cdef int64_t lo[MAXD]
    cdef int64_t shp[MAXD]
    cdef int64_t cur[MAXD]
    cdef int64_t wl[MAXD]
    cdef int64_t ws[MAXD]
    cdef int64_t stride[MAXD]
    cdef int a
    cdef int64_t nsite = 1, nw = 1
    for a in range(d):
        lo[a] = plo[a]
        shp[a] = pshape[a]
        cur[a] = lo[a]
        wl[a] = wlo[a]
        ws[a] = wshape[a]
        nsite *= shp[a]
        nw *= ws[a]
    strides_of(ws, stride, d)
    bits = np.zeros(nw, dtype=np.uint8)
    if nw == 0:
        return bits, 0, 0
    cdef uint8_t[::1] b = bits
    cdef int64_t i, k, n, ntraj = 0, nstep = 0, L
    cdef uint64_t h, tkey
    cdef PoissonLaw law = poisson_law(lam)
    cdef DirSrc src
    src.twod = 2 * d
    src.dirs = NULL
    with nogil:
        for i in range(nsite):
            h = site_key(seed, cur, d)
            n = poisson_count(child_key(h, 0), &law)
            for k in range(1, n + 1):
                tkey = child_key(h, k)
                if not kept(tkey, keep):
                    continue
                ntraj += 1
                L = geom_length(tkey, s)
                src.key = tkey
                nstep += walk_mark(cur, d, L, &src, wl, ws, stride, &b[0], 1)
            advance(cur, lo, shp, d)
    return bits, ntraj, nstep


def first_hits(starts, lengths, dirs, mask, mlo, mshape):
    cdef int d = len(mlo)
    _check_dim(d)
    cdef int64_t lo[MAXD]
    cdef int64_t shp[MAXD]
    cdef int64_t stride[MAXD]
    cdef int64_t pos[MAXD]
    cdef int a
    for a in range(d):
        lo[a] = mlo[a]
        shp[a] = mshape[a]
    strides_of(shp, stride, d)
    cdef const uint8_t[::1] m = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    cdef const int64_t[:, ::1] st = np.ascontiguousarray(starts, dtype=np.int64).reshape(-1, d)
    cdef const int64_t[::1] ln = np.ascontiguousarray(lengths, dtype=np.int64)
    dirs_arr = np.ascontiguousarray(dirs, dtype=np.uint8)
    cdef const uint8_t[::1] dr = dirs_arr
    cdef int64_t ntr = ln.shape[0], i, off = 0
    out = np.full(ntr, -1, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef DirSrc src
    src.twod = 2 * d
    if ntr == 0 or m.shape[0] == 0:
        return out
    with nogil:
        for i in range(ntr):
            for a in range(d):
                pos[a] = st[i, a]
            src.dirs = (&dr[0] + off) if ln[i] > 0 else NULL
            o[i] = walk_hit(pos, d, ln[i], &src, lo, shp, stride, &m[0], 0)
            off += ln[i]
    return out


def sample_hits(uint64_t seed, plo, pshape, double lam, double keep, double s, mask, mlo, mshape):
    cdef int d = len(plo)
    _check_dim(d)
    cdef int64_t lo[MAXD]
    cdef int64_t shp[MAXD]
    cdef int64_t cur[MAXD]
    cdef int64_t ml[MAXD]
    cdef int64_t ms[MAXD]
    cdef int64_t stride[MAXD]
    cdef int a
    cdef int64_t nsite = 1
    for a in range(d):
        lo[a] = plo[a]
        shp[a] = pshape[a]
        cur[a] = lo[a]
        ml[a] = mlo[a]
        ms[a] = mshape[a]
        nsite *= shp[a]
    strides_of(ms, stride, d)
    cdef const uint8_t[::1] m = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    if m.shape[0] == 0:
        return (np.empty((0, d), dtype=np.int64), np.empty(0, dtype=np.int64),
                np.empty(0, dtype=np.int64))
    cdef int64_t i, k, n, L, hit, cnt = 0, cap = 1024
    cdef uint64_t h, tkey
    cdef PoissonLaw law = poisson_law(lam)
    cdef DirSrc src
    src.twod = 2 * d
    src.dirs = NULL
    starts = np.empty((cap, d), dtype=np.int64)
    hits = np.empty(cap, dtype=np.int64)
    lengths = np.empty(cap, dtype=np.int64)
    cdef int64_t[:, ::1] sv = starts
    cdef int64_t[::1] hv = hits
    cdef int64_t[::1] lv = lengths
    with nogil:
        for i in range(nsite):
            h = site_key(seed, cur, d)
            n = poisson_count(child_key(h, 0), &law)
            for k in range(1, n + 1):
                tkey = child_key(h, k)
                if not kept(tkey, keep):
                    continue
                L = geom_length(tkey, s)
                src.key = tkey
                hit = walk_hit(cur, d, L, &src, ml, ms, stride, &m[0], 1)
                if hit < 0:
                    continue
                if cnt == cap:
                    with gil:
                        cap *= 2
                        starts = np.resize(starts, (cap, d))
                        hits = np.resize(hits, cap)
                        lengths = np.resize(lengths, cap)
                        sv = starts
                        hv = hits
                        lv = lengths
                for a in range(d):
                    sv[cnt, a] = cur[a]
                hv[cnt] = hit
                lv[cnt] = L
                cnt += 1
            advance(cur, lo, shp, d)
    return starts[:cnt].copy(), hits[:cnt].copy(), lengths[:cnt].copy()


def hit_within(mask, mlo, mshape, starts, int64_t horizon, uint64_t key):
    cdef int d = len(mlo)
    _check_dim(d)
    cdef int64_t lo[MAXD]
    cdef int64_t shp[MAXD]
    cdef int64_t stride[MAXD]
    cdef int64_t pos[MAXD]
    cdef int a
    for a in range(d):
        lo[a] = mlo[a]
        shp[a] = mshape[a]
    strides_of(shp, stride, d)
    cdef const uint8_t[::1] m = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    cdef const int64_t[:, ::1] st = np.ascontiguousarray(starts, dtype=np.int64).reshape(-1, d)
    cdef int64_t n = st.shape[0], i
    out = np.zeros(n, dtype=bool)
    if horizon <= 0 or n == 0 or m.shape[0] == 0:
        return out
    cdef uint8_t[::1] o = out.view(np.uint8)
    cdef DirSrc src
    src.twod = 2 * d
    src.dirs = NULL
    with nogil:
        for i in range(n):
            for a in range(d):
                pos[a] = st[i, a]
            src.key = child_key(key, i)
            o[i] = walk_hit(pos, d, horizon - 1, &src, lo, shp, stride, &m[0], 1) >= 0
    return out


def escape_walks(state, shape, start, int64_t n, uint64_t key):
    cdef int d = len(shape)
    _check_dim(d)
    cdef int64_t shp[MAXD]
    cdef int64_t stride[MAXD]
    cdef int64_t r[MAXD]
    cdef int64_t r0[MAXD]
    cdef int a
    for a in range(d):
        shp[a] = shape[a]
        r0[a] = start[a]
    strides_of(shp, stride, d)
    cdef const uint8_t[::1] stt = np.ascontiguousarray(state, dtype=np.uint8).ravel()
    cdef int64_t i, q, idx, idx0 = 0, escaped = 0
    cdef int dirn
    cdef uint8_t sv
    cdef DirSrc src
    src.twod = 2 * d
    src.dirs = NULL
    for a in range(d):
        idx0 += r0[a] * stride[a]
    with nogil:
        for i in range(n):
            src.key = child_key(key, i)
            for a in range(d):
                r[a] = r0[a]
            idx = idx0
            q = 0
            while True:
                dirn = next_dir(&src, q)
                q += 1
                a = dirn >> 1
                if dirn & 1:
                    r[a] += 1
                    idx += stride[a]
                else:
                    r[a] -= 1
                    idx -= stride[a]
                if r[a] < 0 or r[a] >= shp[a]:
                    escaped += 1
                    break
                sv = stt[idx]
                if sv == 0:
                    escaped += 1
                    break
                if sv == 2:
                    break
    return escaped


cdef inline int on_edge(int64_t x, int64_t n) noexcept nogil:
    return x == 0 or x == n - 1


def lazy_walk(mask, shape, start, int64_t n_steps, uint64_t key, checkpoints):
    cdef int d = len(shape)
    _check_dim(d)
    cdef int64_t shp[MAXD]
    cdef int64_t stride[MAXD]
    cdef int64_t r[MAXD]
    cdef int a
    for a in range(d):
        shp[a] = shape[a]
        r[a] = start[a]
    strides_of(shp, stride, d)
    cdef const uint8_t[::1] m = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    cdef const int64_t[::1] cp = np.ascontiguousarray(checkpoints, dtype=np.int64)
    cdef int64_t ncp = cp.shape[0]
    out = np.empty((ncp, d), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef int64_t idx = 0, nb = 0, q, ci = 0
    cdef int touched, dirn
    for a in range(d):
        idx += r[a] * stride[a]
        nb += on_edge(r[a], shp[a])
    touched = nb > 0
    cdef DirSrc src
    src.key = key
    src.twod = 2 * d
    src.dirs = NULL
    with nogil:
        while ci < ncp and cp[ci] == 0:
            for a in range(d):
                o[ci, a] = r[a]
            ci += 1
        for q in range(n_steps):
            dirn = next_dir(&src, q)
            a = dirn >> 1
            if dirn & 1:
                if r[a] + 1 < shp[a] and m[idx + stride[a]]:
                    nb -= on_edge(r[a], shp[a])
                    r[a] += 1
                    idx += stride[a]
                    nb += on_edge(r[a], shp[a])
            else:
                if r[a] - 1 >= 0 and m[idx - stride[a]]:
                    nb -= on_edge(r[a], shp[a])
                    r[a] -= 1
                    idx -= stride[a]
                    nb += on_edge(r[a], shp[a])
            if nb > 0:
                touched = 1
            while ci < ncp and cp[ci] == q + 1:
                for a in range(d):
                    o[ci, a] = r[a]
                ci += 1
    return out, bool(touched)


cdef inline int32_t find(int32_t* par, int32_t x) noexcept nogil:
    while par[x] != x:
        par[x] = par[par[x]]
        x = par[x]
    return x


def label_clusters(bits_in, shape):
    cdef int d = len(shape)
    _check_dim(d)
    cdef int64_t shp[MAXD]
    cdef int64_t stride[MAXD]
    cdef int a
    cdef int64_t n = 1
    for a in range(d):
        shp[a] = shape[a]
        n *= shp[a]
    if n >= 2147483647:
        raise ValueError("window too large for 32-bit labels")
    strides_of(shp, stride, d)
    cdef const uint8_t[::1] bits = np.ascontiguousarray(bits_in, dtype=np.uint8)
    out = np.full(n, -1, dtype=np.int32)
    if n == 0:
        return out
    cdef int32_t[::1] par = out
    cdef int64_t i
    cdef int32_t ra, rb
    cdef uint8_t bv
    with nogil:
        for i in range(n):
            if bits[i] & OCC:
                par[i] = <int32_t>i
        for i in range(n):
            bv = bits[i]
            if not (bv & 0x7F):
                continue
            for a in range(d):
                if bv & (1 << a):
                    ra = find(&par[0], <int32_t>i)
                    rb = find(&par[0], <int32_t>(i + stride[a]))
                    if ra < rb:
                        par[rb] = ra
                    elif rb < ra:
                        par[ra] = rb
        for i in range(n):
            if par[i] >= 0:
                par[i] = find(&par[0], <int32_t>i)
    return out


def bfs(bits_in, shape, sources, rlo, rhi, int64_t max_dist):
    cdef int d = len(shape)
    _check_dim(d)
    cdef int64_t shp[MAXD]
    cdef int64_t stride[MAXD]
    cdef int64_t lo[MAXD]
    cdef int64_t hi[MAXD]
    cdef int a
    cdef int64_t n = 1
    for a in range(d):
        shp[a] = shape[a]
        lo[a] = rlo[a]
        hi[a] = rhi[a]
        n *= shp[a]
    strides_of(shp, stride, d)
    cdef const uint8_t[::1] bits = np.ascontiguousarray(bits_in, dtype=np.uint8)
    dist_arr = np.full(n, -1, dtype=np.int32)
    if n == 0:
        return dist_arr
    cdef int32_t[::1] dist = dist_arr
    cdef const int64_t[::1] src = np.ascontiguousarray(sources, dtype=np.int64).ravel()
    cdef int64_t cap = 1 << 16
    cdef int64_t* queue = <int64_t*>malloc(cap * sizeof(int64_t))
    cdef int64_t* grown
    if queue == NULL:
        raise MemoryError()
    cdef int64_t head = 0, tail = 0, idx, rem, ra, j, k
    cdef int32_t dv
    cdef int failed = 0
    try:
        with nogil:
            for k in range(src.shape[0]):
                idx = src[k]
                if (bits[idx] & OCC) and dist[idx] < 0:
                    dist[idx] = 0
                    if tail == cap:
                        grown = <int64_t*>realloc(queue, 2 * cap * sizeof(int64_t))
                        if grown == NULL:
                            failed = 1
                            break
                        queue = grown
                        cap *= 2
                    queue[tail] = idx
                    tail += 1
            while head < tail and not failed:
                if tail + 2 * d > cap:
                    grown = <int64_t*>realloc(queue, 2 * cap * sizeof(int64_t))
                    if grown == NULL:
                        failed = 1
                        break
                    queue = grown
                    cap *= 2
                idx = queue[head]
                head += 1
                dv = dist[idx]
                if dv >= max_dist:
                    continue
                rem = idx
                for a in range(d):
                    ra = rem // stride[a]
                    rem -= ra * stride[a]
                    if ((bits[idx] >> a) & 1) and ra + 1 <= hi[a]:
                        j = idx + stride[a]
                        if dist[j] < 0:
                            dist[j] = dv + 1
                            queue[tail] = j
                            tail += 1
                    if ra - 1 >= lo[a]:
                        j = idx - stride[a]
                        if ((bits[j] >> a) & 1) and dist[j] < 0:
                            dist[j] = dv + 1
                            queue[tail] = j
                            tail += 1
    finally:
        free(queue)
    if failed:
        raise MemoryError("BFS queue allocation failed")
    return dist_arr


def cluster_sizes(labels_in):
    """Roots (ascending) and sizes of all clusters in a label array."""
    cdef const int32_t[::1] lab = np.ascontiguousarray(labels_in, dtype=np.int32)
    cdef int64_t n = lab.shape[0], i, nroot = 0, r
    counts_arr = np.zeros(n, dtype=np.int32)
    cdef int32_t[::1] counts = counts_arr
    with nogil:
        for i in range(n):
            if lab[i] >= 0:
                counts[lab[i]] += 1
        for i in range(n):
            if lab[i] == i:
                nroot += 1
    roots = np.empty(nroot, dtype=np.int64)
    sizes = np.empty(nroot, dtype=np.int64)
    cdef int64_t[::1] ro = roots
    cdef int64_t[::1] so = sizes
    r = 0
    with nogil:
        for i in range(n):
            if lab[i] == i:
                ro[r] = i
                so[r] = counts[i]
                r += 1
    return roots, sizes
