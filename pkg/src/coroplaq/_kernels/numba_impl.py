"""Numba implementations of the numeric kernels.

Twin of ``numpy_impl.py``; same function signatures, same semantics, same
clamping and tie-breaking rules.  Importing this module requires numba;
the package falls back to the NumPy backend when the import fails.

All kernels are compiled with cache=True so the compilation cost is paid
once per machine, and fastmath stays off so results are reproducible and
comparable with the NumPy backend.
"""

import math

import numpy as np
import numba
from numba import njit

HAS_NUMBA = True

TWO_PI_3 = 2.0943951023931953  # 2*pi/3, same literal in both backends


@njit(cache=True)
def trilinear_many(data, ix, iy, iz):
    nx, ny, nz = data.shape
    n = ix.shape[0]
    out = np.empty(n, np.float64)
    ihi = max(nx - 2, 0)
    jhi = max(ny - 2, 0)
    khi = max(nz - 2, 0)
    for p in range(n):
        fx = min(max(ix[p], 0.0), nx - 1.0)
        fy = min(max(iy[p], 0.0), ny - 1.0)
        fz = min(max(iz[p], 0.0), nz - 1.0)
        i0 = min(max(int(fx), 0), ihi)
        j0 = min(max(int(fy), 0), jhi)
        k0 = min(max(int(fz), 0), khi)
        i1 = min(i0 + 1, nx - 1)
        j1 = min(j0 + 1, ny - 1)
        k1 = min(k0 + 1, nz - 1)
        tx = fx - i0
        ty = fy - j0
        tz = fz - k0
        d000 = float(data[i0, j0, k0])
        d001 = float(data[i0, j0, k1])
        d010 = float(data[i0, j1, k0])
        d011 = float(data[i0, j1, k1])
        d100 = float(data[i1, j0, k0])
        d101 = float(data[i1, j0, k1])
        d110 = float(data[i1, j1, k0])
        d111 = float(data[i1, j1, k1])
        c00 = d000 * (1.0 - tz) + d001 * tz
        c01 = d010 * (1.0 - tz) + d011 * tz
        c10 = d100 * (1.0 - tz) + d101 * tz
        c11 = d110 * (1.0 - tz) + d111 * tz
        c0 = c00 * (1.0 - ty) + c01 * ty
        c1 = c10 * (1.0 - ty) + c11 * ty
        out[p] = c0 * (1.0 - tx) + c1 * tx
    return out


@njit(cache=True)
def frob2_field(sm, sx, sy, sz):
    nx, ny, nz = sm.shape
    out = np.zeros((nx, ny, nz), np.float32)
    best = 0.0
    if nx < 3 or ny < 3 or nz < 3:
        return out, best
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                c = float(sm[i, j, k])
                hxx = (float(sm[i + 1, j, k]) - 2.0 * c + float(sm[i - 1, j, k])) / (sx * sx)
                hyy = (float(sm[i, j + 1, k]) - 2.0 * c + float(sm[i, j - 1, k])) / (sy * sy)
                hzz = (float(sm[i, j, k + 1]) - 2.0 * c + float(sm[i, j, k - 1])) / (sz * sz)
                hxy = (
                    float(sm[i + 1, j + 1, k])
                    - float(sm[i + 1, j - 1, k])
                    - float(sm[i - 1, j + 1, k])
                    + float(sm[i - 1, j - 1, k])
                ) / (4.0 * sx * sy)
                hxz = (
                    float(sm[i + 1, j, k + 1])
                    - float(sm[i + 1, j, k - 1])
                    - float(sm[i - 1, j, k + 1])
                    + float(sm[i - 1, j, k - 1])
                ) / (4.0 * sx * sz)
                hyz = (
                    float(sm[i, j + 1, k + 1])
                    - float(sm[i, j + 1, k - 1])
                    - float(sm[i, j - 1, k + 1])
                    + float(sm[i, j - 1, k - 1])
                ) / (4.0 * sy * sz)
                f2 = (
                    hxx * hxx
                    + hyy * hyy
                    + hzz * hzz
                    + 2.0 * (hxy * hxy + hxz * hxz + hyz * hyz)
                )
                out[i, j, k] = f2
                if f2 > best:
                    best = f2
    return out, best


@njit(cache=True)
def frangi_from_frob2(sm, frob2, sx, sy, sz, alpha, beta, c, skip2):
    nx, ny, nz = sm.shape
    out = np.zeros((nx, ny, nz), np.float32)
    if nx < 3 or ny < 3 or nz < 3 or c <= 0.0:
        return out
    inv2a2 = 1.0 / (2.0 * alpha * alpha)
    inv2b2 = 1.0 / (2.0 * beta * beta)
    inv2c2 = 1.0 / (2.0 * c * c)
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                f2 = float(frob2[i, j, k])
                if f2 <= skip2:
                    continue
                cv = float(sm[i, j, k])
                hxx = (float(sm[i + 1, j, k]) - 2.0 * cv + float(sm[i - 1, j, k])) / (sx * sx)
                hyy = (float(sm[i, j + 1, k]) - 2.0 * cv + float(sm[i, j - 1, k])) / (sy * sy)
                hzz = (float(sm[i, j, k + 1]) - 2.0 * cv + float(sm[i, j, k - 1])) / (sz * sz)
                hxy = (
                    float(sm[i + 1, j + 1, k])
                    - float(sm[i + 1, j - 1, k])
                    - float(sm[i - 1, j + 1, k])
                    + float(sm[i - 1, j - 1, k])
                ) / (4.0 * sx * sy)
                hxz = (
                    float(sm[i + 1, j, k + 1])
                    - float(sm[i + 1, j, k - 1])
                    - float(sm[i - 1, j, k + 1])
                    + float(sm[i - 1, j, k - 1])
                ) / (4.0 * sx * sz)
                hyz = (
                    float(sm[i, j + 1, k + 1])
                    - float(sm[i, j + 1, k - 1])
                    - float(sm[i, j - 1, k + 1])
                    + float(sm[i, j - 1, k - 1])
                ) / (4.0 * sy * sz)

                q = (hxx + hyy + hzz) / 3.0
                a = hxx - q
                b = hyy - q
                cc = hzz - q
                p2 = a * a + b * b + cc * cc + 2.0 * (hxy * hxy + hxz * hxz + hyz * hyz)
                p = math.sqrt(p2 / 6.0)
                if p > 0.0:
                    pinv = 1.0 / p
                    b11 = a * pinv
                    b22 = b * pinv
                    b33 = cc * pinv
                    b12 = hxy * pinv
                    b13 = hxz * pinv
                    b23 = hyz * pinv
                    detb = (
                        b11 * (b22 * b33 - b23 * b23)
                        - b12 * (b12 * b33 - b23 * b13)
                        + b13 * (b12 * b23 - b22 * b13)
                    )
                    r = detb / 2.0
                    if r < -1.0:
                        r = -1.0
                    elif r > 1.0:
                        r = 1.0
                    phi = math.acos(r) / 3.0
                    e1 = q + 2.0 * p * math.cos(phi)
                    e3 = q + 2.0 * p * math.cos(phi + TWO_PI_3)
                    e2 = 3.0 * q - e1 - e3
                else:
                    e1 = q
                    e2 = q
                    e3 = q

                # sort by (|v|, v) with the same compare-swap network as
                # the NumPy backend
                if abs(e2) < abs(e1) or (abs(e2) == abs(e1) and e2 < e1):
                    e1, e2 = e2, e1
                if abs(e3) < abs(e2) or (abs(e3) == abs(e2) and e3 < e2):
                    e2, e3 = e3, e2
                if abs(e2) < abs(e1) or (abs(e2) == abs(e1) and e2 < e1):
                    e1, e2 = e2, e1

                if e2 < 0.0 and e3 < 0.0:
                    l3sq = e3 * e3
                    if l3sq <= 0.0:
                        l3sq = 1.0
                    ra2 = (e2 * e2) / l3sq
                    l23 = abs(e2 * e3)
                    if l23 <= 0.0:
                        l23 = 1.0
                    rb2 = (e1 * e1) / l23
                    resp = (
                        (1.0 - math.exp(-ra2 * inv2a2))
                        * math.exp(-rb2 * inv2b2)
                        * (1.0 - math.exp(-f2 * inv2c2))
                    )
                    out[i, j, k] = resp
    return out


@njit(cache=True)
def dijkstra_grid(ves, sx, sy, sz, mask, si, sj, sk, gi, gj, gk, eps):
    nx, ny, nz = ves.shape
    n_total = nx * ny * nz
    dist = np.full(n_total, np.inf)
    prev = np.full(n_total, -1, np.int64)
    popped = np.zeros(n_total, np.uint8)

    offs = np.empty((26, 3), np.int64)
    steps = np.empty(26, np.float64)
    o = 0
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == 0 and dj == 0 and dk == 0:
                    continue
                offs[o, 0] = di
                offs[o, 1] = dj
                offs[o, 2] = dk
                steps[o] = math.sqrt(
                    (di * sx) * (di * sx)
                    + (dj * sy) * (dj * sy)
                    + (dk * sz) * (dk * sz)
                )
                o += 1

    cap = 1 << 14
    hd = np.empty(cap, np.float64)
    hn = np.empty(cap, np.int64)
    hsize = 0

    start = (si * ny + sj) * nz + sk
    goal = (gi * ny + gj) * nz + gk
    dist[start] = 0.0
    hd[0] = 0.0
    hn[0] = start
    hsize = 1
    found = False

    while hsize > 0:
        d = hd[0]
        u = hn[0]
        hsize -= 1
        hd[0] = hd[hsize]
        hn[0] = hn[hsize]
        # sift down; ties compare by node index so both backends pop in
        # the same order
        pos = 0
        while True:
            lch = 2 * pos + 1
            if lch >= hsize:
                break
            rch = lch + 1
            small = lch
            if rch < hsize and (
                hd[rch] < hd[lch] or (hd[rch] == hd[lch] and hn[rch] < hn[lch])
            ):
                small = rch
            if hd[small] < hd[pos] or (hd[small] == hd[pos] and hn[small] < hn[pos]):
                td = hd[pos]
                tn = hn[pos]
                hd[pos] = hd[small]
                hn[pos] = hn[small]
                hd[small] = td
                hn[small] = tn
                pos = small
            else:
                break

        if popped[u] == 1:
            continue
        popped[u] = 1
        if u == goal:
            found = True
            break
        k = u % nz
        j = (u // nz) % ny
        i = u // (nz * ny)
        vu = float(ves[i, j, k])
        for e in range(26):
            ni = i + offs[e, 0]
            nj = j + offs[e, 1]
            nk = k + offs[e, 2]
            if ni < 0 or ni >= nx or nj < 0 or nj >= ny or nk < 0 or nk >= nz:
                continue
            if mask[ni, nj, nk] == 0:
                continue
            v = (ni * ny + nj) * nz + nk
            if popped[v] == 1:
                continue
            vv = float(ves[ni, nj, nk])
            nd = d + steps[e] / (0.5 * (vu + vv) + eps)
            if nd < dist[v]:
                dist[v] = nd
                prev[v] = u
                if hsize == cap:
                    ncap = cap * 2
                    nhd = np.empty(ncap, np.float64)
                    nhn = np.empty(ncap, np.int64)
                    nhd[:cap] = hd
                    nhn[:cap] = hn
                    hd = nhd
                    hn = nhn
                    cap = ncap
                # push with sift up, same tie rule
                hd[hsize] = nd
                hn[hsize] = v
                pos = hsize
                hsize += 1
                while pos > 0:
                    par = (pos - 1) // 2
                    if hd[pos] < hd[par] or (hd[pos] == hd[par] and hn[pos] < hn[par]):
                        td = hd[pos]
                        tn = hn[pos]
                        hd[pos] = hd[par]
                        hn[pos] = hn[par]
                        hd[par] = td
                        hn[par] = tn
                        pos = par
                    else:
                        break
    return dist, prev, found


@njit(cache=True)
def _dt_quadratic_inplace(f, lam, out, v, z):
    """Felzenszwalb-Huttenlocher lower envelope of parabolas.

    out[p] = min over q of f[q] + lam*(p-q)^2.  The envelope only steers
    which parabola is evaluated; the evaluated expression is identical to
    the NumPy backend's candidates, so values match exactly.
    """
    m = f.shape[0]
    if lam == 0.0:
        fmin = f[0]
        for q in range(1, m):
            if f[q] < fmin:
                fmin = f[q]
        for p in range(m):
            out[p] = fmin
        return
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, m):
        fq = f[q] + lam * q * q
        while True:
            p = v[k]
            s = (fq - (f[p] + lam * p * p)) / (2.0 * lam * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for p in range(m):
        while z[k + 1] < p:
            k += 1
        q = v[k]
        dpq = float(p - q)
        out[p] = f[q] + lam * (dpq * dpq)


@njit(cache=True)
def _backward_messages(unary, lam, k0, bmsg, v, z):
    n, m = unary.shape
    for l in range(m):
        d = float(l - k0)
        bmsg[n - 1, l] = unary[n - 1, l] + lam * (d * d)
    for i in range(n - 2, 0, -1):
        _dt_quadratic_inplace(bmsg[i + 1], lam, bmsg[i], v, z)
        for l in range(m):
            bmsg[i, l] = unary[i, l] + bmsg[i, l]


@njit(cache=True)
def mrf_cycle(unary, lam):
    n, m = unary.shape
    labels = np.zeros(n, np.int64)
    if n == 1:
        best = unary[0, 0]
        bl = 0
        for l in range(1, m):
            if unary[0, l] < best:
                best = unary[0, l]
                bl = l
        labels[0] = bl
        return labels, unary[0, bl]

    bmsg = np.empty((n, m), np.float64)
    dtv = np.empty(m, np.int64)
    dtz = np.empty(m + 1, np.float64)

    best_e = np.inf
    best_k0 = 0
    for k0 in range(m):
        _backward_messages(unary, lam, k0, bmsg, dtv, dtz)
        e = np.inf
        for l in range(m):
            d = float(l - k0)
            cand = bmsg[1, l] + lam * (d * d)
            if cand < e:
                e = cand
        e = unary[0, k0] + e
        if e < best_e:
            best_e = e
            best_k0 = k0

    _backward_messages(unary, lam, best_k0, bmsg, dtv, dtz)
    labels[0] = best_k0
    for i in range(1, n):
        prev_l = labels[i - 1]
        bl = 0
        bv = np.inf
        for l in range(m):
            d = float(l - prev_l)
            cand = lam * (d * d) + bmsg[i, l]
            if cand < bv:
                bv = cand
                bl = l
        labels[i] = bl

    energy = 0.0
    for i in range(n):
        energy += unary[i, labels[i]]
    for i in range(n):
        dlab = float(labels[i] - labels[(i + 1) % n])
        energy += lam * (dlab * dlab)
    return labels, energy
