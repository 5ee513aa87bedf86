"""Compiled ray kernels.

Everything here works on the flat facet/edge arrays built by
:class:`ifray.geometry.Scene`. The kernels release the GIL so that the
tracer can fan out over receivers with plain threads.

Interaction codes used in ray histories::

    code = kind << 42 | aux << 21 | index

with kind 1 = reflection, 2 = transmission (index = entry facet,
aux = exit facet) and 3 = diffraction (index = edge).
"""

import math

import numpy as np
from numba import njit

EPS = 1e-6
KIND_R = 1
KIND_T = 2
KIND_D = 3
_SHIFT_KIND = 42
_SHIFT_AUX = 21
_MASK = (1 << 21) - 1


@njit(cache=True, nogil=True)
def encode(kind, index, aux):
    return (np.int64(kind) << _SHIFT_KIND) | (np.int64(aux) << _SHIFT_AUX) | np.int64(index)


@njit(cache=True, nogil=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, nogil=True)
def _facet_t(ox, oy, oz, dx, dy, dz, tmax, fo, fu, fv, fn, fuu, fvv, f):
    nx, ny, nz = fn[f, 0], fn[f, 1], fn[f, 2]
    denom = nx * dx + ny * dy + nz * dz
    if abs(denom) < 1e-12:
        return np.inf
    t = ((fo[f, 0] - ox) * nx + (fo[f, 1] - oy) * ny + (fo[f, 2] - oz) * nz) / denom
    if t <= EPS or t >= tmax:
        return np.inf
    qx = ox + t * dx - fo[f, 0]
    qy = oy + t * dy - fo[f, 1]
    qz = oz + t * dz - fo[f, 2]
    a = (qx * fu[f, 0] + qy * fu[f, 1] + qz * fu[f, 2]) / fuu[f]
    if a <= 0.0 or a >= 1.0:
        return np.inf
    b = (qx * fv[f, 0] + qy * fv[f, 1] + qz * fv[f, 2]) / fvv[f]
    if b <= 0.0 or b >= 1.0:
        return np.inf
    return t


@njit(cache=True, nogil=True)
def nearest(ox, oy, oz, dx, dy, dz, tmax, fo, fu, fv, fn, fuu, fvv, oc, orad, nshell):
    """Nearest facet hit with t in (EPS, tmax); returns (t, facet) or (inf, -1)."""
    best = tmax
    bf = -1
    for f in range(nshell):
        t = _facet_t(ox, oy, oz, dx, dy, dz, best, fo, fu, fv, fn, fuu, fvv, f)
        if t < best:
            best = t
            bf = f
    for b in range(oc.shape[0]):
        cx = oc[b, 0] - ox
        cy = oc[b, 1] - oy
        cz = oc[b, 2] - oz
        tc = cx * dx + cy * dy + cz * dz
        r = orad[b]
        if tc + r <= EPS or tc - r >= best:
            continue
        if cx * cx + cy * cy + cz * cz - tc * tc > r * r:
            continue
        first = nshell + 6 * b
        for f in range(first, first + 6):
            t = _facet_t(ox, oy, oz, dx, dy, dz, best, fo, fu, fv, fn, fuu, fvv, f)
            if t < best:
                best = t
                bf = f
    if bf < 0:
        return np.inf, -1
    return best, bf


@njit(cache=True, nogil=True)
def nearest_many(origins, dirs, tmax, fo, fu, fv, fn, fuu, fvv, oc, orad, nshell):
    n = origins.shape[0]
    ts = np.empty(n)
    fs = np.empty(n, dtype=np.int64)
    for i in range(n):
        t, f = nearest(origins[i, 0], origins[i, 1], origins[i, 2],
                       dirs[i, 0], dirs[i, 1], dirs[i, 2], tmax[i],
                       fo, fu, fv, fn, fuu, fvv, oc, orad, nshell)
        ts[i] = t
        fs[i] = f
    return ts, fs


@njit(cache=True, nogil=True)
def _blocked(p, q, fo, fu, fv, fn, fuu, fvv, oc, orad, nshell):
    dx = q[0] - p[0]
    dy = q[1] - p[1]
    dz = q[2] - p[2]
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    if length <= 2 * EPS:
        return False
    dx /= length
    dy /= length
    dz /= length
    t, f = nearest(p[0], p[1], p[2], dx, dy, dz, length - EPS,
                   fo, fu, fv, fn, fuu, fvv, oc, orad, nshell)
    return f >= 0


@njit(cache=True, nogil=True)
def blocked_many(ps, qs, fo, fu, fv, fn, fuu, fvv, oc, orad, nshell):
    n = ps.shape[0]
    out = np.empty(n, dtype=np.bool_)
    for i in range(n):
        out[i] = _blocked(ps[i], qs[i], fo, fu, fv, fn, fuu, fvv, oc, orad, nshell)
    return out


@njit(cache=True, nogil=True)
def shoot(src, dirs, cap, max_r, max_t, fo, fu, fv, fn, fuu, fvv, fobj, ftrans,
          oc, orad, nshell):
    """Shoot rays from ``src`` and record every free segment of every ray tree.

    Returns segment origins, directions, lengths (inf if escaping), unfolded
    length at the segment start, interaction histories and hit facets.
    """
    n_dirs = dirs.shape[0]
    k = max(max_r + max_t, 1)
    seg_o = np.empty((cap, 3))
    seg_d = np.empty((cap, 3))
    seg_t = np.empty(cap)
    seg_l = np.empty(cap)
    seg_h = np.zeros((cap, k), dtype=np.int64)
    seg_f = np.empty(cap, dtype=np.int64)
    size = 2 * (max_r + max_t + 2)
    st_o = np.empty((size, 3))
    st_d = np.empty((size, 3))
    st_l = np.empty(size)
    st_h = np.zeros((size, k), dtype=np.int64)
    st_r = np.empty(size, dtype=np.int64)
    st_t = np.empty(size, dtype=np.int64)
    n = 0
    for i in range(n_dirs):
        top = 0
        st_o[0, :] = src
        st_d[0, :] = dirs[i]
        st_l[0] = 0.0
        st_h[0, :] = 0
        st_r[0] = 0
        st_t[0] = 0
        top = 1
        while top > 0:
            top -= 1
            ox, oy, oz = st_o[top, 0], st_o[top, 1], st_o[top, 2]
            dx, dy, dz = st_d[top, 0], st_d[top, 1], st_d[top, 2]
            length0 = st_l[top]
            nr = st_r[top]
            nt = st_t[top]
            hist = st_h[top].copy()
            t, f = nearest(ox, oy, oz, dx, dy, dz, np.inf,
                           fo, fu, fv, fn, fuu, fvv, oc, orad, nshell)
            if n >= cap:
                break
            seg_o[n, 0] = ox
            seg_o[n, 1] = oy
            seg_o[n, 2] = oz
            seg_d[n, 0] = dx
            seg_d[n, 1] = dy
            seg_d[n, 2] = dz
            seg_t[n] = t
            seg_l[n] = length0
            seg_h[n, :] = hist
            seg_f[n] = f
            n += 1
            if f < 0:
                continue
            denom = fn[f, 0] * dx + fn[f, 1] * dy + fn[f, 2] * dz
            if denom >= 0.0:
                continue
            px = ox + t * dx
            py = oy + t * dy
            pz = oz + t * dz
            depth = nr + nt
            if nt < max_t and ftrans[f]:
                t2, g = nearest(px, py, pz, dx, dy, dz, np.inf,
                                fo, fu, fv, fn, fuu, fvv, oc, orad, nshell)
                if g >= 0 and fobj[g] == fobj[f]:
                    if fn[g, 0] * dx + fn[g, 1] * dy + fn[g, 2] * dz > 0.0:
                        st_o[top, 0] = px + t2 * dx
                        st_o[top, 1] = py + t2 * dy
                        st_o[top, 2] = pz + t2 * dz
                        st_d[top, 0] = dx
                        st_d[top, 1] = dy
                        st_d[top, 2] = dz
                        st_l[top] = length0 + t + t2
                        st_h[top, :] = hist
                        st_h[top, depth] = encode(KIND_T, f, g)
                        st_r[top] = nr
                        st_t[top] = nt + 1
                        top += 1
            if nr < max_r:
                st_o[top, 0] = px
                st_o[top, 1] = py
                st_o[top, 2] = pz
                st_d[top, 0] = dx - 2.0 * denom * fn[f, 0]
                st_d[top, 1] = dy - 2.0 * denom * fn[f, 1]
                st_d[top, 2] = dz - 2.0 * denom * fn[f, 2]
                st_l[top] = length0 + t
                st_h[top, :] = hist
                st_h[top, depth] = encode(KIND_R, f, 0)
                st_r[top] = nr + 1
                st_t[top] = nt
                top += 1
    return seg_o[:n], seg_d[:n], seg_t[:n], seg_l[:n], seg_h[:n], seg_f[:n]


@njit(cache=True, nogil=True)
def _seg_seg(p1x, p1y, p1z, d1x, d1y, d1z, p2, d2):
    """Closest points between segments p1 + s*d1 and p2 + t*d2 (s, t in [0, 1])."""
    rx = p1x - p2[0]
    ry = p1y - p2[1]
    rz = p1z - p2[2]
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2]
    f = d2[0] * rx + d2[1] * ry + d2[2] * rz
    c = d1x * rx + d1y * ry + d1z * rz
    b = d1x * d2[0] + d1y * d2[1] + d1z * d2[2]
    denom = a * e - b * b
    if denom > 1e-14 * a * e:
        s = (b * f - c * e) / denom
        s = min(max(s, 0.0), 1.0)
    else:
        s = 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)
    qx = p1x + s * d1x - (p2[0] + t * d2[0])
    qy = p1y + s * d1y - (p2[1] + t * d2[1])
    qz = p1z + s * d1z - (p2[2] + t * d2[2])
    return s, math.sqrt(qx * qx + qy * qy + qz * qz)


@njit(cache=True, nogil=True)
def capture_edges(seg_o, seg_d, seg_t, seg_l, e0, evec, emid, ehalf, scale, tcap):
    """Pairs (segment, edge) where a segment passes within its capture radius.

    The radius grows with unfolded length: ``(L0 + s) * scale``.
    """
    n = seg_o.shape[0]
    n_edges = e0.shape[0]
    cap = 1024
    out_s = np.empty(cap, dtype=np.int64)
    out_e = np.empty(cap, dtype=np.int64)
    m = 0
    for i in range(n):
        t = seg_t[i]
        if not t < tcap:
            t = tcap
        ox, oy, oz = seg_o[i, 0], seg_o[i, 1], seg_o[i, 2]
        d1x = seg_d[i, 0] * t
        d1y = seg_d[i, 1] * t
        d1z = seg_d[i, 2] * t
        rmax = (seg_l[i] + t) * scale
        for e in range(n_edges):
            # cheap cull: edge midpoint distance to the segment line
            mx = emid[e, 0] - ox
            my = emid[e, 1] - oy
            mz = emid[e, 2] - oz
            u = (mx * d1x + my * d1y + mz * d1z) / (t * t)
            u = min(max(u, 0.0), 1.0)
            wx = mx - u * d1x
            wy = my - u * d1y
            wz = mz - u * d1z
            lim = ehalf[e] + rmax
            if wx * wx + wy * wy + wz * wz > lim * lim:
                continue
            s, dist = _seg_seg(ox, oy, oz, d1x, d1y, d1z, e0[e], evec[e])
            if dist < (seg_l[i] + s * t) * scale:
                if m >= cap:
                    cap *= 2
                    ns = np.empty(cap, dtype=np.int64)
                    ne = np.empty(cap, dtype=np.int64)
                    ns[:m] = out_s[:m]
                    ne[:m] = out_e[:m]
                    out_s = ns
                    out_e = ne
                out_s[m] = i
                out_e[m] = e
                m += 1
    return out_s[:m], out_e[:m]


@njit(cache=True, nogil=True)
def _mirror(p, fo, fn, f):
    dist = (p[0] - fo[f, 0]) * fn[f, 0] + (p[1] - fo[f, 1]) * fn[f, 1] + (p[2] - fo[f, 2]) * fn[f, 2]
    out = np.empty(3)
    for i in range(3):
        out[i] = p[i] - 2.0 * dist * fn[f, i]
    return out


@njit(cache=True, nogil=True)
def _line_facet(a, b, fo, fu, fv, fn, fuu, fvv, f, out):
    """Crossing of segment a->b with facet f; writes the point, returns success."""
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    dz = b[2] - a[2]
    denom = dx * fn[f, 0] + dy * fn[f, 1] + dz * fn[f, 2]
    if abs(denom) < 1e-15:
        return False
    u = ((fo[f, 0] - a[0]) * fn[f, 0] + (fo[f, 1] - a[1]) * fn[f, 1]
         + (fo[f, 2] - a[2]) * fn[f, 2]) / denom
    if u <= 0.0 or u >= 1.0:
        return False
    qx = a[0] + u * dx - fo[f, 0]
    qy = a[1] + u * dy - fo[f, 1]
    qz = a[2] + u * dz - fo[f, 2]
    s = (qx * fu[f, 0] + qy * fu[f, 1] + qz * fu[f, 2]) / fuu[f]
    if s <= 0.0 or s >= 1.0:
        return False
    r = (qx * fv[f, 0] + qy * fv[f, 1] + qz * fv[f, 2]) / fvv[f]
    if r <= 0.0 or r >= 1.0:
        return False
    out[0] = a[0] + u * dx
    out[1] = a[1] + u * dy
    out[2] = a[2] + u * dz
    return True


@njit(cache=True, nogil=True)
def _backtrace(src, dst, kinds, ids, aux, j0, j1, fo, fu, fv, fn, fuu, fvv,
               out, out_kind, out_fac, start):
    """Solve the R/T chain kinds[j0:j1] between src and dst by images.

    Writes vertices to out[start:...]; returns the vertex count or -1.
    """
    m = j1 - j0
    imgs = np.empty((m + 1, 3))
    imgs[0, :] = src
    nv = 0
    for j in range(j0, j1):
        if kinds[j] == KIND_R:
            imgs[j - j0 + 1, :] = _mirror(imgs[j - j0], fo, fn, ids[j])
            nv += 1
        else:
            imgs[j - j0 + 1, :] = imgs[j - j0]
            nv += 2
    target = dst.copy()
    pos = start + nv
    p = np.empty(3)
    for j in range(j1 - 1, j0 - 1, -1):
        img = imgs[j - j0 + 1]
        if kinds[j] == KIND_R:
            if not _line_facet(img, target, fo, fu, fv, fn, fuu, fvv, ids[j], p):
                return -1
            pos -= 1
            out[pos, :] = p
            out_kind[pos] = KIND_R
            out_fac[pos] = ids[j]
            target[:] = p
        else:
            if not _line_facet(img, target, fo, fu, fv, fn, fuu, fvv, aux[j], p):
                return -1
            pos -= 1
            out[pos, :] = p
            out_kind[pos] = -KIND_T
            out_fac[pos] = aux[j]
            target[:] = p
            if not _line_facet(img, target, fo, fu, fv, fn, fuu, fvv, ids[j], p):
                return -1
            pos -= 1
            out[pos, :] = p
            out_kind[pos] = KIND_T
            out_fac[pos] = ids[j]
            target[:] = p
    return nv


@njit(cache=True, nogil=True)
def refine(tx, rx, kinds, ids, aux, counts, fo, fu, fv, fn, fuu, fvv, oc, orad, nshell,
           e0, edir, elen):
    """Exact geometry for candidate interaction chains.

    Each chain holds reflections/transmissions and at most one diffraction.
    Vertex kinds in the output: 0 endpoint, 1 reflection, 2 transmission
    entry, -2 transmission exit, 3 diffraction.
    """
    n_c, k = kinds.shape
    n_v = 2 * k + 2
    verts = np.zeros((n_c, n_v, 3))
    vkind = np.zeros((n_c, n_v), dtype=np.int64)
    vfac = np.full((n_c, n_v), -1, dtype=np.int64)
    nverts = np.zeros(n_c, dtype=np.int64)
    ok = np.zeros(n_c, dtype=np.bool_)
    for c in range(n_c):
        cnt = counts[c]
        kd = kinds[c]
        idc = ids[c]
        axc = aux[c]
        bad = False
        for j in range(cnt - 1):
            if kd[j] != KIND_D and kd[j + 1] != KIND_D and idc[j] == idc[j + 1]:
                bad = True
        if bad:
            continue
        jd = -1
        for j in range(cnt):
            if kd[j] == KIND_D:
                jd = j
        out = verts[c]
        ok_kind = vkind[c]
        ok_fac = vfac[c]
        out[0, :] = tx
        if jd < 0:
            m = _backtrace(tx, rx, kd, idc, axc, 0, cnt, fo, fu, fv, fn, fuu, fvv,
                           out, ok_kind, ok_fac, 1)
            if m < 0:
                continue
            last = m + 1
        else:
            img_i = tx.copy()
            for j in range(jd):
                if kd[j] == KIND_R:
                    img_i = _mirror(img_i, fo, fn, idc[j])
            img_j = rx.copy()
            for j in range(cnt - 1, jd, -1):
                if kd[j] == KIND_R:
                    img_j = _mirror(img_j, fo, fn, idc[j])
            e = idc[jd]
            a1 = _dot(img_i - e0[e], edir[e])
            a2 = _dot(img_j - e0[e], edir[e])
            w1 = img_i - e0[e] - a1 * edir[e]
            w2 = img_j - e0[e] - a2 * edir[e]
            h1 = math.sqrt(_dot(w1, w1))
            h2 = math.sqrt(_dot(w2, w2))
            if h1 + h2 < 1e-12:
                continue
            s = a1 + (a2 - a1) * h1 / (h1 + h2)
            if s <= EPS or s >= elen[e] - EPS:
                continue
            dpt = e0[e] + s * edir[e]
            m1 = _backtrace(tx, dpt, kd, idc, axc, 0, jd, fo, fu, fv, fn, fuu, fvv,
                            out, ok_kind, ok_fac, 1)
            if m1 < 0:
                continue
            out[m1 + 1, :] = dpt
            ok_kind[m1 + 1] = KIND_D
            ok_fac[m1 + 1] = e
            m2 = _backtrace(dpt, rx, kd, idc, axc, jd + 1, cnt, fo, fu, fv, fn, fuu, fvv,
                            out, ok_kind, ok_fac, m1 + 2)
            if m2 < 0:
                continue
            last = m1 + m2 + 2
        out[last, :] = rx
        ok_kind[0] = 0
        ok_kind[last] = 0
        valid = True
        for v in range(1, last):
            kv = ok_kind[v]
            f = ok_fac[v]
            if kv == KIND_R:
                if _dot(out[v - 1] - out[v], fn[f]) <= 1e-9 or _dot(out[v + 1] - out[v], fn[f]) <= 1e-9:
                    valid = False
                    break
            elif kv == KIND_T:
                if _dot(out[v - 1] - out[v], fn[f]) <= 1e-9:
                    valid = False
                    break
            elif kv == -KIND_T:
                if _dot(out[v + 1] - out[v], fn[f]) <= 1e-9:
                    valid = False
                    break
        if not valid:
            continue
        for v in range(last):
            if _blocked(out[v], out[v + 1], fo, fu, fv, fn, fuu, fvv, oc, orad, nshell):
                valid = False
                break
        if not valid:
            continue
        nverts[c] = last + 1
        ok[c] = True
    return ok, verts, vkind, vfac, nverts
