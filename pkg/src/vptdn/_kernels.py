"""Compiled inner loops for rendering and denoising.

Everything here is numba-jitted scalar code parallelized over image rows.
Each pixel/sample derives its own counter-based random stream (mirroring
rng.py bit-for-bit), so outputs never depend on thread count or scheduling.
No shared mutable state crosses rows; accumulation order is fixed.
"""
from __future__ import annotations

import os

import numpy as np
from numba import njit, prange
import numba

_U64 = np.uint64
_GAMMA = _U64(0x9E3779B97F4A7C15)
_MUL1 = _U64(0xBF58476D1CE4E5B9)
_MUL2 = _U64(0x94D049BB133111EB)
_K_PIXEL = _U64(0x9E3779B97F4A7C15)
_K_SAMPLE = _U64(0xD1B54A32D192ED03)
_K_PURPOSE = _U64(0x8CB92BA72F3D8DD7)
_INV_2_53 = 1.0 / 9007199254740992.0

# stream purposes, kept in sync with rng.py
P_CAMERA = _U64(0)
P_PATH = _U64(16)
P_NEE = _U64(64)
P_RESAMPLE = _U64(128)

# pixel reconstruction filter (separable Gaussian, truncated at 1 px)
FILTER_SIGMA = 0.5
FILTER_RADIUS = 1


def set_threads(n: int | None = None) -> int:
    """Cap numba's worker count (VPTDN_THREADS wins over the argument)."""
    env = os.environ.get("VPTDN_THREADS")
    if env:
        n = int(env)
    if n is None or n <= 0:
        n = min(numba.config.NUMBA_DEFAULT_NUM_THREADS, os.cpu_count() or 1)
    n = max(1, min(n, numba.config.NUMBA_DEFAULT_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@njit(inline="always", cache=True)
def _mix64(x):
    x = _U64(x)
    x ^= x >> _U64(30)
    x = _U64(x * _MUL1)
    x ^= x >> _U64(27)
    x = _U64(x * _MUL2)
    x ^= x >> _U64(31)
    return x


@njit(inline="always", cache=True)
def _stream_init(seed, pixel, sample, purpose):
    s = _mix64(_U64(seed) ^ _U64(_U64(pixel) * _K_PIXEL))
    s = _mix64(s ^ _U64(_U64(sample) * _K_SAMPLE))
    s = _mix64(s ^ _U64(_U64(purpose) * _K_PURPOSE))
    return s


@njit(inline="always", cache=True)
def _next_u01(state):
    state = _U64(state + _GAMMA)
    return state, np.float64(_mix64(state) >> _U64(11)) * _INV_2_53


@njit(inline="always", cache=True)
def _trilinear(vol, px, py, pz):
    """Scalar field lookup; vol = (data, nx,ny,nz, sx,sy,sz, wx,wy,wz)."""
    data, nx, ny, nz, sx, sy, sz, wx, wy, wz = vol
    if px < 0.0 or py < 0.0 or pz < 0.0 or px > wx or py > wy or pz > wz:
        return 0.0
    vx = px / sx - 0.5
    vy = py / sy - 0.5
    vz = pz / sz - 0.5
    ix = int(np.floor(vx))
    iy = int(np.floor(vy))
    iz = int(np.floor(vz))
    hx = nx - 2 if nx >= 2 else 0
    hy = ny - 2 if ny >= 2 else 0
    hz = nz - 2 if nz >= 2 else 0
    if ix < 0:
        ix = 0
    elif ix > hx:
        ix = hx
    if iy < 0:
        iy = 0
    elif iy > hy:
        iy = hy
    if iz < 0:
        iz = 0
    elif iz > hz:
        iz = hz
    fx = vx - ix
    fy = vy - iy
    fz = vz - iz
    if fx < 0.0:
        fx = 0.0
    elif fx > 1.0:
        fx = 1.0
    if fy < 0.0:
        fy = 0.0
    elif fy > 1.0:
        fy = 1.0
    if fz < 0.0:
        fz = 0.0
    elif fz > 1.0:
        fz = 1.0
    if nx == 1:
        fx = 0.0
    if ny == 1:
        fy = 0.0
    if nz == 1:
        fz = 0.0
    jx = ix + 1 if ix + 1 < nx else nx - 1
    jy = iy + 1 if iy + 1 < ny else ny - 1
    jz = iz + 1 if iz + 1 < nz else nz - 1
    c000 = np.float64(data[ix + nx * (iy + ny * iz)])
    c100 = np.float64(data[jx + nx * (iy + ny * iz)])
    c010 = np.float64(data[ix + nx * (jy + ny * iz)])
    c110 = np.float64(data[jx + nx * (jy + ny * iz)])
    c001 = np.float64(data[ix + nx * (iy + ny * jz)])
    c101 = np.float64(data[jx + nx * (iy + ny * jz)])
    c011 = np.float64(data[ix + nx * (jy + ny * jz)])
    c111 = np.float64(data[jx + nx * (jy + ny * jz)])
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


@njit(inline="always", cache=True)
def _tf_eval(tf, s):
    """Returns (mu_t, a0, a1, a2, e0, e1, e2) at a scalar in [0,1]."""
    pos, alb, opa, emi, dscale = tf
    n = pos.shape[0]
    lo, hi = 0, n - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if pos[mid] <= s:
            lo = mid
        else:
            hi = mid
    i = lo
    t = (s - pos[i]) / (pos[i + 1] - pos[i])
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    mu_t = (opa[i] * (1 - t) + opa[i + 1] * t) * dscale
    a0 = alb[i, 0] * (1 - t) + alb[i + 1, 0] * t
    a1 = alb[i, 1] * (1 - t) + alb[i + 1, 1] * t
    a2 = alb[i, 2] * (1 - t) + alb[i + 1, 2] * t
    e0 = emi[i, 0] * (1 - t) + emi[i + 1, 0] * t
    e1 = emi[i, 1] * (1 - t) + emi[i + 1, 1] * t
    e2 = emi[i, 2] * (1 - t) + emi[i + 1, 2] * t
    return mu_t, a0, a1, a2, e0, e1, e2


@njit(inline="always", cache=True)
def _ray_box(ox, oy, oz, dx, dy, dz, wx, wy, wz):
    """Intersect with [0,w]^3; returns (hit, t_enter>=0, t_exit)."""
    t0 = 0.0
    t1 = np.inf
    for axis in range(3):
        if axis == 0:
            o, d, w = ox, dx, wx
        elif axis == 1:
            o, d, w = oy, dy, wy
        else:
            o, d, w = oz, dz, wz
        if abs(d) < 1e-300:
            if o < 0.0 or o > w:
                return False, 0.0, 0.0
        else:
            inv = 1.0 / d
            ta = (0.0 - o) * inv
            tb = (w - o) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t1 <= t0:
        return False, 0.0, 0.0
    return True, t0, t1


@njit(inline="always", cache=True)
def _free_path(vol, tf, mu_max, ox, oy, oz, dx, dy, dz, tlimit, state):
    """Delta tracking from a point inside the bounds along a unit direction.

    Returns (hit, t, scalar_at_hit, state). Distances use fresh uniforms;
    tentative collisions are accepted with probability mu_t/mu_max.
    """
    if mu_max <= 0.0:
        return False, tlimit, 0.0, state
    t = 0.0
    while True:
        state, u = _next_u01(state)
        t -= np.log(1.0 - u) / mu_max
        if t >= tlimit:
            return False, tlimit, 0.0, state
        s = _trilinear(vol, ox + t * dx, oy + t * dy, oz + t * dz)
        mu_t, a0, a1, a2, e0, e1, e2 = _tf_eval(tf, s)
        state, u2 = _next_u01(state)
        if u2 * mu_max < mu_t:
            return True, t, s, state


@njit(inline="always", cache=True)
def _env_radiance(env, dx, dy, dz):
    env_const, env_map, has_map = env
    if has_map == 0:
        return env_const[0], env_const[1], env_const[2]
    h = env_map.shape[0]
    w = env_map.shape[1]
    cy = dy
    if cy > 1.0:
        cy = 1.0
    elif cy < -1.0:
        cy = -1.0
    theta = np.arccos(cy)
    phi = np.arctan2(dz, dx)
    u = (phi + np.pi) / (2.0 * np.pi) * w - 0.5
    v = theta / np.pi * h - 0.5
    iu = int(np.floor(u))
    iv = int(np.floor(v))
    fu = u - iu
    fv = v - iv
    iu0 = iu % w
    iu1 = (iu + 1) % w
    iv0 = min(max(iv, 0), h - 1)
    iv1 = min(max(iv + 1, 0), h - 1)
    r = (env_map[iv0, iu0, 0] * (1 - fu) + env_map[iv0, iu1, 0] * fu) * (1 - fv) + (
        env_map[iv1, iu0, 0] * (1 - fu) + env_map[iv1, iu1, 0] * fu
    ) * fv
    g = (env_map[iv0, iu0, 1] * (1 - fu) + env_map[iv0, iu1, 1] * fu) * (1 - fv) + (
        env_map[iv1, iu0, 1] * (1 - fu) + env_map[iv1, iu1, 1] * fu
    ) * fv
    b = (env_map[iv0, iu0, 2] * (1 - fu) + env_map[iv0, iu1, 2] * fu) * (1 - fv) + (
        env_map[iv1, iu0, 2] * (1 - fu) + env_map[iv1, iu1, 2] * fu
    ) * fv
    return np.float64(r), np.float64(g), np.float64(b)


@njit(inline="always", cache=True)
def _direct_light(vol, tf, lights, mu_max, yx, yy, yz, state):
    """One-sample next-event estimate at a volume point (phase 1/4pi applied).

    Picks a light uniformly, samples it, and uses delta tracking as a binary
    transmittance estimator along the shadow ray. Returns (r, g, b, state).
    """
    pl_pos, pl_int, al_corner, al_eu, al_ev, al_rad = lights
    n_pt = pl_pos.shape[0]
    n_ar = al_corner.shape[0]
    n = n_pt + n_ar
    if n == 0:
        return 0.0, 0.0, 0.0, state
    state, u = _next_u01(state)
    idx = int(u * n)
    if idx >= n:
        idx = n - 1
    if idx < n_pt:
        zx = pl_pos[idx, 0]
        zy = pl_pos[idx, 1]
        zz = pl_pos[idx, 2]
        lr = pl_int[idx, 0]
        lg = pl_int[idx, 1]
        lb = pl_int[idx, 2]
        geom_over_pdf = 1.0
    else:
        j = idx - n_pt
        state, u1 = _next_u01(state)
        state, u2 = _next_u01(state)
        zx = al_corner[j, 0] + u1 * al_eu[j, 0] + u2 * al_ev[j, 0]
        zy = al_corner[j, 1] + u1 * al_eu[j, 1] + u2 * al_ev[j, 1]
        zz = al_corner[j, 2] + u1 * al_eu[j, 2] + u2 * al_ev[j, 2]
        nx_ = al_eu[j, 1] * al_ev[j, 2] - al_eu[j, 2] * al_ev[j, 1]
        ny_ = al_eu[j, 2] * al_ev[j, 0] - al_eu[j, 0] * al_ev[j, 2]
        nz_ = al_eu[j, 0] * al_ev[j, 1] - al_eu[j, 1] * al_ev[j, 0]
        area = np.sqrt(nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
        lr = al_rad[j, 0]
        lg = al_rad[j, 1]
        lb = al_rad[j, 2]
        geom_over_pdf = area  # cos factor folded in below
        nlen = area
        nx_ /= nlen
        ny_ /= nlen
        nz_ /= nlen
    sx = zx - yx
    sy = zy - yy
    sz = zz - yz
    dist = np.sqrt(sx * sx + sy * sy + sz * sz)
    if dist < 1e-9:
        return 0.0, 0.0, 0.0, state
    sx /= dist
    sy /= dist
    sz /= dist
    if idx >= n_pt:
        cosl = nx_ * sx + ny_ * sy + nz_ * sz
        if cosl < 0.0:
            cosl = -cosl  # two-sided emitter
        geom_over_pdf *= cosl
    # shadow segment inside the volume bounds
    _, _, _, _, _, _, _, wx, wy, wz = vol
    hit_box, tb0, tb1 = _ray_box(yx, yy, yz, sx, sy, sz, wx, wy, wz)
    visible = True
    if hit_box and mu_max > 0.0:
        tmax = dist if dist < tb1 else tb1
        if tmax > 0.0:
            hit, _, _, state = _free_path(
                vol, tf, mu_max, yx, yy, yz, sx, sy, sz, tmax, state
            )
            visible = not hit
    if not visible:
        return 0.0, 0.0, 0.0, state
    scale = geom_over_pdf / (dist * dist) * (1.0 / (4.0 * np.pi)) * n
    return lr * scale, lg * scale, lb * scale, state


@njit(inline="always", cache=True)
def _trace(vol, tf, lights, env, mu_max, ox, oy, oz, dx, dy, dz,
           seed, pixel, sample, purpose_base, max_bounces,
           rec_thr, rec_pos, want_record):
    """One radiance sample along a camera ray.

    Walks real collisions via delta tracking; at each collision adds the
    absorbed-emission term and a next-event light estimate, multiplies the
    throughput by the albedo, and scatters isotropically. Escape picks up the
    background (environment) term. Returns the XYZ sample plus the first real
    collision (validity, distance from ray origin, position).
    """
    lr = 0.0
    lg = 0.0
    lb = 0.0
    thr_r = 1.0
    thr_g = 1.0
    thr_b = 1.0
    first_valid = False
    first_t = 0.0
    fx = 0.0
    fy = 0.0
    fz = 0.0
    n_vertices = 0
    _, _, _, _, _, _, _, wx, wy, wz = vol
    if want_record:
        rec_thr[0, 0] = 1.0
        rec_thr[0, 1] = 1.0
        rec_thr[0, 2] = 1.0
        rec_pos[0, 0] = ox
        rec_pos[0, 1] = oy
        rec_pos[0, 2] = oz

    hit_box, t_enter, t_exit = _ray_box(ox, oy, oz, dx, dy, dz, wx, wy, wz)
    if not hit_box or mu_max <= 0.0:
        er, eg, eb = _env_radiance(env, dx, dy, dz)
        return er, eg, eb, first_valid, first_t, fx, fy, fz, n_vertices

    # current segment origin (inside the box) and accumulated camera distance
    px = ox + t_enter * dx
    py = oy + t_enter * dy
    pz = oz + t_enter * dz
    cam_t = t_enter
    seg = t_exit - t_enter

    for b in range(max_bounces):
        st = _stream_init(seed, pixel, sample, purpose_base + P_PATH + _U64(b))
        hit, t, s, st = _free_path(vol, tf, mu_max, px, py, pz, dx, dy, dz, seg, st)
        if not hit:
            er, eg, eb = _env_radiance(env, dx, dy, dz)
            lr += thr_r * er
            lg += thr_g * eg
            lb += thr_b * eb
            break
        px += t * dx
        py += t * dy
        pz += t * dz
        cam_t += t
        if not first_valid:
            first_valid = True
            first_t = cam_t
            fx = px
            fy = py
            fz = pz
        mu_t, a0, a1, a2, e0, e1, e2 = _tf_eval(tf, _trilinear(vol, px, py, pz))
        # absorbed emission: (mu_a / mu_t) * emission
        lr += thr_r * (1.0 - a0) * e0
        lg += thr_g * (1.0 - a1) * e1
        lb += thr_b * (1.0 - a2) * e2
        thr_r *= a0
        thr_g *= a1
        thr_b *= a2
        n_vertices += 1
        if want_record and n_vertices < rec_thr.shape[0]:
            rec_thr[n_vertices, 0] = thr_r
            rec_thr[n_vertices, 1] = thr_g
            rec_thr[n_vertices, 2] = thr_b
            rec_pos[n_vertices, 0] = px
            rec_pos[n_vertices, 1] = py
            rec_pos[n_vertices, 2] = pz
        stn = _stream_init(seed, pixel, sample, purpose_base + P_NEE + _U64(b))
        nr, ng, nb, stn = _direct_light(vol, tf, lights, mu_max, px, py, pz, stn)
        lr += thr_r * nr
        lg += thr_g * ng
        lb += thr_b * nb
        if thr_r <= 0.0 and thr_g <= 0.0 and thr_b <= 0.0:
            break
        if b + 1 >= max_bounces:
            break
        # isotropic scatter: phase (1/4pi) cancels the uniform-sphere pdf
        st, u1 = _next_u01(st)
        st, u2 = _next_u01(st)
        ct = 1.0 - 2.0 * u1
        stq = 1.0 - ct * ct
        if stq < 0.0:
            stq = 0.0
        snt = np.sqrt(stq)
        phi = 2.0 * np.pi * u2
        dx = snt * np.cos(phi)
        dy = snt * np.sin(phi)
        dz = ct
        hb, _, t_exit2 = _ray_box(px, py, pz, dx, dy, dz, wx, wy, wz)
        if not hb:
            # numerically on the boundary, pointing straight out
            er, eg, eb = _env_radiance(env, dx, dy, dz)
            lr += thr_r * er
            lg += thr_g * eg
            lb += thr_b * eb
            break
        seg = t_exit2
    return lr, lg, lb, first_valid, first_t, fx, fy, fz, n_vertices


@njit(inline="always", cache=True)
def _camera_ray(cam, px, py, ju, jv):
    pos, right, up, fwd, tan_half, w, h = cam
    sx = px + ju
    sy = py + jv
    aspect = np.float64(w) / np.float64(h)
    u = (2.0 * sx / w - 1.0) * tan_half * aspect
    v = (1.0 - 2.0 * sy / h) * tan_half
    dx = fwd[0] + u * right[0] + v * up[0]
    dy = fwd[1] + u * right[1] + v * up[1]
    dz = fwd[2] + u * right[2] + v * up[2]
    inv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
    return pos[0], pos[1], pos[2], dx * inv, dy * inv, dz * inv


@njit(parallel=True, cache=True)
def render_chunk(vol, tf, lights, env, mu_max, cam, frame_seed, s0, s1,
                 max_bounces, out_rad, out_wx, out_wy, first_t, first_pt,
                 first_valid, nonfinite_rows):
    """Trace samples [s0, s1) for every pixel; track nearest first collisions.

    Also precomputes each sample's separable reconstruction-filter weights
    toward the 3 neighboring pixel centers per axis (zero beyond the filter
    radius), consumed by gather_chunk.
    """
    pos, right, up, fwd, tan_half, w, h = cam
    inv2s2 = 1.0 / (2.0 * FILTER_SIGMA * FILTER_SIGMA)
    dummy_thr = np.empty((1, 3))
    dummy_pos = np.empty((1, 3))
    for py in prange(h):
        dthr = dummy_thr
        dpos = dummy_pos
        for px in range(w):
            pixel = _U64(py * w + px)
            for s in range(s0, s1):
                cst = _stream_init(frame_seed, pixel, _U64(s), P_CAMERA)
                cst, ju = _next_u01(cst)
                cst, jv = _next_u01(cst)
                ox, oy, oz, dx, dy, dz = _camera_ray(cam, px, py, ju, jv)
                lr, lg, lb, fv, ft, fx, fy, fz, _ = _trace(
                    vol, tf, lights, env, mu_max, ox, oy, oz, dx, dy, dz,
                    frame_seed, pixel, _U64(s), _U64(0), max_bounces,
                    dthr, dpos, False,
                )
                if not (np.isfinite(lr) and np.isfinite(lg) and np.isfinite(lb)):
                    nonfinite_rows[py] += 1
                    lr, lg, lb, fv, ft, fx, fy, fz, _ = _trace(
                        vol, tf, lights, env, mu_max, ox, oy, oz, dx, dy, dz,
                        frame_seed, pixel, _U64(s), P_RESAMPLE, max_bounces,
                        dthr, dpos, False,
                    )
                    if not (np.isfinite(lr) and np.isfinite(lg) and np.isfinite(lb)):
                        lr = 0.0
                        lg = 0.0
                        lb = 0.0
                        fv = False
                if lr < 0.0:
                    lr = 0.0
                if lg < 0.0:
                    lg = 0.0
                if lb < 0.0:
                    lb = 0.0
                k = s - s0
                out_rad[py, px, k, 0] = lr
                out_rad[py, px, k, 1] = lg
                out_rad[py, px, k, 2] = lb
                for o in range(3):
                    ddx = ju - 0.5 - (o - 1.0)  # offset toward pixel px + (o-1)
                    ddy = jv - 0.5 - (o - 1.0)
                    if -FILTER_RADIUS < ddx < FILTER_RADIUS:
                        out_wx[py, px, k, o] = np.exp(-(ddx * ddx) * inv2s2)
                    else:
                        out_wx[py, px, k, o] = 0.0
                    if -FILTER_RADIUS < ddy < FILTER_RADIUS:
                        out_wy[py, px, k, o] = np.exp(-(ddy * ddy) * inv2s2)
                    else:
                        out_wy[py, px, k, o] = 0.0
                if fv and (first_valid[py, px] == 0 or ft < first_t[py, px]):
                    first_valid[py, px] = 1
                    first_t[py, px] = ft
                    first_pt[py, px, 0] = fx
                    first_pt[py, px, 1] = fy
                    first_pt[py, px, 2] = fz


@njit(parallel=True, cache=True)
def gather_chunk(s0, s1, w, h, out_rad, out_wx, out_wy, accum, wsum):
    """Accumulate chunk samples into per-pixel Gaussian filter sums.

    A sample at pixel (ny, nx) reaches destination (py, px) with weight
    wx[toward px] * wy[toward py]; the per-axis factors were precomputed by
    render_chunk. Loop order is fixed, so sums are reproducible.
    """
    n = s1 - s0
    for py in prange(h):
        for px in range(w):
            ar = 0.0
            ag = 0.0
            ab = 0.0
            aw = 0.0
            for ny in range(py - FILTER_RADIUS, py + FILTER_RADIUS + 1):
                if ny < 0 or ny >= h:
                    continue
                oy = py - ny + 1
                for nx in range(px - FILTER_RADIUS, px + FILTER_RADIUS + 1):
                    if nx < 0 or nx >= w:
                        continue
                    ox = px - nx + 1
                    for k in range(n):
                        wgt = np.float64(out_wx[ny, nx, k, ox]) * np.float64(
                            out_wy[ny, nx, k, oy])
                        if wgt > 0.0:
                            ar += wgt * out_rad[ny, nx, k, 0]
                            ag += wgt * out_rad[ny, nx, k, 1]
                            ab += wgt * out_rad[ny, nx, k, 2]
                            aw += wgt
            accum[py, px, 0] += ar
            accum[py, px, 1] += ag
            accum[py, px, 2] += ab
            wsum[py, px] += aw


@njit(cache=True)
def free_path_batch(vol, tf, mu_max, ox, oy, oz, dx, dy, dz, tlimit, seed, n):
    """n independent free-path draws along one segment (for statistics tests)."""
    dist = np.empty(n)
    hit = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        st = _stream_init(_U64(seed), _U64(0), _U64(i), P_PATH)
        h, t, _, st = _free_path(vol, tf, mu_max, ox, oy, oz, dx, dy, dz, tlimit, st)
        dist[i] = t
        hit[i] = 1 if h else 0
    return dist, hit


@njit(cache=True)
def direct_light_batch(vol, tf, lights, mu_max, yx, yy, yz, seed, n):
    """n independent next-event estimates at a point (for statistics tests)."""
    out = np.empty((n, 3))
    for i in range(n):
        st = _stream_init(_U64(seed), _U64(0), _U64(i), P_NEE)
        r, g, b, st = _direct_light(vol, tf, lights, mu_max, yx, yy, yz, st)
        out[i, 0] = r
        out[i, 1] = g
        out[i, 2] = b
    return out


@njit(cache=True)
def trace_batch(vol, tf, lights, env, mu_max, ox, oy, oz, dx, dy, dz,
                seed, max_bounces, n):
    """n independent radiance samples along one ray (for statistics tests)."""
    out = np.empty((n, 3))
    dummy_thr = np.empty((1, 3))
    dummy_pos = np.empty((1, 3))
    for i in range(n):
        lr, lg, lb, fv, ft, fx, fy, fz, _ = _trace(
            vol, tf, lights, env, mu_max, ox, oy, oz, dx, dy, dz,
            _U64(seed), _U64(0), _U64(i), _U64(0), max_bounces,
            dummy_thr, dummy_pos, False,
        )
        out[i, 0] = lr
        out[i, 1] = lg
        out[i, 2] = lb
    return out


@njit(cache=True)
def trace_single(vol, tf, lights, env, mu_max, ox, oy, oz, dx, dy, dz,
                 seed, pixel, sample, max_bounces):
    """One recorded radiance sample; returns path vertices and throughputs."""
    rec_thr = np.zeros((max_bounces + 1, 3))
    rec_pos = np.zeros((max_bounces + 1, 3))
    lr, lg, lb, fv, ft, fx, fy, fz, nv = _trace(
        vol, tf, lights, env, mu_max, ox, oy, oz, dx, dy, dz,
        _U64(seed), _U64(pixel), _U64(sample), _U64(0), max_bounces,
        rec_thr, rec_pos, True,
    )
    return lr, lg, lb, fv, ft, fx, fy, fz, nv, rec_thr, rec_pos


@njit(cache=True)
def sample_free_path_one(vol, tf, mu_max, ox, oy, oz, dx, dy, dz, tlimit, state):
    return _free_path(vol, tf, mu_max, ox, oy, oz, dx, dy, dz, tlimit, _U64(state))


@njit(cache=True)
def direct_light_one(vol, tf, lights, mu_max, yx, yy, yz, state):
    return _direct_light(vol, tf, lights, mu_max, yx, yy, yz, _U64(state))


# ---------------------------------------------------------------------------
# denoiser inner loops


@njit(parallel=True, cache=True)
def reproject_kernel(pz, pbeta, pP, pvalid, mv, mvalid, frame, force_reset, p0,
                     nz, nbeta, nP, nvalid, fresh, bad_rows):
    """Gather (z, beta, P) from the previous state along per-pixel velocities.

    Out-of-bounds or invalid motion resets the pixel to the identity-on-
    feature model seeded from the current frame; non-finite fetched state is
    reset too and counted in bad_rows.
    """
    h, w = mvalid.shape
    for y in prange(h):
        for x in range(w):
            ok = False
            qx = 0
            qy = 0
            if not force_reset and mvalid[y, x]:
                fqx = np.rint(x + np.float64(mv[y, x, 0]))
                fqy = np.rint(y + np.float64(mv[y, x, 1]))
                if 0.0 <= fqx <= w - 1 and 0.0 <= fqy <= h - 1:
                    qx = int(fqx)
                    qy = int(fqy)
                    ok = True
            if ok:
                acc = 0.0
                for c in range(3):
                    v = pz[qy, qx, c]
                    nz[y, x, c] = v
                    acc += v
                for c in range(3):
                    for j in range(4):
                        v = pbeta[qy, qx, c, j]
                        nbeta[y, x, c, j] = v
                        acc += v
                for i in range(4):
                    for j in range(4):
                        v = pP[qy, qx, i, j]
                        nP[y, x, i, j] = v
                        acc += v
                nvalid[y, x] = pvalid[qy, qx]
                if not np.isfinite(acc):
                    ok = False
                    bad_rows[y] += 1
            if not ok:
                for c in range(3):
                    nz[y, x, c] = np.float64(frame[y, x, c])
                    for j in range(4):
                        nbeta[y, x, c, j] = 0.0
                    nbeta[y, x, c, 1 + c] = 1.0
                for i in range(4):
                    for j in range(4):
                        nP[y, x, i, j] = p0 if i == j else 0.0
                nvalid[y, x] = False
                fresh[y, x] = True
            else:
                fresh[y, x] = False


@njit(parallel=True, cache=True)
def feature_clamp_kernel(z_hist, frame, fresh, alpha, psi, z_out):
    """Clamp reprojected history to the current 3x3 box, then blend.

    psi gets the clamped history (the regression predictor); z_out gets
    alpha * psi + (1 - alpha) * current. Fresh pixels copy the current frame
    into both.
    """
    h, w = fresh.shape
    for y in prange(h):
        for x in range(w):
            if fresh[y, x]:
                for c in range(3):
                    v = np.float64(frame[y, x, c])
                    psi[y, x, c] = v
                    z_out[y, x, c] = v
                continue
            y0 = y - 1 if y > 0 else 0
            y1 = y + 1 if y + 1 < h else h - 1
            x0 = x - 1 if x > 0 else 0
            x1 = x + 1 if x + 1 < w else w - 1
            for c in range(3):
                mn = np.float64(frame[y0, x0, c])
                mx = mn
                for ny in range(y0, y1 + 1):
                    for nx in range(x0, x1 + 1):
                        v = np.float64(frame[ny, nx, c])
                        if v < mn:
                            mn = v
                        elif v > mx:
                            mx = v
                v = z_hist[y, x, c]
                if v < mn:
                    v = mn
                elif v > mx:
                    v = mx
                psi[y, x, c] = v
                z_out[y, x, c] = alpha * v + (1.0 - alpha) * np.float64(frame[y, x, c])


@njit(parallel=True, cache=True)
def wrls_update_kernel(P, beta, psi, frame, weights, lam, pred, bad_rows):
    """Weighted RLS step for every pixel, shared P across the 3 channels.

    pred receives the a-priori prediction p . beta(t-1) whose residual
    drives the update; P and beta are then updated in place. Non-finite
    results mark bad_rows for reset.
    """
    h, w = weights.shape
    for y in prange(h):
        p = np.empty(4)
        pp = np.empty(4)
        g = np.empty(4)
        for x in range(w):
            p[0] = 1.0
            p[1] = psi[y, x, 0]
            p[2] = psi[y, x, 1]
            p[3] = psi[y, x, 2]
            # Pp and p.Pp
            quad = 0.0
            for i in range(4):
                acc = 0.0
                for j in range(4):
                    acc += P[y, x, i, j] * p[j]
                pp[i] = acc
                quad += p[i] * acc
            wj = weights[y, x]
            denom = lam / wj + quad
            for i in range(4):
                g[i] = pp[i] / denom
            ok = True
            for c in range(3):
                v = (
                    beta[y, x, c, 0] * p[0]
                    + beta[y, x, c, 1] * p[1]
                    + beta[y, x, c, 2] * p[2]
                    + beta[y, x, c, 3] * p[3]
                )
                pred[y, x, c] = v
                if not np.isfinite(v):
                    ok = False
                e = frame[y, x, c] - v
                for j in range(4):
                    beta[y, x, c, j] += g[j] * e
            # P <- (P - g (p.P)) / lam, then re-symmetrize. Carried-state
            # corruption beyond the prediction is caught by the finite audit
            # in the next frame's reprojection gather.
            inv_lam = 1.0 / lam
            for i in range(4):
                for j in range(4):
                    P[y, x, i, j] = (P[y, x, i, j] - g[i] * pp[j]) * inv_lam
            for i in range(4):
                for j in range(i + 1, 4):
                    m = 0.5 * (P[y, x, i, j] + P[y, x, j, i])
                    P[y, x, i, j] = m
                    P[y, x, j, i] = m
            if not ok:
                bad_rows[y] += 1
                # reset to initialization; caller rebuilds z from the frame
                for i in range(4):
                    for j in range(4):
                        P[y, x, i, j] = 0.0
                for c in range(3):
                    for j in range(4):
                        beta[y, x, c, j] = 0.0
                P[y, x, 0, 0] = -1.0  # reset marker


@njit(parallel=True, cache=True)
def spatial_blend_kernel(psi, beta, sigma_s, sigma_r, eps, out):
    """5x5 bilateral blend of cross-predictions p_i . beta_j."""
    h, w = psi.shape[0], psi.shape[1]
    inv2ss = 1.0 / (2.0 * sigma_s * sigma_s)
    inv2sr = 1.0 / (2.0 * sigma_r * sigma_r)
    for y in prange(h):
        for x in range(w):
            p1 = psi[y, x, 0]
            p2 = psi[y, x, 1]
            p3 = psi[y, x, 2]
            znorm = np.sqrt(p1 * p1 + p2 * p2 + p3 * p3) + eps
            inv_zn2 = 1.0 / (znorm * znorm)
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            aw = 0.0
            for dy in range(-2, 3):
                ny = y + dy
                if ny < 0 or ny >= h:
                    continue
                for dx in range(-2, 3):
                    nx = x + dx
                    if nx < 0 or nx >= w:
                        continue
                    q1 = psi[ny, nx, 0]
                    q2 = psi[ny, nx, 1]
                    q3 = psi[ny, nx, 2]
                    zd = (
                        (p1 - q1) * (p1 - q1)
                        + (p2 - q2) * (p2 - q2)
                        + (p3 - q3) * (p3 - q3)
                    )
                    arg = (np.float64(dx * dx + dy * dy) * inv2ss
                           + zd * inv2sr * inv_zn2)
                    if arg > 34.0:  # weight below ~2e-15: no contribution
                        continue
                    b = np.exp(-arg)
                    pr = (
                        beta[ny, nx, 0, 0]
                        + beta[ny, nx, 0, 1] * p1
                        + beta[ny, nx, 0, 2] * p2
                        + beta[ny, nx, 0, 3] * p3
                    )
                    pg = (
                        beta[ny, nx, 1, 0]
                        + beta[ny, nx, 1, 1] * p1
                        + beta[ny, nx, 1, 2] * p2
                        + beta[ny, nx, 1, 3] * p3
                    )
                    pb = (
                        beta[ny, nx, 2, 0]
                        + beta[ny, nx, 2, 1] * p1
                        + beta[ny, nx, 2, 2] * p2
                        + beta[ny, nx, 2, 3] * p3
                    )
                    a0 += b * pr
                    a1 += b * pg
                    a2 += b * pb
                    aw += b
            out[y, x, 0] = a0 / aw
            out[y, x, 1] = a1 / aw
            out[y, x, 2] = a2 / aw
