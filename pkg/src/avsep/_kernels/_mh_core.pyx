# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Metropolis-Hastings chain runner.

Same contract as _mh_pure.run_chains: pre-drawn randomness in, in-place chain
state, retained samples out. Decoder weights arrive as the per-layer lists the
model holds; they are flattened into contiguous buffers once on entry and the
sweep loop is pure C after that.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()

cdef double LOGVAR_MAX = 60.0
cdef double LOG_PI = 1.1447298858494002
cdef double LOG_2PI = 1.8378770664093453


def _flatten(weights, biases):
    """Pack a layer list into (flat W, W offsets, flat b, b offsets, widths)."""
    widths = [weights[0].shape[0]] + [w.shape[1] for w in weights]
    w_off = np.zeros(len(weights) + 1, dtype=np.int64)
    b_off = np.zeros(len(biases) + 1, dtype=np.int64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        w_off[i + 1] = w_off[i] + w.size
        b_off[i + 1] = b_off[i] + b.size
    w_flat = np.concatenate([np.ascontiguousarray(w).ravel() for w in weights])
    b_flat = np.concatenate([np.ascontiguousarray(b).ravel() for b in biases])
    return (w_flat, w_off, b_flat, b_off,
            np.asarray(widths, dtype=np.int64))


cdef void _forward(const double* w_flat, const cnp.int64_t* w_off,
                   const double* b_flat, const cnp.int64_t* b_off,
                   const cnp.int64_t* widths, int n_layers, int act_code,
                   const double* x_in, double* buf_a, double* buf_b,
                   double* out, double var_floor) noexcept nogil:
    """Dense forward with a logvar head: hidden tanh/relu, then exp + floor."""
    cdef int layer, i, j, d_in, d_out
    cdef const double* src = x_in
    cdef double* dst
    cdef const double* w
    cdef double acc, y
    for layer in range(n_layers):
        d_in = <int> widths[layer]
        d_out = <int> widths[layer + 1]
        dst = out if layer == n_layers - 1 else (buf_a if layer % 2 == 0 else buf_b)
        w = w_flat + w_off[layer]
        for j in range(d_out):
            dst[j] = b_flat[b_off[layer] + j]
        for i in range(d_in):
            acc = src[i]
            if acc != 0.0:
                for j in range(d_out):
                    dst[j] += acc * w[i * d_out + j]
        if layer == n_layers - 1:
            for j in range(d_out):
                y = dst[j]
                if y > LOGVAR_MAX:
                    y = LOGVAR_MAX
                y = exp(y)
                if y < var_floor:
                    y = var_floor
                dst[j] = y
        else:
            if act_code == 0:
                for j in range(d_out):
                    dst[j] = tanh(dst[j])
            else:
                for j in range(d_out):
                    if dst[j] < 0.0:
                        dst[j] = 0.0
        src = dst


def run_chains(list dec1_w, list dec1_b, list dec2_w, list dec2_b,
               int act_code,
               double[:, ::1] x2, double[:, ::1] wh,
               double[::1] g1, double[::1] g2,
               double[:, ::1] pm1, double[:, ::1] pv1,
               double[:, ::1] pm2, double[:, ::1] pv2,
               double[:, ::1] vf1, double[:, ::1] vf2,
               double[:, ::1] z1, double[:, ::1] z2,
               double[:, ::1] sig1, double[:, ::1] sig2,
               double[:, :, ::1] xi1, double[:, :, ::1] xi2,
               double[:, ::1] logu,
               double step, double var_floor, int burn_in, int thin,
               double[:, :, ::1] out_z1, double[:, :, ::1] out_z2,
               double[:, :, ::1] out_s1, double[:, :, ::1] out_s2):
    """See avsep._kernels._mh_pure.run_chains; identical in and out."""
    cdef int n_sweeps = xi1.shape[0]
    cdef int n = z1.shape[0]
    cdef int lat = z1.shape[1]
    cdef int n_bins = sig1.shape[1]
    cdef int feat = vf1.shape[1]
    cdef int n_retain = out_z1.shape[0]

    w1_flat, w1_off, b1_flat, b1_off, widths1 = _flatten(dec1_w, dec1_b)
    w2_flat, w2_off, b2_flat, b2_off, widths2 = _flatten(dec2_w, dec2_b)
    cdef double[::1] w1f = w1_flat, b1f = b1_flat
    cdef double[::1] w2f = w2_flat, b2f = b2_flat
    cdef cnp.int64_t[::1] w1o = w1_off, b1o = b1_off, wd1 = widths1
    cdef cnp.int64_t[::1] w2o = w2_off, b2o = b2_off, wd2 = widths2
    cdef int n_layers1 = len(dec1_w)
    cdef int n_layers2 = len(dec2_w)

    cdef int max_width = max(int(widths1.max()), int(widths2.max()))
    scratch = np.zeros((6, max(max_width, n_bins, lat + feat)))
    cdef double[:, ::1] sc = scratch
    cdef double* buf_a = &sc[0, 0]
    cdef double* buf_b = &sc[1, 0]
    cdef double* in1 = &sc[2, 0]
    cdef double* in2 = &sc[3, 0]
    cdef double* s1p = &sc[4, 0]
    cdef double* s2p = &sc[5, 0]

    cur_arr = np.zeros(n)
    cdef double[::1] cur = cur_arr
    cdef int s, i, l, f, r = 0
    cdef long n_accepted = 0
    cdef double ll, lp, vx, d, cand

    with nogil:
        # initial log target per frame from the cached decoder variances
        for i in range(n):
            ll = 0.0
            for f in range(n_bins):
                vx = g1[i] * sig1[i, f] + g2[i] * sig2[i, f] + wh[i, f]
                if vx < var_floor:
                    vx = var_floor
                ll += -log(vx) - x2[i, f] / vx
            ll -= n_bins * LOG_PI
            lp = 0.0
            for l in range(lat):
                d = z1[i, l] - pm1[i, l]
                lp += -0.5 * (log(pv1[i, l]) + d * d / pv1[i, l])
                d = z2[i, l] - pm2[i, l]
                lp += -0.5 * (log(pv2[i, l]) + d * d / pv2[i, l])
            lp -= lat * LOG_2PI
            cur[i] = ll + lp

        for s in range(n_sweeps):
            for i in range(n):
                for l in range(lat):
                    in1[l] = z1[i, l] + step * xi1[s, i, l]
                    in2[l] = z2[i, l] + step * xi2[s, i, l]
                for l in range(feat):
                    in1[lat + l] = vf1[i, l]
                    in2[lat + l] = vf2[i, l]
                _forward(&w1f[0], &w1o[0], &b1f[0], &b1o[0], &wd1[0],
                         n_layers1, act_code, in1, buf_a, buf_b, s1p, var_floor)
                _forward(&w2f[0], &w2o[0], &b2f[0], &b2o[0], &wd2[0],
                         n_layers2, act_code, in2, buf_a, buf_b, s2p, var_floor)
                ll = 0.0
                for f in range(n_bins):
                    vx = g1[i] * s1p[f] + g2[i] * s2p[f] + wh[i, f]
                    if vx < var_floor:
                        vx = var_floor
                    ll += -log(vx) - x2[i, f] / vx
                ll -= n_bins * LOG_PI
                lp = 0.0
                for l in range(lat):
                    d = in1[l] - pm1[i, l]
                    lp += -0.5 * (log(pv1[i, l]) + d * d / pv1[i, l])
                    d = in2[l] - pm2[i, l]
                    lp += -0.5 * (log(pv2[i, l]) + d * d / pv2[i, l])
                lp -= lat * LOG_2PI
                cand = ll + lp
                if logu[s, i] < cand - cur[i]:
                    for l in range(lat):
                        z1[i, l] = in1[l]
                        z2[i, l] = in2[l]
                    for f in range(n_bins):
                        sig1[i, f] = s1p[f]
                        sig2[i, f] = s2p[f]
                    cur[i] = cand
                    n_accepted += 1
            if s >= burn_in and r < n_retain and (s - burn_in + 1) % thin == 0:
                for i in range(n):
                    for l in range(lat):
                        out_z1[r, i, l] = z1[i, l]
                        out_z2[r, i, l] = z2[i, l]
                    for f in range(n_bins):
                        out_s1[r, i, f] = sig1[i, f]
                        out_s2[r, i, f] = sig2[i, f]
                r += 1
    return int(n_accepted), r
