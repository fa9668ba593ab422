"""Numpy implementation of the Metropolis-Hastings chain runner.

The compiled twin in _mh_core.pyx implements the same contract; both consume
pre-drawn randomness so results depend only on the arguments. All 2-D state is
frame-major: x2, wh, sig1, sig2 are (n_frames, n_bins); z1, z2 are
(n_frames, latent); proposals xi are (sweeps, n_frames, latent) and the
log-uniform acceptance draws logu are (sweeps, n_frames).
"""

import numpy as np

_LOGVAR_MAX = 60.0
_LOG_PI = float(np.log(np.pi))
_LOG_2PI = float(np.log(2.0 * np.pi))


def _decode(weights, biases, act_code, x, var_floor):
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = a @ w + b
        a = np.tanh(h) if act_code == 0 else np.maximum(h, 0.0)
    y = a @ weights[-1] + biases[-1]
    return np.maximum(np.exp(np.minimum(y, _LOGVAR_MAX)), var_floor)


def _target(x2, wh, g1, g2, s1, s2, z1, z2, pm1, pv1, pm2, pv2, var_floor):
    vx = np.maximum(g1[:, None] * s1 + g2[:, None] * s2 + wh, var_floor)
    ll = np.sum(-np.log(vx) - x2 / vx, axis=1) - x2.shape[1] * _LOG_PI
    lp1 = -0.5 * np.sum(np.log(pv1) + (z1 - pm1) ** 2 / pv1, axis=1) \
        - 0.5 * z1.shape[1] * _LOG_2PI
    lp2 = -0.5 * np.sum(np.log(pv2) + (z2 - pm2) ** 2 / pv2, axis=1) \
        - 0.5 * z2.shape[1] * _LOG_2PI
    return ll + lp1 + lp2


def run_chains(dec1_w, dec1_b, dec2_w, dec2_b, act_code,
               x2, wh, g1, g2, pm1, pv1, pm2, pv2, vf1, vf2,
               z1, z2, sig1, sig2, xi1, xi2, logu,
               step, var_floor, burn_in, thin,
               out_z1, out_z2, out_sig1, out_sig2):
    """Run len(xi1) joint random-walk sweeps over all frames in place.

    Each sweep proposes z' = z + step * xi for both speakers of every frame,
    decodes both variance frames, and accepts frame-wise with probability
    min(1, target'/target). After burn_in sweeps every thin-th sweep's state
    is copied into the out_* buffers until they are full. Returns
    (n_accepted, n_retained); n_accepted counts all sweeps * frames decisions.
    """
    n_sweeps = xi1.shape[0]
    n_retain = out_z1.shape[0]
    cur = _target(x2, wh, g1, g2, sig1, sig2, z1, z2,
                  pm1, pv1, pm2, pv2, var_floor)
    n_accepted = 0
    r = 0
    for s in range(n_sweeps):
        z1p = z1 + step * xi1[s]
        z2p = z2 + step * xi2[s]
        s1p = _decode(dec1_w, dec1_b, act_code,
                      np.concatenate([z1p, vf1], axis=1), var_floor)
        s2p = _decode(dec2_w, dec2_b, act_code,
                      np.concatenate([z2p, vf2], axis=1), var_floor)
        cand = _target(x2, wh, g1, g2, s1p, s2p, z1p, z2p,
                       pm1, pv1, pm2, pv2, var_floor)
        accept = logu[s] < (cand - cur)
        z1[accept] = z1p[accept]
        z2[accept] = z2p[accept]
        sig1[accept] = s1p[accept]
        sig2[accept] = s2p[accept]
        cur[accept] = cand[accept]
        n_accepted += int(accept.sum())
        if s >= burn_in and r < n_retain and (s - burn_in + 1) % thin == 0:
            out_z1[r] = z1
            out_z2[r] = z2
            out_sig1[r] = sig1
            out_sig2[r] = sig2
            r += 1
    return n_accepted, r
