"""Time the sampler kernel on both backends and print the comparison.

The script re-invokes itself once per backend (the backend is chosen at
import time via AVSEP_BACKEND), so each measurement runs in a fresh process.

    python3 benchmarks/bench_mh.py [--frames 250] [--sweeps 200] [--repeat 3]
"""

import argparse
import os
import subprocess
import sys
import time


def run_workload(frames, sweeps, repeat):
    import numpy as np

    from avsep._kernels import active_backend
    from avsep.dsp import StftConfig
    from avsep.mcem import McemConfig, init_state, mh_sweep
    from avsep.seeding import substream
    from avsep.synthdata import MixSpec, default_speakers, mix, synth_utterance
    from avsep.dsp import stft
    from avsep.vae import new_model

    cfg = StftConfig(fft_size=256, hop=128, sample_rate=16000)
    duration = frames * cfg.hop / cfg.sample_rate
    a, b = default_speakers()
    w1, e1 = synth_utterance(a, duration, cfg, substream(0, "bench"))
    w2, e2 = synth_utterance(b, duration, cfg, substream(1, "bench"))
    mixture, _, _ = mix(w1, w2, MixSpec(noise_type="white", noise_snr_db=0.0),
                        substream(2, "bench"))
    x = stft(mixture, cfg)
    model = new_model(cfg.n_bins, latent_dim=8, feat_dim=8, raw_dim=16,
                      hidden=64, seed=0)
    mcfg = McemConfig(em_iters=1, mh_iters_per_estep=sweeps, burn_in=0,
                      warm_mh_iters=sweeps, warm_burn_in=0,
                      n_samples=min(10, sweeps), epsilon=0.03, k_noise=8,
                      seed=0)
    state = init_state(x, e1, e2, model, mcfg, substream(3, "bench"))
    mh_sweep(state, model, x, mcfg, substream(4, "bench"), sweeps=2)  # warm up
    best = float("inf")
    for rep in range(repeat):
        t0 = time.perf_counter()
        mh_sweep(state, model, x, mcfg, substream(5 + rep, "bench"),
                 sweeps=sweeps)
        best = min(best, time.perf_counter() - t0)
    n_frames = x.shape[1]
    rate = sweeps * n_frames / best
    print("%s %d %d %.6f %.0f"
          % (active_backend(), n_frames, sweeps, best, rate))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--frames", type=int, default=250,
                    help="approximate chain count (mixture frames)")
    ap.add_argument("--sweeps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--backend", choices=("pure", "compiled"), default=None,
                    help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.backend is not None:
        run_workload(args.frames, args.sweeps, args.repeat)
        return

    results = {}
    for backend in ("pure", "compiled"):
        env = dict(os.environ, AVSEP_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__),
             "--frames", str(args.frames), "--sweeps", str(args.sweeps),
             "--repeat", str(args.repeat), "--backend", backend],
            env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            print("%s backend unavailable:\n%s" % (backend, proc.stderr.strip()))
            continue
        name, frames, sweeps, secs, rate = proc.stdout.split()[-5:]
        results[name] = (int(frames), int(sweeps), float(secs), float(rate))

    print("%-9s %8s %8s %10s %16s" % ("backend", "frames", "sweeps",
                                      "best (s)", "frame-sweeps/s"))
    for name, (frames, sweeps, secs, rate) in results.items():
        print("%-9s %8d %8d %10.3f %16.0f" % (name, frames, sweeps, secs, rate))
    if "pure" in results and "compiled" in results:
        print("speedup: %.1fx" % (results["pure"][2] / results["compiled"][2]))


if __name__ == "__main__":
    main()
