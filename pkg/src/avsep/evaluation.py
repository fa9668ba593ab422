"""Separation quality scoring and the method-comparison harness.

Quality is scale-invariant SDR of an estimated waveform against a clean
reference. `benchmark` runs a set of separation methods over the test pairs
of a corpus under a grid of mixing conditions and collects per-case scores;
each method is a callable `(case, rng) -> (estimate1, estimate2)` built by
one of the factories below.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import StftConfig, Waveform, istft, power, stft
from .errors import DataError
from .estimator import separate
from .mcem import McemConfig
from .nmf import baseline_separate, fit_is_nmf
from .seeding import substream
from .synthdata import Corpus, MixSpec, mix

SDR_CAP_DB = 60.0


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Scale-invariant SDR in dB, clipped to +/-SDR_CAP_DB.

    The reference is rescaled by its projection coefficient so that any
    overall gain on the estimate cancels out.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape:
        raise DataError("estimate and reference lengths differ: %s vs %s"
                        % (estimate.shape, reference.shape))
    ref_energy = float(np.dot(reference, reference))
    if ref_energy == 0.0:
        raise DataError("reference signal is all zeros")
    alpha = float(np.dot(estimate, reference)) / ref_energy
    target = alpha * reference
    num = float(np.dot(target, target))
    err = target - estimate
    den = float(np.dot(err, err))
    if num == 0.0:
        return -SDR_CAP_DB
    if den == 0.0:
        return SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SDR_CAP_DB, SDR_CAP_DB))


def evaluate_pair(est1, est2, ref1, ref2):
    """Score a pair of estimates against references, resolving permutation.

    Returns (sdr1, sdr2, permuted): the per-reference scores under the
    assignment with the higher total, and whether that assignment swapped
    the estimates.
    """
    direct = (si_sdr(est1, ref1), si_sdr(est2, ref2))
    swapped = (si_sdr(est2, ref1), si_sdr(est1, ref2))
    if sum(swapped) > sum(direct):
        return swapped[0], swapped[1], True
    return direct[0], direct[1], False


@dataclass
class MixtureCase:
    """One evaluation instance: the mixture plus everything a method may use.

    Methods must not touch ref1/ref2 (the oracle is the deliberate
    exception); the conditioning embeddings and speaker ids are fair game.
    """

    mixture: Waveform
    ref1: Waveform
    ref2: Waveform
    emb1: np.ndarray
    emb2: np.ndarray
    speaker1: int
    speaker2: int
    mix_spec: MixSpec
    pair_index: int


@dataclass
class EvalReport:
    rows: list

    def aggregates(self):
        """Per-method mean SDR, mean improvement over the unprocessed
        mixture, and the fraction of cases where the permutation flipped."""
        by_method = {}
        for row in self.rows:
            by_method.setdefault(row["method"], []).append(row)
        out = {}
        for method, rows in by_method.items():
            sdr = np.mean([(r["sdr1"] + r["sdr2"]) / 2.0 for r in rows])
            imp = np.mean([r["improvement"] for r in rows])
            perm = np.mean([1.0 if r["permuted"] else 0.0 for r in rows])
            out[method] = {"mean_sdr": float(sdr),
                           "mean_improvement": float(imp),
                           "permuted_fraction": float(perm),
                           "n_cases": len(rows)}
        return out

    def to_csv(self, path) -> None:
        fields = ["method", "pair_index", "noise_type", "noise_snr_db",
                  "speaker_snr_db", "sdr1", "sdr2", "input_sdr1",
                  "input_sdr2", "improvement", "permuted"]
        with Path(path).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                rec = dict(row)
                for key in ("sdr1", "sdr2", "input_sdr1", "input_sdr2",
                            "improvement", "speaker_snr_db"):
                    rec[key] = "%.9g" % rec[key]
                if rec["noise_snr_db"] is None:
                    rec["noise_snr_db"] = ""
                else:
                    rec["noise_snr_db"] = "%.9g" % rec["noise_snr_db"]
                rec["permuted"] = int(rec["permuted"])
                writer.writerow(rec)


def benchmark(methods: dict, corpus: Corpus, mix_specs, seed) -> EvalReport:
    """Run every method on every (mix condition, test pair) combination.

    Mixtures and per-case method streams are seeded independently of the
    set of methods requested, so adding a method never changes the scores
    of the others.
    """
    rows = []
    for spec_idx, mspec in enumerate(mix_specs):
        for pair_idx, (ua, ub) in enumerate(corpus.test_pairs):
            mixture, r1, r2 = mix(ua.wave, ub.wave, mspec,
                                  substream(seed, "evalmix", spec_idx, pair_idx))
            case = MixtureCase(mixture=mixture, ref1=r1, ref2=r2,
                               emb1=ua.embeddings, emb2=ub.embeddings,
                               speaker1=ua.speaker, speaker2=ub.speaker,
                               mix_spec=mspec, pair_index=pair_idx)
            in1 = si_sdr(mixture.samples, r1.samples)
            in2 = si_sdr(mixture.samples, r2.samples)
            for name, method in methods.items():
                rng = substream(seed, "method", name, spec_idx, pair_idx)
                est1, est2 = method(case, rng)
                sdr1, sdr2, permuted = evaluate_pair(
                    est1.samples, est2.samples, r1.samples, r2.samples)
                rows.append({
                    "method": name, "pair_index": pair_idx,
                    "noise_type": mspec.noise_type,
                    "noise_snr_db": mspec.noise_snr_db,
                    "speaker_snr_db": mspec.speaker_snr_db,
                    "sdr1": sdr1, "sdr2": sdr2,
                    "input_sdr1": in1, "input_sdr2": in2,
                    "improvement": (sdr1 + sdr2) / 2.0 - (in1 + in2) / 2.0,
                    "permuted": permuted,
                })
    return EvalReport(rows=rows)


def identity_method():
    """Returns the mixture for both speakers; improvement is zero by
    definition and the permutation flag is arbitrary."""

    def run(case: MixtureCase, rng):
        return case.mixture, case.mixture

    return run


def oracle_wiener_method(cfg: StftConfig):
    """Masks built from the true source spectrograms; the performance
    ceiling for any mask-based method."""

    def run(case: MixtureCase, rng):
        x = stft(case.mixture, cfg)
        p1 = power(stft(case.ref1, cfg))
        p2 = power(stft(case.ref2, cfg))
        p_noise = power(x - stft(case.ref1, cfg) - stft(case.ref2, cfg))
        denom = np.maximum(p1 + p2 + p_noise, 1e-300)
        n = len(case.mixture)
        est1 = istft((p1 / denom) * x, cfg, n)
        est2 = istft((p2 / denom) * x, cfg, n)
        return est1, est2

    return run


def nmf_baseline_method(corpus: Corpus, rank=8, n_iters=60, k_noise=4,
                        fit_seed=0):
    """Supervised spectral-dictionary baseline: one dictionary per speaker
    fit on that speaker's clean training frames, activations and a noise
    dictionary learned on each test mixture."""
    cfg = corpus.stft_cfg
    dictionaries = {}
    for speaker_id, triples in sorted(corpus.speaker_triples.items()):
        p = np.ascontiguousarray(triples.clean_power.T)  # (bins, frames)
        model = fit_is_nmf(p, rank, n_iters,
                           substream(fit_seed, "nmfdict", speaker_id))
        dictionaries[speaker_id] = model.w

    def run(case: MixtureCase, rng):
        x = stft(case.mixture, cfg)
        s1, s2 = baseline_separate(x, dictionaries[case.speaker1],
                                   dictionaries[case.speaker2], k_noise,
                                   n_iters, rng)
        n = len(case.mixture)
        return istft(s1, cfg, n), istft(s2, cfg, n)

    return run


def mcem_method(model_for, stft_cfg: StftConfig, mcem_cfg: McemConfig):
    """Audio-visual separation; `model_for` is either one shared generative
    model used for both speakers, or a dict keyed by speaker id holding the
    speaker-adapted models."""

    def run(case: MixtureCase, rng):
        if isinstance(model_for, dict):
            model = (model_for[case.speaker1], model_for[case.speaker2])
        else:
            model = model_for
        return separate(case.mixture, case.emb1, case.emb2, model,
                        stft_cfg, mcem_cfg, rng=rng)

    return run
