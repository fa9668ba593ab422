"""Command line entry points.

Subcommands: gen (synthesize a corpus), train (fit the shared generative
model), finetune (speaker-adapted decoders), separate (split one mixture),
bench (score methods over a corpus).

Every option can also come from a JSON config file given with --config;
values on the command line win over the file. A seed is mandatory for every
command, from either source. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

from .containers import MAGIC_EMBEDDING, read_arrays
from .dsp import StftConfig, read_wav, write_wav
from .errors import ConfigError, DataError, NumericalError
from .estimator import separate as run_separation
from .evaluation import (benchmark, identity_method, mcem_method,
                         nmf_baseline_method, oracle_wiener_method)
from .mcem import McemConfig, save_trace
from .synthdata import RAW_DIM, build_corpus, load_corpus, save_corpus, MixSpec
from .vae import (TrainConfig, finetune_decoder, load_checkpoint, new_model,
                  save_checkpoint, train)

_MCEM_FLAGS = (
    ("--em-iters", "em_iters", int, "EM iterations"),
    ("--mh-iters", "mh_iters_per_estep", int,
     "sampler sweeps per E-step after the first iteration"),
    ("--burn-in", "burn_in", int, "discarded sweeps per E-step"),
    ("--warm-mh-iters", "warm_mh_iters", int,
     "sampler sweeps on the first EM iteration"),
    ("--warm-burn-in", "warm_burn_in", int,
     "discarded sweeps on the first EM iteration"),
    ("--n-samples", "n_samples", int, "retained samples per frame"),
    ("--epsilon", "epsilon", float, "random-walk step scale"),
    ("--k-noise", "k_noise", int, "noise model rank"),
    ("--q-rtol", "q_rtol", float, "relative objective tolerance for early stop"),
    ("--var-floor", "var_floor", float, "variance floor"),
)


def _add_stft_flags(sub):
    sub.add_argument("--fft-size", dest="fft_size", type=int, default=1024)
    sub.add_argument("--hop", dest="hop", type=int, default=512)


def _add_mcem_flags(sub):
    defaults = McemConfig()
    for flag, dest, typ, help_text in _MCEM_FLAGS:
        sub.add_argument(flag, dest=dest, type=typ,
                         default=getattr(defaults, dest), help=help_text)


def _mcem_config(args, seed) -> McemConfig:
    kwargs = {dest: getattr(args, dest) for _, dest, _, _ in _MCEM_FLAGS}
    return McemConfig(seed=seed, **kwargs)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="avsep",
        description="audio-visual two-speaker separation at desk scale")
    commands = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def command(name, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", default=None,
                         help="JSON file with option values; flags override it")
        sub.add_argument("--seed", type=int, default=None,
                         help="base seed (required here or in the config)")
        subparsers[name] = sub
        return sub

    sub = command("gen", "synthesize a corpus and write it to a directory")
    sub.add_argument("--out", default=None, help="output corpus directory")
    sub.add_argument("--n-train", dest="n_train", type=int, default=6)
    sub.add_argument("--n-test", dest="n_test", type=int, default=4)
    sub.add_argument("--duration", type=float, default=2.0,
                     help="utterance length in seconds")
    sub.add_argument("--sample-rate", dest="sample_rate", type=int,
                     default=16000)
    _add_stft_flags(sub)

    sub = command("train", "fit the shared generative model on a corpus")
    sub.add_argument("--corpus", default=None)
    sub.add_argument("--out", default=None, help="checkpoint path")
    sub.add_argument("--epochs", type=int, default=45)
    sub.add_argument("--batch-size", dest="batch_size", type=int, default=256)
    sub.add_argument("--lr", type=float, default=1e-4)
    sub.add_argument("--alpha", type=float, default=0.9,
                     help="posterior/prior reconstruction weight")
    sub.add_argument("--latent-dim", dest="latent_dim", type=int, default=16)
    sub.add_argument("--feat-dim", dest="feat_dim", type=int, default=8)
    sub.add_argument("--hidden", type=int, default=64)

    sub = command("finetune", "adapt the decoder to each speaker")
    sub.add_argument("--corpus", default=None)
    sub.add_argument("--model", default=None, help="shared checkpoint")
    sub.add_argument("--out-dir", dest="out_dir", default=None)
    sub.add_argument("--epochs", type=int, default=15)
    sub.add_argument("--batch-size", dest="batch_size", type=int, default=256)
    sub.add_argument("--lr", type=float, default=1e-4)
    sub.add_argument("--alpha", type=float, default=0.9)

    sub = command("separate", "split one mixture into two source waveforms")
    sub.add_argument("--mixture", default=None, help="mixture WAV")
    sub.add_argument("--emb1", default=None,
                     help="conditioning embeddings for speaker 1")
    sub.add_argument("--emb2", default=None,
                     help="conditioning embeddings for speaker 2")
    sub.add_argument("--model", default=None, help="checkpoint for speaker 1")
    sub.add_argument("--model2", default=None,
                     help="separate checkpoint for speaker 2")
    sub.add_argument("--out-dir", dest="out_dir", default=None)
    _add_stft_flags(sub)
    _add_mcem_flags(sub)

    sub = command("bench", "score separation methods over a corpus")
    sub.add_argument("--corpus", default=None)
    sub.add_argument("--out", default=None, help="report CSV path")
    sub.add_argument("--methods", default="identity,oracle,nmf",
                     help="comma list from identity,oracle,nmf,mcem-i,mcem-d")
    sub.add_argument("--model", default=None,
                     help="shared checkpoint (for mcem-i)")
    sub.add_argument("--model-spk0", dest="model_spk0", default=None,
                     help="speaker-0 checkpoint (for mcem-d)")
    sub.add_argument("--model-spk1", dest="model_spk1", default=None,
                     help="speaker-1 checkpoint (for mcem-d)")
    sub.add_argument("--noise-type", dest="noise_type", default="white")
    sub.add_argument("--noise-snr-db", dest="noise_snr_db", default="5",
                     help="comma list of dB values, ignored for noise 'none'")
    sub.add_argument("--speaker-snr-db", dest="speaker_snr_db", type=float,
                     default=0.0)
    sub.add_argument("--nmf-rank", dest="nmf_rank", type=int, default=8)
    sub.add_argument("--nmf-iters", dest="nmf_iters", type=int, default=60)
    _add_mcem_flags(sub)

    return parser, subparsers


def _load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    if not isinstance(data, dict):
        raise ConfigError("config %s: expected a JSON object" % path)
    return data


_REQUIRED = {
    "gen": ("out",),
    "train": ("corpus", "out"),
    "finetune": ("corpus", "model", "out_dir"),
    "separate": ("mixture", "emb1", "emb2", "model", "out_dir"),
    "bench": ("corpus", "out"),
}


def parse_args(argv):
    parser, subparsers = _build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        data = _load_config(args.config)
        sub = subparsers[args.command]
        valid = {a.dest for a in sub._actions} - {"help", "config"}
        unknown = sorted(set(data) - valid)
        if unknown:
            raise ConfigError("config keys not recognized by %r: %s"
                              % (args.command, ", ".join(unknown)))
        sub.set_defaults(**data)
        args = parser.parse_args(argv)
    if args.seed is None:
        raise ConfigError("a seed is required (--seed or \"seed\" in the config)")
    for dest in _REQUIRED[args.command]:
        if getattr(args, dest) is None:
            raise ConfigError("--%s is required for %r"
                              % (dest.replace("_", "-"), args.command))
    return args


def _stft_config(args, sample_rate) -> StftConfig:
    return StftConfig(fft_size=args.fft_size, hop=args.hop,
                      sample_rate=sample_rate)


def cmd_gen(args) -> int:
    cfg = StftConfig(fft_size=args.fft_size, hop=args.hop,
                     sample_rate=args.sample_rate)
    corpus = build_corpus(args.n_train, args.n_test, cfg, args.seed,
                          duration=args.duration)
    save_corpus(corpus, args.out)
    print("wrote corpus to %s (%d training frames, %d test pairs)"
          % (args.out, len(corpus.triples), len(corpus.test_pairs)))
    return 0


def cmd_train(args) -> int:
    corpus = load_corpus(args.corpus)
    model = new_model(corpus.stft_cfg.n_bins, latent_dim=args.latent_dim,
                      feat_dim=args.feat_dim, raw_dim=RAW_DIM,
                      hidden=args.hidden, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      lr=args.lr, alpha=args.alpha, seed=args.seed)
    trained, trace = train(model, corpus.triples, cfg)
    meta = {"kind": "shared", "seed": args.seed, "epochs": args.epochs,
            "final_loss": float(trace[-1]) if len(trace) else None,
            "corpus": str(args.corpus)}
    save_checkpoint(args.out, trained, meta)
    print("wrote %s (final training loss %s)" % (args.out, meta["final_loss"]))
    return 0


def cmd_finetune(args) -> int:
    corpus = load_corpus(args.corpus)
    model, _ = load_checkpoint(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      lr=args.lr, alpha=args.alpha, seed=args.seed)
    for speaker_id, triples in sorted(corpus.speaker_triples.items()):
        adapted = finetune_decoder(model, triples, cfg)
        path = out_dir / ("model_spk%d.bin" % speaker_id)
        save_checkpoint(path, adapted,
                        {"kind": "speaker", "speaker": speaker_id,
                         "seed": args.seed, "epochs": args.epochs,
                         "base": str(args.model)})
        print("wrote %s" % path)
    return 0


def cmd_separate(args) -> int:
    mixture = read_wav(args.mixture)
    stft_cfg = _stft_config(args, mixture.sample_rate)
    model1, _ = load_checkpoint(args.model)
    model = model1
    if args.model2 is not None:
        model2, _ = load_checkpoint(args.model2)
        model = (model1, model2)
    for m in (model if isinstance(model, tuple) else (model,)):
        if m.n_bins != stft_cfg.n_bins:
            raise ConfigError(
                "model expects %d frequency bins but the transform has %d"
                % (m.n_bins, stft_cfg.n_bins))
    embs = []
    for path in (args.emb1, args.emb2):
        arrays = read_arrays(path, MAGIC_EMBEDDING)
        if len(arrays) != 1 or arrays[0].ndim != 2:
            raise DataError("%s: expected a single 2-d embedding array" % path)
        embs.append(arrays[0])
    cfg = _mcem_config(args, args.seed)
    est1, est2, details = run_separation(mixture, embs[0], embs[1], model,
                                         stft_cfg, cfg, return_details=True)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(out_dir / "source1.wav", est1)
    write_wav(out_dir / "source2.wav", est2)
    save_trace(out_dir / "qtrace.csv", details["trace"])
    trace = details["trace"]
    print("wrote %s and %s (%d EM iterations, final acceptance %.3f)"
          % (out_dir / "source1.wav", out_dir / "source2.wav",
             trace.shape[0], trace[-1, 2] if trace.shape[0] else float("nan")))
    return 0


_METHOD_NAMES = ("identity", "oracle", "nmf", "mcem-i", "mcem-d")


def cmd_bench(args) -> int:
    corpus = load_corpus(args.corpus)
    names = [n.strip() for n in args.methods.split(",") if n.strip()]
    unknown = sorted(set(names) - set(_METHOD_NAMES))
    if unknown:
        raise ConfigError("unknown methods: %s" % ", ".join(unknown))
    if not names:
        raise ConfigError("no methods requested")
    mcem_cfg = _mcem_config(args, args.seed)
    methods = {}
    for name in names:
        if name == "identity":
            methods[name] = identity_method()
        elif name == "oracle":
            methods[name] = oracle_wiener_method(corpus.stft_cfg)
        elif name == "nmf":
            methods[name] = nmf_baseline_method(
                corpus, rank=args.nmf_rank, n_iters=args.nmf_iters,
                k_noise=mcem_cfg.k_noise, fit_seed=args.seed)
        elif name == "mcem-i":
            if args.model is None:
                raise ConfigError("mcem-i needs --model")
            model, _ = load_checkpoint(args.model)
            methods[name] = mcem_method(model, corpus.stft_cfg, mcem_cfg)
        else:
            if args.model_spk0 is None or args.model_spk1 is None:
                raise ConfigError("mcem-d needs --model-spk0 and --model-spk1")
            by_speaker = {0: load_checkpoint(args.model_spk0)[0],
                          1: load_checkpoint(args.model_spk1)[0]}
            methods[name] = mcem_method(by_speaker, corpus.stft_cfg, mcem_cfg)
    if args.noise_type == "none":
        specs = [MixSpec(speaker_snr_db=args.speaker_snr_db,
                         noise_type="none", noise_snr_db=None)]
    else:
        try:
            levels = [float(v) for v in args.noise_snr_db.split(",")]
        except ValueError as exc:
            raise ConfigError("bad --noise-snr-db %r" % args.noise_snr_db) from exc
        specs = [MixSpec(speaker_snr_db=args.speaker_snr_db,
                         noise_type=args.noise_type, noise_snr_db=level)
                 for level in levels]
    report = benchmark(methods, corpus, specs, args.seed)
    report.to_csv(args.out)
    agg = report.aggregates()
    print("%-10s %12s %12s %10s" % ("method", "mean SDR", "improvement",
                                    "permuted"))
    for name in sorted(agg, key=lambda n: -agg[n]["mean_improvement"]):
        row = agg[name]
        print("%-10s %12.2f %12.2f %9.0f%%"
              % (name, row["mean_sdr"], row["mean_improvement"],
                 100.0 * row["permuted_fraction"]))
    print("wrote %s (%d rows)" % (args.out, len(report.rows)))
    return 0


_COMMANDS = {"gen": cmd_gen, "train": cmd_train, "finetune": cmd_finetune,
             "separate": cmd_separate, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 2
    except DataError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return 3
    except NumericalError as exc:
        print("numerical error: %s" % exc, file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
