import argparse
import json
import logging
import os
import sys
import traceback

from baseline import run_baseline_dnn, split_indices
from checkpoint_manager import load_checkpoint, save_checkpoint
from errors import InputError, NumericalFailureError, SvdklError, UsageError
from event_log import format_record, training_log_path, write_training_log
from feature_io import (SOURCE_SUFFIX, TARGET_SUFFIX, load_aligned_corpus, load_pair_directory, load_utterance,
                        save_aligned_corpus, save_utterance)
from settings_manager import SettingsManager
from synthetic import make_parallel_corpus, make_regression_task
from trainer import grad_check, initialize_model, normalizer, train
from utils import check_dependencies, safe_print
from vc_pipeline import (MCC_ORDER, WarpingConfig, build_training_set, convert_utterance, corpus_mcd, f0_stats,
                         mcc_to_log_spectrum, mcd, spectrum_frequencies)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s]: %(message)s"
VERSION_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "version.json")
GRADCHECK_LAYERS = [4, 8, 3]


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_version():
    try:
        with open(VERSION_FILE, "r", encoding="utf-8-sig") as f:
            return json.load(f)["version"]
    except (OSError, ValueError, KeyError):
        return "unknown"


def configure_logging(verbose=False):
    handlers = [logging.StreamHandler(sys.stderr)]
    log_file = os.getenv("SVDKL_LOG_FILE")
    if log_file:
        handlers.append(logging.FileHandler(log_file, mode="a", encoding="utf-8"))
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format=LOG_FORMAT,
                        handlers=handlers, force=True)


def parse_layers(text):
    try:
        sizes = [int(part) for part in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"layer sizes must be integers, got {text!r}")
    if not sizes:
        raise argparse.ArgumentTypeError("layer sizes must not be empty")
    return sizes


def load_config(args, **extra):
    overrides = {
        "seed": getattr(args, "seed", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "inducing_count": getattr(args, "inducing", None),
        "layer_sizes": getattr(args, "layers", None),
    }
    overrides.update(extra)
    return SettingsManager(getattr(args, "config", None)).config(overrides)


def _stem(path):
    name = os.path.basename(path)
    return name.split(".")[0] or name


def load_training_data(path):
    """A pair directory gives the corpus and F0 statistics; an aligned-corpus file gives the corpus only."""
    if os.path.isdir(path):
        triples = load_pair_directory(path)
        corpus = build_training_set([(src, tgt) for _, src, tgt in triples], [utt_id for utt_id, _, _ in triples])
        sources = [src for _, src, _ in triples]
        targets = [tgt for _, _, tgt in triples]
        return corpus, f0_stats(sources), f0_stats(targets)
    if not os.path.exists(path):
        raise InputError(f"no pair directory or aligned-corpus file at {path}")
    return load_aligned_corpus(path), None, None


def cmd_align(args):
    src = load_utterance(args.source)
    tgt = load_utterance(args.target)
    corpus = build_training_set([(src, tgt)], [_stem(args.source)])
    save_aligned_corpus(corpus, args.out)
    safe_print(f"{corpus.size}")
    return 0


def cmd_train(args):
    cfg = load_config(args, alpha=args.alpha)
    corpus, source_stats, target_stats = load_training_data(args.data)
    if source_stats is None:
        logger.warning("aligned-corpus input carries no F0 statistics; converted F0 will be copied")

    def report(record):
        if args.verbose:
            safe_print(format_record(record))

    model, log = train(corpus, cfg, source_stats, target_stats, on_epoch=report)
    save_checkpoint(model, args.out)
    write_training_log(log, training_log_path(args.out))
    return 0


def cmd_convert(args):
    model = load_checkpoint(args.checkpoint)
    converted = convert_utterance(model, load_utterance(args.source))
    save_utterance(converted, args.out)
    return 0


def cmd_evaluate(args):
    safe_print(f"{mcd(load_utterance(args.first), load_utterance(args.second))}")
    return 0


def cmd_spectrum(args):
    utterance = load_utterance(args.utterance)
    if not 0 <= args.frame < utterance.frame_count:
        raise InputError(f"frame {args.frame} outside 0..{utterance.frame_count - 1}")
    cfg = WarpingConfig(alpha=args.alpha, num_bins=args.bins)
    log_magnitude = mcc_to_log_spectrum(utterance.mcc[args.frame], cfg)
    omega = spectrum_frequencies(cfg.num_bins)
    for w, value in zip(omega, log_magnitude):
        safe_print(f"{float(w)!r}\t{float(value)!r}")
    return 0


def cmd_gradcheck(args):
    cfg = load_config(args, layer_sizes=args.layers or GRADCHECK_LAYERS, inducing_count=args.inducing or 5)
    input_dim = cfg.layer_sizes[0] if cfg.use_net else 4
    task = make_regression_task(cfg.seed, n_train=args.rows, n_test=1, input_dim=input_dim)
    corpus = task.train
    mean, scale = normalizer(corpus.X)
    model = initialize_model((corpus.X - mean) / scale, corpus.Y, cfg, mean, scale)
    report = grad_check(model, corpus, tolerance=args.tolerance)
    for group, error in report.worst.items():
        status = "ok" if group not in report.failing else "FAIL"
        safe_print(f"{group}\t{error!r}\t{status}")
    if not report.passed:
        raise NumericalFailureError(f"gradient check failed for {', '.join(report.failing)}")
    return 0


def cmd_make_corpus(args):
    triples, _ = make_parallel_corpus(args.seed if args.seed is not None else 0, utterances=args.utterances)
    os.makedirs(args.out, exist_ok=True)
    for utt_id, src, tgt in triples:
        save_utterance(src, os.path.join(args.out, utt_id + SOURCE_SUFFIX))
        save_utterance(tgt, os.path.join(args.out, utt_id + TARGET_SUFFIX))
    safe_print(f"{len(triples)}")
    return 0


def cmd_baseline(args):
    cfg = load_config(args, baseline_patience=args.patience)
    corpus, _, _ = load_training_data(args.data)
    _, score = run_baseline_dnn(corpus, cfg)
    safe_print(f"{score}")
    return 0


def cmd_sweep(args):
    """Train once per setting on the training utterances; report validation MCD on the held-out ones."""
    triples = load_pair_directory(args.data)
    base = load_config(args)
    train_rows, val_rows = split_indices(len(triples), base.validation_fraction, base.seed)
    training = [triples[i] for i in sorted(train_rows)]
    validation = [(triples[i][1], triples[i][2]) for i in sorted(val_rows)]
    corpus = build_training_set([(s, t) for _, s, t in training], [u for u, _, _ in training])
    source_stats = f0_stats([s for _, s, _ in training])
    target_stats = f0_stats([t for _, _, t in training])
    for value in args.values:
        if args.vary == "inducing":
            cfg = load_config(args, inducing_count=value)
        else:
            cfg = load_config(args, layer_sizes=base.layer_sizes[:-1] + [value])
        model, _ = train(corpus, cfg, source_stats, target_stats)
        safe_print(f"{value}\t{corpus_mcd(model, validation)!r}")
    return 0


def _training_options(parser, out_required=False):
    parser.add_argument("--config", help="JSON file with TrainConfig fields")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--inducing", type=int, help="inducing points per head")
    parser.add_argument("--layers", type=parse_layers, help=f"comma separated sizes, e.g. {MCC_ORDER},100,20")
    if out_required:
        parser.add_argument("--out", required=True)


def build_parser():
    parser = CliParser(prog="svdkl-vc", description="Deep-kernel spectral mapping for voice conversion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {read_version()}")
    parser.add_argument("--verbose", action="store_true", help="progress logs and per-epoch rows")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="DTW-align two utterance files into an aligned corpus")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_align)

    p = sub.add_parser("train", help="train a model on a pair directory or aligned-corpus file")
    p.add_argument("data")
    _training_options(p, out_required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("convert", help="convert a source utterance with a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("source")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_convert)

    p = sub.add_parser("evaluate", help="mel-cepstral distortion between two utterances")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("spectrum", help="warped log-magnitude spectrum of one frame")
    p.add_argument("utterance")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.41)
    p.add_argument("--bins", type=int, default=257)
    p.set_defaults(handler=cmd_spectrum)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training gradients")
    _training_options(p)
    p.add_argument("--rows", type=int, default=12)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("make-corpus", help="write a synthetic parallel corpus directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--utterances", type=int, default=6)
    p.set_defaults(handler=cmd_make_corpus)

    p = sub.add_parser("baseline", help="train the MSE network comparator and print validation RMSE")
    p.add_argument("data")
    _training_options(p)
    p.add_argument("--patience", type=int)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("sweep", help="validation MCD over inducing counts or last-layer sizes")
    p.add_argument("data")
    _training_options(p)
    p.add_argument("--vary", choices=("inducing", "features"), default="inducing")
    p.add_argument("--values", type=parse_layers, required=True)
    p.set_defaults(handler=cmd_sweep)
    return parser


def run_command(argv):
    """Parse ``argv``, run the subcommand and map failures to exit codes."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return e.exit_code
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except SvdklError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return 2


def handle_exception(exc_type, exc_value, exc_traceback):
    if issubclass(exc_type, KeyboardInterrupt):
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return
    logger.error("Uncaught exception", exc_info=(exc_type, exc_value, exc_traceback))
    sys.stderr.write("".join(traceback.format_exception(exc_type, exc_value, exc_traceback)))


def main():
    sys.excepthook = handle_exception
    missing = check_dependencies()
    if missing:
        sys.stderr.write("missing packages:\n- " + "\n- ".join(missing) + "\n")
        sys.exit(1)
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
