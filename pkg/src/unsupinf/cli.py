"""Command-line recipes: synth, train, score, selfinf, clean, sanity, classic, replay.

Every command writes ``manifest.json`` into its output directory.  The
manifest holds the command, the fully resolved configuration and the tool
version; ``replay`` re-runs it.  The creation time is the only
non-reproducible field and lives in the manifest alone.

Exit codes: 0 success, 2 usage or configuration error, 3 missing
checkpoint, 4 data error, 5 numeric failure.
"""

import argparse
import csv
import datetime
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, svg
from .datakit import (
    ClusterSpec,
    circle_centers,
    generate_clusters,
    generate_uniform,
    inject_outliers,
    load_dataset,
    save_csv,
    six_cluster_spec,
)
from .errors import (
    DegenerateInputError,
    FitError,
    FormatError,
    NumericError,
    SingularityError,
    ValidationError,
)
from .evaluation import (
    blend_sanity,
    classic_figure_suite,
    cross_class_pairs,
    detection_curve,
    sanity_self_top1,
    selfinf_loss_regression,
    write_curve_csv,
)
from .neuralvae import ESTIMATORS, TrainConfig, VAEArch, checkpoint_filename, load_run, sample_losses, save_checkpoint, train
from .tracin import ScoreConfig, score_matrix, self_influences, write_score_csv

log = logging.getLogger("unsupinf")

EXIT_OK, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4, 5
OUT_ENV = "UNSUPINF_OUT"
# runtime knobs that may differ between a run and its replay
RUNTIME_KEYS = ("threads", "out")


class MissingCheckpoint(Exception):
    pass


# --- helpers -----------------------------------------------------------------


def _dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _abs(p):
    return None if p is None else str(Path(p).resolve())


def _out_dir(args):
    if args.out is None:
        root = os.environ.get(OUT_ENV, "unsupinf-out")
        args.out = str(Path(root) / args.command)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(args, out):
    config = {k: v for k, v in vars(args).items() if k not in RUNTIME_KEYS and k not in ("command", "func")}
    manifest = {
        "command": args.command,
        "config": config,
        "version": __version__,
        "output_dir": str(out.resolve()),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    _dump_json(manifest, out / "manifest.json")


def _ints(text):
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return vals


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load_checkpoints(directory):
    path = Path(directory)
    if not path.is_dir():
        raise MissingCheckpoint(f"checkpoint directory {directory} does not exist")
    cks = load_run(path)
    if not cks:
        raise MissingCheckpoint(f"no checkpoint files in {directory}")
    return cks


def _load(path):
    """Read a dataset; any validation failure on file contents is a data error."""
    try:
        return load_dataset(path)
    except FormatError:
        raise
    except (ValidationError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: {e}") from None


def _training_set(args):
    data = _load(args.data)
    if getattr(args, "extra", None):
        data = inject_outliers(data, _load(args.extra), args.inject_seed)
    return data


def _score_config(args, cks, share=False):
    return ScoreConfig(cks, args.m, args.estimator, args.seed, share)


# --- commands ----------------------------------------------------------------


def cmd_synth(args):
    out = _out_dir(args)
    if args.preset == "six":
        data = generate_clusters(six_cluster_spec(args.seed, args.radius))
    elif args.preset == "five":
        k = 5
        spec = ClusterSpec([args.size] * k, [args.std] * k, circle_centers(k, args.radius), args.seed)
        data = generate_clusters(spec)
    else:
        data = generate_uniform(args.n, args.dim, args.low, args.high, args.seed)
    save_csv(data, out / "data.csv")
    log.info("wrote %d samples to %s", data.n, out / "data.csv")
    return out


def cmd_train(args):
    out = _out_dir(args)
    existing = sorted(out.glob("ckpt_*.vae"))
    if existing:
        raise ValidationError(f"{out} already holds checkpoints; checkpoint directories are append-only")
    data = _training_set(args)
    arch = VAEArch(data.d, args.dlatent, tuple(args.hidden), tuple(args.hidden))
    cfg = TrainConfig(args.beta, args.lr, args.batch, args.steps, args.ckpt_every, args.seed, args.m_train)
    losses = []
    cks = train(data, arch, cfg, loss_log=losses)
    for ck in cks:
        target = out / checkpoint_filename(ck.step)
        if target.exists():
            raise ValidationError(f"refusing to overwrite {target}")
        save_checkpoint(ck, target)
    save_csv(data, out / "train_data.csv")
    with open(out / "loss.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss"])
        for step, value in enumerate(losses, start=1):
            w.writerow([step, repr(value)])
    log.info("wrote %d checkpoints to %s", len(cks), out)
    return out


def cmd_score(args):
    cks = _load_checkpoints(args.ckpt)
    out = _out_dir(args)
    data = _load(args.data)
    query = _load(args.query)
    cfg = _score_config(args, cks)
    S = score_matrix(data.data, query.data, cfg, threads=args.threads)
    write_score_csv(S, out / "scores.csv")
    _dump_json(dict(cfg.to_dict(), n_train=data.n, n_test=query.n), out / "stats.json")
    return out


def _self_scores(args, data, cks):
    cfg = _score_config(args, cks, share=args.share_draws)
    return self_influences(data.data, cfg, threads=args.threads), cfg


def _write_self_csv(path, data, scores, losses=None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["train_index", "is_extra", "score"] + (["loss"] if losses is not None else []))
        for i, s in enumerate(scores):
            row = [i, int(data.is_extra[i]), repr(float(s))]
            if losses is not None:
                row.append(repr(float(losses[i])))
            w.writerow(row)


def cmd_selfinf(args):
    cks = _load_checkpoints(args.ckpt)
    out = _out_dir(args)
    data = _load(args.data)
    scores, cfg = _self_scores(args, data, cks)
    losses = sample_losses(data.data, cks[-1].params, cks[-1].beta, m=args.m, seed=args.seed)
    _write_self_csv(out / "scores.csv", data, scores, losses)
    slope, intercept, r2, rho = selfinf_loss_regression(scores, losses)
    stats = dict(cfg.to_dict(), slope=slope, intercept=intercept, r_squared=r2, spearman=rho)
    _dump_json(stats, out / "stats.json")
    svg.scatter(out / "selfinf_vs_loss.svg", -losses, scores, data.labels, "self-influence vs negative loss", "negative loss", "self-influence")
    return out


def cmd_clean(args):
    cks = _load_checkpoints(args.ckpt)
    out = _out_dir(args)
    data = _training_set(args)
    stored = cks[-1].meta.get("data_fingerprint")
    if stored is not None and stored != data.fingerprint():
        raise FormatError("the data does not match the data the checkpoints were trained on")
    scores, cfg = _self_scores(args, data, cks)
    curve = detection_curve(scores, data.is_extra)
    _write_self_csv(out / "scores.csv", data, scores)
    write_curve_csv(curve, out / "curve.csv")
    _dump_json(dict(cfg.to_dict(), auc=curve.auc, n=data.n, n_extra=int(data.is_extra.sum())), out / "stats.json")
    svg.line(out / "curve.svg", curve.fraction_checked, curve.fraction_found, f"detection curve (AUC {curve.auc:.3f})", "fraction checked", "fraction of extras found", diagonal=True)
    return out


def cmd_sanity(args):
    cks = _load_checkpoints(args.ckpt)
    out = _out_dir(args)
    data = _load(args.data)
    cfg = _score_config(args, cks, share=args.share_draws)
    freq, S, probes = sanity_self_top1(cks, data, args.subset, cfg, threads=args.threads, return_scores=True)
    write_score_csv(S, out / "scores.csv", test_index=probes)
    stats = dict(cfg.to_dict(), self_top1=freq, subset=int(len(probes)))
    if data.labels is not None and data.n_clusters > 1:
        blend = blend_sanity(data, cks, cross_class_pairs(data.labels, args.seed), args.alpha, cfg, threads=args.threads)
        stats["blend"] = dict(blend.to_dict(), alpha=args.alpha)
    _dump_json(stats, out / "stats.json")
    return out


def cmd_classic(args):
    out = _out_dir(args)
    data = _load(args.data)
    z = None if args.z is None else np.asarray(args.z, dtype=np.float64)
    classic_figure_suite(data, args.k, args.sigma, out, z=z, threads=args.threads)
    return out


def cmd_replay(args):
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest["command"]
    if command == "replay":
        raise ValidationError("a replay manifest cannot be replayed")
    if command not in COMMANDS:
        raise ValidationError(f"manifest names unknown command {command!r}")
    ns = argparse.Namespace(**manifest["config"], command=command, out=args.out, threads=args.threads)
    return COMMANDS[command](ns)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "selfinf": cmd_selfinf,
    "clean": cmd_clean,
    "sanity": cmd_sanity,
    "classic": cmd_classic,
    "replay": cmd_replay,
}


# --- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Exit with code 2 on usage errors (argparse's default as well, made explicit)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common_out(p):
    p.add_argument("--out", default=None, help=f"output directory; None means ${OUT_ENV}/<command>, or ./unsupinf-out/<command> when unset")


def _common_threads(p):
    p.add_argument("--threads", type=int, default=1, help="worker threads for scoring; results do not depend on it")


def _common_scoring(p, share_default=False):
    p.add_argument("--ckpt", required=True, help="directory of ckpt_*.vae files")
    p.add_argument("--m", type=int, default=16, help="latent draws per gradient estimate")
    p.add_argument("--estimator", choices=ESTIMATORS, default="paper_eq8", help="encoder-gradient estimator")
    p.add_argument("--seed", type=int, default=0, help="seed of the scoring draws")
    _common_threads(p)
    _common_out(p)
    if share_default is not None:
        p.add_argument(
            "--share-draws",
            action=argparse.BooleanOptionalAction,
            default=share_default,
            help="reuse a sample's own draws for its self-score",
        )


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="unsupinf", description="Influence functions for density estimators and VAEs.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", default=False, help="log progress to stderr")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("synth", help="generate a synthetic dataset", formatter_class=fmt)
    p.add_argument("--preset", choices=("six", "five", "uniform"), default="six", help="six-cluster, five tight clusters, or uniform box")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--radius", type=float, default=5.0, help="radius of the circle holding cluster centres")
    p.add_argument("--size", type=int, default=100, help="points per cluster (five)")
    p.add_argument("--std", type=float, default=0.3, help="cluster standard deviation (five)")
    p.add_argument("--n", type=int, default=50, help="number of points (uniform)")
    p.add_argument("--dim", type=int, default=2, help="dimension (uniform)")
    p.add_argument("--low", type=float, default=-8.0, help="lower bound (uniform)")
    p.add_argument("--high", type=float, default=8.0, help="upper bound (uniform)")
    _common_out(p)

    p = subs.add_parser("train", help="train a VAE and write checkpoints", formatter_class=fmt)
    p.add_argument("--data", required=True, help="training data (.csv, IDX or raw)")
    p.add_argument("--extra", default=None, help="extra samples to mix into the training data")
    p.add_argument("--inject-seed", type=int, default=0, help="seed of the mixing shuffle")
    p.add_argument("--beta", type=float, default=1.0, help="KL weight")
    p.add_argument("--dlatent", type=int, default=2, help="latent dimension")
    p.add_argument("--hidden", type=_ints, default=[64, 64], help="hidden layer widths, comma separated")
    p.add_argument("--lr", type=float, default=1e-3, help="SGD learning rate")
    p.add_argument("--batch", type=int, default=64, help="mini-batch size")
    p.add_argument("--steps", type=int, default=5000, help="total SGD steps")
    p.add_argument("--ckpt-every", type=int, default=250, help="checkpoint interval in steps")
    p.add_argument("--m-train", type=int, default=1, help="latent draws per training loss")
    p.add_argument("--seed", type=int, default=0, help="initialisation, shuffle and noise seed")
    _common_out(p)

    p = subs.add_parser("score", help="VAE-TracIn scores of training samples over queries", formatter_class=fmt)
    p.add_argument("--data", required=True, help="training data")
    p.add_argument("--query", required=True, help="query samples")
    _common_scoring(p, share_default=None)

    p = subs.add_parser("selfinf", help="self-influences and their relation to the loss", formatter_class=fmt)
    p.add_argument("--data", required=True, help="training data")
    _common_scoring(p, share_default=False)

    p = subs.add_parser("clean", help="rank training samples by self-influence to find extras", formatter_class=fmt)
    p.add_argument("--data", required=True, help="base data, or the full training data when --extra is omitted")
    p.add_argument("--extra", default=None, help="extra samples mixed in at training time")
    p.add_argument("--inject-seed", type=int, default=0, help="seed of the mixing shuffle used at training time")
    _common_scoring(p, share_default=True)

    p = subs.add_parser("sanity", help="self-top-1 frequency and blend check", formatter_class=fmt)
    p.add_argument("--data", required=True, help="training data")
    p.add_argument("--subset", type=int, default=64, help="number of probed training samples")
    p.add_argument("--alpha", type=float, default=0.75, help="weight of the major component in blends")
    _common_scoring(p, share_default=True)

    p = subs.add_parser("classic", help="influence tables and plots for k-NN, KDE and WS-GMM", formatter_class=fmt)
    p.add_argument("--data", required=True, help="labelled data")
    p.add_argument("--k", type=int, default=10, help="k-NN neighbour count")
    p.add_argument("--sigma", type=float, default=0.5, help="KDE bandwidth")
    p.add_argument("--z", type=_floats, default=None, help="query point, comma separated; None picks a point near the centre of cluster 0")
    _common_threads(p)
    _common_out(p)

    p = subs.add_parser("replay", help="re-run the command recorded in a manifest", formatter_class=fmt)
    p.add_argument("manifest", help="path to manifest.json")
    _common_threads(p)
    p.add_argument("--out", required=True, help="fresh output directory")
    return parser


def _resolve_paths(args):
    for key in ("data", "extra", "query", "ckpt"):
        if getattr(args, key, None) is not None:
            setattr(args, key, _abs(getattr(args, key)))


def run(args):
    if args.command != "replay":
        _resolve_paths(args)
    out = COMMANDS[args.command](args)
    if args.command == "replay":
        manifest = json.loads(Path(args.manifest).read_text())
        _write_manifest(argparse.Namespace(command=manifest["command"], **manifest["config"]), out)
    else:
        _write_manifest(args, out)
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run(args)
    except MissingCheckpoint as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (NumericError, SingularityError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, FitError, DegenerateInputError, FileNotFoundError, IsADirectoryError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValidationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
