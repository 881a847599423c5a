"""Command-line entry points for scoring, training, and verification.

Subcommands: rank, select, train-recover, recover, gradcheck,
train-verify, verify, roc. Option precedence is flags > config-file
entries > built-in defaults; the resolved configuration is echoed to
stdout before any work so runs are auditable. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure. Failures print a
single line "error:<category>: <message>" to stderr.

Heavy imports happen inside the command handlers so that --threads can
pin the BLAS/OpenMP pool sizes before numpy is loaded; --threads 1
(the default) gives bitwise-reproducible outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Callable, Dict, List, Optional, Tuple

from .errors import DataError, NumericalError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMBA_NUM_THREADS",
)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# option converters (raise ValueError with a readable message)

def _int_value(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"expected an integer, got {s!r}") from None


def _positive_int(s: str) -> int:
    v = _int_value(s)
    if v <= 0:
        raise ValueError(f"expected a positive integer, got {s!r}")
    return v


def _float_value(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ValueError(f"expected a number, got {s!r}") from None
    if v != v or v in (float("inf"), float("-inf")):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _positive_float(s: str) -> float:
    v = _float_value(s)
    if v <= 0.0:
        raise ValueError(f"expected a positive number, got {s!r}")
    return v


def _nonneg_float(s: str) -> float:
    v = _float_value(s)
    if v < 0.0:
        raise ValueError(f"expected a nonnegative number, got {s!r}")
    return v


def _unit_rate(s: str) -> float:
    v = _float_value(s)
    if not 0.0 <= v < 1.0:
        raise ValueError(f"expected a value in [0, 1), got {s!r}")
    return v


def _choice(*allowed: str) -> Callable[[str], str]:
    def conv(s: str) -> str:
        if s not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}, got {s!r}")
        return s

    return conv


# ---------------------------------------------------------------------------
# per-command option tables: name -> (converter, default, help)
# a default of REQUIRED means the option must come from a flag or the
# config file; positional arguments are separate and flags-only.

REQUIRED = object()

_SCORING_OPTS = {
    "lam": (_nonneg_float, 0.02, "weight on the nuclear-norm term"),
    "mode": (_choice("mirrored", "literal"), "mirrored",
             "asymmetry formula"),
}

_TRAIN_OPTS = {
    "lr": (_positive_float, 1e-3, "learning rate"),
    "momentum": (_unit_rate, 0.9, "momentum coefficient in [0, 1)"),
    "batch": (_positive_int, 16, "minibatch size"),
    "epochs": (_positive_int, 300, "training epochs"),
    "seed": (_int_value, 0, "seed for init, shuffling, and dropout"),
}

COMMAND_OPTIONS: Dict[str, Dict[str, tuple]] = {
    "rank": {
        **_SCORING_OPTS,
        "criterion": (_choice("symmetry", "rank", "combined"), "combined",
                      "ranking criterion"),
        "out": (str, REQUIRED, "output CSV path"),
    },
    "select": {
        **_SCORING_OPTS,
        "out": (str, REQUIRED, "output manifest path"),
    },
    "train-recover": {
        **_SCORING_OPTS,
        **_TRAIN_OPTS,
        "dropout": (_unit_rate, 0.5, "dropout rate before the output layer"),
        "out_model": (str, REQUIRED, "output checkpoint path"),
        "out_log": (str, None, "per-epoch loss CSV path"),
        "checkpoint_every": (_positive_int, None,
                             "also write the checkpoint every N epochs"),
    },
    "recover": {
        "model": (str, REQUIRED, "trained recovery checkpoint"),
        "out": (str, REQUIRED, "output PGM path"),
    },
    "gradcheck": {
        "which": (_choice("recovery", "fcn", "both"), "both",
                  "which tiny network to check"),
        "tol": (_positive_float, 1e-5, "maximum relative error accepted"),
        "seed": (_int_value, 0, "seed for weights and probe data"),
    },
    "train-verify": {
        **_TRAIN_OPTS,
        "pca_dim": (_positive_int, 32, "PCA dimension for the classifier"),
        "svm_c": (_positive_float, 1.0, "SVM hinge penalty C"),
        "svm_epochs": (_positive_int, 500, "SVM subgradient epochs"),
        "svm_lr": (_positive_float, 1e-4, "SVM subgradient step size"),
        "out_model": (str, REQUIRED, "output checkpoint path"),
        "out_log": (str, None, "per-epoch loss CSV path"),
        "recover_model": (str, None,
                          "recovery checkpoint; pairs are mapped to their"
                          " canonical views before cropping"),
    },
    "verify": {
        "model": (str, REQUIRED, "trained pair-network checkpoint"),
        "verifier": (str, None,
                     "checkpoint holding the classifier (default: model)"),
        "out": (str, REQUIRED, "output CSV path"),
        "recover_model": (str, None,
                          "recovery checkpoint; pairs are mapped to their"
                          " canonical views before cropping"),
    },
    "roc": {
        "out": (str, REQUIRED, "output CSV path"),
    },
}

COMMAND_POSITIONALS: Dict[str, List[Tuple[str, str]]] = {
    "rank": [("manifest", "dataset manifest CSV")],
    "select": [("manifest", "dataset manifest CSV")],
    "train-recover": [("manifest", "dataset manifest CSV")],
    "recover": [("image", "input 64x64 PGM")],
    "gradcheck": [],
    "train-verify": [("pairs", "pairs CSV file")],
    "verify": [("pairs", "pairs CSV file")],
    "roc": [("scores", "CSV with label and score columns")],
}


def _argtype(conv: Callable[[str], object]) -> Callable[[str], object]:
    def wrapped(s: str):
        try:
            return conv(s)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    return wrapped


class _Parser(argparse.ArgumentParser):
    """argparse with the exit-code contract (usage errors exit 1)."""

    def error(self, message: str):
        print(f"error:usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="canonface",
                     description="Canonical-view face tooling.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for command, options in COMMAND_OPTIONS.items():
        p = sub.add_parser(command, help=None)
        for name, help_text in COMMAND_POSITIONALS[command]:
            p.add_argument(name, help=help_text)
        for name, (conv, default, help_text) in options.items():
            flag = "--" + name.replace("_", "-")
            suffix = "" if default in (REQUIRED, None) \
                else f" (default {default})"
            p.add_argument(flag, dest=name, type=_argtype(conv),
                           default=None, help=help_text + suffix)
        p.add_argument("--config", default=None,
                       help="key=value file supplying defaults for flags")
        p.add_argument("--threads", type=_argtype(_positive_int),
                       default=None,
                       help="numeric thread cap; 1 (default) is bitwise"
                            " reproducible")
    return parser


def parse_config_file(path: str) -> Dict[str, str]:
    """Read `key = value` lines; '#' comments and blank lines ignored."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not key or not value:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key in values:
            raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def resolve_options(args: argparse.Namespace) -> Dict[str, object]:
    """Merge flags > config file > defaults into one option dict."""
    options = COMMAND_OPTIONS[args.command]
    file_values = parse_config_file(args.config) if args.config else {}
    unknown = set(file_values) - set(options) - {"threads"}
    if unknown:
        raise UsageError(
            f"{args.config}: unknown option(s): {', '.join(sorted(unknown))}"
        )
    resolved: Dict[str, object] = {}
    for name, (conv, default, _) in options.items():
        flag_value = getattr(args, name)
        if flag_value is not None:
            resolved[name] = flag_value
        elif name in file_values:
            try:
                resolved[name] = conv(file_values[name])
            except ValueError as exc:
                raise UsageError(f"{args.config}: {name}: {exc}") from None
        elif default is REQUIRED:
            raise UsageError(f"missing required option --"
                             f"{name.replace('_', '-')}")
        else:
            resolved[name] = default
    threads = args.threads
    if threads is None and "threads" in file_values:
        try:
            threads = _positive_int(file_values["threads"])
        except ValueError as exc:
            raise UsageError(f"{args.config}: threads: {exc}") from None
    resolved["threads"] = 1 if threads is None else threads
    for name, _ in COMMAND_POSITIONALS[args.command]:
        resolved[name] = getattr(args, name)
    return resolved


def _echo_config(command: str, resolved: Dict[str, object]) -> None:
    parts = " ".join(f"{k}={resolved[k]}" for k in sorted(resolved))
    print(f"config: command={command} {parts}")


# ---------------------------------------------------------------------------
# command handlers (heavy imports deferred)

def cmd_rank(opt) -> int:
    from . import dataio, frontality

    manifest = dataio.parse_manifest(opt["manifest"])
    cfg = frontality.FrontalityConfig(lam=opt["lam"], symmetry_mode=opt["mode"])
    by_identity: Dict[str, List[Tuple[str, object]]] = {}
    for entry in manifest.entries:
        by_identity.setdefault(entry.identity_id, []).append(
            (entry.image_path, dataio.load_image(entry.image_path))
        )
    rows = []
    for identity_id in manifest.identities():
        ranked = frontality.rank_images(by_identity[identity_id], cfg,
                                        criterion=opt["criterion"])
        for position, scored in enumerate(ranked, start=1):
            rows.append((identity_id, scored.image_id, scored.symmetry_term,
                         scored.nuclear_term, scored.score, position))
    dataio.write_csv(opt["out"], ("identity_id", "image_path",
                                  "symmetry_term", "nuclear_term", "score",
                                  "rank"), rows)
    return EXIT_OK


def cmd_select(opt) -> int:
    from . import dataio, frontality

    manifest = dataio.parse_manifest(opt["manifest"])
    cfg = frontality.FrontalityConfig(lam=opt["lam"], symmetry_mode=opt["mode"])
    entries_by_id: Dict[str, Dict[str, object]] = {}
    images_by_id: Dict[str, List[Tuple[str, object]]] = {}
    for entry in manifest.entries:
        entries_by_id.setdefault(entry.identity_id, {})[entry.image_path] = entry
        images_by_id.setdefault(entry.identity_id, []).append(
            (entry.image_path, dataio.load_image(entry.image_path))
        )
    rows = []
    for identity_id in manifest.identities():
        winner = frontality.select_canonical(images_by_id[identity_id], cfg)
        entry = entries_by_id[identity_id][winner]
        row = [entry.identity_id, entry.image_path]
        if entry.landmarks is not None:
            row.extend(float(v) for v in entry.landmarks.ravel())
        rows.append(row)
    dataio.write_csv(opt["out"], None, rows)
    return EXIT_OK


def cmd_train_recover(opt) -> int:
    from . import dataio, frontality, recovery

    manifest = dataio.parse_manifest(opt["manifest"])
    cfg = frontality.FrontalityConfig(lam=opt["lam"], symmetry_mode=opt["mode"])
    tset = recovery.build_training_set(manifest, cfg)
    tcfg = recovery.TrainConfig(
        learning_rate=opt["lr"], momentum=opt["momentum"],
        minibatch_size=opt["batch"], epochs=opt["epochs"],
        rng_seed=opt["seed"], dropout_rate=opt["dropout"],
    )
    network, log = recovery.train_recovery(
        tset, tcfg, checkpoint_path=opt["out_model"],
        checkpoint_every=opt["checkpoint_every"],
    )
    if opt["out_log"]:
        dataio.write_csv(opt["out_log"], recovery.LOSS_LOG_HEADER, log)
    rmse = recovery.evaluate_rmse(network, tset)
    print(f"final epoch loss: {log[-1][1]!r}")
    print(f"training rmse: {rmse!r}")
    return EXIT_OK


def cmd_recover(opt) -> int:
    from . import checkpoint, dataio, recovery

    network = checkpoint.load_network(opt["model"])
    img = dataio.normalize(dataio.load_image(opt["image"]))
    out = recovery.recover(network, img)
    dataio.save_image(out, opt["out"])
    return EXIT_OK


def _tiny_recovery_report(seed: int, tol: float):
    import numpy as np

    from . import net

    spec = net.NetworkSpec((1, 8, 8), (
        net.LocalConv(k=3, out_channels=4),
        net.Relu(),
        net.MaxPool(2),
        net.Dense(4),
    ))
    network = net.Network(spec, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.random((1, 1, 8, 8))
    target = rng.random((1, 4))
    return net.grad_check(network, x, target, loss="recon", tol=tol,
                          max_checks=4000, seed=seed)


TINY_FCN_SIZES = {
    "whole": (8, 8),
    "forehead": (6, 8),
    "eye": (6, 8),
    "nose": (6, 6),
    "mouth": (6, 8),
}


def _tiny_fcn_report(seed: int, tol: float):
    import numpy as np

    from . import verify

    spec = verify.fcn_spec(conv_channels=2, component_sizes=TINY_FCN_SIZES)
    model = verify.FcnModel(spec, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    batches = verify.random_pair_batches(model, rng)
    return verify.fcn_grad_check(model, batches, label=1, tol=tol, seed=seed)


def cmd_gradcheck(opt) -> int:
    checks = []
    if opt["which"] in ("recovery", "both"):
        checks.append(("recovery", _tiny_recovery_report))
    if opt["which"] in ("fcn", "both"):
        checks.append(("fcn", _tiny_fcn_report))
    worst = 0.0
    for name, run in checks:
        report = run(opt["seed"], opt["tol"])
        print(f"gradcheck {name}: max relative error {report.max_rel_error:.3e}"
              f" over {report.checked} parameters")
        worst = max(worst, report.max_rel_error)
    if worst >= opt["tol"]:
        raise NumericalError(
            f"gradient check failed: max relative error {worst:.3e}"
            f" >= tol {opt['tol']:.3e}"
        )
    return EXIT_OK


def _pair_transform(recover_model_path):
    if recover_model_path is None:
        return None
    from . import checkpoint, recovery

    network = checkpoint.load_network(recover_model_path)
    return lambda img: recovery.recover(network, img)


def cmd_train_verify(opt) -> int:
    import numpy as np

    from . import dataio, recovery, verify

    entries = verify.parse_pairs_file(opt["pairs"])
    pairs = verify.load_pairs(entries, _pair_transform(opt["recover_model"]))
    tcfg = recovery.TrainConfig(
        learning_rate=opt["lr"], momentum=opt["momentum"],
        minibatch_size=opt["batch"], epochs=opt["epochs"],
        rng_seed=opt["seed"],
    )
    model, log = verify.train_fcn(pairs, tcfg)
    features = np.stack([verify.extract_features(model, p) for p in pairs])
    labels = np.array([p.label for p in pairs])
    svm_cfg = verify.SvmConfig(C=opt["svm_c"], epochs=opt["svm_epochs"],
                               learning_rate=opt["svm_lr"])
    verifier = verify.train_svm(features, labels, opt["pca_dim"], svm_cfg)
    verify.save_fcn(opt["out_model"], model, verifier)
    if opt["out_log"]:
        dataio.write_csv(opt["out_log"], recovery.LOSS_LOG_HEADER, log)
    accuracy = verify.fcn_accuracy(model, pairs)
    print(f"training accuracy: {accuracy!r}")
    return EXIT_OK


def cmd_verify(opt) -> int:
    from . import dataio, verify

    verifier_path = opt["verifier"] or opt["model"]
    if verifier_path == opt["model"]:
        model, verifier = verify.load_verifier(opt["model"])
    else:
        model = verify.load_fcn(opt["model"])
        verifier = verify.load_verifier(verifier_path)[1]
    entries = verify.parse_pairs_file(opt["pairs"])
    pairs = verify.load_pairs(entries, _pair_transform(opt["recover_model"]))
    rows = []
    for index, pair in enumerate(pairs):
        predicted, score = verify.verify(model, verifier, pair)
        rows.append((index, pair.label, predicted, score))
    dataio.write_csv(opt["out"], ("pair_index", "label", "predicted",
                                  "score"), rows)
    return EXIT_OK


def cmd_roc(opt) -> int:
    import csv

    from . import dataio, verify

    path = opt["scores"]
    try:
        with open(path, "r", newline="") as f:
            reader = csv.reader(f)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty scores file") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    try:
        label_col = header.index("label")
        score_col = header.index("score")
    except ValueError:
        raise DataError(
            f"{path}: header must contain label and score columns"
        ) from None
    scored = []
    for lineno, row in enumerate(rows, start=2):
        try:
            scored.append((float(row[score_col]), int(row[label_col])))
        except (IndexError, ValueError):
            raise DataError(f"{path}:{lineno}: bad label/score row") from None
    points = verify.roc_curve(scored)
    dataio.write_csv(opt["out"], ("threshold", "fpr", "tpr"), points)
    return EXIT_OK


HANDLERS: Dict[str, Callable[[Dict[str, object]], int]] = {
    "rank": cmd_rank,
    "select": cmd_select,
    "train-recover": cmd_train_recover,
    "recover": cmd_recover,
    "gradcheck": cmd_gradcheck,
    "train-verify": cmd_train_verify,
    "verify": cmd_verify,
    "roc": cmd_roc,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        resolved = resolve_options(args)
    except UsageError as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:  # unreadable config file
        print(f"error:data: {exc}", file=sys.stderr)
        return EXIT_DATA
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(resolved["threads"])
    _echo_config(args.command, resolved)
    try:
        return HANDLERS[args.command](resolved)
    except DataError as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error:numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
