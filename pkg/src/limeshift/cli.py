"""Command-line interface.

Exit codes: 0 success, 1 runtime or audit failure, 2 usage or validation
error.  Errors are reported on stderr as a single line
``limeshift: error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import math
import shlex
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .audit import DEFAULT_N_GRID, AuditConfig, audit_dataset, fidelity
from .blackbox import ExternalScorer, load_model, save_model, train_kernel_logistic
from .corpus import DEFAULT_SEED, generate_corpus
from .datasets import Dataset, dump_svmlight, load_svmlight
from .errors import (AuditError, ConfigError, ContractError, LimeShiftError, ParseError,
                     TrainingError)
from .lime import run_lime, surrogate_at_instance
from .numkit import MEDIAN_HEURISTIC, KernelSpec
from .report import load_report, render, write_partial, write_report_dir

BLACKBOX_NOTE = ("built-in RBF kernel logistic regression stands in for an SVM-RBF "
                 "whose C, gamma and probability calibration are unstated")

CSV_HELP = """\
report directory (--out):
  report.json            full AuditReport, full precision
  report.csv             n,test,instances,reject_count,fail_count,reject_fraction,
                         mmd_mean,mmd_std,scaled_mean,scaled_std,threshold,
                         pearson_mmd_fidelity,fidelity_mean,fidelity_std
  rows.csv               instance_id,n,data_mmd_b,data_scaled_stat,data_threshold,
                         data_reject,label_mmd_b,label_scaled_stat,label_threshold,
                         label_reject,fidelity,f_y_at_x,g_y_at_x,loss
  plot_fidelity.csv      n,fidelity_mean,fidelity_std
  plot_mmd_fidelity.csv  instance_id,n,data_mmd_b,label_mmd_b,fidelity
  report.md              tables in the layout n | Reject | Failed to reject | MMD
  MANIFEST.json          sha256 of every file plus the provenance block
Every CSV starts with one '# provenance: {json}' line; numbers carry 6
significant digits.  On failure rows_partial.csv and errors.json are written
instead and the exit code is 1."""


class UsageError(LimeShiftError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: usage: {message}\n")


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be a uint64")
    return v


def _gamma(text):
    if text in ("median", MEDIAN_HEURISTIC):
        return MEDIAN_HEURISTIC
    return _positive_float(text)


def _alpha(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return v


def _grid(text):
    try:
        grid = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not grid or any(n < 1 for n in grid) or grid != sorted(set(grid)):
        raise argparse.ArgumentTypeError("grid must be non-empty, positive and ascending")
    return tuple(grid)


def _kernel(text):
    try:
        return KernelSpec.parse(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _class_id(text):
    try:
        return int(text)
    except ValueError:
        return text


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("limeshift") / "data" / f"{name}.svm"))


def _load_dataset(spec: str) -> Dataset:
    if spec.startswith("bundled:"):
        return load_svmlight(bundled_path(spec.split(":", 1)[1]))
    return load_svmlight(spec)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextlib.contextmanager
def _open_scorer(args, dim):
    if args.external:
        scorer = ExternalScorer(shlex.split(args.external), dim, timeout=args.timeout)
        try:
            yield scorer, {"kind": "external", "command": args.external}
        finally:
            scorer.close()
    else:
        model = load_model(args.model)
        if model.dim != dim:
            raise UsageError(f"model dim {model.dim} does not match dataset dim {dim}")
        yield model, {"kind": "builtin", "model_digest": _file_digest(args.model),
                      "note": BLACKBOX_NOTE}


# -- commands ----------------------------------------------------------------

def cmd_corpus(args):
    train, test = generate_corpus(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_svmlight(train, out / "train.svm")
    dump_svmlight(test, out / "test.svm")
    print(f"wrote {len(train)} train and {len(test)} test documents (dim {train.dim}) to {out}")
    return 0


def cmd_train(args):
    data = _load_dataset(args.dataset)
    kernel = KernelSpec("rbf", args.gamma)
    model = train_kernel_logistic(data.X, data.labels, kernel, reg=args.reg,
                                  epochs=args.epochs, lr=args.lr)
    save_model(model, args.out)
    pred = model.predict(data.X)
    acc = float(np.mean([p == t for p, t in zip(pred, data.labels)]))
    print(f"loss={model.history[-1]:.6g} accuracy={acc:.6g} gamma={model.kernel.gamma:.6g}")
    return 0


def cmd_explain(args):
    data = _load_dataset(args.dataset)
    if not 0 <= args.instance < len(data):
        raise UsageError(f"instance {args.instance} out of range [0, {len(data)})")
    x = data[args.instance]
    with _open_scorer(args, data.dim) as (scorer, _):
        run = run_lime(x, args.class_id, scorer, args.num_samples, args.num_features,
                       args.kernel, args.ridge, args.seed, args.instance)
        col = list(scorer.class_ids).index(args.class_id)
        f_y = float(scorer.predict_proba([x])[0, col])
    expl = run.explanation
    g_y = surrogate_at_instance(expl)
    fid = fidelity(f_y, g_y)
    print(f"instance {args.instance} class {args.class_id} "
          f"n={expl.n_samples} K={args.num_features} seed={expl.seed}")
    print("feature\tweight")
    for fid_, w in expl.features:
        print(f"{fid_}\t{w:.6g}")
    print(f"intercept\t{expl.intercept:.6g}")
    print(f"loss\t{expl.loss:.6g}")
    print(f"f_y(x)\t{f_y:.6g}")
    print(f"g_y(x)\t{g_y:.6g}")
    print(f"fidelity\t{fid:.6g}")
    if args.json:
        payload = expl.to_json()
        payload.update({"instance": args.instance, "f_y_at_x": f_y, "g_y_at_x": g_y,
                        "fidelity": fid})
        Path(args.json).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return 0


def _audit_config(args) -> AuditConfig:
    return AuditConfig(seed=args.seed, alpha=args.alpha, n_grid=args.n, K=args.num_features,
                       ridge=args.ridge, class_id=args.class_id, lime_kernel=args.lime_kernel,
                       data_kernel=args.data_kernel, label_kernel=args.label_kernel,
                       reference="class" if args.reference == "class" else "knn",
                       label_mode=args.label_mode, null_mode=args.null_mode)


def cmd_audit(args):
    train = _load_dataset(args.train)
    test = _load_dataset(args.test)
    if train.dim != test.dim:
        raise UsageError(f"train dim {train.dim} != test dim {test.dim}")
    config = _audit_config(args)
    instances = range(min(args.limit, len(test))) if args.limit else None
    with _open_scorer(args, train.dim) as (scorer, scorer_info):
        prov = {"artifact_version": __version__, "scorer": scorer_info,
                "train_digest": train.digest(), "test_digest": test.digest()}
        try:
            report = audit_dataset(test, scorer, train, config, jobs=args.jobs,
                                   provenance=prov, instances=instances)
        except AuditError as exc:
            prov.update({"seed": config.seed, "config": config.to_json(),
                         "config_digest": config.digest()})
            write_partial(args.out, exc.partial_rows, exc.failures, prov)
            print(f"limeshift: error: audit: {exc}", file=sys.stderr)
            return 1
    write_report_dir(report, args.out)
    for agg in report.aggregates:
        d, lb = agg["data"], agg["label"]
        print(f"n={agg['n']} data_reject={d['reject_count']}/{agg['instances']} "
              f"label_reject={lb['reject_count']}/{agg['instances']} "
              f"fidelity={agg['fidelity_mean']:.6g}")
    print(f"report written to {args.out}")
    return 0


def cmd_report(args):
    try:
        report = load_report(args.input)
    except FileNotFoundError:
        raise UsageError(f"no report.json in {args.input}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"corrupt report.json: {exc.msg} at line {exc.lineno} "
                         f"column {exc.colno} (char {exc.pos})") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed report.json: {exc}") from None
    sys.stdout.write(render(report, args.format))
    return 0


# -- parser ------------------------------------------------------------------

def _add_scorer_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", help="JSON model file written by 'train'")
    g.add_argument("--external", metavar="CMD",
                   help="command line of an external scorer speaking JSON lines")
    p.add_argument("--timeout", type=_positive_float, default=60.0,
                   help="external scorer response timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="limeshift", description=__doc__.split("\n")[0],
                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"limeshift {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("corpus", help="write the bundled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train the built-in kernel logistic scorer")
    p.add_argument("--dataset", required=True, help="svmlight file or bundled:train")
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=_gamma, default=MEDIAN_HEURISTIC,
                   help="RBF gamma, or 'median' (default)")
    p.add_argument("--reg", type=_positive_float, default=1e-3)
    p.add_argument("--epochs", type=_positive_int, default=2000)
    p.add_argument("--lr", type=_positive_float, default=0.01)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="explain one instance")
    p.add_argument("--dataset", required=True)
    _add_scorer_args(p)
    p.add_argument("--instance", type=int, required=True)
    p.add_argument("--class", dest="class_id", type=_class_id, default=1)
    p.add_argument("--num-samples", type=_positive_int, default=5000)
    p.add_argument("--num-features", type=_positive_int, default=6)
    p.add_argument("--ridge", type=_nonneg_float, default=1.0)
    p.add_argument("--kernel", type=_kernel, default=KernelSpec("cosine"),
                   help="proximity kernel (cosine | rbf:<gamma>)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--json", help="also write the explanation as JSON")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("audit", help="run the shift and fidelity audit",
                       formatter_class=argparse.RawDescriptionHelpFormatter, epilog=CSV_HELP)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    _add_scorer_args(p)
    p.add_argument("--class", dest="class_id", type=_class_id, default=1)
    p.add_argument("--n", type=_grid, default=DEFAULT_N_GRID, help="comma-separated grid")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--reference", choices=["knn", "class"], default="knn")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--num-features", type=_positive_int, default=6)
    p.add_argument("--ridge", type=_nonneg_float, default=1.0)
    p.add_argument("--lime-kernel", type=_kernel, default=KernelSpec("cosine"))
    p.add_argument("--data-kernel", type=_kernel, default=KernelSpec("cosine"))
    p.add_argument("--label-kernel", type=_kernel, default=KernelSpec("rbf"))
    p.add_argument("--label-mode", choices=["vector", "scalar"], default="vector")
    p.add_argument("--null-mode", nargs="?", const="disjoint", default="off",
                   choices=["off", "self", "disjoint"],
                   help="diagnostic: replace Z by a second reference draw")
    p.add_argument("--limit", type=_positive_int, help="audit only the first N test instances")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("report", help="re-render a report directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["md", "csv", "json"], default="md")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParseError, ConfigError, ContractError, FileNotFoundError) as exc:
        print(f"limeshift: error: validation: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, LimeShiftError, OSError) as exc:
        print(f"limeshift: error: runtime: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
