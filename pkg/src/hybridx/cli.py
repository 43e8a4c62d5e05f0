"""Command-line entry point: ``hybridx <command> [options]``.

Every command reads an optional INI config (``--config``), applies its
flag overrides, writes all artifacts to a staging directory and only moves
them into ``--out`` once the whole command has succeeded. The resolved
configuration is saved next to the artifacts as ``resolved-config.ini``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from hybridx import data, facial, fusion, metrics, social
from hybridx.config import dumps_config, load_config
from hybridx.numerics.gradcheck import LAYER_TYPES, TOLERANCE, gradcheck
from hybridx.records import DatasetStats, Label

RESOLVED_CONFIG = "resolved-config.ini"


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


@contextlib.contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure gets a stage label
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


@contextlib.contextmanager
def staged_output(out_dir):
    """Yield a scratch directory whose contents replace those in ``out_dir`` on success."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
        out.mkdir(exist_ok=True)
        for item in sorted(tmp.iterdir()):
            target = out / item.name
            if target.is_dir() and not target.is_symlink():
                shutil.rmtree(target)
            os.replace(item, target)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _write(path: Path, content) -> None:
    if isinstance(content, bytes):
        path.write_bytes(content)
    else:
        path.write_text(content, encoding="utf-8", newline="\n")


# -- config resolution --------------------------------------------------------

_FLAG_TARGETS = {
    "seed": "seed",
    "out": "out_dir",
    "social_csv": "social_csv",
    "image_dir": "image_dir",
    "validation_dir": "validation_dir",
    "paired": "paired_dir",
    "fractions": "split_fractions",
    "kind": "synth__kind",
    "n_asd": "synth__n_asd",
    "n_non": "synth__n_non",
    "n_images_asd": "synth__n_images_asd",
    "n_images_non": "synth__n_images_non",
    "side": "synth__side",
    "contrast": "synth__contrast",
    "noise_sigma": "synth__noise_sigma",
    "rho": "synth__rho",
    "ambiguous_strength": "synth__ambiguous_strength",
    "missing_fraction": "synth__missing_fraction",
    "lr_grid": "svm__lr_grid",
    "lam": "svm__lam",
    "svm_epochs": "svm__epochs",
    "epochs": "densenet__epochs",
    "lr": "densenet__lr",
    "patience": "densenet__patience",
    "decay": "densenet__decay",
    "weight_mode": "fusion__weight_mode",
    "weights": "fusion__weights",
    "threshold": "fusion__threshold",
}


def resolve_config(args):
    overrides = {}
    for flag, target in _FLAG_TARGETS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        overrides[target] = tuple(value) if isinstance(value, list) else value
    if getattr(args, "unstratified", False):
        overrides["stratified"] = False
    return load_config(args.config, **overrides)


def _require(value, what):
    if value is None:
        raise ValueError(f"no {what} given (set it in the config or on the command line)")
    if not Path(value).exists():
        raise FileNotFoundError(f"{what} {value} does not exist")
    return value


# -- commands -----------------------------------------------------------------

def cmd_synth(cfg, out: Path) -> str:
    s = cfg.synth
    with stage("synth"):
        image_stats = None
        if s.n_images_asd is not None or s.n_images_non is not None:
            if s.n_images_asd is None or s.n_images_non is None:
                raise ValueError("give both n_images_asd and n_images_non, or neither")
            image_stats = DatasetStats.of(s.n_images_asd, s.n_images_non)
        spec = data.SyntheticSpec(
            DatasetStats.of(s.n_asd, s.n_non), asd_score_probs=s.asd_score_probs,
            non_asd_score_probs=s.non_asd_score_probs, missing_fraction=s.missing_fraction,
            side=s.side, contrast=s.contrast, noise_sigma=s.noise_sigma, rho=s.rho,
            ambiguous_strength=s.ambiguous_strength, image_stats=image_stats,
            seed=cfg.stage_seed("synth"))
        if s.kind == "social":
            records = data.synth_social_data(spec)
            data.write_social_csv(records, out / "social.csv")
            stats = DatasetStats.from_labels(r.label for r in records)
            summary = f"{stats.n_total} social records"
        elif s.kind == "images":
            samples = data.synth_image_data(spec, out / "images")
            stats = DatasetStats.from_labels(x.label for x in samples)
            summary = f"{stats.n_total} images"
        else:
            bundles = data.synth_paired_data(spec)
            data.write_paired_dir(bundles, out)
            stats = DatasetStats.from_labels(b.label for b in bundles)
            n_img = sum(len(b.images) for b in bundles)
            summary = f"{stats.n_total} bundles ({n_img} images)"
    return f"{summary}: n_total={stats.n_total} n_asd={stats.n_asd} n_non_asd={stats.n_non_asd}"


def _three_way(items, cfg, validation_fraction):
    """(train, test, validation). Two fractions mean train/test, with
    validation carved from train; three mean train/test/validation."""
    parts = data.stratified_split(items, cfg.split)
    if len(parts) == 3:
        return parts
    if len(parts) != 2:
        raise ValueError(f"expected 2 or 3 split fractions, got {len(parts)}")
    train, test = parts
    spec = data.SplitSpec((1.0 - validation_fraction, validation_fraction), cfg.stratified,
                          cfg.stage_seed("validation"))
    fit, val = data.stratified_split(train, spec)
    return fit, test, val


def _predictions_csv(ids, scores, preds, truth, score_name) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", score_name, "decision", "label"])
    for i, s, p, t in zip(ids, scores, preds, truth):
        w.writerow([i, repr(float(s)), str(p), str(t)])
    return buf.getvalue()


def cmd_train_social(cfg, out: Path) -> str:
    with stage("load"):
        records = data.load_social_csv(_require(cfg.social_csv, "social CSV"))
    with stage("split"):
        train, test, val = _three_way(records, cfg, cfg.svm.validation_fraction)
    sv = cfg.svm
    seed = cfg.stage_seed("svm")
    with stage("lr-sweep"):
        best_lr, accs = social.lr_sweep(train, val, sv.lr_grid, sv.lam, sv.epochs, seed, sv.batch_size)
    with stage("fit"):
        model = social.fit_svm(train, best_lr, sv.lam, sv.epochs, seed, sv.batch_size)
    with stage("evaluate"):
        margins = [social.predict_margin(model, social.encode_record(r)) for r in test]
        preds = [Label.ASD if m >= 0 else Label.NON_ASD for m in margins]
        truth = [r.label for r in test]
        report = metrics.make_report("Social Behavior Module", preds, truth, cfg.seed,
                                     stats=DatasetStats.from_labels(r.label for r in records))
    with stage("write"):
        _write(out / "svm.model", social.dumps_model(model))
        _write(out / "social-report.json", report.to_json())
        _write(out / "lr-sweep.csv", "lr,val_accuracy\n" + "".join(
            f"{lr!r},{a!r}\n" for lr, a in zip(sv.lr_grid, accs)))
        _write(out / "social-predictions.csv",
               _predictions_csv([r.patient_id for r in test], margins, preds, truth, "margin"))
        _write(out / "table.txt", metrics.render_table([report]))
    return (f"best lr {best_lr!r}; test accuracy {metrics.percent(report.accuracy)} "
            f"on {len(test)} records")


def cmd_train_facial(cfg, out: Path) -> str:
    dn = cfg.densenet_config
    with stage("load"):
        images = data.load_image_dir(_require(cfg.image_dir, "image directory"))
        extra_val = None
        if cfg.validation_dir is not None:
            extra_val = data.load_image_dir(_require(cfg.validation_dir, "validation directory"))
        for s in images + (extra_val or []):
            if s.side != dn.side:
                raise ValueError(f"image side {s.side} does not match network side {dn.side}")
    with stage("split"):
        if extra_val is None:
            train, test, val = _three_way(images, cfg, cfg.densenet_validation_fraction)
        else:
            parts = data.stratified_split(images, cfg.split)
            if len(parts) != 2:
                raise ValueError("with a validation directory the split must have 2 fractions")
            (train, test), val = parts, extra_val
    with stage("fit"):
        model, history = facial.fit_with_callback(facial.build_model(dn), train, val, dn)
    with stage("evaluate"):
        probs = facial.predict_proba_batch(model, test)
        preds = [Label.ASD if p >= 0.5 else Label.NON_ASD for p in probs]
        truth = [s.label for s in test]
        report = metrics.make_report("Facial Feature Module", preds, truth, cfg.seed,
                                     stats=DatasetStats.from_labels(s.label for s in images))
    with stage("write"):
        _write(out / "densenet.model", facial.dumps_model(model))
        _write(out / "facial-report.json", report.to_json())
        _write(out / "facial-history.csv", "epoch,loss,val_accuracy,lr\n" + "".join(
            f"{h.epoch},{h.loss!r},{h.val_accuracy!r},{h.lr!r}\n" for h in history))
        _write(out / "facial-predictions.csv",
               _predictions_csv(range(len(test)), probs, preds, truth, "p_asd"))
        _write(out / "table.txt", metrics.render_table([report]))
    best = max(h.val_accuracy for h in history)
    return (f"{len(history)} epochs, best val accuracy {metrics.percent(best)}; "
            f"test accuracy {metrics.percent(report.accuracy)} on {len(test)} images")


def cmd_fuse_eval(cfg, out: Path, svm_path, densenet_path, social_report=None,
                  facial_report=None) -> str:
    with stage("load"):
        svm = social.loads_model(Path(_require(svm_path, "SVM model")).read_text(encoding="utf-8"))
        net = facial.loads_model(Path(_require(densenet_path, "DenseNet model")).read_bytes())
        bundles = data.load_paired_dir(_require(cfg.paired_dir, "paired directory"))
        supplied = [metrics.EvalReport.from_json(Path(p).read_text(encoding="utf-8"))
                    for p in (social_report, facial_report) if p is not None]
    with stage("compatibility"):
        for b in bundles:
            for img in b.images:
                if img.side != net.config.side:
                    raise ValueError(f"patient {b.patient_id}: image side {img.side} does not match "
                                     f"network side {net.config.side}")
        fs = cfg.fusion
        if fs.weight_mode == "prevalence":
            weights = fusion.compute_prevalence_weights(svm.n_asd, net.n_asd)
        else:
            weights = fusion.FusionWeights(*fs.weights)
    with stage("fuse"):
        report, trace = fusion.run_hybrid_pipeline(bundles, svm, net, weights, fs.threshold,
                                                   seed=cfg.seed, margin_scale=cfg.svm.margin_scale)
    with stage("write"):
        if len(supplied) < 2:
            supplied = list(fusion.module_reports(trace, fs.threshold, cfg.seed))
        _write(out / "hybrid-report.json", report.to_json())
        _write(out / "trace.csv", fusion.trace_csv(trace))
        _write(out / "table.txt", metrics.render_table([*supplied, report]))
    return (f"w_social={weights.w_social:.4f} w_facial={weights.w_facial:.4f}; hybrid accuracy "
            f"{metrics.percent(report.accuracy)} on {len(trace)} patients")


def cmd_gradcheck(seeds=1, tolerance=TOLERANCE, stream=None) -> int:
    """Print one line per layer type; return the number of failures."""
    stream = stream or sys.stdout
    failures = 0
    for layer in LAYER_TYPES:
        try:
            err = max(gradcheck(layer, seed) for seed in range(seeds))
            ok = err < tolerance
            detail = f"max rel err {err:.3e}"
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        failures += not ok
        print(f"{layer:<22} {'PASS' if ok else 'FAIL'}  {detail}", file=stream)
    return failures


# -- argument parsing ---------------------------------------------------------

def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--out", help="output directory (default from config, else ./out)")
        p.add_argument("--seed", type=int, help="global seed")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic dataset"))
    p.add_argument("--kind", choices=("social", "images", "paired"))
    p.add_argument("--n-asd", type=int)
    p.add_argument("--n-non", type=int)
    p.add_argument("--n-images-asd", type=int, help="paired only: total ASD images")
    p.add_argument("--n-images-non", type=int, help="paired only: total non-ASD images")
    p.add_argument("--side", type=int)
    p.add_argument("--contrast", type=float)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--rho", type=float, help="probability a modality shows the true class")
    p.add_argument("--ambiguous-strength", type=float)
    p.add_argument("--missing-fraction", type=float)

    p = common(sub.add_parser("train-social", help="train and evaluate the SVM"))
    p.add_argument("--social-csv")
    p.add_argument("--fractions", type=_floats, help="e.g. '0.8 0.2' or '0.6 0.2 0.2'")
    p.add_argument("--unstratified", action="store_true")
    p.add_argument("--lr-grid", type=_floats)
    p.add_argument("--lam", type=float)
    p.add_argument("--svm-epochs", type=int)

    p = common(sub.add_parser("train-facial", help="train and evaluate the DenseNet"))
    p.add_argument("--image-dir")
    p.add_argument("--validation-dir")
    p.add_argument("--fractions", type=_floats)
    p.add_argument("--unstratified", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--decay", type=float)

    p = common(sub.add_parser("fuse-eval", help="fuse both models on a paired set"))
    p.add_argument("--svm", required=True, help="svm.model from train-social")
    p.add_argument("--densenet", required=True, help="densenet.model from train-facial")
    p.add_argument("--paired", help="paired directory (social.csv + images/)")
    p.add_argument("--weight-mode", choices=("prevalence", "explicit"))
    p.add_argument("--weights", type=float, nargs=2, metavar=("W_SOCIAL", "W_FACIAL"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--social-report", help="report to show in the table's social column")
    p.add_argument("--facial-report", help="report to show in the table's facial column")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer type")
    p.add_argument("--seeds", type=int, default=1, help="check seeds 0..N-1 per layer")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gradcheck":
        return 1 if cmd_gradcheck(args.seeds) else 0
    try:
        with stage("config"):
            cfg = resolve_config(args)
            if args.command == "fuse-eval" and args.weights is not None and args.weight_mode is None:
                cfg = replace(cfg, fusion=replace(cfg.fusion, weight_mode="explicit"))
        with staged_output(cfg.out_dir) as tmp:
            if args.command == "synth":
                msg = cmd_synth(cfg, tmp)
            elif args.command == "train-social":
                msg = cmd_train_social(cfg, tmp)
            elif args.command == "train-facial":
                msg = cmd_train_facial(cfg, tmp)
            else:
                msg = cmd_fuse_eval(cfg, tmp, args.svm, args.densenet,
                                    args.social_report, args.facial_report)
            _write(tmp / RESOLVED_CONFIG, dumps_config(cfg))
    except StageError as exc:
        print(f"hybridx {args.command}: error {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hybridx {args.command}: error [output] {exc}", file=sys.stderr)
        return 1
    print(msg)
    return 0
