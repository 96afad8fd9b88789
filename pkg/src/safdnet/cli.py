"""Command-line entry point: synth, ingest, label, train, eval, ablate, explain.

Settings resolve as built-in defaults < ``--config`` JSON file < flags, and
the merged result is written to ``resolved_config.json`` in every output
directory.  Any field can be set with ``--set section.key=value`` (the value
is parsed as JSON when possible).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .benchmark import BENCH_TRAIN, BenchmarkConfig, build_benchmark
from .errors import DataError, NumericalError, SafdError
from .labeling import DEFAULT_PEAKS, HORIZONS, PeakParams, assign_splits, build_dataset
from .model import ABLATIONS, HyperConfig, SAFDNet
from .rng import mix_seed
from .signal_io import CHANNELS, Segment, load_case, read_archive, resample_case, save_case, write_archive
from .synthgen import SynthParams, gen_case, randomize_params
from .training import TrainConfig, load_checkpoint, predict, save_checkpoint, train

log = logging.getLogger("safdnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CHANNEL_SETS = {"abp": ("ABP",), "multi": CHANNELS}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config


def default_config() -> dict:
    synth = SynthParams().to_dict()
    synth.pop("seed")
    synth.update(cases=20, randomize=True)
    bench = BenchmarkConfig().to_dict()
    bench.pop("seed")
    hyper = HyperConfig().to_dict()
    for k in ("C", "T", "horizon_min"):
        hyper.pop(k)  # taken from the data
    tr = asdict(TrainConfig())
    tr.pop("seed")
    tr["betas"] = list(tr["betas"])
    return {
        "seed": 0,
        "jobs": 1,
        "channels": "multi",
        "horizons": list(HORIZONS),
        "ablation": "full",
        "synth": synth,
        "benchmark": bench,
        "benchmark_train": {k: v for k, v in asdict(BENCH_TRAIN).items() if k != "seed"} | {"betas": list(BENCH_TRAIN.betas)},
        "peaks": asdict(DEFAULT_PEAKS["ABP"]),
        "label": {"window_s": 30.0, "neg_stride_s": 30.0, "negatives_per_event": 2,
                  "split_fractions": [0.7, 0.15, 0.15]},
        "hyper": hyper,
        "train": tr,
        "eval": {"n_boot": 1000, "threshold": 0.5, "bins": 10, "platt": False},
    }


def merge(base: dict, override: dict, where: str = "") -> dict:
    """Recursive merge; keys unknown to ``base`` are a usage error."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in out:
            raise UsageError(f"unknown config key {where + k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _parse_set(item: str) -> dict:
    if "=" not in item:
        raise UsageError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    d: dict = {}
    node = d
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return d


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        try:
            cfg = merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    flags: dict = {}
    for name in ("seed", "jobs", "channels", "ablation"):
        if getattr(args, name, None) is not None:
            flags[name] = getattr(args, name)
    if getattr(args, "horizon", None):
        flags["horizons"] = sorted(set(args.horizon))
    if getattr(args, "precision", None):
        flags.setdefault("train", {})["precision"] = args.precision
        flags.setdefault("benchmark_train", {})["precision"] = args.precision
    if getattr(args, "cases", None) is not None:
        flags.setdefault("synth", {})["cases"] = args.cases
    cfg = merge(cfg, flags)
    for item in getattr(args, "set", None) or []:
        cfg = merge(cfg, _parse_set(item))
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["channels"] not in CHANNEL_SETS:
        raise UsageError(f"channels must be one of {sorted(CHANNEL_SETS)}")
    if cfg["ablation"] not in ABLATIONS:
        raise UsageError(f"ablation must be one of {ABLATIONS}")
    if not all(h in HORIZONS for h in cfg["horizons"]):
        raise UsageError(f"horizons must be drawn from {HORIZONS}")
    if int(cfg["jobs"]) < 1:
        raise UsageError("jobs must be at least 1")
    try:
        synth_params(cfg)
        train_config(cfg)
        train_config(cfg, "benchmark_train")
        bench_config(cfg)
        PeakParams(**cfg["peaks"])
        HyperConfig(**{**cfg["hyper"], "conv": tuple(map(tuple, cfg["hyper"]["conv"]))})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def synth_params(cfg: dict) -> SynthParams:
    fields = {k: v for k, v in cfg["synth"].items() if k not in ("cases", "randomize")}
    return SynthParams(**fields, seed=int(cfg["seed"]))


def bench_config(cfg: dict) -> BenchmarkConfig:
    return BenchmarkConfig(**cfg["benchmark"], seed=int(cfg["seed"]))


def train_config(cfg: dict, section: str = "train") -> TrainConfig:
    return TrainConfig(**{**cfg[section], "betas": tuple(cfg[section]["betas"])}, seed=int(cfg["seed"]))


def hyper_config(cfg: dict, C: int, T: int, horizon: int) -> HyperConfig:
    return HyperConfig.from_dict({**cfg["hyper"], "C": C, "T": T, "horizon_min": horizon})


def write_resolved(out: Path, cfg: dict, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, **cfg}
    (out / "resolved_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv(header: str, rows) -> str:
    return header + "\n" + "".join(",".join(_fmt(v) for v in r) + "\n" for r in rows)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- synth


def _synth_one(job):
    i, p, randomize, out = job
    seed = mix_seed(p.seed, "case", i) >> 1
    params = randomize_params(p, seed) if randomize else replace(p, seed=seed)
    case = gen_case(params, case_id=f"case-{i:04d}")
    save_case(case, Path(out) / case.case_id)
    return case.case_id, case.event_truth


def cmd_synth(args, cfg) -> None:
    out = Path(args.out)
    write_resolved(out, cfg, "synth")
    if args.benchmark:
        bc = bench_config(cfg)
        parts = build_benchmark(bc)
        segs = parts["train"] + parts["dev"] + parts["test"]
        _write_label_outputs(out, {bc.horizon_min: segs}, {s.case_id: s.split for s in segs}, {})
        return
    base = synth_params(cfg)
    jobs = [(i, base, bool(cfg["synth"]["randomize"]), str(out)) for i in range(int(cfg["synth"]["cases"]))]
    truth = dict(_map(_synth_one, jobs, int(cfg["jobs"])))
    _write_text(out / "event_truth.json", json.dumps(truth, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d cases to %s", len(truth), out)


# ---------------------------------------------------------------- ingest


def _case_dirs(root: Path) -> list[Path]:
    if (root / "manifest.json").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists()) if root.is_dir() else []
    if not dirs:
        raise DataError(f"{root}: no case directories (manifest.json) found")
    return dirs


def _ingest_one(job):
    path, channels, out = job
    case = resample_case(load_case(path, channels))
    save_case(case, Path(out) / case.case_id)
    return case.case_id, {k: len(v.samples) for k, v in case.channels.items()}


def cmd_ingest(args, cfg) -> None:
    out = Path(args.out)
    write_resolved(out, cfg, "ingest")
    channels = CHANNEL_SETS[cfg["channels"]]
    jobs = [(str(d), channels, str(out)) for d in _case_dirs(Path(args.input))]
    summary = dict(_map(_ingest_one, jobs, int(cfg["jobs"])))
    _write_text(out / "ingest_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- label


def _label_one(job):
    path, cfg = job
    channels = CHANNEL_SETS[cfg["channels"]]
    lab = cfg["label"]
    try:
        case = load_case(path, channels)
        ds = build_dataset(
            case, horizons=cfg["horizons"], seed=int(cfg["seed"]), window_s=float(lab["window_s"]),
            neg_stride_s=float(lab["neg_stride_s"]), channels=channels,
            peak_params=PeakParams(**cfg["peaks"]), negatives_per_event=int(lab["negatives_per_event"]),
        )
    except DataError as exc:
        return Path(path).name, None, str(exc)
    return case.case_id, ds, None


def _write_label_outputs(out: Path, by_h: dict, splits: dict, skipped: dict) -> None:
    summary: dict = {"skipped": skipped, "horizons": {}}
    for h, segs in sorted(by_h.items()):
        write_archive(out / f"segments_h{h}.safd", segs)
        counts = {}
        for part in ("train", "dev", "test"):
            sel = [s for s in segs if s.split == part]
            counts[part] = {"n": len(sel), "n_pos": sum(int(s.label == 1) for s in sel)}
        summary["horizons"][str(h)] = counts
    _write_text(out / "splits.json", json.dumps(splits, indent=2, sort_keys=True) + "\n")
    _write_text(out / "label_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_label(args, cfg) -> None:
    out = Path(args.out)
    write_resolved(out, cfg, "label")
    results = _map(_label_one, [(str(d), cfg) for d in _case_dirs(Path(args.input))], int(cfg["jobs"]))
    skipped = {cid: err for cid, ds, err in results if ds is None}
    for cid, err in skipped.items():
        log.warning("skipping %s: %s", cid, err)
    kept = [(cid, ds) for cid, ds, _ in results if ds is not None]
    if not kept:
        raise DataError("no case could be labeled")
    splits = assign_splits([cid for cid, _ in kept], seed=int(cfg["seed"]),
                           fractions=tuple(cfg["label"]["split_fractions"]))
    by_h = {}
    for h in cfg["horizons"]:
        segs = []
        for cid, ds in kept:
            for s in ds[h]:
                s.split = splits[cid]
                segs.append(s)
        by_h[h] = segs
    _write_label_outputs(out, by_h, splits, skipped)


# ---------------------------------------------------------------- train / eval


def load_segments(path: str | os.PathLike, splits_path: str | None = None) -> list[Segment]:
    path = Path(path)
    sp = Path(splits_path) if splits_path else path.with_name("splits.json")
    if not sp.exists():
        raise DataError(f"split sidecar {sp} not found")
    segs = read_archive(path, json.loads(sp.read_text()))
    if not segs:
        raise DataError(f"{path}: archive is empty")
    if any(s.split is None for s in segs):
        raise DataError(f"{path}: some cases are missing from {sp}")
    return segs


def _archive_for(data: str, horizon: int) -> Path:
    p = Path(data)
    return p / f"segments_h{horizon}.safd" if p.is_dir() else p


def _fit(segs: list[Segment], cfg: dict, ablation: str, tc: TrainConfig):
    tr = [s for s in segs if s.split == "train"]
    dev = [s for s in segs if s.split == "dev"]
    C, T = tr[0].data.shape if tr else segs[0].data.shape
    hyper = hyper_config(cfg, C, T, int(segs[0].horizon_min))
    model = SAFDNet(hyper, ablation, seed=tc.seed, dtype=tc.dtype)
    return train(tr, dev, model, tc)


def _train_section(cfg: dict, args) -> str:
    return "benchmark_train" if getattr(args, "benchmark_train", False) else "train"


def cmd_train(args, cfg) -> None:
    out = Path(args.out)
    write_resolved(out, cfg, "train")
    segs = load_segments(_archive_for(args.data, cfg["horizons"][0]), args.splits)
    model, tlog = _fit(segs, cfg, cfg["ablation"], train_config(cfg, _train_section(cfg, args)))
    save_checkpoint(model, out, tlog.best_dev_auroc)
    _write_text(out / "train_log.csv", tlog.to_csv())
    from . import plotting

    plotting.plot_training(tlog, out / "train_curve.png")


def cmd_eval(args, cfg) -> None:
    from . import evaluation as ev
    from . import plotting

    out = Path(args.out)
    write_resolved(out, cfg, "eval")
    model = load_checkpoint(args.checkpoint)
    segs = load_segments(args.data, args.splits)
    test = [s for s in segs if s.split == args.split]
    if not test:
        raise DataError(f"no segments in split {args.split!r}")
    scores = predict(model, test)
    if not np.isfinite(scores).all():
        raise NumericalError("non-finite predictions")
    labels = np.array([s.label for s in test])
    e = cfg["eval"]
    platt = None
    if e["platt"]:
        dev = [s for s in segs if s.split == "dev"]
        platt = ev.platt_recalibrate(predict(model, dev), [s.label for s in dev])
        scores = platt.apply(scores)
    rep = ev.evaluate(scores, labels, model.hyper.horizon_min, n_boot=int(e["n_boot"]),
                      seed=int(cfg["seed"]), threshold=float(e["threshold"]), bins=int(e["bins"]))
    doc = json.loads(rep.to_json())
    doc.update(split=args.split, ablation=model.ablation, platt=platt._asdict() if platt else None)
    _write_text(out / "report.json", json.dumps(doc, indent=2) + "\n")
    fpr, tpr, thr = ev.roc_curve(scores, labels)
    _write_text(out / "roc.csv", _csv("fpr,tpr,threshold", zip(fpr, tpr, thr)))
    rec, prec, thr = ev.pr_curve(scores, labels)
    _write_text(out / "pr.csv", _csv("recall,precision,threshold", zip(rec, prec, thr)))
    _write_text(out / "calibration.csv", _csv("bin_lo,bin_hi,mean_pred,frac_pos,count", rep.calibration))
    _write_text(out / "predictions.csv",
                _csv("case_id,t_start,label,score", ((s.case_id, s.t_start, s.label, p) for s, p in zip(test, scores))))
    plotting.plot_roc(fpr, tpr, rep.auroc.point, out / "roc.png")
    plotting.plot_pr(rec, prec, rep.auprc.point, float(labels.mean()), out / "pr.png")
    plotting.plot_calibration(rep.calibration, out / "calibration.png")
    print(f"AUROC {rep.auroc.point:.4f} [{rep.auroc.ci_lo:.4f}, {rep.auroc.ci_hi:.4f}]  "
          f"AUPRC {rep.auprc.point:.4f}  F1 {rep.f1.point:.4f}")


# ---------------------------------------------------------------- ablate


def cmd_ablate(args, cfg) -> None:
    from . import evaluation as ev
    from . import plotting

    out = Path(args.out)
    write_resolved(out, cfg, "ablate")
    tc = train_config(cfg, _train_section(cfg, args))
    thr = float(cfg["eval"]["threshold"])
    rows = []
    horizons = cfg["horizons"] if Path(args.data).is_dir() else [None]
    for h in horizons:
        segs = load_segments(_archive_for(args.data, h) if h else args.data, args.splits)
        test = [s for s in segs if s.split == "test"]
        if not test:
            raise DataError("ablation needs a nonempty test split")
        labels = np.array([s.label for s in test])
        for abl in ABLATIONS:
            model, tlog = _fit(segs, cfg, abl, tc)
            scores = predict(model, test)
            cm = ev.classify_metrics(scores, labels, thr)
            rows.append({"horizon_min": int(segs[0].horizon_min), "model": abl,
                         "auroc": ev.roc_auc(scores, labels), "accuracy": cm.accuracy, "f1": cm.f1,
                         "dev_auroc": tlog.best_dev_auroc, "best_epoch": tlog.best_epoch})
            log.info("h=%s %s AUROC %.4f", rows[-1]["horizon_min"], abl, rows[-1]["auroc"])
            if args.keep_checkpoints:
                save_checkpoint(model, out / f"h{rows[-1]['horizon_min']}" / abl, tlog.best_dev_auroc)
    cols = ["horizon_min", "model", "auroc", "accuracy", "f1", "dev_auroc", "best_epoch"]
    _write_text(out / "ablation.csv", _csv(",".join(cols), ([r[c] for c in cols] for r in rows)))
    plotting.plot_ablation(rows, out / "ablation.png")
    for r in rows:
        print(f"{r['horizon_min']:>3} min  {r['model']:<14} AUROC {r['auroc']:.4f}  "
              f"Acc {r['accuracy']:.4f}  F1 {r['f1']:.4f}")


# ---------------------------------------------------------------- explain


def cmd_explain(args, cfg) -> None:
    from . import explain, plotting

    if not args.mask and args.saliency is None:
        raise UsageError("explain needs --mask and/or --saliency IDX")
    out = Path(args.out)
    write_resolved(out, cfg, "explain")
    model = load_checkpoint(args.checkpoint)
    names = explain.channel_names(model.hyper.C)
    if args.mask:
        m = explain.export_filter_mask(model)
        _write_text(out / "mask.csv", m.to_csv())
        plotting.plot_mask(m.freqs_hz, m.mask, names, out / "mask.png")
    if args.saliency is not None:
        if not args.data:
            raise UsageError("--saliency needs --data ARCHIVE")
        segs = read_archive(args.data)
        if not 0 <= args.saliency < len(segs):
            raise UsageError(f"segment index {args.saliency} outside [0, {len(segs)})")
        seg = segs[args.saliency]
        sm = explain.sensitivity_map(model, seg)
        _write_text(out / "saliency.csv", sm.to_csv(names))
        meta = {"index": args.saliency, "case_id": seg.case_id, "t_start": seg.t_start,
                "label": seg.label, "probability": sm.probability}
        _write_text(out / "saliency.json", json.dumps(meta, indent=2) + "\n")
        plotting.plot_saliency(seg.data, sm.saliency, names, 100.0, out / "saliency.png")


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file (overrides defaults, overridden by flags)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field, e.g. train.lr=5e-4")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="safdnet", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic cases")
    s.add_argument("--cases", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--benchmark", action="store_true", help="write the labeled desk benchmark archive instead of raw cases")

    s = sub.add_parser("ingest", parents=[common], help="validate and resample case directories to 100 Hz")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--channels", choices=sorted(CHANNEL_SETS))
    s.add_argument("--jobs", type=int)

    s = sub.add_parser("label", parents=[common], help="segment and label cases into archives")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--channels", choices=sorted(CHANNEL_SETS))
    s.add_argument("--horizon", type=int, action="append", choices=HORIZONS)
    s.add_argument("--jobs", type=int)

    for name, hlp in (("train", "train one model"), ("ablate", "train and compare the four variants")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--data", required=True, help="segment archive, or a label output directory")
        s.add_argument("--splits", help="split sidecar (default: splits.json next to the archive)")
        s.add_argument("--horizon", type=int, action="append", choices=HORIZONS)
        s.add_argument("--precision", choices=("f32", "f64"))
        s.add_argument("--benchmark-train", action="store_true", help="use the benchmark_train settings")
        if name == "train":
            s.add_argument("--ablation", choices=ABLATIONS)
        else:
            s.add_argument("--keep-checkpoints", action="store_true")

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--splits")
    s.add_argument("--split", default="test", choices=("train", "dev", "test"))

    s = sub.add_parser("explain", parents=[common], help="export the filter mask or a saliency map")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mask", action="store_true")
    s.add_argument("--saliency", type=int, metavar="IDX")
    s.add_argument("--data")
    return p


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "label": cmd_label, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate, "explain": cmd_explain}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"safdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"safdnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"safdnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SafdError as exc:
        print(f"safdnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK
