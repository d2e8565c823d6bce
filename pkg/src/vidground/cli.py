"""Command-line interface: ``vidground {gen,train,eval,bench,ablate}``.

Every command writes into ``--out`` and echoes its fully resolved parameters
to ``config.json`` there. Settings resolve as built-in defaults, then the
``--config`` JSON file, then explicit flags. Exit codes are 0 on success, 1 on
runtime failure and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .costmodel import r_inf_approx, verify_against_runtime
from .datamodel import CorpusError, generate_synthetic_corpus, load_corpus, save_corpus
from .inference import EvalReport, InferenceConfig, build_report, evaluate, ground_truth_predictions
from .model import ConfigError, load_checkpoint, preset, save_checkpoint
from .sampling import SamplingError
from .training import TrainConfig, train
from .validation import check_ks, check_thresholds

log = logging.getLogger("vidground")

DEFAULTS = {
    "gen": dict(seed=0, videos=8, t_min=128, t_max=128, queries_min=2, queries_max=4,
                dv=16, dt=16, snr=8.0, len_min=6, len_max=40, k_min=4, k_max=8, split="train"),
    "train": dict(seed=0, preset="tiny", sampler="video", bq=None, batch_size=8, tw=128, epochs=10,
                  lr=1e-3, weight_decay=0.05, ema=0.999, fusion="xattn_affine", placement="late"),
    "eval": dict(ks=[1, 5], tious=[0.3, 0.5, 0.7], cached="on", tw=None, ground_truth=False,
                 weights="ema"),
    "bench": dict(seed=0, preset="tacos-small", ns=[1, 4, 16, 64], bqs=[1, 2, 4, 8], tws=[64],
                  tokens=8, snippets=2),
    "ablate": dict(seed=0, preset="tiny", sampler="video", bq=4, batch_size=8, tw=128, epochs=5,
                   lr=1e-3, ks=[1, 5], tious=[0.3, 0.5, 0.7]),
}

ABLATION_VARIANTS = (
    ("xattn_affine", "xattn_affine", "late"),
    ("xattn", "xattn", "late"),
    ("add", "add", "late"),
    ("early_fusion", "xattn_affine", "early"),
)


class UsageError(Exception):
    pass


# -- argument handling ------------------------------------------------------------------

def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="vidground", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="JSON file of parameter overrides")
        if seed:
            sp.add_argument("--seed", type=int)

    g = sub.add_parser("gen", help="generate a synthetic corpus")
    common(g)
    g.add_argument("--videos", type=int)
    g.add_argument("--t-min", type=int)
    g.add_argument("--t-max", type=int)
    g.add_argument("--queries-min", type=int)
    g.add_argument("--queries-max", type=int)
    g.add_argument("--dv", type=int)
    g.add_argument("--dt", type=int)
    g.add_argument("--snr", type=float)
    g.add_argument("--len-min", type=int)
    g.add_argument("--len-max", type=int)
    g.add_argument("--k-min", type=int)
    g.add_argument("--k-max", type=int)
    g.add_argument("--split")

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--corpus", required=True, help="corpus directory or manifest.json")
    t.add_argument("--preset")
    t.add_argument("--sampler", choices=("video", "query"))
    t.add_argument("--bq", type=int, help="queries per snippet (video sampler)")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--tw", type=int, help="snippet length")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--ema", type=float)
    t.add_argument("--fusion", choices=("xattn_affine", "xattn", "add"))
    t.add_argument("--placement", choices=("late", "early"))

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e, seed=False)
    e.add_argument("--corpus", required=True)
    e.add_argument("--checkpoint", help="checkpoint file or training output directory")
    e.add_argument("--ks", type=_ints)
    e.add_argument("--tious", type=_floats)
    e.add_argument("--cached", choices=("on", "off"))
    e.add_argument("--tw", type=int)
    e.add_argument("--weights", choices=("ema", "raw"))
    e.add_argument("--ground-truth", action="store_true", default=None,
                   help="score the ground-truth moments as predictions")

    b = sub.add_parser("bench", help="measured vs predicted MAC ratios")
    common(b)
    b.add_argument("--corpus", help="optional corpus supplying features and tokens")
    b.add_argument("--preset")
    b.add_argument("--ns", type=_ints)
    b.add_argument("--bqs", type=_ints)
    b.add_argument("--tws", type=_ints)
    b.add_argument("--tokens", type=int)
    b.add_argument("--snippets", type=int)

    a = sub.add_parser("ablate", help="compare fusion variants and early fusion")
    common(a)
    a.add_argument("--corpus", required=True)
    a.add_argument("--preset")
    a.add_argument("--sampler", choices=("video", "query"))
    a.add_argument("--bq", type=int)
    a.add_argument("--batch-size", type=int)
    a.add_argument("--tw", type=int)
    a.add_argument("--epochs", type=int)
    a.add_argument("--lr", type=float)
    a.add_argument("--ks", type=_ints)
    a.add_argument("--tious", type=_floats)
    return p


def resolve(args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        unknown = set(loaded) - set(cfg) - {"corpus", "checkpoint"}
        if unknown:
            raise UsageError(f"unknown keys in {path}: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose", "out") or value is None:
            continue
        cfg[key] = value
    return cfg


def _prepare_out(path, cfg, command):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({"command": command, **cfg}, indent=1, sort_keys=True))
    return out


def _load(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"corpus path not found: {p}")
    return load_corpus(p)


def _train_config(cfg):
    sampler = cfg["sampler"]
    bq = cfg["bq"]
    if bq is None:
        bq = 4 if sampler == "video" else 1
    if sampler == "query" and bq != 1:
        raise UsageError("--bq applies to the video sampler; the query sampler uses one query per snippet")
    if bq < 1:
        raise UsageError(f"--bq must be >= 1, got {bq}")
    if cfg["batch_size"] % bq:
        raise UsageError(f"--bq {bq} must divide --batch-size {cfg['batch_size']}")
    cfg["bq"] = bq
    try:
        return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], queries_per_snippet=bq,
                           sampler=sampler, T_w=cfg["tw"], lr=cfg["lr"],
                           weight_decay=cfg.get("weight_decay", 0.05),
                           ema_momentum=cfg.get("ema", 0.999), seed=cfg["seed"])
    except (ValueError, SamplingError) as exc:
        raise UsageError(str(exc)) from None


def _model_config(cfg, corpus, **overrides):
    try:
        return preset(cfg["preset"], D_v=corpus.D_v, D_t=corpus.D_t, seed=cfg["seed"], **overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


# -- commands ---------------------------------------------------------------------------

def cmd_gen(cfg, out):
    if cfg["videos"] < 1:
        raise UsageError(f"--videos must be >= 1, got {cfg['videos']}")
    corpus = generate_synthetic_corpus(
        cfg["seed"], cfg["videos"], (cfg["t_min"], cfg["t_max"]),
        (cfg["queries_min"], cfg["queries_max"]), cfg["dv"], cfg["dt"], cfg["snr"],
        K_range=(cfg["k_min"], cfg["k_max"]), moment_length_range=(cfg["len_min"], cfg["len_max"]),
        split=cfg["split"])
    save_corpus(corpus, out)
    stats = corpus.stats()
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True))
    print(json.dumps(stats, indent=1, sort_keys=True))
    return 0


def cmd_train(cfg, out):
    corpus = _load(cfg["corpus"])
    train_cfg = _train_config(cfg)
    model_cfg = _model_config(cfg, corpus, fusion=cfg["fusion"], placement=cfg["placement"])
    cfg["model"] = model_cfg.to_dict()
    cfg["train"] = train_cfg.to_dict()
    _prepare_out(out, cfg, "train")
    result = train(corpus, model_cfg, train_cfg, log_path=out / "metrics.csv",
                   progress=lambda e, h: log.info("epoch %d loss %.4f", e, h[-1]["loss"]))
    meta = {"train": train_cfg.to_dict(), "steps": len(result.history)}
    save_checkpoint(out / "checkpoint.vgck", result.model, state=result.ema_state,
                    metadata={**meta, "weights": "ema"})
    save_checkpoint(out / "checkpoint_raw.vgck", result.model, metadata={**meta, "weights": "raw"})
    last = result.history[-1]
    print(f"trained {len(result.history)} steps; final loss {last['loss']:.4f}; "
          f"macs_per_query {last['macs_per_query']:.0f}")
    return 0


def _report_json(report, path):
    d = report.to_dict()
    d.pop("timing", None)
    path.write_text(json.dumps(d, indent=1))


def cmd_eval(cfg, out):
    corpus = _load(cfg["corpus"])
    try:
        ks, tious = check_ks(cfg["ks"]), check_thresholds(cfg["tious"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if cfg["ground_truth"]:
        inf_cfg = InferenceConfig(T_w=cfg["tw"] or 128, ks=ks, tious=tious)
        report = build_report(ground_truth_predictions(corpus), corpus, inf_cfg)
    else:
        if not cfg.get("checkpoint"):
            raise UsageError("eval needs --checkpoint unless --ground-truth is given")
        ck = Path(cfg["checkpoint"])
        if ck.is_dir():
            ck = ck / ("checkpoint.vgck" if cfg["weights"] == "ema" else "checkpoint_raw.vgck")
        if not ck.is_file():
            raise UsageError(f"checkpoint not found: {ck}")
        model, meta = load_checkpoint(ck)
        tw = cfg["tw"] or meta.get("train", {}).get("T_w", 128)
        inf_cfg = InferenceConfig(T_w=tw, ks=ks, tious=tious)
        report = evaluate(model, corpus, inf_cfg, cached=cfg["cached"] == "on")
    cfg["inference"] = inf_cfg.to_dict()
    _prepare_out(out, cfg, "eval")
    _report_json(report, out / "report.json")
    report.write_csv(out / "report.csv")
    (out / "timing.json").write_text(json.dumps(report.timing, indent=1))
    for (k, th), v in report.recall.items():
        print(f"R@{k} tIoU={th:g}: {v:.4f}")
    return 0


def cmd_bench(cfg, out):
    if cfg.get("corpus"):
        corpus = _load(cfg["corpus"])
    else:
        corpus = generate_synthetic_corpus(cfg["seed"], 1, (max(cfg["tws"]),) * 2, (1, 1))
    model_cfg = _model_config(cfg, corpus)
    _prepare_out(out, cfg, "bench")
    report = verify_against_runtime(corpus, model_cfg, Ns=tuple(cfg["ns"]), B_qs=tuple(cfg["bqs"]),
                                    T_ws=tuple(cfg["tws"]), K=cfg["tokens"],
                                    video_snippets=cfg["snippets"], seed=cfg["seed"])
    report.write_csv(out / "bench.csv")
    comps = {str(T_w): {"C_g": c.C_g, "C_h": c.C_h, "C_F": c.C_F, "alpha": c.alpha,
                        "breakdown_percent": c.breakdown(),
                        "approx_ratio_by_N": {str(n): r_inf_approx(c.alpha, n) for n in cfg["ns"]},
                        "early_pair_macs": report.early_pair_macs[T_w],
                        "parameters": c.parameters}
             for T_w, c in report.components.items()}
    (out / "components.json").write_text(json.dumps(comps, indent=1))
    for mode in ("inference", "train", "alpha0"):
        print(f"{mode}: max relative gap {report.max_relative_gap(mode):.4%}")
    return 0


ABLATION_COLUMNS = ("variant", "fusion", "placement", "parameters", "macs_encoder_per_query",
                    "macs_per_query", "macs_total", "train_seconds")


def cmd_ablate(cfg, out):
    corpus = _load(cfg["corpus"])
    train_cfg = _train_config(cfg)
    try:
        ks, tious = check_ks(cfg["ks"]), check_thresholds(cfg["tious"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model_cfgs = [(name, _model_config(cfg, corpus, fusion=f, placement=p))
                  for name, f, p in ABLATION_VARIANTS]
    _prepare_out(out, cfg, "ablate")
    inf_cfg = InferenceConfig(T_w=train_cfg.T_w, ks=ks, tious=tious)
    rows = []
    for name, model_cfg in model_cfgs:
        t0 = time.perf_counter()
        result = train(corpus, model_cfg, train_cfg, rng=np.random.default_rng(cfg["seed"]))
        seconds = time.perf_counter() - t0
        report = evaluate(result.ema_model(), corpus, inf_cfg)
        n = len(corpus.queries)
        row = {"variant": name, "fusion": model_cfg.fusion, "placement": model_cfg.placement,
               "parameters": result.model.num_parameters(),
               "macs_encoder_per_query": report.macs["encoder"] / n,
               "macs_per_query": report.macs["total"] / n,
               "macs_total": report.macs["total"], "train_seconds": round(seconds, 3)}
        for (k, th), v in report.recall.items():
            row[f"R@{k}_tiou{th:g}"] = v
        rows.append(row)
        log.info("%s done in %.1fs", name, seconds)
    fields = list(ABLATION_COLUMNS) + [c for c in rows[0] if c not in ABLATION_COLUMNS]
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['variant']:>13}  macs/query {r['macs_per_query']:>14.0f}  "
              + "  ".join(f"{c}={r[c]:.3f}" for c in fields[len(ABLATION_COLUMNS):]))
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench,
            "ablate": cmd_ablate}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = resolve(args)
        out = Path(args.out)
        if args.command == "gen":
            out = _prepare_out(out, cfg, "gen")
        return COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    except (CorpusError, ConfigError, SamplingError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
