"""Command-line front door: gen, train, attack, eval, report.

Each run directory is append-only and self-describing: it carries the
resolved configuration (``config.resolved``) next to every artifact, so
any number in any report traces back to exact settings. Outputs are
byte-deterministic for a fixed (config, seed), except for the timestamp
comment inside SVG plots.

Exit codes: 0 success, 2 configuration error, 3 missing input file,
4 training divergence, 1 anything else. Failures also emit a one-line
JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, craft
from .config import ConfigError, ExperimentConfig, load_config
from .data import generate_dataset, load_dataset, save_dataset
from .metrics import evaluate, filter_correct_predictions
from .model import DivergenceError, load_checkpoint, init_params, save_checkpoint
from .report import csv_header, csv_row, markdown_table, parse_csv, svg_line_plot
from .training import train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DIVERGED = 4

OUT_ROOT_ENV = "AVASDLAB_OUT"


class MissingInputError(FileNotFoundError):
    pass


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def _resolve_out(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.values["run"]["out"]:
        return Path(cfg.values["run"]["out"])
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    stem = Path(args.config).stem if args.config else "run"
    return Path(root) / stem


def _prepare(args):
    """Load config, apply CLI overrides, create the run directory."""
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.values["run"]["seed"] = args.seed
    if args.jobs is not None:
        cfg.values["run"]["jobs"] = args.jobs
    out = _resolve_out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.to_text(), encoding="utf-8")
    return cfg, out


def _dataset_path(cfg, out: Path) -> Path:
    p = Path(cfg.values["dataset"]["path"])
    return p if p.is_absolute() else out / p


def _checkpoint_path(cfg, out: Path) -> Path:
    p = Path(cfg.values["model"]["checkpoint"])
    return p if p.is_absolute() else out / p


def _load_dataset_or_fail(cfg, out: Path):
    path = _dataset_path(cfg, out)
    if not path.exists():
        raise MissingInputError(f"dataset file not found: {path} (run `gen` first)")
    return load_dataset(path)


def _split(cfg, ds):
    n_train = max(1, int(round(len(ds.samples) * cfg.values["dataset"]["train_fraction"])))
    n_train = min(n_train, len(ds.samples) - 1) if len(ds.samples) > 1 else n_train
    return ds.samples[:n_train], ds.samples[n_train:]


def cmd_gen(args) -> int:
    cfg, out = _prepare(args)
    d = cfg.values["dataset"]
    ds = generate_dataset(d["seed"], d["n_samples"], d["case_mix"], cfg.generator_spec())
    save_dataset(ds, _dataset_path(cfg, out))
    print(f"wrote {len(ds.samples)} samples to {_dataset_path(cfg, out)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, out = _prepare(args)
    ds = _load_dataset_or_fail(cfg, out)
    train_samples, _ = _split(cfg, ds)
    params = init_params(cfg.model_config())
    result = train(params, train_samples, cfg.train_config())
    t = cfg.values["train"]
    save_checkpoint(result.params, _checkpoint_path(cfg, out), train_meta={
        "loss_mode": t["loss_mode"], "weights": list(t["weights"]), "seed": t["seed"],
        "epochs": t["epochs"], "embedding_source": t["embedding_source"],
    })
    curve_path = out / "loss_curve.csv"
    lines = ["epoch,loss"] + [f"{i},{repr(v)}" for i, v in enumerate(result.loss_curve)]
    curve_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"trained {t['epochs']} epochs (loss {result.loss_curve[0]:.4f} -> "
          f"{result.loss_curve[-1]:.4f}); checkpoint at {_checkpoint_path(cfg, out)}")
    return EXIT_OK


def _cell_name(a: AttackConfig) -> str:
    eps = repr(a.eps_av).replace(".", "p")
    return f"{a.method}_{a.modality}_{a.scenario.replace('-', '')}_eps{eps}_seed{a.seed}"


def _attack_samples(cfg, ds):
    _, eval_samples = _split(cfg, ds)
    cap = cfg.values["attack"]["max_samples"]
    if cap and cap < len(eval_samples):
        # evenly spaced subset keeps the case mix representative
        idx = np.linspace(0, len(eval_samples) - 1, cap).round().astype(int)
        eval_samples = [eval_samples[i] for i in sorted(set(idx.tolist()))]
    return eval_samples


def cmd_attack(args) -> int:
    cfg, out = _prepare(args)
    ds = _load_dataset_or_fail(cfg, out)
    ckpt = _checkpoint_path(cfg, out)
    if not ckpt.exists():
        raise MissingInputError(f"checkpoint not found: {ckpt} (run `train` first)")
    params, _ = load_checkpoint(ckpt)
    samples = _attack_samples(cfg, ds)
    attack_dir = out / "attacks"
    attack_dir.mkdir(exist_ok=True)
    for cell in cfg.attack_grid():
        records = []
        for i, s in enumerate(samples):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cell.seed, i])))
            pair = craft(params, s.audio, s.visual, s.labels, cell, rng=rng)
            records.append({
                "index": i,
                "delta_audio": [[float(x) for x in row] for row in pair.delta_a],
                "delta_visual": [[float(x) for x in row] for row in pair.delta_v],
                "objective_trace": [float(x) for x in pair.objective_trace],
                "final_loss": float(pair.final_loss),
            })
        path = attack_dir / f"{_cell_name(cell)}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"cell": _cell_name(cell), "n": len(records)}) + "\n")
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        print(f"wrote {len(records)} adversarial pairs to {path}")
    return EXIT_OK


def _eval_cell(payload):
    params, substitute, samples, cell, model_label, loss_mode = payload
    rep = evaluate(params, samples, cell, craft_params=substitute)
    row = {
        "model": model_label,
        "loss_mode": loss_mode,
        "attack_method": cell.method if cell is not None else "none",
        "scenario": cell.scenario if cell is not None else "-",
        "modality": cell.modality if cell is not None else "-",
        "eps_av": cell.eps_av if cell is not None else 0.0,
        "map": rep.map,
        "ecr_a": "" if rep.ecr_a is None else rep.ecr_a,
        "ecr_v": "" if rep.ecr_v is None else rep.ecr_v,
        "seed": cell.seed if cell is not None else 0,
    }
    return row, rep


def cmd_eval(args) -> int:
    cfg, out = _prepare(args)
    ds = _load_dataset_or_fail(cfg, out)
    ckpt = _checkpoint_path(cfg, out)
    if not ckpt.exists():
        raise MissingInputError(f"checkpoint not found: {ckpt} (run `train` first)")
    params, meta = load_checkpoint(ckpt)
    substitute = None
    sub_path = cfg.values["attack"]["substitute_checkpoint"]
    if sub_path:
        sub_file = Path(sub_path) if Path(sub_path).is_absolute() else out / sub_path
        if not sub_file.exists():
            raise MissingInputError(f"substitute checkpoint not found: {sub_file}")
        substitute, _ = load_checkpoint(sub_file)
    samples = _attack_samples(cfg, ds)
    prefilter = cfg.values["eval"]["prefilter_checkpoints"]
    if prefilter:
        models = [params]
        for entry in prefilter:
            p = Path(entry) if Path(entry).is_absolute() else out / entry
            if not p.exists():
                raise MissingInputError(f"prefilter checkpoint not found: {p}")
            models.append(load_checkpoint(p)[0])
        samples = filter_correct_predictions(models, samples,
                                             threshold=cfg.values["eval"]["threshold"])
        if not samples or not any(s.labels.any() for s in samples):
            raise MissingInputError("prefilter left no scoreable samples "
                                    "(need at least one speaking frame)")
    model_label = out.name
    loss_mode = meta.get("loss_mode", "ce")

    jobs = max(1, cfg.values["run"]["jobs"])
    payloads = [(params, substitute, samples, cell, model_label, loss_mode)
                for cell in cfg.attack_grid()]
    payloads.insert(0, (params, None, samples, None, model_label, loss_mode))  # clean row
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_cell, payloads))
    else:
        results = [_eval_cell(p) for p in payloads]

    reports_dir = out / "reports"
    reports_dir.mkdir(exist_ok=True)
    lines = [csv_header()]
    for (row, rep), payload in zip(results, payloads):
        cell = payload[3]
        name = _cell_name(cell) if cell is not None else "clean"
        (reports_dir / f"eval_{name}.json").write_text(
            json.dumps(rep.to_json_dict(), sort_keys=True) + "\n", encoding="utf-8")
        lines.append(csv_row(row))
    (reports_dir / "eval.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(results)} evaluation rows to {reports_dir / 'eval.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for run_dir in args.run_dirs:
        csv_path = Path(run_dir) / "reports" / "eval.csv"
        if not csv_path.exists():
            raise MissingInputError(f"no evaluation CSV in {run_dir} (run `eval` first)")
        rows.extend(parse_csv(csv_path.read_text(encoding="utf-8")))
    out = Path(args.out) if args.out else Path("report_out")
    out.mkdir(parents=True, exist_ok=True)

    rows.sort(key=lambda r: (r["model"], r["attack_method"], r["modality"],
                             r["scenario"], r["eps_av"], r["seed"]))
    (out / "comparison.md").write_text(
        markdown_table(rows, caption="Model comparison under attack"), encoding="utf-8")

    series: dict = {}
    for r in rows:
        if r["attack_method"] == "none":
            continue
        label = f"{r['model']}/{r['attack_method']}/{r['modality']}"
        series.setdefault(label, {}).setdefault(r["eps_av"], []).append(r["map"])
    averaged = {label: [(eps, sum(v) / len(v)) for eps, v in sorted(pts.items())]
                for label, pts in series.items()}
    (out / "map_vs_eps.svg").write_text(
        svg_line_plot(averaged, title="mAP under attack vs budget"), encoding="utf-8")
    print(f"wrote {out / 'comparison.md'} and {out / 'map_vs_eps.svg'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avasdlab",
        description="Audio-visual speaker-detection robustness laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--jobs", type=int, default=None, help="override [run] jobs")

    for name, fn, doc in (
            ("gen", cmd_gen, "generate the synthetic dataset"),
            ("train", cmd_train, "train a model per the [train] section"),
            ("attack", cmd_attack, "craft adversarial-pair archives for the attack grid"),
            ("eval", cmd_eval, "evaluate the checkpoint over the attack grid")):
        p = sub.add_parser(name, help=doc)
        common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("report", help="aggregate run directories into a table and plot")
    p.add_argument("run_dirs", nargs="+", help="run directories with reports/eval.csv")
    common(p, needs_config=False)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (MissingInputError, FileNotFoundError) as exc:
        return _fail("missing-input", str(exc), EXIT_MISSING_INPUT)
    except DivergenceError as exc:
        return _fail("divergence", str(exc), EXIT_DIVERGED)
    except Exception as exc:  # noqa: BLE001 - map anything else to the generic record
        return _fail("error", f"{type(exc).__name__}: {exc}", EXIT_ERROR)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
