"""Command-line pipeline: synth -> prepare -> train -> generate -> eval -> report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import transport
from .celleval import (
    EvalConfig,
    METRIC_COLUMNS,
    MetricReport,
    PerturbationGroup,
    evaluate,
    match_control_count,
)
from .checkpoint import load_arrays
from .config import RunConfig, parse_holdout
from .datastore import (
    Dataset,
    GroupStore,
    SparseBlock,
    SynthConfig,
    load_manifest,
    preprocess,
    read_control,
    read_group,
    select_hvg,
    subset_genes,
    synth_generate,
    truth_table_csv,
    write_shards,
)
from .errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    DataError,
    NumericError,
)
from .train import build_model, train_run

TRUTH_CSV = "truth_de.csv"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellshift",
                                     description="virtual-cell perturbation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted effects")
    _add_common(p)
    p.add_argument("--genes", type=int, default=100)
    p.add_argument("--celltypes", type=int, default=3)
    p.add_argument("--perturbations", type=int, default=20)
    p.add_argument("--batches", type=int, default=2)
    p.add_argument("--cells", type=int, default=256)
    p.add_argument("--de-genes", type=int, default=10)
    p.add_argument("--shift", type=float, default=2.0)
    p.add_argument("--dispersion", type=float, default=0.5)
    p.add_argument("--batch-scale", type=float, default=0.1)

    p = sub.add_parser("prepare", help="preprocess counts and select variable genes")
    _add_common(p)
    p.add_argument("--data", required=True, help="raw dataset directory")
    p.add_argument("--hvg", type=int, default=None, help="genes to keep (default: all)")
    p.add_argument("--target-sum", type=float, default=1e4)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="run config file (ini)")
    p.add_argument("--variant", choices=("xx", "xv", "vx", "vv"), default=None)
    p.add_argument("--pooling", choices=("mean", "token", "seed"), default=None)
    p.add_argument("--prior", choices=("control", "gaussmix", "maskctrl", "maskmix"),
                   default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--holdout", default=None,
                   help="celltype:perturbation id pairs excluded from training, "
                        "e.g. '0:3,1:7'")

    p = sub.add_parser("generate", help="predict perturbed populations from controls")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared dataset with controls")
    p.add_argument("--conditions", default=None,
                   help="celltype:perturbation pairs to predict (default: all)")
    p.add_argument("--steps", type=int, default=None, help="Euler steps for v-pred variants")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--ctrl", default=None, help="control store (default: truth dir)")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("report", help="merge run reports into a comparison table")
    p.add_argument("runs", nargs="+", help="run directories holding record.json + report.json")
    p.add_argument("--out", required=True, help="merged csv path")
    return parser


def cmd_synth(args) -> int:
    cfg = SynthConfig(genes=args.genes, celltypes=args.celltypes,
                      perturbations=args.perturbations, batches=args.batches,
                      cells_per_group=args.cells, de_genes=args.de_genes,
                      shift=args.shift, dispersion=args.dispersion,
                      batch_scale=args.batch_scale, seed=args.seed or 0)
    dataset, truth = synth_generate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_shards(dataset, out)
    (out / TRUTH_CSV).write_text(truth_table_csv(truth))
    print(f"wrote {len(dataset.pert_groups)} perturbation groups to {out}")
    return 0


def cmd_prepare(args) -> int:
    data_dir = Path(args.data)
    manifest = load_manifest(data_dir)
    processed_pert = {}
    processed_ctrl = {}
    for key in sorted(manifest.conditions):
        processed_pert[key] = preprocess(read_group(manifest, data_dir, key),
                                         args.target_sum)
    for key in sorted(manifest.controls):
        processed_ctrl[key] = preprocess(read_control(manifest, data_dir, key),
                                         args.target_sum)
    keep = args.hvg if args.hvg is not None else manifest.n_genes
    idx = select_hvg(list(processed_pert.values()) + list(processed_ctrl.values()), keep)
    genes = [manifest.genes[i] for i in idx]
    dataset = Dataset(
        genes=genes, celltypes=manifest.celltypes,
        perturbations=manifest.perturbations, batches=manifest.batches,
        pert_groups={k: subset_genes(b, idx) for k, b in processed_pert.items()},
        control_groups={k: subset_genes(b, idx) for k, b in processed_ctrl.items()},
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_shards(dataset, out)
    truth = data_dir / TRUTH_CSV
    if truth.exists():
        (out / TRUTH_CSV).write_text(truth.read_text())
    print(f"prepared {len(genes)} genes into {out}")
    return 0


def _resolve_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.pooling is not None:
        overrides["pooling"] = args.pooling
    if args.prior is not None:
        overrides["prior"] = args.prior
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.holdout is not None:
        overrides["holdout"] = parse_holdout(args.holdout)
    overrides["data_dir"] = args.data
    overrides["out_dir"] = args.out
    return cfg.replace(**overrides)


def cmd_train(args) -> int:
    cfg = _resolve_run_config(args)
    store = GroupStore(load_manifest(cfg.data_dir), cfg.data_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.resolved.ini")
    record = train_run(cfg, store, out)
    final = record.epochs[-1]
    print(f"trained {cfg.epochs} epochs; final losses "
          f"mse={final['mse']:.4f} mmd={final['mmd']:.6f} flow={final['flow']:.4f}")
    return 0


def _load_model_from_checkpoint(ckpt_path, store: GroupStore):
    state, meta = load_arrays(ckpt_path)
    try:
        cfg = RunConfig(**_config_kwargs_from_meta(meta))
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint metadata unusable: {exc}") from exc
    model = build_model(cfg, store)
    model.params.load_state(state)
    return model, cfg


def _config_kwargs_from_meta(meta: dict) -> dict:
    kwargs = dict(meta)
    kwargs["holdout"] = tuple(tuple(pair) for pair in kwargs.get("holdout", ()))
    kwargs["mmd_bandwidths"] = tuple(kwargs.get("mmd_bandwidths", ()))
    return kwargs


def _requested_conditions(manifest, pairs_text):
    keys = sorted(manifest.conditions)
    if pairs_text is None:
        return keys
    wanted = set(parse_holdout(pairs_text))
    keys = [k for k in keys if (k[0], k[1]) in wanted]
    missing = wanted - {(k[0], k[1]) for k in keys}
    if missing:
        raise DataError(f"requested conditions not in manifest: {sorted(missing)}")
    return keys


def cmd_generate(args) -> int:
    data_dir = Path(args.data)
    manifest = load_manifest(data_dir)
    store = GroupStore(manifest, data_dir)
    model, run_cfg = _load_model_from_checkpoint(args.checkpoint, store)
    seed = args.seed if args.seed is not None else run_cfg.seed
    steps = args.steps if args.steps is not None else run_cfg.euler_steps
    variant = transport.JiTVariant.parse(run_cfg.variant)
    prior = transport.PriorMode(kind=run_cfg.prior, mix=run_cfg.prior_mix,
                                mask_rate=run_cfg.prior_mask_rate)

    pred_groups = {}
    set_size = run_cfg.set_size
    for key in _requested_conditions(manifest, args.conditions):
        c, p, b = key
        n = manifest.conditions[key].cells
        rng = np.random.default_rng((seed, c, p, b))
        ctrl = match_control_count(store.control(c, b), n, rng)
        # the model is trained on sets of set_size cells; feed it the
        # population in sets of that size so attention operates in-regime
        even = (n // set_size) * set_size
        pieces = []
        if even:
            stacked = ctrl[:even].reshape(-1, set_size, ctrl.shape[1])
            cond = transport.ConditionBatch(
                celltype=np.full(stacked.shape[0], c),
                perturbation=np.full(stacked.shape[0], p),
                batch=np.full(stacked.shape[0], b))
            pieces.append(model.generate(stacked, cond, variant, prior,
                                         run_cfg.pooling, steps, rng)
                          .reshape(-1, ctrl.shape[1]))
        if even < n:
            cond = transport.ConditionBatch(celltype=np.array([c]),
                                            perturbation=np.array([p]),
                                            batch=np.array([b]))
            pieces.append(model.generate(ctrl[None, even:], cond, variant, prior,
                                         run_cfg.pooling, steps, rng)[0])
        pred = np.concatenate(pieces)
        pred_groups[key] = SparseBlock.from_dense(pred.astype(np.float32))
    dataset = Dataset(genes=manifest.genes, celltypes=manifest.celltypes,
                      perturbations=manifest.perturbations, batches=manifest.batches,
                      pert_groups=pred_groups, control_groups={})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_shards(dataset, out)
    print(f"wrote predictions for {len(pred_groups)} conditions to {out}")
    return 0


def build_eval_groups(pred_dir, truth_dir, ctrl_dir=None, seed: int = 0):
    """Assemble evaluation groups: one per predicted condition, controls
    matched on (cell type, batch) and equalized to the truth group size."""
    pred_dir = Path(pred_dir)
    truth_dir = Path(truth_dir)
    ctrl_dir = Path(ctrl_dir) if ctrl_dir else truth_dir
    pred_manifest = load_manifest(pred_dir)
    truth_manifest = load_manifest(truth_dir)
    ctrl_manifest = load_manifest(ctrl_dir)
    if pred_manifest.genes != truth_manifest.genes or pred_manifest.genes != ctrl_manifest.genes:
        raise DataError("prediction, truth, and control gene universes disagree")
    groups = []
    for key in sorted(pred_manifest.conditions):
        c, p, b = key
        pred = read_group(pred_manifest, pred_dir, key).to_dense()
        pert = read_group(truth_manifest, truth_dir, key).to_dense()
        ctrl = read_control(ctrl_manifest, ctrl_dir, (c, b)).to_dense()
        rng = np.random.default_rng((seed, c, p, b))
        n = pert.shape[0]
        ctrl = match_control_count(ctrl, n, rng)
        if pred.shape[0] != n:
            pred = match_control_count(pred, n, rng)
        label = (f"{truth_manifest.celltypes[c]}|{truth_manifest.perturbations[p]}"
                 f"|{truth_manifest.batches[b]}")
        groups.append(PerturbationGroup(key=label, pert=pert, ctrl=ctrl, pred=pred))
    return groups


def cmd_eval(args) -> int:
    groups = build_eval_groups(args.pred, args.truth, args.ctrl,
                               seed=args.seed if args.seed is not None else 0)
    report = evaluate(groups, EvalConfig(n_jobs=args.jobs))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    print(f"evaluated {len(groups)} conditions; mean PDCorr "
          f"{report.mean['PDCorr']:.4f}, DEOver "
          + (f"{report.mean['DEOver']:.4f}" if report.mean["DEOver"] is not None else "n/a"))
    return 0


def cmd_report(args) -> int:
    rows = []
    for run in args.runs:
        run = Path(run)
        try:
            record = json.loads((run / "record.json").read_text())
            report = MetricReport.from_json((run / "report.json").read_text())
        except (OSError, ValueError, KeyError) as exc:
            print(f"warning: skipping {run}: {exc}", file=sys.stderr)
            continue
        cfg = record.get("config", {})
        row = {
            "run": str(run),
            "variant": cfg.get("variant", ""),
            "pooling": cfg.get("pooling", ""),
            "prior": cfg.get("prior", ""),
        }
        row.update({k: ("" if v is None else v) for k, v in report.mean.items()})
        rows.append(row)
    if not rows:
        print("warning: no usable runs", file=sys.stderr)
        return 0
    rows.sort(key=lambda r: (-(r["PDCorr"] if r["PDCorr"] != "" else -2.0), r["run"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["run", "variant", "pooling", "prior"] + list(METRIC_COLUMNS)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row.get(h, "") for h in header])
    print(f"merged {len(rows)} runs into {out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
