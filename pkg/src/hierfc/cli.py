"""Command-line surface: ingest, train, evaluate, ablate, theory-sim, export-basis.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Failures
print a single line `error: <ExceptionName>: <message>` to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    load_run_config,
    model_config,
    require_data_fields,
    split_spec,
    train_config,
)
from .data import DataError, load_panel, standardize
from .hierarchy import HierarchyError
from .model import (
    MODES,
    ModelError,
    ModelParams,
    bd_basis_values,
    init_params,
    regularizer_value,
)
from .representatives import SelectionError, build_z, select_representatives
from .theory import TheoryError, mc_lemma1, mc_theorem1
from .training import TrainingError, evaluate, train

_RUNTIME_ERRORS = (
    DataError,
    HierarchyError,
    SelectionError,
    ModelError,
    TrainingError,
    TheoryError,
    CheckpointError,
    OSError,
)

_ABLATION_MODES = ("full", "no_reg", "tvar_only", "bd_only")


# ------------------------------------------------------------ shared pieces


def _add_override_flags(sp, with_mode: bool = True):
    sp.add_argument("--values", help="wide values CSV (leaf-only or full panel)")
    sp.add_argument("--hierarchy", help="child_id,parent_id edge CSV")
    sp.add_argument("--covariates", help="covariate CSV aligned with values rows")
    sp.add_argument("--missing", choices=("error", "ffill"),
                    help="NaN policy override")
    sp.add_argument("--history", type=int, metavar="H", help="history length")
    sp.add_argument("--horizon", type=int, metavar="F", help="forecast horizon")
    sp.add_argument(
        "--splits", metavar="SPEC",
        help="train_end:val_start-val_end:test_start-test_end (1-based inclusive)",
    )
    sp.add_argument("--rolling", type=int, metavar="K",
                    help="rolling evaluation windows per segment")
    sp.add_argument("--nmf-rank", type=int, dest="nmf_rank", metavar="R",
                    help="representative series count")
    sp.add_argument("--metric-scale", dest="metric_scale",
                    choices=("rescaled", "raw"), help="metric reporting scale")
    sp.add_argument("--seed", type=int, help="training / init seed")
    if with_mode:
        sp.add_argument("--mode", choices=sorted(MODES), help="model variant")


def _config_from_args(args, need_splits: bool = True) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = apply_overrides(
        cfg,
        values=getattr(args, "values", None),
        hierarchy=getattr(args, "hierarchy", None),
        covariates=getattr(args, "covariates", None),
        missing=getattr(args, "missing", None),
        history=getattr(args, "history", None),
        horizon=getattr(args, "horizon", None),
        splits=getattr(args, "splits", None),
        rolling=getattr(args, "rolling", None),
        nmf_rank=getattr(args, "nmf_rank", None),
        metric_scale=getattr(args, "metric_scale", None),
        seed=getattr(args, "seed", None),
        mode=getattr(args, "mode", None),
    )
    require_data_fields(cfg, need_splits=need_splits)
    return cfg


def _prepare(cfg: RunConfig, rep_indices=None):
    """Load, rescale, standardize, select representatives, size the model."""
    split = split_spec(cfg)
    raw = load_panel(cfg.values, cfg.hierarchy, cfg.covariates, missing=cfg.missing)
    split.validate_for(raw.T)
    panel = standardize(raw, split)
    reps = None
    z = None
    if cfg.nmf_rank > 0:
        if rep_indices is not None:
            indices = [int(i) for i in rep_indices]
            if len(indices) != cfg.nmf_rank:
                raise ConfigError(
                    f"checkpoint has {len(indices)} representatives but config "
                    f"nmf_rank is {cfg.nmf_rank}"
                )
            for i in indices:
                if not (0 <= i < panel.N) or not panel.tree.is_leaf(i):
                    raise ConfigError(f"checkpoint representative {i} is not a leaf")
            z = panel.values[:, indices].copy()
            reps = indices
        else:
            selected = select_representatives(panel, cfg.nmf_rank, split.train_end)
            z = build_z(panel, selected)
            reps = list(selected.indices)
    mconf = model_config(cfg, panel.D, panel.N)
    return panel, split, z, reps, mconf


def _params_from_checkpoint(tensors: dict, mconf) -> ModelParams:
    expected = init_params(mconf, seed=0)
    exp_names = set(expected.tensors)
    got_names = set(tensors)
    if exp_names != got_names:
        missing = sorted(exp_names - got_names)
        extra = sorted(got_names - exp_names)
        raise ConfigError(
            f"checkpoint incompatible with config: missing {missing}, extra {extra}"
        )
    for name, arr in tensors.items():
        want = expected[name].data.shape
        if arr.shape != want:
            raise ConfigError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, expected {want}"
            )
    return ModelParams({name: Tensor(tensors[name]) for name in expected.tensors})


def _epoch_logger(quiet: bool):
    if quiet:
        return None

    def log(rec):
        print(
            f"epoch {rec.epoch}: train_loss={rec.train_loss:.6g} "
            f"val_mean_wape={rec.val_mean_wape:.6g} lr={rec.lr:.6g}",
            file=sys.stderr,
        )

    return log


def _rep_manifest(panel, reps):
    if reps is None:
        return None
    return {"indices": list(reps), "names": [panel.tree.names[i] for i in reps]}


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    cfg = _config_from_args(args, need_splits=False)
    panel = load_panel(cfg.values, cfg.hierarchy, cfg.covariates, missing=cfg.missing)
    parts = [
        f"T={panel.T}", f"N={panel.N}", f"D={panel.D}",
        f"depth={panel.tree.depth}", f"leaves={len(panel.tree.leaves)}",
        f"filled_cells={panel.provenance.get('filled_cells', 0)}",
    ]
    if cfg.splits is not None:
        split = split_spec(cfg)
        split.validate_for(panel.T)
        train_windows = split.train_end - cfg.history - cfg.horizon + 1
        if train_windows < 1:
            raise DataError(
                f"train range supports no windows: train_end={split.train_end}, "
                f"H={cfg.history}, F={cfg.horizon}"
            )
        parts.append(f"train_windows={train_windows}")
    print("ok: " + " ".join(parts))
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel, split, z, reps, mconf = _prepare(cfg)
    tconf = train_config(cfg)
    params = init_params(mconf, seed=tconf.seed)
    result = train(params, mconf, tconf, panel, split, z, tree=panel.tree,
                   log=_epoch_logger(args.quiet))
    report = evaluate(result.params, mconf, panel, split, z, "test",
                      metric_scale=cfg.metric_scale)

    (out / "history.csv").write_text(result.history_csv(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    save_checkpoint(
        out / "model.ckpt",
        {name: t.data for name, t in result.params.tensors.items()},
        meta={
            "config": cfg.to_dict(),
            "representatives": reps if reps is not None else [],
            "version": __version__,
        },
    )
    reg_at_best = None
    if mconf.uses_bd:
        reg_at_best = regularizer_value(result.params["embed.table"].data, panel.tree)
    manifest = {
        "version": __version__,
        "command": "train",
        "config": cfg.to_dict(),
        "seed": tconf.seed,
        "representatives": _rep_manifest(panel, reps),
        "param_count": result.params.count,
        "epochs_run": len(result.history),
        "best_epoch": result.best_epoch,
        "best_val_mean_wape": result.best_val_mean_wape,
        "stopped_early": result.stopped_early,
        "clip_events": result.clip_events,
        "regularizer_at_best": reg_at_best,
        "history": [dataclasses.asdict(r) for r in result.history],
        "test_mean_wape": report.mean_wape,
        "test_mean_smape": report.mean_smape,
        "test_mean_coherence": report.mean_coherence,
        "data_provenance": panel.provenance,
    }
    _write_json(out / "manifest.json", manifest)
    print(
        f"run complete: best_epoch={result.best_epoch} "
        f"best_val_mean_wape={result.best_val_mean_wape:.6g} "
        f"test_mean_wape={report.mean_wape:.6g} out={out}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    tensors, meta = load_checkpoint(args.checkpoint)
    rep_indices = meta.get("representatives") or None
    panel, split, z, reps, mconf = _prepare(cfg, rep_indices=rep_indices)
    params = _params_from_checkpoint(tensors, mconf)
    report = evaluate(params, mconf, panel, split, z, args.segment,
                      metric_scale=cfg.metric_scale)
    csv_text = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(
            f"{args.segment} mean_wape={report.mean_wape:.6g} "
            f"mean_smape={report.mean_smape:.6g} out={args.out}"
        )
    else:
        sys.stdout.write(csv_text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel, split, z, reps, mconf = _prepare(cfg)
    tconf = train_config(cfg)
    levels = list(range(panel.tree.depth + 1))
    reports = {}
    summaries = {}
    for mode in _ABLATION_MODES:
        mcfg = dataclasses.replace(mconf, mode=mode)
        params = init_params(mcfg, seed=tconf.seed)
        result = train(params, mcfg, tconf, panel, split, z, tree=panel.tree,
                       log=_epoch_logger(args.quiet))
        report = evaluate(result.params, mcfg, panel, split, z, "test",
                          metric_scale=cfg.metric_scale)
        reports[mode] = report
        summaries[mode] = {
            "best_epoch": result.best_epoch,
            "best_val_mean_wape": result.best_val_mean_wape,
            "epochs_run": len(result.history),
            "test_mean_wape": report.mean_wape,
            "test_mean_smape": report.mean_smape,
            "test_mean_coherence": report.mean_coherence,
        }
        print(
            f"mode {mode}: test_mean_wape={report.mean_wape:.6g} "
            f"test_mean_smape={report.mean_smape:.6g}"
        )

    header = (
        ["mode"]
        + [f"wape_{lv}" for lv in levels] + ["wape_mean"]
        + [f"smape_{lv}" for lv in levels] + ["smape_mean"]
    )
    lines = [",".join(header)]
    for mode in _ABLATION_MODES:
        rep = reports[mode]
        cells = [mode]
        cells += [f"{rep.wape_by_level[lv]:.10g}" for lv in levels]
        cells.append(f"{rep.mean_wape:.10g}")
        cells += [f"{rep.smape_by_level[lv]:.10g}" for lv in levels]
        cells.append(f"{rep.mean_smape:.10g}")
        lines.append(",".join(cells))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = {
        "version": __version__,
        "command": "ablate",
        "config": cfg.to_dict(),
        "seed": tconf.seed,
        "representatives": _rep_manifest(panel, reps),
        "modes": summaries,
        "data_provenance": panel.provenance,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"ablation complete: out={out}")
    return 0


def _parse_betas(text: str):
    try:
        betas = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"invalid --betas value {text!r}: {exc}") from exc
    if not betas:
        raise ConfigError(f"invalid --betas value {text!r}: empty")
    return betas


def cmd_theory_sim(args) -> int:
    if args.preset == "theorem1":
        trials = args.trials if args.trials is not None else 500
        sigma = args.sigma if args.sigma is not None else 1.0
        T = args.t if args.t is not None else 200
        K = args.k if args.k is not None else 5
        L = args.l if args.l is not None else 10
        betas = _parse_betas(args.betas)
        result = mc_theorem1(T=T, K=K, L=L, sigma=sigma, betas=betas,
                             trials=trials, seed=args.seed)
        csv_text = result.to_csv()
        summary = []
        for row in result.rows:
            ok = row.emp_reg + 3 * row.se_reg <= row.bound_reg
            summary.append(
                f"beta={row.beta:g}: emp_reg={row.emp_reg:.6g} "
                f"bound_reg={row.bound_reg:.6g} within_bound={ok}"
            )
    else:
        trials = args.trials if args.trials is not None else 200
        sigma = args.sigma if args.sigma is not None else 0.1
        T = args.t if args.t is not None else 200
        K = args.k if args.k is not None else 5
        L = args.l if args.l is not None else 10
        D = args.d if args.d is not None else 50
        result = mc_lemma1(T=T, D_dict=D, K=K, L=L, sigma=sigma,
                           trials=trials, seed=args.seed)
        csv_text = (
            "trials,conditions_met,recovered,recovery_rate,"
            "gamma_min,c_min_min,mean_lambda\n"
            f"{result.trials},{result.conditions_met},{result.recovered},"
            f"{result.recovery_rate:.10g},{result.gamma_min:.10g},"
            f"{result.c_min_min:.10g},{result.mean_lambda:.10g}\n"
        )
        summary = [
            f"recovery_rate={result.recovery_rate:.4g} "
            f"({result.recovered}/{result.conditions_met} recovered, "
            f"gamma_min={result.gamma_min:.4g}, c_min_min={result.c_min_min:.4g})"
        ]
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        for line in summary:
            print(line)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(csv_text)
    return 0


def _parse_span(text: str):
    parts = text.split("-")
    if len(parts) != 2:
        raise ConfigError(f"invalid --span {text!r}: expected start-end")
    try:
        start, end = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"invalid --span {text!r}: {exc}") from exc
    return start, end


def cmd_export_basis(args) -> int:
    cfg = _config_from_args(args)
    tensors, meta = load_checkpoint(args.checkpoint)
    rep_indices = meta.get("representatives") or None
    panel, split, z, reps, mconf = _prepare(cfg, rep_indices=rep_indices)
    if not mconf.uses_bd:
        raise ConfigError(
            f"mode {mconf.mode!r} has no basis decomposition to export"
        )
    params = _params_from_checkpoint(tensors, mconf)
    H, F = mconf.H, mconf.F
    if args.span:
        start, end = _parse_span(args.span)
    else:
        start, end = split.test_range
    if not 1 <= start <= end <= panel.T:
        raise ConfigError(
            f"span {start}-{end} outside data range 1..{panel.T}"
        )
    if start - H < 1:
        raise ConfigError(
            f"span start {start} leaves no room for the {H}-step history"
        )
    if (end - start + 1) % F != 0:
        raise ConfigError(
            f"span length {end - start + 1} must be a multiple of horizon {F}"
        )
    starts = list(range(start - 1, end, F))
    cov = panel.covariates
    enc_rows = []
    for s0 in starts:
        hist_cov = cov[s0 - H: s0]
        enc_rows.append(
            np.concatenate([hist_cov, z[s0 - H: s0]], axis=1)
            if z is not None else hist_cov
        )
    enc_inputs = np.stack(enc_rows)
    xf = np.stack([cov[s0: s0 + F] for s0 in starts])
    basis = bd_basis_values(params, mconf, enc_inputs, xf)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    K = mconf.K
    lines = ["t," + ",".join(f"b_{k + 1}" for k in range(K))]
    ts = []
    flat = []
    for u, s0 in enumerate(starts):
        for f in range(F):
            ts.append(s0 + f + 1)
            flat.append(basis[u, f])
            lines.append(
                f"{s0 + f + 1}," + ",".join(f"{v:.12g}" for v in basis[u, f])
            )
    (out / "basis.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    table = params["embed.table"].data
    emb_lines = ["node," + ",".join(f"theta_{k + 1}" for k in range(K))]
    for i, name in enumerate(panel.tree.names):
        emb_lines.append(name + "," + ",".join(f"{v:.12g}" for v in table[:, i]))
    (out / "embeddings.csv").write_text("\n".join(emb_lines) + "\n", encoding="utf-8")

    if args.svg:
        _write_basis_svg(out / "basis.svg", np.array(ts), np.stack(flat))
    print(
        f"wrote {out / 'basis.csv'} ({len(ts)} rows, K={K}) and "
        f"{out / 'embeddings.csv'} ({panel.N} rows)"
    )
    return 0


def _write_basis_svg(path, ts: np.ndarray, values: np.ndarray) -> None:
    try:
        import matplotlib
    except ImportError as exc:
        raise ConfigError(
            "SVG output requires matplotlib; install the 'plots' extra"
        ) from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8.0, 4.0))
    for k in range(values.shape[1]):
        ax.plot(ts, values[:, k], label=f"b_{k + 1}", linewidth=1.0)
    ax.set_xlabel("t")
    ax.set_ylabel("basis value")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hierfc",
        description="Hierarchical time-series forecasting with a shared "
                    "temporal model and regularized per-series embeddings.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sp = sub.add_parser("ingest", help="validate a panel and report its shape")
    sp.add_argument("--config", help="YAML run config")
    _add_override_flags(sp, with_mode=False)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="train a model and write run artifacts")
    sp.add_argument("--config", required=True, help="YAML run config")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--quiet", action="store_true", help="suppress epoch lines")
    _add_override_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a split segment")
    sp.add_argument("--config", required=True, help="YAML run config")
    sp.add_argument("--checkpoint", required=True, help="model checkpoint file")
    sp.add_argument("--segment", choices=("val", "test"), default="test")
    sp.add_argument("--out", help="write report CSV here instead of stdout")
    _add_override_flags(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="train all model variants and compare")
    sp.add_argument("--config", required=True, help="YAML run config")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--quiet", action="store_true", help="suppress epoch lines")
    _add_override_flags(sp, with_mode=False)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("theory-sim", help="Monte Carlo checks of the linear theory")
    sp.add_argument("--preset", choices=("lemma1", "theorem1"), required=True)
    sp.add_argument("--trials", type=int, help="Monte Carlo trials")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write CSV here instead of stdout")
    sp.add_argument("--t", type=int, help="observations per series")
    sp.add_argument("--k", type=int, help="basis size")
    sp.add_argument("--l", type=int, help="children per root")
    sp.add_argument("--d", type=int, help="dictionary size (lemma1)")
    sp.add_argument("--sigma", type=float, help="noise level")
    sp.add_argument("--betas", default="0,0.01,0.1,1",
                    help="comma-separated beta grid (theorem1)")
    sp.set_defaults(func=cmd_theory_sim)

    sp = sub.add_parser("export-basis",
                        help="export learned basis values and embeddings to CSV")
    sp.add_argument("--config", required=True, help="YAML run config")
    sp.add_argument("--checkpoint", required=True, help="model checkpoint file")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--span", metavar="START-END",
                    help="1-based inclusive timestep span (default: test segment)")
    sp.add_argument("--svg", action="store_true",
                    help="also write a static SVG line chart")
    _add_override_flags(sp)
    sp.set_defaults(func=cmd_export_basis)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: ConfigError: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(
            f"error: {type(exc).__name__}: {' '.join(str(exc).split())}",
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
