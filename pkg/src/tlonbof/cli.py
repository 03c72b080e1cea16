"""Command line entry points: synth, train, eval, ablate, config.

Thread caps must land in the environment before numpy is first imported,
so this module reads TLNB_THREADS / TLNB_DETERMINISTIC at the very top.
"""

from __future__ import annotations

import os


def _configure_threads() -> None:
    threads = os.environ.get("TLNB_THREADS")
    if os.environ.get("TLNB_DETERMINISTIC") == "1":
        threads = "1"
    if threads and threads.isdigit() and int(threads) > 0:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, threads)


_configure_threads()

import argparse
import sys

import numpy as np

from . import config as config_mod
from . import data, metrics, training
from .errors import FormatError, NumericError, TrainingDiverged

# ablation grid: (deep_features, temporal_modeling, kernel_param_learning,
# adaptive_scaling), ordered from the plainest model to the full one
DEFAULT_GRID = [
    (False, False, False, "frozen"),
    (True, False, False, "frozen"),
    (False, True, False, "frozen"),
    (True, True, False, "frozen"),
    (True, True, True, "off"),
    (True, True, True, "frozen"),
    (True, True, True, "learned"),
]

_GRID_HEADER = ["deep_features", "temporal_modeling", "kernel_param_learning", "adaptive_scaling"]


class _Usage(Exception):
    """Invocation problem: wrong flags, bad config, missing inputs. Exit 2."""


def _load_config(path) -> config_mod.RunConfig:
    if path is None:
        return config_mod.RunConfig()
    try:
        return config_mod.load_run_config(path)
    except FileNotFoundError:
        raise _Usage(f"config file not found: {path}") from None
    except FormatError as exc:
        raise _Usage(str(exc)) from None


def _require_data_dir(path) -> str:
    if path is None:
        raise _Usage("no data directory given (use --data or set data_dir in the config)")
    if not os.path.isdir(path):
        raise _Usage(f"data directory does not exist: {path}")
    return path


def _train_config(rc: config_mod.RunConfig, seed: int | None = None) -> training.TrainConfig:
    return training.TrainConfig(
        batch_size=rc.batch_size,
        epochs=rc.epochs,
        lr=rc.lr,
        seed=rc.seed if seed is None else seed,
        arch=rc.arch,
        n_codewords=rc.n_codewords,
        conv_filters=rc.conv_filters,
        conv_kernel=rc.conv_kernel,
        hidden=rc.hidden,
        n_regions=rc.n_regions,
        deep_features=rc.deep_features,
        temporal_modeling=rc.temporal_modeling,
        kernel_param_learning=rc.kernel_param_learning,
        adaptive_scaling=rc.adaptive_scaling,
        kernel=rc.kernel,
        nested_regions=rc.nested_regions,
    )


def _windows(rc: config_mod.RunConfig, corpus) -> data.WindowDataset:
    return data.WindowDataset(
        corpus,
        window=rc.window,
        horizon=rc.horizon,
        threshold=rc.threshold,
        mode=rc.label_mode,
    )


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[c]), *(len(r[c]) for r in rows)) if rows else len(header[c])
              for c in range(len(header))]
    def fmt(row):
        return "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines)


def _write_csv(path, header: list[str], rows: list[list[str]]) -> None:
    text = "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"
    config_mod.write_atomic(path, text.encode("utf-8"))


def _score_cells(score: dict[str, float]) -> list[str]:
    return [repr(score[k]) for k in ("precision", "recall", "f1", "kappa")]


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    try:
        corpus = data.synth_generate(
            n_days=args.days,
            rows_per_day=args.rows_per_day,
            seed=args.seed,
            separation=args.separation,
        )
    except ValueError as exc:
        raise _Usage(str(exc)) from None
    os.makedirs(args.out, exist_ok=True)
    for series in corpus:
        data.write_feature_csv(
            os.path.join(args.out, f"day_{series.day_id:03d}.csv"), series
        )
    print(f"wrote {len(corpus)} day files to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _write_history(path, history: training.TrainHistory) -> None:
    rows = [
        [str(i + 1), repr(loss), repr(g)]
        for i, (loss, g) in enumerate(zip(history.loss, history.grad_norm_conv))
    ]
    _write_csv(path, ["step", "loss", "grad_norm_conv"], rows)


def cmd_train(args) -> int:
    rc = _load_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    data_dir = _require_data_dir(args.data or rc.data_dir or None)
    corpus = data.load_feature_dir(data_dir)
    trainset = _windows(rc, corpus)
    if trainset.n_samples == 0:
        raise _Usage(f"no usable windows in {data_dir} "
                     f"(window={rc.window}, horizon={rc.horizon})")
    tc = _train_config(rc)
    history_path = args.history or os.path.splitext(args.out)[0] + ".history.csv"
    try:
        result = training.train(tc, trainset)
    except TrainingDiverged as exc:
        cfg = tc.model_config(d_in=trainset.feature_dim, avg_seq_len=float(trainset.window))
        training.save_checkpoint(args.out, exc.last_good_params, cfg)
        print(f"error: {exc}; last good parameters saved to {args.out}", file=sys.stderr)
        return 1
    training.save_checkpoint(args.out, result.params, result.model_cfg, result.adam_state)
    _write_history(history_path, result.history)
    preds = training.predict(result.params, result.model_cfg, trainset)
    score = metrics.fold_scores(trainset.labels, preds, result.model_cfg.n_classes)
    print(f"checkpoint: {args.out}")
    print(f"history:    {history_path} ({result.history.steps} steps)")
    print(_table(
        ["precision", "recall", "f1", "kappa"],
        [[f"{score['precision']:.2f}", f"{score['recall']:.2f}",
          f"{score['f1']:.2f}", f"{score['kappa']:.4f}"]],
    ))
    return 0


# ---------------------------------------------------------------------------
# eval


def _eval_fold_rows(args, rc, corpus):
    """Yield (fold_label, test_dataset, params, model_cfg) per fold."""
    fixed = None
    if args.model is not None:
        fixed = training.load_checkpoint(args.model)
    if rc.folds == "single":
        if fixed is None:
            raise _Usage("--folds single needs --model (no per-fold training to run)")
        params, mcfg, _ = fixed
        yield 1, _windows(rc, corpus), params, mcfg
        return
    by_day = {s.day_id: s for s in corpus}
    folds = data.anchored_folds(list(by_day))
    for k, fold in enumerate(folds, start=1):
        testset = _windows(rc, [by_day[fold.test_day]])
        if fixed is not None:
            params, mcfg, _ = fixed
        else:
            trainset = _windows(rc, [by_day[d] for d in fold.train_days])
            result = training.train(_train_config(rc), trainset)
            params, mcfg = result.params, result.model_cfg
        yield k, testset, params, mcfg


def cmd_eval(args) -> int:
    rc = _load_config(args.config)
    if args.folds:
        rc.folds = args.folds
    data_dir = _require_data_dir(args.data or rc.data_dir or None)
    corpus = data.load_feature_dir(data_dir)
    per_fold = []
    fold_rows = []
    dump_rows = []
    for k, testset, params, mcfg in _eval_fold_rows(args, rc, corpus):
        if testset.n_samples == 0:
            raise _Usage(f"fold {k} has no usable test windows")
        preds = training.predict(params, mcfg, testset)
        score = metrics.fold_scores(testset.labels, preds, mcfg.n_classes)
        per_fold.append(score)
        fold_rows.append([str(k)] + _score_cells(score))
        if args.dump_predictions:
            for i in range(testset.n_samples):
                dump_rows.append([
                    str(k), str(int(testset.day_ids[i])), str(i),
                    str(int(testset.labels[i])), str(int(preds[i])),
                ])
    summary = metrics.summarize(per_fold)
    for stat in ("mean", "std"):
        idx = 0 if stat == "mean" else 1
        fold_rows.append([stat] + [
            repr(summary[k][idx]) for k in ("precision", "recall", "f1", "kappa")
        ])
    _write_csv(args.report, ["fold", "precision", "recall", "f1", "kappa"], fold_rows)
    if args.dump_predictions:
        _write_csv(args.dump_predictions, ["fold", "day_id", "index", "true", "pred"], dump_rows)
    pretty = [
        [r[0]] + [f"{float(v):.2f}" for v in r[1:4]] + [f"{float(r[4]):.4f}"]
        for r in fold_rows
    ]
    print(_table(["fold", "precision", "recall", "f1", "kappa"], pretty))
    return 0


# ---------------------------------------------------------------------------
# ablate


def _parse_bool(raw: str, lineno: int) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise FormatError(f"expected true or false, got {raw!r}", location=f"line {lineno}")


def load_grid(path) -> list[tuple[bool, bool, bool, str]]:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    numbered = [
        (i, line.strip()) for i, line in enumerate(lines, start=1)
        if line.strip() and not line.strip().startswith("#")
    ]
    if not numbered:
        raise FormatError(f"{path}: empty grid file")
    first_no, header = numbered[0]
    if [c.strip() for c in header.split(",")] != _GRID_HEADER:
        raise FormatError(
            f"{path}: bad grid header, expected {','.join(_GRID_HEADER)}",
            location=f"line {first_no}",
        )
    grid = []
    for lineno, line in numbered[1:]:
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 4:
            raise FormatError(f"{path}: expected 4 columns", location=f"line {lineno}")
        scaling = cells[3]
        if scaling not in config_mod.SCALING_CHOICES:
            raise FormatError(
                f"{path}: adaptive_scaling must be one of "
                f"{', '.join(config_mod.SCALING_CHOICES)}, got {scaling!r}",
                location=f"line {lineno}",
            )
        grid.append((
            _parse_bool(cells[0], lineno),
            _parse_bool(cells[1], lineno),
            _parse_bool(cells[2], lineno),
            scaling,
        ))
    if not grid:
        raise FormatError(f"{path}: grid has a header but no rows")
    return grid


def cmd_ablate(args) -> int:
    rc = _load_config(args.config)
    data_dir = _require_data_dir(args.data or rc.data_dir or None)
    corpus = data.load_feature_dir(data_dir)
    if len(corpus) < 2:
        raise _Usage("ablation needs at least 2 days (train on all but last, test on last)")
    if args.grid is not None:
        try:
            grid = load_grid(args.grid)
        except FileNotFoundError:
            raise _Usage(f"grid file not found: {args.grid}") from None
        except FormatError as exc:
            raise _Usage(str(exc)) from None
    else:
        grid = DEFAULT_GRID
    try:
        seeds = config_mod.parse_seed_list(rc.ablation_seeds)
    except FormatError as exc:
        raise _Usage(str(exc)) from None
    trainset = _windows(rc, corpus[:-1])
    testset = _windows(rc, corpus[-1:])
    if trainset.n_samples == 0 or testset.n_samples == 0:
        raise _Usage(f"not enough usable windows in {data_dir}")
    header = _GRID_HEADER + ["f1_mean", "f1_std", "kappa_mean", "kappa_std", "status"]
    rows = []
    for deep, temporal, kpl, scaling in grid:
        f1s, kappas, status = [], [], "ok"
        for seed in seeds:
            tc = _train_config(rc, seed=seed)
            tc.deep_features = deep
            tc.temporal_modeling = temporal
            tc.kernel_param_learning = kpl
            tc.adaptive_scaling = scaling
            try:
                result = training.train(tc, trainset)
                preds = training.predict(result.params, result.model_cfg, testset)
                score = metrics.fold_scores(testset.labels, preds, result.model_cfg.n_classes)
            except NumericError as exc:
                print(f"cell ({deep},{temporal},{kpl},{scaling}) seed {seed} failed: {exc}",
                      file=sys.stderr)
                status = "failed"
                break
            f1s.append(score["f1"])
            kappas.append(score["kappa"])
        flags = [
            "true" if deep else "false",
            "true" if temporal else "false",
            "true" if kpl else "false",
            scaling,
        ]
        if status == "ok":
            stats = [repr(float(np.mean(f1s))), repr(float(np.std(f1s))),
                     repr(float(np.mean(kappas))), repr(float(np.std(kappas)))]
        else:
            stats = ["", "", "", ""]
        rows.append(flags + stats + [status])
    _write_csv(args.report, header, rows)
    pretty = [
        r[:4] + [f"{float(v):.2f}" if v else "-" for v in r[4:6]]
        + [f"{float(v):.4f}" if v else "-" for v in r[6:8]] + [r[8]]
        for r in rows
    ]
    print(_table(header, pretty))
    return 0


# ---------------------------------------------------------------------------
# config


def cmd_config(args) -> int:
    if args.check is not None:
        rc = _load_config(args.check)
    else:
        rc = config_mod.RunConfig()
    text = config_mod.dumps(rc)
    if args.out:
        config_mod.write_atomic(args.out, text.encode("utf-8"))
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlonbof",
        description="Temporal logistic neural bag-of-features for order book streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature corpus")
    p.add_argument("--out", required=True, help="output directory for day CSVs")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--rows-per-day", type=int, required=True, dest="rows_per_day")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--separation", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on a feature directory")
    p.add_argument("--config", help="run config file (defaults used when omitted)")
    p.add_argument("--data", help="feature CSV directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="walk-forward evaluation report")
    p.add_argument("--config", help="run config file")
    p.add_argument("--data", help="feature CSV directory")
    p.add_argument("--model", help="fixed checkpoint to evaluate "
                                   "(omit to retrain per anchored fold)")
    p.add_argument("--folds", choices=config_mod.FOLD_CHOICES,
                   help="anchored walk-forward or one fold over the whole directory")
    p.add_argument("--report", required=True, help="report CSV output path")
    p.add_argument("--dump-predictions", dest="dump_predictions",
                   help="also write per-sample predictions to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the feature-ablation grid")
    p.add_argument("--config", help="run config file")
    p.add_argument("--data", help="feature CSV directory")
    p.add_argument("--grid", help="grid CSV (default: the published 7-row grid)")
    p.add_argument("--report", required=True, help="report CSV output path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("config", help="print or validate run configs")
    p.add_argument("--out", help="write the config here instead of stdout")
    p.add_argument("--check", help="load this config and print its canonical form")
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("TLNB_THREADS")
    if threads is not None and not (threads.isdigit() and int(threads) > 0):
        print(f"error: TLNB_THREADS must be a positive integer, got {threads!r}",
              file=sys.stderr)
        return 2
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
