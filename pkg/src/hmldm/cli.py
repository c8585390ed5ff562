"""Command-line entry point: ``hmldm <command> ...``.

Every command writes its outputs and a ``manifest.json`` into ``--out``
(default ``$HMLDM_OUTPUT_DIR`` or ``./hmldm-out``). Exit codes: 0 success,
1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .graph import (
    EdgeListParseError,
    GraphValidationError,
    generate_planted_partition,
    is_connected,
    read_edge_list,
    split_for_link_prediction,
    write_edge_list,
)
from .metrics import (
    DEFAULT_TAU,
    ari,
    champion_report,
    hard_assignments,
    nmi,
    reorder_adjacency,
)
from .model import ModelConfig, NumericalError, load_checkpoint, save_checkpoint
from .train import (
    DEFAULT_DELTA_SQUARED_GRID,
    TrainConfig,
    TrainingError,
    auto_select_identifiable,
    evaluate_split,
    fit,
    sweep_delta,
)

SCHEMA_VERSION = 1
OUTPUT_ENV = "HMLDM_OUTPUT_DIR"
SWEEP_COLUMNS = (
    "delta", "delta_squared", "champion_fraction", "identifiable", "final_ll", "auc_roc", "auc_pr", "error",
)

log = logging.getLogger("hmldm")


class CommandError(Exception):
    """Runtime failure reported with exit code 1."""


# --------------------------------------------------------------------------
# argument types


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a probability, got {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"probability outside [0, 1]: {text}")
    return value


def _fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a fraction, got {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"fraction must lie strictly between 0 and 1, got {text}")
    return value


def _grid(text: str) -> tuple[float, ...]:
    """Comma-separated delta**2 values, or ``default``."""
    if text.strip() == "default":
        return DEFAULT_DELTA_SQUARED_GRID
    values = []
    for token in text.split(","):
        values.append(_positive_float(token.strip()))
    if not values:
        raise argparse.ArgumentTypeError("empty grid")
    return tuple(values)


# --------------------------------------------------------------------------
# output helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else _fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class Run:
    """Collects outputs of one command and writes its manifest."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.inputs: dict[str, str] = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def add_input(self, path) -> None:
        self.inputs[str(path)] = _sha256(path)

    def finish(self) -> None:
        flags = {k: _jsonable(v) for k, v in sorted(vars(self.args).items()) if k != "func"}
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "flags": flags,
            "seed": flags.get("seed"),
            "inputs": self.inputs,
            "software": {"hmldm": __version__, "numpy": np.__version__},
            "wall_time": time.perf_counter() - self.t0,
            "outputs": sorted(set(self.outputs)),
        }
        _dump_json(manifest, self.out / "manifest.json")


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, Path):
        return str(v)
    return v


# --------------------------------------------------------------------------
# shared pieces


def _load_graph(args, path=None, n_nodes=None):
    path = Path(path or args.graph)
    if not path.exists():
        raise CommandError(f"no such file: {path}")
    mode = "bipartite" if getattr(args, "bipartite", False) else None
    try:
        return read_edge_list(path, mode=mode, n_nodes=n_nodes, drop_self_loops=args.drop_self_loops)
    except (EdgeListParseError, GraphValidationError) as exc:
        raise CommandError(f"{path}: {exc}") from exc


def _model_config(args, dimension=None, delta=None) -> ModelConfig:
    return ModelConfig(
        dimension=dimension if dimension is not None else args.dim,
        p=args.p,
        delta=delta if delta is not None else args.delta,
        seed=args.seed,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        iterations=args.iters,
        optimizer=args.optimizer,
        restarts=args.restarts,
        log_every=args.log_every,
        deterministic=args.deterministic,
    )


def _config_echo(mconfig: ModelConfig, tconfig: TrainConfig) -> dict:
    return {
        "dimension": mconfig.dimension,
        "communities": mconfig.n_communities,
        "p": mconfig.p,
        "delta": mconfig.delta,
        "seed": mconfig.seed,
        "learning_rate": tconfig.learning_rate,
        "iterations": tconfig.iterations,
        "optimizer": tconfig.optimizer,
        "restarts": tconfig.restarts,
        "deterministic": tconfig.deterministic,
    }


def _write_trace(run: Run, model) -> None:
    rows = zip(model.iterations.tolist(), model.raw_trace.tolist(), model.trace.tolist())
    _write_csv(run.path("trace.csv"), ("iteration", "log_likelihood", "best_log_likelihood"), rows)


def _write_sweep(run: Run, records) -> None:
    rows = ([r.to_row()[c] for c in SWEEP_COLUMNS] for r in records)
    _write_csv(run.path("sweep.csv"), SWEEP_COLUMNS, rows)


def _fit(g, mconfig, tconfig):
    try:
        return fit(g, mconfig, tconfig)
    except (TrainingError, NumericalError, ValueError) as exc:
        raise CommandError(str(exc)) from exc


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    run = Run(args, "train")
    g = _load_graph(args)
    run.add_input(args.graph)
    mconfig, tconfig = _model_config(args), _train_config(args)
    model = _fit(g, mconfig, tconfig)
    save_checkpoint(model.state, run.path("checkpoint.json"))
    _write_trace(run, model)
    report = champion_report(model.state, args.tau)
    _dump_json(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "train",
            "final_ll": model.best_ll,
            "delta": mconfig.delta,
            **report.to_dict(),
            "config": _config_echo(mconfig, tconfig),
        },
        run.path("metrics.json"),
    )
    run.finish()
    return 0


def cmd_linkpred(args) -> int:
    run = Run(args, "linkpred")
    g = _load_graph(args)
    run.add_input(args.graph)
    notes = []
    if not is_connected(g):
        notes.append("input graph is disconnected")
    split = split_for_link_prediction(g, args.fraction, args.seed)
    notes.extend(split.warnings)
    mconfig, tconfig = _model_config(args), _train_config(args)

    result = {
        "schema_version": SCHEMA_VERSION,
        "command": "linkpred",
        "fraction": args.fraction,
        "n_test_positives": int(len(split.test_positives)),
        "n_test_negatives": int(len(split.test_negatives)),
        "removal_short": split.short,
        "warnings": notes,
    }
    if args.delta_sweep:
        deltas = [math.sqrt(d2) for d2 in args.delta_sweep]
        records = sweep_delta(
            split, mconfig, tconfig, deltas, tau=args.tau, warm_start=args.warm_start,
            stop_at_identifiable=not args.full_sweep,
        )
        _write_sweep(run, records)
        try:
            chosen = auto_select_identifiable(records)
        except ValueError as exc:
            result["error"] = str(exc)
            _dump_json(result, run.path("metrics.json"))
            run.finish()
            raise CommandError(str(exc)) from exc
        result.update(
            {
                "delta": chosen.delta,
                "delta_squared": chosen.delta_squared,
                "auc_roc": chosen.auc_roc,
                "auc_pr": chosen.auc_pr,
                "champion_fraction": chosen.champion_fraction,
                "identifiable": chosen.identifiable,
                "final_ll": chosen.final_ll,
                "selection": "first identifiable delta, scanning from the largest",
            }
        )
        mconfig = mconfig.replace(delta=chosen.delta)
    else:
        model = _fit(split.train, mconfig, tconfig)
        roc, pr = evaluate_split(model.state, split)
        report = champion_report(model.state, args.tau)
        result.update(
            {
                "delta": mconfig.delta,
                "delta_squared": mconfig.delta**2,
                "auc_roc": roc,
                "auc_pr": pr,
                "champion_fraction": report.champion_fraction,
                "identifiable": report.identifiable,
                "final_ll": model.best_ll,
            }
        )
        save_checkpoint(model.state, run.path("checkpoint.json"))
        _write_trace(run, model)
    result["config"] = _config_echo(mconfig, tconfig)
    _dump_json(result, run.path("metrics.json"))
    run.finish()
    return 0


def _read_labels(path: Path) -> np.ndarray:
    if not path.exists():
        raise CommandError(f"no such file: {path}")
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            try:
                labels.append(int(s.split()[0]))
            except ValueError:
                raise CommandError(f"{path}: line {line_no}: not an integer label") from None
    return np.array(labels, dtype=np.int64)


def cmd_communities(args) -> int:
    run = Run(args, "communities")
    labels = _read_labels(Path(args.labels))
    g = _load_graph(args)
    if len(labels) != g.n_nodes:
        raise CommandError(f"label file has {len(labels)} entries for {g.n_nodes} nodes")
    run.add_input(args.graph)
    run.add_input(args.labels)
    k = len(np.unique(labels))
    dim = args.dim if args.dim is not None else max(1, k - 1)
    mconfig, tconfig = _model_config(args, dimension=dim), _train_config(args)
    model = _fit(g, mconfig, tconfig)
    part = hard_assignments(model.state)
    report = champion_report(model.state, args.tau)
    run.path("partition.txt").write_text("".join(f"{c}\n" for c in part.tolist()), encoding="utf-8")
    save_checkpoint(model.state, run.path("checkpoint.json"))
    _write_trace(run, model)
    _dump_json(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "communities",
            "nmi": nmi(part, labels),
            "ari": ari(part, labels),
            "n_true_communities": int(k),
            "n_found_communities": int(len(np.unique(part))),
            "final_ll": model.best_ll,
            "delta": mconfig.delta,
            **report.to_dict(),
            "config": _config_echo(mconfig, tconfig),
        },
        run.path("metrics.json"),
    )
    run.finish()
    return 0


def cmd_sweep(args) -> int:
    run = Run(args, "sweep")
    g = _load_graph(args)
    run.add_input(args.graph)
    data = g
    if args.fraction is not None:
        data = split_for_link_prediction(g, args.fraction, args.seed)
    deltas = [math.sqrt(d2) for d2 in args.grid]
    records = sweep_delta(data, _model_config(args), _train_config(args), deltas, tau=args.tau, warm_start=args.warm_start)
    _write_sweep(run, records)
    run.finish()
    if all(r.error is not None for r in records):
        raise CommandError("every sweep point failed; see sweep.csv")
    return 0


def cmd_reorder(args) -> int:
    run = Run(args, "reorder")
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise CommandError(f"no such file: {ckpt}")
    try:
        state = load_checkpoint(ckpt)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CommandError(f"{ckpt}: {exc}") from exc
    g = _load_graph(args)
    if state.n_nodes != g.n_nodes or state.n_rows != g.n_rows:
        raise CommandError(
            f"checkpoint holds {state.n_nodes} nodes but graph has {g.n_nodes} (or bipartition differs)"
        )
    run.add_input(args.graph)
    run.add_input(ckpt)
    part = hard_assignments(state)
    ro = reorder_adjacency(g, part, state.config.n_communities)
    if g.bipartite:
        run.path("row_permutation.txt").write_text("".join(f"{v}\n" for v in ro.permutation.tolist()), encoding="utf-8")
        run.path("col_permutation.txt").write_text("".join(f"{v}\n" for v in ro.col_permutation.tolist()), encoding="utf-8")
    else:
        run.path("permutation.txt").write_text("".join(f"{v}\n" for v in ro.permutation.tolist()), encoding="utf-8")
    _write_csv(run.path("coords.csv"), ("row", "col"), ro.coords.tolist())
    k = len(ro.density)
    _write_csv(
        run.path("blocks.csv"),
        ("row_community", "col_community", "density"),
        ((a, b, float(ro.density[a, b])) for a in range(k) for b in range(k)),
    )
    _dump_json(
        {
            "schema_version": SCHEMA_VERSION,
            "command": "reorder",
            "bipartite": g.bipartite,
            "row_block_sizes": ro.block_sizes.tolist(),
            "col_block_sizes": ro.col_block_sizes.tolist(),
            "diagonal_density": ro.diagonal_density(),
            "off_diagonal_density": ro.off_diagonal_density(),
            "density": ro.density.tolist(),
        },
        run.path("summary.json"),
    )
    run.finish()
    return 0


def cmd_synth(args, parser) -> int:
    if args.n < 1:
        parser.error("--n must be positive")
    if args.k < 1 or args.k > args.n:
        parser.error("--k must lie in [1, n]")
    if args.k > 1 and args.p_out >= args.p_in and not (args.p_in == args.p_out == 1.0):
        parser.error("--p-out must be smaller than --p-in")
    run = Run(args, "synth")
    # with one block p_out never applies
    p_out = 0.0 if args.k == 1 and args.p_out >= args.p_in else args.p_out
    try:
        lg = generate_planted_partition(args.n, args.k, args.p_in, p_out, args.seed)
    except GraphValidationError as exc:
        raise CommandError(str(exc)) from exc
    write_edge_list(lg.graph, run.path("edges.txt"))
    run.path("labels.txt").write_text("".join(f"{c}\n" for c in lg.labels.tolist()), encoding="utf-8")
    run.finish()
    return 0


# --------------------------------------------------------------------------
# parser


def _add_model_flags(p: argparse.ArgumentParser, dim_default=8, delta_default=1.0, restarts_default=5):
    p.add_argument("--dim", type=_positive_int, default=dim_default, help="latent dimension D (D+1 communities)")
    p.add_argument("--p", type=int, choices=(1, 2), default=1, help="power of the distance")
    p.add_argument("--delta", type=_positive_float, default=delta_default, help="simplex size")
    p.add_argument("--lr", type=_positive_float, default=0.1)
    p.add_argument("--iters", type=_positive_int, default=5000)
    p.add_argument("--optimizer", choices=("adam", "gradient"), default="adam")
    p.add_argument("--restarts", type=_positive_int, default=restarts_default)
    p.add_argument("--log-every", type=_positive_int, default=100)
    p.add_argument("--tau", type=_positive_float, default=DEFAULT_TAU, help="champion threshold")
    p.add_argument("--bipartite", action="store_true", help="require a bipartite edge list")
    p.add_argument("--drop-self-loops", action="store_true", help="skip 'i i' lines instead of failing")
    p.add_argument(
        "--deterministic", action=argparse.BooleanOptionalAction, default=True,
        help="fixed-order pair sums (default on)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmldm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hmldm {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=os.environ.get(OUTPUT_ENV, "hmldm-out"), help="output directory")

    p = sub.add_parser("train", help="fit a model to an edge list")
    p.add_argument("graph")
    _add_model_flags(p)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("linkpred", help="held-out link prediction")
    p.add_argument("graph")
    _add_model_flags(p)
    p.add_argument("--fraction", type=_fraction, default=0.5, help="fraction of edges held out")
    p.add_argument("--delta-sweep", type=_grid, default=None, metavar="D2,D2,...",
                   help="delta**2 grid (or 'default'); selects the first identifiable delta")
    p.add_argument("--full-sweep", action="store_true", help="keep sweeping past the selected delta")
    p.add_argument("--warm-start", action="store_true")
    common(p)
    p.set_defaults(func=cmd_linkpred)

    p = sub.add_parser("communities", help="community recovery against ground-truth labels")
    p.add_argument("graph")
    p.add_argument("labels", help="one integer label per line, in node order")
    _add_model_flags(p, dim_default=None)
    common(p)
    p.set_defaults(func=cmd_communities)

    p = sub.add_parser("sweep", help="champion fraction and AUC across delta**2")
    p.add_argument("graph")
    _add_model_flags(p)
    p.add_argument("--grid", type=_grid, default=DEFAULT_DELTA_SQUARED_GRID, metavar="D2,D2,...")
    p.add_argument("--fraction", type=_fraction, default=None, help="also hold out edges and report AUC")
    p.add_argument("--warm-start", action="store_true")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reorder", help="membership-ordered adjacency for plotting")
    p.add_argument("graph")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bipartite", action="store_true")
    p.add_argument("--drop-self-loops", action="store_true")
    common(p)
    p.set_defaults(func=cmd_reorder)

    p = sub.add_parser("synth", help="planted-partition graph with labels")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p-in", type=_probability, required=True)
    p.add_argument("--p-out", type=_probability, required=True)
    common(p)
    p.set_defaults(func=lambda a: cmd_synth(a, p))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"hmldm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, TrainingError) as exc:
        print(f"hmldm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
