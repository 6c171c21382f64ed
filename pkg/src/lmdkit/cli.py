"""``lmd`` command line: train, decompose, analyze, capacity.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Artifacts go under
``--out``; on failure any artifact already written by the run is removed.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import lmd
from . import store
from .linalg import svd
from .mlp import (
    TrainConfig,
    encoding_check,
    gradient_check,
    init_model,
    layer_inputs,
    layer_outputs,
    train,
)
from .uhn import UHNConfig, capacity_sweep, lmd_uhn_correspondence


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _unsigned(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be unsigned")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("energy must be in (0, 1]")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_unsigned, default=42)
    common.add_argument("--out", type=Path, default=Path("."))
    common.add_argument("--format", choices=("json", "csv"), default=None,
                        help="report form (default: write both)")

    parser = argparse.ArgumentParser(prog="lmd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train an MLP on a CSV dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--widths", type=_int_list, required=True)
    p.add_argument("--activation", choices=("tanh", "relu"), default="tanh")
    p.add_argument("--final-activation", choices=("linear", "same"), default="linear")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20000)
    p.add_argument("--batch", type=int, default=0)
    p.add_argument("--grad-tol", type=float, default=None)
    p.add_argument("--model", type=Path, required=True)

    p = sub.add_parser("decompose", parents=[common], help="factorize every layer")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--mode", choices=("trivial", "graph"), default="trivial")
    p.add_argument("--nprime", default="auto")
    p.add_argument("--energy", type=_fraction, default=0.95)
    p.add_argument("--data", type=Path)
    p.add_argument("--knn", type=int, default=None)
    p.add_argument("--selection", choices=("smallest_nonzero", "largest"), default="smallest_nonzero")

    p = sub.add_parser("analyze", parents=[common], help="layer report and encoding check")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--energy", type=_fraction, default=0.95)
    p.add_argument("--graph", action="store_true")
    p.add_argument("--knn", type=int, default=None)
    p.add_argument("--deltas", type=_float_list, default=[0.0, 1e-3, 1e-2, 1e-1])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.1, help="bound on training error")
    p.add_argument("--perturbed-bound", type=float, default=0.1)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("capacity", parents=[common], help="UHN retrieval-rate sweep")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--stored", type=_int_list, required=True)
    p.add_argument("--corruption", type=float, default=0.1)
    p.add_argument("--sim", default="dot")
    p.add_argument("--sep", default="softmax:1")
    p.add_argument("--trials", type=int, default=100)
    return parser


def _config_echo(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items())}


class _Artifacts:
    """Collects outputs so a failed run can remove what it already wrote."""

    def __init__(self, args):
        self.args = args
        self.written: list[Path] = []

    def emit(self, stem: str, bundle: store.ReportBundle):
        forms = [self.args.format] if self.args.format else ["json", "csv"]
        for form in forms:
            path = self.args.out / f"{stem}.{form}"
            self.written.append(path)
            store.emit_report(bundle, path, form)

    def track(self, path: Path):
        self.written.append(path)

    def rollback(self):
        for path in self.written:
            path.unlink(missing_ok=True)


def _bundle(kind: str, payload: dict, args) -> store.ReportBundle:
    return store.ReportBundle(kind, payload, {"seed": args.seed, "config": _config_echo(args)})


def cmd_train(args, out: _Artifacts):
    data = store.load_dataset(args.data)
    if data.targets is None:
        raise UsageError(f"{args.data} has no target (y*) columns")
    widths = args.widths
    if widths[0] != data.points.shape[1] or widths[-1] != data.targets.shape[1]:
        raise UsageError(
            f"--widths {widths} do not match data ({data.points.shape[1]} inputs, "
            f"{data.targets.shape[1]} targets)"
        )
    model = init_model(widths, args.activation, args.final_activation, seed=args.seed)
    cfg = TrainConfig(learning_rate=args.lr, max_epochs=args.epochs, batch=args.batch,
                      seed=args.seed, grad_tol=args.grad_tol)
    cert = train(model, data, cfg)
    out.track(args.model)
    store.save_model(model, args.model)
    print(f"final_loss={cert.final_loss:.6g} grad_norm={cert.grad_norm:.3g} "
          f"epochs={cert.epochs_used} stable={cert.stable}")
    if not cert.stable:
        print("warning: gradient tolerance not reached; model is not certified", file=sys.stderr)


def _matrix_doc(m: np.ndarray) -> dict:
    return {"rows": int(m.shape[0]), "cols": int(m.shape[1]), "data": m.ravel().tolist()}


def cmd_decompose(args, out: _Artifacts):
    model = store.load_model(args.model)
    maps = [w.T for w in model.layers]
    if args.nprime != "auto":
        try:
            k = int(args.nprime)
        except ValueError:
            raise UsageError(f"--nprime must be an integer or 'auto', got {args.nprime!r}") from None
        for idx, w in enumerate(maps):
            if not 1 <= k <= min(w.shape):
                raise UsageError(
                    f"--nprime {k} out of range for layer {idx} with map shape "
                    f"{w.shape} (allowed 1..{min(w.shape)})"
                )
    if args.mode == "graph" and args.data is None:
        raise UsageError("--mode graph requires --data")
    data = store.load_dataset(args.data) if args.data is not None else None
    if data is not None:
        ins = layer_inputs(model, data.points)
        outs = layer_outputs(model, data.points)

    records, correspondences = [], []
    for idx, w in enumerate(maps):
        k = lmd.estimate_latent_dim(svd(w).s, args.energy) if args.nprime == "auto" else int(args.nprime)
        extra = {}
        if args.mode == "trivial":
            f = lmd.factorize_trivial(w, k)
        else:
            g_in, g_out, g_lat, extra = lmd.layer_graphs(ins[idx], outs[idx], data.targets, args.knn)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                f = lmd.factorize_graph(w, g_in, g_out, g_lat, k, args.selection)
            extra["selection"] = args.selection
        records.append({
            "layer": idx,
            "mode": f.mode.value,
            "n_prime": f.n_prime,
            "shape": list(w.shape),
            "singular_values": f.singular_values,
            "residual_to_w": f.residual_to_w,
            "residual_eq4": f.residual_eq4,
            "residual_eq4_full": f.residual_eq4_full,
            "rank_deficient": f.rank_deficient,
            "factors": {name: _matrix_doc(getattr(f, name))
                        for name in ("u", "o_dist", "s_prime", "i_dist", "vt")},
            **({"graph": extra} if extra else {}),
        })
        correspondences.append({"layer": idx, **lmd_uhn_correspondence(f)})
    out.emit("decomposition", _bundle("LAYER", {"layers": records}, args))
    out.emit("correspondence", _bundle("CORRESPONDENCE", {"layers": correspondences}, args))


def cmd_analyze(args, out: _Artifacts):
    model = store.load_model(args.model)
    data = store.load_dataset(args.data)
    energies = tuple(sorted({0.9, 0.95, 0.99, args.energy}))
    cfg = lmd.AnalysisConfig(energies=energies, energy=args.energy, graph=args.graph,
                             knn=args.knn, force=args.force)
    records = lmd.layer_report(model, data, cfg)
    probes = [
        encoding_check(model, data, d, trials=args.trials, seed=args.seed, force=args.force,
                       epsilon_bound=args.epsilon, perturbed_bound=args.perturbed_bound)
        for d in args.deltas
    ]
    perturbed = [p.epsilon_perturbed for p in probes]
    ordered = sorted(range(len(probes)), key=lambda i: args.deltas[i])
    monotone = all(perturbed[a] <= perturbed[b] for a, b in zip(ordered, ordered[1:]))
    gc = gradient_check(model, data, seed=args.seed)
    payload = {
        "epsilon_train": probes[0].epsilon_train if probes else None,
        "probes": probes,
        "monotone_in_delta": monotone,
        "certificate": model.certificate,
        "gradient_check": {"max_rel_error": gc.max_rel_error, "checked": gc.checked,
                           "skipped": gc.skipped},
    }
    out.emit("layer_report", _bundle("LAYER", {"layers": records}, args))
    out.emit("encoding", _bundle("ENCODING", payload, args))
    if probes:
        print(f"epsilon_train={probes[0].epsilon_train:.6g} monotone_in_delta={monotone}")


def cmd_capacity(args, out: _Artifacts):
    try:
        cfg = UHNConfig.parse(args.sim, args.sep)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.dim < 8 or args.trials < 10 or not 0 <= args.corruption < 1 or min(args.stored) < 1:
        raise UsageError("need --dim >= 8, --trials >= 10, 0 <= --corruption < 1, positive --stored")
    report = capacity_sweep(args.dim, args.stored, args.corruption, cfg, args.trials, args.seed)
    out.emit("capacity", _bundle("CAPACITY", store.to_jsonable(report), args))
    for c, r in zip(report.stored_counts, report.retrieval_rates):
        print(f"{c}\t{r:.4f}")


COMMANDS = {
    "train": cmd_train,
    "decompose": cmd_decompose,
    "analyze": cmd_analyze,
    "capacity": cmd_capacity,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = _Artifacts(args)
    try:
        COMMANDS[args.command](args, out)
    except UsageError as exc:
        out.rollback()
        print(f"lmd {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 1
        out.rollback()
        print(f"lmd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
