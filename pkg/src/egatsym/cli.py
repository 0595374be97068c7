"""Command-line entry point: ``egatsym <subcommand> ...``.

JSON goes to stdout or the named output file; human-readable summaries go
to stderr. Exit status is 0 on success, 1 on a runtime failure and 2 on a
usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .netlist import NetlistError, ParseOptions, load_parse_options

log = logging.getLogger("egatsym")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _layers(text: str) -> list[int]:
    """``3`` or an inclusive range ``1..5``."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            if lo < 1 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        value = int(text)
        if value < 1:
            raise ValueError
        return [value]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or a range like 1..5, got {text!r}")


def _rules(text: str) -> tuple[str, ...]:
    from .postprocess import RULES
    chosen = tuple(r.strip() for r in text.split(",") if r.strip())
    bad = [r for r in chosen if r not in RULES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown rule(s) {bad}; choose from {','.join(RULES)}")
    return chosen


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egatsym", description="Analog symmetry-constraint detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--parse-options", type=Path, help="key=value file of netlist parse options")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="write a labelled synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--circuits", type=int, default=40)
    g.add_argument("--profile", default="default")
    g.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a model on a dataset manifest")
    t.add_argument("--manifest", type=Path, required=True)
    t.add_argument("--config", type=Path, help="key=value overrides (same keys as the flags)")
    t.add_argument("--out-checkpoint", type=Path, required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--split-ratio", type=float)
    t.add_argument("--layers", type=_layers, help="layer count, or a range such as 1..5 for a sweep")
    t.add_argument("--heads", type=int)
    t.add_argument("--dim", type=int, help="node and edge embedding width")
    t.add_argument("--threshold", type=float)
    t.add_argument("--no-gate-feature", action="store_true")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--loss-log", type=Path)

    i = sub.add_parser("infer", help="score the valid pairs of one netlist or a test split")
    i.add_argument("--checkpoint", type=Path, required=True)
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--netlist", type=Path)
    src.add_argument("--manifest", type=Path, help="score the held-out circuits recorded in the checkpoint")
    i.add_argument("--labels", type=Path)
    i.add_argument("--no-postprocess", action="store_true")
    i.add_argument("--rules", type=_rules, help="comma-separated subset of position,size,dummy")
    i.add_argument("--threshold", type=float)
    i.add_argument("--size-rel-tol", type=float)
    i.add_argument("--out", type=Path)
    i.add_argument("--removal-log", type=Path)

    e = sub.add_parser("eval", help="metrics of a predictions file")
    e.add_argument("--predictions", type=Path, required=True)
    e.add_argument("--labels", type=Path, help="override the labels stored in the predictions")
    e.add_argument("--out", type=Path)

    r = sub.add_parser("roc", help="ROC curve CSV and AUC of a predictions file")
    r.add_argument("--predictions", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)

    c = sub.add_parser("gradcheck", help="finite-difference check of the model gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--nodes", type=int, help="fixed node count (default: 4 to 8)")
    c.add_argument("--graphs", type=int, default=20)
    c.add_argument("--tol", type=float, default=1e-4)
    return p


def _require_file(path: Path | None, what: str) -> None:
    if path is not None and not path.is_file():
        raise UsageError(f"{what} not found: {path}")


def _require_parent(path: Path | None) -> None:
    if path is not None and not path.resolve().parent.is_dir():
        raise UsageError(f"output directory does not exist: {path.parent}")


def _emit_json(obj, out: Path | None) -> None:
    text = json.dumps(obj, indent=1) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _read_kv(path: Path) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


# ---------------------------------------------------------------- subcommands

def cmd_gen_dataset(args, options) -> int:
    from .synth import generate_dataset
    if args.circuits < 4:
        raise UsageError("--circuits must be at least 4")
    manifest = generate_dataset(args.seed, args.circuits, args.out, args.profile)
    print(f"wrote {args.circuits} circuits to {args.out}: {manifest['stats']}", file=sys.stderr)
    return EXIT_OK


def _train_configs(args):
    from .model import ModelConfig
    from .train import TrainConfig
    fields = {}
    if args.config is not None:
        fields = _read_kv(args.config)
    flag_map = {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr,
                "seed": args.seed, "split_ratio": args.split_ratio, "heads": args.heads,
                "similarity_threshold": args.threshold}
    for k, v in flag_map.items():
        if v is not None:
            fields[k] = v
    if args.dim is not None:
        fields["d_n"] = fields["d_e"] = args.dim
    if args.no_gate_feature:
        fields["gate_feature"] = False
    layers = args.layers or ([int(fields.pop("layers"))] if "layers" in fields else [3])
    fields.pop("layers", None)

    def coerce(cls, src):
        kw = {}
        for name, f in cls.__dataclass_fields__.items():
            if name in src:
                v = src[name]
                if isinstance(v, str):
                    v = (v.lower() in ("1", "true", "yes")) if f.type in (bool, "bool") else \
                        float(v) if f.type in (float, "float") else int(v)
                kw[name] = v
        return kw

    known = set(ModelConfig.__dataclass_fields__) | set(TrainConfig.__dataclass_fields__)
    unknown = set(fields) - known
    if unknown:
        raise UsageError(f"unknown config key(s): {sorted(unknown)}")
    try:
        mcfg = ModelConfig(**coerce(ModelConfig, fields))
        tcfg = TrainConfig(**coerce(TrainConfig, fields))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}")
    return mcfg, tcfg, layers


def cmd_train(args, options) -> int:
    from .metrics import evaluate
    from .model import save_checkpoint
    from .train import assert_disjoint, load_manifest, predict, split_dataset, train
    _require_file(args.manifest, "manifest")
    _require_file(args.config, "config file")
    _require_parent(args.out_checkpoint)
    _require_parent(args.loss_log)
    mcfg, tcfg, layer_list = _train_configs(args)
    circuits = load_manifest(args.manifest, options)
    tr, te = split_dataset(circuits, tcfg.split_ratio, tcfg.seed)
    assert_disjoint(tr, te)
    split = {"manifest": str(args.manifest.resolve()), "train": [c.name for c in tr], "test": [c.name for c in te]}
    sweep = []
    for layers in layer_list:
        cfg = replace(mcfg, layers=layers)
        out = args.out_checkpoint
        if len(layer_list) > 1:
            out = out.with_name(f"{out.stem}.L{layers}{out.suffix}")
        if args.checkpoint_every < 0:
            raise UsageError("--checkpoint-every must be >= 0")
        res = train(tr, cfg, tcfg, checkpoint=out if args.checkpoint_every else None,
                    checkpoint_every=args.checkpoint_every)
        rep = None
        if te:
            ys, ps = [], []
            for c in te:
                pred = predict(c.netlist, res.params, res.stats, c.labels)
                ys += [p.label for p in pred.pairs]
                ps += [p.predicted for p in pred.pairs]
            rep = evaluate(ys, ps)
        save_checkpoint(out, res.params, res.stats, {"split": split, "train_config": tcfg.__dict__,
                                                     "loss_history": res.loss_history,
                                                     "seconds": res.seconds})
        line = f"layers={layers} loss={res.loss_history[-1]:.4f} time={res.seconds:.1f}s -> {out}"
        if rep is not None:
            line += f" | test {rep.summary()}"
        print(line, file=sys.stderr)
        sweep.append({"layers": layers, "checkpoint": str(out), "seconds": res.seconds,
                      "final_loss": res.loss_history[-1], "test": rep.to_json() if rep else None})
        if args.loss_log is not None:
            log_path = args.loss_log if len(layer_list) == 1 else \
                args.loss_log.with_name(f"{args.loss_log.stem}.L{layers}{args.loss_log.suffix}")
            log_path.write_text("".join(f"{k}\t{v!r}\n" for k, v in enumerate(res.loss_history)))
    _emit_json({"runs": sweep}, None)
    return EXIT_OK


def cmd_infer(args, options) -> int:
    from .graph import SymmetryGroups
    from .model import load_checkpoint
    from .netlist import read_netlist
    from .postprocess import RULES
    from .train import load_manifest, predict
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.netlist, "netlist")
    _require_file(args.manifest, "manifest")
    _require_file(args.labels, "labels")
    _require_parent(args.out)
    _require_parent(args.removal_log)
    if args.no_postprocess and args.rules:
        raise UsageError("--rules and --no-postprocess are mutually exclusive")
    params, stats, extra = load_checkpoint(args.checkpoint)
    rules = () if args.no_postprocess else (args.rules if args.rules is not None else RULES)
    if args.netlist is not None:
        jobs = [(read_netlist(args.netlist, options), SymmetryGroups.load(args.labels) if args.labels else None)]
    else:
        test = set(extra.get("split", {}).get("test", []))
        if not test:
            raise UsageError("checkpoint records no test split; pass --netlist instead")
        jobs = [(c.netlist, c.labels) for c in load_manifest(args.manifest, options) if c.name in test]
    results, removals = [], []
    for nl, labels in jobs:
        pred = predict(nl, params, stats, labels, args.threshold, rules, args.size_rel_tol)
        results.append(pred.to_json())
        removals += pred.removals
        n_pos = sum(p.predicted == 1 for p in pred.pairs)
        print(f"{nl.name}: {len(pred.pairs)} pairs, {n_pos} predicted symmetric, "
              f"{len(pred.removals)} removed by rules", file=sys.stderr)
    _emit_json({"threshold": params.config.similarity_threshold if args.threshold is None else args.threshold,
                "rules": list(rules), "circuits": results}, args.out)
    if args.removal_log is not None:
        args.removal_log.write_text("".join(r.to_json() + "\n" for r in removals))
    return EXIT_OK


def _load_predictions(path: Path, labels_path: Path | None):
    from .graph import SymmetryGroups
    obj = json.loads(path.read_text())
    circuits = obj["circuits"] if "circuits" in obj else [obj]
    lookup = None
    if labels_path is not None:
        lookup = set()
        for grp in SymmetryGroups.load(labels_path).groups:
            lookup.update((a, b) for a in grp for b in grp if a != b)
    ys, ps, ss = [], [], []
    for c in circuits:
        for p in c["pairs"]:
            y = p.get("label") if lookup is None else (1 if (p["a"], p["b"]) in lookup else -1)
            if y not in (1, -1):
                raise UsageError(f"pair {p['a']},{p['b']} of {c.get('circuit')} has no label; pass --labels")
            ys.append(y)
            ps.append(p["predicted"])
            ss.append(p["similarity"])
    return ys, ps, ss


def cmd_eval(args, options) -> int:
    from .metrics import evaluate
    _require_file(args.predictions, "predictions")
    _require_file(args.labels, "labels")
    ys, ps, ss = _load_predictions(args.predictions, args.labels)
    rep = evaluate(ys, ps, ss)
    print(rep.summary() + ("" if rep.auc is None else f" AUC={rep.auc:.4f}"), file=sys.stderr)
    _emit_json(rep.to_json(), args.out)
    return EXIT_OK


def cmd_roc(args, options) -> int:
    from .metrics import write_roc_csv
    _require_file(args.predictions, "predictions")
    _require_parent(args.out)
    ys, _, ss = _load_predictions(args.predictions, None)
    auc = write_roc_csv(args.out, ss, ys)
    _emit_json({"auc": auc, "csv": str(args.out)}, None)
    return EXIT_OK


def cmd_gradcheck(args, options) -> int:
    from .gradcheck import run_gradcheck
    if args.nodes is not None and args.nodes < 1:
        raise UsageError("--nodes must be >= 1")
    if args.graphs < 1:
        raise UsageError("--graphs must be >= 1")
    lo, hi = (args.nodes, args.nodes) if args.nodes else (4, 8)
    res = run_gradcheck(seed=args.seed, graphs=args.graphs, min_nodes=lo, max_nodes=hi)
    ok = res.max_error < args.tol
    print(f"max relative error {res.max_error:.3e} over {res.graphs} graphs in {res.seconds:.1f}s "
          f"({'ok' if ok else 'FAIL'})", file=sys.stderr)
    _emit_json({"max_error": res.max_error, "graphs": res.graphs, "seconds": res.seconds, "ok": ok}, None)
    return EXIT_OK if ok else EXIT_FAILURE


COMMANDS = {"gen-dataset": cmd_gen_dataset, "train": cmd_train, "infer": cmd_infer,
            "eval": cmd_eval, "roc": cmd_roc, "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        options = ParseOptions()
        if args.parse_options is not None:
            _require_file(args.parse_options, "parse options file")
            options = load_parse_options(args.parse_options)
        return COMMANDS[args.command](args, options)
    except UsageError as exc:
        print(f"egatsym {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NetlistError, KeyError, ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"egatsym {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
