"""Command-line interface.

Subcommands: gen-data, train, eval, ablate, gradcheck, oracle-margin.
Config values come from built-in defaults, overridden by --config FILE
(key = value lines), overridden by individual flags. Exit codes: 0 success,
2 validation failure, 1 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .ablate import SUITES, run_suite
from .config import ExperimentConfig, load_config
from .data import SynthSpec, generate_synthetic
from .errors import ConfigError, DataError, FormatError, GraphError
from .gradcheck import run_gradcheck, tiny_config
from .losses import build_triplets, margin_loss
from .oracles import margin_loss_reference
from .tensor import Tensor
from .train import dump_predictions, evaluate_checkpoint, train

_CONFIG_KINDS = {"int": int, "float": float, "str": str, "bool": bool}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    for f in dataclasses.fields(ExperimentConfig):
        kind = _CONFIG_KINDS[f.type] if isinstance(f.type, str) else f.type
        flag = "--" + f.name.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, default=None, choices=("true", "false"),
                                help=f"override {f.name}")
        else:
            parser.add_argument(flag, type=kind, default=None, help=f"override {f.name}")


def _config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        kind = _CONFIG_KINDS[f.type] if isinstance(f.type, str) else f.type
        setattr(cfg, f.name, value == "true" if kind is bool else value)
    return cfg.validate()


def _parse_groups(raw_list) -> dict:
    """'a=0,1|2,3' -> {'a': [[0, 1], [2, 3]]}."""
    groups = {}
    for raw in raw_list or ():
        if "=" not in raw:
            raise ConfigError(f"--mean-groups expects MOD=c,c|c,c; got {raw!r}")
        mod, body = raw.split("=", 1)
        groups[mod.strip()] = [[int(c) for c in part.split(",") if c != ""]
                               for part in body.split("|")]
    return groups


def _parse_scales(raw_list) -> dict:
    scales = {}
    for raw in raw_list or ():
        if "=" not in raw:
            raise ConfigError(f"--mu-scale expects MOD=FACTOR; got {raw!r}")
        mod, value = raw.split("=", 1)
        scales[mod.strip()] = float(value)
    return scales


def _cmd_gen_data(args) -> int:
    spec = SynthSpec(
        classes=args.classes,
        per_class=args.per_class,
        dims={"a": args.dim_a, "t": args.dim_t, "v": args.dim_v},
        seq_len={"a": (args.len_a_min, args.len_a_max),
                 "t": (args.len_t_min, args.len_t_max),
                 "v": (args.len_v_min, args.len_v_max)},
        mu=args.mu, rho=args.rho, sigma=args.sigma, seed=args.seed,
        latent_dim=args.latent_dim,
        mean_groups=_parse_groups(args.mean_groups),
        mu_scale=_parse_scales(args.mu_scale),
    )
    out = generate_synthetic(spec, args.out)
    print(f"wrote {spec.classes * spec.per_class} samples to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.data_dir:
        raise ConfigError("train needs --data-dir (or data_dir in the config file)")
    result = train(cfg)
    report = result.report
    print(f"run dir: {result.run_dir}")
    print(f"epochs run: {report.stopped_epoch}")
    print(f"test ACC = {report.test_acc:.4f}  WF1 = {report.test_wf1:.4f}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise DataError(f"checkpoint {checkpoint} does not exist")
    mask = tuple(args.eval_modalities) if args.eval_modalities else None
    acc, wf1, samples, predictions = evaluate_checkpoint(checkpoint, cfg, mask, args.split)
    print(f"{args.split} ACC = {acc:.4f}  WF1 = {wf1:.4f}  over {len(samples)} samples")
    if args.dump:
        dump_predictions(args.dump, samples, predictions)
        print(f"predictions written to {args.dump}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    if not cfg.data_dir:
        raise ConfigError("ablate needs --data-dir (or data_dir in the config file)")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    table = run_suite(args.suite, cfg, seeds, out_dir=cfg.resolved_out_dir(),
                      write_artifacts=False)
    print(table.to_text(), end="")
    return 0


def _cmd_gradcheck(args) -> int:
    overrides = {}
    if args.config:
        cfg = load_config(args.config, tiny_config())
    else:
        cfg = tiny_config(**overrides)
    if args.modalities:
        cfg.modalities = args.modalities
    if args.n_shallow is not None:
        cfg.n_shallow = args.n_shallow
    if args.n_deep is not None:
        cfg.n_deep = args.n_deep
    if args.batch_size is not None:
        cfg.batch_size = args.batch_size
    cfg.validate()
    report = run_gradcheck(cfg, tolerance=args.tolerance, eps=args.eps, corrupt=args.corrupt)
    print(report.to_text(), end="")
    if not report.passed:
        print(f"gradcheck FAILED: worst offender {report.worst_name} "
              f"at {report.worst_error:.3e}", file=sys.stderr)
        return 1
    return 0


def _read_margin_batch(path):
    entries = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 3:
            raise DataError(f"{path}:{lineno}: expected modality<TAB>label<TAB>v1,v2,...")
        vec = [float(x) for x in cells[2].split(",")]
        entries.append((cells[0], int(cells[1]), vec))
    if not entries:
        raise DataError(f"{path}: empty batch file")
    return entries


def _cmd_oracle_margin(args) -> int:
    entries = _read_margin_batch(args.batch_file)
    tagged = [(m, lab) for m, lab, _ in entries]
    embeddings = [Tensor([vec]) for _, _, vec in entries]
    production = float(margin_loss(embeddings, build_triplets(tagged), args.alpha).data)
    reference = margin_loss_reference(entries, args.alpha)
    diff = abs(production - reference)
    print(f"production = {production!r}")
    print(f"bruteforce = {reference!r}")
    print(f"difference = {diff!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavfusion",
                                     description="gated cross-modal fusion trainer and harnesses")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a seeded synthetic multimodal dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--classes", type=int, default=4)
    gen.add_argument("--per-class", type=int, default=20)
    gen.add_argument("--dim-a", type=int, default=12)
    gen.add_argument("--dim-t", type=int, default=10)
    gen.add_argument("--dim-v", type=int, default=8)
    gen.add_argument("--len-a-min", type=int, default=6)
    gen.add_argument("--len-a-max", type=int, default=10)
    gen.add_argument("--len-t-min", type=int, default=4)
    gen.add_argument("--len-t-max", type=int, default=8)
    gen.add_argument("--len-v-min", type=int, default=3)
    gen.add_argument("--len-v-max", type=int, default=6)
    gen.add_argument("--mu", type=float, default=2.0)
    gen.add_argument("--rho", type=float, default=0.5)
    gen.add_argument("--sigma", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--latent-dim", type=int, default=8)
    gen.add_argument("--mean-groups", action="append",
                     help="share class means within groups, e.g. a=0,1|2,3 (repeatable)")
    gen.add_argument("--mu-scale", action="append",
                     help="per-modality mean scale, e.g. v=0.5 (repeatable)")
    gen.set_defaults(func=_cmd_gen_data)

    tr = sub.add_parser("train", help="train a model and write run artifacts")
    _add_config_flags(tr)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _add_config_flags(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    ev.add_argument("--eval-modalities", default="",
                    help="modality mask for evaluation (default: config mask)")
    ev.add_argument("--dump", default="", help="write predictions TSV here")
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="run a fixed ablation row set")
    _add_config_flags(ab)
    ab.add_argument("--suite", required=True, choices=SUITES)
    ab.add_argument("--seeds", default="0", help="comma-separated seed list")
    ab.set_defaults(func=_cmd_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    gc.add_argument("--config", help="key=value config file (defaults: tiny 64-bit setup)")
    gc.add_argument("--tolerance", type=float, default=1e-3)
    gc.add_argument("--eps", type=float, default=1e-4)
    gc.add_argument("--modalities", default="")
    gc.add_argument("--n-shallow", type=int, default=None)
    gc.add_argument("--n-deep", type=int, default=None)
    gc.add_argument("--batch-size", type=int, default=None)
    gc.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    gc.set_defaults(func=_cmd_gradcheck)

    om = sub.add_parser("oracle-margin", help="margin loss: production vs brute force")
    om.add_argument("--batch-file", required=True,
                    help="TSV: modality<TAB>label<TAB>comma-separated embedding")
    om.add_argument("--alpha", type=float, default=0.5)
    om.set_defaults(func=_cmd_oracle_margin)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GraphError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
