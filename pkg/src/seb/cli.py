"""``seb`` command line: vocab, mapping, params, train, attack, report.

Exit codes: 0 ok, 2 config error, 3 infeasible mapping, 4 divergence,
5 missing inputs.  Failures print one line to stderr::

    seb: error: <kind>: <message>
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import re
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .attack import (
    AttackConfig,
    Granularity,
    Rule,
    attack_snapshot,
    batch_statistics,
    coverage_curve,
    write_batch_statistics,
    write_coverage,
    write_histogram,
    write_report_json,
    write_reports_csv,
)
from .config import ConfigError, load_experiment_config
from .embedding import EmbeddingDims, Variant, init_params, param_count
from .federated import DivergenceError, fl_config_from_kv, train, write_round_log
from .mapping import MappingFormatError, MappingInfeasible, build_mapping, collision_probability, load_mapping, save_mapping
from .rng import PRNG_ID
from .text import (
    build_vocab,
    encode_corpus,
    generate_synthetic_corpus,
    load_corpus,
    load_vocab,
    save_corpus,
    save_vocab,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DIVERGENCE, EXIT_MISSING = 0, 2, 3, 4, 5
META_FILE = "run_meta.json"
_SNAPSHOT_RE = re.compile(r"round_(\d+)_client_(\d+)\.grad$")


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CLIError(EXIT_MISSING, "missing_input", f"{what} not found: {p}")
    return p


def _prepare_out(path, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise CLIError(EXIT_CONFIG, "would_overwrite", f"{p} exists; pass --force to overwrite")
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _guard_outputs(out_dir: Path, names, force: bool) -> None:
    clash = [n for n in names if (out_dir / n).exists()]
    if clash and not force:
        raise CLIError(
            EXIT_CONFIG, "would_overwrite",
            f"{out_dir} already holds {', '.join(clash)}; pass --force to overwrite",
        )


def _update_meta(out_dir: Path, command: str, cfg, outputs, args=None) -> None:
    """Merge this command's record into ``out_dir/run_meta.json``.

    Config-driven commands record the config digest; the single-file
    commands record their arguments instead.
    """
    meta_path = out_dir / META_FILE
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    meta["artifact_version"] = __version__
    meta["prng_id"] = PRNG_ID
    record = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    if cfg is not None:
        meta["seed"] = cfg.seed
        meta["config_sha256"] = cfg.digest
    if args is not None:
        argv = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        record["args"] = argv
        record["args_sha256"] = hashlib.sha256(json.dumps(argv, sort_keys=True).encode("utf-8")).hexdigest()
        if argv.get("seed") is not None:
            record["seed"] = argv["seed"]
    record["outputs"] = sorted(str(Path(o).relative_to(out_dir)) for o in outputs)
    meta.setdefault("commands", {})[command] = record
    all_outputs = set(meta.get("outputs", []))
    all_outputs.update(str(Path(o).relative_to(out_dir)) for o in outputs)
    meta["outputs"] = sorted(o for o in all_outputs if (out_dir / o).exists())
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(path, check_inputs=()):
    _require_file(path, "config file")
    try:
        return load_experiment_config(path, check_inputs)
    except FileNotFoundError as exc:
        raise CLIError(EXIT_MISSING, "missing_input", str(exc)) from exc


def _variant(name: str) -> Variant:
    try:
        return Variant(name.upper())
    except ValueError:
        raise ConfigError(f"unknown variant {name!r}; expected one of {', '.join(v.value for v in Variant)}") from None


def _load_mapping(path):
    try:
        return load_mapping(_require_file(path, "mapping"))
    except MappingFormatError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_corpus(args) -> int:
    out = _prepare_out(args.out, args.force)
    corpus = generate_synthetic_corpus(args.num_samples, args.num_classes, args.vocab_size,
                                       args.tokens_per_sample, args.seed)
    save_corpus(corpus, out)
    _update_meta(out.resolve().parent, "corpus synth", None, [out.resolve()], args)
    print(f"wrote {len(corpus)} samples to {out}")
    return EXIT_OK


def cmd_vocab(args) -> int:
    corpus = load_corpus(_require_file(args.corpus, "corpus"))
    out = _prepare_out(args.out, args.force)
    vocab = build_vocab(corpus, args.min_freq, args.max_size)
    save_vocab(vocab, out)
    _update_meta(out.resolve().parent, "vocab build", None, [out.resolve()], args)
    print(f"V_w={len(vocab)} written to {out}")
    return EXIT_OK


def cmd_mapping(args) -> int:
    if args.action == "inspect":
        m = _load_mapping(args.mapping)
        print(f"V_w={m.vocab_size} V_b={m.byte_vocab_size} n={m.bytes_per_subword} seed={m.seed} prng={m.prng_id}")
        print(f"p={collision_probability(m.byte_vocab_size, m.bytes_per_subword, warn=False):.6g}")
        return EXIT_OK
    if args.vocab is not None:
        vocab_size = len(load_vocab(_require_file(args.vocab, "vocab")))
    elif args.vocab_size is not None:
        vocab_size = args.vocab_size
    else:
        raise ConfigError("mapping build needs --vocab or --vocab-size")
    p = collision_probability(args.vb, args.n, warn=False)
    feasible = vocab_size <= args.vb ** args.n
    print(f"V_w={vocab_size} V_b={args.vb} n={args.n} p={p:.6g} feasible={'yes' if feasible else 'no'}")
    mapping = build_mapping(vocab_size, args.vb, args.n, args.seed)
    out = _prepare_out(args.out, args.force)
    save_mapping(mapping, out)
    _update_meta(out.resolve().parent, "mapping build", None, [out.resolve()], args)
    print(f"mapping written to {out}")
    return EXIT_OK


def _dims_from_args(args, vocab_size: int) -> EmbeddingDims:
    return EmbeddingDims(vocab_size, d_out=args.d_out, byte_vocab_size=args.vb, n=args.n,
                         d=args.d, h=args.h, use_bias=args.bias)


def cmd_params(args) -> int:
    if args.action == "inspect":
        obj = checkpoint.load(_require_file(args.checkpoint, "checkpoint"))
        kind = type(obj).__name__
        variant, dims = obj.variant, obj.dims
        tensors = obj.grads if hasattr(obj, "grads") else (
            obj.parameters() if hasattr(obj, "parameters") else obj.tensors)
        print(f"{kind} variant={variant.value} dims={dims}")
        for name, arr in tensors.items():
            print(f"  {name:8s} {tuple(arr.shape)}  |max|={np.abs(arr).max() if arr.size else 0.0:.4g}")
        print(f"scalars={sum(a.size for a in tensors.values())}")
        return EXIT_OK
    vocab_size = args.vocab_size
    if getattr(args, "vocab", None):
        vocab_size = len(load_vocab(_require_file(args.vocab, "vocab")))
    if args.action == "count":
        if args.table:
            print(_param_table_text(args.h, args.d_out))
            return EXIT_OK
        dims = _dims_from_args(args, vocab_size or 0)
        print(param_count(_variant(args.variant), dims, args.bias))
        return EXIT_OK
    if args.mapping:
        m = _load_mapping(args.mapping)
        args.vb, args.n, vocab_size = m.byte_vocab_size, m.bytes_per_subword, m.vocab_size
    if vocab_size is None:
        raise ConfigError("params init needs --vocab, --vocab-size or --mapping")
    params = init_params(_variant(args.variant), _dims_from_args(args, vocab_size), args.seed, args.scale)
    out = _prepare_out(args.out, args.force)
    checkpoint.save_params(params, out)
    _update_meta(out.resolve().parent, "params init", None, [out.resolve()], args)
    print(f"{params.variant.value}: {params.num_scalars} scalars written to {out}")
    return EXIT_OK


TABLE_VB = (64, 128, 256)
TABLE_N = (4, 8, 16)


def param_table(h: int = 1024, d_out: int = 512) -> list[list]:
    """SEB_CO embedding parameter counts, rows ``n``, columns ``V_b``."""
    return [
        [n] + [param_count(Variant.SEB_CO, EmbeddingDims(0, d_out, vb, n, h=h), include_biases=False) for vb in TABLE_VB]
        for n in TABLE_N
    ]


def _param_table_text(h: int, d_out: int) -> str:
    lines = [f"n \\ V_b  " + "  ".join(f"{vb:>7d}" for vb in TABLE_VB)]
    for row in param_table(h, d_out):
        lines.append(f"{row[0]:>7d}  " + "  ".join(f"{c / 1e6:6.2f}M" for c in row[1:]))
    return "\n".join(lines)


def _experiment_setup(cfg):
    variant = _variant(cfg.variant)
    needs = ("corpus", "vocab") + (("mapping",) if variant.uses_mapping else ())
    for key in needs:
        if getattr(cfg, key) is None:
            raise ConfigError(f"config is missing required key {key!r}")
        _require_file(getattr(cfg, key), key)
    vocab = load_vocab(cfg.vocab)
    mapping = _load_mapping(cfg.mapping) if cfg.mapping is not None else None
    if mapping is not None and mapping.vocab_size != len(vocab):
        raise ConfigError(f"mapping covers {mapping.vocab_size} subwords but vocab has {len(vocab)}")
    dims = EmbeddingDims(
        len(vocab), d_out=cfg.d_out,
        byte_vocab_size=mapping.byte_vocab_size if mapping else 256,
        n=mapping.bytes_per_subword if mapping else 8,
        d=cfg.d, h=cfg.h, use_bias=cfg.use_bias,
    )
    return variant, vocab, mapping, dims


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    variant, vocab, mapping, dims = _experiment_setup(cfg)
    fl = fl_config_from_kv(cfg.fl, seed=cfg.seed)
    corpus = load_corpus(cfg.corpus)
    examples = encode_corpus(corpus, vocab)
    eval_examples = None
    if cfg.eval_corpus is not None:
        eval_examples = encode_corpus(load_corpus(_require_file(cfg.eval_corpus, "eval_corpus"), corpus.num_classes), vocab)

    out_dir = cfg.output_dir
    _guard_outputs(out_dir, ("rounds.csv", "model.ckpt", "snapshots"), args.force)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, logs = train(
        examples, fl, variant, mapping if variant.uses_mapping else None,
        dims=dims, num_classes=corpus.num_classes, init_scale=cfg.init_scale,
        eval_examples=eval_examples,
    )
    outputs = [out_dir / "rounds.csv", out_dir / "model.ckpt"]
    write_round_log(logs, outputs[0])
    checkpoint.save_model(model, outputs[1])
    snap_dir = out_dir / "snapshots"
    if any(log.snapshots for log in logs):
        snap_dir.mkdir(exist_ok=True)
    for log in logs:
        for cid in sorted(log.snapshots):
            stem = snap_dir / f"round_{log.round}_client_{cid}"
            checkpoint.save_snapshot(log.snapshots[cid], stem.with_suffix(".grad"))
            batch = [{"ids": list(map(int, ids)), "label": int(y)} for ids, y in log.batches[cid]]
            stem.with_suffix(".batch.json").write_text(json.dumps(batch) + "\n", encoding="utf-8")
            outputs += [stem.with_suffix(".grad"), stem.with_suffix(".batch.json")]
    _update_meta(out_dir, "train", cfg, outputs)
    last = logs[-1] if logs else None
    if last is not None:
        print(f"trained {variant.value} for {fl.rounds} rounds: loss={last.loss:.4f} accuracy={last.accuracy:.4f}")
    else:
        print("rounds=0: initial model written")
    return EXIT_OK


def _snapshot_files(out_dir: Path) -> list[tuple[int, int, Path]]:
    found = []
    for p in (out_dir / "snapshots").glob("*.grad"):
        m = _SNAPSHOT_RE.search(p.name)
        if m:
            found.append((int(m.group(1)), int(m.group(2)), p))
    return sorted(found)


def cmd_attack(args) -> int:
    cfg = _load_config(args.config)
    out_dir = cfg.output_dir
    snaps = _snapshot_files(out_dir) if out_dir.exists() else []
    if not snaps:
        raise CLIError(EXIT_MISSING, "missing_input", f"no gradient snapshots under {out_dir / 'snapshots'}")
    mapping = _load_mapping(cfg.mapping) if cfg.mapping is not None else None
    try:
        acfg = AttackConfig(tuple(cfg.rules), tuple(cfg.granularities), tuple(cfg.prune_ratios), cfg.epsilon)
    except ValueError as exc:
        raise ConfigError(f"bad attack settings: {exc}") from exc
    _guard_outputs(out_dir, ("attack.csv", "attack"), args.force)

    report_dir = out_dir / "attack"
    report_dir.mkdir(exist_ok=True)
    reports, outputs, batches = [], [], []
    for rnd, cid, path in snaps:
        snap = checkpoint.load_snapshot(path)
        batch_file = path.with_name(path.name.replace(".grad", ".batch.json"))
        batch = json.loads(_require_file(batch_file, "batch file").read_text(encoding="utf-8"))
        seqs = [item["ids"] for item in batch]
        batches.append(seqs)
        reps = attack_snapshot(snap, seqs, mapping, acfg, rnd, cid)
        reports.extend(reps)
        target = report_dir / f"round_{rnd}_client_{cid}.json"
        target.write_text(json.dumps([r.to_json() for r in reps], indent=1, sort_keys=True) + "\n", encoding="utf-8")
        outputs.append(target)
    write_reports_csv(reports, out_dir / "attack.csv")
    outputs.append(out_dir / "attack.csv")
    if mapping is not None:
        stats = batch_statistics(batches, mapping)
        write_batch_statistics(stats, out_dir / "batch_stats.csv")
        write_histogram(stats, out_dir / "batch_histogram.csv")
        outputs += [out_dir / "batch_stats.csv", out_dir / "batch_histogram.csv"]
        if cfg.coverage_byte_counts:
            curve = coverage_curve(mapping, cfg.coverage_byte_counts, cfg.coverage_trials, cfg.seed)
            write_coverage(curve, out_dir / "coverage.csv")
            outputs.append(out_dir / "coverage.csv")
    _update_meta(out_dir, "attack", cfg, outputs)
    print(f"attacked {len(snaps)} snapshots, {len(reports)} report rows")
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def cmd_report(args) -> int:
    if args.config:
        out_dir = _load_config(args.config).output_dir
    elif args.dir:
        out_dir = Path(args.dir)
    else:
        raise ConfigError("report needs --config or --dir")
    attack_csv = out_dir / "attack.csv"
    if not attack_csv.exists():
        raise CLIError(EXIT_MISSING, "no_results", f"no results found in {out_dir}")
    _guard_outputs(out_dir, ("summary_params.csv", "summary_defense.csv", "summary.md"), args.force)

    rows = _read_csv(attack_csv)
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for row in rows:
        groups[(float(row["prune_ratio"]), row["rule"], row["granularity"])].append(row)
    defense = []
    for (ratio, rule, gran), members in sorted(groups.items()):
        mean = lambda key: float(np.mean([float(m[key]) for m in members]))  # noqa: E731
        defense.append([repr(ratio), rule, gran, len(members), repr(mean("precision")), repr(mean("recall")),
                        repr(mean("candidate_fraction"))])

    params_path = out_dir / "summary_params.csv"
    with open(params_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["n"] + [f"V_b={vb}" for vb in TABLE_VB])
        w.writerows(param_table(args.h, args.d_out))
    defense_path = out_dir / "summary_defense.csv"
    with open(defense_path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["prune_ratio", "rule", "granularity", "snapshots", "precision", "recall", "candidate_fraction"])
        w.writerows(defense)

    md = ["# SEB run summary", "", f"## Embedding parameters (SEB_CO, h={args.h}, d_out={args.d_out})", "",
          "| n | " + " | ".join(f"V_b={vb}" for vb in TABLE_VB) + " |", "|---" * (len(TABLE_VB) + 1) + "|"]
    for row in param_table(args.h, args.d_out):
        md.append(f"| {row[0]} | " + " | ".join(f"{c / 1e6:.2f}M" for c in row[1:]) + " |")
    md += ["", "## Extraction precision / recall", "",
           "| prune ratio | rule | granularity | precision | recall | candidate fraction |", "|---|---|---|---|---|---|"]
    for r in defense:
        md.append(f"| {r[0]} | {r[1]} | {r[2]} | {float(r[4]):.4f} | {float(r[5]):.4f} | {float(r[6]):.4f} |")
    rounds_csv = out_dir / "rounds.csv"
    if rounds_csv.exists():
        rr = _read_csv(rounds_csv)
        if rr:
            md += ["", f"Final round {rr[-1]['round']}: loss {float(rr[-1]['loss']):.4f}, "
                       f"accuracy {float(rr[-1]['accuracy']):.4f}"]
    md_path = out_dir / "summary.md"
    md_path.write_text("\n".join(md) + "\n", encoding="utf-8")
    _update_meta(out_dir, "report", None, [params_path, defense_path, md_path])
    print(md_path.read_text(encoding="utf-8"), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_dims(p, with_vocab=True):
    p.add_argument("--variant", default="SEB_CO")
    if with_vocab:
        p.add_argument("--vocab", help="vocab file (sets V_w)")
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--vb", type=int, default=256)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=512)
    p.add_argument("--h", type=int, default=1024)
    p.add_argument("--d-out", type=int, default=512)
    p.add_argument("--bias", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seb", description="Subword embeddings from bytes: FL privacy simulator")
    parser.add_argument("--version", action="version", version=f"seb {__version__}")
    sub = parser.add_subparsers(dest="noun", required=True)

    p = sub.add_parser("corpus", help="synthetic labelled corpus")
    csub = p.add_subparsers(dest="action", required=True)
    q = csub.add_parser("synth")
    q.add_argument("--num-samples", type=int, default=5000)
    q.add_argument("--num-classes", type=int, default=2)
    q.add_argument("--vocab-size", type=int, default=2000)
    q.add_argument("--tokens-per-sample", type=int, default=20)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_corpus)

    p = sub.add_parser("vocab", help="vocabulary files")
    vsub = p.add_subparsers(dest="action", required=True)
    q = vsub.add_parser("build")
    q.add_argument("--corpus", required=True)
    q.add_argument("--min-freq", type=int, default=1)
    q.add_argument("--max-size", type=int, default=50_000)
    q.add_argument("--out", required=True)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_vocab)

    p = sub.add_parser("mapping", help="subword -> byte mappings")
    msub = p.add_subparsers(dest="action", required=True)
    q = msub.add_parser("build")
    q.add_argument("--vocab")
    q.add_argument("--vocab-size", type=int)
    q.add_argument("--vb", type=int, default=256)
    q.add_argument("--n", type=int, default=8)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_mapping)
    q = msub.add_parser("inspect")
    q.add_argument("mapping")
    q.set_defaults(func=cmd_mapping)

    p = sub.add_parser("params", help="embedding parameter checkpoints")
    psub = p.add_subparsers(dest="action", required=True)
    q = psub.add_parser("init")
    _add_dims(q)
    q.add_argument("--mapping", help="take V_w, V_b and n from a mapping file")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--scale", type=float, default=0.1)
    q.add_argument("--out", required=True)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_params)
    q = psub.add_parser("inspect")
    q.add_argument("checkpoint")
    q.set_defaults(func=cmd_params)
    q = psub.add_parser("count")
    _add_dims(q)
    q.add_argument("--table", action="store_true", help="print the SEB_CO (n x V_b) table")
    q.set_defaults(func=cmd_params)

    for name, func, help_ in (("train", cmd_train, "federated training"), ("attack", cmd_attack, "attack snapshots")):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--config", required=True)
        q.add_argument("--force", action="store_true")
        q.set_defaults(func=func)

    q = sub.add_parser("report", help="summary tables from a run directory")
    q.add_argument("--config")
    q.add_argument("--dir")
    q.add_argument("--h", type=int, default=1024)
    q.add_argument("--d-out", type=int, default=512)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_report)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(f"seb: error: {kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except MappingInfeasible as exc:
        return _fail(EXIT_INFEASIBLE, "mapping_infeasible", str(exc))
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGENCE, "divergence", str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing_input", str(exc))
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config_error", str(exc))


if __name__ == "__main__":
    sys.exit(main())
