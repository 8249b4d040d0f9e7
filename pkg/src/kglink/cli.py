"""Command-line entry point tying the toolkit together.

Commands: build-dataset, train-kgc, train-joint, train-owe, index-bm25,
eval, serve, report. Every artifact-producing command resolves its
configuration (preset < config file < flags, where each flag mirrors one
config key), echoes the effective configuration, does the work, and
finishes by writing a run manifest next to the artifacts: the command
line, a hash of the effective configuration, the seed, input and output
paths, wall time, and a sha256 checksum per artifact file. Identical
commands therefore produce identical artifact checksums, and wall time
is the only part of a run that is not reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import shlex
import sys
import time
from dataclasses import dataclass, fields as dataclass_fields, replace
from pathlib import Path

from .bow import build_index, context_documents, load_index, save_index, vertex_documents
from .builder import build_bundle, stats_report
from .complex_model import save_embeddings, load_embeddings, train_closed_world
from .config import (
    ConfigError,
    build_config_from,
    config_hash,
    inductive_config_from,
    kgc_config_from,
    list_presets,
    load_config,
    load_preset,
)
from .evaluation import (
    DEFAULT_CTX_PER_MENTION,
    DEFAULT_SUBSAMPLE_RANKING,
    BowParams,
    evaluate,
    write_diagnostics,
    write_report,
)
from .inductive import load_model, save_model, train_joint, train_owe
from .service import OVERLAY_FILENAME, Workspace, create_app
from .storage import (
    StorageError,
    load_bundle,
    load_ingestion,
    load_source_graph,
    save_bundle,
)
from .text import import_external_encodings

MANIFEST_FILENAME = "manifest.tsv"

BUILD_KEYS = (
    "concept-relation-count",
    "total-relation-count",
    "closed-world-threshold",
    "target-mention-split",
    "target-validation-split",
    "mention-threshold",
    "seed",
)
KGC_KEYS = (
    "dim",
    "learning-rate",
    "regularizer-weight",
    "batch-size",
    "max-epochs",
    "patience",
    "min-delta",
    "seed",
    "optimizer",
)
INDUCTIVE_KEYS = (
    "dim",
    "mode",
    "contexts-per-sample",
    "max-contexts",
    "masked",
    "learning-rate",
    "weight-decay",
    "regularizer-weight",
    "batch-size",
    "subbatch-size",
    "max-epochs",
    "patience",
    "min-delta",
    "seed",
    "encoder-dim",
    "unfrozen-encoder",
    "unfrozen-layers",
)

# preset names may be given without their command family prefix
_PRESET_PREFIXES = {
    "build-dataset": "build-",
    "train-kgc": "kgc-",
    "train-joint": "joint-",
    "train-owe": "owe-",
}


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_hash: str
    seed: int
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    wall_time_seconds: float
    checksums: tuple[tuple[str, str], ...]


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    directory: str | Path,
    command: str,
    config_pairs: dict[str, str],
    seed: int,
    inputs: list[str | Path],
    started: float,
) -> RunManifest:
    d = Path(directory)
    files = sorted(
        p for p in d.rglob("*") if p.is_file() and p.name != MANIFEST_FILENAME
    )
    checksums = tuple((p.relative_to(d).as_posix(), _sha256(p)) for p in files)
    manifest = RunManifest(
        command=command,
        config_hash=config_hash(config_pairs).hex(),
        seed=seed,
        inputs=tuple(str(p) for p in inputs),
        outputs=tuple(name for name, _ in checksums),
        wall_time_seconds=time.perf_counter() - started,
        checksums=checksums,
    )
    lines = [
        "# run manifest",
        f"command\t{manifest.command}",
        f"config-hash\t{manifest.config_hash}",
        f"seed\t{manifest.seed}",
    ]
    lines.extend(f"input\t{p}" for p in manifest.inputs)
    lines.extend(f"output\t{p}" for p in manifest.outputs)
    lines.append(f"wall-time-seconds\t{manifest.wall_time_seconds:.3f}")
    lines.extend(f"checksum\t{name}\t{digest}" for name, digest in manifest.checksums)
    (d / MANIFEST_FILENAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def read_manifest(path: str | Path) -> RunManifest:
    command = ""
    digest = ""
    seed = 0
    inputs: list[str] = []
    outputs: list[str] = []
    wall = 0.0
    checksums: list[tuple[str, str]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, _, value = line.partition("\t")
        if key == "command":
            command = value
        elif key == "config-hash":
            digest = value
        elif key == "seed":
            seed = int(value)
        elif key == "input":
            inputs.append(value)
        elif key == "output":
            outputs.append(value)
        elif key == "wall-time-seconds":
            wall = float(value)
        elif key == "checksum":
            name, _, file_digest = value.partition("\t")
            checksums.append((name, file_digest))
        else:
            raise ValueError(f"{path}: unknown manifest key {key!r}")
    return RunManifest(
        command=command,
        config_hash=digest,
        seed=seed,
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        wall_time_seconds=wall,
        checksums=tuple(checksums),
    )


def _resolve_preset(command: str, name: str) -> dict[str, str]:
    catalogue = list_presets()
    if name in catalogue:
        return load_preset(name)
    prefixed = _PRESET_PREFIXES.get(command, "") + name
    if prefixed in catalogue:
        return load_preset(prefixed)
    raise KeyError(
        f"unknown preset {name!r} (also tried {prefixed!r}); "
        f"available: {', '.join(catalogue)}"
    )


def _gather_pairs(args, command: str, keys: tuple[str, ...]) -> dict[str, str]:
    pairs: dict[str, str] = {}
    if args.preset:
        pairs.update(_resolve_preset(command, args.preset))
    if args.config:
        pairs.update(load_config(args.config))
    for key in keys:
        value = getattr(args, key.replace("-", "_"))
        if value is not None:
            pairs[key] = value
    return pairs


def _as_config_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _effective_pairs(config) -> dict[str, str]:
    return {
        f.name.replace("_", "-"): _as_config_value(getattr(config, f.name))
        for f in dataclass_fields(config)
    }


def _echo(pairs: dict[str, str]) -> None:
    for key in sorted(pairs):
        print(f"{key}={pairs[key]}")


def _write_training_log(path: Path, log: dict) -> None:
    lines = [
        f"epochs\t{log.get('epochs', 0)}",
        f"stopped-early\t{'yes' if log.get('stopped_early') else 'no'}",
    ]
    if "skipped_no_contexts" in log:
        lines.append(f"skipped-no-contexts\t{log['skipped_no_contexts']}")
    for i, loss in enumerate(log.get("epoch_losses", ()), start=1):
        lines.append(f"epoch-loss\t{i}\t{loss!r}")
    for i, score in enumerate(log.get("monitor", ()), start=1):
        lines.append(f"monitor\t{i}\t{score!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _records_path(source: str | Path) -> Path:
    plain = Path(source) / "records.tsv"
    if plain.exists():
        return plain
    packed = plain.with_name("records.tsv.gz")
    if packed.exists():
        return packed
    raise StorageError(f"{plain}: file not found (also tried .gz)")


def _cmd_build_dataset(args, command: str) -> int:
    pairs = _gather_pairs(args, "build-dataset", BUILD_KEYS)
    config = build_config_from(pairs)
    echo = _effective_pairs(config)
    _echo(echo)
    started = time.perf_counter()
    graph = load_source_graph(args.source)
    records = load_ingestion(_records_path(args.source))
    bundle, _report = build_bundle(graph, records, config)
    out = _out_dir(args)
    save_bundle(bundle, out)
    for key, value in stats_report(bundle).items():
        print(f"{key}\t{value}")
    write_manifest(out, command, echo, config.seed, [args.source], started)
    return 0


def _cmd_train_kgc(args, command: str) -> int:
    pairs = _gather_pairs(args, "train-kgc", KGC_KEYS)
    config = kgc_config_from(pairs)
    echo = _effective_pairs(config)
    _echo(echo)
    started = time.perf_counter()
    bundle = load_bundle(args.bundle)
    log: dict = {}
    embeddings = train_closed_world(
        bundle.closed.graph, config, vertex_ids=bundle.closed_vertices(), log=log
    )
    out = _out_dir(args)
    save_embeddings(
        embeddings, out / "complex.kge", seed=config.seed, config_hash=config_hash(echo)
    )
    _write_training_log(out / "training.tsv", log)
    write_manifest(out, command, echo, config.seed, [args.bundle], started)
    return 0


def _cmd_train_joint(args, command: str) -> int:
    pairs = _gather_pairs(args, "train-joint", INDUCTIVE_KEYS)
    config = inductive_config_from(pairs)
    echo = _effective_pairs(config)
    _echo(echo)
    started = time.perf_counter()
    bundle = load_bundle(args.bundle)
    external = import_external_encodings(args.external) if args.external else None
    log: dict = {}
    model = train_joint(bundle, config, external=external, log=log)
    out = _out_dir(args)
    save_model(model, out / "model.kgl", seed=config.seed, config_hash=config_hash(echo))
    _write_training_log(out / "training.tsv", log)
    inputs = [args.bundle] + ([args.external] if args.external else [])
    write_manifest(out, command, echo, config.seed, inputs, started)
    return 0


def _cmd_train_owe(args, command: str) -> int:
    pairs = _gather_pairs(args, "train-owe", INDUCTIVE_KEYS)
    config = inductive_config_from(pairs)
    echo = _effective_pairs(config)
    _echo(echo)
    started = time.perf_counter()
    bundle = load_bundle(args.bundle)
    pretrained, _meta = load_embeddings(args.pretrained)
    external = import_external_encodings(args.external) if args.external else None
    log: dict = {}
    model = train_owe(bundle, pretrained, config, external=external, log=log)
    out = _out_dir(args)
    save_model(model, out / "model.kgl", seed=config.seed, config_hash=config_hash(echo))
    _write_training_log(out / "training.tsv", log)
    inputs = [args.bundle, args.pretrained] + ([args.external] if args.external else [])
    write_manifest(out, command, echo, config.seed, inputs, started)
    return 0


def _cmd_index_bm25(args, command: str) -> int:
    pairs = {"kind": args.kind, "k1": str(args.k1), "b": str(args.b)}
    if args.kind == "context-doc":
        pairs["split"] = args.split
    _echo(pairs)
    started = time.perf_counter()
    bundle = load_bundle(args.bundle)
    if args.kind == "context-doc":
        documents = context_documents(bundle, args.split)
    else:
        documents = vertex_documents(bundle)
    index = build_index(documents, k1=args.k1, b=args.b)
    out = _out_dir(args)
    save_index(index, out / "index.bm25")
    write_manifest(out, command, pairs, 0, [args.bundle], started)
    return 0


def _cmd_eval(args, command: str) -> int:
    started = time.perf_counter()
    if args.engine == "bm25":
        if not args.index:
            raise ValueError("--engine bm25 requires --index")
        engine = load_index(args.index)
        engine_input = args.index
    else:
        if not args.model:
            raise ValueError(f"--engine {args.engine} requires --model")
        model, _meta = load_model(args.model)
        if args.engine != "neural":
            expected_mode = args.engine.rsplit("-", 1)[-1]
            if model.mode != expected_mode:
                raise ValueError(
                    f"--engine {args.engine} expects a {expected_mode}-context model, "
                    f"but the checkpoint was trained in {model.mode!r} mode"
                )
        engine = model
        engine_input = args.model
    bundle = load_bundle(args.bundle)
    bow = BowParams(n_repr=args.n_repr, n_ctx=args.n_ctx, top_n=args.top_n)
    report = evaluate(
        args.task,
        engine,
        bundle,
        split=args.split,
        subsample_ranking=args.subsample_ranking,
        ctx_per_mention=args.ctx_per_mention,
        seed=args.seed,
        bow=bow,
    )
    # keep the user-facing engine name (e.g. owe-multi) in the artifacts
    report = replace(report, engine=args.engine)
    out = _out_dir(args)
    write_report(report, out / "report.tsv")
    write_diagnostics(report, out / "diagnostics.tsv")
    print((out / "report.tsv").read_text(encoding="utf-8"), end="")
    pairs = {
        "task": args.task,
        "engine": args.engine,
        "split": args.split,
        "subsample-ranking": str(args.subsample_ranking),
        "ctx-per-mention": str(args.ctx_per_mention),
        "seed": str(args.seed),
        "n-repr": str(args.n_repr),
        "n-ctx": str(args.n_ctx),
        "top-n": str(args.top_n),
    }
    write_manifest(out, command, pairs, args.seed, [args.bundle, engine_input], started)
    return 0


def _cmd_serve(args, command: str) -> int:
    bundle = load_bundle(args.bundle)
    model = load_model(args.model)[0] if args.model else None
    ranking_index = load_index(args.ranking_index) if args.ranking_index else None
    linking_index = load_index(args.linking_index) if args.linking_index else None
    workspace = Workspace(
        bundle,
        model=model,
        ranking_index=ranking_index,
        linking_index=linking_index,
        split=args.split,
        overlay_path=Path(args.bundle) / OVERLAY_FILENAME,
        seed=args.seed,
    )
    app = create_app(workspace)
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _cmd_report(args, command: str) -> int:
    started = time.perf_counter()
    bundle = load_bundle(args.bundle)
    text = "".join(f"{k}\t{v}\n" for k, v in stats_report(bundle).items())
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        (out / "stats.tsv").write_text(text, encoding="utf-8")
        write_manifest(out, command, {"bundle": str(args.bundle)}, 0, [args.bundle], started)
    return 0


def _add_config_flags(sub, keys: tuple[str, ...]) -> None:
    sub.add_argument("--preset", help="named built-in configuration")
    sub.add_argument("--config", help="key=value configuration file")
    for key in keys:
        sub.add_argument(f"--{key}", dest=key.replace("-", "_"), metavar="VALUE")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kglink",
        description="Open-world knowledge graph linking and ranking toolkit.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("build-dataset", help="build a dataset bundle from raw sources")
    p.add_argument("--source", required=True, help="directory with the raw graph and records")
    p.add_argument("--out", required=True, help="bundle output directory")
    _add_config_flags(p, BUILD_KEYS)
    p.set_defaults(func=_cmd_build_dataset)

    p = subs.add_parser("train-kgc", help="train closed-world embeddings")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, KGC_KEYS)
    p.set_defaults(func=_cmd_train_kgc)

    p = subs.add_parser("train-joint", help="train text and graph parts together")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--external", help="precomputed context encodings file")
    _add_config_flags(p, INDUCTIVE_KEYS)
    p.set_defaults(func=_cmd_train_joint)

    p = subs.add_parser("train-owe", help="align a text head onto frozen embeddings")
    p.add_argument("--bundle", required=True)
    p.add_argument("--pretrained", required=True, help="embedding checkpoint to freeze")
    p.add_argument("--out", required=True)
    p.add_argument("--external", help="precomputed context encodings file")
    _add_config_flags(p, INDUCTIVE_KEYS)
    p.set_defaults(func=_cmd_train_owe)

    p = subs.add_parser("index-bm25", help="build a retrieval index")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("context-doc", "vertex-doc"), default="context-doc")
    p.add_argument("--split", choices=("validation", "test"), default="validation")
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.set_defaults(func=_cmd_index_bm25)

    p = subs.add_parser("eval", help="run the ranking or linking protocol")
    p.add_argument("--task", required=True, choices=("ranking", "linking"))
    p.add_argument(
        "--engine",
        required=True,
        choices=("neural", "joint-single", "joint-multi", "owe-single", "owe-multi", "bm25"),
    )
    p.add_argument("--bundle", required=True)
    p.add_argument("--model", help="model checkpoint (neural engines)")
    p.add_argument("--index", help="retrieval index (bm25 engine)")
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("validation", "test"), default="validation")
    p.add_argument("--subsample-ranking", type=int, default=DEFAULT_SUBSAMPLE_RANKING)
    p.add_argument("--ctx-per-mention", type=int, default=DEFAULT_CTX_PER_MENTION)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-repr", type=int, default=BowParams.n_repr)
    p.add_argument("--n-ctx", type=int, default=BowParams.n_ctx)
    p.add_argument("--top-n", type=int, default=BowParams.top_n)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("serve", help="serve the review workbench over HTTP")
    p.add_argument("--bundle", required=True)
    p.add_argument("--model")
    p.add_argument("--ranking-index")
    p.add_argument("--linking-index")
    p.add_argument("--split", choices=("validation", "test"), default="validation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    p = subs.add_parser("report", help="print dataset statistics")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", help="also write stats.tsv and a manifest here")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = _build_parser()
    args = parser.parse_args(argv)
    command = shlex.join(["kglink", *argv])
    try:
        return args.func(args, command)
    except ConfigError as err:
        for problem in err.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    except KeyError as err:
        print(f"error: {err.args[0] if err.args else err}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
