"""Command-line entry point: ``humanchess <subcommand> ...``.

Every subcommand accepts ``--config FILE`` (JSON) and repeated
``--set section.key=value`` overrides, writes its artifact plus an
``<artifact>.provenance.json`` record, and exits with 0 (success),
2 (usage), 3 (data), 4 (engine or IO) or 5 (internal fault). Failures
print one JSON object to standard error.
"""

from __future__ import annotations

import os

# strict determinism: single-threaded BLAS, set before numpy loads
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import copy  # noqa: E402
import csv  # noqa: E402
import dataclasses  # noqa: E402
import hashlib  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from collections import defaultdict  # noqa: E402
from pathlib import Path  # noqa: E402
from typing import Dict, List, Optional, Sequence  # noqa: E402

from . import __version__  # noqa: E402
from .errors import HumanChessError, IoFailure, UsageError  # noqa: E402

log = logging.getLogger("humanchess")

DEFAULTS: Dict[str, dict] = {
    "run": {"seed": 0, "log_level": "WARNING"},
    "ingest": {"min_estimated_duration": 180, "min_clock": 30, "skip_opening_ply": 10, "require_same_bin": True,
               "require_evals": False, "require_clocks": True, "clock_rule": "mover"},
    "winprob": {"min_samples": 1},
    "dataset": {"shuffle_capacity": 250_000, "negative_ratio": 1.5, "tau": 0.10, "collective_min": 10,
                "collective_strict": True, "collective_rate": 0.10},
    "policy": {},
    "blunder_cnn": {},
    "blunder_fc": {},
    "logit": {},
    "forest": {},
    "eval": {"depth": 15, "bin_width": 0.05, "mode": "complexity", "threshold": 0.5},
}


def _section_defaults() -> Dict[str, dict]:
    from .models.baselines import ForestConfig, LogitConfig
    from .models.blunder import BlunderCnnConfig, BlunderFcConfig
    from .models.policy import MaiaConfig

    cfg = copy.deepcopy(DEFAULTS)
    for name, cls in (("policy", MaiaConfig), ("blunder_cnn", BlunderCnnConfig), ("blunder_fc", BlunderFcConfig),
                      ("logit", LogitConfig), ("forest", ForestConfig)):
        cfg[name] = {f.name: _jsonable(getattr(cls(), f.name)) for f in dataclasses.fields(cls)}
    return cfg


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path: Optional[str], overrides: Sequence[str]) -> Dict[str, dict]:
    """Defaults, then the config file, then ``--set`` overrides; unknown keys are rejected."""
    cfg = _section_defaults()

    def put(section: str, key: str, value, origin: str):
        if section not in cfg:
            raise UsageError(f"unknown config section {section!r} ({origin})")
        if key not in cfg[section]:
            raise UsageError(f"unknown config key {section}.{key} ({origin})")
        cfg[section][key] = value

    if path:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object of sections")
        for section, values in data.items():
            if not isinstance(values, dict):
                raise UsageError(f"config section {section!r} must be an object")
            for k, v in values.items():
                put(section, k, v, path)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        put(section, name, _parse_value(value), "--set")
    return cfg


def _build(cls, values: dict):
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items() if k in fields}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {cls.__name__}: {exc}") from None


# ---------------------------------------------------------------------------
# provenance


def file_digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    return h.hexdigest()


def write_provenance(artifact, command: str, config: dict, seed: int, inputs: Sequence) -> None:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    record = {
        "artifact": os.path.basename(os.fspath(artifact)),
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
        "seed": seed,
        "inputs": {os.path.basename(os.fspath(p)): file_digest(p) for p in inputs},
        "version": __version__,
    }
    _write_text(f"{os.fspath(artifact)}.provenance.json", json.dumps(record, indent=2, sort_keys=True) + "\n")


def _write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


def _open_binary(path):
    try:
        return open(path, "rb")
    except OSError as exc:
        raise IoFailure(f"cannot open {path}: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, cfg) -> None:
    from .datasets import ShardWriter
    from .pgn import FilterPolicy, IngestStats, ParseStats, SkipReason, ingest, parse_pgn_stream

    policy = _build(FilterPolicy, cfg["ingest"])
    stats, pstats = IngestStats(), ParseStats()
    by_bin: Dict[str, ShardWriter] = {}
    if args.by_bin:
        os.makedirs(args.by_bin, exist_ok=True)

    def games():
        for path in args.pgn:
            with _open_binary(path) as fh:
                yield from parse_pgn_stream(fh, pstats)

    with ShardWriter(args.out) as writer:
        for game, instances in ingest(games(), policy, stats):
            for inst in instances:
                writer.write(inst)
                if args.by_bin:
                    key = str(inst.mover_rating // 100 * 100)
                    if key not in by_bin:
                        by_bin[key] = ShardWriter(os.path.join(args.by_bin, f"bin_{key}.shard"))
                    by_bin[key].write(inst)
    for w in by_bin.values():
        w.close()

    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["kind", "key", "count"])
    w.writerow(["total", "games_seen", stats.games_seen])
    w.writerow(["total", "games_used", stats.games_used])
    w.writerow(["total", "instances", stats.instances])
    for reason in SkipReason:
        w.writerow(["skip", reason.value, stats.skipped.get(reason.value, 0) + pstats.skipped.get(reason, 0)])
    for key in sorted(stats.per_bin_games):
        w.writerow(["bin_games", key, stats.per_bin_games[key]])
        w.writerow(["bin_instances", key, stats.per_bin_instances[key]])
    summary = args.summary or f"{args.out}.summary.csv"
    _write_text(summary, out.getvalue())
    seed = cfg["run"]["seed"]
    write_provenance(args.out, "ingest", {"ingest": cfg["ingest"]}, seed, args.pgn)
    write_provenance(summary, "ingest", {"ingest": cfg["ingest"]}, seed, args.pgn)


def _instances(paths):
    from .datasets import ShardSet
    return ShardSet(paths)


def _load_table(path):
    from .winprob import WinProbTable
    try:
        return WinProbTable.load(path)
    except OSError as exc:
        raise IoFailure(f"cannot read table {path}: {exc}") from None


def cmd_winprob_build(args, cfg) -> None:
    from .winprob import build_table, observations_from_instances

    table = build_table(observations_from_instances(_instances(args.shards)), cfg["winprob"]["min_samples"])
    _write_text(args.out, table.to_csv())
    write_provenance(args.out, "winprob-build", {"winprob": cfg["winprob"]}, cfg["run"]["seed"], args.shards)


def _labelled(instances, table, tau):
    from .winprob import BlunderThreshold, label_blunder
    thr = BlunderThreshold(tau)
    for inst in instances:
        if inst.eval_before is None or inst.eval_after is None:
            continue
        yield dataclasses.replace(inst, blunder=label_blunder(inst, table, thr))


def cmd_dataset_build(args, cfg) -> None:
    from .datasets import collective_csv, downsample_negatives, group_collective, shuffle_stream, write_shard

    d, seed = cfg["dataset"], cfg["run"]["seed"]
    inputs = list(args.shards)
    if args.kind == "policy":
        write_shard(shuffle_stream(_instances(args.shards), d["shuffle_capacity"], seed), args.out)
    else:
        if not args.table:
            raise UsageError(f"dataset-build {args.kind} needs --table")
        inputs.append(args.table)
        table = _load_table(args.table)
        labelled = list(_labelled(_instances(args.shards), table, d["tau"]))
        if args.kind == "blunder":
            pos = [i for i in labelled if i.blunder]
            neg = [i for i in labelled if not i.blunder]
            kept = downsample_negatives(pos, neg, d["negative_ratio"], seed)
            write_shard(shuffle_stream(kept, d["shuffle_capacity"], seed), args.out)
        else:
            recs = group_collective(labelled, d["collective_min"], d["collective_strict"], d["collective_rate"])
            _write_text(args.out, collective_csv(recs))
    write_provenance(args.out, f"dataset-build {args.kind}", {"dataset": d}, seed, inputs)


def _metrics_csv(rows: List[dict], columns: Sequence[str]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return out.getvalue()


def _blunder_arrays(paths, table, metadata: bool):
    from .models.blunder import encode_blunder_dataset
    instances = [i for i in _instances(paths) if i.blunder is not None]
    return encode_blunder_dataset(instances, table, metadata)


def cmd_train(args, cfg) -> None:
    from .nn import save_checkpoint

    seed = cfg["run"]["seed"]
    inputs = list(args.shards) + list(args.valid or [])
    if args.kind == "policy":
        from .models.policy import MaiaConfig, train_policy
        mcfg = _build(MaiaConfig, cfg["policy"])
        valid = list(_instances(args.valid)) if args.valid else None
        result = train_policy(_instances(args.shards), valid, mcfg, seed)
        rows, cols = result.metrics, ("step", "lr", "policy_loss", "value_loss", "val_accuracy")
        section = {"policy": cfg["policy"]}
    else:
        from .models.blunder import BlunderCnnConfig, BlunderFcConfig, train_blunder
        cls, name = (BlunderCnnConfig, "blunder_cnn") if args.kind == "blunder_cnn" else (BlunderFcConfig, "blunder_fc")
        bcfg = _build(cls, cfg[name])
        table = None
        if bcfg.metadata:
            if not args.table:
                raise UsageError("metadata models need --table")
            table = _load_table(args.table)
            inputs.append(args.table)
        x, y = _blunder_arrays(args.shards, table, bcfg.metadata)
        valid = _blunder_arrays(args.valid, table, bcfg.metadata) if args.valid else None
        result = train_blunder(x, y, bcfg, seed, valid)
        rows, cols = result.metrics, ("step", "lr", "loss", "val_accuracy")
        section = {name: cfg[name]}
    save_checkpoint(result.net, args.out)
    write_provenance(args.out, f"train {args.kind}", section, seed, inputs)
    if args.metrics:
        _write_text(args.metrics, _metrics_csv(rows, cols))
        write_provenance(args.metrics, f"train {args.kind}", section, seed, inputs)


def _policy_predictors(paths):
    from .models.policy import PolicyPredictor
    names = [Path(p).stem for p in paths]
    if len(set(names)) != len(names):
        names = [os.fspath(p) for p in paths]
    return [PolicyPredictor.from_path(p, n) for p, n in zip(paths, names)]


def _test_sets(paths):
    from .evaluation import TestSet
    from .pgn import bin_for_rating
    groups = defaultdict(list)
    for inst in _instances(paths):
        b = bin_for_rating(inst.mover_rating)
        if b is not None:
            groups[b.lower].append(inst)
    return [TestSet(bin_for_rating(k), groups[k]) for k in sorted(groups)]


def cmd_eval(args, cfg) -> None:
    from . import evaluation as ev

    e, seed = cfg["eval"], cfg["run"]["seed"]
    inputs = list(args.shards) + list(args.ckpt)
    if args.kind == "curve":
        text = ev.prediction_curve(_policy_predictors(args.ckpt), _test_sets(args.shards)).to_csv()
    elif args.kind == "agreement":
        ts = ev.TestSet(None, list(_instances(args.shards)))
        names, mat = ev.agreement_matrix(_policy_predictors(args.ckpt), ts)
        text = ev.agreement_csv(names, mat)
    elif args.kind == "decompose":
        if not (args.engine and args.table):
            raise UsageError("eval decompose needs --engine and --table")
        from .uci import spawn
        table = _load_table(args.table)
        ts = ev.TestSet(None, list(_instances(args.shards)))
        with spawn(args.engine.split() if isinstance(args.engine, str) else args.engine) as handle:
            refs = ev.reference_evals(handle, ts.instances, table, e["depth"])
        parts = []
        for pred in _policy_predictors(args.ckpt):
            rows = ev.decompose(pred, ts, refs, e["mode"], e["bin_width"])
            parts.append(ev.decomposition_csv(rows, pred.name))
        text = parts[0] + "".join(p.split("\n", 1)[1] for p in parts[1:])
        inputs.append(args.table)
    elif args.kind == "blunder":
        from .nn import load_checkpoint
        rows = []
        table = _load_table(args.table) if args.table else None
        if table is not None:
            inputs.append(args.table)
        for path in args.ckpt:
            net = load_checkpoint(path)
            meta = net.config.get("planes") == 22
            if meta and table is None:
                raise UsageError("metadata models need --table")
            x, y = _blunder_arrays(args.shards, table, meta)
            rows.append(ev.blunder_metrics(Path(path).stem, net.predict_proba(x), y, e["threshold"]))
        text = ev.metrics_csv(rows)
    else:
        raise UsageError(f"unknown eval kind {args.kind}")
    _write_text(args.out, text)
    write_provenance(args.out, f"eval {args.kind}", {"eval": e}, seed, inputs)


def cmd_baseline(args, cfg) -> None:
    from . import evaluation as ev
    from .models.baselines import ForestConfig, LogitConfig, train_forest, train_logit

    seed = cfg["run"]["seed"]
    table = _load_table(args.table) if args.table else None
    if args.metadata and table is None:
        raise UsageError("--metadata needs --table")
    x, y = _blunder_arrays(args.shards, table, args.metadata)
    xt, yt = _blunder_arrays(args.test, table, args.metadata)
    if args.kind == "logit":
        model = train_logit(x, y, _build(LogitConfig, cfg["logit"]))
        section = {"logit": cfg["logit"]}
    else:
        fcfg = _build(ForestConfig, dict(cfg["forest"], seed=cfg["forest"].get("seed", seed)))
        model = train_forest(x, y, fcfg)
        section = {"forest": cfg["forest"]}
    name = f"{args.kind}{'-meta' if args.metadata else ''}"
    text = ev.metrics_csv([ev.blunder_metrics(name, model.predict_proba(xt), yt, cfg["eval"]["threshold"])])
    _write_text(args.out, text)
    inputs = list(args.shards) + list(args.test) + ([args.table] if args.table else [])
    write_provenance(args.out, f"baseline {args.kind}", section, seed, inputs)


def cmd_uci_serve(args, cfg) -> None:
    from .nn import load_checkpoint
    from .uci import uci_serve
    uci_serve(load_checkpoint(args.ckpt), sys.stdin, sys.stdout, name=Path(args.ckpt).stem)


def cmd_uci_reference(args, cfg) -> None:
    from .refengine import run
    run(sys.stdin, sys.stdout)


def cmd_synth(args, cfg) -> None:
    import datetime as dt
    from .pgn import format_game
    from .synthetic import generate_games, make_policy

    policy = make_policy(args.policy)
    date = dt.date(args.year, 1, 1)
    parts = [format_game(g) for g in generate_games(policy, args.games, cfg["run"]["seed"], elo=args.elo,
                                                    max_plies=args.max_plies, date=date)]
    _write_text(args.out, "".join(parts))
    write_provenance(args.out, "synth", {"synth": vars_without(args, "func", "out")}, cfg["run"]["seed"], [])


def vars_without(args, *drop) -> dict:
    return {k: (v if not isinstance(v, Path) else os.fspath(v)) for k, v in sorted(vars(args).items())
            if k not in drop and k not in ("config", "set")}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (sections mirror module configs)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="global seed (same as --set run.seed=N)")

    p = argparse.ArgumentParser(prog="humanchess", description="Human move prediction pipeline.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="PGN -> filtered move-instance shard")
    s.add_argument("pgn", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--summary")
    s.add_argument("--by-bin", help="also write one shard per rating bin into this directory")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("winprob-build", parents=[common], help="shards -> win-probability table CSV")
    s.add_argument("shards", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_winprob_build)

    s = sub.add_parser("dataset-build", parents=[common], help="build a policy, blunder or collective dataset")
    s.add_argument("--kind", choices=("policy", "blunder", "collective"), required=True)
    s.add_argument("shards", nargs="+")
    s.add_argument("--table")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dataset_build)

    s = sub.add_parser("train", parents=[common], help="train a policy or blunder network")
    s.add_argument("--kind", choices=("policy", "blunder_cnn", "blunder_fc"), required=True)
    s.add_argument("shards", nargs="+")
    s.add_argument("--valid", action="append", help="validation shard (repeatable)")
    s.add_argument("--table")
    s.add_argument("--out", required=True)
    s.add_argument("--metrics")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="curves, agreement, decompositions, blunder metrics")
    s.add_argument("--kind", choices=("curve", "agreement", "decompose", "blunder"), required=True)
    s.add_argument("--ckpt", action="append", required=True, help="checkpoint (repeatable)")
    s.add_argument("shards", nargs="+")
    s.add_argument("--engine", help="UCI engine command line (decompose)")
    s.add_argument("--table")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("baseline", parents=[common], help="logistic regression or random forest blunder baseline")
    s.add_argument("--kind", choices=("logit", "forest"), required=True)
    s.add_argument("shards", nargs="+")
    s.add_argument("--test", action="append", required=True, help="test shard (repeatable)")
    s.add_argument("--table")
    s.add_argument("--metadata", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("uci-serve", parents=[common], help="serve a policy checkpoint over UCI on stdio")
    s.add_argument("ckpt")
    s.set_defaults(func=cmd_uci_serve)

    s = sub.add_parser("uci-reference", parents=[common], help="run the built-in material search engine over UCI")
    s.set_defaults(func=cmd_uci_reference)

    s = sub.add_parser("synth", parents=[common], help="write self-play games of a scripted policy as PGN")
    s.add_argument("--policy", choices=("random", "greedy", "minimax"), default="greedy")
    s.add_argument("--games", type=int, default=100)
    s.add_argument("--elo", type=int, default=1500)
    s.add_argument("--year", type=int, default=2019)
    s.add_argument("--max-plies", type=int, default=200)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        overrides = list(args.set) + ([f"run.seed={args.seed}"] if args.seed is not None else [])
        cfg = resolve_config(args.config, overrides)
        logging.basicConfig(level=str(cfg["run"]["log_level"]).upper(), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        log.info("resolved config: %s", json.dumps(cfg, sort_keys=True))
        args.func(args, cfg)
        return 0
    except HumanChessError as exc:
        return _fail(exc, exc.exit_code)
    except KeyboardInterrupt as exc:
        return _fail(exc, 5)
    except Exception as exc:  # internal fault
        log.debug("internal fault", exc_info=True)
        return _fail(exc, 5)


if __name__ == "__main__":
    sys.exit(main())
