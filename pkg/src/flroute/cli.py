"""``flroute`` command line: gen-data, train, personalize, report.

Exit codes: 0 success, 1 usage, 2 configuration, 3 data format, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from flroute import __version__, plots
from flroute.artifacts import MANIFEST_FILE, RunManifest, load_params, save_params, spec_for_artifact
from flroute.config import Settings, resolve
from flroute.data import generate_corpus, load_corpus, save_corpus
from flroute.errors import ConfigurationError, FlrouteError
from flroute.evaluate import GAP, ResultsTable, evaluate_model, local_average_rows
from flroute.federation import (
    RunResult,
    make_clients,
    run_centralized,
    run_fedavg,
    run_fedprox,
    run_local_only,
    write_round_logs,
)
from flroute.nn import ModelSpec, preset
from flroute.personalize import (
    ClusterAssignment,
    PartitionSpec,
    client_models,
    fine_tune_all,
    run_alpha_portion,
    run_assigned_clustering,
    run_fedprox_lg,
    run_ifca,
)

log = logging.getLogger("flroute")

METHODS = ("local", "central", "fedavg", "fedprox", "fedprox-lg", "ifca", "assigned", "alpha")
GLOBAL_METHODS = {"central", "fedavg", "fedprox"}
MODEL_FILE = "model.fpv"
ROUND_LOG = "rounds.jsonl"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def client_file(client_id: int) -> str:
    return f"client_{client_id:02d}.fpv"


def cluster_file(cluster: int) -> str:
    return f"cluster_{cluster}.fpv"


def _settings(args, **overrides) -> Settings:
    return resolve(args.config, {"seed": args.seed, **overrides})


def _corpus_channels(corpus) -> int:
    return int(corpus[0].train.x.shape[1])


def _check_channels(settings: Settings, corpus) -> None:
    have = _corpus_channels(corpus)
    if "corpus.channels" in settings.sources and settings.corpus.channels != have:
        raise ConfigurationError(
            f"config asks for {settings.corpus.channels} input channels but the corpus has {have}"
        )


# -- gen-data -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    settings = _settings(args)
    out = Path(args.out)
    RunManifest("gen-data", "", settings.seed, "", ".", settings.snapshot()).write(out)
    corpus = generate_corpus(settings.corpus)
    save_corpus(corpus, out, settings.corpus)
    log.info("wrote %d clients to %s", len(corpus), out)
    return 0


# -- train --------------------------------------------------------------------


def _assignment(settings: Settings, corpus) -> ClusterAssignment:
    if settings.assignment is not None:
        mapping = settings.assignment
    else:
        # planted families, renumbered 1..F in order of first appearance
        order = list(dict.fromkeys(c.family_id for c in corpus))
        mapping = {c.client_id: order.index(c.family_id) + 1 for c in corpus}
    clusters = max(mapping.values())
    if "personalize.clusters" in settings.sources and settings.personalize.clusters != clusters:
        raise ConfigurationError(
            f"assigned clustering uses {clusters} clusters; pass personalize.assignment to use "
            f"{settings.personalize.clusters}"
        )
    return ClusterAssignment(clusters, mapping)


def _run_method(method: str, spec: ModelSpec, clients, settings: Settings, corpus) -> RunResult:
    cfg = settings.round
    if method == "local":
        return run_local_only(spec, clients, cfg)
    if method == "central":
        return run_centralized(spec, clients, cfg)
    if method == "fedavg":
        return run_fedavg(spec, clients, cfg)
    if method == "fedprox":
        return run_fedprox(spec, clients, cfg)
    if method == "fedprox-lg":
        return run_fedprox_lg(spec, clients, PartitionSpec.default(spec), cfg)
    if method == "ifca":
        return run_ifca(spec, clients, settings.personalize.clusters, cfg)
    if method == "assigned":
        return run_assigned_clustering(spec, clients, _assignment(settings, corpus), cfg)
    if method == "alpha":
        return run_alpha_portion(spec, clients, settings.personalize.alpha, cfg)
    raise ConfigurationError(f"unknown method {method!r}")


def _planned_artifacts(method: str, clients, settings: Settings) -> dict[str, str]:
    if method in GLOBAL_METHODS:
        return {"model": MODEL_FILE}
    files = {f"client_{c.client_id}": client_file(c.client_id) for c in clients}
    if method == "ifca":
        files.update({f"cluster_{i}": cluster_file(i) for i in range(1, settings.personalize.clusters + 1)})
    return files


def cmd_train(args) -> int:
    settings = _settings(
        args,
        **{
            "model.name": args.model,
            "round.mu": args.mu,
            "round.rounds": args.rounds,
            "round.steps_per_round": args.steps,
            "round.threads": args.threads,
            "personalize.alpha": args.alpha,
            "personalize.clusters": args.clusters,
        },
    )
    corpus = load_corpus(args.corpus)
    _check_channels(settings, corpus)
    spec = preset(settings.model, _corpus_channels(corpus))
    clients = make_clients(corpus)
    out = Path(args.out)
    manifest = RunManifest("train", args.method, settings.seed, settings.model, str(args.corpus),
                           settings.snapshot(), _planned_artifacts(args.method, clients, settings))
    if args.method == "assigned":
        assignment = _assignment(settings, corpus)
        manifest.extra["assignment"] = {str(k): v for k, v in assignment.mapping.items()}
        manifest.artifacts.update({f"cluster_{i}": cluster_file(i) for i in range(1, assignment.clusters + 1)})
    manifest.write(out)

    log.info("training %s (%s) on %d clients", args.method, spec.name, len(clients))
    result = _run_method(args.method, spec, clients, settings, corpus)
    write_round_logs(result.logs, out / ROUND_LOG)
    if args.method in GLOBAL_METHODS:
        save_params(out / MODEL_FILE, result.model, spec)
    else:
        for client, params in zip(clients, client_models(result, clients)):
            save_params(out / client_file(client.client_id), params, spec)
        if result.assignment is not None:
            for i, params in enumerate(result.models, 1):
                save_params(out / cluster_file(i), params, spec)
            manifest.extra["assignment"] = {str(k): v for k, v in sorted(result.assignment.items())}
            manifest.write(out)
    log.info("wrote %s", out)
    return 0


# -- personalize --------------------------------------------------------------


def _model_path(path: Path) -> Path:
    return path / MODEL_FILE if path.is_dir() else path


def cmd_personalize(args) -> int:
    settings = _settings(args, **{"personalize.fine_tune_steps": args.steps, "round.threads": args.threads})
    corpus = load_corpus(args.corpus)
    source = _model_path(Path(args.artifact))
    spec = spec_for_artifact(source, _corpus_channels(corpus))
    wanted = preset(settings.model, _corpus_channels(corpus))
    if "model.name" in settings.sources and wanted.digest() != spec.digest():
        raise ConfigurationError(f"{source} was not trained with model {settings.model!r}")
    params = load_params(source, spec)
    clients = make_clients(corpus)
    out = Path(args.out)
    method = "finetune"
    if Path(args.artifact).is_dir() and (Path(args.artifact) / MANIFEST_FILE).exists():
        method = RunManifest.read(args.artifact).method + "+finetune"
    manifest = RunManifest("personalize", method, settings.seed, spec.name, str(args.corpus),
                           settings.snapshot(), {f"client_{c.client_id}": client_file(c.client_id) for c in clients},
                           {"source": str(source)})
    manifest.write(out)
    tuned = fine_tune_all(spec, clients, params, settings.personalize.fine_tune_steps, settings.round)
    for client, p in zip(clients, tuned):
        save_params(out / client_file(client.client_id), p, spec)
    log.info("fine-tuned %d models into %s", len(clients), out)
    return 0


# -- report -------------------------------------------------------------------


def _load_run(path: Path, corpus, channels: int):
    """``(method, per-client models, loss curve)`` for a run directory or a single artifact."""
    ids = [c.client_id for c in corpus]
    if path.is_dir():
        manifest = RunManifest.read(path)
        spec = preset(manifest.model, channels)
        name = manifest.method or path.name
        if (path / MODEL_FILE).exists():
            models = [load_params(path / MODEL_FILE, spec)] * len(ids)
        else:
            models = [load_params(path / client_file(k), spec) for k in ids]
        curve = []
        if (path / ROUND_LOG).exists():
            for line in (path / ROUND_LOG).read_text().splitlines():
                rec = json.loads(line)
                curve.append(float(np.mean([float(v) for v in rec["mean_loss"]])))
        return name, spec, models, curve
    spec = spec_for_artifact(path, channels)
    return path.stem, spec, [load_params(path, spec)] * len(ids), []


def cmd_report(args) -> int:
    corpus = load_corpus(args.corpus)
    channels = _corpus_channels(corpus)
    table = ResultsTable([c.client_id for c in corpus])
    curves: dict[str, list[float]] = {}
    missing = []
    for raw in args.artifacts:
        path = Path(raw)
        if not path.exists():
            missing.append(str(path))
            table.add(path.name, [None] * len(corpus))
            continue
        name, spec, models, curve = _load_run(path, corpus, channels)
        base, n = name, 2
        while name in table.rows:
            name, n = f"{base}#{n}", n + 1
        if name == "local":
            # diagonal (b_k on client k) is the headline row; the cross-client mean rides along
            diagonal, cross, _ = local_average_rows(spec, models, [c.test for c in corpus])
            table.add(name, diagonal)
            table.add(f"{name} (cross)", cross)
        else:
            table.add(name, [evaluate_model(spec, m, c.test) for m, c in zip(models, corpus)])
        if curve:
            curves[name] = curve

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(table.to_csv())
    (out / "results.txt").write_text(table.to_text())
    plots.auc_heatmap(table, out / "auc_heatmap.png")
    plots.auc_bars(table, out / "auc_means.png")
    plots.loss_curves(curves, out / "loss_curves.png")
    sys.stdout.write(table.to_text())
    if missing:
        sys.stderr.write(f"missing artifacts (shown as {GAP}): {', '.join(missing)}\n")
        return ConfigurationError.exit_code
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flroute", description="Federated routability-hotspot training on synthetic layouts.")
    parser.add_argument("--version", action="version", version=f"flroute {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("gen-data", help="generate the synthetic client corpus")
    common(p, "corpus directory to write")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one method and save its models")
    p.add_argument("corpus", help="corpus directory from gen-data")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--model", choices=sorted(["flnet", "deep_bn"]), help="architecture (default flnet)")
    p.add_argument("--mu", type=float, help="proximal weight")
    p.add_argument("--alpha", type=float, help="own-model share for --method alpha")
    p.add_argument("--clusters", type=int, help="cluster count for ifca / assigned")
    p.add_argument("--rounds", type=int, help="communication rounds")
    p.add_argument("--steps", type=int, help="local steps per round")
    p.add_argument("--threads", type=int, help="client worker threads (1 = reference order)")
    common(p, "run directory to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("personalize", help="fine-tune a global model on every client")
    p.add_argument("artifact", help="model file or a run directory holding model.fpv")
    p.add_argument("corpus", help="corpus directory")
    p.add_argument("--steps", type=int, help="fine-tuning steps per client (default 5000)")
    p.add_argument("--threads", type=int, help="client worker threads")
    common(p, "run directory to write")
    p.set_defaults(func=cmd_personalize)

    p = sub.add_parser("report", help="evaluate runs into a method x client AUC table")
    p.add_argument("corpus", help="corpus directory")
    p.add_argument("artifacts", nargs="+", help="run directories or model files")
    p.add_argument("--out", required=True, help="directory for results.csv, results.txt and figures")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except FlrouteError as exc:
        sys.stderr.write(f"flroute: error: {exc}\n")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
