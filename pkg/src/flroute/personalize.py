"""Per-client customization on top of the proximal federated scheme.

Five strategies: fine-tuning a finished global model, global/local layer
split, iterative loss-based clustering, fixed clustering, and alpha-blended
synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from flroute import nn
from flroute.errors import ConfigurationError
from flroute.federation import (
    FINETUNE_STREAM,
    ClientState,
    RoundConfig,
    RunResult,
    Server,
    Upload,
    _map_clients,
    initial_params,
    local_train,
    run_rounds,
)
from flroute.nn import ModelSpec, ParameterVector

DEFAULT_ASSIGNMENT = {1: 1, 2: 1, 3: 1, 4: 2, 5: 2, 6: 2, 7: 3, 8: 3, 9: 4}


@dataclass(frozen=True)
class PersonalizationConfig:
    fine_tune_steps: int = 5000
    alpha: float = 0.5
    clusters: int = 4

    def validate(self) -> None:
        if self.fine_tune_steps < 0:
            raise ConfigurationError("personalize.fine_tune_steps must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("personalize.alpha must be in [0, 1]")
        if self.clusters < 1:
            raise ConfigurationError("personalize.clusters must be >= 1")


@dataclass(frozen=True)
class PartitionSpec:
    """Layer name -> 'global' | 'local' for every parameter-bearing layer."""

    tags: Mapping[str, str]

    def validate(self, spec: ModelSpec) -> None:
        layers = {spec.layer_of_block(b) for b in spec.block_shapes()}
        if set(self.tags) != layers:
            raise ConfigurationError(
                f"partition covers {sorted(self.tags)}, model has parameter layers {sorted(layers)}"
            )
        bad = {v for v in self.tags.values()} - {"global", "local"}
        if bad:
            raise ConfigurationError(f"partition tags must be 'global' or 'local', got {sorted(bad)}")
        if "global" not in self.tags.values():
            raise ConfigurationError("partition needs at least one global layer")

    def global_blocks(self, spec: ModelSpec) -> list[str]:
        return [b for b in spec.block_shapes() if self.tags[spec.layer_of_block(b)] == "global"]

    def local_blocks(self, spec: ModelSpec) -> list[str]:
        return [b for b in spec.block_shapes() if self.tags[spec.layer_of_block(b)] == "local"]

    @classmethod
    def default(cls, spec: ModelSpec) -> "PartitionSpec":
        """Output conv kept private, everything else shared."""
        last = spec.conv_layers()[-1].name
        layers = dict.fromkeys(spec.layer_of_block(b) for b in spec.block_shapes())
        return cls({name: "local" if name == last else "global" for name in layers})

    @classmethod
    def all_global(cls, spec: ModelSpec) -> "PartitionSpec":
        return cls({spec.layer_of_block(b): "global" for b in spec.block_shapes()})


@dataclass(frozen=True)
class ClusterAssignment:
    clusters: int
    mapping: Mapping[int, int]

    def validate(self, client_ids: Sequence[int]) -> None:
        if self.clusters < 1:
            raise ConfigurationError("cluster count must be >= 1")
        missing = [k for k in client_ids if k not in self.mapping]
        if missing:
            raise ConfigurationError(f"clients {missing} have no cluster")
        bad = {c for c in self.mapping.values() if not 1 <= c <= self.clusters}
        if bad:
            raise ConfigurationError(f"cluster ids {sorted(bad)} outside [1, {self.clusters}]")

    def members(self, cluster: int) -> list[int]:
        return sorted(k for k, c in self.mapping.items() if c == cluster)

    @classmethod
    def default(cls) -> "ClusterAssignment":
        return cls(4, dict(DEFAULT_ASSIGNMENT))


def subset(params: ParameterVector, names: Sequence[str]) -> ParameterVector:
    return ParameterVector({n: params.blocks[n] for n in names}, [n for n in names if n in params.trainable])


def merge(base: ParameterVector, part: ParameterVector) -> ParameterVector:
    out = base.copy()
    for name, block in part.blocks.items():
        out.blocks[name] = block.copy()
    return out


def fine_tune(spec: ModelSpec, client: ClientState, global_model: ParameterVector, steps: int,
              config: RoundConfig) -> ParameterVector:
    """Plain local training from the global model (no proximal term, fresh optimizer)."""
    if steps < 0:
        raise ConfigurationError("fine-tune steps must be >= 0")
    if steps == 0:
        return global_model.copy()
    fresh = ClientState(client.client_id, client.train, client.test)
    return local_train(spec, fresh, global_model, steps, config, mu=0.0, stream=FINETUNE_STREAM).params


def fine_tune_all(spec: ModelSpec, clients: Sequence[ClientState], global_model: ParameterVector, steps: int,
                  config: RoundConfig) -> list[ParameterVector]:
    return _map_clients(lambda c: fine_tune(spec, c, global_model, steps, config), list(clients), config.threads)


def run_fedprox_lg(spec: ModelSpec, clients: Sequence[ClientState], partition: PartitionSpec, config: RoundConfig,
                   server: Server | None = None) -> RunResult:
    """Only global-tagged blocks are uploaded and averaged; local blocks never leave a client."""
    partition.validate(spec)
    shared = partition.global_blocks(spec)
    init = initial_params(spec, config.seed)

    def deploy(r, clients, models):
        return [(models[i], None) for i in range(len(clients))]

    def collect(r, clients, server):
        uploads = [Upload(c.client_id, subset(c.params, shared), c.n_k) for c in clients]
        g = server.receive(uploads, r)
        return [merge(c.params, g) for c in clients]

    return run_rounds(spec, clients, config, init=[init] * len(clients), deploy=deploy, collect=collect,
                      server=server)


def cluster_losses(spec: ModelSpec, client: ClientState, cluster_models: Sequence[ParameterVector]) -> list[float]:
    from flroute.evaluate import predict

    y = client.train.y.astype(np.float64)
    losses = []
    for model in cluster_models:
        diff = predict(spec, model, client.train.x) - y
        losses.append(float(np.mean(diff * diff)))
    return losses


def select_cluster(spec: ModelSpec, client: ClientState, cluster_models: Sequence[ParameterVector]) -> int:
    """1-based id of the cluster model with the lowest data loss on the whole train set.

    Ties go to the lowest id.
    """
    if not cluster_models:
        raise ConfigurationError("need at least one cluster model")
    losses = cluster_losses(spec, client, cluster_models)
    return int(np.argmin(losses)) + 1


def _cluster_collect(assign_of: Mapping[int, int] | None, clusters: int, fixed: Mapping[int, int] | None = None):
    def collect(r, clients, server, previous):
        mapping = fixed if fixed is not None else assign_of
        models = []
        for c in range(1, clusters + 1):
            members = [cl for cl in clients if mapping[cl.client_id] == c]
            if members:
                models.append(server.receive([Upload(m.client_id, m.params, m.n_k) for m in members], r, group=c))
            else:
                models.append(previous[c - 1])
        return models

    return collect


def run_ifca(spec: ModelSpec, clients: Sequence[ClientState], clusters: int, config: RoundConfig,
             server: Server | None = None) -> RunResult:
    """Each round every client joins the cluster whose model fits its data best.

    Cluster models start from distinct seeds (cluster 1 shares the global
    initialization); a cluster nobody picks keeps its previous model.
    """
    if clusters < 1:
        raise ConfigurationError("IFCA needs at least one cluster")
    init = [initial_params(spec, config.seed, index=c) for c in range(clusters)]
    assignment: dict[int, int] = {}
    history: list[dict[int, int]] = []
    state = {"models": init}

    def deploy(r, clients, models):
        state["models"] = models
        picks = _map_clients(lambda c: select_cluster(spec, c, models), list(clients), config.threads)
        assignment.clear()
        assignment.update({c.client_id: k for c, k in zip(clients, picks)})
        history.append(dict(assignment))
        return [(models[assignment[c.client_id] - 1], None) for c in clients]

    inner = _cluster_collect(assignment, clusters)

    def collect(r, clients, server):
        return inner(r, clients, server, state["models"])

    result = run_rounds(spec, clients, config, init=init, deploy=deploy, collect=collect, server=server)
    result.assignment = dict(assignment)
    result.history = history
    return result


def run_assigned_clustering(spec: ModelSpec, clients: Sequence[ClientState], assignment: ClusterAssignment,
                            config: RoundConfig, server: Server | None = None) -> RunResult:
    """Fixed cluster per client; every cluster starts from the shared initialization."""
    assignment.validate([c.client_id for c in clients])
    init = initial_params(spec, config.seed)
    state = {"models": [init] * assignment.clusters}

    def deploy(r, clients, models):
        state["models"] = models
        return [(models[assignment.mapping[c.client_id] - 1], None) for c in clients]

    inner = _cluster_collect(None, assignment.clusters, fixed=assignment.mapping)

    def collect(r, clients, server):
        return inner(r, clients, server, state["models"])

    result = run_rounds(spec, clients, config, init=state["models"], deploy=deploy, collect=collect, server=server)
    result.assignment = dict(assignment.mapping)
    return result


def blend(own: ParameterVector, average: ParameterVector, alpha: float) -> ParameterVector:
    """``alpha * own + (1 - alpha) * average``; the endpoints return exact copies."""
    if alpha == 0.0:
        return average.copy()
    if alpha == 1.0:
        return own.copy()
    return own * alpha + average * (1.0 - alpha)


def run_alpha_portion(spec: ModelSpec, clients: Sequence[ClientState], alpha: float, config: RoundConfig,
                      server: Server | None = None) -> RunResult:
    """Server deploys to client k the blend of k's last upload with the global average."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    init = initial_params(spec, config.seed)

    def deploy(r, clients, models):
        return [(models[i], None) for i in range(len(clients))]

    def collect(r, clients, server):
        uploads = [Upload(c.client_id, c.params, c.n_k) for c in clients]
        avg = server.receive(uploads, r)
        return [blend(up.params, avg, alpha) for up in uploads]

    return run_rounds(spec, clients, config, init=[init] * len(clients), deploy=deploy, collect=collect,
                      server=server)


def client_models(result: RunResult, clients: Sequence[ClientState]) -> list[ParameterVector]:
    """Per-client view of a run: cluster models are routed through the assignment."""
    if result.assignment is not None:
        return [result.models[result.assignment[c.client_id] - 1] for c in clients]
    if len(result.models) == 1:
        return [result.models[0]] * len(clients)
    return list(result.models)
