"""Round-based federated training, simulated in process.

Clients train locally against the proximal objective and upload
:class:`Upload` objects (parameters plus a sample count) to a
:class:`Server`, which is the only place aggregation happens. The server
keeps a transcript of everything it received so tests can audit that no
feature or label data ever crosses the boundary.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from flroute import nn
from flroute.data import ClientData, Dataset
from flroute.errors import ConfigurationError, NumericError, ProtocolError
from flroute.nn import ModelSpec, OptimizerState, ParameterVector

# rng stream tags, kept distinct so that independent draws never collide
INIT_STREAM = 11
BATCH_STREAM = 23
FINETUNE_STREAM = 37


@dataclass(frozen=True)
class RoundConfig:
    rounds: int = 50
    steps_per_round: int = 100
    batch_size: int = 8
    learning_rate: float = 2e-4
    mu: float = 1e-4
    weight_decay: float = 1e-5
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigurationError("round.rounds must be >= 1")
        if self.steps_per_round < 1:
            raise ConfigurationError("round.steps_per_round must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("round.batch_size must be >= 1")
        if self.mu < 0:
            raise ConfigurationError("round.mu must be >= 0")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigurationError("learning rate and weight decay must be >= 0")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")


@dataclass(frozen=True)
class BatchCursor:
    """Seeded walk over a shuffled index list, reshuffled on exhaustion.

    Immutable: :meth:`next_batch` returns the indices and the advanced cursor.
    """

    n: int
    seed: int
    stream: int
    client_id: int
    epoch: int = 0
    pos: int = 0

    def _perm(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, self.stream, self.client_id, epoch]).permutation(self.n)

    def next_batch(self, size: int) -> tuple[np.ndarray, "BatchCursor"]:
        size = min(size, self.n)
        epoch, pos = self.epoch, self.pos
        perm = self._perm(epoch)
        if pos + size > self.n:
            epoch, pos = epoch + 1, 0
            perm = self._perm(epoch)
        idx = perm[pos : pos + size]
        return idx, replace(self, epoch=epoch, pos=pos + size)


@dataclass
class ClientState:
    client_id: int
    train: Dataset
    test: Dataset
    params: ParameterVector | None = None
    opt: OptimizerState | None = None
    cursor: BatchCursor | None = None
    losses: list[float] = field(default_factory=list)

    @property
    def n_k(self) -> int:
        return len(self.train)

    @classmethod
    def from_data(cls, data: ClientData, seed: int = 0) -> "ClientState":
        if len(data.train) < 1:
            raise ConfigurationError(f"client {data.client_id} has an empty train set")
        overlap = set(data.train.designs) & set(data.test.designs)
        if overlap:
            raise ConfigurationError(f"client {data.client_id} shares designs between splits: {sorted(overlap)}")
        return cls(data.client_id, data.train, data.test)


@dataclass
class RoundLog:
    round: int
    client_losses: dict[int, list[float]]
    snapshot: str
    wall_clock: float = field(default=0.0, compare=False)

    def mean_losses(self) -> dict[int, float]:
        return {k: float(np.mean(v)) for k, v in self.client_losses.items()}

    def to_json(self) -> str:
        means = self.mean_losses()
        return json.dumps(
            {
                "round": self.round,
                "client_id": list(means),
                "mean_loss": [repr(v) for v in means.values()],
                "snapshot": self.snapshot,
                "wall_clock": round(self.wall_clock, 6),
            }
        )


def snapshot_id(params: ParameterVector | Sequence[ParameterVector]) -> str:
    h = hashlib.sha256()
    items = [params] if isinstance(params, ParameterVector) else list(params)
    for p in items:
        for name, block in p.blocks.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def write_round_logs(logs: Sequence[RoundLog], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(log.to_json() + "\n" for log in logs))
    return path


# -- server side --------------------------------------------------------------


@dataclass(frozen=True)
class Upload:
    """The only thing a client may send: model parameters and its sample count."""

    client_id: int
    params: ParameterVector
    n_samples: int

    def __post_init__(self) -> None:
        if not isinstance(self.params, ParameterVector):
            raise ProtocolError(f"upload payload must be a ParameterVector, got {type(self.params).__name__}")
        if not isinstance(self.n_samples, (int, np.integer)) or isinstance(self.n_samples, bool):
            raise ProtocolError("upload sample count must be an integer")
        if self.n_samples < 1:
            raise ProtocolError(f"client {self.client_id} reported n_k={self.n_samples}")


@dataclass
class TranscriptEntry:
    round: int
    group: int
    client_id: int
    blocks: tuple[str, ...]
    n_samples: int
    payload: bytes


class Server:
    """Aggregation endpoint. Records every upload it receives."""

    def __init__(self, keep_payloads: bool = False):
        self.keep_payloads = keep_payloads
        self.transcript: list[TranscriptEntry] = []
        self.aggregations = 0

    def receive(self, uploads: Sequence[Upload], round_index: int, group: int = 0) -> ParameterVector:
        for up in uploads:
            if not isinstance(up, Upload):
                raise ProtocolError(f"server only accepts Upload objects, got {type(up).__name__}")
            payload = b""
            if self.keep_payloads:
                payload = b"".join(np.ascontiguousarray(b).tobytes() for b in up.params.blocks.values())
            self.transcript.append(
                TranscriptEntry(round_index, group, up.client_id, tuple(up.params.blocks), int(up.n_samples), payload)
            )
        self.aggregations += 1
        return aggregate([(up.params, int(up.n_samples)) for up in uploads])


def aggregation_weights(counts: Sequence[int]) -> list[float]:
    total = sum(counts)
    return [n / total for n in counts]


def aggregate(models: Sequence[tuple[ParameterVector, int]]) -> ParameterVector:
    """Sample-count weighted mean of parameter vectors (running statistics included)."""
    if not models:
        raise ProtocolError("nothing to aggregate")
    first = models[0][0]
    for params, n in models:
        if n < 1:
            raise ProtocolError(f"sample count must be >= 1, got {n}")
        if not first.same_structure(params):
            raise ProtocolError("uploaded parameter vectors differ in shape")
    weights = aggregation_weights([n for _, n in models])
    # first + sum_k w_k (p_k - first): equal to the weighted mean, and exact
    # (bit-for-bit) when every upload is the same model
    acc = first.copy()
    for (params, _), w in zip(models[1:], weights[1:]):
        acc = acc + (params - first) * w
    return acc


# -- client side ---------------------------------------------------------------


def _map_clients(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def local_train(spec: ModelSpec, client: ClientState, anchor: ParameterVector, steps: int,
                config: RoundConfig, mu: float | None = None, start: ParameterVector | None = None,
                stream: int = BATCH_STREAM) -> ClientState:
    """Run ``steps`` Adam updates on the proximal objective anchored at ``anchor``.

    Training starts from ``start`` (default: the anchor itself). Optimizer
    moments and the batch cursor persist in the returned client state.
    """
    if client.n_k < 1:
        raise ConfigurationError(f"client {client.client_id} has an empty train set")
    if steps < 0:
        raise ConfigurationError("steps must be >= 0")
    mu = config.mu if mu is None else mu
    params = (anchor if start is None else start).copy()
    opt = client.opt if client.opt is not None else OptimizerState.fresh(params)
    cursor = client.cursor or BatchCursor(client.n_k, config.seed, stream, client.client_id)
    losses = []
    for _ in range(steps):
        idx, cursor = cursor.next_batch(config.batch_size)
        batch = (client.train.x[idx], client.train.y[idx])
        res = nn.loss_and_grad(spec, params, anchor, batch, mu)
        if not np.isfinite(res.loss):
            raise NumericError(f"client {client.client_id}: non-finite loss {res.loss}")
        params, opt = nn.adam_step(res.params, res.grads, opt, config.learning_rate, config.weight_decay)
        losses.append(res.loss)
    return replace(client, params=params, opt=opt, cursor=cursor, losses=losses)


def initial_params(spec: ModelSpec, seed: int, index: int = 0) -> ParameterVector:
    return nn.init_params(spec, np.random.default_rng([seed, INIT_STREAM, index]))


def make_clients(corpus: Sequence[ClientData]) -> list[ClientState]:
    if not corpus:
        raise ConfigurationError("need at least one client")
    return [ClientState.from_data(c) for c in corpus]


def _check_clients(clients: Sequence[ClientState]) -> None:
    if not clients:
        raise ConfigurationError("need at least one client")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"duplicate client ids {ids}")


@dataclass
class RunResult:
    """Output of a round loop: one or more final models plus per-round logs."""

    models: list[ParameterVector]
    logs: list[RoundLog]
    clients: list[ClientState]
    server: Server
    assignment: dict[int, int] | None = None
    history: list[dict[int, int]] | None = None

    @property
    def model(self) -> ParameterVector:
        return self.models[0]


def run_rounds(spec: ModelSpec, clients: Sequence[ClientState], config: RoundConfig, *,
               init: Sequence[ParameterVector], deploy: Callable, collect: Callable,
               server: Server | None = None, on_round: Callable | None = None) -> RunResult:
    """Generic deploy -> local train -> upload -> aggregate loop.

    ``deploy(r, clients, models)`` returns per-client ``(anchor, start)`` pairs;
    ``collect(r, clients, server)`` turns trained clients into the next model
    list via the server.
    """
    config.validate()
    _check_clients(clients)
    clients = list(clients)
    models = [m.copy() for m in init]
    server = server or Server()
    logs = []
    for r in range(1, config.rounds + 1):
        t0 = time.perf_counter()
        plan = deploy(r, clients, models)

        def work(args):
            client, (anchor, start) = args
            return local_train(spec, client, anchor, config.steps_per_round, config, start=start)

        clients = _map_clients(work, list(zip(clients, plan)), config.threads)
        models = collect(r, clients, server)
        if on_round is not None:
            on_round(r, clients, models)
        logs.append(
            RoundLog(r, {c.client_id: list(c.losses) for c in clients}, snapshot_id(models), time.perf_counter() - t0)
        )
    return RunResult(models, logs, clients, server)


def _upload(client: ClientState, params: ParameterVector | None = None) -> Upload:
    return Upload(client.client_id, client.params if params is None else params, client.n_k)


def run_fedprox(spec: ModelSpec, clients: Sequence[ClientState], config: RoundConfig,
                server: Server | None = None, init: ParameterVector | None = None) -> RunResult:
    """All clients train from the deployed global model; server takes the n_k-weighted mean."""
    init = init if init is not None else initial_params(spec, config.seed)

    def deploy(r, clients, models):
        return [(models[0], None) for _ in clients]

    def collect(r, clients, server):
        return [server.receive([_upload(c) for c in clients], r)]

    return run_rounds(spec, clients, config, init=[init], deploy=deploy, collect=collect, server=server)


def run_fedavg(spec: ModelSpec, clients: Sequence[ClientState], config: RoundConfig,
               server: Server | None = None, init: ParameterVector | None = None) -> RunResult:
    return run_fedprox(spec, clients, replace(config, mu=0.0), server=server, init=init)


def run_local_only(spec: ModelSpec, clients: Sequence[ClientState], config: RoundConfig,
                   init: ParameterVector | None = None) -> RunResult:
    """Each client trains alone from the shared initialization; nothing is uploaded.

    Uses the same round structure as the federated runs (proximal anchor reset
    to the client's own parameters every S steps) so that degenerate federated
    configurations reproduce it exactly.
    """
    init = init if init is not None else initial_params(spec, config.seed)
    k = len(clients)

    def deploy(r, clients, models):
        return [(models[i], None) for i in range(len(clients))]

    def collect(r, clients, server):
        return [c.params for c in clients]

    return run_rounds(spec, clients, config, init=[init] * k, deploy=deploy, collect=collect)


def pooled_client(clients: Sequence[ClientState]) -> ClientState:
    """Merge every client's data into one (the privacy-violating upper-bound baseline)."""
    _check_clients(clients)
    train = Dataset.concat([c.train for c in clients])
    test = Dataset.concat([c.test for c in clients])
    return ClientState(clients[0].client_id, train, test)


def run_centralized(spec: ModelSpec, clients: Sequence[ClientState], config: RoundConfig,
                    init: ParameterVector | None = None) -> RunResult:
    return run_local_only(spec, [pooled_client(clients)], config, init=init)
