"""The federated round loop, metrics logging and optimizer comparisons."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import compression, models, netsim
from . import params as pv
from .client import ClientUpdate, local_train
from .config import RunConfig
from .data import Dataset, Shard, load_csv, partition_dirichlet, partition_quantity_skew, synth_generate
from .errors import ConfigError, DivergenceError, FedSimError
from .seeding import derive_seed, make_rng
from .server import aggregate, init_state, server_step

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("round", "sim_seconds", "train_loss", "eval_acc", "bytes_up", "bytes_down", "participants")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    sim_seconds: float
    train_loss: float
    eval_acc: float
    bytes_up: int
    bytes_down: int
    participants: int


@dataclass
class MetricsLog:
    records: list[RoundRecord]
    initial_loss: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in self.records:
            w.writerow([
                r.round, f"{r.sim_seconds:.9g}", f"{r.train_loss:.9g}", f"{r.eval_acc:.9g}",
                r.bytes_up, r.bytes_down, r.participants,
            ])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def rounds_to(self, target_loss: float) -> int | None:
        """Number of rounds run before train loss first fell to ``target_loss``."""
        for r in self.records:
            if r.train_loss <= target_loss:
                return r.round + 1
        return None


def load_dataset(config: RunConfig) -> Dataset:
    d = config.data
    if d.source == "csv":
        return load_csv(d.path, d.label_column, d.num_classes)
    return synth_generate(
        d.num_classes, d.input_dim, d.n_per_class, d.spread,
        derive_seed(config.run.seed, "data"), scale_span=d.scale_span,
    )


def split_eval(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out ``fraction`` of the rows for evaluation; with 0 the training set doubles as eval set."""
    n_eval = math.floor(fraction * len(data))
    if n_eval == 0:
        return data, data
    if n_eval >= len(data):
        raise ConfigError("eval split leaves no training data")
    perm = np.random.default_rng(seed).permutation(len(data))
    return data.subset(np.sort(perm[n_eval:])), data.subset(np.sort(perm[:n_eval]))


def make_shards(config: RunConfig, train: Dataset) -> list[Shard]:
    p, m = config.partition, config.fl.num_clients
    seed = derive_seed(config.run.seed, "partition")
    if p.kind == "dirichlet":
        return partition_dirichlet(train, m, p.alpha, seed)
    return partition_quantity_skew(train, m, p.zipf_s, seed)


class Simulation:
    """One federated training run, advanced a round at a time with :meth:`step`."""

    def __init__(self, config: RunConfig, workers: int | None = None):
        self.config = config
        self.workers = workers or config.fl.workers
        seed = config.run.seed
        data = load_dataset(config)
        self.train, self.eval = split_eval(data, config.data.eval_fraction, derive_seed(seed, "split"))
        self.shards = make_shards(config, self.train)
        self.shard_data = [s.view(self.train) for s in self.shards]
        try:
            if config.model.kind == "logistic_regression":
                self.spec = models.logistic_regression(data.input_dim, data.num_classes)
            else:
                self.spec = models.mlp(data.input_dim, data.num_classes, config.model.hidden_dim)
            init = models.init_params(self.spec, make_rng(seed, "init"))
            self.state = init_state(config.server.rule, init, config.server.hyper())
        except FedSimError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.scheme = config.compress.scheme()
        n = config.net
        try:
            self.profiles = netsim.assign_profiles(
                config.fl.num_clients, n.fraction_3g, derive_seed(seed, "net"), n.compute_rate, n.availability,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.history = np.zeros(config.fl.num_clients)
        # the broadcast model is always sent uncompressed
        self.model_bytes = compression.serialized_size(compression.CompressionScheme("identity"), self.spec.layout)
        self.initial_loss = models.loss(self.spec, self.state.params, self.train)
        self.round = 0
        self.sim_seconds = 0.0
        self.bytes_up = 0
        self.bytes_down = 0
        self.records: list[RoundRecord] = []
        self.last_participants: list[int] = []

    @property
    def params(self) -> pv.ParamVector:
        return self.state.params

    def _client_work(self, cid: int, params: pv.ParamVector) -> tuple[ClientUpdate, compression.EncodedUpdate]:
        cfg, r, seed = self.config, self.round, self.config.run.seed
        upd = local_train(self.spec, params, self.shard_data[cid], cfg.client, make_rng(seed, "client", r, cid), cid)
        enc = compression.encode(upd.delta, self.spec.layout, self.scheme, r, cid, seed, n_examples=upd.n_examples)
        return upd, enc

    def step(self) -> RoundRecord:
        cfg, r, seed = self.config, self.round, self.config.run.seed
        sampled = netsim.sample_clients(
            cfg.net.strategy, cfg.fl.num_clients, cfg.fl.sampling_ratio, self.history,
            make_rng(seed, "sample", r), cfg.net.alpha,
        )
        ids = netsim.drop_unavailable(sampled, self.profiles, make_rng(seed, "available", r))
        params = self.state.params
        try:
            if self.workers > 1 and len(ids) > 1:
                with ThreadPoolExecutor(max_workers=self.workers) as pool:
                    results = list(pool.map(lambda c: self._client_work(c, params), ids))
            else:
                results = [self._client_work(c, params) for c in ids]

            updates, participants = [], []
            for upd, enc in results:
                decoded = compression.decode(enc, self.spec.layout)
                if self.scheme.kind == "identity":
                    updates.append(upd)  # lossless: the client's own model stays usable
                else:
                    updates.append(replace(upd, delta=decoded, params=None))
                participants.append(netsim.Participant(
                    self.profiles[upd.client_id], self.model_bytes, compression.measure_bytes(enc), upd.samples_processed,
                ))
                self.history[upd.client_id] += upd.samples_processed

            if updates:
                self.state = server_step(self.state, aggregate(updates, cfg.fl.weighting))
                timing = netsim.round_time(participants)
                self.sim_seconds += timing.round_wall_s
                self.bytes_up += timing.bytes_up
                self.bytes_down += timing.bytes_down
            else:
                log.warning("round %d: every sampled client was unavailable; global model unchanged", r)
            train_loss = models.loss(self.spec, self.state.params, self.train)
            acc = models.evaluate(self.spec, self.state.params, self.eval).accuracy
        except DivergenceError as exc:
            raise DivergenceError(f"round {r} ({cfg.server.rule}): {exc}") from exc

        rec = RoundRecord(r, self.sim_seconds, train_loss, acc, self.bytes_up, self.bytes_down, len(updates))
        self.records.append(rec)
        self.last_participants = ids
        self.round += 1
        return rec

    def run(self, rounds: int | None = None) -> MetricsLog:
        total = self.config.fl.rounds if rounds is None else rounds
        for _ in range(total):
            rec = self.step()
            log.debug("round %d loss %.6f acc %.4f", rec.round, rec.train_loss, rec.eval_acc)
        return MetricsLog(list(self.records), self.initial_loss)


def run(config: RunConfig, workers: int | None = None) -> MetricsLog:
    return Simulation(config, workers).run()


@dataclass(frozen=True)
class ComparisonRow:
    variant: str
    rounds_to_target: int | None
    target_loss: float
    final_loss: float
    final_acc: float
    error: str = ""


def compare(
    base: RunConfig,
    sweep: Sequence[tuple[str, dict]],
    workers: int | None = None,
) -> list[ComparisonRow]:
    """Run every sweep variant on the base config's data and report rounds-to-target and final accuracy.

    The target is ``run.target_fraction`` times the variant's initial training
    loss. A failing variant gets an ``error`` entry; the rest still run.
    """
    rows = []
    for name, overrides in sweep:
        try:
            cfg = base.with_overrides(overrides)
            result = run(cfg, workers)
        except FedSimError as exc:
            log.error("variant %s failed: %s", name, exc)
            rows.append(ComparisonRow(name, None, math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
            continue
        target = cfg.run.target_fraction * result.initial_loss
        last = result.records[-1]
        rows.append(ComparisonRow(name, result.rounds_to(target), target, last.train_loss, last.eval_acc))
    return rows


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "rounds_to_target", "target_loss", "final_loss", "final_acc", "error"])
    for r in rows:
        w.writerow([
            r.variant, "" if r.rounds_to_target is None else r.rounds_to_target,
            f"{r.target_loss:.9g}", f"{r.final_loss:.9g}", f"{r.final_acc:.9g}", r.error,
        ])
    return buf.getvalue()
