"""In-process federated learning simulator.

Runs the server/client round loop, records the statistics the trust engine
needs, and exposes the building blocks (selection, aggregation, local DP,
model-replacement crafting) as standalone functions.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import model as mk
from .data import ClassDistribution, ClientDataset, class_distribution, merge_distributions
from .errors import ConfigError, DivergenceError, InputError
from .model import ArchitectureDescriptor, ModelParams

log = logging.getLogger(__name__)

AGGREGATORS = ("fedavg", "fedprox", "weighted-fedavg")
SELECTORS = ("random", "roundrobin")
BYTES_PER_PARAM = 8  # float64 on the wire

# stream tags for per-(seed, client, round) generators
_TRAIN, _NOISE, _IMPORTANCE, _CLEVER = 1, 2, 3, 4


@dataclass
class DPSettings:
    epsilon: float
    clip_norm: float = 1.0
    mechanism: str = "gaussian"
    delta: float = 1e-5
    sensitivity_factor: float = 1.0

    def validate(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("dp.epsilon must be > 0")
        if not self.clip_norm > 0:
            raise ConfigError("dp.clip_norm must be > 0")
        if self.mechanism not in ("gaussian", "laplace"):
            raise ConfigError(f"unknown dp mechanism {self.mechanism!r}")
        if self.mechanism == "gaussian" and not 0.0 < self.delta < 1.0:
            raise ConfigError("dp.delta must lie in (0, 1) for the gaussian mechanism")
        if not self.sensitivity_factor > 0:
            raise ConfigError("dp.sensitivity_factor must be > 0")

    def noise_scale(self) -> float:
        """Gaussian standard deviation, or Laplace scale ``b``."""
        self.validate()
        if self.mechanism == "gaussian":
            return self.clip_norm * math.sqrt(2.0 * math.log(1.25 / self.delta)) / self.epsilon
        return self.clip_norm * self.sensitivity_factor / self.epsilon


@dataclass
class AttackSettings:
    round: int
    client: int
    target: Optional[ModelParams] = None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "client": self.client,
            "target": None if self.target is None else self.target.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSettings":
        target = d.get("target")
        return cls(
            round=int(d["round"]),
            client=int(d["client"]),
            target=None if target is None else ModelParams.from_dict(target),
        )


@dataclass
class EvalSettings:
    """Client-side post-training measurements feeding the trust metrics."""

    clever_radius: float = 2.0
    clever_draws: int = 32
    clever_points: int = 10
    importance_repeats: int = 3
    discrimination_index: bool = False


@dataclass
class FederationConfig:
    num_clients: int
    sample_rate: float
    rounds: int
    local_epochs: int = 1
    learning_rate: float = 0.5
    batch_size: Optional[int] = None
    aggregator: str = "fedavg"
    fedprox_mu: float = 0.01
    dp: Optional[DPSettings] = None
    selector: str = "random"
    personalization_enabled: bool = False
    attack: Optional[AttackSettings] = None
    model: str = mk.LOGISTIC
    hidden_dim: int = 0
    # recorded for the FactSheet; clients run in-process and never time out
    max_timeout_s: float = 300.0
    termination_accuracy: float = 1.0
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    workers: int = 1
    seed: int = 0

    @property
    def sample_size(self) -> int:
        return math.ceil(round(self.sample_rate * self.num_clients, 9))

    def validate(self) -> None:
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not 0.0 < self.sample_rate <= 1.0:
            raise ConfigError("sample_rate must lie in (0, 1]")
        if not 1 <= self.sample_size <= self.num_clients:
            raise ConfigError("sample_rate * num_clients must select between 1 and N clients")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {self.aggregator!r}")
        if self.aggregator == "fedprox" and not self.fedprox_mu >= 0:
            raise ConfigError("fedprox_mu must be >= 0")
        if self.selector not in SELECTORS:
            raise ConfigError(f"unknown selector {self.selector!r}")
        if self.dp is not None:
            self.dp.validate()
        if self.attack is not None:
            if not 0 <= self.attack.client < self.num_clients:
                raise ConfigError("attack.client out of range")
            if not 0 <= self.attack.round < self.rounds:
                raise ConfigError("attack.round out of range")
        if self.model not in mk.KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def architecture(self, input_dim: int, num_classes: int) -> ArchitectureDescriptor:
        try:
            return ArchitectureDescriptor(
                kind=self.model,
                input_dim=input_dim,
                num_classes=num_classes,
                hidden_dim=self.hidden_dim if self.model == mk.MLP else 0,
            )
        except InputError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dp"] = None if self.dp is None else asdict(self.dp)
        d["attack"] = None if self.attack is None else self.attack.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FederationConfig":
        d = dict(d)
        try:
            if d.get("dp") is not None:
                d["dp"] = DPSettings(**d["dp"])
            if d.get("attack") is not None:
                d["attack"] = AttackSettings.from_dict(d["attack"])
            if d.get("evaluation") is not None:
                d["evaluation"] = EvalSettings(**d["evaluation"])
            else:
                d.pop("evaluation", None)
            cfg = cls(**d)
        except (TypeError, KeyError, InputError) as exc:
            raise ConfigError(f"bad federation section: {exc}") from exc
        cfg.validate()
        return cfg


@dataclass
class RoundUpdate:
    client_id: str
    delta: np.ndarray
    num_train_samples: int = 1


@dataclass
class ClientRoundRecord:
    client_id: str
    test_loss: float
    test_accuracy: float
    train_time_s: float
    upload_bytes: int
    download_bytes: int


@dataclass
class RoundRecord:
    round: int
    selected: List[str]
    clients: List[ClientRoundRecord]


@dataclass
class ClientFinalStats:
    """What one client reports after training; never raw samples."""

    client_id: str
    num_test: int
    test_loss: float
    test_accuracy: float
    feature_importance: List[float]
    clever_score: Optional[float] = None
    clever_samples: int = 0
    discrimination_index: Optional[float] = None


@dataclass(eq=False)
class RunStatistics:
    config: FederationConfig
    client_ids: List[str]
    selection_count: Dict[str, int]
    class_distribution: ClassDistribution
    rounds: List[RoundRecord]
    clients: List[ClientFinalStats]
    final_model: ModelParams
    attack_applied: Optional[bool] = None
    finished_at: str = ""
    # run metadata so a report can be rebuilt offline exactly
    preset: str = "custom"
    weights: Optional[Dict[str, Any]] = None

    @property
    def avg_training_time_s(self) -> float:
        times = [c.train_time_s for r in self.rounds for c in r.clients]
        return float(np.mean(times)) if times else 0.0

    @property
    def avg_upload_bytes(self) -> float:
        vals = [c.upload_bytes for r in self.rounds for c in r.clients]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def avg_download_bytes(self) -> float:
        vals = [c.download_bytes for r in self.rounds for c in r.clients]
        return float(np.mean(vals)) if vals else 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        """JSON-ready form. Wall-clock values live only under ``timing``."""
        rounds = []
        for r in self.rounds:
            rounds.append({
                "round": r.round,
                "selected": list(r.selected),
                "clients": [
                    {
                        "client_id": c.client_id,
                        "test_loss": c.test_loss,
                        "test_accuracy": c.test_accuracy,
                        "upload_bytes": c.upload_bytes,
                        "download_bytes": c.download_bytes,
                    }
                    for c in r.clients
                ],
            })
        d = {
            "schema_version": 1,
            "config": self.config.to_dict(),
            "arch": self.final_model.arch.to_dict(),
            "client_ids": list(self.client_ids),
            "selection_count": dict(self.selection_count),
            "class_distribution": dict(self.class_distribution),
            "rounds": rounds,
            "clients": [asdict(c) for c in self.clients],
            "attack_applied": self.attack_applied,
            "preset": self.preset,
            "weights": self.weights,
        }
        if include_timing:
            d["timing"] = {
                "finished_at": self.finished_at,
                "train_time_s": [[c.train_time_s for c in r.clients] for r in self.rounds],
            }
        return d

    @classmethod
    def from_dict(cls, d: dict, final_model: ModelParams) -> "RunStatistics":
        try:
            timing = d.get("timing") or {}
            times = timing.get("train_time_s") or [[0.0] * len(r["clients"]) for r in d["rounds"]]
            rounds = [
                RoundRecord(
                    round=int(r["round"]),
                    selected=list(r["selected"]),
                    clients=[
                        ClientRoundRecord(train_time_s=float(t), **c)
                        for c, t in zip(r["clients"], ts)
                    ],
                )
                for r, ts in zip(d["rounds"], times)
            ]
            return cls(
                config=FederationConfig.from_dict(d["config"]),
                client_ids=list(d["client_ids"]),
                selection_count={k: int(v) for k, v in d["selection_count"].items()},
                class_distribution={k: int(v) for k, v in d["class_distribution"].items()},
                rounds=rounds,
                clients=[ClientFinalStats(**c) for c in d["clients"]],
                final_model=final_model,
                attack_applied=d.get("attack_applied"),
                finished_at=timing.get("finished_at", ""),
                preset=d.get("preset", "custom"),
                weights=d.get("weights"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (ConfigError, InputError)):
                raise
            raise InputError(f"malformed statistics document: {exc}") from exc


def derive_salt(seed: int) -> bytes:
    return np.random.default_rng([seed, 0x73616C74]).bytes(16)


def hash_client_id(index: int, salt: bytes) -> str:
    return hashlib.sha256(salt + b"client:" + str(index).encode()).hexdigest()[:16]


def client_rng(seed: int, client_index: int, round_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, client_index, round_index, stream])


def select_clients(selector: str, num_clients: int, m: int, round_index: int,
                   rng: Optional[np.random.Generator] = None) -> List[int]:
    """Indices of the clients taking part in one round, ascending."""
    if selector not in SELECTORS:
        raise ConfigError(f"unknown selector {selector!r}")
    if not 1 <= m <= num_clients:
        raise ConfigError(f"cannot select {m} of {num_clients} clients")
    if m == num_clients:
        return list(range(num_clients))
    if selector == "roundrobin":
        start = (round_index * m) % num_clients
        return sorted((start + i) % num_clients for i in range(m))
    if rng is None:
        raise ConfigError("random selection needs a generator")
    return sorted(int(i) for i in rng.choice(num_clients, size=m, replace=False))


def aggregate_fedavg(current: ModelParams, updates: Sequence[RoundUpdate],
                     weighting: str = "uniform") -> ModelParams:
    """``w + sum_i a_i * delta_i`` with uniform or sample-count weights."""
    if not updates:
        raise InputError("aggregation needs at least one update")
    if weighting not in ("uniform", "by-samples"):
        raise InputError(f"unknown weighting {weighting!r}")
    size = current.values.size
    for u in updates:
        if np.shape(u.delta) != (size,):
            raise InputError(f"update from {u.client_id} has length {np.size(u.delta)}, expected {size}")
    ordered = sorted(updates, key=lambda u: u.client_id)
    if weighting == "uniform":
        total = np.zeros(size)
        for u in ordered:
            total += u.delta
        return current.with_values(current.values + total / len(ordered))
    n_total = sum(u.num_train_samples for u in ordered)
    if n_total <= 0:
        raise InputError("sample-weighted aggregation needs positive sample counts")
    total = np.zeros(size)
    for u in ordered:
        total += (u.num_train_samples / n_total) * u.delta
    return current.with_values(current.values + total)


def clip_l2(delta: np.ndarray, clip_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(delta))
    if norm <= clip_norm or norm == 0.0:
        return np.array(delta, dtype=np.float64)
    return delta * (clip_norm / norm)


def apply_local_dp(delta: np.ndarray, dp: DPSettings, rng: np.random.Generator) -> np.ndarray:
    """Clip ``delta`` to L2 norm ``clip_norm`` and add per-coordinate noise."""
    dp.validate()
    clipped = clip_l2(np.asarray(delta, dtype=np.float64), dp.clip_norm)
    scale = dp.noise_scale()
    if dp.mechanism == "gaussian":
        noise = rng.normal(0.0, scale, size=clipped.shape)
    else:
        noise = rng.laplace(0.0, scale, size=clipped.shape)
    return clipped + noise


def craft_replacement_update(current: ModelParams, target: ModelParams, num_clients: float,
                             client_id: str = "attacker", num_train_samples: int = 1) -> RoundUpdate:
    """Scaled update that swaps the aggregate for ``target``.

    The malicious model is ``N * (target - current) + current``; the returned
    delta is that model minus ``current``.
    """
    if current.values.size != target.values.size:
        raise InputError("current and target parameter vectors differ in length")
    if not num_clients >= 1:
        raise InputError("num_clients must be >= 1")
    malicious = num_clients * (target.values - current.values) + current.values
    return RoundUpdate(client_id, malicious - current.values, num_train_samples)


def local_train(params: ModelParams, data: ClientDataset, config: FederationConfig,
                rng: np.random.Generator) -> ModelParams:
    """Plain (optionally minibatch) gradient descent from the broadcast model."""
    X, y = data.train.X, data.train.y
    w = params.values.copy()
    center = params.values
    mu = config.fedprox_mu if config.aggregator == "fedprox" else 0.0
    arch = params.arch
    for _ in range(config.local_epochs):
        if config.batch_size is None or config.batch_size >= y.size:
            batches = [slice(None)]
        else:
            order = rng.permutation(y.size)
            batches = [order[i:i + config.batch_size] for i in range(0, y.size, config.batch_size)]
        for b in batches:
            g = mk.loss_and_grad(ModelParams(arch, w), X[b], y[b], prox_center=center, prox_mu=mu)
            w = w - config.learning_rate * g.param_grad
            if not np.all(np.isfinite(w)):
                raise FloatingPointError("local training produced non-finite parameters")
    return ModelParams(arch, w)


def default_attack_target(arch: ArchitectureDescriptor, seed: int) -> ModelParams:
    rng = np.random.default_rng([seed, 0x61746B])
    return ModelParams(arch, rng.normal(0.0, 1.0, size=arch.param_count))


def _client_final(params: ModelParams, data: ClientDataset, cid: str, config: FederationConfig) -> ClientFinalStats:
    from . import metrics

    ev = config.evaluation
    idx = data.client_index
    loss, acc = mk.evaluate(params, data.test.X, data.test.y)
    importance = metrics.permutation_importance(
        params, data.test.X, data.test.y, ev.importance_repeats,
        client_rng(config.seed, idx, config.rounds, _IMPORTANCE),
    )
    clever, n_clever = metrics.client_clever(
        params, data.test.X, data.test.y, ev.clever_radius, ev.clever_draws, ev.clever_points,
        client_rng(config.seed, idx, config.rounds, _CLEVER),
    )
    disc = metrics.client_discrimination(params, data.test.X, data.test.y, data.test.protected)
    return ClientFinalStats(
        client_id=cid,
        num_test=len(data.test),
        test_loss=loss,
        test_accuracy=acc,
        feature_importance=[float(v) for v in importance],
        clever_score=clever,
        clever_samples=n_clever,
        discrimination_index=disc,
    )


def run(config: FederationConfig, data: Sequence[ClientDataset], arch: ArchitectureDescriptor,
        clock: Callable[[], float] = time.perf_counter) -> RunStatistics:
    """Train a global model over ``config.rounds`` rounds and collect run statistics."""
    config.validate()
    if len(data) != config.num_clients:
        raise ConfigError(f"config expects {config.num_clients} clients, data has {len(data)}")
    for d in data:
        if d.train.X.shape[1] != arch.input_dim:
            raise ConfigError("feature dimension of client data does not match the architecture")
        labels = np.concatenate([d.train.y, d.test.y])
        if labels.size and labels.max() >= arch.num_classes:
            raise ConfigError("client labels exceed the architecture's class count")

    salt = derive_salt(config.seed)
    ids = [hash_client_id(i, salt) for i in range(config.num_clients)]
    for d, cid in zip(data, ids):
        d.client_id = cid

    selection_count = {cid: 0 for cid in ids}
    merged = merge_distributions(class_distribution(d, salt) for d in data)

    global_model = mk.init_params(arch, np.random.default_rng([config.seed, 0x696E6974]))
    select_rng = np.random.default_rng([config.seed, 0x73656C])
    m = config.sample_size
    weighting = "by-samples" if config.aggregator == "weighted-fedavg" else "uniform"
    wire_bytes = BYTES_PER_PARAM * arch.param_count
    attack_applied: Optional[bool] = None if config.attack is None else False
    rounds: List[RoundRecord] = []
    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def fit(i: int, t: int, w: ModelParams):
        start = clock()
        try:
            local = local_train(w, data[i], config, client_rng(config.seed, i, t, _TRAIN))
        except FloatingPointError:
            return None, clock() - start, (float("nan"), 0.0)
        elapsed = clock() - start
        return local, elapsed, mk.evaluate(local, data[i].test.X, data[i].test.y)

    try:
        for t in range(config.rounds):
            chosen = select_clients(config.selector, config.num_clients, m, t, select_rng)
            for i in chosen:
                selection_count[ids[i]] += 1
            w_t = global_model
            if executor is None:
                results = [fit(i, t, w_t) for i in chosen]
            else:
                results = list(executor.map(lambda i: fit(i, t, w_t), chosen))

            updates: List[RoundUpdate] = []
            records: List[ClientRoundRecord] = []
            for i, (local, elapsed, (loss, acc)) in zip(chosen, results):
                if local is None:
                    raise DivergenceError(t, f"client {ids[i]} diverged during local training in round {t}")
                delta = local.values - w_t.values
                if config.dp is not None:
                    delta = apply_local_dp(delta, config.dp, client_rng(config.seed, i, t, _NOISE))
                updates.append(RoundUpdate(ids[i], delta, len(data[i].train)))
                records.append(ClientRoundRecord(ids[i], loss, acc, elapsed, wire_bytes, wire_bytes))

            atk = config.attack
            if atk is not None and atk.round == t:
                if atk.client in chosen:
                    target = atk.target or default_attack_target(arch, config.seed)
                    pos = chosen.index(atk.client)
                    honest = updates[pos]
                    if weighting == "uniform":
                        factor = float(len(updates))
                    else:
                        factor = sum(u.num_train_samples for u in updates) / honest.num_train_samples
                    updates[pos] = craft_replacement_update(
                        w_t, target, factor, honest.client_id, honest.num_train_samples
                    )
                    attack_applied = True
                    log.info("round %d: model replacement injected by %s", t, honest.client_id)
                else:
                    log.info("round %d: attacker not selected, attack skipped", t)

            if not all(np.all(np.isfinite(u.delta)) for u in updates):
                raise DivergenceError(t)
            global_model = aggregate_fedavg(w_t, updates, weighting)
            rounds.append(RoundRecord(t, [ids[i] for i in chosen], records))
            log.debug("round %d done, %d clients", t, len(chosen))
    except InputError as exc:
        # ModelParams rejects non-finite vectors on construction
        if "finite" in str(exc):
            raise DivergenceError(len(rounds), f"non-finite parameters in round {len(rounds)}") from exc
        raise
    finally:
        if executor is not None:
            executor.shutdown()

    clients = [_client_final(global_model, d, cid, config) for d, cid in zip(data, ids)]
    return RunStatistics(
        config=config,
        client_ids=ids,
        selection_count=selection_count,
        class_distribution=merged,
        rounds=rounds,
        clients=clients,
        final_model=global_model,
        attack_applied=attack_applied,
        finished_at=_dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat(),
    )
