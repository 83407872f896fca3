"""End-to-end training: parameters, batched objective, Adam, checkpoints.

The loss over a batch is the sum the model minimizes globally:

    J = sum_instances sum_negatives max(margin + d(s,pos) - d(s,neg), 0)
        + lambda_dist   * sum_instances d(s, pos)
        + lambda_orthog * sum_instances |v(s) . p(s)| / ||p(s)||

built as one recorded autodiff graph per batch. Instances are bucketed by
length inside the batch so the selector and the attention encoder run as
batched tensor ops; the bucketing is an implementation detail with no effect
on the math (the graph computes exactly the per-instance formulas).

Training-only guards: proxy assembly and hyperplane normalization pad their
denominators with 1e-12 instead of raising on degenerate mixtures, and the
anonymous row 0 of the user-bias table has its gradient zeroed so it stays
pinned at zero.

After every Adam step, item and proxy rows are clipped back into the unit
ball and normal rows are rescaled to exactly unit norm.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .data import (
    PredictionInstance,
    SessionSplit,
    expand_all,
    flag_known_users,
    sample_negatives,
)
from .encoder import EncoderParams
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    LengthError,
    NumericError,
)
from .scoring import SCORING_MODES
from .selector import AnnealSchedule, ProxyBank, SelectorParams, temperature

EPS = 1e-12

# fixed seed-stream tags so resumed runs redraw the exact same randomness
_STREAM_INIT = 101
_STREAM_EPOCH = 211
_STREAM_FLAG = 307


@dataclass
class TrainConfig:
    embed_dim: int = 64
    proxy_count: int = 100
    max_len: int = 50
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 30
    patience: int = 10
    negatives: int = 10
    margin: float = 0.5
    lambda_dist: float = 0.1
    lambda_orthog: float = 0.1
    mode: str = "full"
    task: str = "unseen"
    anneal_start: float = 3.0
    anneal_end: float = 0.01
    anneal_epochs: int = 10
    seed: int = 0
    known_user_ratio: float = 0.0
    min_sessions_per_user: int = 10
    threads: int = 1

    def __post_init__(self):
        if self.mode not in SCORING_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {SCORING_MODES}")
        if self.task not in ("repeat", "unseen"):
            raise ConfigError(f"unknown task {self.task!r}")
        for name in ("embed_dim", "proxy_count", "max_len", "batch_size", "epochs", "negatives"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.known_user_ratio <= 1.0:
            raise ConfigError(f"known_user_ratio must be in [0, 1], got {self.known_user_ratio}")

    def schedule(self) -> AnnealSchedule:
        return AnnealSchedule(self.anneal_start, self.anneal_end, self.anneal_epochs)


@dataclass
class ModelParams:
    items: np.ndarray  # (N+1, d); row 0 is unused padding
    bank: ProxyBank
    selector: SelectorParams
    encoder: EncoderParams
    user_bias: np.ndarray  # (U+1, K); row 0 is the pinned anonymous row
    user_tags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._rows = {tag: i + 1 for i, tag in enumerate(self.user_tags)}

    @property
    def item_count(self) -> int:
        return self.items.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.items.shape[1]

    @property
    def proxy_count(self) -> int:
        return self.bank.proxies.shape[0]

    def bias_row(self, tag: str | None) -> int:
        return self._rows.get(tag, 0)

    def bias_for(self, tag: str | None) -> np.ndarray | None:
        row = self.bias_row(tag)
        return self.user_bias[row] if row else None

    def named(self) -> dict[str, np.ndarray]:
        return {
            "items": self.items,
            "proxies": self.bank.proxies,
            "normals": self.bank.normals,
            "sel_w1": self.selector.w1,
            "sel_w2": self.selector.w2,
            "sel_pos": self.selector.pos,
            "enc_wq": self.encoder.wq,
            "enc_wk": self.encoder.wk,
            "enc_w1": self.encoder.w1,
            "enc_w2": self.encoder.w2,
            "enc_b1": self.encoder.b1,
            "enc_b2": self.encoder.b2,
            "enc_pos": self.encoder.pos,
            "user_bias": self.user_bias,
        }

    def copy(self) -> "ModelParams":
        return _params_from_named(
            {k: v.copy() for k, v in self.named().items()}, list(self.user_tags)
        )


def _params_from_named(t: dict[str, np.ndarray], user_tags: list[str]) -> ModelParams:
    return ModelParams(
        items=t["items"],
        bank=ProxyBank(proxies=t["proxies"], normals=t["normals"]),
        selector=SelectorParams(w1=t["sel_w1"], w2=t["sel_w2"], pos=t["sel_pos"]),
        encoder=EncoderParams(
            wq=t["enc_wq"], wk=t["enc_wk"], w1=t["enc_w1"], w2=t["enc_w2"],
            b1=t["enc_b1"], b2=t["enc_b2"], pos=t["enc_pos"],
        ),
        user_bias=t["user_bias"],
        user_tags=user_tags,
    )


def init_model(item_count: int, cfg: TrainConfig, user_tags: list[str] | None = None) -> ModelParams:
    """Fresh parameters: uniform [-1/sqrt(d), 1/sqrt(d)] draws in fixed order.

    Embedding rows already fit inside the unit ball at that scale but are
    clipped anyway; normal rows are rescaled to exactly unit norm. Head
    biases and user biases start at zero.
    """
    d, k, L = cfg.embed_dim, cfg.proxy_count, cfg.max_len
    hidden = (d + k) // 2
    rng = np.random.default_rng([cfg.seed, _STREAM_INIT])
    bound = 1.0 / np.sqrt(d)
    u = lambda *shape: rng.uniform(-bound, bound, size=shape)

    items = u(item_count + 1, d)
    items[0] = 0.0
    proxies = u(k, d)
    normals = u(k, d)
    sel_w1 = u(d, hidden)
    sel_w2 = u(hidden, k)
    sel_pos = u(L, d)
    enc_wq = u(d, d)
    enc_wk = u(d, d)
    enc_w1 = u(d, d)
    enc_w2 = u(d, d)
    enc_pos = u(L, d)

    tags = list(user_tags or [])
    params = ModelParams(
        items=items,
        bank=ProxyBank(proxies=proxies, normals=normals),
        selector=SelectorParams(w1=sel_w1, w2=sel_w2, pos=sel_pos),
        encoder=EncoderParams(
            wq=enc_wq, wk=enc_wk, w1=enc_w1, w2=enc_w2,
            b1=np.zeros(d), b2=np.zeros(d), pos=enc_pos,
        ),
        user_bias=np.zeros((len(tags) + 1, k)),
        user_tags=tags,
    )
    project_constraints(params)
    return params


def project_constraints(params: ModelParams) -> None:
    """Clip item/proxy rows into the unit ball; renormalize normal rows."""
    for table in (params.items, params.bank.proxies):
        norms = np.linalg.norm(table, axis=1)
        over = norms > 1.0
        if over.any():
            table[over] /= norms[over, None]
    vn = np.linalg.norm(params.bank.normals, axis=1)
    params.bank.normals /= np.maximum(vn, EPS)[:, None]
    params.user_bias[0] = 0.0


def make_leaves(params: ModelParams) -> dict[str, Tensor]:
    """Wrap the parameter arrays as shared-storage autodiff leaves."""
    return {name: Tensor(arr, requires_grad=True) for name, arr in params.named().items()}


# -- Adam ----------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, named: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in named.items()},
            v={k: np.zeros_like(a) for k, a in named.items()},
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            step=self.step, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
        )


def adam_step(
    named: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One in-place Adam update with bias correction."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in named.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- batched objective -----------------------------------------------------------


def hinge_term(dist_pos: float, dist_neg: float, margin: float) -> float:
    """max(margin + dist_pos - dist_neg, 0) for a single candidate pair."""
    return max(margin + dist_pos - dist_neg, 0.0)


def _buckets(seqs: list[tuple[int, ...]]) -> list[tuple[int, list[int]]]:
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(i)
    return list(by_len.items())


def _restore_order(chunks: list[Tensor], order: list[int]) -> Tensor:
    whole = chunks[0] if len(chunks) == 1 else concat(chunks, axis=0)
    if order == sorted(order):
        return whole
    inv = np.empty(len(order), dtype=np.int64)
    inv[np.asarray(order)] = np.arange(len(order))
    return whole.gather(inv)


def _pi_batched(item_lists, bias_rows, leaves, tau) -> Tensor:
    """Selection distributions (B, K), one softmax row per instance."""
    pos = leaves["sel_pos"]
    max_rows = pos.data.shape[0]
    for s in item_lists:
        if not 1 <= len(s) <= max_rows:
            raise LengthError(
                f"session length {len(s)} outside positional table of {max_rows} rows"
            )
    chunks, order = [], []
    for length, idxs in _buckets(item_lists):
        ids = np.asarray([item_lists[i] for i in idxs], dtype=np.int64)
        x = leaves["items"].gather(ids) + pos.gather(np.arange(length))
        h = (x @ leaves["sel_w1"]).leaky_relu(0.1)
        chunks.append((h @ leaves["sel_w2"]).mean(axis=1))
        order.extend(idxs)
    alpha = _restore_order(chunks, order)
    if leaves["user_bias"].data.shape[0] > 1:
        alpha = alpha + leaves["user_bias"].gather(np.asarray(bias_rows, dtype=np.int64))
    return (alpha / tau).softmax(axis=-1)


def _short_batched(prefixes, leaves) -> Tensor:
    """Short-term interest vectors (B, d) via per-length attention blocks."""
    pos = leaves["enc_pos"]
    max_rows = pos.data.shape[0]
    d = leaves["items"].data.shape[1]
    for s in prefixes:
        if not 1 <= len(s) <= max_rows:
            raise LengthError(
                f"prefix length {len(s)} outside positional table of {max_rows} rows"
            )
    chunks, order = [], []
    for length, idxs in _buckets(prefixes):
        ids = np.asarray([prefixes[i] for i in idxs], dtype=np.int64)
        x = leaves["items"].gather(ids) + pos.gather(np.arange(length - 1, -1, -1))
        q = (x @ leaves["enc_wq"]).relu()
        k = (x @ leaves["enc_wk"]).relu()
        att = ((q @ k.mT) / np.sqrt(d)).softmax(axis=-1)
        z = att @ x + x
        pick_last = np.zeros(length)
        pick_last[-1] = 1.0
        z_last = Tensor(pick_last) @ z  # (Bn, d), exact row selection
        s_vec = ((z_last @ leaves["enc_w1"]) + leaves["enc_b1"]).relu() @ leaves["enc_w2"] + leaves["enc_b2"]
        chunks.append(s_vec)
        order.extend(idxs)
    return _restore_order(chunks, order)


def _project_batch(x: Tensor, v: Tensor) -> Tensor:
    return x - x.inner(v, keepdims=True) * v


def objective(
    instances: list[PredictionInstance],
    leaves: dict[str, Tensor],
    tau: float,
    cfg: TrainConfig,
    negatives: np.ndarray,
    bias_rows: list[int] | None = None,
) -> tuple[Tensor, dict]:
    """Recorded graph for the batch loss; returns (scalar J, telemetry parts).

    negatives is an int array (batch, negatives). bias_rows gives each
    instance's row in the user-bias table (0 = anonymous); omitted means all
    anonymous. The proxy branch runs from each instance's whole parent
    session, the short-term branch from its prefix.
    """
    B = len(instances)
    if B == 0:
        raise DataError("empty batch")
    neg = np.asarray(negatives, dtype=np.int64)
    if neg.shape != (B, cfg.negatives):
        raise ConfigError(f"negatives shape {neg.shape} != {(B, cfg.negatives)}")
    if bias_rows is None:
        bias_rows = [0] * B
    mode = cfg.mode
    use_proxy = mode != "short_only"
    use_short = mode != "proxy_only"

    p = v = s = None
    if use_proxy:
        pi = _pi_batched([i.parent_items for i in instances], bias_rows, leaves, tau)
        proxies, normals = leaves["proxies"], leaves["normals"]
        combined = pi @ proxies  # (B, d)
        mixed_norm = pi @ proxies.l2norm(axis=-1)  # (B,)
        gamma = mixed_norm / (combined.l2norm(axis=-1) + EPS)
        p = gamma.reshape(B, 1) * combined
        w = pi @ normals
        v = w / (w.l2norm(axis=-1, keepdims=True) + EPS)  # (B, d)
    if use_short:
        s = _short_batched([i.prefix for i in instances], leaves)

    pos_ids = np.asarray([i.target for i in instances], dtype=np.int64)
    pos_vec = leaves["items"].gather(pos_ids)  # (B, d)
    neg_vec = leaves["items"].gather(neg)  # (B, C, d)

    d_dim = leaves["items"].data.shape[1]
    if mode in ("full", "dot_product"):
        q = p + _project_batch(s, v)
        v3 = v.reshape(B, 1, d_dim)
        pos_t = _project_batch(pos_vec, v)
        neg_t = _project_batch(neg_vec, v3)
    elif mode == "proxy_only":
        q = p
        v3 = v.reshape(B, 1, d_dim)
        pos_t = _project_batch(pos_vec, v)
        neg_t = _project_batch(neg_vec, v3)
    elif mode == "short_only":
        q, pos_t, neg_t = s, pos_vec, neg_vec
    else:  # no_projection
        q, pos_t, neg_t = p + s, pos_vec, neg_vec

    if mode == "dot_product":
        d_pos = -q.inner(pos_t)  # (B,)
        d_neg = -q.reshape(B, 1, d_dim).inner(neg_t)  # (B, C)
    else:
        d_pos = q.sq_dist(pos_t)
        d_neg = q.reshape(B, 1, d_dim).sq_dist(neg_t)

    hinge = (cfg.margin + d_pos.reshape(B, 1) - d_neg).relu().sum()
    J = hinge
    parts = {
        "hinge": float(hinge.data),
        "reg_dist": float(d_pos.data.sum()),
        "reg_orthog": 0.0,
    }
    if cfg.lambda_dist != 0.0:
        J = J + cfg.lambda_dist * d_pos.sum()
    if use_proxy:
        orthog = (v.inner(p).abs() / (p.l2norm(axis=-1) + EPS)).sum()
        parts["reg_orthog"] = float(orthog.data)
        if cfg.lambda_orthog != 0.0:
            J = J + cfg.lambda_orthog * orthog
    parts["loss"] = float(J.data)
    return J, parts


# -- epoch loop -------------------------------------------------------------------


def train_epoch(
    instances: list[PredictionInstance],
    params: ModelParams,
    leaves: dict[str, Tensor],
    adam: AdamState,
    cfg: TrainConfig,
    epoch: int,
    tau: float,
) -> dict:
    """One pass: shuffle instances, fresh negatives per batch, Adam updates.

    The epoch's shuffle and negative draws come from a generator derived from
    (seed, epoch) alone, so resuming from a checkpoint replays the identical
    stream without any saved RNG state.
    """
    rng = np.random.default_rng([cfg.seed, _STREAM_EPOCH, epoch])
    perm = rng.permutation(len(instances))
    n_items = params.item_count
    named = params.named()
    totals = {"loss": 0.0, "hinge": 0.0, "reg_dist": 0.0, "reg_orthog": 0.0}
    grad_norm_sum = 0.0
    n_batches = 0
    for start in range(0, len(instances), cfg.batch_size):
        bidx = perm[start : start + cfg.batch_size]
        batch = [instances[i] for i in bidx]
        negs = np.stack(
            [sample_negatives(inst.target, n_items, cfg.negatives, rng) for inst in batch]
        )
        bias_rows = [params.bias_row(i.user_tag) if i.known_user else 0 for i in batch]
        for t in leaves.values():
            t.zero_grad()
        J, parts = objective(batch, leaves, tau, cfg, negs, bias_rows)
        if not np.isfinite(J.data):
            raise NumericError(f"non-finite loss in epoch {epoch}, batch {n_batches}")
        J.backward()
        grads = {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in leaves.items()
        }
        grads["user_bias"][0] = 0.0  # anonymous row stays pinned
        grad_norm_sum += float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        adam_step(named, grads, adam, cfg.learning_rate)
        project_constraints(params)
        for key in totals:
            totals[key] += parts[key]
        n_batches += 1
    n = max(len(instances), 1)
    return {
        "epoch": epoch,
        "tau": tau,
        "loss": totals["loss"] / n,
        "hinge": totals["hinge"] / n,
        "reg_dist": totals["reg_dist"] / n,
        "reg_orthog": totals["reg_orthog"] / n,
        "grad_norm": grad_norm_sum / max(n_batches, 1),
        "batches": n_batches,
    }


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    epoch: int
    tau: float
    val_recall20: float
    history: list[dict]


def pick_known_users(split: SessionSplit, cfg: TrainConfig) -> list[str]:
    """Seeded known-user draw; one stream shared by every caller."""
    rng = np.random.default_rng([cfg.seed, _STREAM_FLAG])
    return flag_known_users(
        split.train, cfg.known_user_ratio, cfg.min_sessions_per_user, rng
    )


def fit(
    split: SessionSplit,
    cfg: TrainConfig,
    known_users: list[str] | None = None,
    log_fn=None,
    start_epoch: int = 0,
    params: ModelParams | None = None,
    adam: AdamState | None = None,
) -> TrainResult:
    """Train with per-epoch validation recall@20 and early stopping.

    Keeps the best-validation parameter snapshot; stops after cfg.patience
    epochs without strict improvement or at cfg.epochs, whichever is first.
    Pass start_epoch/params/adam to resume a checkpointed run; everything
    else (shuffles, negatives) replays deterministically from (seed, epoch).
    """
    from .evaluator import evaluate  # local import keeps module layering one-way

    known = set(known_users or [])
    train_inst = expand_all(split.train, cfg.task, known)
    valid_inst = expand_all(split.valid, cfg.task, known)
    if not train_inst:
        raise DataError("no training instances after expansion")
    if not valid_inst:
        raise DataError("no validation instances after expansion")

    if params is None:
        params = init_model(split.item_count, cfg, sorted(known))
    if adam is None:
        adam = AdamState.zeros(params.named())
    leaves = make_leaves(params)
    sched = cfg.schedule()

    best: TrainResult | None = None
    bad_epochs = 0
    history: list[dict] = []
    for epoch in range(start_epoch, cfg.epochs):
        tau = temperature(epoch, sched)
        t0 = time.monotonic()
        stats = train_epoch(train_inst, params, leaves, adam, cfg, epoch, tau)
        report = evaluate(
            params, valid_inst, cfg.task, (20,), tau, mode=cfg.mode, threads=cfg.threads
        )
        stats["val_recall20"] = report.recall[20]
        stats["seconds"] = round(time.monotonic() - t0, 3)
        history.append(stats)
        if log_fn is not None:
            log_fn(stats)
        if best is None or stats["val_recall20"] > best.val_recall20:
            best = TrainResult(
                params=params.copy(),
                adam=adam.copy(),
                epoch=epoch,
                tau=tau,
                val_recall20=stats["val_recall20"],
                history=history,
            )
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    best.history = history
    return best


# -- checkpoints -----------------------------------------------------------------

CHECKPOINT_MAGIC = b"PXRC"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str,
    params: ModelParams,
    adam: AdamState,
    epoch: int,
    tau: float,
    cfg: TrainConfig,
) -> None:
    """Versioned binary container: magic, version, JSON meta, tensor blocks.

    Tensor data is raw little-endian float64 in C order; blocks are sorted by
    name, so identical state always produces identical bytes.
    """
    tensors = dict(params.named())
    for name, arr in adam.m.items():
        tensors[f"adam.m.{name}"] = arr
    for name, arr in adam.v.items():
        tensors[f"adam.v.{name}"] = arr
    meta = {
        "epoch": epoch,
        "tau": tau,
        "adam_step": adam.step,
        "item_count": params.item_count,
        "user_tags": list(params.user_tags),
        "config": dataclasses.asdict(cfg),
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path: str) -> tuple[ModelParams, AdamState, dict]:
    """Read a checkpoint back; raises CheckpointError on any corruption."""

    def take(fh, n, what):
        b = fh.read(n)
        if len(b) != n:
            raise CheckpointError(f"{path}: truncated while reading {what}")
        return b

    with open(path, "rb") as fh:
        if take(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", take(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: format version {version}, expected {CHECKPOINT_VERSION}"
            )
        (meta_len,) = struct.unpack("<Q", take(fh, 8, "meta length"))
        try:
            meta = json.loads(take(fh, meta_len, "meta").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt metadata: {exc}")
        (n_tensors,) = struct.unpack("<Q", take(fh, 8, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", take(fh, 2, "name length"))
            name = take(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", take(fh, 1, "ndim"))
            shape = tuple(
                struct.unpack("<Q", take(fh, 8, "dim"))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(take(fh, count * 8, f"tensor {name}"), dtype="<f8")
            tensors[name] = data.reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")

    param_names = {
        "items", "proxies", "normals", "sel_w1", "sel_w2", "sel_pos",
        "enc_wq", "enc_wk", "enc_w1", "enc_w2", "enc_b1", "enc_b2",
        "enc_pos", "user_bias",
    }
    missing = param_names - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    params = _params_from_named(
        {k: tensors[k] for k in param_names}, list(meta.get("user_tags", []))
    )
    adam = AdamState(
        m={k: tensors[f"adam.m.{k}"] for k in param_names},
        v={k: tensors[f"adam.v.{k}"] for k in param_names},
        step=int(meta.get("adam_step", 0)),
    )
    return params, adam, meta
