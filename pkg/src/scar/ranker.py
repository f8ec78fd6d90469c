"""The style-consistency ranker: parameters, forward pass, hinge ranking
loss over the (direct, referenced, human) orderings, triplet-margin
representation regularizer, exact hand-rolled backpropagation, Adam, and
training with early stopping.

The encoder is frozen: the model consumes precomputed embeddings and only
the form projection, alignment MLP, and reward head train. All compute is
f64; subgradient conventions are relu'(0) = 0, hinge gradient 0 at an
argument of exactly 0, and distance gradient 0 when two vectors coincide.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import TripletSet
from .embeddings import EmbeddingStore, ROLE_INSTRUCTION, store_key
from .errors import ConfigError, DataError, StoreError

PARAMS_MAGIC = b"SCARPAR1"
PARAMS_VERSION = 1

# Ordered pairs (winner, loser) the ranker must separate:
# direct > referenced, referenced > human, direct > human.
PAIR_ORDER = (("d", "r"), ("r", "h"), ("d", "h"))


@dataclass(frozen=True)
class RankerConfig:
    """Training hyperparameters. Margins/weights default to standard hinge
    and triplet settings; the quality threshold default of 2.5 is this
    artifact's choice and should be reviewed per dataset."""

    dim: int
    hidden: int = 256
    margin: float = 1.0
    form_margin: float = 0.1
    align_margin: float = 0.1
    form_weight: float = 0.1
    align_weight: float = 0.1
    quality_threshold: float = 2.5
    lr: float = 1e-3
    max_epochs: int = 20
    patience: int = 3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.hidden < 1:
            raise ConfigError("dim and hidden must be >= 1")
        for name in ("margin", "form_margin", "align_margin", "form_weight", "align_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, patience, batch_size must be >= 1")


# Parameter array names in serialization order.
PARAM_FIELDS = (
    "form_w", "form_b",
    "align1_w", "align1_b",
    "align2_w", "align2_b",
    "head1_w", "head1_b",
    "head2_w", "head2_b",
)


@dataclass
class RankerParams:
    """All trainable weights.

    form_w/form_b project the pooled response vector to the form
    representation; align1/align2 form the two-layer alignment MLP over the
    concatenated instruction/response cls vectors; head1/head2 form the
    reward head over the concatenated representations.
    """

    form_w: np.ndarray   # (M, M)
    form_b: np.ndarray   # (M,)
    align1_w: np.ndarray  # (M, 2M)
    align1_b: np.ndarray  # (M,)
    align2_w: np.ndarray  # (M, M)
    align2_b: np.ndarray  # (M,)
    head1_w: np.ndarray  # (H, 2M)
    head1_b: np.ndarray  # (H,)
    head2_w: np.ndarray  # (H,)
    head2_b: np.ndarray  # (1,)

    @property
    def dim(self) -> int:
        return self.form_w.shape[0]

    @property
    def hidden(self) -> int:
        return self.head1_w.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "RankerParams":
        return RankerParams(**{k: v.copy() for k, v in self.arrays().items()})

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            if not np.isfinite(arr).all():
                raise DataError(f"parameter {name} contains non-finite values")


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# Small positive bias keeps relu units alive at init; an exactly-zero bias
# parks whole layers on the relu kink whenever the previous layer is dead.
_BIAS_INIT = 0.01


def init_params(cfg: RankerConfig) -> RankerParams:
    """Xavier-uniform weights, small constant biases, seeded by cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    m, h = cfg.dim, cfg.hidden
    return RankerParams(
        form_w=_xavier(rng, m, m),
        form_b=np.full(m, _BIAS_INIT),
        align1_w=_xavier(rng, m, 2 * m),
        align1_b=np.full(m, _BIAS_INIT),
        align2_w=_xavier(rng, m, m),
        align2_b=np.full(m, _BIAS_INIT),
        head1_w=_xavier(rng, h, 2 * m),
        head1_b=np.full(h, _BIAS_INIT),
        head2_w=_xavier(rng, 1, h)[0],
        head2_b=np.zeros(1),
    )


def save_params(params: RankerParams, path: str | Path) -> None:
    """Versioned binary dump: magic, version, M, H, then f64 LE arrays in
    PARAM_FIELDS order (row-major)."""
    params.check_finite()
    with Path(path).open("wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<III", PARAMS_VERSION, params.dim, params.hidden))
        for name in PARAM_FIELDS:
            fh.write(np.asarray(getattr(params, name), dtype="<f8").tobytes())


def load_params(path: str | Path) -> RankerParams:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"params file not found: {p}")
    data = p.read_bytes()
    head = len(PARAMS_MAGIC) + 12
    if len(data) < head:
        raise StoreError("truncated params header")
    if data[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise StoreError("bad params magic")
    version, m, h = struct.unpack_from("<III", data, len(PARAMS_MAGIC))
    if version != PARAMS_VERSION:
        raise StoreError(f"unsupported params version {version}")
    shapes = {
        "form_w": (m, m), "form_b": (m,),
        "align1_w": (m, 2 * m), "align1_b": (m,),
        "align2_w": (m, m), "align2_b": (m,),
        "head1_w": (h, 2 * m), "head1_b": (h,),
        "head2_w": (h,), "head2_b": (1,),
    }
    offset = head
    arrays = {}
    for name in PARAM_FIELDS:
        shape = shapes[name]
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise StoreError(f"truncated params array {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise StoreError("trailing bytes after params arrays")
    params = RankerParams(**arrays)
    params.check_finite()
    return params


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class _Activations:
    cxy: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    v_align: np.ndarray
    pooled: np.ndarray
    v_form: np.ndarray
    f_in: np.ndarray
    zh: np.ndarray
    ah: np.ndarray
    scores: np.ndarray


def _forward_matrix(
    params: RankerParams, x_cls: np.ndarray, y_cls: np.ndarray, y_pooled: np.ndarray
) -> _Activations:
    """Batched forward pass; inputs are (B, M) f64 matrices."""
    cxy = np.concatenate([x_cls, y_cls], axis=1)
    z1 = cxy @ params.align1_w.T + params.align1_b
    a1 = _relu(z1)
    z2 = a1 @ params.align2_w.T + params.align2_b
    v_align = _relu(z2)
    v_form = y_pooled @ params.form_w.T + params.form_b
    f_in = np.concatenate([v_form, v_align], axis=1)
    zh = f_in @ params.head1_w.T + params.head1_b
    ah = _relu(zh)
    scores = ah @ params.head2_w + params.head2_b[0]
    return _Activations(cxy, z1, a1, z2, v_align, y_pooled, v_form, f_in, zh, ah, scores)


def forward(params: RankerParams, emb_x, emb_y) -> tuple[float, np.ndarray, np.ndarray]:
    """Score one (instruction, response) embedding pair.

    Returns (score, form_vec, align_vec).
    """
    x_cls = np.asarray(emb_x.cls, dtype=np.float64)
    y_cls = np.asarray(emb_y.cls, dtype=np.float64)
    y_pooled = np.asarray(emb_y.pooled, dtype=np.float64)
    m = params.dim
    if x_cls.shape != (m,) or y_cls.shape != (m,) or y_pooled.shape != (m,):
        raise ConfigError(
            f"embedding dim mismatch: params expect {m}, got "
            f"{x_cls.shape}/{y_cls.shape}/{y_pooled.shape}"
        )
    act = _forward_matrix(params, x_cls[None, :], y_cls[None, :], y_pooled[None, :])
    return float(act.scores[0]), act.v_form[0].copy(), act.v_align[0].copy()


def ranking_loss(
    s_d: float, s_r: float, s_h: float, margin: float,
    mask: tuple[bool, bool, bool] = (True, True, True),
) -> float:
    """Sum of hinge terms over the active ordered pairs."""
    if margin < 0:
        raise ConfigError("margin must be >= 0")
    scores = {"d": s_d, "r": s_r, "h": s_h}
    total = 0.0
    for active, (winner, loser) in zip(mask, PAIR_ORDER):
        if active:
            total += max(0.0, margin - scores[winner] + scores[loser])
    return total


def rep_loss(
    form_d: np.ndarray, form_r: np.ndarray, form_h: np.ndarray,
    align_d: np.ndarray, align_r: np.ndarray, align_h: np.ndarray,
    form_margin: float, align_margin: float,
    form_weight: float, align_weight: float,
) -> float:
    """Triplet-margin regularizer on the two representation spaces.

    Pushes d(form_d, form_r) below d(form_r, form_h) and
    d(align_h, align_r) below d(align_d, align_h), each by its margin.
    """
    d = np.linalg.norm
    form_term = max(0.0, d(form_d - form_r) - d(form_r - form_h) + form_margin)
    align_term = max(0.0, d(align_h - align_r) - d(align_d - align_h) + align_margin)
    return form_weight * form_term + align_weight * align_term


@dataclass
class TripletBatch:
    """Embeddings for a batch of triplets, one row per triplet."""

    ids: list[str]
    x_cls: np.ndarray
    cls: dict[str, np.ndarray]     # role -> (B, M)
    pooled: dict[str, np.ndarray]  # role -> (B, M)

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, indices: np.ndarray) -> "TripletBatch":
        return TripletBatch(
            ids=[self.ids[i] for i in indices],
            x_cls=self.x_cls[indices],
            cls={k: v[indices] for k, v in self.cls.items()},
            pooled={k: v[indices] for k, v in self.pooled.items()},
        )


def build_batch(triplets: list, store: EmbeddingStore) -> TripletBatch:
    """Gather f64 embedding matrices for triplets, raising on missing keys."""
    ids = [t.id for t in triplets]
    x_rows, cls_rows, pooled_rows = [], {r: [] for r in "drh"}, {r: [] for r in "drh"}
    for t in triplets:
        x_rows.append(store.get(store_key(t.id, ROLE_INSTRUCTION)).cls)
        for role in "drh":
            rec = store.get(store_key(t.id, role))
            cls_rows[role].append(rec.cls)
            pooled_rows[role].append(rec.pooled)
    to_mat = lambda rows: np.asarray(np.stack(rows), dtype=np.float64)
    return TripletBatch(
        ids=ids,
        x_cls=to_mat(x_rows),
        cls={r: to_mat(cls_rows[r]) for r in "drh"},
        pooled={r: to_mat(pooled_rows[r]) for r in "drh"},
    )


def full_mask(n: int) -> np.ndarray:
    """An all-active pair mask for n triplets."""
    return np.ones((n, 3), dtype=bool)


def _zero_grads(params: RankerParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


def _loss_and_grad(
    params: RankerParams, batch: TripletBatch, mask: np.ndarray, cfg: RankerConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-triplet loss over the batch and its exact gradient."""
    b = len(batch)
    if mask.shape != (b, 3):
        raise ConfigError(f"mask shape {mask.shape} does not match batch size {b}")
    acts = {
        role: _forward_matrix(params, batch.x_cls, batch.cls[role], batch.pooled[role])
        for role in "drh"
    }
    scores = {role: acts[role].scores for role in "drh"}

    ds = {role: np.zeros(b) for role in "drh"}
    d_form = {role: np.zeros_like(acts[role].v_form) for role in "drh"}
    d_align = {role: np.zeros_like(acts[role].v_align) for role in "drh"}
    total = 0.0

    # Ranking hinges over active pairs (zero branch taken at the kink).
    for col, (winner, loser) in enumerate(PAIR_ORDER):
        arg = cfg.margin - scores[winner] + scores[loser]
        active = mask[:, col] & (arg > 0.0)
        total += float(arg[active].sum())
        ds[winner][active] -= 1.0
        ds[loser][active] += 1.0

    # Representation triplet terms.
    if cfg.form_weight > 0.0 or cfg.align_weight > 0.0:
        fd, fr, fh = (acts[r].v_form for r in "drh")
        ad, ar, ah_ = (acts[r].v_align for r in "drh")

        diff_dr = fd - fr
        diff_rh = fr - fh
        dist_dr = np.linalg.norm(diff_dr, axis=1)
        dist_rh = np.linalg.norm(diff_rh, axis=1)
        form_arg = dist_dr - dist_rh + cfg.form_margin
        form_active = form_arg > 0.0
        total += cfg.form_weight * float(form_arg[form_active].sum())
        # unit difference vectors with a zero subgradient at zero distance
        u_dr = np.divide(diff_dr, dist_dr[:, None], out=np.zeros_like(diff_dr),
                         where=dist_dr[:, None] > 0.0)
        u_rh = np.divide(diff_rh, dist_rh[:, None], out=np.zeros_like(diff_rh),
                         where=dist_rh[:, None] > 0.0)
        w = cfg.form_weight * form_active[:, None]
        d_form["d"] += w * u_dr
        d_form["r"] += w * (-u_dr - u_rh)
        d_form["h"] += w * u_rh

        diff_hr = ah_ - ar
        diff_dh = ad - ah_
        dist_hr = np.linalg.norm(diff_hr, axis=1)
        dist_dh = np.linalg.norm(diff_dh, axis=1)
        align_arg = dist_hr - dist_dh + cfg.align_margin
        align_active = align_arg > 0.0
        total += cfg.align_weight * float(align_arg[align_active].sum())
        u_hr = np.divide(diff_hr, dist_hr[:, None], out=np.zeros_like(diff_hr),
                         where=dist_hr[:, None] > 0.0)
        u_dh = np.divide(diff_dh, dist_dh[:, None], out=np.zeros_like(diff_dh),
                         where=dist_dh[:, None] > 0.0)
        w = cfg.align_weight * align_active[:, None]
        d_align["h"] += w * (u_hr + u_dh)
        d_align["r"] += w * (-u_hr)
        d_align["d"] += w * (-u_dh)

    grads = _zero_grads(params)
    inv_b = 1.0 / b
    for role in "drh":
        act = acts[role]
        up_s = ds[role] * inv_b
        up_form = d_form[role] * inv_b
        up_align = d_align[role] * inv_b

        grads["head2_w"] += act.ah.T @ up_s
        grads["head2_b"][0] += up_s.sum()
        d_ah = np.outer(up_s, params.head2_w)
        d_zh = d_ah * (act.zh > 0.0)
        grads["head1_w"] += d_zh.T @ act.f_in
        grads["head1_b"] += d_zh.sum(axis=0)
        d_fin = d_zh @ params.head1_w
        m = params.dim
        d_vform = d_fin[:, :m] + up_form
        d_valign = d_fin[:, m:] + up_align

        grads["form_w"] += d_vform.T @ act.pooled
        grads["form_b"] += d_vform.sum(axis=0)

        d_z2 = d_valign * (act.z2 > 0.0)
        grads["align2_w"] += d_z2.T @ act.a1
        grads["align2_b"] += d_z2.sum(axis=0)
        d_a1 = d_z2 @ params.align2_w
        d_z1 = d_a1 * (act.z1 > 0.0)
        grads["align1_w"] += d_z1.T @ act.cxy
        grads["align1_b"] += d_z1.sum(axis=0)

    return total * inv_b, grads


def total_loss(
    params: RankerParams, batch: TripletBatch, mask: np.ndarray, cfg: RankerConfig
) -> float:
    """Mean over triplets of masked ranking loss plus representation loss."""
    loss, _ = _loss_and_grad(params, batch, mask, cfg)
    return loss


def grad(
    params: RankerParams, batch: TripletBatch, mask: np.ndarray, cfg: RankerConfig
) -> dict[str, np.ndarray]:
    """Exact subgradients of total_loss with the documented kink conventions."""
    _, grads = _loss_and_grad(params, batch, mask, cfg)
    return grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: RankerParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays().items()},
            v={k: np.zeros_like(a) for k, a in params.arrays().items()},
        )


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(
    params: RankerParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    t = state.t
    for name, arr in params.arrays().items():
        g = grads[name]
        if g.shape != arr.shape:
            raise ConfigError(f"gradient shape mismatch for {name}")
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * (g * g)
        m_hat = state.m[name] / (1 - ADAM_BETA1**t)
        v_hat = state.v[name] / (1 - ADAM_BETA2**t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass(frozen=True)
class EvalResult:
    """Ordering accuracies; ties count as failures."""

    acc_full: float
    acc_dr: float
    acc_rh: float

    def as_dict(self) -> dict[str, float]:
        return {"acc_full": self.acc_full, "acc_dr": self.acc_dr, "acc_rh": self.acc_rh}


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[EvalResult] = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "train_loss": self.train_loss,
                "val_accuracy": [e.as_dict() for e in self.val_accuracy],
                "epochs_run": self.epochs_run,
                "stopped_early": self.stopped_early,
            },
            sort_keys=True,
        )


def _batch_scores(params: RankerParams, batch: TripletBatch) -> dict[str, np.ndarray]:
    return {
        role: _forward_matrix(params, batch.x_cls, batch.cls[role], batch.pooled[role]).scores
        for role in "drh"
    }


def evaluate_batch(params: RankerParams, batch: TripletBatch) -> EvalResult:
    scores = _batch_scores(params, batch)
    dr = scores["d"] > scores["r"]
    rh = scores["r"] > scores["h"]
    return EvalResult(
        acc_full=float((dr & rh).mean()),
        acc_dr=float(dr.mean()),
        acc_rh=float(rh.mean()),
    )


def evaluate(params: RankerParams, test: TripletSet, store: EmbeddingStore) -> EvalResult:
    """Strict-ordering accuracies on a triplet set."""
    if len(test) == 0:
        raise ConfigError("evaluate requires a non-empty triplet set")
    return evaluate_batch(params, build_batch(list(test), store))


def build_pair_mask_array(
    triplets: list,
    quality_table: Mapping | None,
    threshold: float,
) -> np.ndarray:
    """Per-triplet boolean (B, 3) mask from a quality table; None = all active."""
    if quality_table is None:
        return full_mask(len(triplets))
    from .quality import pair_mask  # local import to avoid a module cycle

    rows = []
    for t in triplets:
        pm = pair_mask(t.id, quality_table, threshold)
        rows.append([pm.dr, pm.rh, pm.dh])
    return np.asarray(rows, dtype=bool)


def train(
    train_set: TripletSet,
    val_set: TripletSet,
    store: EmbeddingStore,
    quality_table: Mapping | None,
    cfg: RankerConfig,
) -> tuple[RankerParams, TrainHistory]:
    """Train with seeded shuffling, Adam, and early stopping on val acc_full.

    Returns the parameters from the best validation epoch. With an empty
    validation set the final-epoch parameters are returned and early
    stopping is disabled.
    """
    if len(train_set) == 0:
        raise ConfigError("train requires a non-empty training set")
    triplets = list(train_set)
    batch_all = build_batch(triplets, store)
    mask_all = build_pair_mask_array(triplets, quality_table, cfg.quality_threshold)
    if not mask_all.any():
        raise DataError(
            "quality threshold masks every ranking pair; nothing to train on"
        )
    val_batch = build_batch(list(val_set), store) if len(val_set) > 0 else None

    params = init_params(cfg)
    state = AdamState.for_params(params)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_acc = -1.0
    best_params = params.copy()
    epochs_since_improve = 0
    n = len(triplets)

    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            sub = batch_all.take(idx)
            sub_mask = mask_all[idx]
            loss, grads = _loss_and_grad(params, sub, sub_mask, cfg)
            adam_step(params, grads, state, cfg.lr)
            loss_sum += loss * len(idx)
        history.train_loss.append(loss_sum / n)
        history.epochs_run += 1

        if val_batch is None:
            best_params = params.copy()
            continue
        result = evaluate_batch(params, val_batch)
        history.val_accuracy.append(result)
        if result.acc_full > best_acc:
            best_acc = result.acc_full
            best_params = params.copy()
            epochs_since_improve = 0
        else:
            epochs_since_improve += 1
            if epochs_since_improve >= cfg.patience:
                history.stopped_early = True
                break

    return best_params, history


def score(params: RankerParams, store: EmbeddingStore, example_id: str) -> float:
    """Reward score for one dataset example via its stored embeddings."""
    emb_x = store.get(store_key(example_id, "x"))
    emb_y = store.get(store_key(example_id, "y"))
    return forward(params, emb_x, emb_y)[0]
