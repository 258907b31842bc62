"""Training harness: AdamW, stratified cross-validation, metrics, checkpoints."""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .model import ABLATIONS, Batch, ModelConfig, apply_ablation, batch_loss, init_params, predict_proba

__all__ = [
    "TrainConfig",
    "FoldError",
    "adamw_step",
    "compute_metrics",
    "stratified_folds",
    "train",
    "train_fold",
    "mix_time_axis",
    "summarize",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "evaluate",
    "write_outputs",
]

CKPT_MAGIC = b"BHGCNCKP"
CKPT_VERSION = 1


class FoldError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 32
    epochs: int = 100
    folds: int = 10
    seed: int = 0
    ablations: tuple = ()
    jobs: int = 1
    augment: bool = True

    def __post_init__(self):
        self.ablations = tuple(self.ablations)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        bad = [a for a in self.ablations if a not in ABLATIONS]
        if bad:
            raise ValueError(f"unknown ablation flag(s): {', '.join(bad)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablations"] = list(self.ablations)
        d.pop("jobs")
        return d


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------


def adamw_step(params: dict, grads: dict, state: dict, lr=1e-3, wd=5e-4,
               beta1=0.9, beta2=0.999, eps=1e-8):
    """One AdamW update, in place.  ``grads`` is keyed like ``params`` (by name).

    Weight decay is decoupled: ``p -= lr * wd * p`` before the Adam step.
    """
    t = state.get("t", 0) + 1
    state["t"] = t
    m_all = state.setdefault("m", {})
    v_all = state.setdefault("v", {})
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = m_all.get(name)
        v = v_all.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_all[name], v_all[name] = m, v
        data = p.data - lr * wd * p.data
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def compute_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """ACC/SEN/SPE at ``threshold`` and rank AUC, all in percent.

    Class 1 (patient) is the positive class; a score above the threshold
    predicts it.  AUC counts tied pairs as one half.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    pred = s > threshold
    tp = int(np.sum(pred & (y == 1)))
    fn = n_pos - tp
    tn = int(np.sum(~pred & (y == 0)))
    fp = n_neg - tn
    ranks = rankdata(s)
    auc = (ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    return {
        "acc": 100.0 * (tp + tn) / len(y),
        "sen": 100.0 * tp / n_pos,
        "spe": 100.0 * tn / n_neg,
        "auc": 100.0 * float(auc),
        "confusion": {"tp": tp, "fn": fn, "tn": tn, "fp": fp},
    }


def summarize(entries: list) -> dict:
    out = {}
    for key in ("acc", "sen", "spe", "auc"):
        vals = np.array([e[key] for e in entries], dtype=float)
        out[key] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
        }
    total = {k: int(sum(e["confusion"][k] for e in entries)) for k in ("tp", "fn", "tn", "fp")}
    out["confusion"] = total
    return out


def stratified_folds(labels, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per subject: classes are shuffled separately, then dealt out."""
    labels = np.asarray(labels)
    assign = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < folds:
            raise FoldError(
                f"class {c} has {len(idx)} subjects, fewer than {folds} folds; use fewer folds"
            )
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = np.arange(len(idx)) % folds
    return assign


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, signs fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def mix_time_axis(graphs, rng: np.random.Generator) -> list:
    """Right-multiply every node series by one shared random orthogonal matrix.

    Inner products between node series are unchanged, so correlations and
    edges are too; only the arbitrary time basis moves.
    """
    Q = random_orthogonal(graphs[0].features.shape[1], rng)
    return [replace(g, features=g.features @ Q) for g in graphs]


def _model_config(graphs, tcfg: TrainConfig, model_kw: dict | None) -> ModelConfig:
    kw = dict(model_kw or {})
    kw.setdefault("in_dim", graphs[0].features.shape[1])
    return apply_ablation(tcfg.ablations, ModelConfig(**kw))


def train_fold(graphs, train_idx, test_idx, tcfg: TrainConfig, mcfg: ModelConfig, fold: int):
    """Train one model; returns (fold result dict, params, epoch losses)."""
    rng = np.random.default_rng([tcfg.seed, fold, 1])
    params = init_params(mcfg, np.random.default_rng([tcfg.seed, fold, 0]))
    state: dict = {}
    losses = []
    train_idx = np.asarray(train_idx)
    for _ in range(tcfg.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for s in range(0, len(order), tcfg.batch_size):
            chunk = [graphs[i] for i in order[s:s + tcfg.batch_size]]
            if tcfg.augment:
                chunk = mix_time_axis(chunk, rng)
            batch = Batch(chunk, mcfg)
            with ad.Tape() as tape:
                loss = batch_loss(params, batch, mcfg)
            grads = tape.backward(loss)
            named = {name: grads.get(p) for name, p in params.items()}
            adamw_step(params, named, state, tcfg.lr, tcfg.weight_decay)
            total += loss.item() * len(chunk)
        losses.append(total / len(order))
    test = [graphs[i] for i in test_idx]
    train = [graphs[i] for i in train_idx]
    p_test = predict_proba(params, test, mcfg)
    p_train = predict_proba(params, train, mcfg)
    y_test = np.array([g.label for g in test])
    y_train = np.array([g.label for g in train])
    entry = compute_metrics(p_test, y_test)
    entry["fold"] = fold
    entry["train_acc"] = 100.0 * float(np.mean((p_train > 0.5) == (y_train == 1)))
    entry["n_train"] = len(train)
    entry["n_test"] = len(test)
    return entry, params, losses


def _run_fold(args):
    graphs, tr, te, tcfg, mcfg, fold = args
    entry, params, losses = train_fold(graphs, tr, te, tcfg, mcfg, fold)
    return entry, {k: p.data for k, p in params.items()}, losses


@dataclass
class TrainResult:
    report: dict
    loss_curve: list  # (epoch, fold, loss)
    params: list = field(default_factory=list)  # per fold: name -> ndarray
    model_config: ModelConfig | None = None


def train(graphs, tcfg: TrainConfig, model_kw: dict | None = None) -> TrainResult:
    """Stratified k-fold cross-validation of the model on ``graphs``."""
    if not graphs:
        raise ValueError("empty dataset")
    labels = np.array([g.label for g in graphs])
    mcfg = _model_config(graphs, tcfg, model_kw)
    assign = stratified_folds(labels, tcfg.folds, np.random.default_rng(tcfg.seed))
    jobs = []
    for f in range(tcfg.folds):
        tr = np.flatnonzero(assign != f)
        te = np.flatnonzero(assign == f)
        jobs.append((graphs, tr, te, tcfg, mcfg, f))
    if tcfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=tcfg.jobs) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    entries = [r[0] for r in results]
    curve = [(e + 1, f, loss) for f, r in enumerate(results) for e, loss in enumerate(r[2])]
    report = {
        "model": mcfg.to_dict(),
        "train": tcfg.to_dict(),
        "n_subjects": len(graphs),
        "folds": entries,
        "summary": summarize(entries),
    }
    return TrainResult(report, curve, [r[1] for r in results], mcfg)


def write_outputs(result: TrainResult, out_dir) -> None:
    """``metrics.json``, ``loss_curve.csv`` and one checkpoint per fold."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.json", "w") as fh:
        json.dump(result.report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "loss_curve.csv", "w") as fh:
        fh.write("epoch,fold,loss\n")
        for epoch, fold, loss in result.loss_curve:
            fh.write(f"{epoch},{fold},{loss!r}\n")
    for fold, params in enumerate(result.params):
        header = {
            "model": result.report["model"],
            "train": result.report["train"],
            "seed": result.report["train"]["seed"],
            "fold": fold,
        }
        save_checkpoint(out / f"fold{fold}.ckpt", params, header)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, params: dict, header: dict) -> None:
    """JSON header followed by raw little-endian float64 blocks."""
    arrays = {k: np.asarray(v.data if isinstance(v, ad.Tensor) else v, dtype="<f8")
              for k, v in params.items()}
    head = dict(header)
    head["version"] = CKPT_VERSION
    head["blocks"] = [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()]
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a).tobytes())


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return ``(params, header)``; params are Tensors keyed by name.

    With ``expect`` the block shapes must match a freshly initialised model of
    that configuration.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint file")
    if len(raw) < 20:
        raise CheckpointError("checkpoint truncated")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if 20 + hlen > len(raw):
        raise CheckpointError("checkpoint truncated")
    try:
        header = json.loads(raw[20:20 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError("checkpoint header is not valid JSON") from None
    pos = 20 + hlen
    params = {}
    for blk in header["blocks"]:
        shape = tuple(blk["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = pos + 8 * n
        if end > len(raw):
            raise CheckpointError("checkpoint truncated")
        arr = np.frombuffer(raw[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        params[blk["name"]] = ad.Tensor(arr, requires_grad=True, name=blk["name"])
        pos = end
    if pos != len(raw):
        raise CheckpointError("trailing bytes after parameter blocks")
    if expect is not None:
        ref = init_params(expect, np.random.default_rng(0))
        if set(ref) != set(params):
            raise CheckpointError("parameter names do not match the model configuration")
        for k, t in ref.items():
            if t.shape != params[k].shape:
                raise CheckpointError(f"shape mismatch for {k}: {params[k].shape} != {t.shape}")
    return params, header


def evaluate(params: dict, graphs, mcfg: ModelConfig) -> dict:
    scores = predict_proba(params, graphs, mcfg)
    return compute_metrics(scores, [g.label for g in graphs])


def model_config_from_header(header: dict) -> ModelConfig:
    return ModelConfig.from_dict(header["model"])


def with_ablations(tcfg: TrainConfig, flags) -> TrainConfig:
    return replace(tcfg, ablations=tuple(flags))
