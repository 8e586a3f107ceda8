"""Training harness: epoch loop, evaluation, and the loss-comparison study.

A run is fully determined by its RunConfig and dataset: model init, epoch
shuffles, and dropout all draw from streams derived from the run seed, and
CSV floats are written with repr (shortest round-trip digits), so repeated
runs produce byte-identical artifacts.  The comparison study trains a plain
cross-entropy arm and fuzzy cross-entropy arms per seed from identical
initialization and data order, isolating the loss as the only difference.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from functools import reduce
from typing import Optional

import numpy as np

from . import figures
from .config import RunConfig
from .dataset import Dataset, one_hot, split_dataset
from .errors import ConfigurationError, NumericFailureError
from .losses import BLEND, FCCE, FCM_FIXED, PREDICTION
from .metrics import MetricsRecord, accuracy, dice_per_class, iou_per_class
from .models import UNet, UNetPP, load_model
from .nn.checkpoint import save_checkpoint
from .nn.optim import Adam
from .nn.tensor import Tensor
from .nn import ops
from .pgm import save_labels_pgm


@dataclasses.dataclass
class TrainOutcome:
    records: list
    best_epoch: int
    best_record: MetricsRecord
    checkpoint_path: str
    csv_path: str
    stopped_early: bool


@dataclasses.dataclass
class EvalResult:
    ac: float
    dc: float
    iou: float
    dc_per_class: np.ndarray
    iou_per_class: np.ndarray
    predictions: np.ndarray


def predict_labels(model, images: np.ndarray, batch_size=16) -> np.ndarray:
    """Eval-mode argmax labels for (N, H, W) intensities."""
    out = []
    for start in range(0, images.shape[0], batch_size):
        chunk = images[start:start + batch_size][:, None].astype(np.float32)
        from .models import forward_segment
        probs = forward_segment(model, chunk)
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out, axis=0)


def _score_split(model, images, labels, num_classes):
    preds = predict_labels(model, images)
    return (accuracy(preds, labels),
            dice_per_class(preds, labels, num_classes),
            iou_per_class(preds, labels, num_classes))


def _needs_memberships(cfg: RunConfig) -> bool:
    return cfg.loss == FCCE and cfg.membership_source in (FCM_FIXED, BLEND)


def train_run(cfg: RunConfig, dataset: Dataset, *, render_figures=True) -> TrainOutcome:
    """Train one model; writes metrics.csv, best.ckpt, and curves.png."""
    cfg.validate()
    if cfg.num_classes != dataset.num_classes:
        raise ConfigurationError(
            f"config expects {cfg.num_classes} classes, dataset has {dataset.num_classes}"
        )
    if _needs_memberships(cfg) and dataset.memberships is None:
        raise ConfigurationError(
            f"loss mode {cfg.loss}/{cfg.membership_source} needs cached "
            "membership maps; regenerate the dataset with clustering enabled"
        )

    if cfg.overfit:
        keep = min(cfg.batch_size, len(dataset))
        idx = np.arange(keep)
        train_set = val_set = Dataset(
            images=dataset.images[idx], labels=dataset.labels[idx],
            memberships=None if dataset.memberships is None else dataset.memberships[idx],
            seeds=[dataset.seeds[i] for i in idx], num_classes=dataset.num_classes)
    else:
        train_set, val_set = split_dataset(dataset, cfg.split_fraction, cfg.seed)

    init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    spec = cfg.model_spec()
    if cfg.model == "unetpp":
        model = UNetPP(spec, deep_supervision=cfg.deep_supervision, init_seed=init_ss)
    else:
        model = UNet(spec, init_seed=init_ss)
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    loss_cfg = cfg.loss_config()

    os.makedirs(cfg.out_dir, exist_ok=True)
    csv_path = os.path.join(cfg.out_dir, "metrics.csv")
    ckpt_path = os.path.join(cfg.out_dir, "best.ckpt")
    with open(os.path.join(cfg.out_dir, "config.txt"), "w", encoding="ascii") as fh:
        fh.write(cfg.to_text())

    records = []
    best_epoch = 0
    best_dc = -1.0
    stopped_early = False
    n_train = len(train_set)
    with open(csv_path, "w", encoding="ascii", newline="") as csv:
        csv.write(MetricsRecord.csv_header(cfg.num_classes) + "\n")
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = shuffle_rng.permutation(n_train)
            loss_total = 0.0
            for start in range(0, n_train, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb = Tensor(train_set.images[idx][:, None].astype(np.float32))
                yb = one_hot(train_set.labels[idx], cfg.num_classes)
                mb = None
                if _needs_memberships(cfg):
                    mb = train_set.memberships[idx]
                heads = (model.forward_heads(xb) if cfg.deep_supervision
                         else [model.forward(xb)])
                parts = [ops.segmentation_loss(h, yb, loss_cfg, fcm_memberships=mb)
                         for h in heads]
                loss = parts[0] if len(parts) == 1 else ops.scale(
                    reduce(ops.add, parts), 1.0 / len(parts))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericFailureError(
                        f"non-finite loss {value} at epoch {epoch}, batch {start // cfg.batch_size}"
                    )
                loss.backward()
                optimizer.step()
                optimizer.zero_grad()
                loss_total += value * len(idx)

            ac, dc_pc, iou_pc = _score_split(
                model, train_set.images, train_set.labels, cfg.num_classes)
            ac_v, dc_pc_v, iou_pc_v = _score_split(
                model, val_set.images, val_set.labels, cfg.num_classes)
            record = MetricsRecord(
                epoch=epoch, loss=loss_total / n_train,
                ac=ac, dc=float(dc_pc.mean()), iou=float(iou_pc.mean()),
                ac_val=ac_v, dc_val=float(dc_pc_v.mean()), iou_val=float(iou_pc_v.mean()),
                dc_val_per_class=[float(v) for v in dc_pc_v],
                iou_val_per_class=[float(v) for v in iou_pc_v],
            )
            records.append(record)
            csv.write(record.csv_row() + "\n")
            csv.flush()

            if record.dc_val > best_dc:
                best_dc = record.dc_val
                best_epoch = epoch
                save_checkpoint(ckpt_path, model.state_entries(),
                                meta={**model.meta(), "epoch": str(epoch)})
            elif not cfg.overfit and epoch - best_epoch >= cfg.early_stopping_patience:
                stopped_early = True
                break

    if render_figures:
        figures.training_curves(records, os.path.join(cfg.out_dir, "curves.png"))
    return TrainOutcome(
        records=records, best_epoch=best_epoch, best_record=records[best_epoch - 1],
        checkpoint_path=ckpt_path, csv_path=csv_path, stopped_early=stopped_early)


def evaluate_checkpoint(checkpoint_path, dataset: Dataset,
                        out_dir: Optional[str] = None, *, render_figures=True) -> EvalResult:
    """Score a saved model on a dataset; optionally write predicted maps."""
    model = load_model(checkpoint_path)
    if model.spec.num_classes != dataset.num_classes:
        raise ConfigurationError(
            f"checkpoint predicts {model.spec.num_classes} classes, dataset "
            f"has {dataset.num_classes}"
        )
    preds = predict_labels(model, dataset.images)
    ac = accuracy(preds, dataset.labels)
    dc_pc = dice_per_class(preds, dataset.labels, dataset.num_classes)
    iou_pc = iou_per_class(preds, dataset.labels, dataset.num_classes)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for i in range(preds.shape[0]):
            save_labels_pgm(os.path.join(out_dir, f"pred_{i:04d}.pgm"), preds[i])
        if render_figures:
            figures.segmentation_panel(
                dataset.images, dataset.labels, preds, dataset.num_classes,
                os.path.join(out_dir, "panel.png"))
    return EvalResult(ac=ac, dc=float(dc_pc.mean()), iou=float(iou_pc.mean()),
                      dc_per_class=dc_pc, iou_per_class=iou_pc, predictions=preds)


ABLATION_HEADER = ("seed,arm,entropy_weight,best_epoch,"
                   "AC,DC,IoU,AC_val,DC_val,IoU_val")


@dataclasses.dataclass
class AblationResult:
    rows: list  # (seed, arm, weight, best_epoch, MetricsRecord)
    wins: int
    seeds_compared: int
    mean_dc_difference: float
    best_weight_by_seed: dict
    csv_path: str


def _arm_settings(cfg: RunConfig, seed, arm, weight) -> RunConfig:
    label = arm if arm == "cce" else f"{arm}_{weight}"
    return dataclasses.replace(
        cfg,
        loss="cce" if arm == "cce" else FCCE,
        membership_source=PREDICTION,
        entropy_weight=0.0 if arm == "cce" else weight,
        seed=seed,
        out_dir=os.path.join(cfg.out_dir, f"seed{seed}_{label}"),
    )


def run_ablation(cfg: RunConfig, seeds, dataset: Dataset, *,
                 entropy_weights=(0.1, 0.5), threads=1,
                 render_figures=True) -> AblationResult:
    """Per-seed CCE vs FCCE comparison with shared init and data order.

    Writes ablation.csv (one row per trained arm, best-epoch metrics),
    summary.txt with win counts, and ablation.png.  If any arm fails, rows
    for completed arms are still written before the error propagates.
    """
    if len(seeds) < 3:
        raise ConfigurationError(f"need at least 3 seeds, got {len(seeds)}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    jobs = [(seed, "cce", 0.0) for seed in seeds]
    jobs += [(seed, "fcce", w) for seed in seeds for w in entropy_weights]

    outcomes = {}
    failure = None
    def run_job(job):
        seed, arm, weight = job
        arm_cfg = _arm_settings(cfg, seed, arm, weight)
        return train_run(arm_cfg, dataset, render_figures=False)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {job: pool.submit(run_job, job) for job in jobs}
            for job, future in futures.items():
                try:
                    outcomes[job] = future.result()
                except Exception as exc:  # preserve partial results below
                    if failure is None:
                        failure = exc
    else:
        for job in jobs:
            try:
                outcomes[job] = run_job(job)
            except Exception as exc:
                failure = exc
                break

    rows = []
    for job in jobs:
        if job in outcomes:
            seed, arm, weight = job
            outcome = outcomes[job]
            rows.append((seed, arm, weight, outcome.best_epoch, outcome.best_record))
    csv_path = os.path.join(cfg.out_dir, "ablation.csv")
    with open(csv_path, "w", encoding="ascii", newline="") as fh:
        fh.write(ABLATION_HEADER + "\n")
        for seed, arm, weight, best_epoch, rec in rows:
            fields = [str(seed), arm, repr(float(weight)), str(best_epoch)]
            fields += [repr(v) for v in (rec.ac, rec.dc, rec.iou,
                                         rec.ac_val, rec.dc_val, rec.iou_val)]
            fh.write(",".join(fields) + "\n")
    if failure is not None:
        raise failure

    wins = 0
    diffs = []
    best_weight = {}
    cce_dc, fcce_dc = [], []
    for seed in seeds:
        base = outcomes[(seed, "cce", 0.0)].best_record.dc_val
        candidates = [(outcomes[(seed, "fcce", w)].best_record.dc_val, w)
                      for w in entropy_weights]
        fuzzy, weight = max(candidates, key=lambda t: (t[0], -t[1]))
        best_weight[seed] = weight
        cce_dc.append(base)
        fcce_dc.append(fuzzy)
        diffs.append(fuzzy - base)
        if fuzzy >= base:
            wins += 1
    mean_diff = float(np.mean(diffs))

    summary = [
        f"seeds: {list(seeds)}",
        f"entropy weights tried: {list(entropy_weights)}",
        f"fcce wins (val DC >= cce): {wins}/{len(seeds)}",
        f"mean val DC difference (fcce - cce): {mean_diff!r}",
        f"best weight by seed: {best_weight}",
    ]
    with open(os.path.join(cfg.out_dir, "summary.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(summary) + "\n")
    if render_figures:
        figures.ablation_chart(list(seeds), cce_dc, fcce_dc,
                               os.path.join(cfg.out_dir, "ablation.png"))
    return AblationResult(rows=rows, wins=wins, seeds_compared=len(seeds),
                          mean_dc_difference=mean_diff,
                          best_weight_by_seed=best_weight, csv_path=csv_path)
