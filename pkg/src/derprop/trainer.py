"""Desk-scale semi-supervised training loop on synthetic scenes.

One run is a pure function of (config, scene seeds): the labeled split,
augmentation draws, and initialization all derive from the config seed,
so repeated runs write byte-identical artifacts.  Pseudo-labels come from
the live network's weak branch, optionally rectified through derivative
label propagation and blended along the epoch ramp; the momentum network
is evaluation-only.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

import json

from .config import DataConfig, TrainConfig, config_to_dict, run_config_to_json
from .core import LabelMap, softmax_columns
from .dpt import atomic_write_text, export_pgm, write_tensor
from .losses import LossInputs, labeled_target_stack, loss_gradients
from .model import MomentumState, ToyModel, momentum_update
from .propagation import BlendSchedule, blend_pseudo_labels, confidence_mask
from .scenes import SyntheticScene, augment, generate_synthetic_scene
from .seeding import derive_seed, make_rng

METRICS_HEADER = "epoch,loss_ce,loss_kl,loss_der,miou_train,miou_val"


def _raw_similarity_stack(values, order_budget, variant):
    """Per-order Gram matrices without the mirror pass (targets only;
    symmetric up to roundoff, which the loss treats as exact kinks)."""
    from .derivative import build_operator_matrix
    from .propagation import fast_gram

    out = [fast_gram(values)]
    for q in range(1, order_budget + 1):
        u = build_operator_matrix(q, values.shape[0], variant).matrix @ values
        out.append(fast_gram(u))
    return out


def confusion_counts(pred, gt, num_classes: int) -> np.ndarray:
    """(C, C) matrix of [gt, pred] pixel counts."""
    p = pred.flat() if isinstance(pred, LabelMap) else np.asarray(pred).reshape(-1)
    g = gt.flat() if isinstance(gt, LabelMap) else np.asarray(gt).reshape(-1)
    if p.size != g.size:
        raise ValueError(f"prediction has {p.size} pixels, ground truth {g.size}")
    idx = g.astype(np.int64) * num_classes + p.astype(np.int64)
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def miou_from_confusion(conf: np.ndarray):
    """Per-class IoU (NaN where a class is absent from both) and their mean."""
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    iou = np.full(conf.shape[0], np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    mean = float(np.nanmean(iou)) if present.any() else 0.0
    return iou, mean


def evaluate_miou(pred, gt, num_classes: int):
    """IoU per class and mean for one prediction/ground-truth pair."""
    return miou_from_confusion(confusion_counts(pred, gt, num_classes))


def split_labeled(n: int, fraction: float, seed: int):
    """Deterministic labeled/unlabeled index split (at least one labeled)."""
    perm = make_rng(seed, "split").permutation(n)
    n_labeled = max(1, int(round(fraction * n))) if fraction < 1.0 else n
    labeled = sorted(int(i) for i in perm[:n_labeled])
    unlabeled = sorted(int(i) for i in perm[n_labeled:])
    return labeled, unlabeled


def build_dataset(data_cfg: DataConfig):
    """Train and validation scene lists from a data config."""
    train = [
        generate_synthetic_scene(
            derive_seed(data_cfg.seed, "train-scene", i), data_cfg.height,
            data_cfg.width, data_cfg.classes, data_cfg.scene_params,
        )
        for i in range(data_cfg.num_train)
    ]
    val = [
        generate_synthetic_scene(
            derive_seed(data_cfg.seed, "val-scene", i), data_cfg.height,
            data_cfg.width, data_cfg.classes, data_cfg.scene_params,
        )
        for i in range(data_cfg.num_val)
    ]
    return train, val


@dataclass
class EpochMetrics:
    epoch: int
    loss_ce: float
    loss_kl: float
    loss_der: float
    miou_train: float
    miou_val: float

    def csv_row(self) -> str:
        return (
            f"{self.epoch},{self.loss_ce!r},{self.loss_kl!r},{self.loss_der!r},"
            f"{self.miou_train!r},{self.miou_val!r}"
        )


@dataclass
class TrainResult:
    metrics: list
    model: ToyModel
    momentum: MomentumState | None
    labeled_indices: list
    unlabeled_indices: list
    out_dir: str | None


def _check_probmap(p: np.ndarray, what: str) -> None:
    sums = p.sum(axis=0)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise RuntimeError(f"{what} is not column-stochastic (worst sum {sums.max()!r})")


def _teacher_maps(model: ToyModel, scene: SyntheticScene, cfg: TrainConfig,
                  sched: BlendSchedule):
    """Weak-branch pseudo-labels, features, and similarity targets.

    All outputs are constants for the student.  The per-order Gram
    matrices are computed once and shared between the rectification sum
    and the derivative-loss targets.  The returned targets are only
    valid for the unmixed image; after cut-paste mixing the caller must
    rebuild them from the mixed feature map (cross-image similarity
    entries are not paste-able).
    """
    v_w, l_w = model.features_logits(scene.image)
    p_w = softmax_columns(l_w)
    if not (cfg.dlp_enabled or cfg.der_loss_enabled):
        return p_w, v_w, None
    targets = None
    if cfg.der_loss_enabled:
        targets = _raw_similarity_stack(v_w, cfg.der_spec.order_budget,
                                        cfg.der_spec.variant)
    if cfg.dlp_enabled:
        # L (S + dS) factored through the feature rank; no MxM product.
        from .derivative import build_operator_matrix

        d1 = build_operator_matrix(1, v_w.shape[0], cfg.der_spec.variant).matrix @ v_w
        l_rect = (l_w @ np.ascontiguousarray(v_w.T)) @ v_w
        l_rect += (l_w @ np.ascontiguousarray(d1.T)) @ d1
        p_bar = blend_pseudo_labels(p_w, softmax_columns(l_rect), sched)
    else:
        p_bar = p_w
    return p_bar, v_w, targets


def _dataset_miou(model: ToyModel, scenes, num_classes: int) -> float:
    if not scenes:
        return float("nan")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for scene in scenes:
        _, logits = model.features_logits(scene.image)
        pred = logits.argmax(axis=0)
        conf += confusion_counts(pred, scene.labels, num_classes)
    return miou_from_confusion(conf)[1]


def _predicted_labels(model: ToyModel, scene: SyntheticScene) -> np.ndarray:
    _, logits = model.features_logits(scene.image)
    return logits.argmax(axis=0).reshape(scene.height, scene.width)


def train(config: TrainConfig, data, val_data=(), out_dir=None,
          data_cfg: DataConfig | None = None) -> TrainResult:
    """Run the loop and (optionally) write the run directory.

    Artifacts under ``out_dir``: config.json (resolved), metrics.csv,
    final_model.dpt, momentum_model.dpt (when momentum is enabled),
    maps/epNNN_imgKKK.pgm validation predictions, and curves.png.
    """
    if not data:
        raise ValueError("training needs at least one scene")
    c = config.model.num_classes
    for scene in list(data) + list(val_data):
        if scene.labels.num_classes != c:
            raise ValueError("scene class count does not match the model configuration")

    model = ToyModel(config.model, seed=config.seed)
    momentum = MomentumState(params=model.params.copy()) if config.momentum_enabled else None
    labeled_idx, unlabeled_idx = split_labeled(len(data), config.labeled_fraction, config.seed)
    bs = max(1, config.batch_size)
    velocity = np.zeros(model.num_params)
    metrics: list[EpochMetrics] = []

    maps_dir = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        maps_dir = os.path.join(out_dir, "maps")
        os.makedirs(maps_dir, exist_ok=True)

    aug_nomix = replace(config.augment, mix_prob=0.0)
    lab_ptr = 0

    for ep in range(config.epochs):
        sched = BlendSchedule(ep, config.epochs)
        sums = {"ce": 0.0, "kl": 0.0, "der": 0.0}
        n_images = 0
        if unlabeled_idx:
            order = [unlabeled_idx[i] for i in
                     make_rng(config.seed, "order", ep).permutation(len(unlabeled_idx))]
            n_steps = math.ceil(len(order) / bs)
        else:
            order = []
            n_steps = math.ceil(len(labeled_idx) / bs)

        for step in range(n_steps):
            grad = np.zeros(model.num_params)
            step_images = 0

            # Labeled half of the step: cycle through the labeled pool.
            for _ in range(min(bs, len(labeled_idx))):
                i = labeled_idx[lab_ptr % len(labeled_idx)]
                lab_ptr += 1
                scene, _ = augment(data[i], "weak",
                                   derive_seed(config.seed, "lab", ep, i), config.augment)
                st = model.forward(scene.image)
                targets = None
                if config.der_loss_enabled:
                    targets = labeled_target_stack(
                        scene.labels, config.der_spec.order_budget,
                        config.der_spec.labeled_high_order_target,
                    )
                inputs = LossInputs(
                    features=st.features,
                    logits=st.logits,
                    ce_target=scene.labels.one_hot(),
                    mask=np.ones(st.logits.shape[1]),
                    sim_targets=targets,
                    unlabeled=False,
                    rectified_ce=config.dlp_enabled,
                    der_reduction=config.der_reduction,
                )
                br = loss_gradients(inputs, config.der_spec, config.weights)
                if not np.isfinite(br.total):
                    raise RuntimeError(
                        f"non-finite loss at epoch {ep} (labeled image {i}): "
                        f"ce={br.ce!r} kl={br.kl!r} der={br.der!r}"
                    )
                grad += model.backward(st, br.grad_features, br.grad_logits)
                sums["ce"] += br.ce
                sums["kl"] += br.kl
                sums["der"] += br.der
                step_images += 1

            # Unlabeled half of the step.
            for pos in range(step * bs, min((step + 1) * bs, len(order))):
                i = order[pos]
                aseed = derive_seed(config.seed, "unlab", ep, i)
                weak_scene, _ = augment(data[i], "weak", aseed, config.augment)
                partner_i = order[(pos + 1) % len(order)]
                mix_seed = derive_seed(config.seed, "mixsrc", ep, partner_i)
                partner_scene = None
                if config.augment.mix_prob > 0 and partner_i != i:
                    partner_scene, _ = augment(data[partner_i], "strong", mix_seed, aug_nomix)
                strong_scene, trace = augment(data[i], "strong", aseed, config.augment,
                                              partner=partner_scene)

                p_bar, v_w, targets = _teacher_maps(model, weak_scene, config, sched)
                if trace["mix_rect"] is not None:
                    # The pasted strong content came from the partner's view;
                    # paste the partner's teacher maps over the same pixels
                    # and rebuild the similarity targets from the mix.
                    partner_weak, _ = augment(data[partner_i], "weak", mix_seed, aug_nomix)
                    p_bar_j, v_w_j, _ = _teacher_maps(model, partner_weak, config, sched)
                    y0, x0, rh, rw = trace["mix_rect"]
                    w = weak_scene.width
                    cols = (np.arange(y0, y0 + rh)[:, None] * w
                            + np.arange(x0, x0 + rw)[None, :]).ravel()
                    p_bar = p_bar.copy()
                    v_w = v_w.copy()
                    p_bar[:, cols] = p_bar_j[:, cols]
                    v_w[:, cols] = v_w_j[:, cols]
                    if config.der_loss_enabled:
                        targets = _raw_similarity_stack(v_w, config.der_spec.order_budget,
                                                        config.der_spec.variant)
                _check_probmap(p_bar, f"pseudo-label map at epoch {ep}")
                mask = confidence_mask(p_bar, config.tau)

                st = model.forward(strong_scene.image)
                inputs = LossInputs(
                    features=st.features,
                    logits=st.logits,
                    ce_target=p_bar,
                    mask=mask,
                    sim_targets=targets,
                    unlabeled=True,
                    rectified_ce=config.dlp_enabled,
                    der_reduction=config.der_reduction,
                )
                br = loss_gradients(inputs, config.der_spec, config.weights)
                if not np.isfinite(br.total):
                    raise RuntimeError(
                        f"non-finite loss at epoch {ep} (unlabeled image {i}): "
                        f"ce={br.ce!r} kl={br.kl!r} der={br.der!r}"
                    )
                grad += model.backward(st, br.grad_features, br.grad_logits)
                sums["ce"] += br.ce
                sums["kl"] += br.kl
                sums["der"] += br.der
                step_images += 1

            grad /= max(step_images, 1)
            if config.optimizer_momentum > 0:
                velocity = config.optimizer_momentum * velocity + grad
                update = velocity
            else:
                update = grad
            model.params -= config.learning_rate * update
            n_images += step_images

        if config.momentum_enabled:
            momentum = momentum_update(momentum, model.params)
            eval_model = model.with_params(momentum.params)
        else:
            eval_model = model

        row = EpochMetrics(
            epoch=ep,
            loss_ce=sums["ce"] / max(n_images, 1),
            loss_kl=sums["kl"] / max(n_images, 1),
            loss_der=sums["der"] / max(n_images, 1),
            miou_train=_dataset_miou(eval_model, list(data), c),
            miou_val=_dataset_miou(eval_model, list(val_data), c),
        )
        metrics.append(row)

        if maps_dir is not None and val_data:
            last = ep == config.epochs - 1
            due = config.maps_every > 0 and ep % config.maps_every == 0
            if last or due:
                for k, scene in enumerate(val_data):
                    export_pgm(_predicted_labels(eval_model, scene), c,
                               os.path.join(maps_dir, f"ep{ep:03d}_img{k:03d}.pgm"))

    if out_dir is not None:
        lines = [METRICS_HEADER] + [m.csv_row() for m in metrics]
        atomic_write_text(os.path.join(out_dir, "metrics.csv"), "\n".join(lines) + "\n")
        write_tensor(os.path.join(out_dir, "final_model.dpt"), model.params)
        if momentum is not None:
            write_tensor(os.path.join(out_dir, "momentum_model.dpt"), momentum.params)
        if data_cfg is not None:
            resolved = run_config_to_json(config, data_cfg)
        else:
            resolved = json.dumps({"train": config_to_dict(config)}, indent=2, sort_keys=True)
        atomic_write_text(os.path.join(out_dir, "config.json"), resolved + "\n")
        from .plots import save_training_curves

        save_training_curves(metrics, os.path.join(out_dir, "curves.png"))

    return TrainResult(
        metrics=metrics,
        model=model,
        momentum=momentum,
        labeled_indices=labeled_idx,
        unlabeled_indices=unlabeled_idx,
        out_dir=out_dir,
    )
