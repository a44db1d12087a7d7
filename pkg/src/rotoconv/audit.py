"""Equivariance audits: error-vs-rotation sweeps and activation robustness.

Two independent views of the same question. The sweep rotates the test set
and watches classification error; the robustness suite feeds an image and its
rotated copy, rectifies the second set of activations back (spatial rotation
plus orientation roll for group maps), and measures a normalized squared
error per layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledImageSet
from .groups import RotationOperators, act_on_group_feature_map
from .network import Model
from .training import evaluate, rotate_images


@dataclass
class SweepReport:
    rows: list = field(default_factory=list)  # dicts: variant, angle_deg, error


@dataclass
class RobustnessReport:
    rows: list = field(default_factory=list)  # dicts: variant, layer_index, layer_name, L_equivariance
    per_angle: list = field(default_factory=list)  # dicts adding angle_index


def rotation_sweep(model: Model, testset: LabeledImageSet, angles_deg,
                   variant: str = "model", method: str = "gaussian") -> SweepReport:
    """Classification error after rotating every test image by each angle."""
    report = SweepReport()
    for angle in angles_deg:
        rotated = rotate_images(testset.images, float(angle), method)
        rotated_set = LabeledImageSet(rotated, testset.labels, testset.split,
                                      testset.n_classes)
        result = evaluate(model, rotated_set)
        report.rows.append({"variant": variant, "angle_deg": float(angle),
                            "error": result.error})
    return report


def _crop_interior(arr: np.ndarray, fraction: float) -> np.ndarray:
    h, w = arr.shape[-2:]
    my, mx = int(h * fraction), int(w * fraction)
    if h - 2 * my < 1 or w - 2 * mx < 1:
        return arr
    return arr[..., my:h - my, mx:w - mx]


def activation_pair_error(a_r: np.ndarray, a_s: np.ndarray, r: int, s: int,
                          kind: str = "group", order: int = 8,
                          method: str = "gaussian", crop_fraction: float = 0.25,
                          ops: RotationOperators | None = None) -> float:
    """Normalized squared L2 error between activations after rectification.

    ``a_s`` is transformed by rotation index (r - s) mod order before the
    comparison: spatial rotation plus slice roll for ``kind="group"``, spatial
    rotation alone for ``kind="spatial"``, identity for ``kind="vector"``.
    Channels with zero norm contribute zero. Comparison happens on the
    cropped interior to keep boundary interpolation out of the measurement.
    """
    if a_r.shape != a_s.shape:
        raise ValueError(f"activation shapes differ: {a_r.shape} vs {a_s.shape}")
    delta = (r - s) % order
    if kind == "vector":
        rect = a_s
    else:
        if ops is None:
            ops = RotationOperators(a_s.shape[-1], order, method)
        if kind == "group":
            rect = act_on_group_feature_map(a_s, delta, ops)
        elif kind == "spatial":
            rect = ops.apply(a_s, delta)
        else:
            raise ValueError(f"unknown activation kind {kind!r}")
    if kind != "vector":
        ref = _crop_interior(a_r, crop_fraction)
        rect = _crop_interior(rect, crop_fraction)
    else:
        ref = a_r
    channels = ref.shape[0]
    total = 0.0
    for k in range(channels):
        diff = ref[k] - rect[k]
        norm_ref = float(np.sqrt((ref[k].astype(np.float64) ** 2).sum()))
        norm_rect = float(np.sqrt((rect[k].astype(np.float64) ** 2).sum()))
        if norm_ref == 0.0 or norm_rect == 0.0:
            continue
        total += float((diff.astype(np.float64) ** 2).sum()) / (norm_ref * norm_rect)
    return total


def robustness_suite(model: Model, images, n_images: int,
                     angle_indices=None, order: int = 8,
                     variant: str = "model", method: str = "gaussian",
                     crop_fraction: float = 0.25) -> RobustnessReport:
    """Per-layer mean of the pair error over images and rotation indices.

    Reference activations always come from the unrotated image; the rotated
    copies are produced by the index-``R`` operator at the input resolution.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    arr = images.images if isinstance(images, LabeledImageSet) else np.asarray(images)
    arr = arr[:n_images]
    if angle_indices is None:
        angle_indices = list(range(order))
    input_ops = RotationOperators(arr.shape[-1], order, method)
    layer_ops: dict = {}
    layer_names = None
    sums = None
    per_angle_sums = None
    for image in arr:
        base = model.forward_with_activations(image[None])
        if layer_names is None:
            layer_names = [(name, kind) for name, kind, _ in base]
            sums = np.zeros(len(base))
            per_angle_sums = np.zeros((len(base), len(angle_indices)))
        for a_i, ridx in enumerate(angle_indices):
            rotated = input_ops.apply(image, int(ridx))
            acts = model.forward_with_activations(rotated[None])
            for l_i, ((_, kind, a0), (_, _, ar)) in enumerate(zip(base, acts)):
                a0s, ars = a0[0], ar[0]
                ops = None
                if kind != "vector":
                    size = a0s.shape[-1]
                    if size not in layer_ops:
                        layer_ops[size] = RotationOperators(size, order, method)
                    ops = layer_ops[size]
                value = activation_pair_error(a0s, ars, 0, int(ridx), kind, order,
                                              method, crop_fraction, ops)
                sums[l_i] += value
                per_angle_sums[l_i, a_i] += value
    n = len(arr)
    n_angles = len(angle_indices)
    report = RobustnessReport()
    for l_i, (name, kind) in enumerate(layer_names):
        report.rows.append({"variant": variant, "layer_index": l_i,
                            "layer_name": name,
                            "L_equivariance": sums[l_i] / (n * n_angles)})
        for a_i, ridx in enumerate(angle_indices):
            report.per_angle.append({"variant": variant, "layer_index": l_i,
                                     "layer_name": name, "angle_index": int(ridx),
                                     "L_equivariance": per_angle_sums[l_i, a_i] / n})
    return report


# -- CSV emission -----------------------------------------------------------------

_SWEEP_FIELDS = ["variant", "angle_deg", "error"]
_ROBUST_FIELDS = ["variant", "layer_index", "layer_name", "L_equivariance"]


def emit_reports(report, path) -> None:
    """Write a report as CSV with a stable column order."""
    if isinstance(report, SweepReport):
        _write_csv(path, _SWEEP_FIELDS, report.rows)
    elif isinstance(report, RobustnessReport):
        _write_csv(path, _ROBUST_FIELDS, report.rows)
    else:
        raise TypeError(f"cannot emit {type(report).__name__}")


def _write_csv(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def read_csv_rows(path) -> list:
    with open(path, "r", newline="") as fh:
        return list(csv.DictReader(fh))
