"""Faithfulness evaluation: maximal patch masking and the pointing game.

Masking: classify, explain, find the maximal point of the map, replace a
p x p patch around it with the dataset means, re-classify, and record the
drop in the target probability. The `random` method replaces the explanation
with a uniformly drawn center.

Pointing: threshold the map so that at least a fraction E of its positive
pixels survive, then count surviving pixels inside (hits) and outside
(misses) the target's bounding box; accuracy = hits / (hits + misses). The
`random` method scores a uniform-noise map instead of an explanation.

Both dataset drivers derive all randomness from one run seed via per-image
substreams, so results do not depend on worker count or scheduling order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, RelpropError, ShapeError
from .model import ForwardTrace, NetworkModel, forward, predict_topk
from .relevance import METHODS, explain

EVAL_METHODS = METHODS + ("random",)
DEFAULT_PATCH_SIZES = (1, 3, 5, 7, 9)
DEFAULT_ENERGIES = tuple(round(0.1 * i, 1) for i in range(1, 11))
TARGET_MODES = ("ground_truth", "second_probable")


class NoPositiveRelevanceError(RelpropError):
    """A relevance map holds no positive entries, so no threshold exists."""


def maximal_point(values: np.ndarray) -> tuple[int, int]:
    """(x, y) of the largest map entry; ties go to the lowest row-major index."""
    if values.ndim != 2 or values.size == 0:
        raise ShapeError(f"maximal_point: need a non-empty 2-D map, got {values.shape}")
    flat = int(np.argmax(values))
    return flat % values.shape[1], flat // values.shape[1]


def mask_patch(
    image: np.ndarray, center: tuple[int, int], patch_size: int, fill: np.ndarray
) -> np.ndarray:
    """Copy of image with a patch_size square around center set to fill per channel.

    patch_size must be odd; the patch is clipped at the image border.
    """
    if image.ndim != 3:
        raise ShapeError(f"mask_patch: image must be [H,W,C], got {image.shape}")
    if patch_size < 1 or patch_size % 2 == 0:
        raise ShapeError(f"mask_patch: patch size {patch_size} must be odd and positive")
    h, w, c = image.shape
    if fill.shape != (c,):
        raise ShapeError(f"mask_patch: fill has shape {fill.shape}, expected ({c},)")
    x, y = center
    r = patch_size // 2
    y0, y1 = max(0, y - r), min(h, y + r + 1)
    x0, x1 = max(0, x - r), min(w, x + r + 1)
    out = image.copy()
    out[y0:y1, x0:x1, :] = fill
    return out


@dataclass(frozen=True)
class MaskingResult:
    """One (method, patch size) masking measurement for one image."""

    method: str
    patch_size: int
    target: int
    prob_before: float
    prob_after: float
    drop: float
    point: tuple[int, int]


def _resolve_target(trace: ForwardTrace, target_mode: str, label: int | None) -> int:
    if target_mode == "ground_truth":
        if label is None:
            raise DataError("ground_truth target mode needs a label")
        n = trace.probabilities.shape[0]
        if not 0 <= label < n:
            raise DataError(f"label {label} outside 0..{n - 1}")
        return label
    if target_mode == "second_probable":
        return predict_topk(trace, 2)[1][0]
    raise DataError(f"unknown target mode {target_mode!r}")


def patch_masking_eval(
    model: NetworkModel,
    image: np.ndarray,
    *,
    target_mode: str = "ground_truth",
    label: int | None = None,
    methods: tuple[str, ...] = ("lrp", "clrp", "sglrp", "random"),
    patch_sizes: tuple[int, ...] = DEFAULT_PATCH_SIZES,
    rng: np.random.Generator | None = None,
) -> list[MaskingResult]:
    """Run the masking protocol for one raw-space image (means not yet subtracted)."""
    for m in methods:
        if m not in EVAL_METHODS:
            raise DataError(f"unknown method {m!r}; expected subset of {EVAL_METHODS}")
    if "random" in methods and rng is None:
        raise DataError("the random baseline needs a seeded generator")
    trace = forward(model, image, preprocessed=False)
    target = _resolve_target(trace, target_mode, label)
    prob_before = float(trace.probabilities[target])
    h, w, _ = image.shape
    random_center = None
    if "random" in methods:
        random_center = (int(rng.integers(0, w)), int(rng.integers(0, h)))
    fill = model.preprocessing.means
    results = []
    for method in methods:
        if method == "random":
            point = random_center
        else:
            point = maximal_point(explain(model, trace, target, method).values)
        for p in patch_sizes:
            masked = mask_patch(image, point, p, fill)
            after = float(forward(model, masked, preprocessed=False).probabilities[target])
            results.append(
                MaskingResult(
                    method=method,
                    patch_size=p,
                    target=target,
                    prob_before=prob_before,
                    prob_after=after,
                    drop=prob_before - after,
                    point=point,
                )
            )
    return results


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel-coordinate box for one object of one class."""

    class_index: int
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.class_index < 0:
            raise DataError(f"box class {self.class_index} negative")
        if not (0 <= self.x_min <= self.x_max and 0 <= self.y_min <= self.y_max):
            raise DataError(
                f"degenerate box ({self.x_min},{self.y_min})..({self.x_max},{self.y_max})"
            )

    def clip(self, width: int, height: int) -> "BoundingBox":
        """Clip to image extent; a box fully outside is a data error."""
        if self.x_min >= width or self.y_min >= height:
            raise DataError(f"box starts outside a {width}x{height} image")
        return replace(
            self, x_max=min(self.x_max, width - 1), y_max=min(self.y_max, height - 1)
        )

    def mask(self, height: int, width: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        m[self.y_min : self.y_max + 1, self.x_min : self.x_max + 1] = True
        return m


def energy_threshold(values: np.ndarray, energy: float) -> float:
    """Smallest threshold keeping at least `energy` of the positive pixels.

    With K positive entries, the threshold is the k-th largest positive value
    for k = max(1, floor(energy * K)), so energy = 1.0 admits every positive
    pixel and never any zero.
    """
    if not 0.0 < energy <= 1.0:
        raise ShapeError(f"energy {energy} outside (0, 1]")
    positives = values[values > 0]
    k_total = positives.size
    if k_total == 0:
        raise NoPositiveRelevanceError("map has no positive entries")
    k = max(1, math.floor(energy * k_total))
    return float(np.partition(positives, k_total - k)[k_total - k])


@dataclass(frozen=True)
class PointingResult:
    """Hit/miss counts for one energy level on one map."""

    energy: float
    tau: float
    hits: int
    misses: int
    accuracy: float


def pointing_game(
    values: np.ndarray, box: BoundingBox, energies: tuple[float, ...] = DEFAULT_ENERGIES
) -> list[PointingResult]:
    """Score one map against one box at each energy level."""
    if values.ndim != 2:
        raise ShapeError(f"pointing_game: map must be 2-D, got {values.shape}")
    h, w = values.shape
    if box.x_max >= w or box.y_max >= h:
        raise ShapeError(f"box ..({box.x_max},{box.y_max}) exceeds {w}x{h} map")
    inside = box.mask(h, w)
    results = []
    for energy in energies:
        tau = energy_threshold(values, energy)
        above = values >= tau
        hits = int(np.count_nonzero(above & inside))
        total = int(np.count_nonzero(above))
        misses = total - hits
        results.append(
            PointingResult(
                energy=energy, tau=tau, hits=hits, misses=misses, accuracy=hits / total
            )
        )
    return results


def random_relevance_map(
    height: int, width: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform(0,1) noise map, the chance-level pointing baseline."""
    return rng.random((height, width))


@dataclass(frozen=True)
class MaskSample:
    image_id: str
    image: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class PointSample:
    image_id: str
    image: np.ndarray
    box: BoundingBox


@dataclass(frozen=True)
class PointingRow:
    """One (image, method, energy) pointing record; result None means skipped."""

    image_id: str
    method: str
    energy: float
    result: PointingResult | None


def _spawn_rngs(seed: int | None, n: int) -> list[np.random.Generator | None]:
    if seed is None:
        return [None] * n
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _map_ordered(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_masking(
    model: NetworkModel,
    samples: list[MaskSample],
    *,
    target_mode: str = "ground_truth",
    methods: tuple[str, ...] = ("lrp", "clrp", "sglrp", "random"),
    patch_sizes: tuple[int, ...] = DEFAULT_PATCH_SIZES,
    seed: int | None = None,
    workers: int = 1,
) -> list[tuple[str, MaskingResult]]:
    """Masking protocol over a dataset; rows come back in sample order."""
    if "random" in methods and seed is None:
        raise DataError("runs with the random baseline need a seed")
    rngs = _spawn_rngs(seed, len(samples))

    def one(pair):
        sample, rng = pair
        return [
            (sample.image_id, r)
            for r in patch_masking_eval(
                model,
                sample.image,
                target_mode=target_mode,
                label=sample.label,
                methods=methods,
                patch_sizes=patch_sizes,
                rng=rng,
            )
        ]
    nested = _map_ordered(one, list(zip(samples, rngs)), workers)
    return [row for group in nested for row in group]


def run_pointing(
    model: NetworkModel,
    samples: list[PointSample],
    *,
    methods: tuple[str, ...] = ("lrp", "clrp", "sglrp", "random"),
    energies: tuple[float, ...] = DEFAULT_ENERGIES,
    seed: int | None = None,
    workers: int = 1,
) -> list[PointingRow]:
    """Pointing game over a dataset; each box's class is the explanation target."""
    for m in methods:
        if m not in EVAL_METHODS:
            raise DataError(f"unknown method {m!r}; expected subset of {EVAL_METHODS}")
    if "random" in methods and seed is None:
        raise DataError("runs with the random baseline need a seed")
    rngs = _spawn_rngs(seed, len(samples))

    def one(pair):
        sample, rng = pair
        h, w, _ = sample.image.shape
        box = sample.box.clip(w, h)
        if box.class_index >= model.num_classes:
            raise DataError(
                f"{sample.image_id}: box class {box.class_index}"
                f" outside model's {model.num_classes} classes"
            )
        trace = forward(model, sample.image, preprocessed=False)
        noise = random_relevance_map(h, w, rng) if "random" in methods else None
        rows = []
        for method in methods:
            values = noise if method == "random" else explain(
                model, trace, box.class_index, method
            ).values
            try:
                scored = pointing_game(values, box, energies)
            except NoPositiveRelevanceError:
                rows.extend(
                    PointingRow(sample.image_id, method, e, None) for e in energies
                )
                continue
            rows.extend(
                PointingRow(sample.image_id, method, r.energy, r) for r in scored
            )
        return rows

    nested = _map_ordered(one, list(zip(samples, rngs)), workers)
    return [row for group in nested for row in group]


def read_bounding_boxes(path: str | Path) -> list[tuple[str, BoundingBox]]:
    """Parse `image_id class x_min y_min x_max y_max` lines, preserving order."""
    path = Path(path)
    boxes = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
        try:
            numbers = [int(v) for v in parts[1:]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-integer field") from exc
        try:
            boxes.append((parts[0], BoundingBox(*numbers)))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return boxes


def _fmt(v: float) -> str:
    return repr(float(v))


def aggregate_masking(rows: list[tuple[str, MaskingResult]]) -> list[dict]:
    """Mean before/after/drop per (method, patch size), in first-seen order."""
    groups: dict[tuple[str, int], list[MaskingResult]] = {}
    for _, r in rows:
        groups.setdefault((r.method, r.patch_size), []).append(r)
    out = []
    for (method, p), rs in groups.items():
        out.append(
            {
                "method": method,
                "patch_size": p,
                "n": len(rs),
                "mean_prob_before": float(np.mean([r.prob_before for r in rs])),
                "mean_prob_after": float(np.mean([r.prob_after for r in rs])),
                "mean_drop": float(np.mean([r.drop for r in rs])),
            }
        )
    return out


def aggregate_pointing(rows: list[PointingRow]) -> list[dict]:
    """Mean accuracy per (method, energy) over non-skipped rows, in first-seen order."""
    groups: dict[tuple[str, float], list[PointingResult]] = {}
    for row in rows:
        bucket = groups.setdefault((row.method, row.energy), [])
        if row.result is not None:
            bucket.append(row.result)
    out = []
    for (method, energy), rs in groups.items():
        out.append(
            {
                "method": method,
                "energy": energy,
                "n": len(rs),
                "mean_accuracy": float(np.mean([r.accuracy for r in rs])) if rs else "",
            }
        )
    return out


def write_masking_reports(
    rows: list[tuple[str, MaskingResult]], out_dir: str | Path
) -> tuple[Path, Path]:
    """Write per-image and aggregate masking CSVs; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_image = out_dir / "masking.csv"
    with per_image.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "image_id",
                "method",
                "patch_size",
                "target",
                "prob_before",
                "prob_after",
                "drop",
                "point_x",
                "point_y",
            ]
        )
        for image_id, r in rows:
            writer.writerow(
                [
                    image_id,
                    r.method,
                    r.patch_size,
                    r.target,
                    _fmt(r.prob_before),
                    _fmt(r.prob_after),
                    _fmt(r.drop),
                    r.point[0],
                    r.point[1],
                ]
            )
    aggregate = out_dir / "masking_aggregate.csv"
    with aggregate.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "patch_size", "n", "mean_prob_before", "mean_prob_after", "mean_drop"]
        )
        for g in aggregate_masking(rows):
            writer.writerow(
                [
                    g["method"],
                    g["patch_size"],
                    g["n"],
                    _fmt(g["mean_prob_before"]),
                    _fmt(g["mean_prob_after"]),
                    _fmt(g["mean_drop"]),
                ]
            )
    return per_image, aggregate


def write_pointing_reports(
    rows: list[PointingRow], out_dir: str | Path
) -> tuple[Path, Path]:
    """Write per-image and aggregate pointing CSVs; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_image = out_dir / "pointing.csv"
    with per_image.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_id", "method", "energy", "tau", "hits", "misses", "accuracy", "status"]
        )
        for row in rows:
            if row.result is None:
                writer.writerow(
                    [row.image_id, row.method, _fmt(row.energy), "", "", "", "", "skipped"]
                )
            else:
                r = row.result
                writer.writerow(
                    [
                        row.image_id,
                        row.method,
                        _fmt(r.energy),
                        _fmt(r.tau),
                        r.hits,
                        r.misses,
                        _fmt(r.accuracy),
                        "ok",
                    ]
                )
    aggregate = out_dir / "pointing_aggregate.csv"
    with aggregate.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "energy", "n", "mean_accuracy"])
        for g in aggregate_pointing(rows):
            mean = g["mean_accuracy"]
            writer.writerow(
                [g["method"], _fmt(g["energy"]), g["n"], _fmt(mean) if mean != "" else ""]
            )
    return per_image, aggregate
