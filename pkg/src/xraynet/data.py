"""Dataset ingestion, deterministic stratified splitting, preprocessing.

A dataset on disk is a directory with one subdirectory per class label
(NORMAL, PNEUMONIA) holding PNG/PGM/PPM images. A manifest is the flat
CSV record of that corpus: one row per image with its assigned split.
All pixel data moves through [0, 1] float32 CHW tensors.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from itertools import combinations
from math import floor
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .ioutil import write_text_atomic
from .tensor import Tensor

LABELS = ("NORMAL", "PNEUMONIA")
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABELS)}
SPLITS = ("train", "val", "test")
_IMAGE_EXTENSIONS = (".png", ".pgm", ".ppm")
_LUMA = (0.299, 0.587, 0.114)  # Rec. 601 weights


class DataError(ValueError):
    """Corpus, manifest, or pixel-format problem."""


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    split: str = ""  # empty until a split is assigned


@dataclass
class DatasetManifest:
    rows: list[ManifestRow] = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.label not in LABELS:
                raise DataError(f"bad label {r.label!r} for {r.path!r}; expected one of {list(LABELS)}")
            if r.split not in ("",) + SPLITS:
                raise DataError(f"bad split {r.split!r} for {r.path!r}")
            if r.path in seen:
                raise DataError(f"manifest contains duplicate path {r.path!r}")
            seen.add(r.path)

    def rows_for(self, split: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.split == split]

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for r in self.rows:
            if r.split in out:
                out[r.split] += 1
        return out

    def __len__(self) -> int:
        return len(self.rows)


# ---------------------------------------------------------------------------
# corpus scanning


def load_dataset(root: str) -> DatasetManifest:
    """Scan a class-per-subdirectory tree into an unsplit manifest.

    Image files that fail to decode are skipped and counted on the
    returned manifest. Rows come back sorted by path.
    """
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} is not a directory")
    subdirs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    unknown = [d for d in subdirs if d not in LABELS]
    if unknown:
        raise DataError(f"unknown class directories {unknown} under {root!r}; expected {list(LABELS)}")
    if not subdirs:
        raise DataError(f"no class directories under {root!r}; expected {list(LABELS)}")
    rows: list[ManifestRow] = []
    skipped = 0
    for label in subdirs:
        ldir = os.path.join(root, label)
        for fname in sorted(os.listdir(ldir)):
            path = os.path.join(ldir, fname)
            if not os.path.isfile(path) or os.path.splitext(fname)[1].lower() not in _IMAGE_EXTENSIONS:
                continue
            try:
                with Image.open(path) as im:
                    im.verify()
            except (OSError, UnidentifiedImageError, ValueError, SyntaxError):
                skipped += 1
                continue
            rows.append(ManifestRow(path=path, label=label))
    rows.sort(key=lambda r: r.path)
    if not rows:
        raise DataError(f"no readable images under {root!r}")
    return DatasetManifest(rows=rows, skipped=skipped)


# ---------------------------------------------------------------------------
# stratified splitting


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    raw = [n * r for r in ratios]
    base = [floor(v) for v in raw]
    short = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def _bump_assignment(
    row_shorts: list[int], col_shorts: list[int], rems: list[list[float]]
) -> list[tuple[int, ...]] | None:
    # Distribute each label's leftover samples to distinct splits so that
    # column totals land exactly; favors the largest fractional remainders.
    def rec(i: int, col_left: list[int]) -> list[tuple[int, ...]] | None:
        if i == len(row_shorts):
            return [] if all(c == 0 for c in col_left) else None
        cands = list(combinations(range(len(col_left)), row_shorts[i]))
        cands.sort(key=lambda cols: (-sum(rems[i][c] for c in cols), cols))
        for cols in cands:
            if all(col_left[c] >= 1 for c in cols):
                nxt = list(col_left)
                for c in cols:
                    nxt[c] -= 1
                rest = rec(i + 1, nxt)
                if rest is not None:
                    return [cols] + rest
        return None

    return rec(0, list(col_shorts))


def split(manifest: DatasetManifest, ratios: Sequence[float] = (0.88, 0.08, 0.04), seed: int = 0) -> DatasetManifest:
    """Assign train/val/test stratified by label, deterministic in seed.

    Global split sizes are the largest-remainder rounding of
    len(rows) * ratios; within that, every label lands within one sample
    of its own proportional share per split.
    """
    if len(ratios) != len(SPLITS):
        raise DataError(f"need {len(SPLITS)} ratios, got {len(ratios)}")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must be positive and sum to 1, got {tuple(ratios)}")
    if not manifest.rows:
        raise DataError("cannot split an empty manifest")
    paths = [r.path for r in manifest.rows]
    if len(set(paths)) != len(paths):
        raise DataError("manifest contains duplicate paths")

    rows = sorted(manifest.rows, key=lambda r: r.path)
    labels = sorted({r.label for r in rows})
    by_label = {l: [i for i, r in enumerate(rows) if r.label == l] for l in labels}
    totals = _largest_remainder(len(rows), ratios)

    floors = {l: [floor(len(by_label[l]) * r) for r in ratios] for l in labels}
    rems = [[len(by_label[l]) * r - floors[l][s] for s, r in enumerate(ratios)] for l in labels]
    row_shorts = [len(by_label[l]) - sum(floors[l]) for l in labels]
    col_shorts = [totals[s] - sum(floors[l][s] for l in labels) for s in range(len(SPLITS))]

    assign = _bump_assignment(row_shorts, col_shorts, rems)
    counts = {l: list(floors[l]) for l in labels}
    if assign is not None:
        for li, cols in enumerate(assign):
            for c in cols:
                counts[labels[li]][c] += 1
    else:
        # No one-per-split completion exists; stack bumps greedily. Totals
        # stay exact, the per-label bound may stretch by one.
        col_left = list(col_shorts)
        for li, l in enumerate(labels):
            for _ in range(row_shorts[li]):
                c = max(range(len(col_left)), key=lambda s: (col_left[s], rems[li][s], -s))
                counts[l][c] += 1
                col_left[c] -= 1

    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    assigned: dict[int, str] = {}
    for l in labels:
        idx = np.array(by_label[l])
        perm = idx[rng.permutation(len(idx))]
        start = 0
        for s, name in enumerate(SPLITS):
            take = counts[l][s]
            for i in perm[start : start + take]:
                assigned[int(i)] = name
            start += take
    out = [replace(r, split=assigned[i]) for i, r in enumerate(rows)]
    return DatasetManifest(rows=out, skipped=manifest.skipped)


# ---------------------------------------------------------------------------
# manifest CSV


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    """Write `path,label,split` rows (UTF-8, LF); all rows must be assigned."""
    for r in manifest.rows:
        if r.split not in SPLITS:
            raise DataError(f"row {r.path!r} has no split assignment")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "label", "split"])
    for r in manifest.rows:
        w.writerow([r.path, r.label, r.split])
    write_text_atomic(path, buf.getvalue())


def read_manifest(path: str) -> DatasetManifest:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise DataError(f"cannot read manifest {path!r}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"manifest {path!r} is empty") from None
        if header != ["path", "label", "split"]:
            raise DataError(f"manifest {path!r} has header {header}, expected ['path', 'label', 'split']")
        rows = []
        for ln, rec in enumerate(reader, start=2):
            if len(rec) != 3 or not rec[0]:
                raise DataError(f"manifest {path!r} line {ln}: malformed row {rec}")
            if rec[1] not in LABELS:
                raise DataError(f"manifest {path!r} line {ln}: bad label {rec[1]!r}")
            if rec[2] not in SPLITS:
                raise DataError(f"manifest {path!r} line {ln}: bad split {rec[2]!r}")
            rows.append(ManifestRow(path=rec[0], label=rec[1], split=rec[2]))
    return DatasetManifest(rows=rows)


# ---------------------------------------------------------------------------
# pixel IO


def load_image(path: str) -> Tensor:
    """Decode an image file to CHW float32 in [0, 1] (C = 1 or 3)."""
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.float32)[None] / 255.0
            elif im.mode in ("I", "I;16"):
                arr = np.asarray(im, dtype=np.float32)[None] / 65535.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1) / 255.0
    except (OSError, UnidentifiedImageError, ValueError, SyntaxError) as e:
        raise DataError(f"cannot decode image {path!r}: {e}") from e
    return Tensor._wrap(np.ascontiguousarray(arr, dtype=np.float32))


def save_image_png(path: str, image: Tensor | np.ndarray) -> None:
    """Encode a CHW [0, 1] array (1 or 3 channels) as 8-bit PNG."""
    arr = image.numpy() if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DataError(f"expected CHW with 1 or 3 channels, got shape {arr.shape}")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if u8.shape[0] == 1:
        Image.fromarray(u8[0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# channel and geometry transforms


def to_grayscale(image: Tensor) -> Tensor:
    """3-channel -> 1-channel by Rec. 601 luma; 1-channel passes through."""
    arr = image.numpy()
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DataError(f"expected CHW with 1 or 3 channels, got shape {arr.shape}")
    if arr.shape[0] == 1:
        return image
    gray = np.tensordot(np.asarray(_LUMA, dtype=arr.dtype), arr, axes=(0, 0))[None]
    return Tensor._wrap(gray.astype(arr.dtype, copy=False))


def to_rgb(image: Tensor) -> Tensor:
    """1-channel -> 3-channel by replication; 3-channel passes through."""
    arr = image.numpy()
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DataError(f"expected CHW with 1 or 3 channels, got shape {arr.shape}")
    if arr.shape[0] == 3:
        return image
    return Tensor._wrap(np.repeat(arr, 3, axis=0).copy())


def resize_bilinear(image: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample with half-pixel centers; exact identity at same size."""
    arr = image.numpy()
    if arr.ndim != 3:
        raise DataError(f"expected CHW, got shape {arr.shape}")
    c, h, w = arr.shape
    if out_h < 1 or out_w < 1:
        raise DataError(f"output extents must be >= 1, got {out_h}x{out_w}")
    if (h, w) == (out_h, out_w):
        return image
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    tl = arr[:, y0[:, None], x0[None, :]]
    tr = arr[:, y0[:, None], x1[None, :]]
    bl = arr[:, y1[:, None], x0[None, :]]
    br = arr[:, y1[:, None], x1[None, :]]
    out = (1 - wy) * ((1 - wx) * tl + wx * tr) + wy * ((1 - wx) * bl + wx * br)
    return Tensor._wrap(out.astype(arr.dtype, copy=False))


def preprocess(
    image: Tensor,
    target: tuple[int, int, int] = (1, 32, 32),
    mean: float | Sequence[float] | None = None,
    std: float | Sequence[float] | None = None,
) -> Tensor:
    """Adapt channels, resize, and standardize to (x - mean) / std.

    Defaults center [0, 1] pixels to [-1, 1] (mean 0.5, std 0.5 per
    channel). Identity when the image already matches the target and
    mean=0, std=1.
    """
    tc, th, tw = target
    if tc not in (1, 3):
        raise DataError(f"target channels must be 1 or 3, got {tc}")
    img = to_grayscale(image) if tc == 1 else to_rgb(image)
    img = resize_bilinear(img, th, tw)
    mean_v = np.broadcast_to(np.asarray(0.5 if mean is None else mean, dtype=np.float64), (tc,))
    std_v = np.broadcast_to(np.asarray(0.5 if std is None else std, dtype=np.float64), (tc,))
    if np.any(std_v == 0):
        raise DataError("std has a zero entry")
    arr = img.numpy()
    out = (arr - mean_v[:, None, None]) / std_v[:, None, None]
    return Tensor._wrap(out.astype(arr.dtype, copy=False))


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentSpec:
    """Multiplicative jitter widths; factor ~ U[1 - delta, 1 + delta]."""

    saturation: float = 0.05
    brightness: float = 0.05
    exposure: float = 0.05

    def __post_init__(self):
        for name in ("saturation", "brightness", "exposure"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise DataError(f"{name} delta must be in [0, 1), got {v}")


def augment_seed(global_seed: int, sample_index: int, epoch: int) -> int:
    """Stable per-(seed, sample, epoch) stream key for augmentation draws."""
    ss = np.random.SeedSequence([int(global_seed), int(sample_index), int(epoch)])
    return int(ss.generate_state(1)[0])


def augment(image: Tensor, spec: AugmentSpec, sample_seed: int) -> Tensor:
    """Apply saturation, brightness, exposure jitter in that fixed order.

    Each stage draws factor ~ U[1 - delta, 1 + delta] and clamps its
    output to [0, 1]. A stage whose factor is exactly 1.0 is skipped, so
    all-zero deltas reproduce the input bitwise. Saturation is the
    identity on 1-channel images (the factor is still drawn, keeping the
    stream aligned).
    """
    arr = image.numpy()
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise DataError(f"expected CHW with 1 or 3 channels, got shape {arr.shape}")
    rng = np.random.default_rng(sample_seed)
    out = arr
    dt = arr.dtype

    f_sat = float(rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation))
    f_bri = float(rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness))
    f_exp = float(rng.uniform(1.0 - spec.exposure, 1.0 + spec.exposure))

    if f_sat != 1.0 and out.shape[0] == 3:
        gray = np.tensordot(np.asarray(_LUMA, dtype=dt), out, axes=(0, 0))[None]
        out = np.clip(gray + f_sat * (out - gray), 0.0, 1.0).astype(dt, copy=False)
    if f_bri != 1.0:
        out = np.clip(out * f_bri, 0.0, 1.0).astype(dt, copy=False)
    if f_exp != 1.0:
        out = np.clip(np.power(np.clip(out, 0.0, 1.0), 1.0 / f_exp), 0.0, 1.0).astype(dt, copy=False)
    if out is arr:
        return image
    return Tensor._wrap(np.ascontiguousarray(out))
