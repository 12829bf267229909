"""Dataset ingestion, split definitions, and a synthetic vessel generator.

Samples are paired grayscale images and binary masks. The loader expects
`root/{images,masks}/<id>.png` with identical stems; a `pairs.tsv` manifest
(image-path TAB mask-path per line) overrides that convention for datasets
shipped in a different layout. synth_vessels() fabricates curvilinear masks
so the whole suite runs with zero external data.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.interpolate import make_interp_spline

from .autodiff import Tensor
from .errors import ConfigError, ContractError, DataError, DimensionError, ManifestError

logger = logging.getLogger(__name__)

__all__ = [
    "Sample",
    "SplitSpec",
    "rossa_split",
    "octa500_split",
    "load_dataset",
    "write_png",
    "synth_vessels",
    "crop_batch",
]


def _chw(arr, what):
    # Normalize [H,W] to [1,H,W]; anything else is a contract violation.
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] != 1:
        raise DimensionError("channel", f"{what} must be [1,H,W], got {arr.shape}")
    return arr


@dataclass(frozen=True)
class Sample:
    """One image/mask pair; image is float32 [1,H,W] in [0,1], mask uint8 {0,1}."""

    id: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "image", _chw(self.image, "image").astype(np.float32))
        object.__setattr__(self, "mask", _chw(self.mask, "mask").astype(np.uint8))
        if self.image.shape[1:] != self.mask.shape[1:]:
            raise DimensionError(
                "spatial",
                f"sample {self.id!r}: image {self.image.shape[1:]} vs mask {self.mask.shape[1:]}",
            )
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ContractError(f"sample {self.id!r}: image values outside [0,1]")
        if not np.isin(self.mask, (0, 1)).all():
            raise ContractError(f"sample {self.id!r}: mask is not binary")


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/val/test id lists."""

    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "train_ids", list(self.train_ids))
        object.__setattr__(self, "val_ids", list(self.val_ids))
        object.__setattr__(self, "test_ids", list(self.test_ids))
        for name, ids in self._splits():
            seen = set()
            for sample_id in ids:
                if sample_id in seen:
                    raise DataError(f"duplicate id {sample_id!r} within {name} split")
                seen.add(sample_id)
        pairs = [("train", "val"), ("train", "test"), ("val", "test")]
        by_name = dict(self._splits())
        for a, b in pairs:
            overlap = set(by_name[a]) & set(by_name[b])
            if overlap:
                raise DataError(
                    f"splits {a} and {b} overlap on ids: {sorted(overlap)}"
                )

    def _splits(self):
        return (
            ("train", self.train_ids),
            ("val", self.val_ids),
            ("test", self.test_ids),
        )


def rossa_split():
    """The ROSSA division: train NO.1-NO.100 & NO.301-NO.918, val NO.101-NO.200, test NO.201-NO.300."""

    def ids(lo, hi):
        return [f"NO.{i}" for i in range(lo, hi + 1)]

    return SplitSpec(
        train_ids=ids(1, 100) + ids(301, 918),
        val_ids=ids(101, 200),
        test_ids=ids(201, 300),
    )


_SUBSETS = ("3M", "6M")


def _parse_split_manifest(path):
    buckets = {"train": [], "val": [], "test": []}
    seen = {}
    section = None
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise DataError(f"split manifest not readable: {path} ({err})") from err
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in buckets:
                raise ManifestError(line_no, f"unknown section {line!r}")
            section = name
            continue
        if section is None:
            raise ManifestError(line_no, f"id {line!r} before any [train]/[val]/[test] section")
        if len(line.split()) != 1:
            raise ManifestError(line_no, f"expected one id per line, got {line!r}")
        if line in seen:
            raise ManifestError(line_no, f"duplicate id {line!r} (first seen on line {seen[line]})")
        seen[line] = line_no
        buckets[section].append(line)
    return buckets


def octa500_split(subset, manifest_path=None):
    """Parse an OCTA-500 split manifest for the 3M or 6M subset.

    The division is externally defined, so it is always read from a manifest
    file (sections [train]/[val]/[test], one id per line) rather than
    hardcoded.
    """
    name = str(subset).upper()
    name = name[5:] if name.startswith("OCTA_") else name
    if name not in _SUBSETS:
        raise ConfigError(f"unknown OCTA-500 subset {subset!r}; expected one of {_SUBSETS}")
    if manifest_path is None:
        raise ConfigError("octa500_split needs manifest_path (the split is not hardcoded)")
    buckets = _parse_split_manifest(manifest_path)
    return SplitSpec(buckets["train"], buckets["val"], buckets["test"])


def _id_key(sample_id):
    # Natural order: "NO.2" sorts before "NO.10".
    parts = re.split(r"(\d+)", str(sample_id))
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in parts if p)


def _read_gray(path, sample_id):
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float32)
    except OSError as err:
        raise DataError(f"unreadable file for id {sample_id!r}: {path} ({err})") from err
    return arr / 255.0


def _pair_paths(root, ids):
    """Resolve id -> (image_path, mask_path) via pairs.tsv or the layout convention."""
    manifest = root / "pairs.tsv"
    if manifest.exists():
        mapping = {}
        with open(manifest, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
                    raise ManifestError(
                        line_no, f"expected image-path TAB mask-path, got {line!r}"
                    )
                image_rel, mask_rel = (f.strip() for f in fields)
                sample_id = image_rel.rsplit("/", 1)[-1].rsplit(".", 1)[0]
                if sample_id in mapping:
                    raise ManifestError(line_no, f"duplicate image stem {sample_id!r}")
                mapping[sample_id] = (root / image_rel, root / mask_rel)
        return {i: mapping[i] for i in ids if i in mapping}, set(mapping)
    paths = {i: (root / "images" / f"{i}.png", root / "masks" / f"{i}.png") for i in ids}
    return paths, None


def _check_missing(all_ids, paths, known):
    missing_images = sorted(
        (i for i in all_ids if i not in paths or not paths[i][0].exists()), key=_id_key
    )
    if missing_images:
        hint = "" if known is None else " (ids come from pairs.tsv image stems)"
        raise DataError(f"missing images for ids: {missing_images}{hint}")
    missing_masks = sorted((i for i in all_ids if not paths[i][1].exists()), key=_id_key)
    if missing_masks:
        raise DataError(f"missing masks for ids: {missing_masks}")


def _load_ids(ids, paths, dims):
    samples = []
    for sample_id in sorted(ids, key=_id_key):
        image_path, mask_path = paths[sample_id]
        image = _read_gray(image_path, sample_id)
        mask_raw = _read_gray(mask_path, sample_id)
        if image.shape != mask_raw.shape:
            raise DataError(
                f"size mismatch for id {sample_id!r}: "
                f"image {image.shape} vs mask {mask_raw.shape}"
            )
        mask = (mask_raw >= 0.5).astype(np.uint8)
        samples.append(Sample(sample_id, image[None], mask[None]))
        dims.add(image.shape)
    return samples


def load_dataset(root_dir, split):
    """Load (train, val, test) Sample lists for a SplitSpec.

    Images come back float32 in [0,1]; masks are binarized at 0.5 so
    anti-aliased annotations collapse to {0,1}. Ids are returned in natural
    order within each split. Missing or mismatched files raise DataError
    listing the offending ids.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root is not a directory: {root}")
    named = list(split._splits())
    for name, ids in named:
        if not ids:
            raise DataError(f"{name} split is empty")
    all_ids = [i for _, ids in named for i in ids]
    paths, known = _pair_paths(root, all_ids)
    _check_missing(all_ids, paths, known)
    dims = set()
    out = [_load_ids(ids, paths, dims) for _, ids in named]
    logger.info(
        "loaded %d/%d/%d train/val/test samples; observed dims %s",
        len(out[0]), len(out[1]), len(out[2]), sorted(dims),
    )
    return tuple(out)


def load_samples(root_dir, ids=None):
    """Load a flat Sample list; with ids=None, every pair found under root.

    Discovery uses pairs.tsv when present, else `images/*.png` stems.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root is not a directory: {root}")
    if ids is None:
        image_dir = root / "images"
        if (root / "pairs.tsv").exists():
            _, known = _pair_paths(root, [])
            ids = sorted(known, key=_id_key)
        elif image_dir.is_dir():
            ids = sorted((p.stem for p in image_dir.glob("*.png")), key=_id_key)
        else:
            raise DataError(f"no pairs.tsv or images/ directory under {root}")
        if not ids:
            raise DataError(f"no samples found under {root}")
    ids = list(ids)
    if not ids:
        raise DataError("load_samples got an empty id list")
    paths, known = _pair_paths(root, ids)
    _check_missing(ids, paths, known)
    dims = set()
    samples = _load_ids(ids, paths, dims)
    logger.info("loaded %d samples; observed dims %s", len(samples), sorted(dims))
    return samples


def write_png(path, values):
    """Write [H,W] or [1,H,W] intensities in [0,1] as 8-bit grayscale PNG."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise DimensionError("spatial", f"write_png wants [H,W] or [1,H,W], got {arr.shape}")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(path, format="PNG")


def _walk_control_points(rng, H, W, n_ctrl):
    # A straight baseline crossing the canvas plus a random-walk perpendicular
    # wobble. The wobble is a function of arc position, so a curve never
    # doubles back on itself; that keeps rasterized width-1 strokes at most
    # 2 px thick (a reflected free walk can U-turn and run beside itself).
    theta = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.sin(theta), np.cos(theta)])
    normal = np.array([-direction[1], direction[0]])
    center = np.array(
        [rng.uniform(0.25, 0.75) * (H - 1), rng.uniform(0.25, 0.75) * (W - 1)]
    )
    length = 1.2 * float(np.hypot(H - 1, W - 1))
    t = np.linspace(-0.5, 0.5, n_ctrl) * length
    step = length / (n_ctrl - 1)
    wobble = np.cumsum(rng.normal(0.0, 0.35 * step, size=n_ctrl))
    wobble = np.clip(wobble - wobble.mean(), -0.25 * min(H, W), 0.25 * min(H, W))
    return center[None, :] + t[:, None] * direction[None, :] + wobble[:, None] * normal[None, :]


def _disk_offsets(width):
    # Integer offsets within radius width/2 of the curve center.
    r = width / 2.0
    span = int(np.ceil(r))
    dy, dx = np.mgrid[-span : span + 1, -span : span + 1]
    keep = dy * dy + dx * dx <= r * r + 1e-9
    return dy[keep], dx[keep]


def _paint_curve(mask, pts, width):
    H, W = mask.shape
    dy, dx = _disk_offsets(width)
    centers = np.rint(pts).astype(np.int64)
    ys = (centers[:, 0, None] + dy[None, :]).ravel()
    xs = (centers[:, 1, None] + dx[None, :]).ravel()
    keep = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
    mask[ys[keep], xs[keep]] = True


def synth_vessels(seed, H=64, W=64, n_vessels=4, width_range=(1, 3)):
    """Fabricate one Sample: random smooth curves over a textured background.

    Each vessel is a quadratic spline through momentum-random-walk control
    points, rasterized at the sampled width (width-1 vessels stay at most
    2 px thick after rounding). The image adds a Perlin-like low-frequency
    background and pixel noise so thresholding alone cannot solve it.
    Deterministic per seed.
    """
    if H < 16 or W < 16:
        raise ConfigError(f"synthetic canvas needs H,W >= 16, got {H}x{W}")
    if n_vessels < 1:
        raise ConfigError(f"n_vessels must be >= 1, got {n_vessels}")
    lo, hi = width_range
    if lo != int(lo) or hi != int(hi):
        raise ConfigError(f"width_range must be integer pixels, got {width_range}")
    lo, hi = int(lo), int(hi)
    if not (1 <= lo <= hi <= 8):
        raise ConfigError(f"width_range must satisfy 1 <= lo <= hi <= 8, got {width_range}")

    rng = np.random.default_rng(seed)
    mask = np.zeros((H, W), dtype=bool)
    for _ in range(n_vessels):
        n_ctrl = int(rng.integers(4, 8))
        ctrl = _walk_control_points(rng, H, W, n_ctrl)
        width = int(rng.integers(lo, hi + 1))
        # Dense samples ~4 per pixel of arc length keep the rasterized curve connected.
        length = float(np.sum(np.hypot(*np.diff(ctrl, axis=0).T)))
        n_dense = max(2 * n_ctrl, int(4.0 * length))
        spline = make_interp_spline(np.arange(n_ctrl), ctrl, k=2)
        dense = spline(np.linspace(0.0, n_ctrl - 1.0, n_dense))
        # Overshoot past the canvas is dropped, not clipped: projecting points
        # onto the border would smear thick clumps along it.
        inside = (
            (dense[:, 0] > -0.5) & (dense[:, 0] < H - 0.5)
            & (dense[:, 1] > -0.5) & (dense[:, 1] < W - 0.5)
        )
        _paint_curve(mask, dense[inside], width)

    coarse = rng.normal(size=(H // 8 + 2, W // 8 + 2))
    smooth = ndimage.zoom(coarse, 8.0, order=3)[:H, :W]
    spread = max(float(smooth.max() - smooth.min()), 1e-6)
    background = (smooth - smooth.min()) / spread
    image = 0.25 + 0.20 * background + 0.45 * mask
    image = image + rng.normal(0.0, 0.03, size=(H, W))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(f"synth-{seed}", image[None], mask[None].astype(np.uint8))


def crop_batch(samples, crop, seed=0):
    """Stack aligned random crops into a (images, masks) Tensor pair.

    One offset per sample, identical for image and mask; deterministic per
    seed. Crops never pad: a crop larger than its image is an error.
    """
    try:
        ch, cw = (int(c) for c in crop)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"crop must be a (h, w) pair, got {crop!r}") from err
    if ch < 1 or cw < 1:
        raise ConfigError(f"crop dims must be positive, got {crop}")
    samples = list(samples)
    if not samples:
        raise ConfigError("crop_batch needs at least one sample")
    rng = np.random.default_rng(seed)
    images, masks = [], []
    for index, sample in enumerate(samples):
        image = _chw(sample.image, "image")
        mask = _chw(sample.mask, "mask")
        H, W = image.shape[-2:]
        if ch > H or cw > W:
            name = getattr(sample, "id", index)
            raise DimensionError(
                "spatial", f"crop {ch}x{cw} exceeds image {H}x{W} for sample {name!r}; no padding"
            )
        oy = int(rng.integers(0, H - ch + 1))
        ox = int(rng.integers(0, W - cw + 1))
        images.append(image[:, oy : oy + ch, ox : ox + cw])
        masks.append(mask[:, oy : oy + ch, ox : ox + cw])
    x = Tensor(np.stack(images).astype(np.float32))
    t = Tensor(np.stack(masks).astype(np.float32))
    return x, t
