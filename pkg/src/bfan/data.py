"""Image codecs, preprocessing, synthetic data, and dataset manifests."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .boundary_gt import canny_boundary
from .errors import ConfigError, ContractViolation, DecodeError

_WS = b" \t\n\r\v\f"


# ------------------------------------------------------------------- PNM codec

def decode_pnm(buf: bytes) -> np.ndarray:
    """Decode binary P5 (-> uint8 [H,W]) or P6 (-> uint8 [H,W,3])."""
    if len(buf) < 2:
        raise DecodeError("truncated header", 0)
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise DecodeError(f"unsupported magic {magic!r}", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(buf) and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < len(buf) and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            if pos >= len(buf):
                raise DecodeError("truncated header", pos)
            raise DecodeError(f"expected a number in header, got {buf[pos:pos + 1]!r}", pos)
        fields.append((int(buf[start:pos]), start))
    if pos >= len(buf) or buf[pos] not in _WS:
        raise DecodeError("header must end with a single whitespace byte", pos)
    pos += 1
    (width, w_at), (height, h_at), (maxval, m_at) = fields
    if width < 1:
        raise DecodeError(f"width must be >= 1, got {width}", w_at)
    if height < 1:
        raise DecodeError(f"height must be >= 1, got {height}", h_at)
    if not 1 <= maxval <= 255:
        raise DecodeError(f"only 8-bit maxval supported, got {maxval}", m_at)
    chans = 1 if magic == b"P5" else 3
    need = width * height * chans
    if len(buf) - pos < need:
        raise DecodeError(f"truncated payload: need {need} bytes, have {len(buf) - pos}", len(buf))
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    if arr.max(initial=0) > maxval:
        raise DecodeError(f"sample exceeds maxval {maxval}", pos + int(np.argmax(arr > maxval)))
    shape = (height, width) if chans == 1 else (height, width, 3)
    return arr.reshape(shape).copy()


def encode_pnm(img) -> bytes:
    """Encode uint8 [H,W] as P5 or [H,W,3] as P6 with a canonical header."""
    a = np.asarray(img)
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise ContractViolation("data-io.encode_pnm", f"cannot encode array of shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractViolation("data-io.encode_pnm", "image dims must be >= 1")
    if a.dtype != np.uint8:
        if np.any((a < 0) | (a > 255)) or np.any(a != np.round(a)):
            raise ContractViolation("data-io.encode_pnm", "values must be integers in [0, 255]")
        a = a.astype(np.uint8)
    header = b"%s\n%d %d\n255\n" % (magic, a.shape[1], a.shape[0])
    return header + np.ascontiguousarray(a).tobytes()


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        try:
            return decode_pnm(fh.read())
        except DecodeError as exc:
            raise DecodeError(f"{path}: {exc}") from None


def write_pnm(path, img) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pnm(img))


def mask_from_gray(gray: np.ndarray) -> np.ndarray:
    """Graymap -> binary {0,1} mask (values above 127 are foreground)."""
    return (np.asarray(gray) > 127).astype(np.uint8)


def mask_to_gray(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) > 0).astype(np.uint8) * 255


# --------------------------------------------------------------- preprocessing

def resize_nearest(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize over the first two axes."""
    h, w = img.shape[:2]
    oh, ow = size
    rows = (np.arange(oh) * h) // oh
    cols = (np.arange(ow) * w) // ow
    return img[rows][:, cols]


def preprocess(image: np.ndarray, input_size: tuple[int, int],
               mean_bgr=(104.0, 116.7, 122.7), scale: float = 1.0) -> np.ndarray:
    """RGB image ([H,W,3] or [3,H,W], 0-255) -> float64 [3,H,W] in BGR order, mean-subtracted."""
    a = np.asarray(image)
    if a.ndim == 3 and a.shape[0] == 3 and a.shape[2] != 3:
        a = a.transpose(1, 2, 0)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ContractViolation("data-io.preprocess", f"expected an RGB image, got shape {a.shape}")
    a = resize_nearest(a, input_size).astype(np.float64)
    bgr = a[:, :, ::-1].transpose(2, 0, 1)
    out = bgr - np.asarray(mean_bgr, dtype=np.float64)[:, None, None]
    if scale != 1.0:
        out = out * scale
    return np.ascontiguousarray(out)


# ------------------------------------------------------------------- samples

@dataclass
class SaliencySample:
    id: str
    image: np.ndarray     # uint8 [3,H,W], RGB
    mask: np.ndarray      # uint8 {0,1} [H,W]
    boundary: np.ndarray  # uint8 {0,1} [H,W]


def _value_noise(rng: np.random.Generator, size: int, cells: int = 4) -> np.ndarray:
    grid = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    return ndimage.zoom(grid, size / (cells + 1), order=1, mode="nearest")[:size, :size]


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    if rng.random() < 0.5:
        h, w = rng.integers(size // 8, size // 2 + 1, size=2)
        y0 = rng.integers(0, size - h + 1)
        x0 = rng.integers(0, size - w + 1)
        return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
    ry, rx = rng.uniform(size / 16, size / 4, size=2)
    cy = rng.uniform(ry, size - ry)
    cx = rng.uniform(rx, size - rx)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _distinct_color(rng: np.random.Generator, avoid: list[np.ndarray], min_dist: float = 90.0) -> np.ndarray:
    for _ in range(1000):
        c = rng.uniform(20, 235, size=3)
        if all(np.abs(c - a).max() >= min_dist for a in avoid):
            return c
    return 255.0 - avoid[0]


def synth_sample(rng: np.random.Generator, size: int, sample_id: str) -> SaliencySample:
    """One image: noisy background plus 1-3 solid-ish shapes; mask covers 5-60%."""
    while True:
        mask = np.zeros((size, size), dtype=bool)
        shapes = [_shape_mask(rng, size) for _ in range(rng.integers(1, 4))]
        for s in shapes:
            mask |= s
        if 0.05 <= mask.mean() <= 0.60:
            break
    bg = rng.uniform(20, 235, size=3)
    img = bg[:, None, None] + 20.0 * np.stack([_value_noise(rng, size) for _ in range(3)])
    used = [bg]
    for s in shapes:
        col = _distinct_color(rng, used)
        used.append(col)
        img[:, s] = col[:, None]
    img += rng.normal(0.0, 6.0, size=img.shape)
    image = np.clip(np.round(img), 0, 255).astype(np.uint8)
    m = mask.astype(np.uint8)
    return SaliencySample(sample_id, image, m, canny_boundary(m))


def gen_synthetic(n: int, size: int = 64, seed: int = 0, prefix: str = "s") -> list[SaliencySample]:
    if n < 1:
        raise ContractViolation("data-io.gen_synthetic", "n must be >= 1")
    if size % 32:
        raise ContractViolation("data-io.gen_synthetic", f"size {size} not divisible by 32")
    rng = np.random.default_rng(seed)
    return [synth_sample(rng, size, f"{prefix}{i:05d}") for i in range(n)]


# ------------------------------------------------------------------ manifests

@dataclass
class Manifest:
    """Ordered (id, image path, mask path) triples plus a split tag.

    On disk: one ``id<TAB>image<TAB>mask`` per line, ``#`` comments, and an
    optional ``# split=train|test`` directive. Relative paths resolve
    against the manifest's directory.
    """

    entries: list[tuple[str, Path, Path]] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        root = path.parent
        entries, split, seen = [], "train", set()
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from None
        for lineno, line in enumerate(text.splitlines(), 1):
            stripped = line.strip()
            if stripped.startswith("#"):
                body = stripped[1:].strip()
                if body.startswith("split="):
                    split = body.split("=", 1)[1].strip()
                continue
            if not stripped:
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 3 tab-separated fields")
            sid, img, msk = parts
            if sid in seen:
                raise ConfigError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            ip, mp = root / img, root / msk
            for p in (ip, mp):
                if not p.is_file():
                    raise ConfigError(f"{path}:{lineno}: missing file {p}")
            entries.append((sid, ip, mp))
        if split not in ("train", "test"):
            raise ConfigError(f"{path}: split must be train or test, got {split!r}")
        return cls(entries, split)

    def save(self, path) -> None:
        path = Path(path)
        root = path.parent.resolve()
        lines = [f"# split={self.split}"]
        for sid, ip, mp in self.entries:
            lines.append(f"{sid}\t{_rel(ip, root)}\t{_rel(mp, root)}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rel(p: Path, root: Path) -> str:
    try:
        return os.path.relpath(Path(p).resolve(), root)
    except ValueError:
        return str(Path(p).resolve())


def write_dataset(samples: list[SaliencySample], out_dir, split: str = "train") -> Manifest:
    """Write images/, masks/, boundaries/ and manifest.txt under ``out_dir``."""
    out = Path(out_dir)
    for sub in ("images", "masks", "boundaries"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        ip = out / "images" / f"{s.id}.ppm"
        mp = out / "masks" / f"{s.id}.pgm"
        write_pnm(ip, s.image.transpose(1, 2, 0))
        write_pnm(mp, mask_to_gray(s.mask))
        write_pnm(out / "boundaries" / f"{s.id}.pgm", mask_to_gray(s.boundary))
        entries.append((s.id, ip, mp))
    man = Manifest(entries, split)
    man.save(out / "manifest.txt")
    return man


def load_sample(sid: str, image_path, mask_path, size: tuple[int, int] | None = None) -> SaliencySample:
    """Decode one manifest entry; the boundary label is derived from the mask."""
    img = read_pnm(image_path)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    gray = read_pnm(mask_path)
    if gray.ndim == 3:
        gray = gray.max(axis=2)
    mask = mask_from_gray(gray)
    if size is not None:
        img = resize_nearest(img, size)
        mask = resize_nearest(mask, size)
    if img.shape[:2] != mask.shape:
        raise DecodeError(f"{sid}: image {img.shape[:2]} and mask {mask.shape} sizes differ")
    return SaliencySample(sid, img.transpose(2, 0, 1).copy(), mask, canny_boundary(mask))


def load_manifest_samples(manifest: Manifest, size: tuple[int, int] | None = None) -> list[SaliencySample]:
    return [load_sample(sid, ip, mp, size) for sid, ip, mp in manifest.entries]
