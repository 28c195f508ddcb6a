"""Procedural eye-image rendering, corruptions, and augmentation.

A frame is a grayscale float64 image in [0, 1] with a 4-class label map:
0 background/skin, 1 eye (sclera), 2 iris, 3 pupil.  Regions are nested
rotated ellipses sharing a center; a pixel's label is the innermost region
containing its center.  The background carries smooth value noise plus
sparse dark speckles, which keeps the darkest 5% of pixels dominated by
the pupil blob (what the heuristic detector thresholds on) without forming
large connected clumps.

Images are quantized to the 1/255 grid at the end of every generation op,
so the PGM container round-trips bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .layers import conv2d
from .rng import Rng
from .warp import make_affine, transform_points, warp_affine

CLASS_NAMES = ("background", "eye", "iris", "pupil")
CORRUPTION_KINDS = ("blur", "occlusion", "domain_shift")


@dataclass(frozen=True)
class SceneParams:
    eye_center: tuple[float, float]          # (row, col), pixels
    eye_axes: tuple[float, float]            # (semi-major, semi-minor)
    iris_axes: tuple[float, float]
    pupil_axes: tuple[float, float]
    rotation: float                          # radians
    intensities: tuple[float, float, float, float]   # per class 0..3
    texture_seed: int


@dataclass(frozen=True)
class Corruption:
    kind: str                                # blur | occlusion | domain_shift
    severity: float                          # in [0, 1]


@dataclass
class Sample:
    image: np.ndarray                        # [H,W] float64 in [0,1], on 1/255 grid
    labels: np.ndarray                       # [H,W] int64 in {0,1,2,3}
    gt_bbox: tuple[int, int, int, int]       # (l, t, h, w)
    severity: float
    domain_id: str
    sample_id: str
    corruption: str = "none"


def quantize8(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid used by the dataset container."""
    q = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5)
    return q / 255.0


def _ellipse_mask(rr: np.ndarray, cc: np.ndarray, center: tuple[float, float],
                  axes: tuple[float, float], rot: float) -> np.ndarray:
    a, b = axes
    if a <= 0.0 or b <= 0.0:
        return np.zeros(rr.shape, dtype=bool)
    dr = rr - center[0]
    dc = cc - center[1]
    co, si = math.cos(rot), math.sin(rot)
    u = co * dc + si * dr
    v = -si * dc + co * dr
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _ellipse_extent(axes: tuple[float, float], rot: float) -> tuple[float, float]:
    """Half-extents (row, col) of the axis-aligned bounding box."""
    a, b = axes
    co, si = math.cos(rot), math.sin(rot)
    ey = math.sqrt((a * si) ** 2 + (b * co) ** 2)
    ex = math.sqrt((a * co) ** 2 + (b * si) ** 2)
    return ey, ex


def _smooth_noise(h: int, w: int, rng: Rng, cell: int = 12) -> np.ndarray:
    """Value noise in [-1, 1]: coarse random grid, bilinearly interpolated."""
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.uniform_array(gh * gw, -1.0, 1.0).reshape(gh, gw)
    rr = np.arange(h) / cell
    cc = np.arange(w) / cell
    r0 = rr.astype(np.int64)
    c0 = cc.astype(np.int64)
    fr = (rr - r0)[:, None]
    fc = (cc - c0)[None, :]
    g00 = grid[r0][:, c0]
    g01 = grid[r0][:, c0 + 1]
    g10 = grid[r0 + 1][:, c0]
    g11 = grid[r0 + 1][:, c0 + 1]
    return (g00 * (1 - fr) * (1 - fc) + g01 * (1 - fr) * fc
            + g10 * fr * (1 - fc) + g11 * fr * fc)


def render_eye(params: SceneParams, h_full: int, w_full: int, rng: Rng,
               sample_id: str = "") -> Sample:
    """Rasterize a labeled eye frame; deterministic given (params, rng seed)."""
    if h_full < 64 or w_full < 64:
        raise ValueError(f"frame must be at least 64x64, got {h_full}x{w_full}")
    for inner, outer, names in ((params.pupil_axes, params.iris_axes, "pupil/iris"),
                                (params.iris_axes, params.eye_axes, "iris/eye")):
        if not (inner[0] < outer[0] and inner[1] < outer[1]):
            raise ValueError(f"ellipse nesting violated ({names}): {inner} vs {outer}")
    cr, cc_ = params.eye_center
    ey, ex = _ellipse_extent(params.eye_axes, params.rotation)
    if cr - ey < 0 or cr + ey > h_full - 1 or cc_ - ex < 0 or cc_ + ex > w_full - 1:
        raise ValueError(
            f"eye ellipse exceeds {h_full}x{w_full} frame: center {params.eye_center}, "
            f"extent ({ey:.1f}, {ex:.1f})")

    tex = rng.derive(params.texture_seed)
    rr, cc = np.meshgrid(np.arange(h_full, dtype=np.float64) + 0.5,
                         np.arange(w_full, dtype=np.float64) + 0.5, indexing="ij")

    in_eye = _ellipse_mask(rr, cc, params.eye_center, params.eye_axes, params.rotation)
    in_iris = _ellipse_mask(rr, cc, params.eye_center, params.iris_axes, params.rotation)
    in_pupil = _ellipse_mask(rr, cc, params.eye_center, params.pupil_axes, params.rotation)

    labels = np.zeros((h_full, w_full), dtype=np.int64)
    labels[in_eye] = 1
    labels[in_iris] = 2
    labels[in_pupil] = 3

    skin, sclera, iris_base, pupil_val = params.intensities
    img = np.full((h_full, w_full), skin)
    img += 0.04 * _smooth_noise(h_full, w_full, tex)

    # sparse dark speckle grain, background only: anchors the detector's
    # 5th-percentile threshold below the iris intensity range
    u = tex.uniform_array(h_full * w_full).reshape(h_full, w_full)
    speck = (u < 0.05) & ~in_eye
    img[speck] = 0.08 + (0.24 - 0.08) * (u[speck] / 0.05)

    img[in_eye] = sclera
    # radial gradient on the iris: dark near the pupil, brighter at the rim;
    # the 0.75-0.95x band keeps iris values above the speckle range and
    # below skin, so region intensities stay separable on clean frames
    if np.any(in_iris):
        dr = rr - cr
        dc = cc - cc_
        co, si = math.cos(params.rotation), math.sin(params.rotation)
        uu = co * dc + si * dr
        vv = -si * dc + co * dr
        ia, ib = params.iris_axes
        rho = np.sqrt((uu / ia) ** 2 + (vv / ib) ** 2)
        img[in_iris] = iris_base * (0.75 + 0.20 * rho[in_iris])
    img[in_pupil] = pupil_val
    img += 0.015 * _smooth_noise(h_full, w_full, tex, cell=5)

    l = max(0, int(math.floor(cc_ - 1.1 * ex)))
    t = max(0, int(math.floor(cr - 1.1 * ey)))
    r_excl = min(w_full, int(math.ceil(cc_ + 1.1 * ex)) + 1)
    b_excl = min(h_full, int(math.ceil(cr + 1.1 * ey)) + 1)
    bbox = (l, t, b_excl - t, r_excl - l)

    return Sample(image=quantize8(img), labels=labels, gt_bbox=bbox,
                  severity=0.0, domain_id="clean", sample_id=sample_id)


def sample_scene_params(h_full: int, w_full: int, rng: Rng) -> SceneParams:
    """Draw scene parameters; the eye spans 40-70% of the short frame side."""
    m = min(h_full, w_full)
    a = rng.uniform(0.24, 0.34) * m
    b = a * rng.uniform(0.75, 0.95)
    rot = rng.uniform(-0.25, 0.25)
    iris_f = rng.uniform(0.58, 0.70)
    pupil_f = rng.uniform(0.55, 0.65)
    ey, ex = _ellipse_extent((a, b), rot)
    mr, mc = 1.15 * ey, 1.15 * ex
    cr = rng.uniform(mr, h_full - 1 - mr)
    cc = rng.uniform(mc, w_full - 1 - mc)
    intensities = (rng.uniform(0.50, 0.60), rng.uniform(0.80, 0.90),
                   rng.uniform(0.36, 0.44), rng.uniform(0.02, 0.06))
    return SceneParams(eye_center=(cr, cc), eye_axes=(a, b),
                       iris_axes=(a * iris_f, b * iris_f),
                       pupil_axes=(a * iris_f * pupil_f, b * iris_f * pupil_f),
                       rotation=rot, intensities=intensities,
                       texture_seed=rng.u64())


# ---------------------------------------------------------------------------
# corruptions
# ---------------------------------------------------------------------------

def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Digital-line kernel with exactly ``length`` taps of weight 1/length."""
    if length == 1:
        return np.ones((1, 1))
    dy, dx = math.sin(angle), math.cos(angle)
    if abs(dx) >= abs(dy):
        slope = dy / dx
        major = [k - (length - 1) // 2 for k in range(length)]
        cells = [(int(math.floor(u * slope + 0.5)), u) for u in major]
    else:
        slope = dx / dy
        major = [k - (length - 1) // 2 for k in range(length)]
        cells = [(u, int(math.floor(u * slope + 0.5))) for u in major]
    radius = max(max(abs(ci), abs(cj)) for ci, cj in cells)
    side = 2 * radius + 1
    kern = np.zeros((side, side))
    for ci, cj in cells:
        kern[ci + radius, cj + radius] = 1.0 / length
    return kern


def _blur(sample: Sample, severity: float, rng: Rng) -> Sample:
    length = 1 + int(round(14.0 * severity))
    angle = rng.uniform(0.0, math.pi)
    kern = motion_blur_kernel(length, angle)
    pad = (kern.shape[0] - 1) // 2
    blurred = conv2d(sample.image[None], kern[None, None], pad)[0]
    return replace(sample, image=quantize8(blurred))


def _occlude(sample: Sample, severity: float) -> Sample:
    l, t, h, w = sample.gt_bbox
    img = sample.image.copy()
    labels = sample.labels.copy()
    skin = float(np.median(img[labels == 0])) if np.any(labels == 0) else 0.55
    cols = np.arange(img.shape[1], dtype=np.float64)
    rel = (cols - (l + w / 2.0)) / (w / 2.0)
    # eyelid depth: deepest mid-eye, exactly h/2 at the box edges when
    # severity is 1, tapering to nothing outside |rel| = sqrt(3)
    depth = severity * h * np.maximum(0.0, 0.75 - 0.25 * rel ** 2)
    rows = np.arange(img.shape[0], dtype=np.float64)
    covered = rows[:, None] < (t + depth)[None, :]
    img[covered] = skin
    labels[covered] = 0
    return replace(sample, image=quantize8(img), labels=labels)


def _domain_shift(sample: Sample, severity: float, rng: Rng) -> Sample:
    img = sample.image.copy()
    gamma = rng.uniform(max(0.05, 1.0 - 0.6 * severity), 1.0 + 0.6 * severity)
    contrast = rng.uniform(1.0 - 0.35 * severity, 1.0 + 0.35 * severity)
    img = np.clip(img, 0.0, 1.0) ** gamma
    img = 0.5 + contrast * (img - 0.5)
    h, wd = img.shape
    rr, cc = np.meshgrid((np.arange(h) - h / 2) / (h / 2),
                         (np.arange(wd) - wd / 2) / (wd / 2), indexing="ij")
    img *= 1.0 - 0.35 * severity * (rr ** 2 + cc ** 2) / 2.0
    img += rng.normal_array(img.size, 0.0, 0.08 * severity).reshape(img.shape)
    return replace(sample, image=quantize8(img))


def apply_corruption(sample: Sample, c: Corruption, rng: Rng) -> Sample:
    """Degrade a sample; severity 0 is the bit-exact identity for all kinds."""
    if not (0.0 <= c.severity <= 1.0):
        raise ValueError(f"severity must be in [0,1], got {c.severity}")
    if c.kind not in CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption kind {c.kind!r}")
    if c.severity == 0.0:
        return replace(sample, corruption=c.kind, severity=0.0)
    if c.kind == "blur":
        out = _blur(sample, c.severity, rng)
    elif c.kind == "occlusion":
        out = _occlude(sample, c.severity)
    else:
        out = _domain_shift(sample, c.severity, rng)
    return replace(out, corruption=c.kind, severity=c.severity, domain_id=c.kind)


# ---------------------------------------------------------------------------
# augmentation and preprocessing
# ---------------------------------------------------------------------------

def augment_with_params(sample: Sample, rot_deg: float, t_frac_r: float,
                        t_frac_c: float, scale: float, hflip: bool) -> Sample:
    """Apply one affine draw: image bilinear, labels nearest, bbox via corners."""
    h, w = sample.image.shape
    fwd = make_affine(h, w, math.radians(rot_deg),
                      t_frac_r * h, t_frac_c * w, scale, hflip)
    img = warp_affine(sample.image, fwd, mode="bilinear")
    labels = warp_affine(sample.labels.astype(np.float64), fwd, mode="nearest")
    l, t, bh, bw = sample.gt_bbox
    corners = np.array([[t, l], [t, l + bw - 1], [t + bh - 1, l], [t + bh - 1, l + bw - 1]],
                       dtype=np.float64)
    moved = transform_points(fwd, corners)
    t2 = int(np.clip(math.floor(moved[:, 0].min()), 0, h - 1))
    b2 = int(np.clip(math.ceil(moved[:, 0].max()), 0, h - 1))
    l2 = int(np.clip(math.floor(moved[:, 1].min()), 0, w - 1))
    r2 = int(np.clip(math.ceil(moved[:, 1].max()), 0, w - 1))
    bbox = (l2, t2, b2 - t2 + 1, r2 - l2 + 1)
    return replace(sample, image=quantize8(img),
                   labels=labels.astype(np.int64), gt_bbox=bbox)


def augment(sample: Sample, rng: Rng) -> Sample:
    """Random rotation +-15 deg, translation +-8%, scale 0.9-1.1, flip p=0.5."""
    rot = rng.uniform(-15.0, 15.0)
    tr = rng.uniform(-0.08, 0.08)
    tc = rng.uniform(-0.08, 0.08)
    sc = rng.uniform(0.9, 1.1)
    flip = rng.uniform() < 0.5
    return augment_with_params(sample, rot, tr, tc, sc, flip)


def gamma_correct(image: np.ndarray, gamma: float) -> np.ndarray:
    """Pixelwise v ** gamma on [0, 1]."""
    if gamma <= 0.0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return np.clip(image, 0.0, 1.0) ** gamma


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def generate_dataset(n: int, seed: int, kinds: list[str] | None = None,
                     sev_range: tuple[float, float] = (0.0, 0.0),
                     h_full: int = 120, w_full: int = 160) -> list[Sample]:
    """Render ``n`` samples; corruption kinds cycle, severity drawn per sample.

    ``kinds`` entries are corruption names or "none"; each sample derives its
    own generator stream from (seed, index), so the set is reproducible
    regardless of generation order.
    """
    kinds = kinds or ["none"]
    for k in kinds:
        if k != "none" and k not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {k!r}")
    root = Rng(seed)
    out = []
    for i in range(n):
        r = root.derive(f"sample/{i}")
        params = sample_scene_params(h_full, w_full, r)
        s = render_eye(params, h_full, w_full, r, sample_id=f"s{i:06d}")
        kind = kinds[i % len(kinds)]
        if kind != "none":
            sev = r.uniform(sev_range[0], sev_range[1])
            s = apply_corruption(s, Corruption(kind, sev), r)
        out.append(s)
    return out
