"""Seeded synthetic scenes with simulated disagreeing annotators.

Scenes are painted shapes (rectangles, polygons, ellipses) plus faint texture
strokes. The ideal edge map is the 1-pixel inner boundary of every visible
shape region. Annotators are simulated by tracing the ideal edges into
chains, displacing chain vertices with Gaussian jitter, re-rasterizing the
polyline, dropping whole segments, and optionally adding texture strokes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from skimage import draw

from .annotations import AnnotationSet, InvalidInputError, save_annotation_dir, write_index

SHAPE_KINDS = ("rectangle", "polygon", "ellipse")

# Neighbour order used for chain tracing: 4-neighbours first keeps chains 4-connected where possible.
_NEIGHBOURS = ((0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class Shape:
    """One filled shape. ``params`` depend on ``kind``.

    rectangle: (r0, c0, r1, c1) inclusive corners
    polygon:   flat (r, c) vertex list
    ellipse:   (r, c, radius_r, radius_c, rotation)
    """

    kind: str
    params: tuple
    color: tuple = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    size: tuple[int, int] = (64, 64)
    n_shapes: int = 4
    kinds: tuple[str, ...] = SHAPE_KINDS
    contrast: tuple[float, float] = (0.25, 0.7)
    n_texture: int = 3
    texture_contrast: float = 0.12
    noise_std: float = 0.02
    shapes: tuple[Shape, ...] | None = None


@dataclass(frozen=True)
class AnnotatorProfile:
    jitter_px: float = 0.0
    drop_rate: float = 0.0
    granularity: float = 0.0

    def __post_init__(self):
        if self.jitter_px < 0:
            raise InvalidInputError("jitter_px must be non-negative")
        if not 0.0 <= self.drop_rate <= 1.0:
            raise InvalidInputError("drop_rate must lie in [0, 1]")
        if not 0.0 <= self.granularity <= 1.0:
            raise InvalidInputError("granularity must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.jitter_px == 0 and self.drop_rate == 0 and self.granularity == 0


@dataclass(frozen=True)
class Scene:
    image: np.ndarray  # (H, W, 3) uint8
    ideal_edges: np.ndarray  # (H, W) uint8
    texture_edges: np.ndarray  # (H, W) uint8, texture strokes not on ideal edges
    regions: np.ndarray  # (H, W) int32, 0 = background, i = i-th painted shape


# --- scene rendering ------------------------------------------------------------


def _random_shape(rng: np.random.Generator, kind: str, H: int, W: int) -> Shape:
    lo = max(4, min(H, W) // 8)
    hi = max(lo + 2, min(H, W) // 2)
    if kind == "rectangle":
        h, w = rng.integers(lo, hi, size=2)
        r0 = int(rng.integers(0, H - h))
        c0 = int(rng.integers(0, W - w))
        return Shape(kind, (r0, c0, r0 + int(h) - 1, c0 + int(w) - 1))
    if kind == "polygon":
        n = int(rng.integers(3, 7))
        cr, cc = rng.uniform(0.2, 0.8) * H, rng.uniform(0.2, 0.8) * W
        radius = rng.uniform(lo, hi) / 1.5
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n))
        radii = radius * rng.uniform(0.6, 1.0, size=n)
        verts = np.stack([cr + radii * np.sin(angles), cc + radii * np.cos(angles)], axis=1)
        return Shape(kind, tuple(float(v) for v in verts.ravel()))
    if kind == "ellipse":
        rr, rc = rng.uniform(lo, hi, size=2) / 2
        cr, cc = rng.uniform(0.2, 0.8) * H, rng.uniform(0.2, 0.8) * W
        rot = rng.uniform(-np.pi, np.pi)
        return Shape(kind, (float(cr), float(cc), float(rr), float(rc), float(rot)))
    raise InvalidInputError(f"unknown shape kind {kind!r}")


def _fill(shape: Shape, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    p = shape.params
    if shape.kind == "rectangle":
        r0, c0, r1, c1 = (int(v) for v in p)
        return draw.rectangle((r0, c0), end=(r1, c1), shape=(H, W))
    if shape.kind == "polygon":
        verts = np.asarray(p, dtype=float).reshape(-1, 2)
        return draw.polygon(verts[:, 0], verts[:, 1], shape=(H, W))
    if shape.kind == "ellipse":
        return draw.ellipse(p[0], p[1], p[2], p[3], shape=(H, W), rotation=p[4])
    raise InvalidInputError(f"unknown shape kind {shape.kind!r}")


def region_boundaries(regions: np.ndarray) -> np.ndarray:
    """1-pixel boundary map: a pixel is marked when a 4-neighbour belongs to a region painted below it."""
    r = regions
    edges = np.zeros(r.shape, dtype=bool)
    edges[:, :-1] |= r[:, :-1] > r[:, 1:]
    edges[:, 1:] |= r[:, 1:] > r[:, :-1]
    edges[:-1, :] |= r[:-1, :] > r[1:, :]
    edges[1:, :] |= r[1:, :] > r[:-1, :]
    return edges.astype(np.uint8)


def render_scene(spec: SceneSpec) -> Scene:
    H, W = spec.size
    if H <= 0 or W <= 0:
        raise InvalidInputError(f"zero-area canvas {spec.size}")
    rng = np.random.default_rng(spec.seed)
    background = rng.uniform(0.2, 0.8, size=3)
    canvas = np.broadcast_to(background, (H, W, 3)).copy()
    regions = np.zeros((H, W), dtype=np.int32)

    if spec.shapes is not None:
        shapes = list(spec.shapes)
    else:
        shapes = []
        for _ in range(spec.n_shapes):
            kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
            shape = _random_shape(rng, kind, H, W)
            sign = rng.choice([-1.0, 1.0], size=3)
            delta = sign * rng.uniform(*spec.contrast, size=3)
            color = tuple(float(v) for v in np.clip(background + delta, 0.0, 1.0))
            shapes.append(Shape(shape.kind, shape.params, color))

    for i, shape in enumerate(shapes, start=1):
        rr, cc = _fill(shape, H, W)
        regions[rr, cc] = i
        canvas[rr, cc] = shape.color

    ideal = region_boundaries(regions)

    texture = np.zeros((H, W), dtype=np.uint8)
    if spec.shapes is None:
        for _ in range(spec.n_texture):
            r0, c0 = rng.integers(2, H - 2), rng.integers(2, W - 2)
            length = rng.uniform(0.1, 0.3) * min(H, W)
            angle = rng.uniform(0, np.pi)
            r1 = int(np.clip(round(r0 + length * np.sin(angle)), 0, H - 1))
            c1 = int(np.clip(round(c0 + length * np.cos(angle)), 0, W - 1))
            rr, cc = draw.line(int(r0), int(c0), r1, c1)
            shift = rng.choice([-1.0, 1.0]) * spec.texture_contrast
            canvas[rr, cc] = np.clip(canvas[rr, cc] + shift, 0.0, 1.0)
            texture[rr, cc] = 1
        texture[ideal.astype(bool)] = 0

    if spec.noise_std > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_std, size=canvas.shape)
    image = np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)
    return Scene(image=image, ideal_edges=ideal, texture_edges=texture, regions=regions)


def generate_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    scene = render_scene(spec)
    return scene.image, scene.ideal_edges


# --- annotator simulation -------------------------------------------------------


def trace_chains(edges: np.ndarray) -> list[np.ndarray]:
    """Split an edge map into ordered 8-connected pixel chains covering every edge pixel."""
    edges = np.asarray(edges).astype(bool)
    H, W = edges.shape
    unvisited = edges.copy()

    def free_neighbours(r, c):
        out = []
        for dr, dc in _NEIGHBOURS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < H and 0 <= cc < W and unvisited[rr, cc]:
                out.append((rr, cc))
        return out

    coords = np.argwhere(edges)
    # Endpoints (one neighbour) first so open curves are traced end to end.
    degree = {(int(r), int(c)): len(free_neighbours(r, c)) for r, c in coords}
    starts = sorted(degree, key=lambda p: (degree[p] != 1, p))
    chains = []
    for start in starts:
        if not unvisited[start]:
            continue
        chain = [start]
        unvisited[start] = False
        cur = start
        while True:
            nxt = free_neighbours(*cur)
            if not nxt:
                break
            cur = nxt[0]
            unvisited[cur] = False
            chain.append(cur)
        chains.append(np.asarray(chain, dtype=np.int64))
    return chains


def _rasterize_polyline(verts: np.ndarray, H: int, W: int) -> list[tuple[np.ndarray, np.ndarray]]:
    pieces = []
    pts = np.rint(verts).astype(np.int64)
    if len(pts) == 1:
        pieces.append((pts[:, 0], pts[:, 1]))
    for a, b in zip(pts[:-1], pts[1:]):
        pieces.append(draw.line(int(a[0]), int(a[1]), int(b[0]), int(b[1])))
    clipped = []
    for rr, cc in pieces:
        keep = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
        clipped.append((rr[keep], cc[keep]))
    return clipped


def _annotate_chains(
    chains: Sequence[np.ndarray],
    out: np.ndarray,
    profile: AnnotatorProfile,
    rng: np.random.Generator,
    vertex_step: int,
    pieces_per_segment: int,
) -> None:
    H, W = out.shape
    for chain in chains:
        idx = np.arange(0, len(chain), vertex_step)
        if idx[-1] != len(chain) - 1:
            idx = np.append(idx, len(chain) - 1)
        verts = chain[idx].astype(float)
        if profile.jitter_px > 0:
            verts = verts + rng.normal(0.0, profile.jitter_px, size=verts.shape)
            pieces = _rasterize_polyline(verts, H, W)
        else:
            # Without jitter keep the exact traced pixels, cut at the vertex indices.
            pieces = [
                (chain[a : b + 1, 0], chain[a : b + 1, 1]) for a, b in zip(idx[:-1], idx[1:])
            ] or [(chain[:, 0], chain[:, 1])]
        n_segments = -(-len(pieces) // pieces_per_segment)
        keep = rng.random(n_segments) >= profile.drop_rate
        for s in range(n_segments):
            if not keep[s]:
                continue
            for rr, cc in pieces[s * pieces_per_segment : (s + 1) * pieces_per_segment]:
                out[rr, cc] = 1


def simulate_annotator(
    ideal_edges: np.ndarray,
    profile: AnnotatorProfile,
    rng: np.random.Generator,
    texture_edges: np.ndarray | None = None,
    vertex_step: int = 4,
    pieces_per_segment: int = 3,
) -> np.ndarray:
    """One simulated human labelling of ``ideal_edges``.

    ``texture_edges`` are optional fine-detail strokes; each traced texture
    chain is labelled with probability ``profile.granularity``.
    """
    ideal_edges = np.asarray(ideal_edges).astype(np.uint8)
    if profile.is_identity:
        return ideal_edges.copy()
    out = np.zeros_like(ideal_edges)
    _annotate_chains(trace_chains(ideal_edges), out, profile, rng, vertex_step, pieces_per_segment)
    if texture_edges is not None and profile.granularity > 0:
        tex_chains = trace_chains(texture_edges)
        chosen = [c for c, u in zip(tex_chains, rng.random(len(tex_chains))) if u < profile.granularity]
        _annotate_chains(chosen, out, profile, rng, vertex_step, pieces_per_segment)
    return out


# --- datasets on disk -----------------------------------------------------------


DEFAULT_PROFILES = (
    AnnotatorProfile(jitter_px=0.0, drop_rate=0.0, granularity=0.0),
    AnnotatorProfile(jitter_px=0.7, drop_rate=0.1, granularity=0.3),
    AnnotatorProfile(jitter_px=1.0, drop_rate=0.25, granularity=0.0),
    AnnotatorProfile(jitter_px=0.5, drop_rate=0.05, granularity=0.8),
)


@dataclass
class SynthConfig:
    seed: int
    n_images: int = 8
    size: tuple[int, int] = (64, 64)
    n_shapes: int = 4
    n_texture: int = 3
    contrast: tuple[float, float] = (0.25, 0.7)
    noise_std: float = 0.02
    profiles: list[AnnotatorProfile] = field(default_factory=lambda: list(DEFAULT_PROFILES))

    REQUIRED = ("seed",)

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        if not isinstance(data, dict):
            raise InvalidInputError("synth config must be a JSON object")
        for key in cls.REQUIRED:
            if key not in data:
                raise InvalidInputError(f"missing required key {key!r}")
        known = {"seed", "n_images", "size", "n_shapes", "n_texture", "contrast", "noise_std", "profiles", "K"}
        for key in data:
            if key not in known:
                raise InvalidInputError(f"unknown key {key!r}")
        kw = {}
        try:
            kw["seed"] = int(data["seed"])
        except (TypeError, ValueError):
            raise InvalidInputError("key 'seed' must be an integer") from None
        for key, conv in (("n_images", int), ("n_shapes", int), ("n_texture", int), ("noise_std", float)):
            if key in data:
                try:
                    kw[key] = conv(data[key])
                except (TypeError, ValueError):
                    raise InvalidInputError(f"key {key!r} has invalid value {data[key]!r}") from None
        for key in ("size", "contrast"):
            if key in data:
                val = data[key]
                if not (isinstance(val, (list, tuple)) and len(val) == 2):
                    raise InvalidInputError(f"key {key!r} must be a pair")
                kw[key] = tuple(int(v) if key == "size" else float(v) for v in val)
        if "profiles" in data:
            try:
                kw["profiles"] = [AnnotatorProfile(**p) for p in data["profiles"]]
            except (TypeError, InvalidInputError) as exc:
                raise InvalidInputError(f"key 'profiles' is invalid: {exc}") from None
        cfg = cls(**kw)
        if "K" in data and int(data["K"]) != len(cfg.profiles):
            raise InvalidInputError(f"key 'K' ({data['K']}) does not match len(profiles) ({len(cfg.profiles)})")
        if cfg.n_images < 1:
            raise InvalidInputError("key 'n_images' must be positive")
        if min(cfg.size) <= 0:
            raise InvalidInputError("key 'size' must be positive")
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        d["contrast"] = list(self.contrast)
        d["K"] = len(self.profiles)
        return d


def image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def make_sample(cfg: SynthConfig, index: int) -> tuple[np.ndarray, AnnotationSet, Scene]:
    spec = SceneSpec(
        seed=image_seed(cfg.seed, index),
        size=tuple(cfg.size),
        n_shapes=cfg.n_shapes,
        n_texture=cfg.n_texture,
        contrast=tuple(cfg.contrast),
        noise_std=cfg.noise_std,
    )
    scene = render_scene(spec)
    maps = []
    for k, profile in enumerate(cfg.profiles):
        rng = np.random.default_rng([cfg.seed, index, k + 1])
        maps.append(simulate_annotator(scene.ideal_edges, profile, rng, scene.texture_edges))
    image_id = f"img_{index:04d}"
    return scene.image, AnnotationSet.from_maps(image_id, maps), scene


def generate_dataset(
    out_dir,
    n_images: int,
    K: int,
    profiles: Sequence[AnnotatorProfile],
    seed: int,
    **scene_kwargs,
) -> Path:
    """Write ``n_images`` scenes with ``K`` annotations each plus ``index.json``; returns the index path."""
    if K != len(profiles):
        raise InvalidInputError(f"K={K} but {len(profiles)} profiles given")
    cfg = SynthConfig(seed=seed, n_images=n_images, profiles=list(profiles), **scene_kwargs)
    return write_dataset(cfg, out_dir)


def write_dataset(cfg: SynthConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out_dir}: {exc}") from exc
    entries = {}
    for i in range(cfg.n_images):
        image, ann, _ = make_sample(cfg, i)
        rel_img = f"images/{ann.image_id}.png"
        rel_ann = f"annotations/{ann.image_id}"
        Image.fromarray(image).save(out_dir / rel_img, optimize=False)
        save_annotation_dir(ann, out_dir / rel_ann)
        entries[ann.image_id] = {"image": rel_img, "annotations": rel_ann}
    return write_index(out_dir, entries, extra={"generator": cfg.to_dict()})


def load_synth_config(path) -> SynthConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config is not valid JSON: {exc}") from None
    return SynthConfig.from_dict(data)
