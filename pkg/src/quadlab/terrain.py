"""Procedural terrains: flat, rough (Perlin), discrete rough, step, cliff,
slippery, conveyor.

A terrain is three cell grids over a regular x/y lattice: height (bilinear
interpolation), friction coefficient (nearest cell), and a 2-component
conveyor surface velocity (nearest cell). Queries outside the grid clamp to
the border cell. Generation is deterministic in (kind, terrain_factor, seed).

The rough generator uses gradient (Perlin) noise with fractional-octave
blending: one full octave plus a second octave weighted by the fractional
octave count, persistence 0.45, lacunarity drawn uniformly from [1, 5].
These knobs, like the height scale mapping terrain_factor 1.0 to a 0.10 m
peak-to-peak, are configuration defaults, not reproductions of any
particular generator.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .backend import njit

TERRAIN_KINDS = (
    "flat",
    "rough",
    "discrete_rough",
    "step",
    "cliff",
    "slippery",
    "conveyor",
)

MAGIC = b"LFTR"
FORMAT_VERSION = 1

# factor-1.0 scales (m or m/s)
ROUGH_HEIGHT_SCALE = 0.10
DISCRETE_HEIGHT_SCALE = 0.08
CLIFF_DEPTH_SCALE = 0.25
STEP_HEIGHTS = (0.025, 0.05, 0.075)
CONVEYOR_SPEED_SCALE = 0.5
SLIPPERY_MU = 0.22


class TerrainError(ValueError):
    pass


@dataclass
class Terrain:
    kind: str
    terrain_factor: float
    cell_size: float
    origin: np.ndarray  # world (x, y) of cell (0, 0) center
    height: np.ndarray  # (nx, ny) float64, meters
    friction: np.ndarray  # (nx, ny) float64
    conveyor: np.ndarray  # (nx, ny, 2) float64, m/s
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.height.shape

    def sample_height(self, x, y):
        return sample_height(
            self.height, self.origin[0], self.origin[1], self.cell_size, x, y
        )

    def sample_friction(self, x, y):
        return sample_nearest(
            self.friction, self.origin[0], self.origin[1], self.cell_size, x, y
        )

    def sample_conveyor(self, x, y):
        nx, ny = self.height.shape
        ix, iy = _nearest_cell(
            nx, ny, self.origin[0], self.origin[1], self.cell_size, x, y
        )
        return self.conveyor[ix, iy].copy()


@njit(cache=True)
def sample_height(grid, x0, y0, cell, x, y):
    """Bilinear height with border clamping."""
    nx, ny = grid.shape
    fx = (x - x0) / cell
    fy = (y - y0) / cell
    if fx < 0.0:
        fx = 0.0
    elif fx > nx - 1.0:
        fx = nx - 1.0
    if fy < 0.0:
        fy = 0.0
    elif fy > ny - 1.0:
        fy = ny - 1.0
    i0 = int(fx)
    j0 = int(fy)
    if i0 > nx - 2:
        i0 = nx - 2
    if j0 > ny - 2:
        j0 = ny - 2
    if i0 < 0:
        i0 = 0
    if j0 < 0:
        j0 = 0
    tx = fx - i0
    ty = fy - j0
    h00 = grid[i0, j0]
    h10 = grid[i0 + 1, j0]
    h01 = grid[i0, j0 + 1]
    h11 = grid[i0 + 1, j0 + 1]
    return (
        h00 * (1.0 - tx) * (1.0 - ty)
        + h10 * tx * (1.0 - ty)
        + h01 * (1.0 - tx) * ty
        + h11 * tx * ty
    )


@njit(cache=True)
def _nearest_cell(nx, ny, x0, y0, cell, x, y):
    ix = int(np.floor((x - x0) / cell + 0.5))
    iy = int(np.floor((y - y0) / cell + 0.5))
    if ix < 0:
        ix = 0
    elif ix > nx - 1:
        ix = nx - 1
    if iy < 0:
        iy = 0
    elif iy > ny - 1:
        iy = ny - 1
    return ix, iy


@njit(cache=True)
def sample_nearest(grid, x0, y0, cell, x, y):
    nx, ny = grid.shape
    ix, iy = _nearest_cell(nx, ny, x0, y0, cell, x, y)
    return grid[ix, iy]


@njit(cache=True)
def sample_height_batch(grid, x0, y0, cell, xs, ys):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = sample_height(grid, x0, y0, cell, xs[i], ys[i])
    return out


@njit(cache=True)
def sample_nearest_batch(grid, x0, y0, cell, xs, ys):
    nx, ny = grid.shape
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        ix, iy = _nearest_cell(nx, ny, x0, y0, cell, xs[i], ys[i])
        out[i] = grid[ix, iy]
    return out


@njit(cache=True)
def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


@njit(cache=True)
def _grad2(h, x, y):
    # 8 gradient directions
    h = h & 7
    if h == 0:
        return x + y
    elif h == 1:
        return x - y
    elif h == 2:
        return -x + y
    elif h == 3:
        return -x - y
    elif h == 4:
        return x
    elif h == 5:
        return -x
    elif h == 6:
        return y
    else:
        return -y


@njit(cache=True)
def _perlin_value(perm, x, y):
    xi = int(np.floor(x)) & 255
    yi = int(np.floor(y)) & 255
    xf = x - np.floor(x)
    yf = y - np.floor(y)
    u = _fade(xf)
    v = _fade(yf)
    aa = perm[perm[xi] + yi]
    ab = perm[perm[xi] + yi + 1]
    ba = perm[perm[xi + 1] + yi]
    bb = perm[perm[xi + 1] + yi + 1]
    x1 = _grad2(aa, xf, yf) + u * (_grad2(ba, xf - 1.0, yf) - _grad2(aa, xf, yf))
    x2 = _grad2(ab, xf, yf - 1.0) + u * (
        _grad2(bb, xf - 1.0, yf - 1.0) - _grad2(ab, xf, yf - 1.0)
    )
    return x1 + v * (x2 - x1)


@njit(cache=True)
def _perlin_grid(perm, nx, ny, x0, y0, cell, freq, lacunarity, octave_frac, gain):
    out = np.empty((nx, ny))
    for i in range(nx):
        x = (x0 + i * cell) * freq
        for j in range(ny):
            y = (y0 + j * cell) * freq
            v = _perlin_value(perm, x, y)
            if octave_frac > 0.0:
                v += octave_frac * gain * _perlin_value(
                    perm, x * lacunarity + 37.1, y * lacunarity + 11.7
                )
            out[i, j] = v
    return out


def _permutation_table(rng):
    p = rng.permutation(256).astype(np.int64)
    return np.concatenate([p, p, p[:2]])


def _grids(nx, ny, friction):
    height = np.zeros((nx, ny))
    fric = np.full((nx, ny), friction)
    conveyor = np.zeros((nx, ny, 2))
    return height, fric, conveyor


def _cell_coords(nx, ny, x0, y0, cell):
    xs = x0 + cell * np.arange(nx)
    ys = y0 + cell * np.arange(ny)
    return xs[:, None], ys[None, :]


def generate(
    kind,
    terrain_factor,
    seed,
    *,
    cell_size=0.05,
    length=24.0,
    width=8.0,
    x_start=-4.0,
    friction=0.8,
    base_frequency=1.4,
    spawn_radius=0.4,
) -> Terrain:
    """Build a terrain deterministically from (kind, terrain_factor, seed)."""
    if kind not in TERRAIN_KINDS:
        raise TerrainError(f"unknown terrain kind {kind!r}; expected one of {TERRAIN_KINDS}")
    if terrain_factor < 0:
        raise TerrainError("terrain_factor must be >= 0")
    rng = np.random.default_rng(seed)
    nx = int(round(length / cell_size)) + 1
    ny = int(round(width / cell_size)) + 1
    x0 = x_start
    y0 = -width / 2.0
    height, fric, conveyor = _grids(nx, ny, friction)
    meta = {}

    if kind == "rough":
        perm = _permutation_table(rng)
        lacunarity = rng.uniform(1.0, 5.0)
        base = _perlin_grid(
            perm, nx, ny, x0, y0, cell_size, base_frequency, lacunarity, 0.5, 0.45
        )
        base -= base.mean()
        ptp = base.max() - base.min()
        if ptp > 0:
            base /= ptp
        base *= _spawn_blend(nx, ny, x0, y0, cell_size, spawn_radius)
        height = terrain_factor * ROUGH_HEIGHT_SCALE * base
        meta["lacunarity"] = float(lacunarity)
    elif kind == "discrete_rough":
        base = np.zeros((nx, ny))
        n_boxes = 70
        for _ in range(n_boxes):
            cx = rng.uniform(x0 + 1.0, x0 + length - 1.0)
            cy = rng.uniform(y0 + 0.5, y0 + width - 0.5)
            sx = rng.uniform(0.2, 0.6)
            sy = rng.uniform(0.2, 0.6)
            h = rng.uniform(0.3, 1.0)
            if abs(cx) < spawn_radius + sx and abs(cy) < spawn_radius + sy:
                continue
            xs, ys = _cell_coords(nx, ny, x0, y0, cell_size)
            mask = (np.abs(xs - cx) < sx / 2) & (np.abs(ys - cy) < sy / 2)
            base[mask] = np.maximum(base[mask], h)
        height = terrain_factor * DISCRETE_HEIGHT_SCALE * base
    elif kind == "step":
        xs, _ = _cell_coords(nx, ny, x0, y0, cell_size)
        for k, h in enumerate(STEP_HEIGHTS):
            lo = 2.0 + 2.0 * k
            mask = (xs >= lo) & (xs < lo + 0.8)
            height += terrain_factor * h * mask
        meta["step_region"] = (1.5, 2.0 + 2.0 * (len(STEP_HEIGHTS) - 1) + 1.3)
    elif kind == "cliff":
        xs, _ = _cell_coords(nx, ny, x0, y0, cell_size)
        height -= terrain_factor * CLIFF_DEPTH_SCALE * (xs >= 3.0)
    elif kind == "slippery":
        xs, _ = _cell_coords(nx, ny, x0, y0, cell_size)
        band = (xs >= 2.0) & (xs < 5.0)
        fric = np.where(band, SLIPPERY_MU, fric)
        meta["slip_region"] = (2.0, 5.0)
    elif kind == "conveyor":
        xs, _ = _cell_coords(nx, ny, x0, y0, cell_size)
        speed = CONVEYOR_SPEED_SCALE * terrain_factor
        for k in range(3):
            lo = 1.5 + 2.0 * k
            band = (xs >= lo) & (xs < lo + 1.0)
            conveyor[..., 0] += np.where(band, speed * (1.0 if k % 2 == 0 else -1.0), 0.0)
    # flat: zero heights, uniform friction, zero conveyor

    return Terrain(
        kind=kind,
        terrain_factor=float(terrain_factor),
        cell_size=float(cell_size),
        origin=np.array([x0, y0]),
        height=np.ascontiguousarray(height),
        friction=np.ascontiguousarray(fric),
        conveyor=np.ascontiguousarray(conveyor),
        seed=int(seed),
        meta=meta,
    )


def _spawn_blend(nx, ny, x0, y0, cell, radius):
    """Smoothly flatten a disc around the origin so the robot spawns level."""
    if radius <= 0:
        return np.ones((nx, ny))
    xs, ys = _cell_coords(nx, ny, x0, y0, cell)
    r = np.sqrt(xs**2 + ys**2)
    ramp = np.clip((r - radius) / 0.3, 0.0, 1.0)
    return ramp * ramp * (3.0 - 2.0 * ramp)


def save_terrain(terrain: Terrain, path):
    """LFTR binary grid file.

    Layout (little-endian): magic "LFTR", u16 version, u8 kind index,
    u8 pad, u32 nx, u32 ny, f64 cell_size, f64 origin_x, f64 origin_y,
    f64 terrain_factor, then row-major f32 grids: height (nx*ny),
    friction (nx*ny), conveyor (nx*ny*2, xy interleaved), u32 CRC32 of
    all preceding bytes.
    """
    nx, ny = terrain.height.shape
    head = MAGIC + struct.pack(
        "<HBBIIdddd",
        FORMAT_VERSION,
        TERRAIN_KINDS.index(terrain.kind),
        0,
        nx,
        ny,
        terrain.cell_size,
        terrain.origin[0],
        terrain.origin[1],
        terrain.terrain_factor,
    )
    body = (
        terrain.height.astype("<f4").tobytes()
        + terrain.friction.astype("<f4").tobytes()
        + terrain.conveyor.astype("<f4").tobytes()
    )
    blob = head + body
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(blob)


def load_terrain(path) -> Terrain:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 48 or blob[:4] != MAGIC:
        raise TerrainError(f"{path}: not a terrain grid file (bad magic)")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise TerrainError(f"{path}: CRC mismatch, file corrupt")
    version, kind_idx, _pad, nx, ny, cell, ox, oy, factor = struct.unpack(
        "<HBBIIdddd", blob[4:48]
    )
    if version != FORMAT_VERSION:
        raise TerrainError(f"{path}: unsupported terrain format version {version}")
    n = nx * ny
    data = np.frombuffer(blob[48:-4], dtype="<f4")
    if data.size != 4 * n:
        raise TerrainError(f"{path}: grid payload size mismatch")
    height = data[:n].reshape(nx, ny).astype(float)
    fric = data[n : 2 * n].reshape(nx, ny).astype(float)
    conveyor = data[2 * n :].reshape(nx, ny, 2).astype(float)
    return Terrain(
        kind=TERRAIN_KINDS[kind_idx],
        terrain_factor=float(factor),
        cell_size=float(cell),
        origin=np.array([ox, oy], dtype=float),
        height=np.ascontiguousarray(height),
        friction=np.ascontiguousarray(fric),
        conveyor=np.ascontiguousarray(conveyor),
    )
