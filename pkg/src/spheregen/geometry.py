"""Equirectangular geometry: coordinate conversions, circular padding,
symmetry transforms, NFOV projection, and the concentration weight map.

Conventions: an equirectangular image is a [C, H, W] tensor with W = 2H.
Pixel (i, j) covers longitude theta_j = 2*pi*(j+0.5)/W - pi and colatitude
phi_i = pi*(i+0.5)/H. The gravity axis is -z, so row 0 is the zenith.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


class GeometryError(ValueError):
    """Domain error for geometry operations."""


@dataclass(frozen=True)
class EquirectGrid:
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width != 2 * self.height:
            raise GeometryError(f"grid must satisfy W = 2H, got {self.height}x{self.width}")

    def angles(self, i, j):
        theta = 2.0 * math.pi * (j + 0.5) / self.width - math.pi
        phi = math.pi * (i + 0.5) / self.height
        return theta, phi


def pixel_to_direction(i: int, j: int, g: EquirectGrid) -> torch.Tensor:
    """Unit direction of the center of pixel (i, j)."""
    if not (0 <= i < g.height and 0 <= j < g.width):
        raise GeometryError(f"pixel ({i}, {j}) outside {g.height}x{g.width} grid")
    theta, phi = g.angles(i, j)
    return torch.tensor(
        [math.sin(phi) * math.cos(theta), math.sin(phi) * math.sin(theta), math.cos(phi)],
        dtype=torch.float64,
    )


def direction_to_pixel(d: torch.Tensor, g: EquirectGrid) -> tuple[int, int]:
    """Pixel whose center is nearest to direction d (inverse of pixel_to_direction)."""
    x, y, z = (float(v) for v in d)
    theta = math.atan2(y, x)
    phi = math.acos(max(-1.0, min(1.0, z / math.sqrt(x * x + y * y + z * z))))
    j = int(math.floor((theta + math.pi) * g.width / (2.0 * math.pi)))
    i = int(math.floor(phi * g.height / math.pi))
    return min(max(i, 0), g.height - 1), j % g.width


def grid_directions(g: EquirectGrid, dtype=torch.float64) -> torch.Tensor:
    """[H, W, 3] unit directions of all pixel centers."""
    i = torch.arange(g.height, dtype=dtype)
    j = torch.arange(g.width, dtype=dtype)
    phi = math.pi * (i + 0.5) / g.height
    theta = 2.0 * math.pi * (j + 0.5) / g.width - math.pi
    sin_phi = torch.sin(phi)[:, None]
    return torch.stack(
        [
            sin_phi * torch.cos(theta)[None, :],
            sin_phi * torch.sin(theta)[None, :],
            torch.cos(phi)[:, None].expand(g.height, g.width),
        ],
        dim=-1,
    )


def circular_pad(x: torch.Tensor, p: int) -> torch.Tensor:
    """Pad the last (longitude) axis by wrapping p columns from each edge."""
    w = x.shape[-1]
    if p < 0 or p > w:
        raise GeometryError(f"pad width {p} outside [0, {w}]")
    if p == 0:
        return x
    return torch.cat([x[..., w - p:], x, x[..., :p]], dim=-1)


def _shift_columns(degrees: float, w: int) -> int:
    k = degrees * w / 360.0
    k_int = round(k)
    if abs(k - k_int) > 1e-9:
        raise GeometryError(f"{degrees} deg shift is {k} columns on width {w}; must be integral")
    return k_int % w


def circular_shift(x: torch.Tensor, degrees: float) -> torch.Tensor:
    """Rotate about the gravity axis: column j of the output is column
    (j - k) mod W of the input, k = degrees * W / 360."""
    k = _shift_columns(degrees, x.shape[-1])
    return torch.roll(x, shifts=k, dims=-1)


def flip_about_longitude(x: torch.Tensor, axis_degrees: float) -> torch.Tensor:
    """Mirror through the vertical plane at longitude `axis_degrees`:
    a flip about theta = 0 (j -> W-1-j) composed with a 2*axis shift."""
    _shift_columns(2.0 * axis_degrees, x.shape[-1])  # validate integrality
    return circular_shift(torch.flip(x, dims=[-1]), 2.0 * axis_degrees)


@dataclass(frozen=True)
class SymmetryType:
    name: str
    kind: str  # "rotation" | "plane"
    angle: float  # rotation angle or flip axis, degrees
    order: int  # smallest n with T^n = identity

    def __post_init__(self):
        if self.kind not in ("rotation", "plane"):
            raise GeometryError(f"unknown symmetry kind {self.kind!r}")


def default_registry() -> list[SymmetryType]:
    """The five supported symmetry types, in fixed parameter order."""
    return [
        SymmetryType("rot90", "rotation", 90.0, 4),
        SymmetryType("rot180", "rotation", 180.0, 2),
        SymmetryType("rot270", "rotation", 270.0, 4),
        SymmetryType("plane0", "plane", 0.0, 2),
        SymmetryType("plane90", "plane", 90.0, 2),
    ]


def symmetry_transform(x: torch.Tensor, t: SymmetryType) -> torch.Tensor:
    """Apply one registry transform to the longitude axis of x."""
    if t.kind == "rotation":
        return circular_shift(x, t.angle)
    return flip_about_longitude(x, t.angle)


def transforms_compatible(width: int, registry: list[SymmetryType]) -> bool:
    """True when every registry transform is an exact column permutation."""
    for t in registry:
        deg = t.angle if t.kind == "rotation" else 2.0 * t.angle
        if abs(deg * width / 360.0 - round(deg * width / 360.0)) > 1e-9:
            return False
    return True


@dataclass(frozen=True)
class ViewSpec:
    """NFOV crop: camera center direction, square field of view, roll."""

    center: tuple[float, float, float]
    fov_deg: float
    aspect: float = 1.0
    roll: float = 0.0
    fov_range: tuple[float, float] = field(default=(30.0, 120.0), repr=False)

    def __post_init__(self):
        n = math.sqrt(sum(c * c for c in self.center))
        if abs(n - 1.0) > 1e-6:
            raise GeometryError(f"view center must be a unit vector, |c| = {n}")
        lo, hi = self.fov_range
        if not (lo <= self.fov_deg <= hi):
            raise GeometryError(f"fov {self.fov_deg} outside [{lo}, {hi}]")
        if self.aspect <= 0:
            raise GeometryError("aspect must be positive")


def camera_basis(view: ViewSpec) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(forward, right, up) orthonormal frame for the view.

    +z is up in the world (gravity points along -z); near the poles the
    frame degenerates, so we fall back to the +y right vector there.
    """
    f = torch.tensor(view.center, dtype=torch.float64)
    up_world = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    r = torch.linalg.cross(up_world, f)
    if torch.linalg.norm(r) < 1e-8:
        r = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
    r = r / torch.linalg.norm(r)
    u = torch.linalg.cross(f, r)
    if abs(view.roll) > 0:
        cr, sr = math.cos(view.roll), math.sin(view.roll)
        r, u = cr * r + sr * u, -sr * r + cr * u
    return f, r, u


def view_mask(g: EquirectGrid, view: ViewSpec) -> torch.Tensor:
    """[H, W] float mask: 1 where the pixel direction is inside the frustum."""
    if view.fov_deg <= 0:
        raise GeometryError("degenerate frustum")
    f, r, u = camera_basis(view)
    d = grid_directions(g)
    t = d @ f
    half = math.tan(math.radians(view.fov_deg) / 2.0)
    uu = d @ r
    vv = d @ u
    inside = (t > 0) & (uu.abs() <= half * t * view.aspect) & (vv.abs() <= half * t)
    return inside.to(torch.float32)


def render_perspective(src: torch.Tensor, view: ViewSpec, size: int) -> torch.Tensor:
    """Render the NFOV perspective image (size x size) from an equirect
    panorama by bilinear sampling in longitude/colatitude."""
    c, h, w = src.shape
    f, r, u = camera_basis(view)
    half = math.tan(math.radians(view.fov_deg) / 2.0)
    coords = (torch.arange(size, dtype=torch.float64) + 0.5) / size * 2.0 - 1.0
    uu = coords[None, :] * half * view.aspect
    vv = -coords[:, None] * half  # image rows run top to bottom
    d = f[None, None, :] + uu[..., None] * r[None, None, :] + vv[..., None] * u[None, None, :]
    d = d / torch.linalg.norm(d, dim=-1, keepdim=True)
    theta = torch.atan2(d[..., 1], d[..., 0])
    phi = torch.acos(d[..., 2].clamp(-1.0, 1.0))
    return _bilinear_equirect(src, theta, phi)


def _bilinear_equirect(src: torch.Tensor, theta: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """Sample an equirect [C, H, W] image at (theta, phi), wrapping longitude
    and clamping colatitude."""
    c, h, w = src.shape
    x = (theta + math.pi) * w / (2.0 * math.pi) - 0.5
    y = phi * h / math.pi - 0.5
    x0 = torch.floor(x)
    y0 = torch.floor(y).clamp(0, h - 2)
    wx = (x - x0).to(src.dtype)
    wy = (y - y0).to(src.dtype)
    j0 = (x0.long() % w)
    j1 = (j0 + 1) % w
    i0 = y0.long()
    i1 = i0 + 1
    flat = src.reshape(c, -1)

    def gather(ii, jj):
        return flat[:, (ii * w + jj).reshape(-1)].reshape(c, *ii.shape)

    top = gather(i0, j0) * (1 - wx) + gather(i0, j1) * wx
    bot = gather(i1, j0) * (1 - wx) + gather(i1, j1) * wx
    return top * (1 - wy) + bot * wy


def _bilinear_plane(img: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Bilinear sample of a planar [C, S, S] image at continuous (x, y) pixel
    coordinates, clamped at the border."""
    c, hh, ww = img.shape
    x = x.clamp(0, ww - 1)
    y = y.clamp(0, hh - 1)
    x0 = torch.floor(x).clamp(0, ww - 2)
    y0 = torch.floor(y).clamp(0, hh - 2)
    wx = (x - x0).to(img.dtype)
    wy = (y - y0).to(img.dtype)
    j0, i0 = x0.long(), y0.long()
    flat = img.reshape(c, -1)

    def gather(ii, jj):
        return flat[:, (ii * ww + jj).reshape(-1)].reshape(c, *ii.shape)

    top = gather(i0, j0) * (1 - wx) + gather(i0, j0 + 1) * wx
    bot = gather(i0 + 1, j0) * (1 - wx) + gather(i0 + 1, j0 + 1) * wx
    return top * (1 - wy) + bot * wy


def nfov_to_equirect(
    src: torch.Tensor,
    view: ViewSpec,
    fill: float = 0.5,
    persp_size: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Crop an NFOV view from a panorama and reproject it back.

    Renders the perspective crop, then resamples it (bilinear in the
    perspective plane) onto the equirect grid; everything outside the
    frustum is set to `fill`. Returns (partial image, mask).
    """
    c, h, w = src.shape
    g = EquirectGrid(h, w)
    if persp_size is None:
        persp_size = h
    persp = render_perspective(src, view, persp_size)
    f, r, u = camera_basis(view)
    half = math.tan(math.radians(view.fov_deg) / 2.0)
    d = grid_directions(g)
    t = d @ f
    uu = d @ r
    vv = d @ u
    mask = (t > 0) & (uu.abs() <= half * t * view.aspect) & (vv.abs() <= half * t)
    safe_t = torch.where(t > 0, t, torch.ones_like(t))
    px = ((uu / safe_t) / (half * view.aspect) + 1.0) / 2.0 * persp_size - 0.5
    py = (1.0 - ((vv / safe_t) / half + 1.0) / 2.0) * persp_size - 0.5
    sampled = _bilinear_plane(persp, px, py)
    maskf = mask.to(src.dtype)
    partial = sampled * maskf[None] + fill * (1.0 - maskf[None])
    return partial, mask.to(torch.float32)


def mask_extract(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """The M operator: zero out pixels outside the mask (broadcast over
    channel and batch axes)."""
    if x.shape[-2:] != mask.shape[-2:]:
        raise GeometryError(f"mask {tuple(mask.shape)} does not match image {tuple(x.shape)}")
    return x * mask.to(x.dtype)


def weight_map(g: EquirectGrid, c, kappa: float, dtype=torch.float32) -> torch.Tensor:
    """Concentration weights w(v) = exp(kappa * <v, c>) over the pixel grid."""
    if not math.isfinite(kappa):
        raise GeometryError("kappa must be finite")
    c = torch.as_tensor(c, dtype=torch.float64)
    c = c / torch.linalg.norm(c)
    d = grid_directions(g)
    return torch.exp(kappa * (d @ c)).to(dtype)
