"""Dirichlet-zero scalar fields on boxes.

A field is stored by its sine coefficients

    u(x) = sum_k a_k prod_i sin(k_i pi x_i / l_i),   k_i = 1..n_i,

and viewed nodally on the uniform interior grid x_i = j l_i / (n_i + 1).
The DST-I maps between the two views exactly, so any nodal data defines
a field (this is how truncations and positive parts are represented).

All integrals are nodal quadratures with weight prod_i h_i; the boundary
nodes carry zero values and are omitted.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dstn


@dataclass(frozen=True)
class BoxDomain:
    """Box (0, l_1) x ... x (0, l_d) with n_i interior nodes per axis."""

    dim: int
    lengths: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        resolution = tuple(int(v) for v in np.atleast_1d(self.resolution))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "resolution", resolution)
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if len(lengths) != self.dim or len(resolution) != self.dim:
            raise ValueError(
                f"dim={self.dim} does not match lengths {lengths} / resolution {resolution}")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ValueError(f"lengths must be positive, got {lengths}")
        if any(n < 8 for n in resolution):
            raise ValueError(f"resolution must be >= 8 per axis, got {resolution}")

    @classmethod
    def interval(cls, length: float = np.pi, n: int = 63) -> "BoxDomain":
        return cls(1, (length,), (n,))

    @classmethod
    def box(cls, lengths, resolution) -> "BoxDomain":
        lengths = tuple(np.atleast_1d(lengths))
        resolution = tuple(np.atleast_1d(resolution))
        if len(resolution) == 1 and len(lengths) > 1:
            resolution = resolution * len(lengths)
        return cls(len(lengths), lengths, resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(l / (n + 1) for l, n in zip(self.lengths, self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def mode_norm2(self) -> float:
        """Squared L2 norm of every product sine mode, |Omega| / 2^d."""
        return self.measure / 2.0**self.dim

    def axes(self) -> list[np.ndarray]:
        return [h * np.arange(1, n + 1) for h, n in zip(self.spacing, self.resolution)]

    def nodes(self) -> tuple[np.ndarray, ...]:
        """Interior node coordinates as an ij-indexed meshgrid."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def mode_numbers(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[np.arange(1, n + 1) for n in self.resolution],
                                 indexing="ij"))

    def eigenvalues(self) -> np.ndarray:
        """Dirichlet Laplacian eigenvalue attached to each sine coefficient
        (cached, read-only)."""
        return _eigenvalue_grid(self)

    def refined(self, factor: int = 2) -> "BoxDomain":
        return BoxDomain(self.dim, self.lengths,
                         tuple(factor * (n + 1) - 1 for n in self.resolution))


DENSE_MAX = 512  # axes up to this length use cached sine matrices


@lru_cache(maxsize=64)
def sine_matrix(n_out: int, n_in: int) -> np.ndarray:
    """S[j, k] = sin(pi (j+1)(k+1) / (n_out+1)): coefficients -> nodes."""
    j = np.arange(1, n_out + 1)[:, None]
    k = np.arange(1, n_in + 1)[None, :]
    mat = np.sin(np.pi * j * k / (n_out + 1))
    mat.setflags(write=False)
    return mat


def _along(x: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    return np.swapaxes(np.swapaxes(x, axis, -1) @ mat.T, axis, -1)


@lru_cache(maxsize=64)
def _eigenvalue_grid(domain: BoxDomain) -> np.ndarray:
    lam = np.zeros(domain.resolution)
    for k, l in zip(domain.mode_numbers(), domain.lengths):
        lam = lam + (k * np.pi / l) ** 2
    lam.setflags(write=False)
    return lam


def coeffs_to_nodal(coeffs: np.ndarray, axes=None, out_shape=None) -> np.ndarray:
    """Inverse sine transform over `axes` (default: all).

    With `out_shape` the coefficients are synthesized on a finer grid of
    that many interior nodes per transformed axis (zero padding).
    """
    axes = tuple(range(coeffs.ndim)) if axes is None else tuple(a % coeffs.ndim for a in axes)
    out_shape = tuple(coeffs.shape[a] for a in axes) if out_shape is None else tuple(out_shape)
    if max(out_shape) > DENSE_MAX:
        shape = list(coeffs.shape)
        for a, m in zip(axes, out_shape):
            shape[a] = m
        pad = np.zeros(shape)
        pad[tuple(slice(0, n) for n in coeffs.shape)] = coeffs
        return dstn(pad, type=1, axes=axes) / 2.0 ** len(axes)
    x = coeffs
    for a, m in zip(axes, out_shape):
        x = _along(x, sine_matrix(m, x.shape[a]), a)
    return x


def nodal_to_coeffs(values: np.ndarray, axes=None, keep=None) -> np.ndarray:
    """Forward sine transform over `axes`; `keep` truncates to the lowest
    modes per axis (the adjoint of fine-grid synthesis)."""
    axes = tuple(range(values.ndim)) if axes is None else tuple(a % values.ndim for a in axes)
    keep = tuple(values.shape[a] for a in axes) if keep is None else tuple(keep)
    if max(values.shape[a] for a in axes) > DENSE_MAX:
        scale = np.prod([values.shape[a] + 1 for a in axes])
        full = dstn(values, type=1, axes=axes) / scale
        index = [slice(None)] * values.ndim
        for a, k in zip(axes, keep):
            index[a] = slice(0, k)
        return full[tuple(index)]
    x = values
    for a, k in zip(axes, keep):
        n = x.shape[a]
        x = _along(x, (2.0 / (n + 1)) * sine_matrix(n, k).T, a)
    return x


class Field:
    """Immutable Dirichlet-zero field on a BoxDomain."""

    def __init__(self, domain: BoxDomain, coeffs):
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.shape != domain.shape:
            raise ValueError(f"coefficient shape {coeffs.shape} != domain shape {domain.shape}")
        coeffs.setflags(write=False)
        self.domain = domain
        self._coeffs = coeffs

    @classmethod
    def from_nodal(cls, domain: BoxDomain, values) -> "Field":
        values = np.array(values, dtype=float)
        if values.shape != domain.shape:
            raise ValueError(f"nodal shape {values.shape} != domain shape {domain.shape}")
        out = cls(domain, nodal_to_coeffs(values))
        values.setflags(write=False)
        out.__dict__["nodal"] = values
        return out

    @classmethod
    def from_function(cls, domain: BoxDomain, func) -> "Field":
        return cls.from_nodal(domain, func(*domain.nodes()))

    @classmethod
    def zeros(cls, domain: BoxDomain) -> "Field":
        return cls(domain, np.zeros(domain.shape))

    @classmethod
    def mode(cls, domain: BoxDomain, index, amplitude: float = 1.0) -> "Field":
        """Single product sine mode with 1-based mode numbers `index`."""
        c = np.zeros(domain.shape)
        c[tuple(i - 1 for i in np.atleast_1d(index))] = amplitude
        return cls(domain, c)

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @cached_property
    def nodal(self) -> np.ndarray:
        values = coeffs_to_nodal(self._coeffs)
        values.setflags(write=False)
        return values

    def _check(self, other: "Field"):
        if other.domain != self.domain:
            raise ValueError("fields live on different domains")

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.domain, self._coeffs + other._coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return Field(self.domain, self._coeffs - other._coeffs)
        return NotImplemented

    def __neg__(self):
        return Field(self.domain, -self._coeffs)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Field(self.domain, float(scalar) * self._coeffs)
        return NotImplemented

    __rmul__ = __mul__

    def __repr__(self):
        return f"Field(domain={self.domain}, l2={l2_norm(self):.6g})"

    def inner(self, other: "Field") -> float:
        """L2 inner product (exact for the sine expansions)."""
        self._check(other)
        return float(np.sum(self._coeffs * other._coeffs) * self.domain.mode_norm2)

    def h1_inner(self, other: "Field") -> float:
        """H_0^1 inner product (grad u, grad v)."""
        self._check(other)
        lam = self.domain.eigenvalues()
        return float(np.sum(lam * self._coeffs * other._coeffs) * self.domain.mode_norm2)


def _finite_nodal(u: Field) -> np.ndarray:
    values = u.nodal
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("field has non-finite nodal values")
    return values


def integrate(domain: BoxDomain, values: np.ndarray) -> float:
    """Nodal quadrature of `values` over the box."""
    return float(np.sum(values) * domain.cell_volume)


def lp_norm(u: Field, m: float) -> float:
    """L^m norm by nodal quadrature; m = inf gives the nodal max."""
    if not (m == np.inf or m >= 1):
        raise ValueError(f"exponent must be >= 1 or inf, got {m}")
    values = np.abs(_finite_nodal(u))
    top = float(values.max(initial=0.0))
    if m == np.inf or top == 0.0:
        return top
    # scaled to keep |u|^m representable for large m
    return top * (np.sum((values / top) ** m) * u.domain.cell_volume) ** (1.0 / m)


def l2_norm(u: Field) -> float:
    """Spectral L2 norm; agrees with the nodal quadrature to rounding."""
    return float(np.sqrt(np.sum(u.coeffs**2) * u.domain.mode_norm2))


def h1_seminorm(u: Field) -> float:
    lam = u.domain.eigenvalues()
    return float(np.sqrt(np.sum(lam * u.coeffs**2) * u.domain.mode_norm2))


def truncate(u: Field, k: float) -> Field:
    """T_k u: identity where |u| <= k, k * sign(u) elsewhere."""
    if not k > 0:
        raise ValueError(f"truncation level must be positive, got {k}")
    if np.isinf(k):
        return u
    return Field.from_nodal(u.domain, np.clip(u.nodal, -k, k))


def positive_part(u: Field) -> Field:
    return Field.from_nodal(u.domain, np.maximum(u.nodal, 0.0))


def negative_part(u: Field) -> Field:
    return Field.from_nodal(u.domain, -np.minimum(u.nodal, 0.0))


def phi_km(s, k: float, m: float):
    """Primitive of T_k(r)^(2m-1) from 0 to s, for s >= 0.

    Equals s^(2m)/(2m) below the knee and continues linearly with slope
    k^(2m-1) beyond it.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("phi_km is defined for s >= 0 only")
    if not k > 0:
        raise ValueError(f"truncation level must be positive, got {k}")
    if m < 1:
        raise ValueError(f"exponent must be >= 1, got {m}")
    if np.isinf(k):
        out = s ** (2 * m) / (2 * m)
    else:
        below = np.minimum(s, k)
        out = below ** (2 * m) / (2 * m) + np.maximum(s - k, 0.0) * k ** (2 * m - 1)
    return out if out.ndim else float(out)


def big_phi(u: Field, k: float, m: float) -> float:
    """Integral of phi_km(u(x)) over the domain; u must be nonnegative."""
    return integrate(u.domain, phi_km(_finite_nodal(u), k, m))


# -- serialization ---------------------------------------------------------

def to_bytes(u: Field) -> bytes:
    """Little-endian layout: dim, resolution[dim] (int64), lengths[dim]
    (float64), then the coefficients in row-major order (float64)."""
    d = u.domain
    header = struct.pack(f"<q{d.dim}q{d.dim}d", d.dim, *d.resolution, *d.lengths)
    return header + np.ascontiguousarray(u.coeffs, dtype="<f8").tobytes(order="C")


def from_bytes(blob: bytes) -> Field:
    (dim,) = struct.unpack_from("<q", blob, 0)
    offset = 8
    resolution = struct.unpack_from(f"<{dim}q", blob, offset)
    offset += 8 * dim
    lengths = struct.unpack_from(f"<{dim}d", blob, offset)
    offset += 8 * dim
    domain = BoxDomain(dim, lengths, resolution)
    count = int(np.prod(resolution))
    coeffs = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    if offset + 8 * count != len(blob):
        raise ValueError("trailing or missing bytes in field payload")
    return Field(domain, coeffs.reshape(resolution))


def save_field(u: Field, path) -> None:
    Path(path).write_bytes(to_bytes(u))


def load_field(path) -> Field:
    return from_bytes(Path(path).read_bytes())


def write_csv(u: Field, path) -> None:
    """Debug dump: one row per coefficient, 1-based mode numbers joined by ':'."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "coefficient"])
        for idx in np.ndindex(*u.domain.shape):
            writer.writerow([":".join(str(i + 1) for i in idx), repr(float(u.coeffs[idx]))])


@dataclass(frozen=True)
class NormLadderRung:
    """One (m, k) evaluation of a truncated norm or potential."""

    m: float
    k: float
    value: float
    label: str = dc_field(default="")

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("rung values are nonnegative")


def iter_fields(blob: bytes):
    """Fields from a concatenation of `to_bytes` payloads."""
    offset = 0
    while offset < len(blob):
        (dim,) = struct.unpack_from("<q", blob, offset)
        resolution = struct.unpack_from(f"<{dim}q", blob, offset + 8)
        size = 8 + 16 * dim + 8 * int(np.prod(resolution))
        yield from_bytes(blob[offset:offset + size])
        offset += size
