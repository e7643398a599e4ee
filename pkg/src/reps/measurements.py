"""Forward measurement operators A(x) and their vector-Jacobian products.

All operators accept x of shape (d,) or (n, d) and return measurements of
shape (m,) or (n, m); vjp maps a measurement-shaped cotangent back to state
shape.  Linear kinds expose a dense matrix (desk scale only) so closed-form
solvers and oracles can consume them directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "MeasurementModel",
    "Observation",
    "apply",
    "vjp",
    "observe",
    "make_task",
    "load_mask",
    "load_kernel",
    "gaussian_kernel",
]


def _as_batch(x, d, what="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"{what} has dimension {x.shape[0]}, expected {d}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != d:
            raise ValueError(f"{what} has trailing dimension {x.shape[1]}, expected {d}")
        return x, False
    raise ValueError(f"{what} must be 1-d or 2-d")


class MeasurementModel:
    """Base operator; subclasses implement _apply and _vjp on (n, d) batches."""

    kind = "abstract"
    linear = False

    def __init__(self, n_in: int, m_out: int, sigma_n: float):
        if sigma_n < 0.0:
            raise ValueError("sigma_n must be >= 0")
        self.n_in = int(n_in)
        self.m_out = int(m_out)
        self.sigma_n = float(sigma_n)

    def apply(self, x):
        xb, squeeze = _as_batch(x, self.n_in)
        out = self._apply(xb)
        return out[0] if squeeze else out

    def vjp(self, x, v):
        xb, sx = _as_batch(x, self.n_in)
        vb, sv = _as_batch(v, self.m_out, what="v")
        if xb.shape[0] != vb.shape[0]:
            if xb.shape[0] == 1:
                xb = np.broadcast_to(xb, (vb.shape[0], self.n_in))
            elif vb.shape[0] == 1:
                vb = np.broadcast_to(vb, (xb.shape[0], self.m_out))
            else:
                raise ValueError("x and v batch sizes differ")
        out = self._vjp(xb, vb)
        return out[0] if (sx and sv) else out

    def as_matrix(self) -> np.ndarray:
        """Dense (m, n) matrix for linear kinds."""
        if not self.linear:
            raise ValueError(f"operator kind {self.kind!r} is not linear")
        return self._apply(np.eye(self.n_in)).T


@dataclass
class Observation:
    """A measurement vector tied to the model that produced it."""

    y: np.ndarray
    model: MeasurementModel
    ground_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.shape[-1] != self.model.m_out:
            raise ValueError(
                f"y has dimension {self.y.shape[-1]}, model outputs {self.model.m_out}"
            )


class Identity(MeasurementModel):
    kind = "identity"
    linear = True

    def __init__(self, n: int, sigma_n: float):
        super().__init__(n, n, sigma_n)

    def _apply(self, xb):
        return xb.copy()

    def _vjp(self, xb, vb):
        return vb.copy()


class Mask(MeasurementModel):
    """Coordinate selection; the adjoint scatters back with zeros elsewhere."""

    kind = "mask"
    linear = True

    def __init__(self, n: int, indices, sigma_n: float):
        idx = np.asarray(indices, dtype=int)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("mask needs a non-empty 1-d index list")
        if np.any(idx < 0) or np.any(idx >= n) or len(np.unique(idx)) != idx.size:
            raise ValueError("mask indices must be unique and in range")
        super().__init__(n, idx.size, sigma_n)
        self.indices = np.sort(idx)

    def _apply(self, xb):
        return xb[:, self.indices]

    def _vjp(self, xb, vb):
        out = np.zeros_like(xb)
        out[:, self.indices] = vb
        return out


class Downsample(MeasurementModel):
    """Non-overlapping average pooling by an integer factor (1-D or 2-D)."""

    kind = "downsample"
    linear = True

    def __init__(self, dims, factor: int, sigma_n: float):
        self.factor = int(factor)
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        self.dims = _norm_dims(dims)
        for d in self.dims:
            if d % self.factor != 0:
                raise ValueError(f"dimension {d} not divisible by factor {self.factor}")
        n = int(np.prod(self.dims))
        self.out_dims = tuple(d // self.factor for d in self.dims)
        super().__init__(n, int(np.prod(self.out_dims)), sigma_n)

    def _apply(self, xb):
        n = xb.shape[0]
        f = self.factor
        if len(self.dims) == 1:
            return xb.reshape(n, self.out_dims[0], f).mean(axis=2)
        h, w = self.dims
        g = xb.reshape(n, h // f, f, w // f, f).mean(axis=(2, 4))
        return g.reshape(n, self.m_out)

    def _vjp(self, xb, vb):
        n = vb.shape[0]
        f = self.factor
        if len(self.dims) == 1:
            out = np.repeat(vb, f, axis=1) / f
            return out
        h, w = self.dims
        g = vb.reshape(n, h // f, w // f)
        out = np.repeat(np.repeat(g, f, axis=1), f, axis=2) / (f * f)
        return out.reshape(n, self.n_in)


class Convolve(MeasurementModel):
    """Circular convolution with a fixed kernel, materialized as a dense matrix.

    Desk-scale signals make the dense form exact and cheap, and the adjoint is
    just the transpose.
    """

    kind = "convolve"
    linear = True

    def __init__(self, dims, kernel, sigma_n: float):
        self.dims = _norm_dims(dims)
        kernel = np.asarray(kernel, dtype=float)
        if kernel.ndim != len(self.dims):
            raise ValueError(
                f"kernel rank {kernel.ndim} does not match signal rank {len(self.dims)}"
            )
        if any(k > d for k, d in zip(kernel.shape, self.dims)):
            raise ValueError("kernel larger than signal")
        self.kernel = kernel
        n = int(np.prod(self.dims))
        super().__init__(n, n, sigma_n)
        self._matrix = self._build_matrix()

    def _build_matrix(self):
        basis = np.eye(self.n_in)
        shaped = basis.reshape((self.n_in,) + self.dims)
        out = np.zeros_like(shaped)
        if len(self.dims) == 1:
            c = self.kernel.shape[0] // 2
            for t, tap in enumerate(self.kernel):
                out += tap * np.roll(shaped, c - t, axis=1)
        else:
            cr, cc = self.kernel.shape[0] // 2, self.kernel.shape[1] // 2
            for a in range(self.kernel.shape[0]):
                for b in range(self.kernel.shape[1]):
                    out += self.kernel[a, b] * np.roll(
                        np.roll(shaped, cr - a, axis=1), cc - b, axis=2
                    )
        return out.reshape(self.n_in, self.n_in).T  # column j = A e_j

    def _apply(self, xb):
        return xb @ self._matrix.T

    def _vjp(self, xb, vb):
        return vb @ self._matrix


class FourierMagnitude(MeasurementModel):
    """DFT magnitudes of the signal zero-padded to twice its length.

    The gradient at zero-magnitude bins is undefined; those bins contribute
    zero to the vjp via a 1e-12 magnitude floor (a subgradient choice).
    """

    kind = "fourier-magnitude"
    linear = False
    magnitude_floor = 1e-12

    def __init__(self, n: int, sigma_n: float):
        super().__init__(n, 2 * n, sigma_n)

    def _apply(self, xb):
        return np.abs(np.fft.fft(xb, n=self.m_out, axis=1))

    def _vjp(self, xb, vb):
        u = np.fft.fft(xb, n=self.m_out, axis=1)
        mag = np.abs(u)
        w = np.where(mag > self.magnitude_floor, vb * u / np.maximum(mag, self.magnitude_floor), 0.0)
        # adjoint of (zero-pad then F) is (F^H then truncate); F^H w = m * ifft(w)
        full = self.m_out * np.fft.ifft(w, axis=1)
        return full[:, : self.n_in].real


class HdrCompress(MeasurementModel):
    """Range compression clip(x/2, -1, 1).

    Clipped coordinates get gradient 0; the boundary uses the interior
    one-sided derivative 1/2.
    """

    kind = "hdr-compress"
    linear = False

    def __init__(self, n: int, sigma_n: float):
        super().__init__(n, n, sigma_n)

    def _apply(self, xb):
        return np.clip(xb / 2.0, -1.0, 1.0)

    def _vjp(self, xb, vb):
        return vb * np.where(np.abs(xb) <= 2.0, 0.5, 0.0)


class Custom(MeasurementModel):
    """User-supplied apply/vjp callbacks operating on (n, d) batches."""

    kind = "custom"

    def __init__(self, n_in, m_out, apply_fn: Callable, vjp_fn: Callable, sigma_n: float,
                 linear: bool = False):
        super().__init__(n_in, m_out, sigma_n)
        self._apply_fn = apply_fn
        self._vjp_fn = vjp_fn
        self.linear = bool(linear)

    def _apply(self, xb):
        return np.asarray(self._apply_fn(xb), dtype=float)

    def _vjp(self, xb, vb):
        return np.asarray(self._vjp_fn(xb, vb), dtype=float)


def _norm_dims(dims):
    if np.isscalar(dims):
        return (int(dims),)
    return tuple(int(d) for d in dims)


def apply(model: MeasurementModel, x):
    """A(x) without noise."""
    return model.apply(x)


def vjp(model: MeasurementModel, x, v):
    """J_A(x)^T v."""
    return model.vjp(x, v)


def observe(model: MeasurementModel, x_true, rng) -> Observation:
    """Draw y = A(x_true) + sigma_n * z and package it with the model."""
    x_true = np.asarray(x_true, dtype=float)
    y = model.apply(x_true)
    if model.sigma_n > 0.0:
        y = y + model.sigma_n * rng.standard_normal(y.shape)
    return Observation(y=y, model=model, ground_truth=x_true)


def gaussian_kernel(size: int, std: float, ndim: int = 1) -> np.ndarray:
    """Normalized Gaussian taps; 2-D kernels are the separable outer product."""
    if size < 1 or size % 2 == 0:
        raise ValueError("kernel size must be odd and positive")
    c = size // 2
    t = np.exp(-0.5 * ((np.arange(size) - c) / std) ** 2)
    t /= t.sum()
    if ndim == 1:
        return t
    if ndim == 2:
        return np.outer(t, t)
    raise ValueError("only 1-D and 2-D kernels supported")


def _default_blur_size(n: int) -> int:
    # mirrors a 61-tap kernel on a length-256 signal, scaled and made odd
    size = max(3, int(round(61 / 256 * n)))
    return size if size % 2 == 1 else size + 1


def make_task(name: str, dims, params: Optional[dict] = None, rng=None) -> MeasurementModel:
    """Build a named measurement task.

    Built-ins: identity, mask (explicit indices), inpaint_box (hide the center
    block of half the length), inpaint_random (keep fraction 0.3 by default),
    downsample / sr_x4 (average pooling), gaussian_blur and convolve,
    phase_retrieval (2x oversampled DFT magnitudes), hdr (compress by 2 and
    clip), custom.
    """
    params = dict(params or {})
    sigma_n = float(params.pop("sigma_n", 0.05))
    dims_t = _norm_dims(dims)
    n = int(np.prod(dims_t))
    if name == "identity":
        return Identity(n, sigma_n)
    if name == "mask":
        idx = params.pop("indices", None)
        if idx is None:
            idx = load_mask(params.pop("indices_file"))
        return Mask(n, idx, sigma_n)
    if name == "inpaint_box":
        block = params.pop("block", n // 2)
        start = params.pop("start", (n - block) // 2)
        hidden = np.arange(start, start + block)
        kept = np.setdiff1d(np.arange(n), hidden)
        return Mask(n, kept, sigma_n)
    if name == "inpaint_random":
        frac = float(params.pop("keep_fraction", 0.3))
        if rng is None:
            raise ValueError("inpaint_random needs an rng")
        m = int(round(frac * n))
        kept = np.sort(rng.permutation(n)[:m])
        return Mask(n, kept, sigma_n)
    if name in ("downsample", "sr_x4"):
        factor = int(params.pop("factor", 4))
        return Downsample(dims_t, factor, sigma_n)
    if name == "gaussian_blur":
        size = int(params.pop("kernel_size", _default_blur_size(max(dims_t))))
        std = float(params.pop("kernel_std", size / 6.0))
        kernel = gaussian_kernel(size, std, ndim=len(dims_t))
        return Convolve(dims_t, kernel, sigma_n)
    if name == "convolve":
        kernel = params.pop("kernel", None)
        if kernel is None:
            kernel = load_kernel(params.pop("kernel_file"))
        return Convolve(dims_t, np.asarray(kernel, dtype=float), sigma_n)
    if name == "phase_retrieval":
        return FourierMagnitude(n, sigma_n)
    if name == "hdr":
        return HdrCompress(n, sigma_n)
    if name == "custom":
        return Custom(n, int(params.pop("m_out")), params.pop("apply"), params.pop("vjp"),
                      sigma_n, linear=bool(params.pop("linear", False)))
    raise ValueError(f"unknown task {name!r}")


def load_mask(path) -> np.ndarray:
    """Whitespace-separated kept-coordinate indices."""
    idx = np.loadtxt(path, dtype=int, ndmin=1)
    return idx.ravel()


def load_kernel(path) -> np.ndarray:
    """Whitespace-separated kernel taps; multiple rows give a 2-D kernel."""
    k = np.loadtxt(path, dtype=float, ndmin=1)
    return k
