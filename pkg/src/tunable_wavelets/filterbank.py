"""Two-channel wavelet filter banks: orthogonal lattice and free-coefficient forms.

A lattice bank is described by rotation angles ``theta_0 .. theta_K``. Its
polyphase product

    diag(1, -1) R_K L(z^2) ... R_1 L(z^2) R_0 [1, z^-1]^T

expands into a low-pass/high-pass pair of ``2K + 2`` taps that is orthogonal
for every choice of angles. A coefficient bank stores free low-pass taps and
derives the high-pass filter through ``h1(n) = (-1)^n h0(N-1-n)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import InvalidParameterError

SUPPORTED_TAPS = (2, 4, 6, 8)
_FAMILY_BY_TAPS = {2: "haar", 4: "db2", 6: "db3", 8: "db4"}
TAPS_BY_FAMILY = {name: taps for taps, name in _FAMILY_BY_TAPS.items()}


def _frozen(values):
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LatticeFilterBank:
    """Orthogonal bank parameterized by lattice rotation angles (radians)."""

    angles: np.ndarray

    def __post_init__(self):
        angles = np.atleast_1d(np.asarray(self.angles, dtype=np.float64))
        if angles.ndim != 1 or angles.size == 0:
            raise InvalidParameterError("lattice bank needs at least one angle")
        if not np.all(np.isfinite(angles)):
            raise InvalidParameterError("lattice angles must be finite")
        object.__setattr__(self, "angles", _frozen(angles))

    @property
    def stages(self) -> int:
        """Number of delay stages K (one fewer than the angle count)."""
        return self.angles.size - 1

    @property
    def taps(self) -> int:
        return 2 * self.angles.size

    mode = "lattice"


@dataclass(frozen=True, eq=False)
class CoefficientFilterBank:
    """Low-pass taps ``h0`` with the alias-cancelling high-pass ``h1``."""

    h0: np.ndarray
    h1: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        h0 = np.asarray(self.h0, dtype=np.float64)
        _check_even_taps(h0)
        object.__setattr__(self, "h0", _frozen(h0))
        object.__setattr__(self, "h1", _frozen(highpass_from_lowpass(h0)))

    @property
    def taps(self) -> int:
        return self.h0.size

    mode = "free"


@dataclass(frozen=True)
class PrPenalty:
    value: float
    alpha: float = 1.0

    @property
    def weighted(self) -> float:
        return self.alpha * self.value


def _check_even_taps(h):
    if h.ndim != 1 or h.size < 2 or h.size % 2:
        raise InvalidParameterError(
            f"filter must be 1-D with an even length >= 2, got shape {h.shape}"
        )
    if not np.all(np.isfinite(h)):
        raise InvalidParameterError("filter taps must be finite")


def highpass_from_lowpass(h0) -> np.ndarray:
    """Return ``h1(n) = (-1)^n h0(N-1-n)``."""
    h0 = np.asarray(h0, dtype=np.float64)
    _check_even_taps(h0)
    signs = np.where(np.arange(h0.size) % 2 == 0, 1.0, -1.0)
    return signs * h0[::-1]


def highpass_adjoint(g1) -> np.ndarray:
    """Pull a gradient on ``h1`` back onto ``h0`` (adjoint of :func:`highpass_from_lowpass`)."""
    g1 = np.asarray(g1, dtype=np.float64)
    signs = np.where(np.arange(g1.size) % 2 == 0, 1.0, -1.0)
    return (signs * g1)[::-1]


def _rotation(theta, derivative=False):
    c, s = math.cos(theta), math.sin(theta)
    if derivative:
        return -s, c, -c, -s
    return c, s, -s, c


def _expand(angles, diff_stage=None):
    # With diff_stage set, R_k at that stage is replaced by dR_k/dtheta_k,
    # which yields the partial derivative of the whole product.
    r00, r01, r10, r11 = _rotation(angles[0], diff_stage == 0)
    a = np.array([r00, r01])
    b = np.array([r10, r11])
    for k in range(1, len(angles)):
        r00, r01, r10, r11 = _rotation(angles[k], diff_stage == k)
        a_pad = np.concatenate([a, [0.0, 0.0]])
        b_del = np.concatenate([[0.0, 0.0], b])
        a, b = r00 * a_pad + r01 * b_del, r10 * a_pad + r11 * b_del
    return a, -b


def lattice_to_filters(bank: LatticeFilterBank) -> CoefficientFilterBank:
    """Expand lattice angles into the equivalent ``2K + 2`` tap filter pair."""
    if not isinstance(bank, LatticeFilterBank):
        bank = LatticeFilterBank(bank)
    h0, _ = _expand(bank.angles)
    return CoefficientFilterBank(h0)


def lattice_highpass(bank: LatticeFilterBank) -> np.ndarray:
    """High-pass taps as produced directly by the lattice product."""
    return _expand(bank.angles)[1]


def filters_jacobian(bank: LatticeFilterBank) -> tuple[np.ndarray, np.ndarray]:
    """Analytic derivatives of the expanded taps with respect to each angle.

    Returns
    -------
    dh0, dh1 : ndarray, shape (taps, K + 1)
        ``dh0[n, k]`` is the derivative of ``h0[n]`` with respect to ``theta_k``.
    """
    if not isinstance(bank, LatticeFilterBank):
        bank = LatticeFilterBank(bank)
    cols0, cols1 = [], []
    for k in range(bank.angles.size):
        d0, d1 = _expand(bank.angles, diff_stage=k)
        cols0.append(d0)
        cols1.append(d1)
    return np.stack(cols0, axis=1), np.stack(cols1, axis=1)


def _double_shift_correlations(h):
    n = h.size
    return np.array([np.dot(h[: n - 2 * l], h[2 * l:]) for l in range(1, n // 2 + 1)])


def pr_loss(h0) -> float:
    """Half-band penalty ``|1 - sum h^2|^2 + sum_l (sum_n h(n) h(n+2l))^2``.

    Zero exactly when ``h0`` has unit energy and is orthogonal to all of its
    even shifts, i.e. when ``P(z) + P(-z) = 2``.
    """
    h = np.asarray(h0, dtype=np.float64)
    _check_even_taps(h)
    energy_gap = 1.0 - np.dot(h, h)
    corr = _double_shift_correlations(h)
    return float(energy_gap * energy_gap + np.dot(corr, corr))


def pr_loss_grad(h0) -> np.ndarray:
    """Gradient of :func:`pr_loss` with respect to the low-pass taps."""
    h = np.asarray(h0, dtype=np.float64)
    _check_even_taps(h)
    n = h.size
    grad = -4.0 * (1.0 - np.dot(h, h)) * h
    for l, c in enumerate(_double_shift_correlations(h), start=1):
        shift = 2 * l
        if shift >= n:
            continue
        grad[: n - shift] += 2.0 * c * h[shift:]
        grad[shift:] += 2.0 * c * h[: n - shift]
    return grad


def pr_penalty(h0, alpha=1.0) -> PrPenalty:
    if alpha < 0:
        raise InvalidParameterError("alpha must be non-negative")
    return PrPenalty(pr_loss(h0), float(alpha))


def daubechies_lowpass(taps: int) -> np.ndarray:
    """Minimum-phase Daubechies low-pass filter by spectral factorization.

    The half-band product filter with ``p = taps // 2`` zeros at ``z = -1`` is
    ``P(y) = sum_k C(p-1+k, k) y^k`` with ``y = sin^2(w/2)``; the roots of
    ``P`` inside the unit circle give the minimum-phase factor.
    """
    if taps < 2 or taps % 2:
        raise InvalidParameterError(f"Daubechies filters need an even tap count, got {taps}")
    p = taps // 2
    # coefficients of P(y), highest power first, for np.roots
    poly_y = [math.comb(p - 1 + k, k) for k in reversed(range(p))]
    zeros = []
    if p > 1:
        for y in np.roots(poly_y):
            # y = (2 - z - 1/z) / 4  =>  z^2 - (2 - 4y) z + 1 = 0
            pair = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
            zeros.append(pair[np.argmin(np.abs(pair))])
    coeffs = np.real(np.poly(np.concatenate([-np.ones(p), np.asarray(zeros, dtype=complex)])))
    return coeffs * (math.sqrt(2.0) / coeffs.sum())


def _peel_lattice(h0):
    # Inverse of _expand: strip one rotation/delay stage at a time.
    a = np.array(h0, dtype=np.float64)
    b = -highpass_from_lowpass(a)
    angles = []
    while a.size > 2:
        i = 0 if abs(a[0]) + abs(b[0]) >= abs(a[1]) + abs(b[1]) else 1
        theta = math.atan2(-b[i], a[i])
        c, s = math.cos(theta), math.sin(theta)
        a, b = (c * a - s * b)[:-2], (s * a + c * b)[2:]
        angles.append(theta)
    angles.append(math.atan2(a[1], a[0]))
    return np.array(angles[::-1])


def fit_lattice_angles(h0, tol=1e-8) -> np.ndarray:
    """Angles whose lattice expansion reproduces ``h0`` in least squares.

    Seeds the solver with an exact stage-by-stage factorization, then
    polishes. Raises if the residual stays above ``tol``.
    """
    target = np.asarray(h0, dtype=np.float64)
    _check_even_taps(target)
    seed = _peel_lattice(target)

    def residual(theta):
        return _expand(theta)[0] - target

    def jac(theta):
        return filters_jacobian(LatticeFilterBank(theta))[0]

    fit = least_squares(residual, seed, jac=jac, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    err = np.max(np.abs(residual(fit.x)))
    if not err < tol:
        raise InvalidParameterError(
            f"lattice fit residual {err:.3g} exceeds {tol:g}; taps are not orthogonal"
        )
    return fit.x


@functools.lru_cache(maxsize=None)
def _reference_lowpass(taps):
    h = daubechies_lowpass(taps)
    h.setflags(write=False)
    return h


@functools.lru_cache(maxsize=None)
def _reference_angles(taps):
    return tuple(fit_lattice_angles(_reference_lowpass(taps)))


def reference_lowpass(taps: int) -> np.ndarray:
    """Haar/DB2/DB3/DB4 low-pass taps for 2/4/6/8 taps."""
    if taps not in SUPPORTED_TAPS:
        raise InvalidParameterError(f"taps must be one of {SUPPORTED_TAPS}, got {taps}")
    return _reference_lowpass(taps).copy()


def init_filter_bank(taps: int, mode: str = "lattice"):
    """Bank initialized to the Daubechies filter with ``taps`` coefficients.

    ``mode="lattice"`` returns a :class:`LatticeFilterBank` whose angles were
    fitted to the reference taps; ``mode="free"`` returns the taps directly.
    """
    if taps not in SUPPORTED_TAPS:
        raise InvalidParameterError(f"taps must be one of {SUPPORTED_TAPS}, got {taps}")
    if mode in ("lattice", "orthlatt"):
        return LatticeFilterBank(np.array(_reference_angles(taps)))
    if mode in ("free", "pr-relax", "prrelax"):
        return CoefficientFilterBank(_reference_lowpass(taps))
    raise InvalidParameterError(f"unknown filter bank mode {mode!r}")


def as_filters(bank) -> CoefficientFilterBank:
    """Coefficient view of either bank type."""
    if isinstance(bank, LatticeFilterBank):
        return lattice_to_filters(bank)
    if isinstance(bank, CoefficientFilterBank):
        return bank
    raise TypeError(f"not a filter bank: {type(bank).__name__}")


def frequency_response(h, n_points=9):
    """Magnitude of the DTFT of ``h`` sampled uniformly on ``[0, pi]``."""
    h = np.asarray(h, dtype=np.float64)
    omega = np.linspace(0.0, math.pi, n_points)
    basis = np.exp(-1j * np.outer(omega, np.arange(h.size)))
    return omega, np.abs(basis @ h)


def dumps_bank(bank) -> str:
    """Serialize a bank as ``key=value`` lines with 17 significant digits."""
    if isinstance(bank, LatticeFilterBank):
        lines = ["mode=lattice", f"taps={bank.taps}",
                 "angles=" + ",".join(f"{a:.17g}" for a in bank.angles)]
    elif isinstance(bank, CoefficientFilterBank):
        lines = ["mode=free", f"taps={bank.taps}",
                 "h0=" + ",".join(f"{v:.17g}" for v in bank.h0)]
    else:
        raise TypeError(f"not a filter bank: {type(bank).__name__}")
    return "\n".join(lines) + "\n"


def loads_bank(text: str):
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidParameterError(f"malformed bank line: {line!r}")
        fields[key.strip()] = value.strip()
    mode = fields.get("mode")
    if mode == "lattice":
        bank = LatticeFilterBank([float(v) for v in fields["angles"].split(",")])
    elif mode == "free":
        bank = CoefficientFilterBank([float(v) for v in fields["h0"].split(",")])
    else:
        raise InvalidParameterError(f"unknown bank mode {mode!r}")
    if "taps" in fields and int(fields["taps"]) != bank.taps:
        raise InvalidParameterError("declared tap count does not match stored values")
    return bank
