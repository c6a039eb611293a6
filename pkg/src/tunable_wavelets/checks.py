"""Randomized property suite behind the ``check`` command.

Each check returns its worst observed error next to a fixed tolerance. Relative
errors are norm-wise: ``max|analytic - numeric| / max(max|numeric|, 1e-8)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dwt2d import decompose, reconstruct, square_plans
from .filterbank import (
    LatticeFilterBank,
    filters_jacobian,
    highpass_from_lowpass,
    lattice_highpass,
    lattice_to_filters,
    pr_loss,
    pr_loss_grad,
)
from .units import WaveletUnit, unit_backward, wavelet_pool

FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_error <= self.tolerance)


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def central_difference(f, x, step=FD_STEP):
    """Numerical gradient (or Jacobian, last axis = input) of ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2 * step))
    return np.stack(cols, axis=-1)


def random_angles(rng, taps):
    return rng.uniform(-np.pi, np.pi, taps // 2)


def run_suite(taps: int = 8, trials: int = 100, seed: int = 0, size: int = 16,
              unit_trials: int | None = None):
    """Run every check on ``trials`` random banks with ``taps`` coefficients."""
    rng = np.random.default_rng(seed)
    size = max(size, taps + taps % 2)
    recon = ortho = lattice_pr = alias = jac = prgrad = 0.0
    for _ in range(trials):
        bank = LatticeFilterBank(random_angles(rng, taps))
        filters = lattice_to_filters(bank)
        rows, cols = square_plans(filters, size)
        x = rng.standard_normal((size, size))
        recon = max(recon, float(np.max(np.abs(reconstruct(rows, cols, decompose(rows, cols, x)) - x))))
        low, high = rows.lowpass_op, rows.highpass_op
        eye = np.eye(size // 2)
        ortho = max(ortho, float(np.max(np.abs(low @ low.T - eye))),
                    float(np.max(np.abs(high @ high.T - eye))),
                    float(np.max(np.abs(low @ high.T))))
        lattice_pr = max(lattice_pr, pr_loss(filters.h0))
        alias = max(alias, float(np.max(np.abs(lattice_highpass(bank)
                                               - highpass_from_lowpass(filters.h0)))))
        dh0, dh1 = filters_jacobian(bank)
        num = central_difference(lambda a: np.concatenate(
            [lattice_to_filters(LatticeFilterBank(a)).h0, lattice_highpass(LatticeFilterBank(a))]),
            bank.angles)
        jac = max(jac, relative_error(np.vstack([dh0, dh1]), num))
        h = rng.standard_normal(taps) * 0.5
        prgrad = max(prgrad, relative_error(pr_loss_grad(h), central_difference(pr_loss, h)))

    unit_err = 0.0
    for _ in range(trials // 10 if unit_trials is None else unit_trials):
        unit_err = max(unit_err, unit_gradient_error(rng, taps))

    return [
        CheckResult("perfect_reconstruction", recon, 1e-10),
        CheckResult("operator_orthogonality", ortho, 1e-10),
        CheckResult("lattice_pr_loss", lattice_pr, 1e-12),
        CheckResult("alias_cancellation", alias, 0.0),
        CheckResult("jacobian_rel_error", jac, 1e-4),
        CheckResult("pr_loss_grad_rel_error", prgrad, 1e-4),
        CheckResult("unit_backward_rel_error", unit_err, 1e-4),
    ]


def _away_from_kinks(rng, unit, shape, margin=1e-4):
    # finite differences straddling a ReLU kink are meaningless; redraw instead
    rows, cols = square_plans(unit.filters, shape[-2], shape[-1])
    while True:
        x = rng.standard_normal(shape)
        bands = decompose(rows, cols, x).as_tuple()
        if min(float(np.min(np.abs(b))) for b in bands) > margin:
            return x


def unit_gradient_error(rng, taps, mode=None, c_in=None, size=None):
    """Worst relative error of :func:`unit_backward` against central differences."""
    mode = mode or ("orthlatt", "pr-relax")[rng.integers(2)]
    c_in = c_in or int(rng.integers(1, 4))
    size = size or int(rng.choice([s for s in (4, 6, 8) if s >= taps]))
    c_out = int(rng.integers(1, 4))
    unit = WaveletUnit.create(c_in, c_out, taps=taps, mode=mode)
    unit.bank_params = unit.bank_params + 0.3 * rng.standard_normal(unit.bank_params.shape)
    unit.weight = rng.standard_normal(unit.weight.shape)
    unit.bias = rng.standard_normal(unit.bias.shape)
    x = _away_from_kinks(rng, unit, (c_in, size, size))
    g = rng.standard_normal((c_out, size // 2, size // 2))
    gx, (gw, gb), gbank = unit_backward(unit, x, g)

    def objective(**override):
        u = WaveletUnit(mode, override.get("bank", unit.bank_params),
                        override.get("weight", unit.weight), override.get("bias", unit.bias))
        return float(np.sum(g * wavelet_pool(u, override.get("x", x))))

    errs = [
        relative_error(gx.ravel(), central_difference(lambda v: objective(x=v.reshape(x.shape)), x.ravel())),
        relative_error(gw.ravel(), central_difference(
            lambda v: objective(weight=v.reshape(unit.weight.shape)), unit.weight.ravel())),
        relative_error(gb, central_difference(lambda v: objective(bias=v), unit.bias)),
        relative_error(gbank, central_difference(lambda v: objective(bank=v), unit.bank_params)),
    ]
    return max(errs)
