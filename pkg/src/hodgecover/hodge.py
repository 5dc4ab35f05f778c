"""Orthogonal decomposition of edge signals into gradient, curl, harmonic.

Every edge signal b splits uniquely as b = grad + curl + harm with
grad in im(d1^T), curl in im(d2), and harm in ker(L1); the three parts are
pairwise orthogonal.  ``harm`` is the component that no vertex potential
plus triangle-boundary correction can explain, and its squared norm equals
the joint least-squares residual min_{phi, psi} ||b - d1^T phi - d2 psi||^2
(certified numerically by :func:`residual_certificate`).

The projection is computed by two sequential least-squares solves rather
than by forming any |E| x |E| projector:

    1. alpha minimizes ||d1^T alpha - b||,          grad = d1^T alpha
    2. beta  minimizes ||d2 beta - (b - grad)||,    curl = d2 beta
    3. harm = b - grad - curl

using pseudoinverses of the small operators L0 (n x n) and L2 (|T| x |T|)
with the same rank cutoff as :mod:`hodgecover.complexes`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .complexes import Complex2, EdgeSignal, SignedIncidence, svd_rcond


class ZeroSignalError(ValueError):
    """Energy fractions of the zero signal are undefined."""


@dataclass(frozen=True, eq=False)
class HodgeDecomp:
    """The orthogonal triple of an edge signal plus its energy fractions.

    Energy fractions are squared-norm shares of the input; they sum to 1
    for a nonzero input and are all 0 for the zero signal.
    """

    grad: EdgeSignal
    curl: EdgeSignal
    harm: EdgeSignal
    energy_grad: float
    energy_curl: float
    energy_harm: float

    def reconstruction(self) -> np.ndarray:
        return self.grad.values + self.curl.values + self.harm.values

    def to_json(self) -> str:
        return json.dumps({
            "grad": self.grad.values.tolist(),
            "curl": self.curl.values.tolist(),
            "harm": self.harm.values.tolist(),
            "energy_grad": self.energy_grad,
            "energy_curl": self.energy_curl,
            "energy_harm": self.energy_harm,
        })


def decompose(k: Complex2, inc: SignedIncidence, b: EdgeSignal) -> HodgeDecomp:
    """Split ``b`` into its gradient, curl, and harmonic components."""
    values = b.values
    if values.shape != (k.num_edges,):
        raise ValueError(f"signal has shape {values.shape}, complex has {k.num_edges} edges")
    b1 = inc.b1.astype(np.float64)
    b2 = inc.b2.astype(np.float64)

    l0 = b1 @ b1.T
    alpha = np.linalg.pinv(l0, rcond=svd_rcond(l0.shape)) @ (b1 @ values)
    grad = b1.T @ alpha

    if k.num_triangles:
        l2 = b2.T @ b2
        beta = np.linalg.pinv(l2, rcond=svd_rcond(l2.shape)) @ (b2.T @ (values - grad))
        curl = b2 @ beta
    else:
        curl = np.zeros_like(values)

    harm = values - grad - curl
    total = float(values @ values)
    if total > 0.0:
        energies = (float(grad @ grad) / total, float(curl @ curl) / total,
                    float(harm @ harm) / total)
    else:
        energies = (0.0, 0.0, 0.0)
    return HodgeDecomp(EdgeSignal(grad), EdgeSignal(curl), EdgeSignal(harm), *energies)


def harmonic_fraction(b: EdgeSignal, d: HodgeDecomp) -> float:
    """Share of signal energy in the harmonic component, ||harm||^2 / ||b||^2.

    Raises :class:`ZeroSignalError` on the zero signal; callers should treat
    such a layer as trivially compressible rather than diagnose it.
    """
    total = float(b.values @ b.values)
    if total == 0.0:
        raise ZeroSignalError("harmonic fraction undefined for the zero signal")
    h = d.harm.values
    return float(h @ h) / total


def residual_certificate(k: Complex2, inc: SignedIncidence, b: EdgeSignal,
                         d: HodgeDecomp) -> dict[str, float]:
    """Certify harmonic-energy minimality against a direct joint solve.

    Solves min over (phi, psi) of ||b - d1^T phi - d2 psi||^2 as one stacked
    least-squares problem and reports the residual next to ||harm||^2.  The
    two agree within 1e-7 relative on well-posed inputs; the stacked solve
    shares nothing with the sequential projection above, so agreement is an
    independent certificate, not a tautology.
    """
    design = np.hstack([inc.b1.T.astype(np.float64), inc.b2.astype(np.float64)])
    coef, _, _, _ = np.linalg.lstsq(design, b.values, rcond=svd_rcond(design.shape))
    residual = b.values - design @ coef
    h = d.harm.values
    return {
        "residual_lsq": float(residual @ residual),
        "harm_energy": float(h @ h),
    }
