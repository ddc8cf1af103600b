"""Error functionals, test-set sweeps and jump location."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fe import StateField
from .hdm import DGDiscretization

log = logging.getLogger(__name__)

L2, L1 = "L2", "L1"


def _norm(disc: DGDiscretization, U, norm: str) -> float:
    Ub = np.asarray(getattr(U, "coefficients", U), dtype=float).reshape(
        disc.layout.n_elements, disc.layout.nbasis, disc.layout.m)
    V = disc.ref.values(disc.vquad.points)
    vals = np.einsum("qb,ebm->eqm", V, Ub)
    pw = np.sqrt(np.sum(vals * vals, axis=2))  # pointwise Euclidean norm over components
    w = disc.vquad.weights[None, :] * disc.ws.detJX[:, None]
    if norm == L2:
        return math.sqrt(float(np.sum(w * pw ** 2)))
    if norm == L1:
        return float(np.sum(w * pw))
    raise ValueError(f"unknown norm {norm!r}")


def field_norm(disc: DGDiscretization, U, norm: str = L2) -> float:
    """L2 or L1 norm over the reference domain."""
    return _norm(disc, U, norm)


def rel_error(disc: DGDiscretization, reference, approx, norm: str = L2) -> float:
    """||reference - approx|| / ||reference|| over the reference domain."""
    ref = np.asarray(getattr(reference, "coefficients", reference), dtype=float)
    app = np.asarray(getattr(approx, "coefficients", approx), dtype=float)
    if ref.shape != app.shape:
        raise ValueError("fields have different layouts")
    den = _norm(disc, ref, norm)
    if den == 0.0:
        raise ZeroDivisionError("reference field has zero norm")
    return _norm(disc, ref - app, norm) / den


# Sweeps =======================================================================
@dataclass
class SweepRecord:
    mu: np.ndarray
    e_rom: float = math.nan
    e_ift: float = math.nan
    res_rom: float = math.nan
    res_ift: float = math.nan
    iters_ift: int = -1
    status: str = "ok"
    extra: dict = field(default_factory=dict)


@dataclass
class ErrorReport:
    records: list

    def _ok(self):
        return [r for r in self.records if r.status == "ok"]

    @property
    def n_failed(self) -> int:
        return sum(r.status != "ok" for r in self.records)

    @property
    def E_rom(self) -> float:
        vals = [r.e_rom for r in self._ok() if not math.isnan(r.e_rom)]
        return max(vals) if vals else math.nan

    @property
    def E_ift(self) -> float:
        vals = [r.e_ift for r in self._ok() if not math.isnan(r.e_ift)]
        return max(vals) if vals else math.nan

    def to_csv(self, path) -> None:
        P = len(self.records[0].mu) if self.records else 0
        cols = [f"mu_{i + 1}" for i in range(P)] + ["e_rom", "e_ift", "res_rom", "res_ift",
                                                     "iters_ift", "status"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.records:
                vals = [repr(float(v)) for v in r.mu] + [repr(float(r.e_rom)), repr(float(r.e_ift)),
                                                         repr(float(r.res_rom)), repr(float(r.res_ift)),
                                                         str(int(r.iters_ift)), r.status]
                fh.write(",".join(vals) + "\n")


def sweep(test_set, evaluate: Callable[[np.ndarray], SweepRecord]) -> ErrorReport:
    """Evaluate every test parameter in order; failures are recorded, not raised."""
    P = np.atleast_2d(np.asarray(test_set, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("empty test set")
    records = []
    for mu in P:
        try:
            rec = evaluate(mu)
        except Exception as exc:  # noqa: BLE001 - one bad parameter must not abort the sweep
            log.warning("sweep failed at mu=%s: %s", mu, exc)
            rec = SweepRecord(mu, status=f"failed:{type(exc).__name__}")
        records.append(rec)
    return ErrorReport(records)


# Jump location ================================================================
@dataclass
class Jump:
    interface: int | None  # mesh node index between elements, None if smooth
    position: float | None
    magnitude: float


def jump_locator(disc: DGDiscretization, U, component: int = 0, xhat=None,
                 tol: float = 1e-8) -> Jump:
    """Interior interface with the largest absolute trace jump (1D)."""
    if disc.mesh.dim != 1:
        raise ValueError("jump_locator needs a 1D discretization")
    Ub = np.asarray(getattr(U, "coefficients", U), dtype=float).reshape(
        disc.layout.n_elements, disc.layout.nbasis, disc.layout.m)[..., component]
    right = Ub @ disc.ref.values(np.array([[1.0]]))[0]
    left = Ub @ disc.ref.values(np.array([[0.0]]))[0]
    jumps = np.abs(left[1:] - right[:-1])
    if jumps.size == 0 or jumps.max() < tol:
        return Jump(None, None, float(jumps.max()) if jumps.size else 0.0)
    i = int(np.argmax(jumps))
    node = int(disc.mesh.elements[i, 1])
    x = disc.mesh.nodes[:, 0] if xhat is None else np.asarray(getattr(xhat, "xhat", xhat)).ravel()
    return Jump(node, float(x[node]), float(jumps[i]))


def steepest_location(disc: DGDiscretization, U, component: int = 0) -> float:
    """Reference coordinate of the largest interior slope of a 1D field."""
    Ub = np.asarray(getattr(U, "coefficients", U), dtype=float).reshape(
        disc.layout.n_elements, disc.layout.nbasis, disc.layout.m)[..., component]
    pts = np.linspace(0.0, 1.0, 5)[:, None]
    dV = disc.ref.grads(pts)[..., 0]
    slope = np.abs(np.einsum("pb,eb->ep", dV, Ub)) / disc.ws.detJX[:, None]
    e, p = np.unravel_index(np.argmax(slope), slope.shape)
    X0 = disc.mesh.nodes[disc.mesh.elements[e, 0], 0]
    return float(X0 + disc.ws.detJX[e] * pts[p, 0])
