"""One-dimensional demonstrations of linear versus aligned approximation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .problems import (cutoff_gaussian, quad_bijection, quad_bijection_inverse, steepening_gaussian,
                       steepening_map)
from .reduction import composite_gauss, l2_project, modes_for_energy

DEMOS = ("staircase", "aligned-gaussian", "steepening-compression")

# two snapshot parameters and the test parameter (a, b, c) of the cutoff Gaussian demos
GAUSS_TRAIN = ((0.3, 0.4, -0.1), (0.6, 0.6, 0.6))
GAUSS_TEST = (0.8, 0.5, 0.2)
ENERGIES = (1e-3, 1e-6, 1e-9)


@dataclass
class DemoResult:
    name: str
    tables: dict = field(default_factory=dict)  # file stem -> (header, rows)
    summary: dict = field(default_factory=dict)

    def write(self, directory) -> list:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for stem, (header, rows) in self.tables.items():
            p = d / f"{stem}.csv"
            io.write_csv(p, header, rows)
            paths.append(p)
        return paths


def _oracle(breaks, n_intervals: int = 10_000, n_points: int = 10):
    """Composite Gauss rule on [-1, 1] with 1e5 points and the given breakpoints."""
    return composite_gauss(-1.0, 1.0, n_intervals, n_points, breaks)


def staircase(train=GAUSS_TRAIN, test=GAUSS_TEST, n_plot: int = 801) -> DemoResult:
    """L2 projection of a cutoff Gaussian onto the span of two others."""
    x, w = _oracle([p[2] for p in (*train, test)])
    B = np.array([cutoff_gaussian(x, p) for p in train])
    proj = l2_project(cutoff_gaussian(x, test), B, w)
    xp = np.linspace(-1.0, 1.0, n_plot)
    snaps = [cutoff_gaussian(xp, p) for p in train]
    rows = list(zip(xp, *snaps, cutoff_gaussian(xp, test), proj.coefficients @ np.array(snaps)))
    res = DemoResult("staircase", summary={"relative_error": proj.relative_error,
                                           "coefficients": proj.coefficients.tolist()})
    res.tables["staircase"] = (["x", "snapshot_1", "snapshot_2", "target", "projection"], rows)
    return res


def aligned_gaussian(train=GAUSS_TRAIN, test=GAUSS_TEST, n_plot: int = 801) -> DemoResult:
    """Same projection after composing every function with H_tau, tau = c,
    which moves all cutoffs to X = 0; mapped back through H_tau^{-1}."""
    x, w = _oracle([0.0])
    taus = [p[2] for p in train]
    B = np.array([cutoff_gaussian(quad_bijection(x, t), p) for t, p in zip(taus, train)])
    tau3 = test[2]
    proj = l2_project(cutoff_gaussian(quad_bijection(x, tau3), test), B, w)
    Xp = np.linspace(-1.0, 1.0, n_plot)
    snaps = np.array([cutoff_gaussian(quad_bijection(Xp, t), p) for t, p in zip(taus, train)])
    ref_rows = list(zip(Xp, *snaps, cutoff_gaussian(quad_bijection(Xp, tau3), test),
                        proj.coefficients @ snaps))
    # physical approximation theta(x) ~ sum_i a_i Theta_i(H_tau3^{-1}(x))
    X3 = quad_bijection_inverse(Xp, tau3)
    phys = proj.coefficients @ np.array([cutoff_gaussian(quad_bijection(X3, t), p)
                                         for t, p in zip(taus, train)])
    phys_rows = list(zip(Xp, cutoff_gaussian(Xp, test), phys))
    base = staircase(train, test)
    res = DemoResult("aligned-gaussian", summary={
        "relative_error": proj.relative_error, "coefficients": proj.coefficients.tolist(),
        "staircase_relative_error": base.summary["relative_error"],
        "ratio": base.summary["relative_error"] / proj.relative_error})
    res.tables["aligned_reference"] = (["X", "snapshot_1", "snapshot_2", "target", "projection"],
                                       ref_rows)
    res.tables["aligned_physical"] = (["x", "target", "approximation"], phys_rows)
    return res


def steepening_snapshots(n_mu: int = 100, n_intervals: int = 2000, n_points: int = 10):
    """Weighted snapshot matrices (non-aligned, aligned) on [0, 1], plus the
    quadrature points and weights. Columns are scaled by sqrt(weights)."""
    mus = np.linspace(0.2, 0.8, n_mu)
    x, w = composite_gauss(0.0, 1.0, n_intervals, n_points, [0.5])
    sw = np.sqrt(w)[:, None]
    S = np.column_stack([steepening_gaussian(x, m) for m in mus]) * sw
    Sa = np.column_stack([steepening_gaussian(steepening_map(x, m), m) for m in mus]) * sw
    return mus, x, w, S, Sa


def steepening_compression(n_mu: int = 100, n_modes_out: int = 4, n_plot: int = 501) -> DemoResult:
    """POD of the steepening Gaussian family with and without the map L_mu."""
    mus, x, w, S, Sa = steepening_snapshots(n_mu)
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    Ua, sa, _ = np.linalg.svd(Sa, full_matrices=False)
    counts = {e: (modes_for_energy(s, e), modes_for_energy(sa, e)) for e in ENERGIES}
    res = DemoResult("steepening-compression", summary={
        "modes_non_aligned": {repr(e): c[0] for e, c in counts.items()},
        "modes_aligned": {repr(e): c[1] for e, c in counts.items()}})
    res.tables["singular_values"] = (["index", "sigma_non_aligned", "sigma_aligned"],
                                     list(zip(range(1, s.size + 1), s, sa)))
    res.tables["truncation_markers"] = (["energy", "modes_non_aligned", "modes_aligned"],
                                        [(e, c[0], c[1]) for e, c in counts.items()])
    # modes sampled on a plot grid (undo the sqrt-weight scaling by interpolation)
    xp = np.linspace(0.0, 1.0, n_plot)
    sw = np.sqrt(w)
    modes = [np.interp(xp, x, U[:, i] / sw) for i in range(n_modes_out)]
    modes_a = [np.interp(xp, x, Ua[:, i] / sw) for i in range(n_modes_out)]
    res.tables["modes"] = (["x"] + [f"mode_{i + 1}" for i in range(n_modes_out)]
                           + [f"aligned_mode_{i + 1}" for i in range(n_modes_out)],
                           list(zip(xp, *modes, *modes_a)))
    pick = mus[:: max(1, n_mu // 4)]
    res.tables["snapshots"] = (["x"] + [f"mu_{m:.4f}" for m in pick]
                               + [f"aligned_mu_{m:.4f}" for m in pick],
                               list(zip(xp, *[steepening_gaussian(xp, m) for m in pick],
                                        *[steepening_gaussian(steepening_map(xp, m), m) for m in pick])))
    return res


def run_demo(name: str) -> DemoResult:
    if name == "staircase":
        return staircase()
    if name == "aligned-gaussian":
        return aligned_gaussian()
    if name == "steepening-compression":
        return steepening_compression()
    raise ValueError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
