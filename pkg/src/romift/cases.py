"""Benchmark bundles and the train / evaluate pipeline shared by the CLI and tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .hdm import DGDiscretization, HdmSolveError, solve_hdm
from .ift import IftObjective, TrainingResult, initialize_ift, offline_train, solve_ift
from .mapping import MappingFamily
from .metrics import L1, L2, SweepRecord, rel_error
from .problems import (AdvectionReaction, NozzleFlow, advec_mesh, centroid_first, nozzle_initial_state,
                       nozzle_mesh, nozzle_shock_position, onepar_family, shock_family, track_shock)
from .reduction import ReducedBasis, build_basis, solve_rom_minres

log = logging.getLogger(__name__)

PROBLEMS = ("advec2d", "nozzle1d")


@dataclass
class Case:
    """Discretization plus the problem-specific choices of the pipeline.

    ``hdm(xhat, mu, U0)`` returns a converged HDM state. ``offline(params)``
    returns the mapping family and HDM solver used during training.
    """

    name: str
    disc: DGDiscretization
    hdm: Callable
    offline: Callable
    order: Callable
    norm: str
    ift_kw: dict = field(default_factory=dict)

    @property
    def identity(self) -> np.ndarray:
        return self.disc.mesh.nodes.ravel().copy()


def _advec_case(mesh_n: int, degree: int, **_) -> Case:
    mesh = advec_mesh(mesh_n)
    disc = DGDiscretization(mesh, AdvectionReaction(), degree)

    def hdm(xhat, mu, U0=None):
        return solve_hdm(disc, xhat, mu, U0).U

    def offline(params):
        return onepar_family(mesh), hdm

    return Case("advec2d", disc, hdm, offline, centroid_first, L2,
                dict(eps1=1e-15, eps2=1e-10, lam=0.0, max_iter=50))


def _nozzle_case(mesh_n: int, degree: int, av_scale: float = 1.0, **_) -> Case:
    mesh = nozzle_mesh(mesh_n)
    disc = DGDiscretization(mesh, NozzleFlow(av_scale=av_scale), degree)

    def hdm(xhat, mu, U0=None):
        # Newton from the warm start, then pseudo-transient continuation from
        # it, then continuation from the default subsonic state
        if U0 is not None:
            for kw in (dict(max_iter=30), dict(ptc_dt=1.0, max_iter=300)):
                try:
                    return solve_hdm(disc, xhat, mu, U0, **kw).U
                except HdmSolveError as exc:
                    log.debug("warm HDM attempt %s failed: %s", kw, exc)
        return solve_hdm(disc, xhat, mu, nozzle_initial_state(disc, mu), ptc_dt=0.1,
                         max_iter=300).U

    def offline(params):
        # the HDM adapts a hinge mapping so every snapshot has its shock at
        # the reference position of the first training parameter's shock
        mu1 = np.atleast_2d(params)[0]
        U1 = hdm(mesh.nodes.ravel(), mu1)
        _, X_s = nozzle_shock_position(disc, U1, mesh.nodes.ravel(), mu1)
        family = shock_family(mesh, X_s)
        return family, lambda xhat, mu, U0: track_shock(disc, family, X_s, hdm, xhat, mu, U0)

    def monotone(params):
        P = np.atleast_2d(np.asarray(params, dtype=float))
        return P[np.argsort(P[:, 0], kind="stable")]

    return Case("nozzle1d", disc, hdm, offline, monotone, L1,
                dict(eps1=1e-8, eps2=1e-8, max_iter=100))


_DEFAULTS = {"advec2d": dict(mesh_n=34, degree=3), "nozzle1d": dict(mesh_n=200, degree=2)}


def make_case(problem: str, **options) -> Case:
    """Build a benchmark: ``advec2d`` (default 2312 cubic triangles) or
    ``nozzle1d`` (default 200 quadratic elements with artificial viscosity)."""
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)}")
    opts = dict(_DEFAULTS[problem])
    opts.update({k: v for k, v in options.items() if v is not None})
    builder = _advec_case if problem == "advec2d" else _nozzle_case
    return builder(**opts)


def check_parameters(case: Case, params) -> np.ndarray:
    P = np.atleast_2d(np.asarray(params, dtype=float))
    for mu in P:
        case.disc.law.check_parameter(mu)
    return P


# Models =======================================================================
@dataclass
class Models:
    """Trained fixed-domain and ROM-IFT models."""

    basis: ReducedBasis  # aligned state basis
    mapping_space: MappingFamily
    fixed: ReducedBasis  # non-aligned basis on the nominal mapping
    training: TrainingResult | None = None

    def truncate(self, k: int) -> "Models":
        return Models(self.basis.truncate(k), self.mapping_space, self.fixed.truncate(k), self.training)


def train(case: Case, params, n_state: int | None = None, n_map: int | None = None,
          on_snapshot: Callable | None = None) -> Models:
    """Offline phase for both ROMs over ``params`` (reordered per problem)."""
    P = case.order(check_parameters(case, params))
    family, hdm = case.offline(P)
    tr = offline_train(case.disc, P, family, hdm, n_map=n_map, solver_kw=case.ift_kw,
                       on_snapshot=on_snapshot)
    Xid = case.identity
    fixed = np.column_stack([case.hdm(Xid, mu) for mu in P])
    basis = tr.basis if n_state is None else tr.basis.truncate(n_state)
    fixed_basis = build_basis(fixed, n=n_state, params=P)
    return Models(basis, tr.mapping_space, fixed_basis, tr)


def solve_fixed(case: Case, models: Models, mu):
    return solve_rom_minres(case.disc, models.fixed, case.identity, mu)


def solve_rom_ift(case: Case, models: Models, mu, **overrides):
    obj = IftObjective(case.disc, models.basis, models.mapping_space)
    w0, c0 = initialize_ift(obj, mu)
    kw = dict(case.ift_kw)
    kw.update(overrides)
    return obj, solve_ift(obj, mu, w0, c0, **kw)


def evaluate(case: Case, models: Models, mu, reference=None) -> SweepRecord:
    """Errors of both ROMs at ``mu``: the fixed ROM against the HDM on the
    nominal mapping (``reference`` if given), ROM-IFT against the HDM solved
    at the ROM-IFT mapping."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    Uh = case.hdm(case.identity, mu) if reference is None else reference
    rom = solve_fixed(case, models, mu)
    e_rom = rel_error(case.disc, Uh, models.fixed.expand(rom.w), case.norm)
    obj, sol = solve_rom_ift(case, models, mu)
    U_ift = models.basis.expand(sol.w)
    Uh_ift = case.hdm(obj.xhat(sol.c), mu, U_ift)
    e_ift = rel_error(case.disc, Uh_ift, U_ift, case.norm)
    return SweepRecord(mu, e_rom, e_ift, rom.residual_norm, sol.residual_norm, sol.iterations,
                       "ok", dict(ift_status=sol.status, c=sol.c))


# Persistence ==================================================================
_MODEL_FILES = {
    "basis": "basis.bin", "basis_anchor_params": "basis_anchor_params.bin",
    "basis_anchor_coords": "basis_anchor_coords.bin", "basis_sigma": "basis_sigma.csv",
    "mapping_base": "mapping_base.bin", "mapping_directions": "mapping_directions.bin",
    "fixed": "fixed_basis.bin", "fixed_anchor_params": "fixed_anchor_params.bin",
    "fixed_anchor_coords": "fixed_anchor_coords.bin", "fixed_sigma": "fixed_sigma.csv",
    "training_coords": "training_mapping_coords.bin",
}


def save_models(directory, models: Models, config: dict) -> dict:
    """Write all model files and a manifest; returns the file table."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    f = _MODEL_FILES
    for key, B in (("basis", models.basis), ("fixed", models.fixed)):
        io.write_matrix(d / f[key], B.Phi)
        io.write_matrix(d / f[f"{key}_anchor_params"], B.anchor_params)
        io.write_matrix(d / f[f"{key}_anchor_coords"], B.anchor_coords)
        io.write_singular_values(d / f[f"{key}_sigma"], B.sigma)
    io.write_matrix(d / f["mapping_base"], models.mapping_space.base)
    io.write_matrix(d / f["mapping_directions"], models.mapping_space.dense_directions())
    files = dict(f)
    if models.training is not None:
        io.write_matrix(d / f["training_coords"], np.column_stack(models.training.archive.coords))
        statuses = models.training.archive.statuses
    else:
        files.pop("training_coords")
        statuses = []
    io.write_manifest(d / "manifest.json", config, files, {"alignment_status": list(statuses)})
    return files


def load_models(directory, case: Case) -> Models:
    d = Path(directory)
    man = io.read_manifest(d / "manifest.json")
    f = man["files"]

    def basis(key):
        B = ReducedBasis(np.zeros(case.disc.N), io.read_matrix(d / f[key]),
                         io.read_singular_values(d / f[f"{key}_sigma"]),
                         io.read_matrix(d / f[f"{key}_anchor_params"]),
                         io.read_matrix(d / f[f"{key}_anchor_coords"]))
        if B.Phi.shape[0] != case.disc.N:
            raise io.FormatError(f"basis has {B.Phi.shape[0]} rows, discretization has {case.disc.N}")
        return B

    base = io.read_matrix(d / f["mapping_base"]).ravel()
    D = io.read_matrix(d / f["mapping_directions"])
    if base.size != case.disc.n_mapping:
        raise io.FormatError("mapping files do not match the mesh")
    return Models(basis("basis"), MappingFamily(case.disc.mesh, base, D), basis("fixed"))


def describe(models: Models) -> dict:
    return {"k": models.basis.k, "k_fixed": models.fixed.k, "n_mapping": models.mapping_space.n,
            "sigma": [float(s) for s in models.basis.sigma],
            "sigma_fixed": [float(s) for s in models.fixed.sigma]}


def nan_record(mu, status: str) -> SweepRecord:
    return SweepRecord(np.atleast_1d(mu), math.nan, math.nan, status=status)
