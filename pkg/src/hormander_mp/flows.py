"""Closed-form flows of constant-control combinations of homogeneous fields.

For fields homogeneous of degree 1, component ``i`` only depends on coordinates of
strictly smaller weight, so the ODE ``x' = sum_j w_j X_j(x)`` is triangular and its
time-one flow is a polynomial in ``(x(0), w)``. Picard iteration reaches it exactly
after at most ``sigma_N`` rounds.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .operator_core import OperatorSpec
from .polynomial import Polynomial


def exponential_map(spec: OperatorSpec) -> List[Polynomial]:
    """Polynomials Phi_i(s_1..s_N, w_1..w_m) = exp(sum_j w_j X_j)(s), component i."""
    N, m = spec.N, spec.m
    nv = N + m + 1  # s, w, t
    t_idx = N + m
    s = [Polynomial.variable(nv, i) for i in range(N)]
    w = [Polynomial.variable(nv, N + j) for j in range(m)]
    # velocity field components as polynomials in (x, w) after substitution
    field_comps = []
    for i in range(N):
        comp = Polynomial.zero(nv)
        for j, X in enumerate(spec.fields):
            if X.components[i]:
                comp = comp + w[j] * X.components[i].embed(nv)
        field_comps.append(comp)
    x = list(s)
    for _ in range(spec.dilation.step + 2):
        # substitute current trajectory x(t) for the spatial variables
        subs = list(x) + w + [Polynomial.variable(nv, t_idx)]
        new = []
        for i in range(N):
            vel = field_comps[i].substitute(subs) if field_comps[i] else Polynomial.zero(nv)
            new.append(s[i] + vel.integrate(t_idx))
        if new == x:
            break
        x = new
    else:
        raise RuntimeError("Picard iteration did not terminate; fields are not triangular")
    flows = []
    for comp in x:
        comp = comp.restrict(t_idx, 1)
        terms = {e[:N + m]: c for e, c in comp.items()}
        flows.append(Polynomial(N + m, terms))
    return flows


@dataclass(frozen=True)
class CompiledFlow:
    """Flattened term tables for Phi and its Jacobian, consumed by the kernels.

    ``exps`` (T, D) int, ``coefs`` (T,), ``out_index`` (T,) gives the output component
    of each term; D = N + m. Jacobian entries are derived in the kernels from the same
    terms, so only one table is stored.
    """

    N: int
    m: int
    exps: np.ndarray
    coefs: np.ndarray
    out_index: np.ndarray
    max_degree: int


def compile_flow(flows: List[Polynomial], N: int, m: int) -> CompiledFlow:
    exps, coefs, outs = [], [], []
    for i, p in enumerate(flows):
        e, c = p.compile()
        exps.append(e)
        coefs.append(c)
        outs.append(np.full(len(c), i, dtype=np.int64))
    exps_a = np.ascontiguousarray(np.concatenate(exps).astype(np.int64))
    return CompiledFlow(
        N=N, m=m,
        exps=exps_a,
        coefs=np.ascontiguousarray(np.concatenate(coefs)),
        out_index=np.ascontiguousarray(np.concatenate(outs)),
        max_degree=int(exps_a.max()) if exps_a.size else 0,
    )


_CACHE: dict = {}


def compiled_flow(spec: OperatorSpec) -> CompiledFlow:
    key = (spec.name, spec.sigma, tuple(spec.fields))
    if key not in _CACHE:
        _CACHE[key] = compile_flow(exponential_map(spec), spec.N, spec.m)
    return _CACHE[key]


def compiled_fields(spec: OperatorSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Term tables for the m fields: exps (T, N), coefs, component index, field index."""
    exps, coefs, comp_idx, field_idx = [], [], [], []
    for j, X in enumerate(spec.fields):
        for i, c in enumerate(X.components):
            e, cf = c.compile()
            exps.append(e)
            coefs.append(cf)
            comp_idx.append(np.full(len(cf), i, dtype=np.int64))
            field_idx.append(np.full(len(cf), j, dtype=np.int64))
    return (np.ascontiguousarray(np.concatenate(exps).astype(np.int64)),
            np.ascontiguousarray(np.concatenate(coefs)),
            np.ascontiguousarray(np.concatenate(comp_idx)),
            np.ascontiguousarray(np.concatenate(field_idx)))
