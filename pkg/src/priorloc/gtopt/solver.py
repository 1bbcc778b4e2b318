"""Damped (Levenberg-Marquardt) least-squares over the trajectory problem.

Steps solve (J^T J + lambda diag) delta = -J^T r on the sparse normal
equations; rejected steps raise the damping, accepted steps lower it, so
the monitored robust cost never increases across accepted steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import ResidualWeights, TrajectoryProblem, _Assembler, _State

__all__ = ["SolveOptions", "SolveReport", "solve"]


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 50
    gtol: float = 1e-8  # infinity norm of the gradient
    ftol: float = 1e-10  # relative cost decrease on an accepted step
    lambda0: float = 1e-6
    max_rejects: int = 25


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    accepted_steps: int
    rejected_steps: int
    initial_cost: float
    final_cost: float
    cost_history: list
    gradient_norm: float
    dropped_observations: int
    message: str = ""


def solve(
    problem: TrajectoryProblem,
    weights: ResidualWeights,
    options: SolveOptions = SolveOptions(),
) -> tuple[TrajectoryProblem, SolveReport]:
    """Optimize frame poses, velocities, biases, and landmarks.

    Returns the optimized problem (the input is left untouched) and a
    convergence report. Rank-deficient normal equations are handled by
    raising the damping until the step solves.
    """
    asm = _Assembler(problem, weights)
    st = _State(problem)
    r, J, cost, info = asm.assemble(st)
    history = [cost]
    lam = options.lambda0
    accepted = 0
    rejected = 0
    grad = J.T @ r
    grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
    converged = grad_norm < options.gtol
    message = "gradient below tolerance" if converged else ""
    it = 0

    while not converged and it < options.max_iters:
        it += 1
        JtJ = (J.T @ J).tocsc()
        diag = JtJ.diagonal()
        scale_diag = np.maximum(diag, 1e-12)
        step_accepted = False
        for _ in range(options.max_rejects):
            H = JtJ + sp.diags(lam * scale_diag)
            try:
                delta = spla.spsolve(H, -grad)
            except Exception:
                delta = None
            if delta is None or not np.all(np.isfinite(delta)):
                lam *= 10.0
                rejected += 1
                continue
            cand = st.apply_step(delta)
            r_new, J_new, cost_new, info_new = asm.assemble(cand)
            if cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                st, r, J, cost, info = cand, r_new, J_new, cost_new, info_new
                history.append(cost)
                grad = J.T @ r
                grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
                lam = max(lam / 3.0, 1e-12)
                accepted += 1
                step_accepted = True
                if grad_norm < options.gtol:
                    converged = True
                    message = "gradient below tolerance"
                elif rel < options.ftol:
                    converged = True
                    message = "relative cost decrease below tolerance"
                break
            lam *= 10.0
            rejected += 1
        if not step_accepted and not converged:
            converged = True
            message = "no decreasing step found (damping exhausted)"
        if converged:
            break
    if not converged:
        message = "iteration budget exhausted"

    report = SolveReport(
        converged=converged,
        iterations=it,
        accepted_steps=accepted,
        rejected_steps=rejected,
        initial_cost=history[0],
        final_cost=cost,
        cost_history=history,
        gradient_norm=grad_norm,
        dropped_observations=info.get("dropped", 0),
        message=message,
    )
    return st.write_back(problem), report
