"""Empirical verification lab for the linear-model guarantees.

Synthetic instances follow the aggregation data model: L children share a
true basis B (columns of a larger dictionary), child parameters sit within
beta of their mean theta_0, the root series carries 1/L of the child noise
variance. The lab checks, by Monte Carlo:

  * Lasso support recovery of the basis under the incoherence assumptions,
  * the plug-in ridge recovery error bound and its beta=0 shrinkage limit,
  * the exact sigma^2*K/T fixed-design OLS identity for the baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_SUPPORT_EPS = 1e-10
_GAMMA_EPS = 1e-12   # round-off floor: a duplicated column must still fail


class TheoryError(ValueError):
    pass


@dataclass(frozen=True)
class TheoryInstance:
    dictionary: np.ndarray   # (T, D_dict), columns l2-normalized to sqrt(T)
    support: np.ndarray      # sorted true support, size K
    basis: np.ndarray        # (T, K) = dictionary[:, support]
    theta0: np.ndarray       # (K,)
    thetas: np.ndarray       # (L, K) child parameters, mean exactly theta0
    y0: np.ndarray           # (T,) root observations
    ys: np.ndarray           # (L, T) child observations
    sigma: float
    beta: float

    @property
    def T(self) -> int:
        return self.dictionary.shape[0]

    @property
    def L(self) -> int:
        return self.thetas.shape[0]

    @property
    def K(self) -> int:
        return self.support.size

    @property
    def cov(self) -> np.ndarray:
        """Sample covariance of the true basis, B^T B / T."""
        return self.basis.T @ self.basis / self.T

    @property
    def row_norm_bound(self) -> float:
        """r: the largest l2 norm among rows of the true basis."""
        return float(np.linalg.norm(self.basis, axis=1).max())


def sigma_norm_sq(delta: np.ndarray, cov: np.ndarray) -> float:
    """Squared Sigma-norm, delta^T Sigma delta."""
    return float(delta @ cov @ delta)


def generate_instance(T: int, D_dict: int, K: int, L: int, sigma: float,
                      beta: float, seed) -> TheoryInstance:
    """Draw one synthetic instance.

    Dictionary columns are iid Gaussian rescaled to l2 norm sqrt(T); the
    support is uniform; theta_0 entries are random signs (magnitude 1, so the
    minimum-signal condition is easy to state); child offsets are recentered
    to mean exactly zero and scaled so the largest has norm beta.
    """
    if not 1 <= K <= D_dict:
        raise TheoryError(f"need 1 <= K <= D_dict, got K={K}, D_dict={D_dict}")
    if L < 1 or T < 1:
        raise TheoryError(f"need L >= 1 and T >= 1, got L={L}, T={T}")
    if sigma < 0 or beta < 0:
        raise TheoryError("sigma and beta must be nonnegative")
    rng = np.random.default_rng(seed)
    dictionary = rng.normal(size=(T, D_dict))
    dictionary *= math.sqrt(T) / np.linalg.norm(dictionary, axis=0, keepdims=True)
    support = np.sort(rng.choice(D_dict, size=K, replace=False))
    basis = dictionary[:, support]

    theta0 = rng.choice([-1.0, 1.0], size=K)
    deltas = rng.normal(size=(L, K))
    deltas -= deltas.mean(axis=0, keepdims=True)
    max_norm = float(np.linalg.norm(deltas, axis=1).max())
    deltas = deltas * (beta / max_norm) if max_norm > 0 else deltas * 0.0
    thetas = theta0[None, :] + deltas

    ys = thetas @ basis.T + sigma * rng.normal(size=(L, T))
    y0 = basis @ theta0 + (sigma / math.sqrt(L)) * rng.normal(size=T)
    return TheoryInstance(
        dictionary=dictionary, support=support, basis=basis,
        theta0=theta0, thetas=thetas, y0=y0, ys=ys, sigma=sigma, beta=beta,
    )


def soft_threshold(x, lam: float):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


@dataclass(frozen=True)
class LassoResult:
    alpha: np.ndarray
    converged: bool
    iterations: int


def lasso_cd(dictionary: np.ndarray, y: np.ndarray, lam: float,
             tol: float = 1e-8, max_iter: int = 10_000) -> LassoResult:
    """Cyclic coordinate descent for (1/2T)||y - Ba||^2 + lam*||a||_1.

    Converged when no coordinate moves more than tol in one full cycle.
    """
    if lam < 0:
        raise TheoryError(f"lam must be nonnegative, got {lam}")
    B = np.asarray(dictionary, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    T, D = B.shape
    col_sq = (B * B).sum(axis=0) / T
    if np.any(col_sq == 0):
        raise TheoryError("dictionary has a zero column")
    alpha = np.zeros(D)
    residual = y.copy()
    for it in range(1, max_iter + 1):
        max_change = 0.0
        for j in range(D):
            old = alpha[j]
            rho = (B[:, j] @ residual) / T + col_sq[j] * old
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                residual += B[:, j] * (old - new)
                alpha[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            return LassoResult(alpha=alpha, converged=True, iterations=it)
    return LassoResult(alpha=alpha, converged=False, iterations=max_iter)


def alg1_basis_recovery(instance: TheoryInstance, lam: float,
                        max_iter: int = 10_000):
    """Estimate the support from the root series; returns (support_hat, basis_hat)."""
    result = lasso_cd(instance.dictionary, instance.y0, lam, max_iter=max_iter)
    if not result.converged:
        raise TheoryError(
            f"lasso did not converge within {result.iterations} cycles (lam={lam})"
        )
    support_hat = np.flatnonzero(np.abs(result.alpha) > _SUPPORT_EPS)
    return support_hat, instance.dictionary[:, support_hat]


def _spd_solver(gram: np.ndarray):
    try:
        return cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise TheoryError(f"singular system: {exc}") from exc


def ols_baseline(instance: TheoryInstance, basis_hat: np.ndarray) -> np.ndarray:
    """Per-child OLS of y_n on the basis; rows are child estimates."""
    B = np.asarray(basis_hat, dtype=np.float64)
    factor = _spd_solver(B.T @ B)
    return cho_solve(factor, B.T @ instance.ys.T).T


def alg2_param_recovery(instance: TheoryInstance, basis_hat: np.ndarray,
                        lam_ridge: float):
    """Plug-in recovery: root OLS, then per-child ridge shrinkage toward it.

    lam_ridge=inf is the beta=0 limit (children snap to the root estimate).
    Returns (theta0_hat, thetas_hat with child rows).
    """
    B = np.asarray(basis_hat, dtype=np.float64)
    T, K = B.shape
    theta0_hat = cho_solve(_spd_solver(B.T @ B), B.T @ instance.y0)
    if math.isinf(lam_ridge):
        return theta0_hat, np.tile(theta0_hat, (instance.L, 1))
    if lam_ridge < 0:
        raise TheoryError(f"lam_ridge must be nonnegative, got {lam_ridge}")
    cov = B.T @ B / T
    factor = _spd_solver(cov + lam_ridge * np.eye(K))
    centered = instance.ys - (B @ theta0_hat)[None, :]
    psi = cho_solve(factor, B.T @ centered.T).T / T
    return theta0_hat, theta0_hat[None, :] + psi


@dataclass(frozen=True)
class AssumptionReport:
    c_min: float
    incoherence: float
    gamma: float
    lambda_lower: float
    signal_threshold: float
    theta0_min_abs: float
    passes: bool


def check_assumptions(instance: TheoryInstance) -> AssumptionReport:
    """Lower-eigenvalue and mutual-incoherence checks plus the lasso
    penalty lower bound and the minimum-signal threshold it implies."""
    T = instance.T
    B_s = instance.basis
    mask = np.ones(instance.dictionary.shape[1], dtype=bool)
    mask[instance.support] = False
    B_sc = instance.dictionary[:, mask]
    gram = B_s.T @ B_s
    c_min = float(np.linalg.eigvalsh(gram / T).min())
    try:
        cross = np.linalg.solve(gram, B_s.T @ B_sc).T  # rows: S^c, cols: S
    except np.linalg.LinAlgError as exc:
        raise TheoryError(f"singular B_S^T B_S: {exc}") from exc
    incoherence = float(np.abs(cross).sum(axis=1).max()) if cross.size else 0.0
    gamma = 1.0 - incoherence
    d = instance.dictionary.shape[1]
    if gamma > _GAMMA_EPS:
        lambda_lower = (2.0 / gamma) * math.sqrt(
            2.0 * instance.sigma**2 * math.log(d) / (instance.L * T)
        )
        cov_inv = np.linalg.inv(gram / T)
        inf_norm = float(np.abs(cov_inv).sum(axis=1).max())
        signal_threshold = lambda_lower * (
            inf_norm + 4.0 * instance.sigma / math.sqrt(instance.L * c_min)
        )
    else:
        lambda_lower = float("nan")
        signal_threshold = float("nan")
    theta0_min_abs = float(np.abs(instance.theta0).min())
    passes = c_min > 0 and _GAMMA_EPS < gamma <= 1
    return AssumptionReport(
        c_min=c_min, incoherence=incoherence, gamma=gamma,
        lambda_lower=lambda_lower, signal_threshold=signal_threshold,
        theta0_min_abs=theta0_min_abs, passes=passes,
    )


def theorem1_bounds(T: int, K: int, L: int, sigma: float, beta: float, r: float):
    """(unregularized bound, regularized bound, corollary ridge bound)."""
    base = sigma**2 * K / T
    if beta == 0.0 or r == 0.0:
        return base, 6.0 * base / L, 0.0
    reg = 3.0 * base / (1.0 + sigma**2 * K / (T * r**2 * beta**2)) + 6.0 * base / L
    corollary = (r**2 * beta**2 * sigma**2 * K) / (T * r**2 * beta**2 + sigma**2 * K)
    return base, reg, corollary


def ridge_lambda(T: int, K: int, sigma: float, beta: float) -> float:
    """The theorem's prescription sigma^2*K/(T*beta^2); beta=0 gives inf."""
    if beta == 0.0:
        return float("inf")
    return sigma**2 * K / (T * beta**2)


@dataclass(frozen=True)
class Theorem1Row:
    beta: float
    L: int
    emp_reg: float
    emp_unreg: float
    bound_reg: float
    bound_unreg: float
    se_reg: float
    se_unreg: float
    emp_corollary: float
    se_corollary: float
    bound_corollary: float


@dataclass(frozen=True)
class Theorem1Result:
    rows: list[Theorem1Row]
    r_used: float
    trials: int
    seed: int

    def to_csv(self) -> str:
        lines = ["beta,L,emp_reg,emp_unreg,bound_reg,bound_unreg,se_reg,se_unreg"]
        for row in self.rows:
            lines.append(
                f"{row.beta:.10g},{row.L},{row.emp_reg:.10g},{row.emp_unreg:.10g},"
                f"{row.bound_reg:.10g},{row.bound_unreg:.10g},"
                f"{row.se_reg:.10g},{row.se_unreg:.10g}"
            )
        return "\n".join(lines) + "\n"


def mc_theorem1(T: int, K: int, L: int, sigma: float, betas, trials: int,
                seed: int, r: float | None = None) -> Theorem1Result:
    """Monte Carlo check of the recovery error bounds on the true basis.

    Each trial draws an instance from the stream (seed, trial); beta cells
    share trial streams (common random numbers). The bound is evaluated at
    the loosest valid r: the max row norm observed across all instances,
    unless an explicit r is given.
    """
    betas = list(betas)
    per_beta_reg = {b: [] for b in betas}
    per_beta_unreg = {b: [] for b in betas}
    per_beta_cor = {b: [] for b in betas}
    r_seen = 0.0
    for trial in range(trials):
        for beta in betas:
            inst = generate_instance(T, K, K, L, sigma, beta, seed=(seed, trial))
            r_seen = max(r_seen, inst.row_norm_bound)
            cov = inst.cov
            lam = ridge_lambda(T, K, sigma, beta)
            _, theta_hat = alg2_param_recovery(inst, inst.basis, lam)
            theta_tilde = ols_baseline(inst, inst.basis)
            reg_errs = [
                sigma_norm_sq(theta_hat[n] - inst.thetas[n], cov) for n in range(L)
            ]
            unreg_errs = [
                sigma_norm_sq(theta_tilde[n] - inst.thetas[n], cov) for n in range(L)
            ]
            per_beta_reg[beta].append(float(np.mean(reg_errs)))
            per_beta_unreg[beta].append(float(np.mean(unreg_errs)))
            per_beta_cor[beta].append(_corollary_error(inst, lam))
    r_used = r if r is not None else r_seen
    rows = []
    for beta in betas:
        bound_unreg, bound_reg, bound_cor = theorem1_bounds(T, K, L, sigma, beta, r_used)
        reg = np.array(per_beta_reg[beta])
        unreg = np.array(per_beta_unreg[beta])
        cor = np.array(per_beta_cor[beta])
        rows.append(
            Theorem1Row(
                beta=beta, L=L,
                emp_reg=float(reg.mean()), emp_unreg=float(unreg.mean()),
                bound_reg=bound_reg, bound_unreg=bound_unreg,
                se_reg=float(reg.std(ddof=1) / math.sqrt(trials)),
                se_unreg=float(unreg.std(ddof=1) / math.sqrt(trials)),
                emp_corollary=float(cor.mean()),
                se_corollary=float(cor.std(ddof=1) / math.sqrt(trials)),
                bound_corollary=bound_cor,
            )
        )
    return Theorem1Result(rows=rows, r_used=r_used, trials=trials, seed=seed)


def _corollary_error(inst: TheoryInstance, lam: float) -> float:
    """Oracle-assisted ridge error: estimate theta_n - theta_0 from
    y_n - B theta_0 (true root parameters) and compare in Sigma norm."""
    if math.isinf(lam):
        psi = np.zeros_like(inst.thetas)
    else:
        B = inst.basis
        cov = inst.cov
        factor = _spd_solver(cov + lam * np.eye(inst.K))
        centered = inst.ys - (B @ inst.theta0)[None, :]
        psi = cho_solve(factor, B.T @ centered.T).T / inst.T
    cov = inst.cov
    true_psi = inst.thetas - inst.theta0[None, :]
    errs = [sigma_norm_sq(psi[n] - true_psi[n], cov) for n in range(inst.L)]
    return float(np.mean(errs))


@dataclass(frozen=True)
class Lemma1Result:
    trials: int
    recovered: int
    conditions_met: int
    recovery_rate: float
    gamma_min: float
    c_min_min: float
    mean_lambda: float
    seed: int


def mc_lemma1(T: int, D_dict: int, K: int, L: int, sigma: float, trials: int,
              seed: int) -> Lemma1Result:
    """Support recovery frequency with the penalty at its per-instance lower
    bound, counting only instances whose assumptions actually hold."""
    recovered = 0
    conditions_met = 0
    gammas, c_mins, lambdas = [], [], []
    for trial in range(trials):
        inst = generate_instance(T, D_dict, K, L, sigma, beta=0.0, seed=(seed, trial))
        report = check_assumptions(inst)
        gammas.append(report.gamma)
        c_mins.append(report.c_min)
        if not (report.passes and report.theta0_min_abs >= report.signal_threshold):
            continue
        conditions_met += 1
        lambdas.append(report.lambda_lower)
        support_hat, _ = alg1_basis_recovery(inst, report.lambda_lower)
        if np.array_equal(support_hat, inst.support):
            recovered += 1
    return Lemma1Result(
        trials=trials,
        recovered=recovered,
        conditions_met=conditions_met,
        recovery_rate=recovered / conditions_met if conditions_met else float("nan"),
        gamma_min=float(min(gammas)),
        c_min_min=float(min(c_mins)),
        mean_lambda=float(np.mean(lambdas)) if lambdas else float("nan"),
        seed=seed,
    )
