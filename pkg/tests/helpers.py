import itertools

import numpy as np

from c3mpc.lcs import LcsModel


def random_p_matrix(rng, m):
    """Positive definite (hence P-) matrix plus a skew part."""
    A = rng.normal(size=(m, m))
    S = rng.normal(size=(m, m))
    return A @ A.T + 0.5 * np.eye(m) + 0.5 * (S - S.T)


def random_psd_diag(rng, m):
    """PSD plus a nonnegative diagonal: may be singular, never a P-matrix guarantee."""
    r = rng.integers(1, m + 1)
    A = rng.normal(size=(m, r))
    return A @ A.T + np.diag(rng.uniform(0.0, 1.0, m) * (rng.uniform(size=m) < 0.5))


def pushed_contact_model():
    """One state pressed into a spring contact: ``y = x + lam``, ``x+ = x + lam``."""
    return LcsModel(
        A=[[1.0]], B=[[1.0]], D=[[1.0]], d=[0.0], E=[[1.0]], F=[[1.0]], H=[[0.0]], c=[0.0]
    )


def random_projection_instance(rng, n_lambda=None, weighted=True):
    """Random complementarity set and target with a nonempty set (E has full row rank)."""
    from c3mpc.projections import ComplementaritySet, ProjectionTarget

    m = int(rng.integers(1, 7)) if n_lambda is None else n_lambda
    nx = m + int(rng.integers(0, 3))
    nu = int(rng.integers(0, 3))
    E = rng.normal(size=(m, nx))
    F = random_p_matrix(rng, m) if rng.uniform() < 0.5 else random_psd_diag(rng, m)
    H = rng.normal(size=(m, nu))
    c = rng.normal(size=m)
    n = nx + m + nu
    if weighted:
        W = rng.normal(size=(n, n))
        U = W @ W.T / n + 0.1 * np.eye(n)
    else:
        U = np.eye(n)
    target = ProjectionTarget(rng.normal(size=n) * 2.0, U)
    return ComplementaritySet(E, F, H, c), target


def all_lcp_solutions(F, q, tol=1e-9):
    """Every LCP solution found by trying all ``2**m`` supports with dense solves."""
    sols = []
    m = len(q)
    for support in itertools.product((False, True), repeat=m):
        s = np.array(support)
        lam = np.zeros(m)
        if s.any():
            # least squares also covers singular principal blocks; the check below filters
            lam[s] = np.linalg.lstsq(F[np.ix_(s, s)], -q[s], rcond=None)[0]
        y = F @ lam + q
        scale = 1.0 + np.abs(lam).max() + np.abs(y).max()
        if lam.min() >= -tol * scale and y.min() >= -tol * scale and abs(lam @ y) <= tol * scale**2:
            sols.append(lam)
    return sols
