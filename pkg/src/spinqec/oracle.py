"""Exact reference computations on the full 2^N-dimensional spin space.

Everything here is brute force and only meant for small ensembles (N <= 12).
It is used to check the PI-level amplitudes, to test the spin-loss versus
dephasing equivalence and to cross-check the PI master equation.

Computational basis conventions: spin 0 is the most significant bit, the last
spin the least significant, and single-spin index 0 is spin up.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix, identity, kron as sp_kron
from scipy.sparse.linalg import expm_multiply

from .picore import DomainError, degeneracy

__all__ = [
    "ResourceError",
    "MAX_SPINS",
    "FullStateBasis",
    "build_basis",
    "apply_channel_exact",
    "extract_coefficients",
    "verify_channel_maps",
    "verify_loss_dephasing_equivalence",
    "barred_matrix",
    "project_barred",
    "lindblad_full",
    "verification_report",
]

MAX_SPINS = 12

SIGMA = {
    -1: np.array([[0.0, 0.0], [1.0, 0.0]]),  # sigma_-: up -> down
    0: np.array([[1.0, 0.0], [0.0, -1.0]]),
    1: np.array([[0.0, 1.0], [0.0, 0.0]]),
}


class ResourceError(MemoryError):
    """Requested ensemble is too large for the dense reference."""


@dataclass(frozen=True)
class FullStateBasis:
    """Coupled basis ``|J, M, i>`` as explicit vectors.

    ``vectors[two_j]`` has shape ``(2**N, d_N^J, 2J+1)``; the last axis runs
    over ``M = -J..J``.  Vectors are real.
    """

    n_spins: int
    vectors: dict

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    @property
    def two_js(self) -> list[int]:
        return sorted(self.vectors, reverse=True)

    def matrix(self) -> np.ndarray:
        """Unitary with columns ordered by (J descending, i, M)."""
        cols = [self.vectors[tj].reshape(self.dim, -1) for tj in self.two_js]
        return np.concatenate(cols, axis=1)

    def column_index(self, two_j: int, i: int, two_m: int) -> int:
        off = 0
        for tj in self.two_js:
            d, w = self.vectors[tj].shape[1:]
            if tj == two_j:
                return off + i * w + (two_m + two_j) // 2
            off += d * w
        raise DomainError(f"J={two_j}/2 not present")


def _spin_half_cg(two_jp: int, two_j: int, two_m: int, s: int) -> float:
    # <Jp, M - sigma; 1/2 sigma | J M>, with s = +1 for sigma = +1/2.
    jp = two_jp / 2
    M = two_m / 2
    if two_j == two_jp + 1:
        num = jp + M + 0.5 if s > 0 else jp - M + 0.5
        return math.sqrt(max(num, 0.0) / (2 * jp + 1))
    if s > 0:
        return -math.sqrt(max(jp - M + 0.5, 0.0) / (2 * jp + 1))
    return math.sqrt(max(jp + M + 0.5, 0.0) / (2 * jp + 1))


@lru_cache(maxsize=16)
def build_basis(n_spins: int) -> FullStateBasis:
    """Couple spins left to right, one spin-1/2 at a time."""
    if n_spins < 1:
        raise DomainError("n_spins must be positive")
    if n_spins > MAX_SPINS:
        raise ResourceError(f"N={n_spins} exceeds the dense reference limit {MAX_SPINS}")
    up, down = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    vecs = {1: np.stack([down, up], axis=1)[:, None, :]}
    for n in range(2, n_spins + 1):
        old_dim = 2 ** (n - 1)
        parts: dict[int, list[np.ndarray]] = {}
        for two_jp in sorted(vecs):
            P = vecs[two_jp]
            dp = P.shape[1]
            for two_j in (two_jp - 1, two_jp + 1):
                if two_j < 0:
                    continue
                V = np.zeros((old_dim, 2, dp, two_j + 1))
                for k, two_m in enumerate(range(-two_j, two_j + 1, 2)):
                    for s, slot in ((1, 0), (-1, 1)):
                        two_mp = two_m - s
                        if abs(two_mp) > two_jp:
                            continue
                        V[:, slot, :, k] = _spin_half_cg(two_jp, two_j, two_m, s) * P[
                            :, :, (two_mp + two_jp) // 2
                        ]
                parts.setdefault(two_j, []).append(V.reshape(old_dim * 2, dp, two_j + 1))
        vecs = {tj: np.concatenate(p, axis=1) for tj, p in parts.items()}
    for tj, v in vecs.items():
        v.setflags(write=False)
        assert v.shape[1] == degeneracy(n_spins, tj / 2)
    return FullStateBasis(n_spins, vecs)


def _apply_site(op: np.ndarray, X: np.ndarray, n_spins: int, site: int) -> np.ndarray:
    """Apply a single-spin operator to the leading (2**N) axis of X."""
    shp = X.shape
    Xr = X.reshape(2**site, 2, 2 ** (n_spins - site - 1), -1)
    out = np.einsum("ab,xbyr->xayr", op, Xr)
    return out.reshape(shp)


def _kraus_images(basis: FullStateBasis, two_j: int, kind: str, m=None):
    """Images of all input vectors ``|J, M, i>`` under the channel's Kraus set.

    Returns (Y, out_n) with Y of shape (dim_out, K * d, 2J+1).
    """
    n = basis.n_spins
    V = basis.vectors[two_j]
    d, w = V.shape[1:]
    X = V.reshape(basis.dim, d * w)
    if kind == "collective":
        op = SIGMA[m] * (0.5 if m == 0 else 1.0)
        Y = sum(_apply_site(op, X, n, s) for s in range(n))
        return Y.reshape(basis.dim, d, w), n
    if kind == "individual":
        imgs = [_apply_site(SIGMA[m], X, n, s).reshape(basis.dim, d, w) for s in range(n)]
        return np.concatenate(imgs, axis=1), n
    if kind == "loss":
        if n < 2:
            raise DomainError("loss needs at least two spins for a PI image")
        Vr = V.reshape(basis.dim // 2, 2, d, w)
        return Vr.reshape(basis.dim // 2, 2 * d, w), n - 1
    raise ValueError(f"unknown channel kind {kind!r}")


def _output_coords(Y: np.ndarray, out_basis: FullStateBasis):
    """Coordinates of image vectors in each output J block: T[two_j'][i', A, r, M]."""
    return {
        tj: np.einsum("zia,zrx->iarx", Vp, Y, optimize=True)
        for tj, Vp in out_basis.vectors.items()
    }


def apply_channel_exact(
    n_spins: int, two_j: int, two_ma: int, two_mb: int, kind: str, m=None
):
    """Apply a channel to ``bar(J, Ma, Mb)`` on the full space.

    Returns ``(decomposition, residual)``: the decomposition maps
    ``(n_out, two_j', two_a, two_b)`` to the coefficient of the output on the
    trace-normalised barred element, and the residual is the Frobenius norm
    of whatever the barred elements fail to capture.
    """
    maps, residual = _channel_maps(build_basis(n_spins), two_j, kind, m, residual=True)
    ka = (two_ma + two_j) // 2
    kb = (two_mb + two_j) // 2
    out = {}
    for (n_out, tjp), c in maps.items():
        block = c[ka, kb]
        for a in range(tjp + 1):
            for b in range(tjp + 1):
                if abs(block[a, b]) > 1e-15:
                    out[(n_out, tjp, 2 * a - tjp, 2 * b - tjp)] = float(block[a, b])
    return out, float(residual[ka, kb])


def _channel_maps(basis: FullStateBasis, two_j: int, kind: str, m, residual: bool):
    """Barred coefficients ``c[M, M', A, B]`` per output block, plus residual
    norms per input pair (M, M') when requested."""
    Y, n_out = _kraus_images(basis, two_j, kind, m)
    d = basis.vectors[two_j].shape[1]
    out_basis = build_basis(n_out)
    T = _output_coords(Y, out_basis)
    maps = {}
    for tjp, Tb in T.items():
        maps[(n_out, tjp)] = np.einsum("iarx,ibry->xyab", Tb, Tb, optimize=True) / d
    res = None
    if residual:
        w = two_j + 1
        res2 = np.zeros((w, w))
        keys = sorted(T)
        for k1 in keys:
            for k2 in keys:
                T1, T2 = T[k1], T[k2]
                O = np.einsum("iarx,jbry->xyiajb", T1, T2, optimize=True) / d
                if k1 == k2:
                    dp = T1.shape[0]
                    c = maps[(n_out, k1)]
                    O = O - np.einsum("ij,xyab->xyiajb", np.eye(dp), c) / dp
                res2 += np.sum(np.abs(O) ** 2, axis=(2, 3, 4, 5))
        res = np.sqrt(res2)
    return maps, res


def extract_coefficients(n_spins: int, kind: str, m=None) -> dict:
    """Squared jump amplitudes read from the exact channel.

    Keys ``(two_j, two_m, two_j_out, two_m_out)``; values are the barred
    weights of the diagonal output (the squared amplitude).
    """
    basis = build_basis(n_spins)
    out = {}
    for two_j in basis.vectors:
        if kind == "loss" and n_spins < 2:
            continue
        maps, _ = _channel_maps(basis, two_j, kind, m, residual=False)
        for (_, tjp), c in maps.items():
            for k in range(two_j + 1):
                diag = np.real(np.diag(c[k, k]))
                for a, v in enumerate(diag):
                    if abs(v) > 1e-14:
                        out[(two_j, 2 * k - two_j, tjp, 2 * a - tjp)] = float(v)
    return out


def _channels(n_spins: int):
    for m in (-1, 0, 1):
        yield "collective", m
        yield "individual", m
    if n_spins >= 2:
        yield "loss", None


def verify_channel_maps(n_spins: int, residual: bool | None = None) -> dict:
    """Compare every exact channel image with the PI-level amplitude formulae.

    ``residual`` defaults to True for N <= 8.
    """
    from .coefficients import pi_channel_map

    if residual is None:
        residual = n_spins <= 8
    basis = build_basis(n_spins)
    per_channel = {}
    worst_map = worst_res = 0.0
    for kind, m in _channels(n_spins):
        err = res_max = 0.0
        for two_j in basis.vectors:
            maps, res = _channel_maps(basis, two_j, kind, m, residual)
            for ka in range(two_j + 1):
                for kb in range(two_j + 1):
                    pred = pi_channel_map(
                        n_spins, two_j, 2 * ka - two_j, 2 * kb - two_j, kind, m
                    )
                    for (n_out, tjp), c in maps.items():
                        P = np.zeros((tjp + 1, tjp + 1))
                        for (no, tj2, ta, tb), v in pred.items():
                            if (no, tj2) == (n_out, tjp):
                                P[(ta + tjp) // 2, (tb + tjp) // 2] += v
                        err = max(err, float(np.max(np.abs(c[ka, kb] - P))))
                    # predictions must not point at blocks the exact map lacks
                    for (no, tj2, _, _), v in pred.items():
                        if (no, tj2) not in maps and abs(v) > 0:
                            err = max(err, abs(v))
            if res is not None:
                res_max = max(res_max, float(res.max()))
        name = kind if m is None else f"{kind}:{m:+d}"
        per_channel[name] = {"max_map_error": err, "max_residual": res_max}
        worst_map = max(worst_map, err)
        worst_res = max(worst_res, res_max)
    return {
        "n_spins": n_spins,
        "max_map_error": worst_map,
        "max_residual": worst_res,
        "channels": per_channel,
    }


# ---------------------------------------------------------------------------
# Barred elements as explicit matrices
# ---------------------------------------------------------------------------


def barred_matrix(basis: FullStateBasis, two_j: int, two_ma: int, two_mb: int) -> np.ndarray:
    V = basis.vectors[two_j]
    d = V.shape[1]
    return V[:, :, (two_ma + two_j) // 2] @ V[:, :, (two_mb + two_j) // 2].T / d


def project_barred(rho: np.ndarray, basis: FullStateBasis):
    """Split a full-space operator into PI blocks and a residual norm.

    Returns ``({two_j: c[A, B]}, residual)`` where ``rho`` is approximated by
    ``sum c[A, B] bar(J, A, B)``.
    """
    U = basis.matrix()
    R = U.T @ rho @ U
    blocks = {}
    barred = np.zeros_like(R)
    off = 0
    for tj in basis.two_js:
        d, w = basis.vectors[tj].shape[1:]
        sub = R[off : off + d * w, off : off + d * w].reshape(d, w, d, w)
        c = np.einsum("iaib->ab", sub)
        blocks[tj] = c
        barred[off : off + d * w, off : off + d * w] = np.kron(np.eye(d), c) / d
        off += d * w
    return blocks, float(np.linalg.norm(R - barred))


def _insert_spin(rho: np.ndarray, n_rest: int, pos: int, spin: np.ndarray) -> np.ndarray:
    """Insert a single-spin density matrix at position ``pos``."""
    a, b = 2**pos, 2 ** (n_rest - pos)
    r = rho.reshape(a, b, a, b)
    out = np.einsum("xyuv,st->xsyutv", r, spin)
    return out.reshape(2 * a * b, 2 * a * b)


def _dephase_average(rho: np.ndarray, n_spins: int) -> np.ndarray:
    out = np.zeros_like(rho)
    for s in range(n_spins):
        X = _apply_site(SIGMA[0], rho, n_spins, s)
        out += _apply_site(SIGMA[0], X.T.conj(), n_spins, s).T.conj()
    return out / n_spins


def _loss_reappend(rho: np.ndarray, n_spins: int) -> np.ndarray:
    """Lose the last spin, record the direction of the M change and put a spin
    back at a uniformly random position with the polarisation that was lost."""
    half = 2 ** (n_spins - 1)
    r = rho.reshape(half, 2, half, 2)
    out = np.zeros_like(rho)
    for s in (0, 1):
        reduced = r[:, s, :, s]  # M shifts down for s=0 (up lost), up for s=1
        spin = np.zeros((2, 2))
        spin[s, s] = 1.0
        for pos in range(n_spins):
            out += _insert_spin(reduced, n_spins - 1, pos, spin)
    return out / n_spins


def verify_loss_dephasing_equivalence(n_spins: int) -> dict:
    """Compare loss followed by re-appending the lost polarisation with the
    averaged single-spin dephasing map ``D(rho) = mean_n Z_n rho Z_n``.

    Both maps are evaluated on every barred element.  ``raw_deviation`` is the
    largest element-wise difference between the two outputs.  Writing the
    composite as ``id + lam (D - id)``, ``rate_factor`` is the fitted ``lam``,
    ``rate_factor_spread`` its variation over all inputs (M-independence) and
    ``normalized_deviation`` the largest residual after the fit.
    """
    if n_spins < 2 or n_spins > 8:
        raise DomainError("equivalence check supports 2 <= N <= 8")
    basis = build_basis(n_spins)
    raw = 0.0
    leak = 0.0
    num = den = 0.0
    pairs = []
    for two_j in basis.vectors:
        for ka in range(two_j + 1):
            for kb in range(two_j + 1):
                rho = barred_matrix(basis, two_j, 2 * ka - two_j, 2 * kb - two_j)
                comp = _loss_reappend(rho, n_spins)
                deph = _dephase_average(rho, n_spins)
                bc, rc = project_barred(comp, basis)
                bd, rd = project_barred(deph, basis)
                leak = max(leak, rc, rd)
                diffs_c, diffs_d = [], []
                for tj in bc:
                    ident = np.zeros_like(bc[tj])
                    if tj == two_j:
                        ident[ka, kb] = 1.0
                    raw = max(raw, float(np.max(np.abs(bc[tj] - bd[tj]))))
                    diffs_c.append((bc[tj] - ident).ravel())
                    diffs_d.append((bd[tj] - ident).ravel())
                dc = np.concatenate(diffs_c)
                dd = np.concatenate(diffs_d)
                pairs.append((dc, dd))
                num += float(dd @ dc)
                den += float(dd @ dd)
    lam = num / den
    dev = 0.0
    local = []
    for dc, dd in pairs:
        dev = max(dev, float(np.max(np.abs(dc - lam * dd))))
        nd = float(dd @ dd)
        if nd > 1e-12:
            local.append(float(dd @ dc) / nd)
    return {
        "n_spins": n_spins,
        "raw_deviation": raw,
        "rate_factor": lam,
        "rate_factor_spread": float(max(local) - min(local)) if local else 0.0,
        "normalized_deviation": dev,
        "max_residual": leak,
    }


# ---------------------------------------------------------------------------
# Full-space Lindblad evolution
# ---------------------------------------------------------------------------


def _site_op(op: np.ndarray, n_spins: int, site: int):
    left = identity(2**site, format="csr")
    right = identity(2 ** (n_spins - site - 1), format="csr")
    return sp_kron(sp_kron(left, csr_matrix(op)), right, format="csr")


def lindblad_full(rho0: np.ndarray, n_spins: int, rates: dict, times) -> list[np.ndarray]:
    """Integrate the collective + individual Lindblad equation exactly.

    ``rates`` maps ``("collective" | "individual", m)`` to a rate.  Spin loss
    is not supported here.  Returns the density matrix at each time.
    """
    if n_spins > 7:
        raise ResourceError("full Liouvillian limited to N <= 7")
    dim = 2**n_spins
    eye = identity(dim, format="csr")
    L = csr_matrix((dim * dim, dim * dim), dtype=complex)
    jumps = []
    for (kind, m), rate in rates.items():
        if rate == 0:
            continue
        if kind == "collective":
            op = sum(_site_op(SIGMA[m] * (0.5 if m == 0 else 1.0), n_spins, s) for s in range(n_spins))
            jumps.append((rate, op))
        elif kind == "individual":
            jumps.extend((rate, _site_op(SIGMA[m], n_spins, s)) for s in range(n_spins))
        else:
            raise ValueError(f"unsupported channel {kind!r}")
    # Row-major vec: vec(A rho B) = (A kron B^T) vec(rho)
    for rate, op in jumps:
        opd = op.conj().T
        n_op = (opd @ op).tocsr()
        L = L + rate * (
            sp_kron(op, op.conj(), format="csr")
            - 0.5 * sp_kron(n_op, eye, format="csr")
            - 0.5 * sp_kron(eye, n_op.T, format="csr")
        )
    times = np.asarray(times, dtype=float)
    vec = np.asarray(rho0, dtype=complex).ravel()
    out = []
    t_prev = 0.0
    for t in times:
        vec = expm_multiply(L * (t - t_prev), vec) if t > t_prev else vec
        t_prev = t
        out.append(vec.reshape(dim, dim))
    return out


def verification_report(n_max: int, path=None) -> dict:
    """Run channel-map and equivalence checks for every N <= n_max."""
    if n_max > MAX_SPINS:
        raise ResourceError(f"n_max={n_max} exceeds {MAX_SPINS}")
    maps = [verify_channel_maps(n) for n in range(1, n_max + 1)]
    equiv = [verify_loss_dephasing_equivalence(n) for n in range(2, min(n_max, 8) + 1)]
    report = {
        "n_max": n_max,
        "channel_maps": maps,
        "loss_dephasing": equiv,
        "max_map_error": max(r["max_map_error"] for r in maps),
        "max_residual": max(r["max_residual"] for r in maps),
        "max_equivalence_deviation": max(
            (r["normalized_deviation"] for r in equiv), default=0.0
        ),
    }
    if path is not None:
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2)
    return report

