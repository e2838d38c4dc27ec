"""Projection matching: best template orientation and in-plane angle per image.

For image coefficients ``M_n(k_q)`` and template coefficients ``S_n(k_q)``
the correlation with the template rotated by ``gamma`` is

    g(gamma) = sum_n c_n exp(-i n gamma),
    c_n = sum_q M_n(k_q) C(k_q) conj(S_n(k_q)) k_q dk,

and the score is ``Re g / (|C S| |M|)`` with norms ``|g|^2 = sum_q k_q dk
sum_n |g_n|^2``. The common factor ``2 pi`` of the polar inner product
cancels and is left out everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optics import CtfParams, eval_ctf
from .simulate import PolarImage
from .templates import AngleGrid, TemplateBank


class MatchError(ValueError):
    """Degenerate input (zero image or template norm)."""


@dataclass(frozen=True)
class MatchConfig:
    f_rand: float = 0.0
    coarse_factor: int = 5
    k_upper: float | None = None

    def __post_init__(self):
        if not (0 <= self.f_rand < 1):
            raise ValueError(f"f_rand must lie in [0, 1), got {self.f_rand}")
        if self.coarse_factor < 1 or int(self.coarse_factor) != self.coarse_factor:
            raise ValueError("coarse_factor must be a positive integer")


@dataclass
class Assignment:
    """Per-image grid indices ``(i, j, l)``, angles and best score."""

    i: np.ndarray
    j: np.ndarray
    l: np.ndarray
    grid: AngleGrid
    score: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    @property
    def alpha(self) -> np.ndarray:
        return self.grid.alphas[self.i]

    @property
    def beta(self) -> np.ndarray:
        return self.grid.betas[self.j]

    @property
    def gamma(self) -> np.ndarray:
        return self.grid.gammas[self.l]

    def angles(self) -> np.ndarray:
        """``(M, 3)`` array of ``(alpha, beta, gamma)``."""
        return np.stack([self.alpha, self.beta, self.gamma], axis=1)

    @classmethod
    def random(cls, grid: AngleGrid, M: int, rng: np.random.Generator) -> "Assignment":
        na, nb, ng = grid.shape
        return cls(rng.integers(na, size=M), rng.integers(nb, size=M), rng.integers(ng, size=M), grid,
                   np.full(M, np.nan))

    def to_text(self) -> str:
        a = self.angles()
        return "".join(f"{m} {a[m, 0]:.10g} {a[m, 1]:.10g} {a[m, 2]:.10g} {self.score[m]:.10g}\n"
                       for m in range(len(self)))


# ------------------------------------------------------------------ kernels

def _radial_weights(ks, dk: float, ctf: CtfParams | None) -> np.ndarray:
    return eval_ctf(ctf, ks) * ks * dk


def correlation_coeffs(img: PolarImage, tmpl: np.ndarray, ctf: CtfParams | None, kappa: float,
                       dk: float) -> np.ndarray:
    """``c_n`` over the shells ``k_q <= kappa`` for one template ``(nr, 2N+1)``."""
    keep = img.ks <= kappa + 1e-9
    w = _radial_weights(img.ks[keep], dk, ctf)
    nm = min(img.coeffs.shape[-1], tmpl.shape[-1])
    a = _center(img.coeffs[keep], nm)
    b = _center(np.asarray(tmpl)[keep], nm)
    return np.sum(a * np.conj(b) * w[:, None], axis=0)


def _center(x, width):
    """Middle ``width`` entries of the last axis (``|n| <= (width-1)/2``)."""
    off = (x.shape[-1] - width) // 2
    return x[..., off:off + width]


def gamma_table(c: np.ndarray, ngamma: int) -> np.ndarray:
    """``g(gamma_l) = sum_n c_n exp(-i n gamma_l)`` on ``ngamma`` angles.

    The last axis of ``c`` holds ``n = -N..N``; modes are folded modulo
    ``ngamma`` and summed by one FFT.
    """
    nmax = (c.shape[-1] - 1) // 2
    ns = np.arange(-nmax, nmax + 1)
    full = np.zeros(c.shape[:-1] + (ngamma,), dtype=complex)
    if 2 * nmax + 1 > ngamma:
        for n in ns:
            full[..., n % ngamma] += c[..., n + nmax]
    else:
        full[..., ns % ngamma] = c
    return np.fft.fft(full, axis=-1)


def best_gamma(c: np.ndarray, ngamma: int) -> tuple[int, float, float]:
    """``(l, gamma_l, Re g(gamma_l))`` maximising ``Re g``; lowest ``l`` on ties."""
    g = gamma_table(np.asarray(c), ngamma).real
    l = int(np.argmax(g))
    return l, 2 * np.pi * l / ngamma, float(g[l])


def normalized_score(value: float, tmpl_norm: float, img_norm: float) -> float:
    if tmpl_norm <= 0 or img_norm <= 0:
        raise MatchError("zero template or image norm")
    return value / (tmpl_norm * img_norm)


def image_norm(img: PolarImage, dk: float, kappa: float | None = None) -> np.ndarray:
    """``|M|`` from ring coefficients; works on one image or a batch."""
    ks = img.ks
    keep = ks <= (ks.max() if kappa is None else kappa) + 1e-9
    e = np.sum(np.abs(img.coeffs[..., keep, :]) ** 2, axis=-1)
    return np.sqrt(e @ (ks[keep] * dk))


def template_norms(bank: TemplateBank, ctf: CtfParams | None, dk: float) -> np.ndarray:
    """``|C S^{ij}|`` for every template, shape ``(nalpha * nbeta,)``."""
    _, energy = bank.flat()
    w = eval_ctf(ctf, bank.ks) ** 2 * bank.ks * dk
    return np.sqrt(energy @ w)


# ------------------------------------------------------------------ search

def _coarse_templates(na: int, nb: int, cf: int) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(0, na, cf), np.arange(0, nb, cf), indexing="ij")
    return (ii * nb + jj).ravel()


def _neighbourhood(t: int, na: int, nb: int, cf: int) -> np.ndarray:
    i0, j0 = divmod(int(t), nb)
    ii = np.arange(max(0, i0 - cf), min(na, i0 + cf + 1))
    jj = np.unique(np.arange(j0 - cf, j0 + cf + 1) % nb)
    return (ii[:, None] * nb + jj[None, :]).ravel()


def _scores(x, s_flat, tnorm, inorm, ngamma):
    """Scores for images ``x (B, nr, 2N+1)`` against templates ``s (T, nr, 2N+1)``.

    ``tnorm`` is ``(B, T)``; returns ``(B, T, ngamma)``.
    """
    xn = np.ascontiguousarray(np.moveaxis(x, -1, 0))  # (n, B, q)
    sn = np.ascontiguousarray(np.moveaxis(np.conj(s_flat), -1, 0).transpose(0, 2, 1))  # (n, q, T)
    c = np.moveaxis(np.matmul(xn, sn), 0, -1)  # (B, T, n)
    g = gamma_table(c, ngamma).real
    return g / (tnorm * inorm[:, None])[:, :, None]


def _pick(cand_t, cand_sc, f_rand, rng):
    """Best triple among evaluated ``(T, ngamma)`` scores, or a random near-tie."""
    flat = cand_sc.ravel()
    if f_rand > 0:
        hits = np.flatnonzero(flat > 1 - f_rand)
        if hits.size:
            k = hits[rng.integers(hits.size)]
            t, l = divmod(int(k), cand_sc.shape[1])
            return cand_t[t], l, flat[k]
    k = int(np.argmax(flat))
    t, l = divmod(k, cand_sc.shape[1])
    return cand_t[t], l, flat[k]


def match_stack(polar: PolarImage, bank: TemplateBank, ctfs, cfg: MatchConfig, dk: float, seed: int = 0,
                step: int = 0, chunk: int | None = None, image_ids=None) -> Assignment:
    """Match every image of a polar batch against the bank.

    Stage 1 scores the coarse subgrid (every ``coarse_factor``-th ``alpha``
    and ``beta``); stage 2 scores all templates within one coarse cell of
    the stage-1 maximum (``alpha`` clipped, ``beta`` periodic). With
    ``f_rand > 0`` a triple is drawn uniformly among the evaluated ones
    scoring above ``1 - f_rand`` (falling back to the best one), using the
    stream ``default_rng([seed, m, step])`` (``m`` taken from ``image_ids``
    when given). Ties go to the lowest
    ``(i * nbeta + j, l)``.
    """
    k_upper = bank.ks.max() if cfg.k_upper is None else cfg.k_upper
    if k_upper > bank.ks.max() + 1e-9:
        raise MatchError(f"bank only reaches k={bank.ks.max()}, asked for {k_upper}")
    pol = polar.restrict(k_upper)
    if pol.coeffs.ndim == 2:
        pol = PolarImage(pol.ks, None, pol.coeffs[None])
    nq = pol.nr
    if nq == 0 or not np.allclose(pol.ks, bank.ks[:nq]):
        raise MatchError("image shells do not line up with the template shells")
    M = pol.coeffs.shape[0]
    ctfs = list(ctfs)
    if len(ctfs) != M:
        raise MatchError("one CTF per image required")
    grid = bank.grid
    na, nb, ng = grid.shape
    cf = int(cfg.coarse_factor)
    s_all, e_all = bank.flat()
    width = min(s_all.shape[-1], pol.coeffs.shape[-1])
    # modes beyond the widest shell degree are zero in both operands
    s_all = _center(s_all[:, :nq], width)
    e_all = e_all[:, :nq]
    x_all = _center(pol.coeffs, width)

    ks = pol.ks
    ctf_vals = np.stack([eval_ctf(c, ks) for c in ctfs])  # (M, nq)
    w = ctf_vals * ks * dk
    x_all = x_all * w[:, :, None]
    inorm = np.sqrt(np.sum(np.abs(pol.coeffs) ** 2, axis=-1) @ (ks * dk))
    tn2 = (ctf_vals**2 * ks * dk) @ e_all.T  # (M, T)
    if np.any(inorm <= 0):
        raise MatchError("image with zero norm")
    if np.any(tn2 <= 0):
        raise MatchError("template with zero norm")
    tnorm = np.sqrt(tn2)

    ids = np.arange(M) if image_ids is None else np.asarray(image_ids, dtype=int)
    tc = _coarse_templates(na, nb, cf)
    if chunk is None:
        chunk = max(1, int(4e6 // max(1, len(tc) * max(width, ng))))
    out_t = np.empty(M, dtype=int)
    out_l = np.empty(M, dtype=int)
    out_s = np.empty(M)
    for s0 in range(0, M, chunk):
        sl = slice(s0, s0 + chunk)
        sc = _scores(x_all[sl], s_all[tc], tnorm[sl][:, tc], inorm[sl], ng)  # (B, Tc, ng)
        for b in range(sc.shape[0]):
            m = s0 + b
            best = sc[b].max(axis=1)
            tops = tc[best == best.max()]
            fine = np.unique(np.concatenate([_neighbourhood(t, na, nb, cf) for t in tops]))
            new = np.setdiff1d(fine, tc, assume_unique=True)
            if new.size:
                sf = _scores(x_all[m:m + 1], s_all[new], tnorm[m:m + 1, new], inorm[m:m + 1], ng)[0]
                cand_t = np.concatenate([tc, new])
                cand_sc = np.concatenate([sc[b], sf])
            else:
                cand_t, cand_sc = tc, sc[b]
            order = np.argsort(cand_t, kind="stable")
            cand_t, cand_sc = cand_t[order], cand_sc[order]
            rng = np.random.default_rng([int(seed), int(ids[m]), int(step)]) if cfg.f_rand > 0 else None
            out_t[m], out_l[m], out_s[m] = _pick(cand_t, cand_sc, cfg.f_rand, rng)
    i, j = np.divmod(out_t, nb)
    return Assignment(i, j, out_l, grid, out_s)


def match_image(img: PolarImage, bank: TemplateBank, ctf: CtfParams | None, cfg: MatchConfig, dk: float,
                seed: int = 0, m: int = 0, step: int = 0) -> Assignment:
    """Single-image wrapper around :func:`match_stack`; ``m`` is the image's
    index in its stack and selects the random stream."""
    pol = PolarImage(img.ks, None, img.coeffs[None])
    return match_stack(pol, bank, [ctf], cfg, dk, seed, step, image_ids=[m])


def brute_force_match(img: PolarImage, bank: TemplateBank, ctf: CtfParams | None, dk: float):
    """Exhaustive ``(i, j, l)`` argmax by explicit loops over templates and
    direct ``gamma`` sums. Slow; used to check the search."""
    na, nb, ng = bank.grid.shape
    ks = bank.ks
    pol = img.restrict(ks.max())
    inorm = image_norm(pol, dk)
    tn = template_norms(bank, ctf, dk).reshape(na, nb)
    nm = pol.coeffs.shape[-1]
    ns = np.arange(-(nm // 2), nm // 2 + 1)
    gam = bank.grid.gammas
    best = (-np.inf, None)
    phase = np.exp(-1j * np.outer(gam, ns))
    for i in range(na):
        for j in range(nb):
            c = correlation_coeffs(pol, _center(bank.coeffs[i, j], nm), ctf, ks.max(), dk)
            g = (phase @ c).real / (tn[i, j] * inorm)
            l = int(np.argmax(g))
            if g[l] > best[0]:
                best = (g[l], (i, j, l))
    return best[1], best[0]
