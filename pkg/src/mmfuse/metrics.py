"""Fusion quality metrics over grayscale images in [0, 1].

Five metrics, all symmetric in the two source images:

* ssim_fusion  -- mean structural similarity of the fused image against
  each source (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=1).
* q_ncie       -- eigenvalue entropy of the 3x3 nonlinear correlation
  matrix over (A, B, F), built from 256-bin joint histograms.
* qabf         -- edge-preservation score from Sobel strength and
  orientation fidelity through the classic sigmoid model.
* vif_fusion   -- pixel-domain multi-scale visual information fidelity
  (4 scales, Gaussian pyramid, sigma_n^2 = 2), averaged over sources.
* q_p          -- correlation of phase-congruency maps and their
  covariance moments between sources and fused image (log-Gabor bank:
  4 scales, 4 orientations, min wavelength 6, scaling 2, sigma_onf
  0.55, noise compensation k=2).

Only q_ncie quantizes to 256 levels; the others work on real values.
Degenerate inputs (flat images, empty edge maps) return defined values
rather than NaN: histogram terms use 0*log0 = 0, a zero edge-weight sum
yields 0, and an empty phase-congruency support yields 0.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

METRIC_NAMES = ("q_ncie", "q_p", "vif", "ssim", "qabf")


class DataError(ValueError):
    pass


def _check_triple(a, b, f, min_dim=8):
    arrs = [np.asarray(x, dtype=np.float64) for x in (a, b, f)]
    shapes = {x.shape for x in arrs}
    if len(shapes) != 1:
        raise DataError(f"images must share one shape, got {sorted(shapes)}")
    if arrs[0].ndim != 2:
        raise DataError(f"metrics expect 2-D grayscale images, got shape {arrs[0].shape}")
    if min(arrs[0].shape) < min_dim:
        raise DataError(f"image {arrs[0].shape} smaller than required {min_dim} px")
    for x in arrs:
        if not np.all(np.isfinite(x)):
            raise DataError("image contains non-finite values")
    return arrs


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


# ---------------------------------------------------------------------------
# SSIM

def ssim_pair(x, y, window=None):
    win = _gaussian_window(11, 1.5) if window is None else window
    if min(x.shape) < win.shape[0]:
        raise DataError(f"image {x.shape} smaller than the {win.shape[0]}px SSIM window")
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    mu1 = convolve2d(x, win, mode="valid")
    mu2 = convolve2d(y, win, mode="valid")
    mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    s1 = convolve2d(x * x, win, mode="valid") - mu1_sq
    s2 = convolve2d(y * y, win, mode="valid") - mu2_sq
    s12 = convolve2d(x * y, win, mode="valid") - mu1_mu2
    ssim_map = ((2 * mu1_mu2 + c1) * (2 * s12 + c2)) / ((mu1_sq + mu2_sq + c1) * (s1 + s2 + c2))
    return float(ssim_map.mean())


def ssim_fusion(a, b, f):
    a, b, f = _check_triple(a, b, f, min_dim=11)
    return 0.5 * (ssim_pair(f, a) + ssim_pair(f, b))


# ---------------------------------------------------------------------------
# Nonlinear correlation information entropy

_NCIE_BINS = 256


def _quantize256(x):
    lo, hi = float(x.min()), float(x.max())
    if hi - lo < 1e-12:
        return np.zeros(x.shape, dtype=np.int64)
    return np.rint((x - lo) / (hi - lo) * 255.0).astype(np.int64)


def _entropy256(p):
    nz = p[p > 1e-12]
    return float(-(nz * np.log2(nz)).sum() / np.log2(_NCIE_BINS))


def nonlinear_correlation(u, v):
    """NCC of two 256-level images: H(u) + H(v) - H(u,v), base-256 logs."""
    joint = np.zeros((_NCIE_BINS, _NCIE_BINS), dtype=np.float64)
    np.add.at(joint, (u.reshape(-1), v.reshape(-1)), 1.0)
    joint /= joint.sum()
    hu = _entropy256(joint.sum(axis=1))
    hv = _entropy256(joint.sum(axis=0))
    huv = _entropy256(joint.reshape(-1))
    return hu + hv - huv


def q_ncie(a, b, f):
    a, b, f = _check_triple(a, b, f)
    qa, qb, qf = _quantize256(a), _quantize256(b), _quantize256(f)
    r_ab = nonlinear_correlation(qa, qb)
    r_af = nonlinear_correlation(qa, qf)
    r_bf = nonlinear_correlation(qb, qf)
    R = np.array([[1.0, r_ab, r_af], [r_ab, 1.0, r_bf], [r_af, r_bf, 1.0]])
    lam = np.clip(np.linalg.eigvalsh(R), 0.0, None)
    scaled = lam / 3.0
    terms = np.where(scaled > 1e-12, scaled * np.log(np.maximum(scaled, 1e-300)) / np.log(_NCIE_BINS), 0.0)
    return float(1.0 + terms.sum())


# ---------------------------------------------------------------------------
# Edge preservation (gradient strength + orientation fidelity)

_QABF_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_QABF_SOBEL_Y = np.array([[1, 2, 1], [0, 0, 0], [-1, -2, -1]], dtype=np.float64)


def _edge_strength_orientation(img):
    # gradients on the 0..255 scale: the strength-preservation sigmoid and
    # its equal-gradient branch are calibrated for 8-bit magnitudes.
    # Reflect padding plus an epsilon floor keep constant images exactly
    # edge-free, so the zero-weight rule defines the degenerate case.
    padded = np.pad(img * 255.0, 1, mode="reflect")
    sx = convolve2d(padded, _QABF_SOBEL_X, mode="valid")
    sy = convolve2d(padded, _QABF_SOBEL_Y, mode="valid")
    g = np.sqrt(sx * sx + sy * sy)
    g[g < 1e-8] = 0.0
    alpha = np.full(img.shape, math.pi / 2)
    nz = sx != 0
    alpha[nz] = np.arctan(sy[nz] / sx[nz])
    return g, alpha


def _edge_preservation(g_src, a_src, g_f, a_f):
    gamma_g, kappa_g, sigma_g = 0.9994, -15.0, 0.5
    gamma_a, kappa_a, sigma_a = 0.9879, -22.0, 0.8
    G = np.zeros_like(g_src)
    greater = g_src > g_f
    equal = g_src == g_f
    less = g_src < g_f
    G[greater] = g_f[greater] / g_src[greater]
    G[equal] = g_f[equal]
    G[less] = g_src[less] / g_f[less]
    A = 1.0 - np.abs(a_src - a_f) / (math.pi / 2)
    qg = gamma_g / (1.0 + np.exp(kappa_g * (G - sigma_g)))
    qa = gamma_a / (1.0 + np.exp(kappa_a * (A - sigma_a)))
    return qg * qa


def qabf(a, b, f):
    a, b, f = _check_triple(a, b, f)
    g_a, al_a = _edge_strength_orientation(a)
    g_b, al_b = _edge_strength_orientation(b)
    g_f, al_f = _edge_strength_orientation(f)
    q_af = _edge_preservation(g_a, al_a, g_f, al_f)
    q_bf = _edge_preservation(g_b, al_b, g_f, al_f)
    denom = float((g_a + g_b).sum())
    if denom == 0.0:
        return 0.0
    return float((q_af * g_a + q_bf * g_b).sum() / denom)


# ---------------------------------------------------------------------------
# Visual information fidelity

_VIF_SIGMA_N2 = 2.0
_VIF_EPS = 1e-10


def _vif_pair(ref, dist):
    num = den = 0.0
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        win = _gaussian_window(size, size / 5.0)
        if scale > 1:
            if min(ref.shape) < size:
                break
            ref = convolve2d(ref, win, mode="valid")[::2, ::2]
            dist = convolve2d(dist, win, mode="valid")[::2, ::2]
        if min(ref.shape) < size:
            break
        mu1 = convolve2d(ref, win, mode="valid")
        mu2 = convolve2d(dist, win, mode="valid")
        mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
        s1 = convolve2d(ref * ref, win, mode="valid") - mu1_sq
        s2 = convolve2d(dist * dist, win, mode="valid") - mu2_sq
        s12 = convolve2d(ref * dist, win, mode="valid") - mu1_mu2
        s1[s1 < 0] = 0.0
        s2[s2 < 0] = 0.0
        g = s12 / (s1 + _VIF_EPS)
        sv = s2 - g * s12
        g[s1 < _VIF_EPS] = 0.0
        sv[s1 < _VIF_EPS] = s2[s1 < _VIF_EPS]
        s1[s1 < _VIF_EPS] = 0.0
        g[s2 < _VIF_EPS] = 0.0
        sv[s2 < _VIF_EPS] = 0.0
        sv[g < 0] = s2[g < 0]
        g[g < 0] = 0.0
        sv[sv <= _VIF_EPS] = _VIF_EPS
        num += float(np.log10(1.0 + g * g * s1 / (sv + _VIF_SIGMA_N2)).sum())
        den += float(np.log10(1.0 + s1 / _VIF_SIGMA_N2).sum())
    if den == 0.0:
        return 1.0
    return num / den


def vif_fusion(a, b, f):
    a, b, f = _check_triple(a, b, f, min_dim=32)
    return 0.5 * (_vif_pair(a, f) + _vif_pair(b, f))


# ---------------------------------------------------------------------------
# Phase congruency and the Q_P combination

PC_NSCALE = 4
PC_NORIENT = 4
PC_MIN_WAVELENGTH = 6.0
PC_MULT = 2.0
PC_SIGMA_ONF = 0.55
PC_K = 2.0
PC_CUTOFF = 0.5
PC_G = 10.0
PC_DTHETA_SIGMA = 1.2
_PC_EPS = 1e-4


def _frequency_grids(rows, cols):
    iy = np.arange(rows) - rows // 2
    ix = np.arange(cols) - cols // 2
    y = (iy / rows)[:, None] * np.ones((1, cols))
    x = np.ones((rows, 1)) * (ix / cols)[None, :]
    radius = np.sqrt(x * x + y * y)
    radius[rows // 2, cols // 2] = 1.0
    theta = np.arctan2(-y, x)
    return radius, theta


def phase_congruency(img):
    """Total PC map plus max/min covariance moments of the per-orientation maps."""
    rows, cols = img.shape
    fft_img = np.fft.fft2(img)
    radius, theta = _frequency_grids(rows, cols)
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    sin_t, cos_t = np.sin(theta), np.cos(theta)

    log_gabor = []
    for s in range(PC_NSCALE):
        f0 = 1.0 / (PC_MIN_WAVELENGTH * PC_MULT ** s)
        lg = np.exp(-(np.log(radius / f0) ** 2) / (2.0 * math.log(PC_SIGMA_ONF) ** 2))
        lg *= lowpass
        lg[rows // 2, cols // 2] = 0.0
        log_gabor.append(lg)

    theta_sigma = math.pi / PC_NORIENT / PC_DTHETA_SIGMA
    pc_sum = np.zeros(img.shape)
    covx2 = np.zeros(img.shape)
    covy2 = np.zeros(img.shape)
    covxy = np.zeros(img.shape)
    for o in range(PC_NORIENT):
        angle = o * math.pi / PC_NORIENT
        ds = sin_t * math.cos(angle) - cos_t * math.sin(angle)
        dc = cos_t * math.cos(angle) + sin_t * math.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta ** 2) / (2.0 * theta_sigma ** 2))

        sum_e = np.zeros(img.shape)
        sum_o = np.zeros(img.shape)
        sum_an = np.zeros(img.shape)
        responses = []
        max_an = None
        tau = 0.0
        for s in range(PC_NSCALE):
            filt = np.fft.ifftshift(log_gabor[s] * spread)
            eo = np.fft.ifft2(fft_img * filt)
            responses.append(eo)
            an = np.abs(eo)
            sum_an += an
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                tau = float(np.median(sum_an)) / math.sqrt(math.log(4.0))
                max_an = an
            else:
                max_an = np.maximum(max_an, an)

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + _PC_EPS
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros(img.shape)
        for eo in responses:
            e, od = eo.real, eo.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        total_tau = tau * (1.0 - (1.0 / PC_MULT) ** PC_NSCALE) / (1.0 - 1.0 / PC_MULT)
        noise_mean = total_tau * math.sqrt(math.pi / 2.0)
        noise_sigma = total_tau * math.sqrt((4.0 - math.pi) / 2.0)
        energy = np.maximum(energy - (noise_mean + PC_K * noise_sigma), 0.0)

        width = (sum_an / (max_an + _PC_EPS) - 1.0) / (PC_NSCALE - 1)
        weight = 1.0 / (1.0 + np.exp((PC_CUTOFF - width) * PC_G))
        pc_o = weight * energy / (sum_an + _PC_EPS)

        pc_sum += pc_o
        cx = pc_o * math.cos(angle)
        cy = pc_o * math.sin(angle)
        covx2 += cx * cx
        covy2 += cy * cy
        covxy += cx * cy

    covx2 /= PC_NORIENT / 2.0
    covy2 /= PC_NORIENT / 2.0
    covxy *= 4.0 / PC_NORIENT
    denom = np.sqrt(covxy ** 2 + (covx2 - covy2) ** 2) + _PC_EPS
    moment_max = (covy2 + covx2 + denom) / 2.0
    moment_min = (covy2 + covx2 - denom) / 2.0
    return pc_sum, moment_max, moment_min


_QP_C = 1e-4
_QP_THRESHOLD = 0.1


def _masked_correlation(im1, im2, im_max, im_f, mask1, mask2, mask3):
    # source and fused maps are masked with the same support, and the
    # stabilizing constant sits inside the variance product: identical
    # maps then score exactly 1 while a flat fused map scores near 0
    win = _gaussian_window(11, 1.5)

    def local_stats(u, v):
        mu_u = convolve2d(u, win, mode="same")
        mu_v = convolve2d(v, win, mode="same")
        cov = convolve2d(u * v, win, mode="same") - mu_u * mu_v
        var_u = convolve2d(u * u, win, mode="same") - mu_u * mu_u
        var_v = convolve2d(v * v, win, mode="same") - mu_v * mu_v
        return cov, var_u, var_v

    def component(img, mask):
        cov, var_s, var_f = local_stats(mask * img, mask * im_f)
        res = np.zeros(img.shape)
        vals = (cov + _QP_C) / np.sqrt(np.maximum(var_s + _QP_C, 0.0)
                                       * np.maximum(var_f + _QP_C, 0.0))
        res[mask] = vals[mask]
        return res

    result = np.maximum(component(im1, mask1),
                        np.maximum(component(im2, mask2), component(im_max, mask3)))
    support = float(mask3.sum())
    if support == 0.0:
        return 0.0
    return float(result.sum() / support)


def q_p(a, b, f):
    a, b, f = _check_triple(a, b, f, min_dim=32)
    pc1, mx1, mn1 = phase_congruency(a)
    pc2, mx2, mn2 = phase_congruency(b)
    pcf, mxf, mnf = phase_congruency(f)
    take1 = pc1 > pc2
    pc_max = np.where(take1, pc1, pc2)
    mx_max = np.where(take1, mx1, mx2)
    mn_max = np.where(take1, mn1, mn2)
    mask1 = pc1 > _QP_THRESHOLD
    mask2 = pc2 > _QP_THRESHOLD
    mask3 = pc_max > _QP_THRESHOLD
    r_pc = _masked_correlation(pc1, pc2, pc_max, pcf, mask1, mask2, mask3)
    r_max = _masked_correlation(mx1, mx2, mx_max, mxf, mask1, mask2, mask3)
    r_min = _masked_correlation(mn1, mn2, mn_max, mnf, mask1, mask2, mask3)
    return r_pc * r_max * r_min


# ---------------------------------------------------------------------------
# Directory evaluation

ALL_METRICS = {
    "q_ncie": q_ncie,
    "q_p": q_p,
    "vif": vif_fusion,
    "ssim": ssim_fusion,
    "qabf": qabf,
}


@dataclass
class MetricReport:
    per_image: dict
    means: dict
    count: int

    def format_table(self):
        header = f"{'image':<20}" + "".join(f"{n:>10}" for n in METRIC_NAMES)
        lines = [header]
        for stem in sorted(self.per_image):
            vals = self.per_image[stem]
            lines.append(f"{stem:<20}" + "".join(f"{vals[n]:>10.4f}" for n in METRIC_NAMES))
        lines.append(f"{'MEAN':<20}" + "".join(f"{self.means[n]:>10.4f}" for n in METRIC_NAMES))
        return "\n".join(lines)


def evaluate_triple(a, b, f):
    return {name: fn(a, b, f) for name, fn in ALL_METRICS.items()}


def eval_dir(dir_a, dir_b, dir_f, report_path=None):
    """Evaluate all matching filename stems across the three directories."""
    from .imageio import load_gray

    def stems(d):
        out = {}
        for name in sorted(os.listdir(d)):
            stem, ext = os.path.splitext(name)
            if ext.lower() in (".nfi", ".pgm", ".ppm", ".png"):
                out[stem] = os.path.join(d, name)
        return out

    sa, sb, sf = stems(dir_a), stems(dir_b), stems(dir_f)
    common = sorted(set(sa) & set(sb) & set(sf))
    missing = sorted((set(sa) | set(sb) | set(sf)) - set(common))
    if not common:
        raise DataError(f"no matching image stems across directories (unmatched: {missing})")
    if missing:
        raise DataError(f"unmatched image stems: {missing}")

    per_image = {}
    for stem in common:
        per_image[stem] = evaluate_triple(
            load_gray(sa[stem]), load_gray(sb[stem]), load_gray(sf[stem]))
    means = {n: float(np.mean([per_image[s][n] for s in common])) for n in METRIC_NAMES}
    report = MetricReport(per_image, means, len(common))

    if report_path is not None:
        tmp = f"{report_path}.tmp"
        with open(tmp, "w") as fh:
            for stem in common:
                vals = per_image[stem]
                fh.write(stem + " " + " ".join(f"{vals[n]:.8f}" for n in METRIC_NAMES) + "\n")
            fh.write("MEAN " + " ".join(f"{means[n]:.8f}" for n in METRIC_NAMES) + "\n")
        os.replace(tmp, report_path)
    return report
