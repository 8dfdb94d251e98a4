"""Deterministic least-squares fitting: weighted linear fits, single
exponentials, multi-peak lineshape fits, and the fixed-lifetime
exponential peak train used for background-corrected pulsed correlations.

Nonlinear models are minimized with Levenberg-Marquardt (via
scipy.optimize.least_squares) using the analytic Jacobians defined here;
the peak-train model is linear in its amplitudes and is solved as a
non-negative least-squares problem.  Parameter uncertainties come from
the inverse normal-equations curvature at the optimum, scaled by the
reduced chi-square.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, nnls

from .tagstore import CoincidenceHistogram, FoldedHistogram

MAX_ITERATIONS = 200
RSS_TOL = 1e-10


@dataclass
class FitResult:
    params: dict
    sigmas: dict
    rss: float
    converged: bool
    iterations: int
    extra: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.params[name]


def _covariance_sigmas(jac: np.ndarray, rss: float, n_points: int) -> np.ndarray:
    dof = max(n_points - jac.shape[1], 1)
    try:
        cov = np.linalg.pinv(jac.T @ jac) * (rss / dof)
        return np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        return np.full(jac.shape[1], np.nan)


def fit_linear(xs, ys, sigma_ys=None) -> FitResult:
    """Weighted least-squares line fit, closed form."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    if np.ptp(x) == 0:
        raise ValueError("degenerate fit: all x values equal")
    w = np.ones_like(x) if sigma_ys is None else 1.0 / np.asarray(sigma_ys, dtype=float) ** 2
    sw = w.sum()
    mx = (w * x).sum() / sw
    my = (w * y).sum() / sw
    sxx = (w * (x - mx) ** 2).sum()
    slope = (w * (x - mx) * (y - my)).sum() / sxx
    intercept = my - slope * mx
    resid = y - (slope * x + intercept)
    rss = float((w * resid**2).sum())
    dof = max(x.size - 2, 1)
    scale = rss / dof
    sig_slope = np.sqrt(scale / sxx)
    sig_intercept = np.sqrt(scale * (1.0 / sw + mx**2 / sxx))
    return FitResult(
        params={"slope": slope, "intercept": intercept},
        sigmas={"slope": float(sig_slope), "intercept": float(sig_intercept)},
        rss=rss, converged=True, iterations=0,
    )


# ---------------------------------------------------------------------------
# single exponential decay

def _exp_model(t, a, tau, b):
    return a * np.exp(-t / tau) + b


def _exp_jacobian(t, a, tau, b):
    e = np.exp(-t / tau)
    return np.column_stack([e, a * t / tau**2 * e, np.ones_like(t)])


def fit_exponential(
    hist: FoldedHistogram,
    fit_window: tuple[float, float],
    fix_baseline: float | None = None,
) -> FitResult:
    """Fit a*exp(-t/tau)+b to a folded histogram over [t0, t1).

    Initialization comes from a log-linear regression on baseline-subtracted
    counts; if that fails, tau starts at a third of the window span.
    """
    t = hist.bin_centers_s()
    y = hist.counts.astype(float)
    t0, t1 = fit_window
    sel = (t >= t0) & (t < t1)
    t, y = t[sel], y[sel]
    if t.size < 5:
        raise ValueError("fit window must contain at least 5 bins")
    if np.all(y <= 0):
        raise ValueError("no counts in fit window")
    if np.ptp(y) == 0:
        raise ValueError("no decay: counts are constant over the fit window")

    b0 = float(fix_baseline) if fix_baseline is not None else 0.9 * float(y.min())
    span = t[-1] - t[0]
    pos = y - b0 > 0
    tau0 = span / 3.0
    a0 = float(y.max() - b0)
    if pos.sum() >= 2 and np.ptp(t[pos]) > 0:
        lin = fit_linear(t[pos], np.log(y[pos] - b0))
        if lin["slope"] < 0:
            tau0 = -1.0 / lin["slope"]
            a0 = float(np.exp(lin["intercept"]))

    if fix_baseline is None:
        def resid(p):
            return _exp_model(t, p[0], p[1], p[2]) - y

        def jac(p):
            return _exp_jacobian(t, p[0], p[1], p[2])

        p0 = np.array([a0, tau0, b0])
    else:
        def resid(p):
            return _exp_model(t, p[0], p[1], b0) - y

        def jac(p):
            return _exp_jacobian(t, p[0], p[1], b0)[:, :2]

        p0 = np.array([a0, tau0])

    sol = least_squares(
        resid, p0, jac=jac, method="lm",
        ftol=RSS_TOL, xtol=1e-14, gtol=1e-14, max_nfev=50 * MAX_ITERATIONS,
    )
    converged = sol.status > 0
    if not converged:
        warnings.warn("exponential fit did not converge", stacklevel=2)
    rss = float(2.0 * sol.cost)
    sig = _covariance_sigmas(jac(sol.x), rss, t.size)
    if fix_baseline is None:
        params = {"amplitude": sol.x[0], "tau": sol.x[1], "baseline": sol.x[2]}
        sigmas = {"amplitude": sig[0], "tau": sig[1], "baseline": sig[2]}
    else:
        params = {"amplitude": sol.x[0], "tau": sol.x[1], "baseline": b0}
        sigmas = {"amplitude": sig[0], "tau": sig[1], "baseline": 0.0}
    return FitResult(params, sigmas, rss, converged, int(sol.nfev))


# ---------------------------------------------------------------------------
# multi-peak spectra

_PEAK_PARAM_NAMES = {
    "lorentzian": ("center", "amplitude", "width_l"),
    "gaussian": ("center", "amplitude", "width_g"),
    "gl_product": ("center", "amplitude", "width_g", "width_l"),
}


def _peak_value_and_partials(x, kind, params):
    """Peak value plus partial derivatives w.r.t. each peak parameter."""
    if kind == "lorentzian":
        c, a, w = params
        u = 2.0 * (x - c) / w
        l = 1.0 / (1.0 + u**2)
        v = a * l
        d_c = a * 4.0 * u / w * l**2
        d_w = a * 2.0 * u**2 / w * l**2
        return v, (d_c, l, d_w)
    if kind == "gaussian":
        c, a, s = params
        g = np.exp(-((x - c) ** 2) / (2.0 * s**2))
        v = a * g
        d_c = v * (x - c) / s**2
        d_s = v * (x - c) ** 2 / s**3
        return v, (d_c, g, d_s)
    c, a, s, w = params
    g = np.exp(-((x - c) ** 2) / (2.0 * s**2))
    u = 2.0 * (x - c) / w
    l = 1.0 / (1.0 + u**2)
    v = a * g * l
    d_c = v * (x - c) / s**2 + a * g * 4.0 * u / w * l**2
    d_s = v * (x - c) ** 2 / s**3
    d_w = a * g * 2.0 * u**2 / w * l**2
    return v, (d_c, g * l, d_s, d_w)


def _peaks_model_jac(x, kind, theta, k):
    npar = len(_PEAK_PARAM_NAMES[kind])
    model = np.full_like(x, theta[0])
    jac = np.zeros((x.size, theta.size))
    jac[:, 0] = 1.0  # shared baseline
    for i in range(k):
        p = theta[1 + i * npar: 1 + (i + 1) * npar]
        v, parts = _peak_value_and_partials(x, kind, p)
        model += v
        for j, dp in enumerate(parts):
            jac[:, 1 + i * npar + j] = dp
    return model, jac


def _estimate_peak_width(x, resid, i_peak):
    half = resid[i_peak] / 2.0
    lo = i_peak
    while lo > 0 and resid[lo] > half:
        lo -= 1
    hi = i_peak
    while hi < resid.size - 1 and resid[hi] > half:
        hi += 1
    w = x[hi] - x[lo]
    return w if w > 0 else np.ptp(x) / (10.0 * max(i_peak, 1))


def fit_peaks(nu, values, sigmas=None, k: int = 1, kind: str = "lorentzian") -> FitResult:
    """Fit a sum of k identical-kind peaks plus a shared baseline.

    Peaks are seeded by iteratively picking the tallest residual point and
    subtracting the provisional peak, then all parameters are refined with
    Levenberg-Marquardt.  Per-peak FWHM values are reported numerically in
    the result's extra["fwhm"].
    """
    if kind not in _PEAK_PARAM_NAMES:
        raise ValueError(f"unknown peak kind {kind!r}")
    x = np.asarray(nu, dtype=float)
    y = np.asarray(values, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    npar = len(_PEAK_PARAM_NAMES[kind])
    if x.size < 4 * k + 1:
        raise ValueError("spectrum needs at least 4k+1 points")
    w = None if sigmas is None else 1.0 / np.asarray(sigmas, dtype=float)

    # --- seed by tallest-residual picking
    base0 = float(np.percentile(y, 10))
    resid = y - base0
    theta0 = [base0]
    for _ in range(k):
        i = int(np.argmax(resid))
        a0 = max(float(resid[i]), 1e-12)
        c0 = float(x[i])
        w0 = _estimate_peak_width(x, resid, i)
        if kind == "lorentzian":
            p = (c0, a0, w0)
        elif kind == "gaussian":
            p = (c0, a0, w0 / 2.355)
        else:
            p = (c0, a0, w0 / 1.7, 1.5 * w0)
        theta0.extend(p)
        v, _ = _peak_value_and_partials(x, kind, p)
        resid = resid - v
    theta0 = np.asarray(theta0)

    def resid_fn(theta):
        m, _ = _peaks_model_jac(x, kind, theta, k)
        r = m - y
        return r if w is None else r * w

    def jac_fn(theta):
        _, j = _peaks_model_jac(x, kind, theta, k)
        return j if w is None else j * w[:, None]

    sol = least_squares(
        resid_fn, theta0, jac=jac_fn, method="lm",
        ftol=RSS_TOL, xtol=1e-14, gtol=1e-14, max_nfev=50 * MAX_ITERATIONS,
    )
    converged = sol.status > 0
    if not converged:
        warnings.warn("peak fit did not converge", stacklevel=2)
    rss = float(2.0 * sol.cost)
    sig = _covariance_sigmas(jac_fn(sol.x), rss, x.size)

    params = {"baseline": sol.x[0]}
    sigmas_out = {"baseline": sig[0]}
    fwhms = []
    from .model import LineShape, lineshape_fwhm  # local import to avoid cycle

    for i in range(k):
        vals = sol.x[1 + i * npar: 1 + (i + 1) * npar]
        for name, v, s in zip(_PEAK_PARAM_NAMES[kind], vals, sig[1 + i * npar:]):
            params[f"peak{i}_{name}"] = float(v)
            sigmas_out[f"peak{i}_{name}"] = float(s)
        shape = LineShape(
            kind=kind, center_hz=vals[0], amplitude=abs(vals[1]),
            width_g_hz=abs(vals[2]) if kind in ("gaussian", "gl_product") else None,
            width_l_hz=abs(vals[-1]) if kind in ("lorentzian", "gl_product") else None,
        )
        fwhms.append(lineshape_fwhm(shape))
    return FitResult(
        params, sigmas_out, rss, converged, int(sol.nfev), extra={"fwhm": fwhms}
    )


# ---------------------------------------------------------------------------
# fixed-lifetime exponential peak train

@dataclass
class G2TrainFit:
    """Baseline plus 2N+1 exponential peaks with a fixed decay constant.

    Amplitudes are counts per bin, indexed by pulse delay n in [-N, N];
    non-negativity is enforced by the NNLS solve (clamped amplitudes are
    flagged).  Positive and negative delays are fitted independently.
    """

    i0: float
    i0_sigma: float
    amplitudes: np.ndarray
    amplitude_sigmas: np.ndarray
    tau_c_s: float
    theta_s: float
    bin_width_s: float
    n_peaks: int
    rss: float
    clamped: np.ndarray
    converged: bool = True

    def amplitude(self, n: int) -> float:
        return float(self.amplitudes[n + self.n_peaks])

    def amplitude_sigma(self, n: int) -> float:
        return float(self.amplitude_sigmas[n + self.n_peaks])


def fit_g2_train(hist: CoincidenceHistogram, tau_c_s: float, n_peaks: int = 20) -> G2TrainFit:
    """Fit I0 + sum_n A_n exp(-|tau - n*theta|/tau_c) to a delay histogram.

    tau_c is fixed, so the model is linear in {I0, A_n} and is solved as a
    non-negative linear least-squares problem (deterministic).
    """
    if tau_c_s <= 0:
        raise ValueError("tau_c must be > 0")
    theta_s = hist.theta_s
    if hist.kmax * hist.bin_width_ticks < n_peaks * hist.theta_ticks:
        raise ValueError("histogram does not span the requested number of periods")
    if tau_c_s >= theta_s / 2:
        warnings.warn("tau_c >= theta/2: adjacent peaks overlap", stacklevel=2)
    tau = hist.delays_s()
    y = hist.counts.astype(float)
    ns = np.arange(-n_peaks, n_peaks + 1)
    design = np.empty((tau.size, ns.size + 1))
    design[:, 0] = 1.0
    for col, n in enumerate(ns, start=1):
        design[:, col] = np.exp(-np.abs(tau - n * theta_s) / tau_c_s)
    coef, rnorm = nnls(design, y)
    rss = float(rnorm**2)
    sig = _covariance_sigmas(design, rss, tau.size)
    return G2TrainFit(
        i0=float(coef[0]), i0_sigma=float(sig[0]),
        amplitudes=coef[1:].copy(), amplitude_sigmas=sig[1:].copy(),
        tau_c_s=tau_c_s, theta_s=theta_s, bin_width_s=hist.bin_width_s,
        n_peaks=n_peaks, rss=rss, clamped=coef[1:] == 0.0,
    )
