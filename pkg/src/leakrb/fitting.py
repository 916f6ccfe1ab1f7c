"""Decay models, constrained least-squares fits, bootstrap and reports.

Rates that must stay in (0, 1) are fitted through a logistic
reparameterisation ``x = 1 / (1 + exp(-u))``. Residuals are weighted by
``1 / stderr`` whenever standard errors are available.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit, logit

from .simulate import CircuitRecord, DecayCurve, RBDataset, estimate_decays
from .twirl import ChannelParameters, fidelity_bounds, midpoint_infidelity

log = logging.getLogger(__name__)

RATE_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
REGIMES = ("short", "comp-dominant", "no-seepage", "pop-transfer")
_BOUNDARY = 1e-9


@dataclass
class FitResult:
    model: str
    params: dict
    cov: np.ndarray
    rss: float
    converged: bool
    n_points: int
    flags: list = field(default_factory=list)
    weighted: bool = True

    @property
    def param_names(self) -> list[str]:
        return list(self.params)

    @property
    def stderr(self) -> dict:
        diag = np.clip(np.diag(self.cov), 0.0, None) if self.cov.size else []
        return {k: float(np.sqrt(v)) for k, v in zip(self.params, diag)}

    @property
    def chi2_red(self) -> float:
        dof = self.n_points - len(self.params)
        return self.rss / dof if dof > 0 else float("nan")

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.params.items()},
            "stderr": self.stderr,
            "cov": np.asarray(self.cov, dtype=float).tolist(),
            "rss": float(self.rss),
            "chi2_red": None if math.isnan(self.chi2_red) else float(self.chi2_red),
            "converged": bool(self.converged),
            "n_points": int(self.n_points),
            "flags": list(self.flags),
            "weighted": bool(self.weighted),
        }


@dataclass(frozen=True)
class DecayModel:
    """A survival model ``p(ell; theta)`` with analytic Jacobian.

    ``kinds`` maps each parameter to ``"unit"`` (fitted in logit space) or
    ``"free"``.
    """

    name: str
    kinds: dict
    predict: Callable
    jacobian: Callable

    @property
    def params(self) -> list[str]:
        return list(self.kinds)


# -- models ---------------------------------------------------------------------


def linear_model() -> DecayModel:
    return DecayModel(
        "linear",
        {"intercept": "free", "slope": "free"},
        lambda ell, th: th["intercept"] + th["slope"] * ell,
        lambda ell, th: np.stack([np.ones_like(ell, dtype=float), ell.astype(float)], axis=1),
    )


def exponential_model(floor: float | None = None, amplitude: float | None = None) -> DecayModel:
    """``A p^ell + B`` with ``B`` fixed to ``floor`` and ``A`` to ``amplitude`` when given."""
    kinds = {}
    if amplitude is None:
        kinds["A"] = "free"
    kinds["p"] = "unit"
    if floor is None:
        kinds["B"] = "free"

    def unpack(th):
        return th.get("A", amplitude), th["p"], th.get("B", floor)

    def predict(ell, th):
        a, p, b = unpack(th)
        return a * p**ell + b

    def jac(ell, th):
        a, p, _ = unpack(th)
        cols = []
        if amplitude is None:
            cols.append(p**ell)
        cols.append(a * ell * p ** (ell - 1.0))
        if floor is None:
            cols.append(np.ones_like(ell, dtype=float))
        return np.stack(cols, axis=1)

    name = "exponential-plus-floor" if floor is None or floor != 0 else "retention-exponential"
    return DecayModel(name, kinds, predict, jac)


def double_exponential_model(d_C: int, parameterization: str = "lambda-tau", scale: bool = False) -> DecayModel:
    """``S [ (d-1)/d r^ell + t^ell / d ]`` with ``r = 1-lambda-tau``, ``t = 1-tau``.

    ``parameterization="r-t"`` fits ``r`` and ``t`` directly instead.
    """
    a, b = (d_C - 1) / d_C, 1 / d_C
    if parameterization == "lambda-tau":
        kinds = {"lambda": "unit", "tau": "unit"}
    elif parameterization == "r-t":
        kinds = {"r": "unit", "t": "unit"}
    else:
        raise ValueError(f"unknown parameterization {parameterization!r}")
    if scale:
        kinds["scale"] = "free"

    def rt(th):
        if parameterization == "lambda-tau":
            return max(1 - th["lambda"] - th["tau"], 1e-300), 1 - th["tau"]
        return th["r"], th["t"]

    def predict(ell, th):
        r, t = rt(th)
        return th.get("scale", 1.0) * (a * r**ell + b * t**ell)

    def jac(ell, th):
        r, t = rt(th)
        s = th.get("scale", 1.0)
        dr = s * a * ell * r ** (ell - 1.0)
        dt = s * b * ell * t ** (ell - 1.0)
        cols = [-dr, -dr - dt] if parameterization == "lambda-tau" else [dr, dt]
        if scale:
            cols.append(a * r**ell + b * t**ell)
        return np.stack(cols, axis=1)

    return DecayModel("double-exponential", kinds, predict, jac)


def comp_dominant_model(d_C: int, scale: bool = False) -> DecayModel:
    """``(d-1)/d (1-lambda-ell tau)(1-lambda)^(ell-1) + (1-ell tau)/d``."""
    a, b = (d_C - 1) / d_C, 1 / d_C
    kinds = {"lambda": "unit", "tau": "unit"}
    if scale:
        kinds["scale"] = "free"

    def core(ell, th):
        lam, tau = th["lambda"], th["tau"]
        q = 1 - lam
        return a * (q - ell * tau) * q ** (ell - 1.0) + b * (1 - ell * tau)

    def predict(ell, th):
        return th.get("scale", 1.0) * core(ell, th)

    def jac(ell, th):
        lam, tau = th["lambda"], th["tau"]
        s = th.get("scale", 1.0)
        q = 1 - lam
        dlam = a * (-(q ** (ell - 1.0)) - (q - ell * tau) * (ell - 1.0) * q ** (ell - 2.0))
        dtau = -a * ell * q ** (ell - 1.0) - b * ell
        cols = [s * dlam, s * dtau]
        if scale:
            cols.append(core(ell, th))
        return np.stack(cols, axis=1)

    return DecayModel("comp-dominant-product", kinds, predict, jac)


# -- generic solver ---------------------------------------------------------------


def _weights(curve: DecayCurve) -> tuple[np.ndarray, bool]:
    se = np.asarray(curve.stderr, dtype=float)
    pos = se[se > 0]
    if pos.size == 0:
        return np.ones_like(se), False
    return 1.0 / np.where(se > 0, se, pos.min()), True


def _to_natural(model: DecayModel, u: np.ndarray) -> dict:
    return {k: (float(expit(x)) if kind == "unit" else float(x)) for (k, kind), x in zip(model.kinds.items(), u)}


def _to_internal(model: DecayModel, th: dict) -> np.ndarray:
    out = []
    for k, kind in model.kinds.items():
        x = th[k]
        out.append(float(logit(np.clip(x, 1e-12, 1 - 1e-12))) if kind == "unit" else float(x))
    return np.array(out)


def _chain(model: DecayModel, th: dict) -> np.ndarray:
    return np.array([th[k] * (1 - th[k]) if kind == "unit" else 1.0 for k, kind in model.kinds.items()])


def fit_model(model: DecayModel, curve: DecayCurve, starts: list[dict], max_iter: int = 500) -> FitResult:
    """Weighted least squares from several starting points; keeps the lowest cost."""
    ell = np.asarray(curve.lengths, dtype=float)
    y = np.asarray(curve.values, dtype=float)
    w, weighted = _weights(curve)

    def resid(u):
        return w * (model.predict(ell, _to_natural(model, u)) - y)

    def jac(u):
        th = _to_natural(model, u)
        return w[:, None] * model.jacobian(ell, th) * _chain(model, th)[None, :]

    best = None
    for start in starts:
        try:
            with np.errstate(all="ignore"):
                sol = least_squares(
                    resid, _to_internal(model, start), jac=jac, method="trf",
                    ftol=1e-15, xtol=1e-12, gtol=1e-10, max_nfev=max_iter, x_scale="jac",
                )
        except (ValueError, FloatingPointError):
            continue
        if not np.all(np.isfinite(sol.fun)):
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise RuntimeError(f"{model.name} fit failed from every starting point")
    th = _to_natural(model, best.x)
    jn = w[:, None] * model.jacobian(ell, th)
    rss = float(np.sum(best.fun**2))
    try:
        cov = np.linalg.pinv(jn.T @ jn)
    except np.linalg.LinAlgError:
        cov = np.full((len(th), len(th)), np.nan)
    dof = len(y) - len(th)
    if not weighted and dof > 0:
        cov = cov * rss / dof
    flags = []
    for k, kind in model.kinds.items():
        if kind == "unit" and (th[k] < _BOUNDARY or th[k] > 1 - _BOUNDARY):
            flags.append(f"boundary:{k}")
    converged = bool(best.status > 0)
    if not converged:
        flags.append("not-converged")
    return FitResult(model.name, th, cov, rss, converged, len(y), flags, weighted)


def _require(curve: DecayCurve, n: int, what: str):
    if len(np.unique(curve.lengths)) < n:
        raise ValueError(f"{what} needs at least {n} distinct lengths, got {len(np.unique(curve.lengths))}")


# -- public fits -----------------------------------------------------------------


def fit_linear(curve: DecayCurve, guard: float | None = 0.1) -> FitResult:
    """Weighted straight line ``intercept + slope * ell``.

    With ``guard`` set, the fit is flagged when ``|slope| * max(ell)``
    exceeds it, meaning the lengths are too long for a linear reading.
    """
    _require(curve, 2, "linear fit")
    ell = np.asarray(curve.lengths, dtype=float)
    y = np.asarray(curve.values, dtype=float)
    w, weighted = _weights(curve)
    x = np.stack([np.ones_like(ell), ell], axis=1)
    xw = x * w[:, None]
    coef, *_ = np.linalg.lstsq(xw, y * w, rcond=None)
    res = y * w - xw @ coef
    rss = float(res @ res)
    cov = np.linalg.pinv(xw.T @ xw)
    dof = len(y) - 2
    if not weighted and dof > 0:
        cov = cov * rss / dof
    flags = []
    if guard is not None and abs(coef[1]) * ell.max() > guard:
        flags.append("short-guard")
    if coef[1] > 0 and coef[1] > 3 * np.sqrt(max(cov[1, 1], 0)):
        flags.append("increasing")
    return FitResult("linear", {"intercept": float(coef[0]), "slope": float(coef[1])}, cov, rss, True, len(y), flags, weighted)


def _loglin_rate(curve: DecayCurve, floor: float) -> float:
    y = np.asarray(curve.values) - floor
    ok = y > 1e-12
    if ok.sum() < 2:
        return 0.99
    slope = np.polyfit(curve.lengths[ok], np.log(y[ok]), 1)[0]
    return float(np.clip(np.exp(slope), 1e-6, 1 - 1e-9))


def fit_exponential(curve: DecayCurve, floor: float | str | None = "free", amplitude: float | None = None) -> FitResult:
    """``A p^ell + B``; ``floor`` is a fixed ``B`` or ``"free"``.

    ``A`` is free unless ``amplitude`` is given, so state-preparation and
    measurement offsets land in ``A`` rather than in ``p``.
    """
    _require(curve, 3 if floor == "free" else 2, "exponential fit")
    fixed = None if floor == "free" or floor is None else float(floor)
    model = exponential_model(fixed, amplitude)
    b0 = fixed if fixed is not None else float(min(curve.values.min(), 1.0 / curve.d_C))
    a0 = float(curve.values[np.argmin(curve.lengths)] - b0)
    starts = []
    for p0 in [_loglin_rate(curve, b0)] + [1 - g for g in RATE_GRID]:
        st = {"p": p0}
        if amplitude is None:
            st["A"] = a0 if abs(a0) > 1e-6 else 1.0 - b0
        if fixed is None:
            st["B"] = b0
        starts.append(st)
    res = fit_model(model, curve, starts)
    if np.ptp(curve.values) < 1e-14:
        # a flat curve does not identify p at all
        res.flags.append("flat-data")
        if "boundary:p" not in res.flags:
            res.flags.append("boundary:p")
    return res


def _rate_starts(extra: dict | None = None) -> list[dict]:
    starts = []
    for lam in RATE_GRID:
        for tau in RATE_GRID:
            st = {"lambda": lam, "tau": tau}
            if extra:
                st.update(extra)
            starts.append(st)
    return starts


def fit_double_exponential(curve: DecayCurve, parameterization: str = "lambda-tau", scale: bool = False) -> FitResult:
    """Two-exponential decay with ``r <= t`` built in.

    Multistart over a 4x4 grid of ``(lambda, tau)`` magnitudes. The fit is
    flagged ``indistinguishable`` when ``lambda`` is below ten of its
    standard errors, i.e. the two exponents cannot be told apart.
    """
    _require(curve, 4, "double-exponential fit")
    ell = curve.lengths
    if ell.max() < 10 * ell.min():
        log.warning("double-exponential fit over less than one decade of lengths")
    model = double_exponential_model(curve.d_C, parameterization, scale)
    extra = {"scale": 1.0} if scale else None
    starts = _rate_starts(extra)
    if parameterization == "r-t":
        starts = [
            {"r": 1 - s["lambda"] - s["tau"], "t": 1 - s["tau"], **({"scale": 1.0} if scale else {})}
            for s in starts
            if s["lambda"] + s["tau"] < 1
        ]
    res = fit_model(model, curve, starts)
    if parameterization == "lambda-tau":
        se = res.stderr.get("lambda", np.nan)
        if res.params["lambda"] < 10 * se:
            res.flags.append("indistinguishable")
    return res


def fit_comp_dominant(curve: DecayCurve, scale: bool = False, guard: float = 0.1) -> FitResult:
    """Computational-error-dominated product form in ``(lambda, tau)``."""
    _require(curve, 3, "comp-dominant fit")
    model = comp_dominant_model(curve.d_C, scale)
    res = fit_model(model, curve, _rate_starts({"scale": 1.0} if scale else None))
    if res.params["tau"] * curve.lengths.max() > guard:
        res.flags.append("tau-guard")
        log.warning("lengths break ell*tau << 1 (max ell*tau = %.3g)", res.params["tau"] * curve.lengths.max())
    return res


# -- reports ---------------------------------------------------------------------


QUANTITIES = ("r", "t", "lambda", "tau", "F", "f", "infidelity")


@dataclass
class EstimateReport:
    protocol: str
    regime: str
    d_C: int
    r: float | None = None
    t: float | None = None
    F: float | None = None
    f: float | None = None
    F_bounds: tuple | None = None
    f_bounds: tuple | None = None
    midpoint_infidelity: float | None = None
    ci: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    bootstrap: dict | None = None

    @property
    def lam(self) -> float | None:
        return None if self.r is None or self.t is None else self.t - self.r

    @property
    def tau(self) -> float | None:
        return None if self.t is None else 1.0 - self.t

    @property
    def infidelity(self) -> float | None:
        if self.F is not None:
            return 1.0 - self.F
        return self.midpoint_infidelity

    def value(self, name: str) -> float | None:
        return {
            "r": self.r, "t": self.t, "lambda": self.lam, "tau": self.tau,
            "F": self.F, "f": self.f, "infidelity": self.infidelity,
        }[name]

    def quantities(self) -> dict:
        return {q: self.value(q) for q in QUANTITIES if self.value(q) is not None}

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "regime": self.regime,
            "d_C": self.d_C,
            "estimates": {k: float(v) for k, v in self.quantities().items()},
            "F_bounds": None if self.F_bounds is None else [float(x) for x in self.F_bounds],
            "f_bounds": None if self.f_bounds is None else [float(x) for x in self.f_bounds],
            "midpoint_infidelity": self.midpoint_infidelity,
            "ci": {k: float(v) for k, v in self.ci.items()},
            "provenance": dict(self.provenance),
            "fits": {k: v.to_json() for k, v in self.fits.items()},
            "flags": list(self.flags),
            "bootstrap": self.bootstrap,
        }


def _set_rt(rep: EstimateReport, r: float, t: float):
    if r > t:
        rep.flags.append("r>t-clipped")
        r = t
    rep.r, rep.t = float(r), float(t)
    p = ChannelParameters(rep.r, rep.t, rep.d_C)
    rep.F, rep.f = p.F, p.f


def required_curves(protocol: str, regime: str, retention_for_ic: bool = False) -> tuple:
    """Estimators a (protocol, regime) cell needs."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if protocol == "naive":
        return ("p_naive",)
    if regime == "pop-transfer":
        if protocol != "avg-mb":
            raise ValueError("the population-transfer regime only supports avg-mb")
        return ("p_avg",)
    if protocol == "comp-spam":
        return ("p_comp",)
    if protocol == "avg-mb":
        return ("p_avg", "p_retention" if retention_for_ic else "p_IC")
    if protocol == "lps":
        return ("p_post", "p_retention")
    raise ValueError(f"unknown protocol {protocol!r}")


def fit_curves(curves, protocol: str, regime: str, retention_for_ic: bool = False, scale: bool = False) -> dict:
    """Run the fits that the (protocol, regime) cell prescribes."""
    cd = {c.estimator: c for c in curves}
    need = required_curves(protocol, regime, retention_for_ic)
    missing = [n for n in need if n not in cd]
    if missing:
        raise ValueError(f"{protocol}/{regime} needs curves {missing}")
    d_C = cd[need[0]].d_C
    fits = {}
    if protocol == "naive":
        c = cd["p_naive"]
        fits["p_naive"] = fit_linear(c) if regime == "short" else fit_exponential(c, "free")
        return fits
    if regime == "short":
        for n in need:
            fits[n] = fit_linear(cd[n])
        return fits
    if regime == "comp-dominant":
        if protocol == "comp-spam":
            fits["p_comp"] = fit_comp_dominant(cd["p_comp"], scale=scale)
        else:
            rate = "p_avg" if protocol == "avg-mb" else "p_post"
            fits[rate] = fit_exponential(cd[rate], 1.0 / d_C)
            fits[need[1]] = fit_linear(cd[need[1]], guard=None)
        return fits
    if regime == "no-seepage":
        if protocol == "comp-spam":
            fits["p_comp"] = fit_double_exponential(cd["p_comp"], scale=scale)
        else:
            rate = "p_avg" if protocol == "avg-mb" else "p_post"
            fits[rate] = fit_exponential(cd[rate], 1.0 / d_C)
            fits[need[1]] = fit_exponential(cd[need[1]], 0.0)
        return fits
    fits["p_avg"] = fit_exponential(cd["p_avg"], 1.0 / d_C)
    return fits


def assemble_report(protocol: str, regime: str, fits: dict, d_C: int = 4) -> EstimateReport:
    """Combine fitted curves into (r, t, lambda, tau, F, f) for one cell."""
    rep = EstimateReport(protocol, regime, d_C, fits=dict(fits))
    a = (d_C - 1) / d_C
    for f in fits.values():
        rep.flags.extend(f"{f.model}:{x}" for x in f.flags)

    def get(name):
        if name not in fits:
            raise ValueError(f"{protocol}/{regime} report needs a fit of {name}")
        return fits[name]

    ic_name = "p_IC" if "p_IC" in fits else "p_retention"
    if protocol == "naive":
        fit = get("p_naive")
        if fit.model == "linear":
            rep.F = 1.0 + fit.params["slope"]
        else:
            rep.F = 1.0 - a * (1.0 - fit.params["p"])
        rep.provenance["F"] = "p_naive read as standard RB"
        return rep
    if regime == "short":
        if protocol == "comp-spam":
            rep.F = 1.0 + get("p_comp").params["slope"]
            rep.provenance["F"] = "p_comp slope"
            return rep
        tau = -get(ic_name if protocol == "avg-mb" else "p_retention").params["slope"]
        if protocol == "avg-mb":
            lam = -get("p_avg").params["slope"] / a - tau
            rep.provenance.update(lambda_plus_tau="p_avg slope", tau=f"{ic_name} slope")
        else:
            lam = -get("p_post").params["slope"] / a
            rep.provenance.update(lam="p_post slope", tau="p_retention slope")
        _set_rt(rep, 1 - tau - lam, 1 - tau)
        return rep
    if regime == "comp-dominant":
        if protocol == "comp-spam":
            p = get("p_comp").params
            lam, tau = p["lambda"], p["tau"]
            rep.provenance.update({"lambda": "p_comp product fit", "tau": "p_comp product fit"})
        elif protocol == "avg-mb":
            tau = -get(ic_name).params["slope"]
            lam = 1 - get("p_avg").params["p"] - tau
            rep.provenance.update({"r": "p_avg exponential", "tau": f"{ic_name} slope"})
        else:
            tau = -get("p_retention").params["slope"]
            lam = 1 - get("p_post").params["p"]
            rep.provenance.update({"lambda": "p_post exponential", "tau": "p_retention slope"})
        _set_rt(rep, 1 - lam - tau, 1 - tau)
        return rep
    if regime == "no-seepage":
        if protocol == "comp-spam":
            p = get("p_comp").params
            r, t = 1 - p["lambda"] - p["tau"], 1 - p["tau"]
            rep.provenance.update({"r": "p_comp double exponential", "t": "p_comp double exponential"})
        elif protocol == "avg-mb":
            r = get("p_avg").params["p"]
            t = get(ic_name).params["p"]
            rep.provenance.update({"r": "p_avg exponential", "t": f"{ic_name} exponential"})
        else:
            t = get("p_retention").params["p"]
            r = t * get("p_post").params["p"]
            rep.provenance.update({"r": "t * (r/t) from p_post", "t": "p_retention exponential"})
        _set_rt(rep, r, t)
        return rep
    r = get("p_avg").params["p"]
    lo, hi, flo, fhi = fidelity_bounds(r, d_C)
    rep.r = float(r)
    rep.F_bounds, rep.f_bounds = (lo, hi), (flo, fhi)
    rep.midpoint_infidelity = midpoint_infidelity(r, d_C)
    rep.provenance.update({"r": "p_avg exponential", "infidelity": "midpoint of fidelity bounds"})
    return rep


def analyze_curves(curves, protocol: str, regime: str, retention_for_ic: bool = False, scale: bool = False) -> EstimateReport:
    curves = list(curves)
    fits = fit_curves(curves, protocol, regime, retention_for_ic, scale)
    return assemble_report(protocol, regime, fits, curves[0].d_C)


# -- truncation ------------------------------------------------------------------


def _keep_lengths(curves, keep: set) -> list[DecayCurve]:
    return [c.subset(np.isin(c.lengths, sorted(keep))) for c in curves]


def drop_longest(n: int):
    """Truncation rule removing the ``n`` longest lengths from every curve."""

    def rule(curves):
        curves = list(curves)
        ells = sorted({int(x) for c in curves for x in c.lengths})
        return _keep_lengths(curves, set(ells[: max(len(ells) - n, 0)]))

    return rule


def max_length(limit: int):
    """Truncation rule keeping lengths ``<= limit``."""

    def rule(curves):
        curves = list(curves)
        return _keep_lengths(curves, {int(x) for c in curves for x in c.lengths if x <= limit})

    return rule


def _guard_value(curves, regime: str) -> float:
    """``max(ell) * rate`` for the rate the regime's guard constrains."""
    cd = {c.estimator: c for c in curves}
    top = max(int(c.lengths.max()) for c in curves)
    if regime == "short":
        return max(abs(fit_linear(c, guard=None).params["slope"]) for c in curves) * top
    for name in ("p_retention", "p_IC"):
        if name in cd:
            return max(-fit_linear(cd[name], guard=None).params["slope"], 0.0) * top
    if "p_comp" in cd:
        return fit_comp_dominant(cd["p_comp"], guard=np.inf).params["tau"] * top
    return 0.0


def guard_truncation(regime: str, threshold: float = 0.1, min_lengths: int = 3):
    """Drop the longest lengths while the regime's guard is violated.

    Short sequences need ``|slope| * max(ell) <= threshold`` on every
    curve; the computational-dominant regime needs ``max(ell) * tau <=
    threshold`` with ``tau`` re-estimated after each drop. Other regimes
    are left alone.
    """

    def rule(curves):
        curves = list(curves)
        if regime not in ("short", "comp-dominant"):
            return curves
        floor = 2 if regime == "short" else min_lengths
        while True:
            ells = sorted({int(x) for c in curves for x in c.lengths})
            if len(ells) <= floor or _guard_value(curves, regime) <= threshold:
                return curves
            curves = _keep_lengths(curves, set(ells[:-1]))

    return rule


# -- bootstrap --------------------------------------------------------------------


@dataclass
class BootstrapResult:
    sigma: dict
    samples: dict
    n_ok: int
    n_failed: int


def resample_dataset(ds: RBDataset, rng: np.random.Generator) -> RBDataset:
    """Two-stage resample: sequences within each length, then shot counts.

    Kept circuits get multinomial counts drawn at their own empirical
    frequencies (joint with gadget bits when present).
    """
    records = []
    for ell, seqs in sorted(ds.by_length().items()):
        ids = sorted(seqs)
        pick = rng.choice(len(ids), size=len(ids), replace=True)
        for new_id, j in enumerate(pick):
            for rec in seqs[ids[j]]:
                source = rec.gadget_counts if rec.gadget_counts is not None else rec.counts
                keys = list(source)
                n = int(sum(source.values()))
                probs = np.array([source[k] for k in keys], dtype=float) / max(n, 1)
                draws = rng.multinomial(n, probs) if n else np.zeros(len(keys), dtype=int)
                new = {k: int(c) for k, c in zip(keys, draws) if c}
                if rec.gadget_counts is not None:
                    counts: dict = {}
                    for k, c in new.items():
                        o = k.split("|")[0]
                        counts[o] = counts.get(o, 0) + c
                    records.append(CircuitRecord(ell, new_id, rec.permutation, rec.accepted, counts, new))
                else:
                    records.append(CircuitRecord(ell, new_id, rec.permutation, rec.accepted, new, None))
    return RBDataset(ds.config, records, d_C=ds.d_C, protocol=ds.protocol, reference=ds.reference)


def bootstrap(
    ds: RBDataset,
    pipeline: Callable[[RBDataset], dict],
    n_resamples: int = 200,
    rng: np.random.Generator | int | None = None,
) -> BootstrapResult:
    """One-sigma spread of ``pipeline`` outputs over resampled datasets.

    Resamples whose pipeline raises are dropped and counted.
    """
    if n_resamples < 100:
        raise ValueError("bootstrap needs at least 100 resamples")
    seed = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    child_seeds = seed.bit_generator.seed_seq.spawn(n_resamples) if hasattr(seed.bit_generator, "seed_seq") else None
    samples: dict = {}
    failed = 0
    for i in range(n_resamples):
        sub = np.random.default_rng(child_seeds[i]) if child_seeds is not None else seed
        try:
            out = pipeline(resample_dataset(ds, sub))
        except (ValueError, RuntimeError, FloatingPointError, np.linalg.LinAlgError):
            failed += 1
            continue
        for k, v in out.items():
            if v is not None and np.isfinite(v):
                samples.setdefault(k, []).append(float(v))
    if failed:
        log.warning("bootstrap dropped %d of %d resamples", failed, n_resamples)
    sigma = {k: float(np.std(v, ddof=1)) if len(v) > 1 else float("nan") for k, v in samples.items()}
    return BootstrapResult(sigma, {k: np.array(v) for k, v in samples.items()}, n_resamples - failed, failed)


def report_pipeline(protocol: str, regime: str, retention_for_ic: bool = False, scale: bool = False, truncate=None, postselect: bool = False):
    """Dataset -> quantities callable for :func:`bootstrap`."""

    def run(ds: RBDataset) -> dict:
        curves = estimate_decays(ds, postselect=postselect)
        if truncate is not None:
            curves = truncate(curves)
        return analyze_curves(curves, protocol, regime, retention_for_ic, scale).quantities()

    return run


def analyze_dataset(
    ds: RBDataset,
    regime: str,
    protocol: str | None = None,
    n_resamples: int = 0,
    rng=None,
    retention_for_ic: bool = False,
    scale: bool = False,
    truncate=None,
    postselect: bool = False,
) -> EstimateReport:
    """Curves, fits and report, with bootstrap one-sigma errors if requested.

    ``protocol`` may differ from the dataset's own protocol, e.g. an lps
    analysis of post-selected avg-mb data that carries gadget bits.
    """
    protocol = protocol or ds.protocol
    curves = estimate_decays(ds, postselect=postselect)
    if truncate is not None:
        curves = truncate(curves)
    rep = analyze_curves(curves, protocol, regime, retention_for_ic, scale)
    if n_resamples:
        pipe = report_pipeline(protocol, regime, retention_for_ic, scale, truncate, postselect)
        b = bootstrap(ds, pipe, n_resamples, rng)
        rep.ci = b.sigma
        rep.bootstrap = {"n_resamples": n_resamples, "n_ok": b.n_ok, "n_failed": b.n_failed}
    return rep
