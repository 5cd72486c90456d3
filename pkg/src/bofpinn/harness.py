"""Experiment runner: builds problems and training sets from a config, runs a
pipeline, computes a reference with the classic solvers and writes tables.

Output directory layout::

    report.json      RunReport (errors, flags, iterations, recovered parameters, config)
    stats.csv        t, x[, y], mean, variance, ref_mean, ref_variance
    components.csv   t, i, a_i, ref_a_i, rel_err
    history.csv      iter, mse_w, mse_ic, mse_bc, mse_bo, mse_g, total, lambda_*
    inverse.csv      iter, mu, eps, alpha
    surrogate.ckpt   trained parameters (train, train-inverse, transfer)

Floats are written with 17 significant digits so files parse back bit-exactly.
Timings only go to report.json, never to the CSV files.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .checkpoint import load_surrogate, save_surrogate
from .classic import CrossingDetected, EnsembleStats, fdm_solve_1d, fdm_solve_2d_adi, qmc_bo_solve, \
    qmc_ensemble_solve
from .config import ConfigError, ExperimentConfig, parse_arch
from .fpinn import FpinnData, fpinn_predict, fpinn_train, make_fpinn
from .losses import InverseParams, LossContext, LossWeights, Observations, ic_targets_deterministic, \
    ic_targets_from_provider, loss_terms, make_training_sets
from .problems import ManufacturedBO, appd_problem, forcing_evolving_problem, \
    forcing_static_problem, manufactured_problem, rd2d_problem
from .stochastic import CovKernel, SampleSet, kl_decompose, kl_mode_count, se_kernel_matrix
from .surrogate import Architecture, BOSurrogate, ExactBOProvider
from .train import Schedule, predict_stats, train, train_inverse, train_windows, transfer_finetune

__all__ = ["RunReport", "rel_l2", "build_problem", "build_sets", "build_surrogate", "build_ic", "run_experiment",
           "emit_tables", "read_csv", "recompute_errors", "MODES", "HISTORY_COLUMNS"]

MODES = ("solve-fdm", "solve-qmc", "solve-qmc-bo", "train-fpinn", "train", "train-inverse", "transfer", "eval",
         "kl-modes", "dry-run-oracle")

HISTORY_COLUMNS = ("iter", "mse_w", "mse_ic", "mse_bc", "mse_bo", "mse_g", "total", "lambda_w", "lambda_ic",
                   "lambda_bc", "lambda_bo", "lambda_g")
INVERSE_COLUMNS = ("iter", "mu", "eps", "alpha")


def rel_l2(candidate, reference):
    """``(value, flagged)``; with a zero reference the absolute L2 norm is
    returned and ``flagged`` is True."""
    c = np.asarray(candidate, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if c.shape != r.shape:
        raise ValueError(f"shape mismatch {c.shape} vs {r.shape}")
    num = float(np.linalg.norm((c - r).ravel()))
    den = float(np.linalg.norm(r.ravel()))
    if den == 0.0:
        return num, True
    return num / den, False


@dataclass
class RunReport:
    tag: str
    mode: str
    seed: int
    status: str = "ok"
    errors: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    recovered: Optional[dict] = None
    timing: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    # tables (written as CSV, mirrored in JSON)
    stats: list = field(default_factory=list)
    components: list = field(default_factory=list)
    history: list = field(default_factory=list)
    inverse: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        return cls(**d)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# builders


def build_problem(cfg: ExperimentConfig, alpha: Optional[float] = None, mu: Optional[float] = None,
                  eps: Optional[float] = None):
    p = cfg.problem
    alpha = p.alpha if alpha is None else alpha
    mu = p.mu if mu is None else mu
    eps = p.eps if eps is None else eps
    tag = cfg.tag
    if tag == "rd1d-manufactured":
        return manufactured_problem(alpha, p.M, p.T)
    if tag in ("rd1d-forcing-static", "rd1d-inverse"):
        return forcing_static_problem(alpha, p.length, p.sigma, p.n_kl, p.energy, mu, eps, p.T, tag, p.sensors,
                                      cfg.seed)
    if tag in ("rd1d-forcing-evolving", "rd1d-transfer"):
        return forcing_evolving_problem(alpha, mu, eps, p.T, p.length, tag)
    if tag == "rd2d":
        return rd2d_problem(alpha, p.T, p.k_sigma)
    if tag == "appD-deterministic":
        return appd_problem(alpha, p.T)
    raise ConfigError(f"unknown tag {tag!r}")


def build_sets(cfg: ExperimentConfig, problem, window=None):
    d = cfg.disc
    t_split = None
    if d.t_split:
        t_split = [tuple(s) for s in d.t_split]
        if window is not None:
            t_split = None
    return make_training_sets(problem, d.n_x - 1, d.n_t, d.n_xi, cfg.seed, window, gauss_per_dim=d.gauss,
                              t_split=t_split)


def build_surrogate(cfg: ExperimentConfig, problem, window=None, seed=None) -> BOSurrogate:
    m, a, u, y = cfg.arch_sizes()
    lifting = problem.lifting if cfg.model.lifting is None else bool(cfg.model.lifting)
    arch = Architecture(cfg.model.n_modes, problem.dim, problem.xi_dim, m, a, u, y, lifting)
    window = (0.0, problem.T) if window is None else window
    return BOSurrogate(arch, problem.domain, window, problem.xi_law, cfg.seed if seed is None else seed)


def build_ic(cfg: ExperimentConfig, problem, sets):
    if cfg.tag == "rd1d-manufactured":
        return ic_targets_from_provider(ExactBOProvider(n_modes=cfg.model.n_modes), sets)
    return ic_targets_deterministic(problem, sets, cfg.model.n_modes, use_sensors=cfg.problem.sensors)


def build_weights(cfg: ExperimentConfig) -> LossWeights:
    l = cfg.loss
    return LossWeights(l.w, l.ic, l.bc, l.bo, l.g, l.data, dynamic=l.dynamic, interval=l.interval)


def build_schedule(cfg: ExperimentConfig, **kw) -> Schedule:
    t = cfg.train
    s = Schedule(adam_iters=t.adam_iters, lr=t.lr, decay_interval=t.decay_interval, decay_factor=t.decay_factor,
                 lbfgs_iters=t.lbfgs_iters, lbfgs_history=t.lbfgs_history, gtol=t.gtol, ftol=t.ftol,
                 log_every=t.log_every)
    for k, v in kw.items():
        setattr(s, k, v)
    return s


def _ref_samples(cfg: ExperimentConfig, problem) -> SampleSet:
    if cfg.tag == "rd1d-manufactured":
        # the closed-form benchmark uses the Gauss tensor rule of the training set
        return make_training_sets(problem, 2, 1, seed=cfg.seed, gauss_per_dim=cfg.disc.gauss).samples
    return SampleSet.equal(problem.sample_xi(cfg.ref.n_samples, seed=cfg.seed, generator="sobol"), "sobol",
                           cfg.seed)


def _solver_nodes(cfg: ExperimentConfig, problem):
    """Grid of the classical solvers (``ref.N`` intervals per direction)."""
    grids = tuple(np.linspace(a, b, cfg.ref.N + 1) for a, b in problem.domain)
    return grids if problem.dim == 2 else grids[0]


def _eval_nodes(cfg: ExperimentConfig, problem):
    if problem.dim == 2:
        n = cfg.ref.N + 1
        return tuple(np.linspace(a, b, n) for a, b in problem.domain)
    a, b = problem.domain[0]
    if cfg.ref.solver in ("qmc", "fdm"):
        return np.linspace(a, b, cfg.ref.N + 1)
    return np.linspace(a, b, cfg.eval.n_x)


def _reference(cfg: ExperimentConfig, problem, times):
    """Mean and variance ``(n_t, n_x...)`` of the reference at ``times`` (None if unavailable)."""
    if cfg.ref.solver == "none":
        return None, None
    if cfg.ref.solver == "exact":
        if cfg.tag == "rd1d-manufactured":
            x = _eval_nodes(cfg, problem)
            return (np.stack([ManufacturedBO.mean(x, t) for t in times]),
                    np.stack([ManufacturedBO.variance(x, t) for t in times]))
        if cfg.tag == "appD-deterministic":
            x = _eval_nodes(cfg, problem)
            m = np.stack([problem.exact(x, t) for t in times])
            return m, np.zeros_like(m)
        raise ConfigError(f"no closed-form reference for {cfg.tag}")
    if cfg.ref.solver == "fdm":
        if problem.dim == 2:
            _, U = fdm_solve_2d_adi(problem, cfg.ref.N, cfg.ref.dt, times=list(times))
        else:
            _, U = fdm_solve_1d(problem, cfg.ref.N, cfg.ref.dt, times=list(times))
        return U, np.zeros_like(U)
    st = qmc_ensemble_solve(problem, _ref_samples(cfg, problem), cfg.ref.N, cfg.ref.dt, times=list(times),
                            workers=cfg.workers)
    return st.mean, st.variance


def _stats_rows(times, x, mean, var, ref_mean=None, ref_var=None) -> list:
    rows = []
    nan = float("nan")
    for k, t in enumerate(times):
        if isinstance(x, tuple):
            X1, X2 = np.meshgrid(x[0], x[1], indexing="ij")
            pts = list(zip(X1.ravel(), X2.ravel()))
            m, v = np.ravel(mean[k]), np.ravel(var[k])
            rm = np.ravel(ref_mean[k]) if ref_mean is not None else None
            rv = np.ravel(ref_var[k]) if ref_var is not None else None
            for j, (a, b) in enumerate(pts):
                rows.append({"t": float(t), "x": float(a), "y": float(b), "mean": float(m[j]), "variance": float(v[j]),
                             "ref_mean": float(rm[j]) if rm is not None else nan,
                             "ref_variance": float(rv[j]) if rv is not None else nan})
        else:
            for j, a in enumerate(x):
                rows.append({"t": float(t), "x": float(a), "mean": float(mean[k][j]), "variance": float(var[k][j]),
                             "ref_mean": float(ref_mean[k][j]) if ref_mean is not None else nan,
                             "ref_variance": float(ref_var[k][j]) if ref_var is not None else nan})
    return rows


def _stats_errors(report: RunReport, times, mean, var, ref_mean, ref_var):
    if ref_mean is None:
        return
    for k, t in enumerate(times):
        e, f = rel_l2(mean[k], ref_mean[k])
        report.errors[f"mean@t={t:.6g}"] = e
        report.flags[f"mean@t={t:.6g}"] = "absolute" if f else "relative"
        e, f = rel_l2(var[k], ref_var[k])
        report.errors[f"variance@t={t:.6g}"] = e
        report.flags[f"variance@t={t:.6g}"] = "absolute" if f else "relative"


def _surrogate_stats(s, problem, times, x, samples):
    if problem.dim == 2:
        X1, X2 = np.meshgrid(x[0], x[1], indexing="ij")
        pts = np.stack([X1.ravel(), X2.ravel()], axis=1)
        st = predict_stats(s, pts, times, samples)
        shape = (len(times), len(x[0]), len(x[1]))
        return st.mean.reshape(shape), st.variance.reshape(shape)
    st = predict_stats(s, x, times, samples)
    return st.mean, st.variance


def _component_rows(report: RunReport, s, problem, cfg, times):
    """Scaling factors against the closed forms or a QMC-BO run."""
    if s.N == 0 or problem.dim != 1:
        return
    xg = _eval_nodes(cfg, problem)
    samples = _ref_samples(cfg, problem)
    c = s.components(xg, np.asarray(times), samples.xi, derivs=False)
    A = np.abs(c.A.data)
    if cfg.tag == "rd1d-manufactured":
        ref = np.stack([np.abs(ManufacturedBO.a(t))[:s.N] for t in times])
        U, Y = c.U.data, c.Y.data
        for k, t in enumerate(times):
            ue, ye = ManufacturedBO.modes(xg)[:s.N], ManufacturedBO.Y(samples.xi)[:, :s.N]
            for i in range(s.N):
                sg = np.sign(np.dot(U[k, i], ue[i])) or 1.0
                report.errors[f"u{i + 1}@t={t:.6g}"] = rel_l2(sg * U[k, i], ue[i])[0]
                report.errors[f"Y{i + 1}@t={t:.6g}"] = rel_l2(sg * Y[k, :, i], ye[:, i])[0]
    elif cfg.ref.components and cfg.ref.solver == "qmc":
        try:
            tr = qmc_bo_solve(problem, samples, cfg.ref.N, s.N, cfg.ref.t_s, cfg.ref.dt, times=list(times),
                              workers=cfg.workers)
        except CrossingDetected as e:
            report.info["component_reference"] = str(e)
            return
        wx = np.full(len(xg), xg[1] - xg[0])
        wx[0] = wx[-1] = 0.5 * wx[1]
        ref = np.sqrt(np.maximum(np.einsum("tix,x->ti", tr.modes ** 2, wx), 0.0))
    else:
        return
    # modes are matched by ordering the scaling factors
    A_sorted = -np.sort(-A, axis=1)
    ref_sorted = -np.sort(-ref, axis=1)
    for k, t in enumerate(times):
        for i in range(s.N):
            e, _ = rel_l2(A_sorted[k, i:i + 1], ref_sorted[k, i:i + 1])
            report.components.append({"t": float(t), "i": i + 1, "a_i": float(A_sorted[k, i]),
                                      "ref_a_i": float(ref_sorted[k, i]), "rel_err": e})
            report.errors[f"a{i + 1}@t={t:.6g}"] = e


def _history_rows(hist) -> list:
    return [{k: r[k] for k in HISTORY_COLUMNS} for r in hist.rows]


# ---------------------------------------------------------------------------
# pipelines


def _run_solve_fdm(cfg, report):
    problem = build_problem(cfg)
    times = list(cfg.eval.times)
    if cfg.tag == "appD-deterministic":
        errs = []
        Ns = [int(n) for n in cfg.fpinn.N]
        for N in Ns:
            tt, U = fdm_solve_1d(problem, N, cfg.fpinn.fdm_dt, times=times, order=cfg.disc.order)
            x = np.linspace(0, 1, N + 1)
            ref = np.stack([problem.exact(x, t) for t in times])
            e, _ = rel_l2(U[-1], ref[-1])
            report.errors[f"fdm_N{N}"] = e
            errs.append(e)
        if len(Ns) > 1:
            report.info["fdm_slope"] = float(-np.polyfit(np.log(Ns), np.log(errs), 1)[0])
        report.stats = _stats_rows(times, x, U, np.zeros_like(U), ref, np.zeros_like(ref))
        return
    x = _solver_nodes(cfg, problem)
    if problem.dim == 2:
        _, U = fdm_solve_2d_adi(problem, cfg.ref.N, cfg.ref.dt, times=times, order=cfg.disc.order)
    else:
        _, U = fdm_solve_1d(problem, cfg.ref.N, cfg.ref.dt, times=times, order=cfg.disc.order)
    report.stats = _stats_rows(times, x, U, np.zeros_like(U))
    report.info["note"] = "deterministic solve at the zero random input"


def _run_solve_qmc(cfg, report):
    problem = build_problem(cfg)
    times = list(cfg.eval.times)
    st = qmc_ensemble_solve(problem, _ref_samples(cfg, problem), cfg.ref.N, cfg.ref.dt, times=times,
                            order=cfg.disc.order, workers=cfg.workers)
    x = _solver_nodes(cfg, problem)
    rm = rv = None
    if cfg.tag == "rd1d-manufactured":
        rm = np.stack([ManufacturedBO.mean(x, t) for t in times])
        rv = np.stack([ManufacturedBO.variance(x, t) for t in times])
        _stats_errors(report, times, st.mean, st.variance, rm, rv)
    report.stats = _stats_rows(times, x, st.mean, st.variance, rm, rv)


def _run_solve_qmc_bo(cfg, report):
    problem = build_problem(cfg)
    times = list(cfg.eval.times)
    samples = _ref_samples(cfg, problem)
    x = _solver_nodes(cfg, problem)
    try:
        tr = qmc_bo_solve(problem, samples, cfg.ref.N, cfg.model.n_modes, cfg.ref.t_s, cfg.ref.dt,
                          times=times, order=cfg.disc.order, workers=cfg.workers)
    except CrossingDetected as e:
        report.status = "crossing detected"
        report.info["crossing_t"] = e.t
        report.info["message"] = str(e)
        raise
    ref = qmc_ensemble_solve(problem, samples, cfg.ref.N, cfg.ref.dt, times=times, order=cfg.disc.order,
                             workers=cfg.workers)
    _stats_errors(report, times, tr.stats.mean, tr.stats.variance, ref.mean, ref.variance)
    report.stats = _stats_rows(times, x, tr.stats.mean, tr.stats.variance, ref.mean, ref.variance)
    report.info["drift"] = dict(tr.drift)


def _run_train_fpinn(cfg, report):
    problem = build_problem(cfg)
    if problem.dim != 1 or problem.random:
        raise ConfigError("train-fpinn needs the deterministic 1D benchmark")
    f = cfg.fpinn
    hidden = parse_arch(f.hidden)
    T = problem.T
    tg = np.linspace(0.0, T, f.n_t)
    xv = np.linspace(*problem.domain[0], f.n_v)
    v = np.asarray(problem.ic.deterministic(xv), dtype=np.float64)
    last = None
    for N in [int(n) for n in f.N]:
        m = make_fpinn(problem, N, hidden, cfg.seed, cfg.disc.order)
        data = FpinnData(m.grid.nodes[1:-1], tg, xv, v)
        ref = problem.exact(m.grid.nodes, T)[None]
        r = fpinn_train(m, problem, data, f.adam_iters, f.lr, f.lbfgs_iters, cfg.train.decay_interval,
                        cfg.train.decay_factor, reference=ref, ref_t=[T], ref_x=m.grid.nodes)
        report.errors[f"fpinn_N{N}"] = r.rel_l2
        report.iterations[f"fpinn_N{N}"] = r.adam_iters + r.lbfgs_iters
        report.timing[f"fpinn_N{N}"] = r.wall
        _, U = fdm_solve_1d(problem, N, f.fdm_dt, times=[T], order=cfg.disc.order)
        report.errors[f"fdm_N{N}"] = rel_l2(U[-1], ref[0])[0]
        last = (m, N)
    m, N = last
    x = m.grid.nodes
    pred = fpinn_predict(m, x, [T])
    report.stats = _stats_rows([T], x, pred, np.zeros_like(pred), problem.exact(x, T)[None],
                               np.zeros((1, len(x))))


def _train_forward(cfg, problem, report, seed=None, alpha=None, callback=None):
    sched = build_schedule(cfg)
    weights = build_weights(cfg)
    if cfg.disc.windows > 1:
        ic0 = build_ic(cfg, problem, build_sets(cfg, problem, (0.0, problem.T / cfg.disc.windows)))
        res = train_windows(lambda w: build_surrogate(cfg, problem, w, seed), problem,
                            lambda w: build_sets(cfg, problem, w), sched, ic0, weights, cfg.disc.windows,
                            cfg.disc.order, callback=callback)
        sets = None
    else:
        sets = build_sets(cfg, problem)
        s = build_surrogate(cfg, problem, seed=seed)
        ic = build_ic(cfg, problem, sets)
        res = train(s, problem, sets, sched, ic, weights, cfg.disc.order, callback)
    report.iterations.update({"adam": res.adam_iters, "lbfgs": res.lbfgs_iters, "total": res.iterations})
    report.info["lbfgs_reason"] = res.lbfgs_reason
    report.info["final_loss"] = res.final_loss
    report.timing["train"] = res.wall
    return res, sets


def _evaluate(cfg, problem, s, report):
    times = list(cfg.eval.times)
    x = _eval_nodes(cfg, problem)
    rm, rv = _reference(cfg, problem, times)
    samples = _ref_samples(cfg, problem) if problem.random else SampleSet.equal(np.zeros((1, 0)), "none")
    mean, var = _surrogate_stats(s, problem, times, x, samples)
    _stats_errors(report, times, mean, var, rm, rv)
    report.stats = _stats_rows(times, x, mean, var, rm, rv)
    _component_rows(report, s, problem, cfg, times)


def _run_train(cfg, report, out_dir):
    problem = build_problem(cfg)
    res, _ = _train_forward(cfg, problem, report)
    report.history = _history_rows(res.history)
    s = res.surrogate
    if isinstance(s, BOSurrogate):
        save_surrogate(os.path.join(out_dir, "surrogate.ckpt"), s, cfg.tag, problem.alpha)
    _evaluate(cfg, problem, s, report)


def _observations(cfg, truth):
    inv = cfg.inverse
    times = list(inv.obs_t)
    xs = np.asarray(inv.obs_x, dtype=np.float64)
    st = qmc_ensemble_solve(truth, _ref_samples(cfg, truth), cfg.ref.N, cfg.ref.dt, times=times,
                            workers=cfg.workers)
    a, b = truth.domain[0]
    nodes = np.linspace(a, b, cfg.ref.N + 1)
    idx = np.round((xs - a) / (nodes[1] - nodes[0])).astype(int)
    if np.max(np.abs(nodes[idx] - xs)) > 1e-9:
        raise ConfigError("inverse.obs_x must be nodes of the reference grid (ref.N)")
    X = np.tile(xs, len(times))
    Tt = np.repeat(times, len(xs))
    vals = st.mean[:, idx].ravel()
    return Observations(X, Tt, vals), st


def _run_train_inverse(cfg, report, out_dir, callback=None):
    inv = cfg.inverse
    truth = build_problem(cfg, inv.true_alpha, inv.true_mu, inv.true_eps)
    obs, _ = _observations(cfg, truth)
    # the training problem carries the initial guesses; the loss reads the trainable ones
    guess = InverseParams(inv.mu0, inv.eps0, inv.theta0)
    problem = build_problem(cfg, InverseParams.alpha_of(inv.theta0), inv.mu0, inv.eps0)
    sets = build_sets(cfg, problem)
    s = build_surrogate(cfg, problem)
    ic = build_ic(cfg, problem, sets)
    res = train_inverse(s, problem, sets, obs, build_schedule(cfg), ic, build_weights(cfg), guess,
                        cfg.disc.order, callback)
    mu, eps, alpha = res.recovered
    report.recovered = {"mu": mu, "eps": eps, "alpha": alpha}
    report.errors["mu_rel"] = abs(mu - inv.true_mu) / abs(inv.true_mu)
    report.errors["eps_rel"] = abs(eps - inv.true_eps) / abs(inv.true_eps)
    report.errors["alpha_abs"] = abs(alpha - inv.true_alpha)
    report.iterations.update({"adam": res.adam_iters, "lbfgs": res.lbfgs_iters, "total": res.iterations})
    report.info["final_loss"] = res.final_loss
    report.timing["train"] = res.wall
    report.history = _history_rows(res.history)
    report.inverse = [dict(r) for r in res.history.inverse]
    save_surrogate(os.path.join(out_dir, "surrogate.ckpt"), s, cfg.tag, alpha)
    truth_cfg = cfg
    _evaluate(truth_cfg, truth, s, report)


def _run_transfer(cfg, report, out_dir):
    tr = cfg.transfer
    src_problem = build_problem(cfg, alpha=tr.source_alpha)
    problem = build_problem(cfg)
    ckpt = tr.checkpoint
    if not ckpt:
        sub = RunReport(cfg.tag, "train", cfg.seed)
        res_src, _ = _train_forward(cfg, src_problem, sub)
        ckpt = os.path.join(out_dir, "source.ckpt")
        save_surrogate(ckpt, res_src.surrogate, cfg.tag, tr.source_alpha)
        report.iterations["source"] = res_src.iterations
        report.timing["source"] = res_src.wall
    # from scratch at the target order
    scratch = RunReport(cfg.tag, "train", cfg.seed)
    res_scr, sets = _train_forward(cfg, problem, scratch)
    target_loss = res_scr.final_loss
    report.iterations["scratch"] = res_scr.iterations
    report.info["scratch_final_loss"] = target_loss
    report.timing["scratch"] = res_scr.wall
    # fine-tune from the source weights, L-BFGS only
    s = build_surrogate(cfg, problem)
    ic = build_ic(cfg, problem, sets)
    sched = build_schedule(cfg, adam_iters=0, lbfgs_iters=tr.lbfgs_iters)
    res = transfer_finetune(ckpt, s, problem, sets, sched, ic, build_weights_static(cfg, res_scr.weights),
                            cfg.disc.order, f_target=target_loss)
    report.iterations["finetune"] = res.lbfgs_iters
    report.info["finetune_final_loss"] = res.final_loss
    report.info["finetune_reached"] = bool(res.final_loss <= target_loss)
    report.errors["iteration_ratio"] = res.lbfgs_iters / max(res_scr.iterations, 1)
    report.timing["finetune"] = res.wall
    report.history = _history_rows(res.history)
    save_surrogate(os.path.join(out_dir, "surrogate.ckpt"), s, cfg.tag, problem.alpha)
    _evaluate(cfg, problem, s, report)


def build_weights_static(cfg, weights: LossWeights) -> LossWeights:
    """Weights frozen at their end-of-training values (the objective the
    from-scratch run finished on), so both runs minimise the same loss."""
    w = weights.copy()
    w.dynamic = False
    return w


def _run_eval(cfg, report, checkpoint):
    if not checkpoint:
        raise ConfigError("eval needs a checkpoint (--checkpoint or transfer.checkpoint)")
    s, meta = load_surrogate(checkpoint)
    problem = build_problem(cfg)
    report.info["checkpoint"] = {k: meta[k] for k in ("tag", "alpha", "seed") if k in meta}
    _evaluate(cfg, problem, s, report)


def _run_kl_modes(cfg, report):
    from .problems import gp_forcing_field

    p = cfg.problem
    kl = gp_forcing_field(p.length, p.sigma)
    n = kl.mode_count(p.energy)
    y = np.linspace(-1.0, 1.0, 513)
    w = np.full(513, y[1] - y[0])
    w[0] = w[-1] = 0.5 * w[1]
    bare = kl_decompose(se_kernel_matrix(y, CovKernel(p.sigma, p.length)), w)
    report.info["modes"] = n
    report.info["modes_bare_kernel"] = kl_mode_count(bare, p.energy)
    report.info["eigvals"] = [float(v) for v in kl.eigvals[:max(n + 5, 10)]]
    report.info["energy"] = p.energy


def _run_dry_run_oracle(cfg, report):
    if cfg.tag != "rd1d-manufactured":
        raise ConfigError("dry-run-oracle uses the closed-form components of rd1d-manufactured")
    problem = build_problem(cfg)
    sets = build_sets(cfg, problem)
    prov = ExactBOProvider(n_modes=cfg.model.n_modes)
    ctx = LossContext(problem, sets, cfg.disc.order)
    ic = ic_targets_from_provider(prov, sets)
    terms = {k: float(v.data) for k, v in loss_terms(prov, prov.params, ctx, ic).items()}
    for k, v in terms.items():
        report.errors[f"mse_{k}"] = v
    report.errors["oracle_sum"] = terms["w"] + terms["bo"] + terms["ic"] + terms["bc"]


def run_experiment(cfg: ExperimentConfig, mode: str = "train", out_dir: Optional[str] = None,
                   checkpoint: Optional[str] = None, write: bool = True, callback=None) -> RunReport:
    """Run one pipeline; tables and report are written to ``out_dir`` (default ``cfg.out``)."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    cfg.validate()
    out_dir = out_dir or cfg.out
    os.makedirs(out_dir, exist_ok=True)
    report = RunReport(cfg.tag, mode, cfg.seed, config={k: _jsonable(v) for k, v in cfg.to_flat().items()})
    t0 = time.perf_counter()
    try:
        if mode == "solve-fdm":
            _run_solve_fdm(cfg, report)
        elif mode == "solve-qmc":
            _run_solve_qmc(cfg, report)
        elif mode == "solve-qmc-bo":
            _run_solve_qmc_bo(cfg, report)
        elif mode == "train-fpinn":
            _run_train_fpinn(cfg, report)
        elif mode == "train":
            _run_train(cfg, report, out_dir)
        elif mode == "train-inverse":
            _run_train_inverse(cfg, report, out_dir, callback)
        elif mode == "transfer":
            _run_transfer(cfg, report, out_dir)
        elif mode == "eval":
            _run_eval(cfg, report, checkpoint or cfg.transfer.checkpoint)
        elif mode == "kl-modes":
            _run_kl_modes(cfg, report)
        elif mode == "dry-run-oracle":
            _run_dry_run_oracle(cfg, report)
    except Exception:
        report.timing["total"] = time.perf_counter() - t0
        if report.status == "ok":
            report.status = "failed"
        if write:
            emit_tables(report, out_dir)
        raise
    report.timing["total"] = time.perf_counter() - t0
    if write:
        emit_tables(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# tables


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, float("nan"))) for c in columns])


def emit_tables(report: RunReport, out_dir: str, fmt: str = "both") -> list:
    """Write CSV tables and/or ``report.json``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        two_d = bool(report.stats) and "y" in report.stats[0]
        scol = ("t", "x", "y", "mean", "variance", "ref_mean", "ref_variance") if two_d else \
            ("t", "x", "mean", "variance", "ref_mean", "ref_variance")
        tables = [("stats.csv", scol, report.stats),
                  ("components.csv", ("t", "i", "a_i", "ref_a_i", "rel_err"), report.components),
                  ("history.csv", HISTORY_COLUMNS, report.history),
                  ("inverse.csv", INVERSE_COLUMNS, report.inverse)]
        for name, cols, rows in tables:
            p = os.path.join(out_dir, name)
            _write_csv(p, cols, rows)
            written.append(p)
    if fmt in ("json", "both"):
        p = os.path.join(out_dir, "report.json")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        written.append(p)
    return written


def read_csv(path) -> list:
    """Rows as dicts of floats (ints where the column is integral)."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        out = []
        for row in r:
            d = {}
            for k, v in zip(header, row):
                d[k] = int(v) if k in ("iter", "i") else float(v)
            out.append(d)
    return out


def recompute_errors(out_dir: str) -> dict:
    """Relative L2 errors of mean and variance per time, from ``stats.csv`` alone."""
    rows = read_csv(os.path.join(out_dir, "stats.csv"))
    times = []
    for r in rows:
        if r["t"] not in times:
            times.append(r["t"])
    out = {}
    for t in times:
        sel = [r for r in rows if r["t"] == t]
        for q in ("mean", "variance"):
            ref = np.array([r[f"ref_{q}"] for r in sel])
            if np.all(np.isnan(ref)):
                continue
            out[f"{q}@t={t:.6g}"] = rel_l2(np.array([r[q] for r in sel]), ref)[0]
    return out
