"""Command line benchmarks wiring the library into reproducible experiments.

Every run reads a TOML config, applies the --seed/--precision overrides, and
writes CSV files into --out.  Data rows are a pure function of the header
(tool version, subcommand, seed, precision, config hash); wall-clock numbers
are kept in separate files flagged nondeterministic so the invariant stays
checkable byte for byte.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from . import benchgen, classifier, closedloop, linalg, mpc, reduction, solve
from .pcls import Basis, tau_scale_samples
from .reduction import ClusterModel, SampleSet

try:
    from importlib.metadata import version as _pkg_version

    TOOL_VERSION = _pkg_version("pclsred")
except Exception:
    TOOL_VERSION = "0.1.0"

PRECISIONS = ("f32", "f64")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved run plumbing: where the config came from and where output goes."""

    subcommand: str
    config_path: str
    seed: int
    precision: str
    threads: int
    out_dir: str
    config: dict

    def validate(self) -> "RunConfig":
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        os.makedirs(self.out_dir, exist_ok=True)
        if not os.access(self.out_dir, os.W_OK):
            raise ConfigError(f"output directory {self.out_dir!r} is not writable")
        return self

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(run: RunConfig, name: str, columns, rows, nondeterministic=False):
    """CSV with a comment header; RFC 4180 body, '.' decimal, 17 digits."""
    with open(run.path(name), "w", newline="") as f:
        for line in (
            f"# tool: pclsred {TOOL_VERSION}",
            f"# subcommand: {run.subcommand}",
            f"# seed: {run.seed}",
            f"# precision: {run.precision}",
            f"# config: sha256:{run.config_hash}",
        ):
            f.write(line + "\r\n")
        if nondeterministic:
            f.write("# nondeterministic: wall-clock timing\r\n")
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def parallel_map(fn, count: int, threads: int) -> list:
    """Evaluate fn(0..count-1); results ordered by index however scheduled."""
    if threads <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(count)))


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"missing [{name}] section")
    return sec


def _get(sec: dict, key: str, default=None, required=False):
    if key in sec:
        return sec[key]
    if required:
        raise ConfigError(f"missing config key {key!r}")
    return default


def _quantiles(values):
    v = np.asarray(values, dtype=float)
    return (
        float(np.median(v)),
        float(np.quantile(v, 0.25)),
        float(np.quantile(v, 0.75)),
    )


# ---------------------------------------------------------------------------
# bench-condense: Hessian conditioning of the three condensing routes


def _mpc_ensemble_cfg(run: RunConfig):
    ens = _section(run.config, "ensemble")
    n_x = int(_get(ens, "n_x", required=True))
    n_u = int(_get(ens, "n_u", required=True))
    horizons = [int(t) for t in _get(ens, "T", required=True)]
    stability = _get(ens, "stability", "stable")
    count = int(_get(ens, "count", required=True))
    delta = float(_get(ens, "delta", 1.0))
    if count < 1:
        raise ConfigError("ensemble count must be at least 1")
    if not horizons:
        raise ConfigError("ensemble needs at least one horizon")
    return n_x, n_u, horizons, stability, count, delta


def cmd_bench_condense(run: RunConfig) -> None:
    n_x, n_u, horizons, stability, count, delta = _mpc_ensemble_cfg(run)
    children = np.random.SeedSequence(run.seed).spawn(len(horizons) * count)
    methods = ("standard", "riccati", "qr")

    def one(idx):
        T = horizons[idx // count]
        rng = np.random.default_rng(children[idx])
        spec = benchgen.RandomMpcSpec(
            n_x=n_x, n_u=n_u, T=T, stability=stability, seed=run.seed, delta=delta
        )
        model, weights, bounds = benchgen.gen_mpc(spec, rng)
        x0 = rng.uniform(-delta, delta, n_x)
        A, b = mpc.build_cost(weights)
        G, g = benchgen.stage_constraints(T, n_x, n_u, bounds)
        out = []
        for method in methods:
            if method == "standard":
                cond = mpc.condense_standard(model, x0, A, b, G, g)
            elif method == "riccati":
                cond = mpc.condense_riccati(model, x0, weights, G, g)
            else:
                cond = mpc.condense_qr(model, x0, A, b, G, g)
            # condition of the Hessian A_r'A_r, computed as cond(A_r)^2 so the
            # f64 SVD keeps resolving it after standard condensing blows up
            out.append(linalg.cond(cond.A_r) ** 2)
        return out

    kappas = parallel_map(one, len(horizons) * count, run.threads)
    rows = []
    for idx, ks in enumerate(kappas):
        T = horizons[idx // count]
        for method, k in zip(methods, ks):
            rows.append((T, stability, idx % count, method, k))
    write_csv(
        run,
        "condense_instances.csv",
        ("T", "stability", "instance", "method", "kappa"),
        rows,
    )
    summary = []
    for ti, T in enumerate(horizons):
        block = kappas[ti * count : (ti + 1) * count]
        for mi, method in enumerate(methods):
            med, q25, q75 = _quantiles([ks[mi] for ks in block])
            summary.append((T, stability, method, med, q25, q75))
    write_csv(
        run,
        "condense_summary.csv",
        ("T", "stability", "method", "kappa_median", "kappa_q25", "kappa_q75"),
        summary,
    )


# ---------------------------------------------------------------------------
# bench-basis: reduced-basis validation error over the (K, m) grid


def cmd_bench_basis(run: RunConfig) -> None:
    fam = _section(run.config, "family")
    spec = benchgen.RandomPclsSpec(
        n=int(_get(fam, "n", required=True)),
        p=int(_get(fam, "n_theta", required=True)),
        n_c=int(_get(fam, "n_c", required=True)),
        seed=run.seed,
    )
    col = _section(run.config, "collect")
    M = int(_get(col, "M", required=True))
    eps_lambda = float(_get(col, "eps_lambda", 1e-3))
    iters = int(_get(col, "iterations", 4000))
    val_cfg = _section(run.config, "validate")
    n_val = int(_get(val_cfg, "count", required=True))
    grid = _section(run.config, "grid")
    m_list = [int(m) for m in _get(grid, "m", required=True)]
    k_list = [int(k) for k in _get(grid, "K", required=True)]
    if min(M, n_val) < 1:
        raise ConfigError("collect M and validate count must be at least 1")

    family = benchgen.gen_pcls(spec)
    ss = np.random.SeedSequence(run.seed)
    rng_train, rng_val = (np.random.default_rng(c) for c in ss.spawn(2))
    train = family.collect(M, rng_train, eps_lambda=eps_lambda, iterations=iters)
    val = family.collect(n_val, rng_val, eps_lambda=eps_lambda, iterations=iters)

    models = {}
    for K in k_list:
        for m in m_list:
            if K == 1:
                models[K, m] = [reduction.svd_basis(train, m)]
            else:
                models[K, m] = reduction.ksvd(train, [m] * K, seed=run.seed).bases

    def one(j):
        theta = val.thetas[j]
        z_star = val.s_stars[j]
        p = family.instance(theta)
        j_star = 0.5 * float(np.sum((p.A @ z_star - p.b) ** 2))
        out = []
        for (K, m), bases in models.items():
            dists = [reduction.reassign_distance(z_star, b) for b in bases]
            basis = bases[int(np.argmin(dists))]
            v, _ = benchgen.solve_with_duals(
                p.A @ basis.Phi,
                p.b - p.A @ basis.phi0,
                p.G @ basis.Phi,
                p.g - p.G @ basis.phi0,
                iterations=iters,
            )
            z_r = basis.phi0 + basis.Phi @ v
            j_r = 0.5 * float(np.sum((p.A @ z_r - p.b) ** 2))
            rel_opt = (j_r - j_star) / j_star
            rel_z = float(np.linalg.norm(z_star - z_r) / np.linalg.norm(z_star))
            viol = float(np.max((p.G @ z_r - p.g) / np.abs(p.g)))
            out.append((K, m, j, rel_opt, rel_z, viol))
        return out

    results = parallel_map(one, n_val, run.threads)
    rows = [row for chunk in results for row in chunk]
    write_csv(
        run,
        "basis_instances.csv",
        ("K", "m", "instance", "rel_opt_err", "rel_z_diff", "max_rel_violation"),
        rows,
    )
    summary = []
    for K in k_list:
        for m in m_list:
            sel = [r for r in rows if r[0] == K and r[1] == m]
            summary.append(
                (
                    K,
                    m,
                    float(np.median([r[3] for r in sel])),
                    float(np.median([r[4] for r in sel])),
                    float(np.median([r[5] for r in sel])),
                )
            )
    write_csv(
        run,
        "basis_summary.csv",
        ("K", "m", "rel_opt_err_median", "rel_z_diff_median", "max_rel_violation_median"),
        summary,
    )


# ---------------------------------------------------------------------------
# bench-admm: solution quality of both condensing paths at fixed iterations


def cmd_bench_admm(run: RunConfig) -> None:
    n_x, n_u, horizons, stability, count, delta = _mpc_ensemble_cfg(run)
    adm = _section(run.config, "admm")
    iterations = int(_get(adm, "iterations", required=True))
    if iterations < 1:
        raise ConfigError("admm iterations must be at least 1")
    rho = float(_get(adm, "rho", 1.0))
    alpha = float(_get(adm, "alpha", 1.6))
    ref_iters = int(_get(_section(run.config, "reference"), "iterations", 20000))
    h_t = float(_get(run.config.get("timing", {}), "h_t", 10.0))
    settings = solve.AdmmSettings(
        rho=rho, alpha=alpha, iterations=iterations, precision=run.precision
    ).validate()
    children = np.random.SeedSequence(run.seed).spawn(len(horizons) * count)
    dt = run.dtype

    def one(idx):
        T = horizons[idx // count]
        rng = np.random.default_rng(children[idx])
        spec = benchgen.RandomMpcSpec(
            n_x=n_x, n_u=n_u, T=T, stability=stability, seed=run.seed, delta=delta
        )
        model, weights, bounds, x0, p = benchgen.gen_feasible_instance(spec, rng)
        A, b = mpc.build_cost(weights)
        # the reference lives on the robust path in f64
        cond_qr = mpc.condense_qr(model, x0, A, b, p.G, p.g)
        s_ref = solve.reference_solution(
            cond_qr.A_r, cond_qr.b_r, cond_qr.G_r, cond_qr.g_r, iterations=ref_iters
        )
        z_star = cond_qr.recover(s_ref)
        out = []
        for path, cond in (("standard", None), ("qr", cond_qr)):
            t0 = time.perf_counter()
            if cond is None:
                cond = mpc.condense_standard(model, x0, A, b, p.G, p.g)
            t_condense = time.perf_counter() - t0
            t0 = time.perf_counter()
            res = solve.admm_solve(cond.A_r, cond.b_r, cond.G_r, cond.g_r, settings)
            t_solve = time.perf_counter() - t0
            # recover in working precision; the transform is part of the path
            z_p = cond.transform_Z.astype(dt) @ res.s + cond.transform_offset.astype(dt)
            q = solve.quality(z_p.astype(np.float64), z_star, p.C, p.e, p.G, p.g)
            out.append((path, q.mu_o, q.mu_f, t_condense, t_solve))
        return out

    results = parallel_map(one, len(horizons) * count, run.threads)
    rows, trows = [], []
    for idx, pair in enumerate(results):
        T = horizons[idx // count]
        for path, mu_o, mu_f, t_c, t_s in pair:
            rows.append((T, idx % count, path, mu_o, mu_f))
            trows.append((T, idx % count, path, t_c, t_s))
    write_csv(
        run, "admm_metrics.csv", ("T", "instance", "path", "mu_o", "mu_f"), rows
    )
    write_csv(
        run,
        "admm_times.csv",
        ("T", "instance", "path", "condense_s", "solve_s"),
        trows,
        nondeterministic=True,
    )
    summary, tsummary = [], []
    for ti, T in enumerate(horizons):
        block = results[ti * count : (ti + 1) * count]
        for pi, path in enumerate(("standard", "qr")):
            mu_o = [inst[pi][1] for inst in block]
            mu_f = [inst[pi][2] for inst in block]
            totals_ms = [1e3 * (inst[pi][3] + inst[pi][4]) for inst in block]
            summary.append((T, path, float(np.median(mu_o)), float(np.median(mu_f))))
            tsummary.append((T, path, solve.shifted_geomean(totals_ms, h_t)))
    write_csv(
        run, "admm_summary.csv", ("T", "path", "mu_o_median", "mu_f_median"), summary
    )
    write_csv(
        run,
        "admm_times_summary.csv",
        ("T", "path", "sgm_total_ms"),
        tsummary,
        nondeterministic=True,
    )


# ---------------------------------------------------------------------------
# qr-bench: structured vs dense Givens factorization of C'


def cmd_qr_bench(run: RunConfig) -> None:
    sw = _section(run.config, "sweep")
    n_x = int(_get(sw, "n_x", required=True))
    n_u = int(_get(sw, "n_u", required=True))
    horizons = [int(t) for t in _get(sw, "T", required=True)]
    stability = _get(sw, "stability", "stable")
    count = int(_get(sw, "count", required=True))
    delta = float(_get(sw, "delta", 1.0))
    if count < 1 or not horizons:
        raise ConfigError("sweep needs count >= 1 and at least one horizon")
    children = np.random.SeedSequence(run.seed).spawn(len(horizons) * count)

    def one(idx):
        T = horizons[idx // count]
        rng = np.random.default_rng(children[idx])
        spec = benchgen.RandomMpcSpec(
            n_x=n_x, n_u=n_u, T=T, stability=stability, seed=run.seed, delta=delta
        )
        model, _, _ = benchgen.gen_mpc(spec, rng)
        C, _ = mpc.build_equality(model, np.zeros(n_x))
        ct = np.ascontiguousarray(C.T)
        t0 = time.perf_counter()
        _, _, fl_mpc = mpc.qr_mpc(ct.copy(), n_x, n_u, T)
        t_mpc = time.perf_counter() - t0
        t0 = time.perf_counter()
        _, _, fl_dense = mpc.dense_givens_qr(ct)
        t_dense = time.perf_counter() - t0
        return fl_mpc.total, fl_dense.total, t_mpc, t_dense

    results = parallel_map(one, len(horizons) * count, run.threads)
    rows, trows = [], []
    for idx, (f_mpc, f_dense, t_mpc, t_dense) in enumerate(results):
        T = horizons[idx // count]
        rows.append((T, idx % count, "qr_mpc", f_mpc))
        rows.append((T, idx % count, "qr_dense", f_dense))
        trows.append((T, idx % count, "qr_mpc", t_mpc))
        trows.append((T, idx % count, "qr_dense", t_dense))
    write_csv(run, "qrbench_flops.csv", ("T", "instance", "method", "flops"), rows)
    write_csv(
        run,
        "qrbench_times.csv",
        ("T", "instance", "method", "wall_s"),
        trows,
        nondeterministic=True,
    )
    summary = []
    for ti, T in enumerate(horizons):
        block = results[ti * count : (ti + 1) * count]
        ratios = [f_dense / f_mpc for f_mpc, f_dense, _, _ in block]
        t_ratios = [t_dense / t_mpc for _, _, t_mpc, t_dense in block]
        predicted = mpc.flops_closed_form("qr_dense", T, n_x, n_u) / mpc.flops_closed_form(
            "qr_mpc", T, n_x, n_u
        )
        summary.append(
            (
                T,
                float(np.exp(np.mean(np.log(ratios)))),
                predicted,
                float(np.exp(np.mean(np.log(t_ratios)))),
            )
        )
    write_csv(
        run,
        "qrbench_summary.csv",
        ("T", "flop_ratio_geomean", "flop_ratio_closed_form", "time_ratio_geomean"),
        summary,
    )


# ---------------------------------------------------------------------------
# closed loop: run the reactor scenario with a configured reduction


def _scenario_from_config(run: RunConfig):
    sc = _section(run.config, "scenario")
    plant = closedloop.ReactorPlant()
    u0 = float(_get(sc, "u0", 300.0))
    N = int(_get(sc, "N", required=True))
    refs = closedloop.random_step_reference(
        N + 1,
        run.seed,
        lo=float(_get(sc, "ref_lo", 2.0)),
        hi=float(_get(sc, "ref_hi", 9.0)),
        switch=float(_get(sc, "ref_switch", 0.1)),
    )
    scen = closedloop.ClosedLoopScenario(
        plant=plant,
        refs=refs,
        N=N,
        x0=plant.equilibrium(u0),
        u_prev0=u0,
        T=int(_get(sc, "T", 20)),
        q_track=float(_get(sc, "q_track", 1.0)),
        r_du=float(_get(sc, "r_du", 0.01)),
        du_limit=float(_get(sc, "du_limit", 3.0)),
        u_min=float(_get(sc, "u_min", 285.15)),
        u_max=float(_get(sc, "u_max", 312.15)),
        slack_weight=float(_get(sc, "slack_weight", 1e5)),
        admm_iterations=int(_get(sc, "admm_iterations", 600)),
    )
    return scen.validate()


def _reduction_from_config(run: RunConfig) -> closedloop.ReductionConfig:
    red = _section(run.config, "reduction")
    kind = _get(red, "kind", required=True)
    m = _get(red, "m")
    K = _get(red, "K")
    cfg = closedloop.ReductionConfig(
        kind=kind,
        n_free=int(_get(red, "n_free", 3)),
        m=None if m is None else int(m),
        K=None if K is None else int(K),
        tau=float(_get(red, "tau", 20.0)),
    )
    try:
        return cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_trained(run: RunConfig, cfg: closedloop.ReductionConfig):
    if cfg.kind not in ("svd", "ksvd"):
        return None
    models_dir = _get(_section(run.config, "models"), "dir", required=True)
    cluster_path = os.path.join(models_dir, "clusters.json")
    if not os.path.exists(cluster_path):
        raise ConfigError(f"missing model file {cluster_path!r}")
    with open(cluster_path) as f:
        model = ClusterModel.from_json(f.read())
    if cfg.kind == "svd":
        if model.K != 1:
            raise ConfigError("svd reduction expects a single-cluster model file")
        return closedloop.TrainedReduction(config=cfg, basis=model.bases[0])
    if model.K != cfg.K:
        raise ConfigError(
            f"model file has K={model.K}, reduction config says K={cfg.K}"
        )
    bank_path = os.path.join(models_dir, "bank.json")
    if not os.path.exists(bank_path):
        raise ConfigError(f"missing model file {bank_path!r}")
    with open(bank_path) as f:
        bank = classifier.ClassifierBank.from_json(f.read())
    return closedloop.TrainedReduction(config=cfg, clusters=model, bank=bank)


def cmd_closedloop(run: RunConfig) -> None:
    scen = _scenario_from_config(run)
    cfg = _reduction_from_config(run)
    trained = _load_trained(run, cfg)
    result = closedloop.closed_loop(scen, cfg, trained=trained)

    steps = result.inputs.shape[0] if result.aborted_at is None else result.aborted_at
    rows = [
        (
            k,
            result.states[k, 0],
            result.states[k, 1],
            result.inputs[k],
            result.refs_used[k],
            result.cluster_index[k],
        )
        for k in range(steps)
    ]
    write_csv(
        run,
        "trajectory.csv",
        ("step", "t_r", "c_a", "u", "ref", "cluster"),
        rows,
    )
    write_csv(
        run,
        "step_times.csv",
        ("step", "solve_s"),
        [(k, result.solve_times[k]) for k in range(steps)],
        nondeterministic=True,
    )
    write_csv(
        run,
        "summary.csv",
        ("key", "value"),
        [
            ("J", result.J),
            ("steps", steps),
            ("aborted_at", -1 if result.aborted_at is None else result.aborted_at),
            ("kind", cfg.kind),
        ],
    )
    sec = run.config.get("section", {})
    if trained is not None and trained.bank is not None and _get(sec, "enabled", True):
        n_grid = int(_get(sec, "grid", 40))
        axis_i = int(_get(sec, "axis_i", 0))
        axis_j = int(_get(sec, "axis_j", 1))
        lo_i, hi_i = (float(v) for v in _get(sec, "range_i", (290.0, 320.0)))
        lo_j, hi_j = (float(v) for v in _get(sec, "range_j", (0.5, 9.5)))
        mid_ref = 0.5 * (scen.refs.min() + scen.refs.max())
        fixed = np.array(
            [scen.x0[0], scen.x0[1], scen.u_prev0, mid_ref, mid_ref]
        )
        grid_i = np.linspace(lo_i, hi_i, n_grid)
        grid_j = np.linspace(lo_j, hi_j, n_grid)
        labels = classifier.partition_section(
            trained.bank, fixed, axis_i, axis_j, grid_i, grid_j
        )
        srows = [
            (i, j, grid_i[i], grid_j[j], int(labels[i, j]))
            for i in range(n_grid)
            for j in range(n_grid)
        ]
        write_csv(
            run,
            "section.csv",
            ("i", "j", "theta_i", "theta_j", "cluster"),
            srows,
        )
    if result.aborted_at is not None:
        raise RuntimeError(f"closed loop aborted at step {result.aborted_at}")


# ---------------------------------------------------------------------------
# train-reduction: collect samples, fit the subspaces, write model files


def cmd_train_reduction(run: RunConfig) -> None:
    scen = _scenario_from_config(run)
    tr = _section(run.config, "training")
    kind = _get(tr, "kind", "ksvd")
    cfg = closedloop.ReductionConfig(
        kind=kind,
        n_free=int(_get(tr, "n_free", 3)),
        m=int(_get(tr, "m", 2)),
        K=int(_get(tr, "K", 10)) if kind == "ksvd" else None,
        tau=float(_get(tr, "tau", 20.0)),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.kind not in ("svd", "ksvd"):
        raise ConfigError("training applies to the svd and ksvd reductions")
    M = int(_get(tr, "M", 2000))
    epochs = int(_get(tr, "epochs", 1500))

    samples = closedloop.collect_samples(scen, cfg, M=M, seed=run.seed)
    np.savez(
        run.path("samples.npz"),
        thetas=samples.thetas,
        s_stars=samples.s_stars,
        lambdas_max=samples.lambdas_max,
    )
    trained = closedloop.fit_reduction(samples, cfg, seed=run.seed, epochs=epochs)
    info = [("kind", cfg.kind), ("M", M), ("m", cfg.m), ("tau", cfg.tau)]
    if cfg.kind == "svd":
        model = ClusterModel(
            K=1, assignments=np.zeros(M, dtype=int), bases=[trained.basis]
        )
    else:
        model = trained.clusters
        # mirror the fit: slack column off, first increment tau-weighted
        incr = samples.s_stars[:, :-1]
        weighted = SampleSet(
            thetas=samples.thetas,
            s_stars=tau_scale_samples(incr, 1, cfg.tau),
            lambdas_max=samples.lambdas_max,
        )
        info += [
            ("K", cfg.K),
            ("ksvd_cost", reduction.ksvd_cost(model, weighted)),
            ("ksvd_iterations", model.n_iter),
            (
                "classifier_accuracy",
                classifier.accuracy(trained.bank, samples.thetas, model.assignments),
            ),
        ]
        with open(run.path("bank.json"), "w") as f:
            f.write(trained.bank.to_json())
    with open(run.path("clusters.json"), "w") as f:
        f.write(model.to_json())
    write_csv(run, "training_summary.csv", ("key", "value"), info)


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "bench-condense": cmd_bench_condense,
    "bench-basis": cmd_bench_basis,
    "bench-admm": cmd_bench_admm,
    "qr-bench": cmd_qr_bench,
    "closedloop": cmd_closedloop,
    "train-reduction": cmd_train_reduction,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pclsred", description="pCLS reduction benchmarks"
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument(
            "--precision", choices=PRECISIONS, default=None, help="override precision"
        )
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default=".", help="output directory")
    return parser


def load_run(args) -> RunConfig:
    try:
        with open(args.config, "rb") as f:
            cfg = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    run_sec = cfg.get("run", {})
    seed = args.seed if args.seed is not None else int(run_sec.get("seed", 0))
    precision = (
        args.precision
        if args.precision is not None
        else run_sec.get("precision", "f64")
    )
    return RunConfig(
        subcommand=args.subcommand,
        config_path=args.config,
        seed=seed,
        precision=precision,
        threads=args.threads,
        out_dir=args.out,
        config=cfg,
    ).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = load_run(args)
        COMMANDS[args.subcommand](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
