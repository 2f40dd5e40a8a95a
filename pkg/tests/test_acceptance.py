"""End-to-end acceptance gate.

Each test checks one headline guarantee of the package at its stated
tolerance and records a single PASS/FAIL verdict line (replayed in the
terminal summary by conftest). Criterion 7's Bregman-slope window is known
to fail: see the inline analysis in that test. Everything here runs on
synthetic data only.
"""

import time

import numpy as np
import pytest

import conftest
from test_discrepancy import golden_min

from coupledrec.cli import main as cli_main, random_fourier_mask, _gaussian_kernel
from coupledrec.diffops import adjoint_check, grad_linear_op, sym_grad_linear_op
from coupledrec.discrepancy import (
    add_gaussian_noise,
    add_poisson_noise,
    eval_kl,
    prox_kl_dual,
    prox_l2_dual,
)
from coupledrec.forward import (
    convolution_op,
    default_n_bins,
    identity_op,
    masked_fourier_op,
    radon_op,
)
from coupledrec.grids import Grid, MultiImage
from coupledrec.problem import ChannelSpec, ProblemSpec, Quadratic, TGV2
from coupledrec.rates import (
    RateChannel,
    RateExperiment,
    RateRule,
    geometric_deltas,
    phantom,
    run_rate_experiment,
)
from coupledrec.solver import (
    SolveConfig,
    channel_data_term,
    regularizer_value,
    solve,
)


def record(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num:02d} {'PASS' if ok else 'FAIL'} - {detail}"
    conftest.acceptance_lines.append(line)
    print(line)
    assert ok, line


def test_criterion_01_adjoint_suite():
    t0 = time.perf_counter()
    grid = Grid((64, 64))
    ops = {
        "grad/div": grad_linear_op(grid, 2),
        "sym_grad/sym_div": sym_grad_linear_op(grid, 2),
        "convolution": convolution_op(grid, _gaussian_kernel(1.5, 2)).as_linear_op(),
        "masked_fourier": masked_fourier_op(
            grid, random_fourier_mask(grid.dims, 0.25, seed=0)
        ).as_linear_op(),
        "radon": radon_op(grid, np.arange(16) * np.pi / 16, default_n_bins(grid)).as_linear_op(),
    }
    errs = {name: adjoint_check(op, trials=10, seed=1) for name, op in ops.items()}
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    record(
        1,
        worst < 1e-10 and elapsed < 10.0,
        f"adjoints on 64x64: worst rel error {worst:.2e} < 1e-10, {elapsed:.1f}s < 10s",
    )


def test_criterion_02_prox_oracles():
    rng = np.random.default_rng(10)
    worst_l2 = worst_kl = 0.0
    for _ in range(1000):
        x = rng.uniform(-10, 10)
        s = rng.uniform(0.1, 4.0)
        lam = rng.uniform(0.1, 20.0)
        # squared-norm dual prox against its scalar closed-form primal
        primal = (x / s) / (1.0 + 2.0 * lam / s)
        worst_l2 = max(worst_l2, abs(prox_l2_dual(np.array([x]), s, lam)[0] - (x - s * primal)))
        # KL dual prox against a golden-section scalar search (bisection on
        # the strictly increasing derivative polishes the flat bracket)
        f = rng.uniform(0.01, 10.0)

        def objective(t):
            return 0.5 * (t - x / s) ** 2 + (lam / s) * (t - f - f * np.log(t / f))

        def slope(t):
            return t - x / s + (lam / s) * (1.0 - f / t)

        t_star = golden_min(objective, 1e-12, max(x / s, 0.0) + f + 3 * lam / s + 10.0)
        lo, hi = max(t_star - 1e-4, 1e-14), t_star + 1e-4
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            lo, hi = (lo, mid) if slope(mid) > 0 else (mid, hi)
        t_star = 0.5 * (lo + hi)
        worst_kl = max(
            worst_kl, abs(prox_kl_dual(np.array([x]), np.array([f]), s, lam)[0] - (x - s * t_star))
        )
    # nonexpansiveness on 1000 random pairs
    expansions = 0
    for _ in range(1000):
        n = rng.integers(1, 20)
        a, b = rng.normal(0, 5, n), rng.normal(0, 5, n)
        s, lam = rng.uniform(0.1, 4.0), rng.uniform(0.1, 20.0)
        f = rng.uniform(0.01, 10.0, n)
        gap = np.linalg.norm(a - b) * (1 + 1e-12) + 1e-12
        if np.linalg.norm(prox_l2_dual(a, s, lam) - prox_l2_dual(b, s, lam)) > gap:
            expansions += 1
        if np.linalg.norm(prox_kl_dual(a, f, s, lam) - prox_kl_dual(b, f, s, lam)) > gap:
            expansions += 1
    record(
        2,
        worst_l2 < 1e-8 and worst_kl < 1e-8 and expansions == 0,
        f"prox oracles: l2 err {worst_l2:.1e}, kl err {worst_kl:.1e} (< 1e-8), "
        f"{expansions} expansive pairs",
    )


def test_criterion_03_kl_l1_inequality():
    rng = np.random.default_rng(42)
    violations = 0
    for _ in range(1000):
        n = rng.integers(1, 40)
        v = rng.gamma(1.5, 2.0, n) + 1e-9
        f = rng.gamma(1.5, 2.0, n) + 1e-9
        lhs = np.sum(np.abs(v - f)) ** 2
        rhs = (2.0 / 3.0 * f.sum() + 4.0 / 3.0 * v.sum()) * eval_kl(v, f)
        if lhs > rhs * (1.0 + 1e-12) + 1e-12:
            violations += 1
    record(3, violations == 0, f"KL/l1 inequality: {violations} violations in 1000 pairs")


def test_criterion_04_closed_form_halving():
    grid = Grid((32, 32))
    f = phantom("smooth_bump", grid, 1).channel(0)
    spec = ProblemSpec(
        grid=grid,
        channels=(ChannelSpec(op=identity_op(grid), data=f, lam=0.5, kind="l2"),),
        regularizer=Quadratic(1.0),
    )
    res = solve(spec, SolveConfig(max_iters=2000, tol=1e-14))
    ref = f.reshape(-1) / 2
    rel = float(np.linalg.norm(res.u.values.reshape(-1) - ref) / np.linalg.norm(ref))
    record(4, rel < 1e-6, f"quadratic closed form u = f/2: rel error {rel:.2e} < 1e-6")


def test_criterion_05_tgv_kernel_affine():
    grid = Grid((32, 32))
    truth = phantom("affine_blocks", grid, 2)
    spec = ProblemSpec(
        grid=grid,
        channels=tuple(
            ChannelSpec(op=identity_op(grid), data=truth.channel(i), lam=100.0, kind="l2")
            for i in range(2)
        ),
        regularizer=TGV2(2.0, 1.0, "frobenius"),
    )
    res = solve(spec, SolveConfig(max_iters=10000, tol=1e-14, diag_every=1000))
    rel = float(
        np.linalg.norm(res.u.values - truth.values) / np.linalg.norm(truth.values)
    )
    energy = regularizer_value(spec, res.u, res.v)
    record(
        5,
        rel < 1e-5 and energy < 1e-6,
        f"affine image in TGV kernel: rel error {rel:.2e} < 1e-5, energy {energy:.2e} < 1e-6",
    )


def test_criterion_06_hard_constraint_limit():
    grid = Grid((32, 32))
    f = phantom("smooth_bump", grid, 1).channel(0)
    products = []
    for lam in (1e2, 1e4, 1e6):
        spec = ProblemSpec(
            grid=grid,
            channels=(ChannelSpec(op=identity_op(grid), data=f, lam=lam, kind="l2"),),
            regularizer=Quadratic(1.0),
        )
        res = solve(spec, SolveConfig(max_iters=3000, tol=1e-12, diag_every=100))
        products.append(lam * channel_data_term(spec, res.u, 0))
    ok = products[0] >= products[1] >= products[2]
    record(
        6,
        ok,
        "exact-data channel, lam in {1e2,1e4,1e6}: lam*D = "
        + " -> ".join(f"{p:.3e}" for p in products)
        + " nonincreasing",
    )


def _two_channel_rate_experiment(kinds, rule):
    grid = Grid((32, 32))
    truth = phantom("smooth_bump", grid, 2)
    return RateExperiment(
        grid=grid,
        u_true=truth,
        channels=[RateChannel(op=identity_op(grid), kind=k) for k in kinds],
        rule=rule,
        deltas=geometric_deltas(),
        seeds=(0, 1, 2, 3, 4),
        regularizer=Quadratic(0.05),
        solve_cfg=SolveConfig(max_iters=4000, tol=1e-12, diag_every=10**6),
    )


def test_criterion_07_gaussian_rates():
    t0 = time.perf_counter()
    exp = _two_channel_rate_experiment(["l2", "l2"], RateRule(kind="two_norm", mu=(1.0, 2.0)))
    table = run_rate_experiment(exp)
    elapsed = time.perf_counter() - t0
    s1, s2 = table.data_slopes
    b = table.bregman_slope
    ok = s1 >= 1.8 and s2 >= 3.7 and 0.85 <= b <= 1.2 and elapsed < 300
    record(
        7,
        ok,
        f"gaussian rates: data slopes ch1 {s1:.2f} (>= 1.8), ch2 {s2:.2f} (>= 3.7), "
        f"bregman {b:.2f} (window [0.85, 1.2]), {elapsed:.0f}s",
    )
    # The Bregman window is expected to fail here and we leave it red on
    # purpose. With identity operators the minimizer is affine in the data,
    # so the reconstruction error is a sum of two terms that are each linear
    # in delta; the quadratic Bregman distance of such an error scales as
    # delta^2 and the fitted slope lands at ~2. The [0.85, 1.2] window
    # encodes a worst-case O(delta) guarantee that this benign setup beats.


def test_criterion_08_mixed_kl_rates():
    exp = _two_channel_rate_experiment(["l2", "kl"], RateRule(kind="mixed_nkl", mu=(1.0, 2.0)))
    table = run_rate_experiment(exp)
    kl_slope = table.data_slopes[1]
    premise = np.asarray(table.lambda_premise)
    premise_ok = bool(np.all(np.diff(premise, axis=0) < 0)) and bool(
        np.all(premise[-1] < premise[0])
    )
    record(
        8,
        kl_slope >= 1.7 and premise_ok,
        f"mixed KL rates: KL data slope {kl_slope:.2f} >= 1.7, "
        f"lambda*delta^p decreasing ({premise[0][1]:.3g} -> {premise[-1][1]:.3g})",
    )


def test_criterion_09_joint_benefit():
    grid = Grid((32, 32))
    truth = phantom("shared_edges_disc", grid, 2)
    op_radon = radon_op(grid, np.arange(12) * np.pi / 12, default_n_bins(grid))
    reg = TGV2(2.0, 1.0, "nuclear")
    cfg = SolveConfig(max_iters=3000, tol=1e-12, diag_every=10**9)

    def rmse(u: MultiImage, ch_out: int, ch_true: int) -> float:
        diff = u.channel(ch_out) - truth.channel(ch_true)
        return float(np.sqrt(np.mean(diff**2)))

    wins, details = 0, []
    for seed in (0, 1, 2):
        op_fourier = masked_fourier_op(
            grid, random_fourier_mask(grid.dims, 0.25, 100 + seed, center_bias=0.0)
        )
        f_fourier = op_fourier.apply(truth.channel(0))
        f_radon = op_radon.apply(truth.channel(1))
        data_f = add_gaussian_noise(
            f_fourier, 0.05 * float(np.linalg.norm(f_fourier)), seed * 10 + 1
        ).data
        data_r = np.maximum(add_poisson_noise(f_radon, 150.0, seed * 10 + 2).data, 0.0)
        ch_f = ChannelSpec(op=op_fourier, data=data_f, lam=50.0, kind="l2")
        ch_r = ChannelSpec(op=op_radon, data=data_r, lam=20.0, kind="kl")

        joint = solve(ProblemSpec(grid=grid, channels=(ch_f, ch_r), regularizer=reg), cfg)
        solo_f = solve(ProblemSpec(grid=grid, channels=(ch_f,), regularizer=reg), cfg)
        solo_r = solve(ProblemSpec(grid=grid, channels=(ch_r,), regularizer=reg), cfg)

        jf, jr = rmse(joint.u, 0, 0), rmse(joint.u, 1, 1)
        sf, sr = rmse(solo_f.u, 0, 0), rmse(solo_r.u, 0, 1)
        wins += int(jf < sf and jr < sr)
        details.append(f"seed {seed}: ({jf:.3f},{jr:.3f}) vs ({sf:.3f},{sr:.3f})")
    record(
        9,
        wins == 3,
        "joint coupling beats single-channel RMSE on all 3 seeds; " + "; ".join(details),
    )


def test_criterion_10_determinism(tmp_path, capsys):
    cfg = tmp_path / "rates.cfg"
    cfg.write_text(
        "schema = 1\n"
        "grid.dims = 12 12\n"
        "channels = 1\n"
        "channel.1.kind = l2\n"
        "rates.rule = two_norm\n"
        "rates.mu = 1.0\n"
        "rates.levels = 5\n"
        "rates.seeds = 2\n"
        "regularizer.kind = quadratic\n"
        "regularizer.weight = 0.05\n"
        "solver.max_iters = 1500\n"
        "solver.tol = 1e-11\n"
    )
    a, b = tmp_path / "a", tmp_path / "b"
    code_a = cli_main(["rates", str(cfg), "--seed", "7", "--out-dir", str(a)])
    code_b = cli_main(["rates", str(cfg), "--seed", "7", "--out-dir", str(b)])
    capsys.readouterr()
    same = (a / "rates.csv").read_bytes() == (b / "rates.csv").read_bytes()
    record(
        10,
        code_a == 0 and code_b == 0 and same,
        "repeated rates run with fixed seed: CSVs byte-identical",
    )
