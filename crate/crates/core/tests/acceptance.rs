//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr, so it shows up even under output capture, and
//! fails when its check fails.

use std::io::Write;
use std::time::Instant;

use hjq::critic::{ActionValue, MlpCritic};
use hjq::dynamics::{make_random_lq, LinearQuadratic};
use hjq::expcli::{
    ablation_variants, run_curves, run_experiment, AblationKind, Benchmark, ExperimentConfig, ExperimentResult,
};
use hjq::grid::{consistency_sweep, run_q_learning, value_iterate, BellmanOperator, GridQ, Lq1d, QSyncSchedule};
use hjq::hjdqn::target_gap_slope;
use hjq::lq_oracle::{care_residual, evaluate_policy_cost, optimal_cost, solve_care};
use hjq::numerics::{Matrix, Rng};

fn report(id: &str, pass: bool, detail: String, start: Instant) -> bool {
    let line = format!(
        "criterion {id}: {} ({detail}; {:.1} s)\n",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn random_grid(template: &GridQ<f64>, rng: &mut Rng) -> GridQ<f64> {
    template.from_fn(|_, _| rng.uniform(-5.0, 5.0))
}

#[test]
fn criterion_1_contraction_and_monotonicity() {
    let start = Instant::now();
    let bench = Lq1d::<f64>::default();
    let sys = bench.system();
    let g = bench.grid(41);
    let op = BellmanOperator::new(&g, &sys, 1.0, 0.1, 1.0, 16).unwrap();
    let mut rng = Rng::new(2024);
    let (mut contraction, mut monotone) = (0, 0);
    let mut worst_ratio = 0.0f64;
    for _ in 0..100 {
        let q1 = random_grid(&g, &mut rng);
        let q2 = random_grid(&g, &mut rng);
        let (t1, t2) = (op.apply(&q1).unwrap(), op.apply(&q2).unwrap());
        let (lhs, rhs) = (t1.sup_distance(&t2), q1.sup_distance(&q2));
        worst_ratio = worst_ratio.max(lhs / rhs);
        if lhs > 0.9 * rhs {
            contraction += 1;
        }

        let upper: Vec<f64> = q1.values().iter().map(|v| v + rng.uniform(0.0, 1.0)).collect();
        let t_hi = op.apply(&q1.with_values(upper).unwrap()).unwrap();
        if t1.values().iter().zip(t_hi.values()).any(|(lo, hi)| lo > hi) {
            monotone += 1;
        }
    }
    let pass = contraction == 0 && monotone == 0 && start.elapsed().as_secs_f64() < 10.0;
    let detail = format!(
        "{contraction} contraction and {monotone} monotonicity violations, worst ratio {worst_ratio:.4} vs 0.9"
    );
    assert!(report("1", pass, detail, start));
}

#[test]
fn criterion_2_geometric_decay() {
    let start = Instant::now();
    let bench = Lq1d::<f64>::default();
    let sys = bench.system();
    let g = bench.grid(41);
    let op = BellmanOperator::new(&g, &sys, 1.0, 0.1, 1.0, 16).unwrap();
    let fixed = value_iterate(&g, &op, 1e-10, 100_000).unwrap().q;

    let (_, rows) = run_q_learning(&g, &op, &QSyncSchedule::Constant(1.0), 200, &fixed).unwrap();
    let delta0 = g.sup_distance(&fixed);
    let mut violations = 0;
    let mut factor = 1.0;
    for r in &rows {
        factor *= 0.9;
        if r.sup_error_to_fixed_point > factor * delta0 {
            violations += 1;
        }
    }
    let pass_a = violations == 0;
    report("2a", pass_a, format!("{violations} of 200 steps above (1 − γh)^k‖Δ₀‖"), start);

    let (_, rows) = run_q_learning(&g, &op, &QSyncSchedule::Harmonic, 100_000, &fixed).unwrap();
    let hit = rows.iter().find(|r| r.sup_error_to_fixed_point <= 1e-3).map(|r| r.iter);
    let last = rows.last().unwrap().sup_error_to_fixed_point;
    let pass_b = hit.is_some() && start.elapsed().as_secs_f64() < 120.0;
    let detail = match hit {
        Some(k) => format!("‖Δ_k‖ ≤ 1e-3 first at k = {k}"),
        None => format!("‖Δ_k‖ = {last:.3e} after 10⁵ harmonic steps, ‖Δ₀‖ = {delta0:.3}"),
    };
    report("2b", pass_b, detail, start);
    assert!(pass_a && pass_b);
}

#[test]
fn criterion_3_consistency_in_h() {
    let start = Instant::now();
    let bench = Lq1d::<f64>::default();
    let sys = bench.system();
    let g = bench.grid(81);
    let probes: Vec<(Vec<f64>, Vec<f64>)> = (0..=10)
        .flat_map(|i| (0..=10).map(move |j| (vec![-0.8 + 0.16 * i as f64], vec![-0.8 + 0.16 * j as f64])))
        .collect();
    let rows = consistency_sweep(&sys, 1.0, 1.0, &[0.2, 0.1, 0.05, 0.025], &g, &probes, 1e-10, 100_000).unwrap();
    let d: Vec<f64> = rows.iter().take(3).map(|r| r.sup_diff).collect();
    let monotone = d[1] <= 1.1 * d[0] && d[2] <= 1.1 * d[1];
    let shrink = d[0] / d[1];
    let pass = monotone && shrink >= 1.5 && start.elapsed().as_secs_f64() < 300.0;
    let detail = format!(
        "sup diffs {:.4e}, {:.4e}, {:.4e} for h = 0.2, 0.1, 0.05; shrink {shrink:.3}",
        d[0], d[1], d[2]
    );
    assert!(report("3", pass, detail, start));
}

/// `Q(x, a) = −(a − Wx)ᵀ M (a − Wx)` with an anisotropic `M`.
struct Quadratic {
    m: [[f64; 2]; 2],
    w: [[f64; 2]; 2],
}

impl Quadratic {
    fn offset(&self, x: &[f64], a: &[f64]) -> [f64; 2] {
        [
            a[0] - self.w[0][0] * x[0] - self.w[0][1] * x[1],
            a[1] - self.w[1][0] * x[0] - self.w[1][1] * x[1],
        ]
    }
}

impl ActionValue<f64> for Quadratic {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64], a: &[f64]) -> f64 {
        let d = self.offset(x, a);
        let m = &self.m;
        -(d[0] * (m[0][0] * d[0] + m[0][1] * d[1]) + d[1] * (m[1][0] * d[0] + m[1][1] * d[1]))
    }
    fn action_gradient(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let d = self.offset(x, a);
        let m = &self.m;
        vec![
            -2.0 * (m[0][0] * d[0] + m[0][1] * d[1]),
            -2.0 * (m[1][0] * d[0] + m[1][1] * d[1]),
        ]
    }
}

#[test]
fn criterion_4_target_gap_order() {
    let start = Instant::now();
    let q = Quadratic {
        m: [[4.0, 1.0], [1.0, 0.5]],
        w: [[0.3, -0.2], [0.1, 0.4]],
    };
    let x = [0.5, -0.4];
    let a = [0.7, -0.3];
    let gap = target_gap_slope(&q, &x, &x, &a, 1.0, &[0.1, 0.05, 0.025, 0.0125]).unwrap();
    let slope = gap.slope.unwrap_or(f64::NAN);
    let pass = slope >= 1.8 && start.elapsed().as_secs_f64() < 30.0;
    let detail = format!("slope {slope:.4}, gaps {:?}", gap.gap);
    assert!(report("4", pass, detail, start));
}

const FD_STEP: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-3;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn near_kink(c: &MlpCritic<f64>, x: &[f64], a: &[f64]) -> bool {
    let pre = c.pre_activations(x, a).unwrap();
    pre[..pre.len() - 1].iter().flatten().any(|z| z.abs() < KINK_MARGIN)
}

#[test]
fn criterion_5_gradient_fidelity() {
    let start = Instant::now();
    let mut rng = Rng::new(55);
    let (mut worst_action, mut worst_param) = (0.0f64, 0.0f64);
    let (mut critics, mut skipped) = (0, 0);
    while critics < 20 {
        let (n, m) = (1 + rng.index(3), 1 + rng.index(3));
        let hidden = [4 + rng.index(12), 4 + rng.index(12)];
        let c = MlpCritic::<f64>::new(n, m, &hidden, &mut rng);
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        if near_kink(&c, &x, &a) {
            skipped += 1;
            continue;
        }
        critics += 1;

        let g = c.grad_action(&x, &a).unwrap();
        for i in 0..m {
            let (mut up, mut down) = (a.clone(), a.clone());
            up[i] += FD_STEP;
            down[i] -= FD_STEP;
            let fd = (c.forward(&x, &up).unwrap() - c.forward(&x, &down).unwrap()) / (2.0 * FD_STEP);
            worst_action = worst_action.max(relative_error(g[i], fd));
        }

        let y = rng.uniform(-1.0, 1.0);
        let sample = [(x.clone(), a.clone(), y)];
        let (_, grads) = c.grad_params(&sample).unwrap();
        for (k, &analytic) in grads.iter().enumerate() {
            let loss_at = |delta: f64| {
                let mut p = c.clone();
                p.params_mut()[k] += delta;
                p.grad_params(&sample).unwrap().0
            };
            let fd = (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP);
            worst_param = worst_param.max(relative_error(analytic, fd));
        }
    }
    let pass = worst_action <= 1e-4 && worst_param <= 1e-4 && start.elapsed().as_secs_f64() < 30.0;
    let detail = format!(
        "{critics} critics ({skipped} kink-adjacent draws skipped), worst relative error {worst_action:.2e} (action), {worst_param:.2e} (params)"
    );
    assert!(report("5", pass, detail, start));
}

#[test]
fn criterion_6_riccati_oracle() {
    let start = Instant::now();
    let scalar = LinearQuadratic::new(
        Matrix::from_diag(&[0.0]),
        Matrix::from_diag(&[1.0]),
        Matrix::identity(1),
        Matrix::identity(1),
        0.1,
    )
    .unwrap();
    let p = solve_care(&scalar).unwrap().p[(0, 0)];
    let want = (-0.1 + 4.01f64.sqrt()) / 2.0;
    let scalar_err = (p - want).abs();

    let mut rng = Rng::new(6);
    let mut worst_residual = 0.0f64;
    for _ in 0..20 {
        let sys = make_random_lq(4, 0.1, &mut rng).unwrap();
        let sol = solve_care(&sys).unwrap();
        worst_residual = worst_residual.max(care_residual(&sys, &sol.p).unwrap());
    }

    let sys = make_random_lq(2, 0.1, &mut Rng::new(0)).unwrap();
    let sol = solve_care(&sys).unwrap();
    let mut worst_ratio = 0.0f64;
    let mut states = Rng::new(60);
    for _ in 0..5 {
        let x0 = vec![states.uniform(-1.0, 1.0), states.uniform(-1.0, 1.0)];
        let a0 = sol.feedback(&x0);
        let cost = evaluate_policy_cost(&sys, |x: &[f64], _: &[f64]| sol.feedback(x), &x0, &a0, 0.001, 100.0).unwrap();
        worst_ratio = worst_ratio.max(cost / optimal_cost(&sol, &x0));
    }

    let pass = scalar_err <= 1e-8
        && worst_residual <= 1e-8
        && (0.95..=1.05).contains(&worst_ratio)
        && start.elapsed().as_secs_f64() < 120.0;
    let detail = format!(
        "scalar error {scalar_err:.2e}, worst 4×4 residual {worst_residual:.2e}, worst feedback cost ratio {worst_ratio:.5}"
    );
    assert!(report("6", pass, detail, start));
}

/// Width of the two hidden layers in the learning runs.
const LQ_HIDDEN: usize = 64;

fn lq_config(output: &std::path::Path) -> ExperimentConfig {
    let cfg = ExperimentConfig {
        benchmark: Benchmark::Lq,
        dim: 2,
        h: 0.05,
        lipschitz: 10.0,
        step_discount: 0.99999,
        buffer_capacity: 20_000,
        batch_size: 512,
        total_steps: 50_000,
        seeds: (0..5).collect(),
        hidden: vec![LQ_HIDDEN; 2],
        record_wallclock: false,
        output: output.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.validate().unwrap();
    cfg
}

fn variant(base: &ExperimentConfig, kind: AblationKind, values: &[f64], keep: impl Fn(&ExperimentConfig) -> bool) -> ExperimentConfig {
    ablation_variants(base, kind, values)
        .unwrap()
        .into_iter()
        .map(|v| v.config)
        .find(|c| keep(c) && c != base)
        .expect("ablation variant")
}

fn finals(res: &ExperimentResult) -> String {
    let v: Vec<String> = res.summary.final_values.iter().map(|f| format!("{f:.3}")).collect();
    v.join(", ")
}

#[test]
fn criteria_7_8_9_lq_learning() {
    let dir = tempfile::tempdir().unwrap();
    let base = lq_config(&dir.path().join("base"));

    let start = Instant::now();
    let res = run_experiment(&base).unwrap();
    let s = &res.summary;
    let diverged = res.curves.iter().filter(|c| c.error.is_some()).count();
    let improvement = s.median_initial - s.median_final;
    let pass7 = diverged == 0
        && s.median_final <= 0.3
        && improvement >= 0.7
        && start.elapsed().as_secs_f64() < 1800.0;
    let detail = format!(
        "median final {:.3} (seeds {}), median initial {:.3}, improvement {improvement:.3}, {diverged} failed seeds",
        s.median_final,
        finals(&res),
        s.median_initial
    );
    report("7", pass7, detail, start);

    let start = Instant::now();
    let single = run_curves(&variant(&base, AblationKind::DoubleQ, &[], |c| !c.double_q)).unwrap();
    let low_l = run_curves(&variant(&base, AblationKind::Lipschitz, &[1.0], |c| c.lipschitz == 1.0)).unwrap();
    let (dq, sq) = (s.median_final, single.summary.median_final);
    let (l10, l1) = (s.median_final, low_l.summary.median_final);
    let pass8 = dq <= sq + 0.1 && l1 > l10 && start.elapsed().as_secs_f64() < 3600.0;
    let detail = format!(
        "double-Q {dq:.3} vs single-Q {sq:.3} (seeds {}); L = 1 {l1:.3} (seeds {}) vs L = 10 {l10:.3}",
        finals(&single),
        finals(&low_l)
    );
    report("8", pass8, detail, start);

    let start = Instant::now();
    let repeat = ExperimentConfig {
        output: dir.path().join("repeat"),
        ..base.clone()
    };
    run_experiment(&repeat).unwrap();
    let mismatched: Vec<u64> = base
        .seeds
        .iter()
        .copied()
        .filter(|k| {
            let name = format!("curve_seed{k}.csv");
            std::fs::read(base.output.join(&name)).unwrap() != std::fs::read(repeat.output.join(&name)).unwrap()
        })
        .collect();
    let pass9 = mismatched.is_empty();
    report("9", pass9, format!("{} seeds compared, mismatched {mismatched:?}", base.seeds.len()), start);

    assert!(pass7 && pass8 && pass9);
}
