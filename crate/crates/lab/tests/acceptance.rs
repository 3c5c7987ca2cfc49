//! One PASS/FAIL line per acceptance criterion.
//!
//! The retraining pipeline check runs its first stage at full desk scale and
//! projects the cost of the rest from measured timings; it only goes on when
//! the projection fits the budget or `VFORM_ACCEPTANCE_FULL=1` is set.
//! Failures are reported, not fatal, unless `VFORM_ACCEPTANCE_STRICT=1`.

use std::f64::consts::SQRT_2;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use num_bigint::{BigInt, BigUint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tempfile::tempdir;

use vform::cegkr::{
    evaluate_controller, evaluate_on, guided_sample_count, harvest_retraining_states, teacher_data, Evaluation,
};
use vform::cost::{global_cost, make_v_formation, upwash_benefit_pair, velocity_matching};
use vform::flock::{neighborhood, sample_initial_state};
use vform::mpc::DampcController;
use vform::nn::{extract_samples, DncController, MlpModel};
use vform::scenario::{mean_velocity, run_scenario, scenario_by_name, scenario_circle8, AveragingController};
use vform::seed::{derive_seed, tag};
use vform::smc::sample_count;
use vform::{CostParameters, FlockState, Interval, Simulator, Trajectory, Vec2};
use vform_lab::commands::{run_batch, GenerateSummary, TrainSummary};
use vform_lab::{ExperimentConfig, Lab, Scale};

const FULL_ENV: &str = "VFORM_ACCEPTANCE_FULL";
const STRICT_ENV: &str = "VFORM_ACCEPTANCE_STRICT";
const PIPELINE_BUDGET_SECS: f64 = 2.0 * 3600.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

// --- 1: sample size --------------------------------------------------------

const PREC: u64 = 320;

/// `atanh(num/den)` scaled by `2^PREC`, for `0 ≤ num/den ≤ 1/3`.
fn atanh_fixed(num: &BigInt, den: &BigInt) -> BigInt {
    let one = BigInt::from(1u8) << PREC;
    let mut power = (&one * num) / den;
    let z2_num = num * num;
    let z2_den = den * den;
    let mut sum = BigInt::from(0u8);
    let mut k = 0u32;
    while power != BigInt::from(0u8) {
        sum += &power / BigInt::from(2 * k + 1);
        power = (power * &z2_num) / &z2_den;
        k += 1;
    }
    sum
}

fn ln2_fixed() -> BigInt {
    atanh_fixed(&BigInt::from(1u8), &BigInt::from(3u8)) * 2
}

fn ln_int_fixed(m: u64) -> BigInt {
    let k = 63 - m.leading_zeros() as u64;
    let base = BigInt::from(1u64) << k;
    let m = BigInt::from(m);
    ln2_fixed() * BigInt::from(k) + atanh_fixed(&(&m - &base), &(&m + &base)) * 2
}

fn decode(x: f64) -> (u64, i64) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    ((bits & ((1u64 << 52) - 1)) | (1u64 << 52), exp - 1075)
}

/// Exact `⌈4 ln(2/δ)/ε²⌉`; `None` when the value sits too close to an
/// integer for double precision to decide.
fn exact_count(epsilon: f64, delta: f64) -> Option<u64> {
    let (md, ed) = decode(delta);
    let (me, ee) = decode(epsilon);
    let ln = ln2_fixed() * BigInt::from(1 - ed) - ln_int_fixed(md);
    let shift = u64::try_from(-2 * ee).unwrap();
    let scaled: BigInt = ((ln * 4) << shift) / (BigInt::from(me) * BigInt::from(me));
    let value: BigUint = scaled.to_biguint()?;
    let whole = &value >> PREC;
    let frac = &value - (&whole << PREC);
    let margin = BigUint::from(1u8) << (PREC - 24);
    if frac < margin || frac > (BigUint::from(1u8) << PREC) - margin {
        return None;
    }
    Some(u64::try_from(whole).ok()? + 1)
}

fn sample_size() -> Verdict {
    let headline = sample_count(0.01, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut mismatched) = (0, 0);
    while checked < 1000 {
        let (eps, delta) = (rng.random_range(0.002..0.999), rng.random_range(1e-9..0.999));
        let Some(exact) = exact_count(eps, delta) else { continue };
        checked += 1;
        if sample_count(eps, delta).unwrap() != exact {
            mismatched += 1;
        }
    }
    verdict(
        headline == 396_140 && exact_count(0.01, 1e-4) == Some(396_140) && mismatched == 0,
        format!("N(0.01, 1e-4) = {headline}; {mismatched} of {checked} random (ε, δ) differ from the exact value"),
    )
}

// --- 2: cost ground truth ----------------------------------------------------

fn cost_ground_truth() -> Verdict {
    let p = CostParameters::default();
    let v = make_v_formation(7, &p, Vec2::Y, 1.0).unwrap();
    let c = global_cost(&v, &p);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut vm_max: f64 = 0.0;
    for _ in 0..100 {
        let mut s = sample_initial_state(7, Interval::new(0.0, 5.0), Interval::new(0.25, 0.75), &mut rng).unwrap();
        let shared = s.velocity(0);
        s = FlockState::new(s.positions().to_vec(), vec![shared; 7]).unwrap();
        vm_max = vm_max.max(velocity_matching(&s, &(0..7).collect::<Vec<_>>()).abs());
    }

    let edge = p.inner_band();
    let benefit = |h: f64, g: f64| {
        let s = FlockState::new(vec![Vec2::ZERO, Vec2::new(h, g)], vec![Vec2::Y; 2]).unwrap();
        upwash_benefit_pair(0, 1, &s, &p)
    };
    let jump = (0..100)
        .map(|i| 0.1 + 0.029 * i as f64)
        .map(|g| (benefit(edge - 1e-10, g) - benefit(edge + 1e-10, g)).abs().max(benefit(edge, g).abs()))
        .fold(0.0, f64::max);

    verdict(
        c.j <= 1e-3 && c.cv.abs() <= 1e-9 && c.vm == 0.0 && vm_max == 0.0 && jump <= 1e-9,
        format!("perfect V: J = {:.3e}, CV = {:.1e}, VM = {}; aligned VM max {vm_max}; band-edge jump {jump:.1e}", c.j, c.cv, c.vm),
    )
}

// --- 3: gradient ---------------------------------------------------------------

fn gradient() -> Verdict {
    let sizes = [vform::flock::LOCAL_VIEW_LEN, 12, 12, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = |rows, cols, rng: &mut ChaCha8Rng| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0));
    let x = batch(8, sizes[0], &mut rng);
    let y = batch(8, 2, &mut rng);
    let loss = |m: &MlpModel| {
        let out = m.forward_batch(x.view());
        (&out - &y).iter().map(|d| d * d).sum::<f64>() / out.len() as f64
    };
    let mut worst: f64 = 0.0;
    for draw in 0..100u64 {
        let mut m = MlpModel::glorot(&sizes, &mut ChaCha8Rng::seed_from_u64(100 + draw)).unwrap();
        for w in m.params_mut() {
            *w += rng.random_range(-0.1..0.1);
        }
        let (_, grads) = m.loss_and_gradient(x.view(), y.view());
        let k = rng.random_range(0..grads.len());
        let h = 1e-5;
        let (mut up, mut down) = (m.clone(), m.clone());
        up.params_mut()[k] += h;
        down.params_mut()[k] -= h;
        let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
        let scale = numeric.abs().max(grads[k].abs()).max(1e-6);
        worst = worst.max((numeric - grads[k]).abs() / scale);
    }
    verdict(worst <= 1e-5, format!("max relative error {worst:.2e} over 100 draws"))
}

// --- 4: circle of eight --------------------------------------------------------------

fn circle_of_eight() -> Verdict {
    let (a, b) = (3.0, 0.7);
    let s = scenario_circle8(a, b).unwrap();
    let members = neighborhood(&s, 2, 3).unwrap();
    let mean = mean_velocity(&s, &members);
    let mean_err = mean.x.abs().max((mean.y - (1.0 + SQRT_2) * b / 3.0).abs());

    let cost = CostParameters::default();
    let scenario = scenario_by_name("circle8", &cost).unwrap();
    let ctl = AveragingController { gain: 0.5, neighborhood: scenario.neighborhood };
    let sim = Simulator::new(Default::default(), cost).unclamped();
    let run = run_scenario(&scenario, &ctl, &sim, 200, 0).unwrap();
    let mut radial: f64 = 0.0;
    for st in run.trajectory.states.iter().chain([&run.trajectory.final_state]) {
        let r: Vec<f64> = st.positions().iter().map(|p| p.norm()).collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        radial = radial.max(r.iter().map(|x| (x - m).abs()).fold(0.0, f64::max));
    }
    verdict(
        mean_err <= 1e-12 && radial <= 1e-9 && run.failure_observed,
        format!(
            "mean-velocity error {mean_err:.1e}; radial deviation {radial:.1e} over 200 steps; min J {:.3} (φ = {})",
            run.min_cost, cost.phi
        ),
    )
}

// --- 5: disconnected V's ---------------------------------------------------------------------

fn disconnected_vs(cfg: &ExperimentConfig) -> Verdict {
    let cost = cfg.cost_params();
    let scenario = scenario_by_name("disconnected-vs", &cost).unwrap();
    let ctl = DampcController { cfg: cfg.dampc() };
    let run = run_scenario(&scenario, &ctl, &cfg.simulator(), 50, 5).unwrap();
    let max_accel = run.trajectory.actions.iter().map(|a| a.max_magnitude()).fold(0.0, f64::max);
    verdict(
        max_accel <= 1e-6 && run.failure_observed,
        format!("max |a| {max_accel:.1e} over 50 steps; min global J {:.4} (φ = {})", run.min_cost, cost.phi),
    )
}

// --- shared desk-scale pipeline ---------------------------------------------------------------

struct FirstStage {
    lab: Lab,
    generated: GenerateSummary,
    generate_secs: f64,
    trained: TrainSummary,
    train_secs: f64,
    model: MlpModel,
    round1: Evaluation,
    eval_secs: f64,
}

fn first_stage(out: &Path) -> FirstStage {
    let mut cfg = ExperimentConfig::preset(Scale::Desk);
    cfg.out = out.to_path_buf();
    let lab = Lab::new(cfg, false);
    let t = Instant::now();
    let generated = lab.cmd_generate(None).unwrap();
    let generate_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let trained = lab.cmd_train().unwrap();
    let train_secs = t.elapsed().as_secs_f64();
    let model = lab.load_model().unwrap();
    // Same seed as the retraining loop's first evaluation.
    let seed = derive_seed(derive_seed(lab.cfg.seed, &[tag::CEGKR]), &[tag::CEGKR, 0, tag::EVAL]);
    let t = Instant::now();
    let round1 = evaluate_controller(&model, &lab.cfg.cegkr(), seed).unwrap();
    let eval_secs = t.elapsed().as_secs_f64();
    println!(
        "    pipeline: {} of {} teacher runs kept in {generate_secs:.0}s; trained on {} samples in {train_secs:.0}s; \
         round-1 success {:.3} on {} states in {eval_secs:.0}s",
        generated.kept,
        generated.trajectories,
        trained.samples,
        round1.success_rate,
        lab.cfg.cegkr.test_batch
    );
    FirstStage {
        lab,
        generated,
        generate_secs,
        trained,
        train_secs,
        model,
        round1,
        eval_secs,
    }
}

/// Lower bound on the time to reach the round-2 evaluation: one teacher run
/// per harvested state, one retraining, one more evaluation.
fn projected_secs(fs: &FirstStage) -> f64 {
    let cfg = &fs.lab.cfg;
    let states = (fs.round1.failures.len() * cfg.cegkr.k) as f64;
    let per_teacher_run = fs.generate_secs / fs.generated.trajectories as f64;
    let keep = fs.generated.kept as f64 / fs.generated.trajectories as f64;
    let samples_after = fs.trained.samples as f64 + states * keep * (cfg.teacher.agents * cfg.teacher.steps) as f64;
    let retrain = fs.train_secs * samples_after / fs.trained.samples as f64;
    fs.generate_secs + fs.train_secs + fs.eval_secs + states * per_teacher_run + retrain + fs.eval_secs
}

struct Retrained {
    verdict: Verdict,
    model: Option<MlpModel>,
}

fn retraining_trend(fs: &FirstStage, started: Instant) -> Retrained {
    let projected = projected_secs(fs);
    if projected > PIPELINE_BUDGET_SECS && !env_flag(FULL_ENV) {
        return Retrained {
            verdict: verdict(
                false,
                format!(
                    "round-1 success {:.3} leaves {} counterexamples; reaching round 2 is projected at {:.1} h \
                     against a 2 h budget (set {FULL_ENV}=1 to run it anyway)",
                    fs.round1.success_rate,
                    fs.round1.failures.len(),
                    projected / 3600.0
                ),
            ),
            model: None,
        };
    }
    let summary = fs.lab.cmd_cegkr().unwrap();
    let r = &summary.reports;
    let elapsed = started.elapsed().as_secs_f64();
    let cfg = fs.lab.cfg.cegkr();
    let rise = r.get(1).map(|b| b.success_rate - r[0].success_rate);
    let stopped_by_rule = r.len() < cfg.max_rounds
        || r.last().zip(r.iter().rev().nth(1)).is_some_and(|(l, p)| l.success_rate <= p.success_rate + cfg.min_improvement);
    let rates: Vec<String> = r.iter().map(|x| format!("{:.3}", x.success_rate)).collect();
    Retrained {
        verdict: verdict(
            rise.is_some_and(|d| d >= 0.02) && stopped_by_rule && elapsed <= PIPELINE_BUDGET_SECS,
            format!(
                "success by round [{}]; round-2 rise {}; {} rounds; pipeline {:.1} h",
                rates.join(", "),
                rise.map_or("n/a".into(), |d| format!("{:+.1} pp", 100.0 * d)),
                r.len(),
                elapsed / 3600.0
            ),
        ),
        model: Some(fs.lab.load_cegkr_model().unwrap()),
    }
}

fn dnc(lab: &Lab, model: &MlpModel) -> DncController {
    DncController {
        model: model.clone(),
        cost: lab.cfg.cost_params(),
        dyn_params: lab.cfg.dyn_params(),
    }
}

fn scaled(lab: &Lab, n: usize) -> (usize, f64) {
    let s = n as f64 / 7.0;
    ((s * lab.cfg.teacher.steps as f64).round() as usize, s * lab.cfg.cost.phi)
}

fn controller_ordering(fs: &FirstStage, retrained: Option<&MlpModel>) -> Verdict {
    let Some(after) = retrained else {
        return verdict(false, "not measured: needs the retrained model, which the retraining check did not produce");
    };
    let lab = &fs.lab;
    let sim = lab.cfg.simulator();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [7, 10, 13] {
        let (steps, threshold) = scaled(lab, n);
        let initials = lab.shared_states(n, 100, lab.cfg.position_range(), lab.cfg.velocity_range(), 7).unwrap();
        let seed = derive_seed(lab.cfg.seed, &[tag::EVAL, n as u64]);
        let rate = |ctl: &dyn vform::Controller| evaluate_on(ctl, &sim, &initials, steps, threshold, seed).unwrap().success_rate;
        let before = rate(&dnc(lab, &fs.model));
        let after_rate = rate(&dnc(lab, after));
        let dampc = rate(&DampcController { cfg: lab.cfg.dampc() });
        pass &= after_rate > before && (n < 10 || after_rate > dampc);
        parts.push(format!("n={n}: before {before:.2} after {after_rate:.2} dampc {dampc:.2}"));
    }
    verdict(pass, parts.join("; "))
}

// --- 8: timing ---------------------------------------------------------------------------------

fn timing(fs: &FirstStage) -> Verdict {
    let lab = &fs.lab;
    let initials = lab.shared_states(7, 3, lab.cfg.position_range(), lab.cfg.velocity_range(), 8).unwrap();
    let phi = lab.cfg.cost.phi;
    let dnc_run = run_batch(dnc(lab, &fs.model), &initials, 10, phi, lab, 8, 7.0).unwrap();
    let dampc_run = run_batch(DampcController { cfg: lab.cfg.dampc() }, &initials, 10, phi, lab, 8, 7.0).unwrap();
    let ratio = dampc_run.median_step_seconds / dnc_run.median_step_seconds;
    verdict(
        ratio >= 50.0,
        format!(
            "median per-agent step: DNC {:.3} ms, DAMPC {:.1} ms ({ratio:.0}×)",
            dnc_run.median_step_seconds * 1e3,
            dampc_run.median_step_seconds * 1e3
        ),
    )
}

// --- 9: determinism ----------------------------------------------------------------------------

fn tree_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((name, Sha256::digest(std::fs::read(&path).unwrap()).to_vec()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    // Same output directory both times: the saved config records it.
    let dir = tempdir().unwrap();
    let run = || {
        let _ = std::fs::remove_dir_all(dir.path().join("run"));
        let mut cfg = ExperimentConfig::preset(Scale::Desk);
        cfg.out = dir.path().join("run");
        cfg.train.epochs = 5;
        let lab = Lab::new(cfg, false);
        lab.cmd_generate(Some(4)).unwrap();
        lab.cmd_train().unwrap();
        tree_digest(&dir.path().join("run"))
    };
    let (a, b) = (run(), run());
    let names = |d: &[(String, Vec<u8>)]| d.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    verdict(
        names(&a) == names(&b) && differing.is_empty() && !a.is_empty(),
        format!("{} output files of generate + train; differing: {:?}", a.len(), differing),
    )
}

// --- 10: bookkeeping ----------------------------------------------------------------------------

fn bookkeeping(fs: &FirstStage) -> Verdict {
    let lab = &fs.lab;
    let cc = lab.cfg.cegkr();
    let traj = Trajectory::load(&lab.teacher_dir().join("traj_00000.traj")).unwrap().0;
    let per_run = extract_samples(&traj, &cc.teacher.planner.cost).unwrap().len();
    let total_ok = fs.generated.samples == 350 * fs.generated.kept;

    let f = fs.round1.failures.len().min(2);
    let failures = &fs.round1.failures[..f];
    let states = harvest_retraining_states(failures, cc.k).unwrap();
    let guided = teacher_data(&states, &cc, 10).unwrap();
    let accounted = guided.samples.len() + 350 * guided.dropped.len();
    verdict(
        per_run == 350
            && total_ok
            && f > 0
            && states.len() == f * cc.k
            && accounted == f * cc.k * 350
            && guided_sample_count(f, cc.agents, cc.k) == f * cc.agents * cc.k,
        format!(
            "{per_run} samples per run; data set {} = 350 × {}; f = {f}, k = {}: {} states, {} samples + 350 × {} dropped teacher runs = {accounted}",
            fs.generated.samples,
            fs.generated.kept,
            cc.k,
            states.len(),
            guided.samples.len(),
            guided.dropped.len()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let cfg = ExperimentConfig::preset(Scale::Desk);
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id, name, v: Verdict| {
        println!("{} {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };

    record(1, "sample-size exactness", sample_size());
    record(2, "cost ground truth", cost_ground_truth());
    record(3, "gradient correctness", gradient());
    record(4, "circle of eight under averaging", circle_of_eight());
    record(5, "disconnected V's under distributed MPC", disconnected_vs(&cfg));

    let out = tempdir().unwrap();
    let pipeline_start = Instant::now();
    let fs = first_stage(out.path());
    let retrained = retraining_trend(&fs, pipeline_start);
    record(6, "retraining trend", retrained.verdict);
    record(7, "controller ordering", controller_ordering(&fs, retrained.model.as_ref()));
    record(8, "timing ratio", timing(&fs));
    record(9, "determinism", determinism());
    record(10, "bookkeeping identities", bookkeeping(&fs));

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {} of {} criteria pass{} ({:.0}s)",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) },
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() && env_flag(STRICT_ENV) {
        std::process::exit(1);
    }
}
