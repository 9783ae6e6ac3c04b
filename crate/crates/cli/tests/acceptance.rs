//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criteria run in dependency order (networks are
//! trained first) and are reported in numeric order.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bayes_actor::actor::{
    sample_stimulus_and_measurement, ActorParams, CostFamily, Dataset, ParamName, PriorRegime, Trial,
};
use bayes_actor::amortizer::{quantile, AmortizerNetwork};
use bayes_actor::inference::{diagnose, ks_test, log_joint, run_chains, InferencePriors, LogDensity, SamplerConfig};
use bayes_actor::oracle::{solve_optimal_action, OracleConfig};
use bayes_actor::rng::{derive_seed, rng_for};
use bayes_actor_cli::{run, Artifacts, Command, ExperimentSpec, Solver};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

const FAMILIES: [CostFamily; 3] =
    [CostFamily::Quadratic, CostFamily::QuadraticWithEffort, CostFamily::AsymmetricQuadratic];

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn timed(id: u8, name: &'static str, budget: f64, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    let seconds = start.elapsed().as_secs_f64();
    let within = seconds <= budget;
    let detail = if within { detail } else { format!("{detail}; runtime {seconds:.0}s exceeds {budget:.0}s") };
    let outcome = Outcome { id, name, pass: pass && within, detail, seconds };
    report(&outcome);
    outcome
}

fn report(o: &Outcome) {
    println!(
        "[{}] criterion {} ({}): {} ({:.0}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail,
        o.seconds
    );
    std::io::stdout().flush().ok();
}

fn json(a: &Artifacts, name: &str) -> serde_json::Value {
    serde_json::from_slice(a.get(name).unwrap_or_else(|| panic!("missing {name}"))).unwrap()
}

fn csv_rows(a: &Artifacts, name: &str) -> Vec<Vec<String>> {
    let text = std::str::from_utf8(a.get(name).unwrap()).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

/// Closed-form optimal actions written out independently of the library.
fn closed_form(p: &ActorParams, m: f64) -> f64 {
    let (v0, v) = (p.sigma0 * p.sigma0, p.sigma * p.sigma);
    let ln_mu_post = (v * p.mu0.ln() + v0 * m.ln()) / (v0 + v);
    let var_post = v0 * v / (v0 + v);
    let quadratic = (ln_mu_post + 0.5 * var_post - 1.5 * p.sigma_r * p.sigma_r).exp();
    quadratic * p.get(ParamName::Beta).unwrap_or(1.0)
}

fn criterion_1() -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for family in [CostFamily::Quadratic, CostFamily::QuadraticWithEffort] {
        let mut errors: Vec<f64> = (0..100u64)
            .map(|i| {
                let mut rng = rng_for(101, i);
                let p = PriorRegime::Training.sample(family, &mut rng);
                let (_, m) = sample_stimulus_and_measurement(&p, &mut rng);
                let cfg = OracleConfig { seed: derive_seed(7, i), ..OracleConfig::default() };
                let a = solve_optimal_action(&p, m, &cfg).expect("oracle converges");
                (a / closed_form(&p, m) - 1.0).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = quantile(&errors, 0.5);
        ok &= median < 1e-3;
        parts.push(format!("{family} median rel err {median:.2e}"));
    }
    (ok, format!("{} (< 1e-3, K = N = 1e4)", parts.join(", ")))
}

/// Trains one network per family through the `train` command.
fn criterion_2(work: &Path) -> (bool, String, Vec<PathBuf>) {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut paths = Vec::new();
    for (k, family) in FAMILIES.into_iter().enumerate() {
        let start = Instant::now();
        let spec = ExperimentSpec { family, seed: 20 + k as u64, eval_size: 1000, ..ExperimentSpec::default() };
        let artifacts = run(Command::Train, &spec).expect("training runs");
        let seconds = start.elapsed().as_secs_f64();
        let dir = work.join(format!("net_{family}"));
        artifacts.write(&dir).unwrap();
        paths.push(dir.join("network.json"));
        let rows = csv_rows(&artifacts, "training.csv");
        let last = rows.last().unwrap();
        let (steps, median, p90): (usize, f64, f64) =
            (last[0].parse().unwrap(), last[2].parse().unwrap(), last[3].parse().unwrap());
        let pass = median < 0.01 && p90 < 0.05 && steps <= 100_000 && seconds <= 900.0;
        ok &= pass;
        parts.push(format!("{family} median {median:.4} p90 {p90:.4} at {steps} steps in {seconds:.0}s"));
    }
    (ok, format!("{} (median < 0.01, p90 < 0.05, <= 1e5 steps, <= 900s each)", parts.join("; ")), paths)
}

fn random_data(p: &ActorParams, n: usize, rng: &mut ChaCha8Rng) -> (Dataset, Vec<f64>) {
    let mut ms = Vec::new();
    let trials = (0..n)
        .map(|_| {
            let (s, m) = sample_stimulus_and_measurement(p, rng);
            ms.push(m);
            let z: f64 = rng.sample(StandardNormal);
            Trial::new(
                s,
                closed_form(&ActorParams { cost: bayes_actor::actor::CostSpec::Quadratic, ..*p }, m)
                    * (p.sigma_r * z).exp(),
            )
            .unwrap()
        })
        .collect();
    (Dataset::new(trials), ms)
}

fn rel_norm_err(g: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = g.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            let (mut up, mut dn) = (x.to_vec(), x.to_vec());
            up[i] += h;
            dn[i] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Action gradients of the trained networks and `log_joint` gradients,
/// each at 100 random points, against central differences.
fn criterion_3(networks: &[AmortizerNetwork]) -> (bool, String) {
    let mut rng = rng_for(303, 0);
    let (mut worst_forward, mut worst_joint) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let net = &networks[i % networks.len()];
        let family = net.family();
        let p = PriorRegime::Training.sample(family, &mut rng);
        let (_, m) = sample_stimulus_and_measurement(&p, &mut rng);
        let (jac, dm) = net.gradients(&p, m).unwrap();
        let mut g = jac.clone();
        g.push(dm);
        let mut x = p.to_vec();
        x.push(m);
        let f = |x: &[f64]| {
            net.forward(&ActorParams::from_slice(family, &x[..x.len() - 1]).unwrap(), x[x.len() - 1]).unwrap()
        };
        worst_forward = worst_forward.max(rel_norm_err(&g, &central(f, &x)));

        let truth = PriorRegime::Inference.sample(family, &mut rng);
        let priors = InferencePriors::defaults(family);
        let (data, ms) = random_data(&truth, 20, &mut rng);
        let q: Vec<f64> = priors
            .entries
            .iter()
            .zip(truth.to_vec())
            .map(|((_, prior), v)| prior.unconstrain(v) + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let nq = q.len();
        let (_, grad) = log_joint(&q, &data, &priors, net, &ms).unwrap();
        let mut x = q.clone();
        x.extend(&ms);
        let f = |x: &[f64]| log_joint(&x[..nq], &data, &priors, net, &x[nq..]).unwrap().0;
        worst_joint = worst_joint.max(rel_norm_err(&grad, &central(f, &x)));
    }
    (
        worst_forward < 1e-4 && worst_joint < 1e-4,
        format!("max relative error: network action {worst_forward:.2e}, log_joint {worst_joint:.2e} (< 1e-4, 100 points each)"),
    )
}

fn posterior_params(a: &Artifacts) -> Vec<(String, f64, f64, f64)> {
    json(a, "posterior.json")["parameters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            (
                p["name"].as_str().unwrap().to_string(),
                p["mean"].as_f64().unwrap(),
                p["sd"].as_f64().unwrap(),
                p["rhat"].as_f64().unwrap(),
            )
        })
        .collect()
}

fn criterion_4(work: &Path, network: &Path) -> (bool, String) {
    let mut sim = ExperimentSpec { family: CostFamily::Quadratic, seed: 4, ..ExperimentSpec::default() };
    for (k, v) in [("mu0", 1.5), ("sigma0", 0.15), ("sigma", 0.2), ("sigma_r", 0.1)] {
        sim.truth.insert(k.into(), v);
    }
    let dir = work.join("fig3");
    run(Command::Simulate, &sim).unwrap().write(&dir).unwrap();
    let mut base = ExperimentSpec { data: Some(dir.join("data.csv")), ..sim };
    base.fix.insert("sigma".into(), 0.2);
    let analytical = run(Command::Infer, &ExperimentSpec { analytical: true, ..base.clone() }).unwrap();
    let nn = run(Command::Infer, &ExperimentSpec { network: Some(network.to_path_buf()), ..base }).unwrap();
    let (a, n) = (posterior_params(&analytical), posterior_params(&nn));
    let mut ok = true;
    let mut parts = Vec::new();
    for ((name, ma, sa, ra), (_, mn, sn, rn)) in a.iter().zip(&n) {
        let (dmean, dsd) = ((mn - ma).abs(), (sn / sa - 1.0).abs());
        ok &= dmean < 0.02 && dsd < 0.2 && *ra < 1.05 && *rn < 1.05;
        parts.push(format!("{name} mean {ma:.4}/{mn:.4} sd {sa:.4}/{sn:.4} rhat {ra:.3}/{rn:.3}"));
    }
    (ok, format!("analytical/NN: {} (|dmean| < 0.02, |dsd| < 20%, R-hat < 1.05)", parts.join("; ")))
}

/// Desk-scale sampler for the simulation studies.
fn study_sampler() -> SamplerConfig {
    SamplerConfig { n_warmup: 500, n_samples: 500, ..SamplerConfig::default() }
}

fn criterion_5(networks: &[PathBuf]) -> (bool, String) {
    let targets: [(&[(&str, f64)], &[&str]); 3] = [
        (&[("mu0", 0.10), ("sigma0", 3.77e-4), ("sigma_r", 6.13e-4)], &["sigma"]),
        (&[("mu0", 0.77)], &["sigma"]),
        (&[("alpha", 3.23e-2)], &["sigma"]),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for ((family, path), (target, fixed)) in FAMILIES.into_iter().zip(networks).zip(targets) {
        let spec = ExperimentSpec {
            family,
            seed: 50,
            replications: 20,
            network: Some(path.clone()),
            fixed: fixed.iter().map(|s| s.to_string()).collect(),
            solver: if family.has_closed_form() { Solver::ClosedForm } else { Solver::Oracle },
            sampler: study_sampler(),
            ..ExperimentSpec::default()
        };
        let artifacts = run(Command::Recover, &spec).unwrap();
        let rows = csv_rows(&artifacts, "recovery_mse.csv");
        let mut cells = Vec::new();
        for &(name, reference) in target {
            let row = rows.iter().find(|r| r[0] == name).unwrap();
            let mse: f64 = row[1].parse().unwrap();
            let ratio = mse / reference;
            ok &= (0.5..=2.0).contains(&ratio);
            cells.push(format!("{name} {mse:.3e} (reference {reference:.2e}, x{ratio:.2})"));
        }
        let excluded = &rows[1][3];
        parts.push(format!("{family}: {} [{excluded} excluded]", cells.join(", ")));
    }
    (ok, format!("{} (within 2x, 20 replications)", parts.join("; ")))
}

fn criterion_6() -> (bool, String) {
    let mut effort = ExperimentSpec {
        family: CostFamily::QuadraticWithEffort,
        seed: 60,
        replications: 20,
        analytical: true,
        fixed: vec!["sigma".into()],
        sampler: study_sampler(),
        ..ExperimentSpec::default()
    };
    for (k, v) in [("mu0", 2.95), ("sigma0", 0.19), ("sigma", 0.14), ("sigma_r", 0.23), ("beta", 0.72)] {
        effort.truth.insert(k.into(), v);
    }
    let quadratic = ExperimentSpec {
        family: CostFamily::Quadratic,
        truth: Default::default(),
        fixed: Vec::new(),
        seed: 61,
        ..effort.clone()
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in [effort, quadratic] {
        let s = json(&run(Command::Identifiability, &spec).unwrap(), "identifiability.json");
        let f = |k: &str| s[k].as_f64().unwrap();
        let (corr, ab, ba, used) = (
            f("mean_abs_corr"),
            f("improved_a_by_fixing_b"),
            f("improved_b_by_fixing_a"),
            s["n_used"].as_u64().unwrap(),
        );
        ok &= corr > 0.5 && ab >= 0.8 && ba >= 0.8 && used >= 20;
        parts.push(format!(
            "({}, {}) |corr| {corr:.3}, fixing improves {ab:.2} / {ba:.2} of {used}",
            s["pair"][0].as_str().unwrap(),
            s["pair"][1].as_str().unwrap()
        ));
    }
    (ok, format!("{} (|corr| > 0.5, >= 0.8 of >= 20)", parts.join("; ")))
}

/// Independent Gaussian target.
struct Gaussian {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..q.len() {
            let z = (q[i] - self.mean[i]) / self.sd[i];
            lp -= 0.5 * z * z;
            grad[i] = -z / self.sd[i];
        }
        lp
    }

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }
}

/// Checks moments within 3 MCSE and a KS test on thinned draws.
fn check_target(target: &Gaussian, seed: u64) -> (bool, String) {
    let cfg = SamplerConfig { n_warmup: 1000, n_samples: 5000, seed, ..SamplerConfig::default() };
    let chains = run_chains(target, &cfg).unwrap();
    let d = target.dim();
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut ks_min = 1.0f64;
    for i in 0..d {
        let coord: Vec<Vec<f64>> =
            chains.iter().map(|c| c.draws.iter().skip(i).step_by(d).copied().collect()).collect();
        let sq: Vec<Vec<f64>> =
            coord.iter().map(|c| c.iter().map(|x| (x - target.mean[i]).powi(2)).collect()).collect();
        for (values, truth) in [(&coord, target.mean[i]), (&sq, target.sd[i].powi(2))] {
            let pooled: Vec<f64> = values.iter().flatten().copied().collect();
            let n = pooled.len() as f64;
            let mean = pooled.iter().sum::<f64>() / n;
            let sd = (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let mcse = sd / diagnose(values).unwrap().ess_mean.sqrt();
            let z = (mean - truth).abs() / mcse;
            worst = worst.max(z);
            ok &= z < 3.0;
        }
        let diag = diagnose(&coord).unwrap();
        let pooled: Vec<f64> = coord.iter().flatten().copied().collect();
        let thin = (pooled.len() as f64 / diag.ess_bulk.min(pooled.len() as f64)).ceil() as usize;
        let thinned: Vec<f64> = pooled.iter().step_by(thin.max(1)).copied().collect();
        let normal = Normal::new(target.mean[i], target.sd[i]).unwrap();
        let (_, p) = ks_test(&thinned, |x| normal.cdf(x));
        ks_min = ks_min.min(p);
        ok &= p > 0.01;
    }
    (ok, format!("max |error|/MCSE {worst:.2}, min KS p {ks_min:.3}"))
}

fn criterion_7() -> (bool, String) {
    let standard = Gaussian { mean: vec![0.0; 4], sd: vec![1.0; 4] };
    // y_i ~ N(theta, 1), theta ~ N(0, 2^2): posterior precision 1/4 + n
    let mut rng = rng_for(707, 0);
    let ys: Vec<f64> = (0..20).map(|_| 1.3 + rng.sample::<f64, _>(StandardNormal)).collect();
    let precision = 0.25 + ys.len() as f64;
    let conjugate = Gaussian { mean: vec![ys.iter().sum::<f64>() / precision], sd: vec![precision.powf(-0.5)] };
    let (a, da) = check_target(&standard, 71);
    let (b, db) = check_target(&conjugate, 72);
    (a && b, format!("standard normal (d = 4): {da}; conjugate Gaussian: {db} (< 3, > 0.01)"))
}

fn same(a: &Artifacts, b: &Artifacts) -> bool {
    let names: Vec<&str> = a.names().collect();
    names == b.names().collect::<Vec<_>>() && names.iter().all(|n| a.get(n) == b.get(n))
}

fn criterion_8(work: &Path, network: &Path) -> (bool, String) {
    let sampler = SamplerConfig { n_chains: 4, n_warmup: 200, n_samples: 200, ..SamplerConfig::default() };
    let base =
        ExperimentSpec { seed: 8, n_trials: 40, replications: 3, eval_size: 30, sampler, ..ExperimentSpec::default() };
    let data_dir = work.join("determinism");
    run(Command::Simulate, &base).unwrap().write(&data_dir).unwrap();
    let mut train = ExperimentSpec { family: CostFamily::AsymmetricQuadratic, ..base.clone() };
    train.training.total_steps = 50;
    train.training.batch_size = 16;
    train.training.mc_samples = 16;
    train.training.eval_every = 25;
    let with_net = ExperimentSpec { network: Some(network.to_path_buf()), ..base.clone() };
    let cases = [
        ("simulate", Command::Simulate, base.clone()),
        ("train", Command::Train, train),
        ("evaluate", Command::Evaluate, with_net.clone()),
        ("infer", Command::Infer, ExperimentSpec { data: Some(data_dir.join("data.csv")), ..with_net.clone() }),
        ("recover", Command::Recover, ExperimentSpec { fixed: vec!["sigma".into()], ..with_net.clone() }),
        ("identifiability", Command::Identifiability, with_net),
    ];
    let mut failed = Vec::new();
    for (name, command, spec) in cases {
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let a = pool(1).install(|| run(command, &spec).unwrap());
        let b = pool(4).install(|| run(command, &spec).unwrap());
        let (d1, d2) = (work.join(format!("{name}_a")), work.join(format!("{name}_b")));
        a.write(&d1).unwrap();
        b.write(&d2).unwrap();
        let files = |d: &Path| {
            let mut v: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(d)
                .unwrap()
                .map(|e| e.unwrap().path())
                .map(|p| (p.file_name().unwrap().into(), std::fs::read(&p).unwrap()))
                .collect();
            v.sort();
            v
        };
        if !same(&a, &b) || files(&d1) != files(&d2) {
            failed.push(name);
        }
    }
    (
        failed.is_empty(),
        if failed.is_empty() {
            "all six subcommands byte-identical with 1 and 4 threads, outputs and provenance".into()
        } else {
            format!("differs: {}", failed.join(", "))
        },
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let work = work.path();
    println!("acceptance suite, work dir {}", work.display());
    let mut outcomes = vec![timed(1, "closed form vs oracle", 300.0, criterion_1)];

    let mut paths = Vec::new();
    outcomes.push(timed(2, "amortization fidelity", 2700.0, || {
        let (ok, detail, p) = criterion_2(work);
        paths = p;
        (ok, detail)
    }));
    let networks: Vec<AmortizerNetwork> = paths.iter().map(|p| AmortizerNetwork::load(p).unwrap()).collect();
    outcomes.push(timed(3, "gradient exactness", 60.0, || criterion_3(&networks)));
    outcomes.push(timed(4, "posterior-pipeline equivalence", 120.0, || criterion_4(work, &paths[0])));
    outcomes.push(timed(5, "recovery MSE", 1800.0, || criterion_5(&paths)));
    outcomes.push(timed(6, "identifiability signature", 1800.0, criterion_6));
    outcomes.push(timed(7, "sampler correctness", 60.0, criterion_7));
    outcomes.push(timed(8, "determinism", 600.0, || criterion_8(work, &paths[0])));

    outcomes.sort_by_key(|o| o.id);
    println!("\nsummary");
    for o in &outcomes {
        report(o);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
