//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! The training criterion needs the desk forced-turbulence dataset and a
//! trained model. Both are cached under `target/acceptance`, keyed by a hash
//! of their configuration, so only the first run pays for them (hours on
//! one core). Interrupted training resumes from its checkpoint.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmn_core::autodiff::{check_primitives, grad_check, Eager};
use tmn_core::datagen::{chunk, generate_dataset, random_initial_condition, CaseKind, Dataset, DatasetConfig, Split};
use tmn_core::grid::{divergence, face_to_center};
use tmn_core::metrics::{energy_spectrum, evaluate, spectral_error, EvalConfig, EvalReport};
use tmn_core::neural::{footprint, stencil_cnn_param_count, Activation, Network};
use tmn_core::solver::{PhysicsConfig, Solver};
use tmn_core::tmn::{load_bundle, rollout, rollout_with, CnnLc, Model, TmnConfig, TmnModel, UpdaterVariant};
use tmn_core::training::{
    coarse_solver, train_curriculum, trajectory_loss, LossConfig, TrainConfig, TrainOptions, BEST_DIR,
};
use tmn_core::{Grid, StaggeredField, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn cache_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance")
}

fn hash_of(value: &impl serde::Serialize) -> String {
    let json = serde_json::to_string(value).expect("serializable");
    format!("{:08x}", crc32fast::hash(json.as_bytes()))
}

fn periodic(n: usize) -> Grid {
    Grid::square(n, 2.0 * PI).unwrap()
}

fn white_noise(g: Grid, seed: u64) -> StaggeredField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StaggeredField::new(g, Tensor::from_fn(2, g.ny, g.nx, |_, _, _| rng.random_range(-1.0..1.0))).unwrap()
}

fn div_ok(u: &StaggeredField) -> (bool, f64) {
    let d = divergence(u).max_abs();
    let tol = 1e-10 * u.max_abs().max(1.0);
    (d <= tol, d / u.max_abs().max(1.0))
}

fn stencil_param_counts() -> Result<Outcome> {
    let a = stencil_cnn_param_count(1, 64);
    let b = stencil_cnn_param_count(6, 64);
    // The built networks agree with the closed form.
    let built = |n| CnnLc::init(n, 64, Activation::Relu, 0).map(|m| Model::CnnLc(m).param_count());
    let (ba, bb) = (built(1)?, built(6)?);
    outcome(
        a == 5506 && b == 190_146 && ba == a && bb == b,
        format!("N=1: {ba}, N=6: {bb}"),
    )
}

fn receptive_fields() -> Result<Outcome> {
    let n = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = Tensor::from_fn(2, n, n, |_, _, _| rng.random_range(-1.0..1.0));
    let mut widths = Vec::new();
    let mut pass = true;
    for layers in 1..=7 {
        let m = CnnLc::init(layers, 64, Activation::Relu, layers as u64)?;
        let f = |t: &Tensor| m.network.arch.forward(&mut Eager, m.network.params.tensors(), t);
        let fp = footprint(f, &u, (0, 12, 12), 1e-3)?.context("no dependence")?;
        pass &= fp.width() == 2 * layers + 1 && fp.height() == 2 * layers + 1 && fp.x.0 == -fp.x.1 && fp.y.0 == -fp.y.1;
        widths.push(fp.width());
    }
    let tmn = TmnModel::init(TmnConfig::default(), 2)?;
    let p: Vec<Tensor> = Model::Tmn(tmn.clone()).params().into_iter().cloned().collect();
    let u = random_initial_condition(&periodic(n), 3, 7.0, 4.0)?;
    let enc = |t: &Tensor| tmn.encode(&mut Eager, &p, t);
    let fp = footprint(enc, u.tensor(), (1, 12, 12), 1e-3)?.context("no dependence")?;
    pass &= fp.width() == 15 && fp.height() == 15;
    outcome(
        pass,
        format!("stencil widths {widths:?}, encoder {}x{}", fp.width(), fp.height()),
    )
}

fn taylor_green(g: Grid, s: f64) -> StaggeredField {
    StaggeredField::from_fns(g, |x, y| s * x.cos() * y.sin(), |x, y| -s * x.sin() * y.cos())
}

fn rel_l2(a: &StaggeredField, exact: &StaggeredField) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.tensor().data().iter().zip(exact.tensor().data()) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    (num / den).sqrt()
}

/// Largest relative L2 error against the analytic vortex over `[0, t_end]`.
fn taylor_green_error(n: usize, nu: f64, dt: f64, t_end: f64) -> Result<f64> {
    let g = periodic(n);
    let solver = Solver::new(g, PhysicsConfig::decaying(nu, dt))?;
    let steps = (t_end / dt).round() as usize;
    let traj = solver.rollout(&taylor_green(g, 1.0), steps)?;
    Ok(traj
        .iter()
        .enumerate()
        .map(|(k, u)| rel_l2(u, &taylor_green(g, (-2.0 * nu * k as f64 * dt).exp())))
        .fold(0.0, f64::max))
}

fn taylor_green_accuracy() -> Result<Outcome> {
    let nu = 0.01;
    let err = taylor_green_error(128, nu, 0.005, 1.0)?;
    let coarse = taylor_green_error(64, nu, 0.001, 1.0)?;
    let fine = taylor_green_error(128, nu, 0.001, 1.0)?;
    let ratio = coarse / fine;
    outcome(
        err <= 1e-3 && ratio >= 3.5,
        format!("128^2 rel L2 {err:.3e}; 64^2 {coarse:.3e} / 128^2 {fine:.3e} = {ratio:.2}"),
    )
}

fn incompressibility() -> Result<Outcome> {
    let g = periodic(32);
    let solver = Solver::new(g, PhysicsConfig::default())?;
    let mut worst = 0.0f64;
    let mut pass = true;
    let mut steps = 0;
    let mut record = |u: &StaggeredField| {
        let (ok, rel) = div_ok(u);
        pass &= ok;
        worst = worst.max(rel);
        steps += 1;
    };

    // 500 plain solver steps from random states.
    for seed in 0..5 {
        let u0 = random_initial_condition(&g, seed, 7.0, 4.0)?;
        for u in solver.rollout(&u0, 100)?.iter().skip(1) {
            record(u);
        }
    }
    // Default hybrid steps: the correction follows the projection, so the
    // solver part of every step is checked.
    let small = TmnConfig {
        hidden_dim: 2,
        width: 8,
        encoder_layers: 3,
        ..TmnConfig::default()
    };
    let model = Model::Tmn(TmnModel::init(small.clone(), 7)?);
    let u0 = random_initial_condition(&g, 11, 7.0, 4.0)?;
    let mut prev = u0.clone();
    rollout_with(&model, &solver, &u0, 250, |s| {
        if s.step_index > 0 {
            let star = solver.advance(&mut Eager, prev.tensor())?;
            record(&StaggeredField::new(g, star)?);
        }
        prev = s.velocity.clone();
        Ok(())
    })?;
    // With re-projection the corrected velocity itself is solenoidal.
    let reproject = Model::Tmn(TmnModel::init(
        TmnConfig {
            reproject: true,
            ..small
        },
        8,
    )?);
    let u0 = random_initial_condition(&g, 12, 7.0, 4.0)?;
    rollout_with(&reproject, &solver, &u0, 250, |s| {
        if s.step_index > 0 {
            record(&s.velocity);
        }
        Ok(())
    })?;
    outcome(
        pass && steps == 1000,
        format!("{steps} steps, worst |div| / max(1, max|U|) = {worst:.2e}"),
    )
}

fn gradients() -> Result<Outcome> {
    let reports = check_primitives(1e-6, 5)?;
    let (worst_op, worst) = reports
        .iter()
        .map(|(n, r)| (*n, r.max_rel_error))
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });

    let g = periodic(8);
    let solver = Solver::new(g, PhysicsConfig::default())?;
    let cfg = TmnConfig {
        hidden_dim: 2,
        width: 6,
        hidden_activation: Activation::Tanh,
        ..TmnConfig::default()
    };
    let model = Model::Tmn(TmnModel::init(cfg, 21)?);
    let u0 = random_initial_condition(&g, 2, 2.0, 2.0)?;
    // Training loss against base-solver targets, hidden terms at steps 8
    // and 16.
    let refs = solver.rollout(&u0, 16)?;
    let loss = LossConfig {
        interval: Some(8),
        hidden_weight: 1.0,
    };
    let p: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let report = grad_check(
        |tape, vars| Ok(trajectory_loss(tape, vars, &model, &solver, &refs, &loss)?.total),
        &p,
        1e-6,
        64,
        3,
    )?;
    outcome(
        worst <= 1e-5 && report.max_rel_error <= 1e-5,
        format!(
            "{} primitives, worst {worst_op} {worst:.2e}; 16-step rollout {:.2e} over {} probes",
            reports.len(),
            report.max_rel_error,
            report.probes.len()
        ),
    )
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn loss_semantics() -> Result<Outcome> {
    let g = periodic(8);
    let solver = Solver::new(g, PhysicsConfig::default())?;
    let cfg = TmnConfig {
        hidden_dim: 2,
        width: 6,
        encoder_layers: 3,
        hidden_activation: Activation::Tanh,
        corrector_final_scale: 1.0,
        ..TmnConfig::default()
    };
    let model = Model::Tmn(TmnModel::init(cfg, 4)?);
    let refs: Vec<StaggeredField> = (0..3)
        .map(|k| {
            let a = 1.0 + 0.1 * k as f64;
            StaggeredField::from_fns(g, |_, y| a * y.sin(), |x, _| -0.5 * a * (2.0 * x).cos())
        })
        .collect();
    let p: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let loss = |w: f64| {
        let cfg = LossConfig {
            interval: Some(1),
            hidden_weight: w,
        };
        trajectory_loss(&mut Eager, &p, &model, &solver, &refs, &cfg).map(|t| t.total.item())
    };
    let w = 0.7;
    let got = loss(w)?;

    let states = rollout(&model, &solver, &refs[0], 2)?;
    let velocity: f64 = (1..=2)
        .map(|i| mse(states[i].velocity.tensor().data(), refs[i].tensor().data()))
        .sum();
    let mut hidden = 0.0;
    for j in 0..=2 {
        let enc = model
            .encode(&mut Eager, &p, refs[j].tensor())?
            .context("hidden state")?;
        hidden += mse(
            states[j].hidden.as_ref().context("hidden state")?.values().data(),
            enc.data(),
        );
    }
    let expected = velocity + w * hidden;
    let err = (got - expected).abs() / expected.max(1.0);
    let zero = loss(0.0)?;
    let zero_err = (zero - velocity).abs() / velocity.max(1.0);
    outcome(
        hidden > 0.0 && err <= 1e-12 && zero_err <= 1e-12,
        format!(
            "scripted loss {got:.6e} vs oracle {expected:.6e} ({err:.1e}); weight 0 vs velocity MSE {zero_err:.1e}"
        ),
    )
}

fn spectrum_machinery() -> Result<Outcome> {
    let mut parseval = 0.0f64;
    for seed in 0..20 {
        let u = white_noise(periodic(16 + 8 * (seed as usize % 3)), seed);
        let e = energy_spectrum(&u)?;
        let c = face_to_center(&u);
        let direct = 0.5 * c.values().data().iter().map(|x| x * x).sum::<f64>() / u.grid().cells() as f64;
        parseval = parseval.max((e.total() - direct).abs() / direct);
    }
    let mode = energy_spectrum(&StaggeredField::from_fns(
        periodic(32),
        |_, y| (3.0 * y).sin(),
        |_, _| 0.0,
    ))?;
    let e3 = mode.shells[2];
    let leak: f64 = mode
        .shells
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != 2)
        .map(|(_, v)| v.abs())
        .sum();
    let s = energy_spectrum(&white_noise(periodic(32), 99))?;
    let same = spectral_error(&s, &s)?;
    outcome(
        parseval <= 1e-10 && (e3 - 0.25).abs() <= 1e-12 && leak <= 1e-12 && same == 0.0,
        format!("Parseval {parseval:.1e}, E(3) = {e3:.15}, other shells {leak:.1e}, identical error {same}"),
    )
}

const TINY: &str = r#"
[dataset]
n_trajectories = 4
n_train = 2
n_validation = 1

[dataset.case]
fine_resolution = 16
coarse_resolution = 8
n_steps = 12
warmup_time = 0.0
max_velocity = 1.0
peak_wavenumber = 1.5

[model.tmn]
hidden_dim = 2
width = 6
encoder_layers = 3
hidden_activation = "tanh"
corrector_final_scale = 1.0

[train]
chunk_lengths = [4]
epochs_per_length = 4
batch_size = 2
lr0 = 3e-3

[eval]
baseline_factors = [2]
timing_steps = 0
"#;

fn tmn(args: &[&str]) -> Result<()> {
    let o = Command::new(env!("CARGO_BIN_EXE_tmn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("TMN_THREADS", "1")
        .output()?;
    ensure!(
        o.status.success(),
        "tmn {args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    Ok(())
}

/// Relative paths and contents of every file under `dir`, minus the run
/// manifest and files carrying wall-clock measurements.
fn tree(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let name = p.file_name().unwrap().to_string_lossy();
                if !matches!(
                    &*name,
                    "run.json" | "timing.json" | "summary.json" | "summary.csv" | "report.json"
                ) {
                    out.push((p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

fn reduction_and_determinism() -> Result<Outcome> {
    let g = periodic(32);
    let solver = Solver::new(g, PhysicsConfig::default())?;
    let u0 = random_initial_condition(&g, 3, 7.0, 4.0)?;
    let base = solver.rollout(&u0, 50)?;
    let zero = Model::Tmn(TmnModel::zeros(TmnConfig::default())?);
    let states = rollout(&zero, &solver, &u0, 50)?;
    let identical = states
        .iter()
        .zip(&base)
        .all(|(s, b)| s.velocity.tensor().data() == b.tensor().data());

    let tmp = tempfile::tempdir()?;
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY)?;
    let config = config.to_string_lossy().into_owned();
    let mut files = 0;
    let mut same = true;
    let mut differing = Vec::new();
    for stage in ["generate", "train", "evaluate"] {
        let mut runs = Vec::new();
        for r in 0..2 {
            let out = tmp.path().join(format!("{stage}{r}")).to_string_lossy().into_owned();
            let data = tmp.path().join("generate0").to_string_lossy().into_owned();
            let model = tmp.path().join("train0").join(BEST_DIR).to_string_lossy().into_owned();
            match stage {
                "generate" => tmn(&["generate", "--config", &config, "--out", &out])?,
                "train" => tmn(&["train", "--config", &config, "--data", &data, "--out", &out])?,
                _ => tmn(&[
                    "evaluate", "--config", &config, "--model", &model, "--data", &data, "--out", &out,
                ])?,
            }
            runs.push(tree(Path::new(&out))?);
        }
        files += runs[0].len();
        if runs[0] != runs[1] {
            same = false;
            differing.push(stage);
        }
    }
    outcome(
        identical && same && files > 0,
        format!(
            "zero model {} over 50 steps; reruns compared {files} files, differing stages {differing:?}",
            if identical { "bit-identical" } else { "differs" }
        ),
    )
}

fn transport_and_gates() -> Result<Outcome> {
    let g = periodic(16);
    let solver = Solver::new(g, PhysicsConfig::default())?;
    let small = TmnConfig {
        hidden_dim: 2,
        width: 6,
        diffusivity: 0.05,
        hidden_activation: Activation::Tanh,
        ..TmnConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = Tensor::from_fn(2, 16, 16, |_, _, _| rng.random_range(-0.5..0.5));
    let params = |m: &TmnModel| -> Vec<Tensor> { Model::Tmn(m.clone()).params().into_iter().cloned().collect() };

    let mut worst = 0.0f64;
    let mut moved = true;
    for (k, variant) in [
        UpdaterVariant::TransportAdvect,
        UpdaterVariant::TransportDiffuseConst,
        UpdaterVariant::TransportDiffuseLearned,
    ]
    .into_iter()
    .enumerate()
    {
        let mut m = TmnModel::init(
            TmnConfig {
                variant,
                ..small.clone()
            },
            3,
        )?;
        m.updater = Network::zeros(m.config.updater_arch())?;
        let p = params(&m);
        // Several steps in a fresh random flow each.
        let mut hk = h.clone();
        for step in 0..5 {
            let u = random_initial_condition(&g, 10 * k as u64 + step, 3.0, 3.0)?;
            let next = m.update_hidden(&mut Eager, &p, &solver, u.tensor(), &hk)?;
            for c in 0..2 {
                let before: f64 = hk.channel(c).iter().sum();
                let after: f64 = next.channel(c).iter().sum();
                worst = worst.max((before - after).abs());
            }
            moved &= next != hk;
            hk = next;
        }
    }

    let gated = |bias: f64| -> Result<TmnModel> {
        let mut m = TmnModel::init(
            TmnConfig {
                variant: UpdaterVariant::Gated,
                ..small.clone()
            },
            5,
        )?;
        let gate = m.gate.as_mut().context("gate network")?;
        for t in gate.params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let last = format!("gate.{}.bias", gate.arch.layers.len() - 1);
        gate.params.get_mut(&last).context("gate bias")?.data_mut().fill(bias);
        Ok(m)
    };
    let u = white_noise(g, 8).scaled(2.0);
    let hg = Tensor::from_fn(2, 16, 16, |_, _, _| rng.random_range(-0.9..0.9));
    let max_diff = |a: &Tensor, b: &Tensor| a.zip_map(b, |x, y| (x - y).abs()).max_abs();

    let closed = gated(-20.0)?;
    let out = closed.update_hidden(&mut Eager, &params(&closed), &solver, u.tensor(), &hg)?;
    let closed_err = max_diff(&out, &hg);
    // An open gate passes the candidate through: the same networks with the
    // direct update give it.
    let open = gated(20.0)?;
    let out = open.update_hidden(&mut Eager, &params(&open), &solver, u.tensor(), &hg)?;
    let direct = TmnModel {
        config: TmnConfig {
            variant: UpdaterVariant::Direct,
            ..open.config.clone()
        },
        gate: None,
        ..open.clone()
    };
    let cand = direct.update_hidden(&mut Eager, &params(&direct), &solver, u.tensor(), &hg)?;
    let open_err = max_diff(&out, &cand);
    outcome(
        worst <= 1e-12 && moved && closed_err <= 1e-8 && open_err <= 1e-8,
        format!("transport channel-sum drift {worst:.1e}; closed gate {closed_err:.1e}, open gate {open_err:.1e}"),
    )
}

/// Desk dataset, trained model and evaluation reports, computed once.
struct Desk {
    data: Dataset,
    model: Model,
    dir: PathBuf,
}

fn desk_train_config() -> TrainConfig {
    TrainConfig {
        chunk_lengths: vec![16],
        epochs_per_length: 40,
        batch_size: 8,
        samples_per_epoch: Some(128),
        validation_samples: Some(16),
        ..TrainConfig::default()
    }
}

fn desk() -> Result<Desk> {
    let dcfg = DatasetConfig::desk(CaseKind::ForcedTurbulence);
    let data_dir = cache_root().join(format!("dataset-{}", hash_of(&dcfg)));
    let t0 = Instant::now();
    let data = generate_dataset(&dcfg, &data_dir, false)?;
    eprintln!("dataset ready after {:.0} s", t0.elapsed().as_secs_f64());

    let tcfg = desk_train_config();
    let mcfg = TmnConfig::default();
    let seed = 0u64;
    let dir = cache_root().join(format!("train-{}", hash_of(&(&dcfg, &mcfg, &tcfg, seed))));
    let done = dir.join("complete");
    let model = if done.is_file() {
        load_bundle(&dir.join(BEST_DIR))?.0
    } else {
        let train = data.trajectories(Split::Train)?;
        let val = data.trajectories(Split::Validation)?;
        let model = Model::Tmn(TmnModel::init(mcfg, seed)?);
        let opts = TrainOptions {
            out_dir: Some(dir.clone()),
            resume: true,
            stop_after_epochs: None,
            code_version: env!("CARGO_PKG_VERSION").into(),
        };
        let t0 = Instant::now();
        let out = train_curriculum(&tcfg, model, &train, &val, &opts)?;
        ensure!(out.finished, "training stopped early");
        let secs_file = dir.join("wallclock_seconds");
        let before: f64 = fs::read_to_string(&secs_file)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0.0);
        fs::write(&secs_file, format!("{}\n", before + t0.elapsed().as_secs_f64()))?;
        fs::write(&done, "")?;
        out.best
    };
    Ok(Desk { data, model, dir })
}

fn training_effectiveness(d: &Desk) -> Result<Outcome> {
    let val = d.data.trajectories(Split::Validation)?;
    let solver = coarse_solver(&val[0])?;
    let TmnModel { config, .. } = match &d.model {
        Model::Tmn(t) => t.clone(),
        _ => anyhow::bail!("expected a TMN model"),
    };
    let base = Model::Tmn(TmnModel::zeros(config)?);
    let velocity_only = LossConfig {
        interval: None,
        hidden_weight: 0.0,
    };
    let mean_loss = |m: &Model| -> Result<f64> {
        let p: Vec<Tensor> = m.params().into_iter().cloned().collect();
        let mut sum = 0.0;
        let mut n = 0;
        for (k, t) in val.iter().enumerate() {
            for s in chunk(t, 16, k)? {
                sum += trajectory_loss(&mut Eager, &p, m, &solver, &s.snapshots, &velocity_only)?
                    .total
                    .item();
                n += 1;
            }
        }
        Ok(sum / n as f64)
    };
    let (trained, uncorrected) = (mean_loss(&d.model)?, mean_loss(&base)?);
    let reduction = 1.0 - trained / uncorrected;

    let reports = d.dir.join("eval");
    let (model_dir, base_dir) = (reports.join("tmn"), reports.join("base"));
    let (m, b) = if model_dir.join("report.json").is_file() && base_dir.join("report.json").is_file() {
        (EvalReport::read(&model_dir)?, EvalReport::read(&base_dir)?)
    } else {
        let test = d.data.trajectories(Split::Test)?;
        let cfg = EvalConfig::default();
        let m = evaluate("tmn", Some(&d.model), &test, &cfg)?;
        let b = evaluate("base", None, &test, &cfg)?;
        m.write(&model_dir)?;
        b.write(&base_dir)?;
        (m, b)
    };
    let wall = fs::read_to_string(d.dir.join("wallclock_seconds")).unwrap_or_default();
    outcome(
        reduction >= 0.4 && m.mean_decorrelation_time > b.mean_decorrelation_time,
        format!(
            "16-step validation MSE {trained:.4e} vs uncorrected {uncorrected:.4e} ({:.1}% lower); \
             mean decorrelation time {:.3} vs base {:.3}; training wall-clock {} s",
            100.0 * reduction,
            m.mean_decorrelation_time,
            b.mean_decorrelation_time,
            wall.trim()
        ),
    )
}

fn hidden_bound(d: &Desk) -> Result<Outcome> {
    let Model::Tmn(t) = &d.model else {
        anyhow::bail!("expected a TMN model");
    };
    let (lo, hi) = t.config.bound.range();
    let test = d.data.trajectories(Split::Test)?;
    let solver = coarse_solver(&test[0])?;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut states = 0;
    rollout_with(&d.model, &solver, &test[0].snapshots[0], 500, |s| {
        for &v in s.hidden.as_ref().expect("hidden state").values().data() {
            min = min.min(v);
            max = max.max(v);
        }
        states += 1;
        Ok(())
    })?;
    outcome(
        states == 501 && lo < min && max < hi,
        format!("{states} states, H in [{min:.9}, {max:.9}], bound ({lo}, {hi})"),
    )
}

type Criterion = (&'static str, Box<dyn Fn() -> Result<Outcome>>);

fn main() {
    let _ = env_logger::try_init();
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let cache: &'static std::sync::OnceLock<std::result::Result<Desk, String>> =
        Box::leak(Box::new(std::sync::OnceLock::new()));
    let with_desk = move |f: fn(&Desk) -> Result<Outcome>| -> Box<dyn Fn() -> Result<Outcome>> {
        Box::new(move || {
            let d = cache.get_or_init(|| desk().map_err(|e| format!("{e:#}")));
            match d {
                Ok(d) => f(d),
                Err(e) => Err(anyhow::anyhow!("desk setup failed: {e}")),
            }
        })
    };
    let criteria: Vec<Criterion> = vec![
        ("stencil_cnn_parameter_counts", Box::new(stencil_param_counts)),
        ("receptive_field_law", Box::new(receptive_fields)),
        ("taylor_green_accuracy_and_convergence", Box::new(taylor_green_accuracy)),
        ("incompressibility_over_1000_steps", Box::new(incompressibility)),
        ("finite_difference_gradients", Box::new(gradients)),
        ("trajectory_loss_semantics", Box::new(loss_semantics)),
        ("desk_training_effectiveness", with_desk(training_effectiveness)),
        ("spectrum_machinery", Box::new(spectrum_machinery)),
        (
            "zero_model_reduction_and_rerun_determinism",
            Box::new(reduction_and_determinism),
        ),
        (
            "transport_conservation_and_gate_identities",
            Box::new(transport_and_gates),
        ),
        ("hidden_state_bound_over_500_steps", with_desk(hidden_bound)),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += !pass as usize;
        println!(
            "{} {name} ({:.1} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
