//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so the lines are never swallowed by output capture.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mmctune::fem::{assemble_and_solve, compliance_and_volume, element_density, sensitivities, Mesh};
use mmctune::forest::{self, EtConfig};
use mmctune::geometry::{Component, DesignVector, SmoothHeaviside, PARAMS_PER_COMPONENT};
use mmctune::image::GrayImage;
use mmctune::metrics::{f1_score, roc_curve};
use mmctune::mma::{self, MmaParams, MmaState};
use mmctune::pso::{self, PsoConfig, RunOutcome, Runner, SearchBox};
use mmctune::runner::{run_mmc, CaseConfig, Label};
use mmctune::vision::{self, encode, train_vocabulary, KMeansConfig, VisionConfig, DESCRIPTOR_LEN};
use mmctune::workbench::{
    generate_dataset, label_dataset, oracle_label, train_and_evaluate, tune_case, CaseKind, LabelOverrides, RunConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_metric_fidelity() -> Outcome {
    let mut notes = Vec::new();
    for (p, r, want) in [(0.87, 0.90, 0.88), (0.90, 0.94, 0.92)] {
        let f1 = f1_score(p, r).ok_or("F1 undefined")?;
        check((f1 - want).abs() <= 0.005, || {
            format!("F1({p}, {r}) = {f1:.4}, expected {want}")
        })?;
        notes.push(format!("F1({p},{r})={f1:.4}"));
    }
    Ok(notes.join(" "))
}

fn pair_count_auc(y: &[bool], s: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in (0..y.len()).filter(|&i| y[i]) {
        for j in (0..y.len()).filter(|&j| !y[j]) {
            pairs += 1.0;
            num += if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    num / pairs
}

fn c2_auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let n = rng.gen_range(2..=50);
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            continue;
        }
        // coarse scores so that ties are common
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
        let auc = roc_curve(&y, &s).map_err(|e| e.to_string())?.auc;
        let diff = (auc - pair_count_auc(&y, &s)).abs();
        check(diff <= 1e-12, || format!("instance {done}: AUC differs by {diff:e}"))?;
        worst = worst.max(diff);
        done += 1;
    }
    Ok(format!("100 instances, max |diff| = {worst:.1e}"))
}

fn pipeline(d: &DesignVector, mesh: &Mesh, cfg: &CaseConfig, h: &SmoothHeaviside) -> Result<(f64, f64), String> {
    let f = element_density(d, mesh, h).map_err(|e| e.to_string())?;
    let s = assemble_and_solve(&f.densities, mesh, &cfg.material).map_err(|e| e.to_string())?;
    Ok(compliance_and_volume(&s, mesh))
}

/// True when the component owning variable `k` is within `tol` of another
/// component's level at some node where the structure function matters.
fn near_argmax_tie(d: &DesignVector, mesh: &Mesh, h: &SmoothHeaviside, k: usize, tol: f64) -> bool {
    let ci = k / PARAMS_PER_COMPONENT;
    (0..mesh.node_count()).any(|node| {
        let pt = mesh.node_coords(node);
        let lv: Vec<f64> = d.components.iter().map(|c| c.level(pt, d.exponent)).collect();
        let top = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top.abs() > h.eps() + tol {
            return false;
        }
        (top - lv[ci]).abs() < tol && lv.iter().enumerate().any(|(j, v)| j != ci && (top - v).abs() < tol)
    })
}

fn c3_gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = CaseConfig::cantilever(20, 10);
    let mesh = cfg.mesh().map_err(|e| e.to_string())?;
    let h = cfg.smooth_heaviside().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut checked, mut excluded) = (0.0f64, 0, 0);
    let step = 1e-5;
    for trial in 0..20 {
        let comps = (0..4)
            .map(|_| Component {
                x0: rng.gen_range(0.3..1.7),
                y0: rng.gen_range(0.2..0.8),
                half_length: rng.gen_range(0.3..0.8),
                t1: rng.gen_range(0.05..0.15),
                t2: rng.gen_range(0.05..0.15),
                t3: rng.gen_range(0.05..0.15),
                theta: rng.gen_range(-1.5..1.5),
            })
            .collect();
        let d = DesignVector::new(comps, cfg.domain.component_bounds());
        let field = element_density(&d, &mesh, &h).map_err(|e| e.to_string())?;
        let sol = assemble_and_solve(&field.densities, &mesh, &cfg.material).map_err(|e| e.to_string())?;
        let sens = sensitivities(&d, &field, &sol, &mesh, &cfg.material, &h);
        let x = d.flatten();
        let scale = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (sc, sv) = (scale(&sens.compliance), scale(&sens.volume));
        for k in 0..x.len() {
            if near_argmax_tie(&d, &mesh, &h, k, 1e-4) {
                excluded += 1;
                continue;
            }
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += step;
            xm[k] -= step;
            let (cp, vp) = pipeline(&d.unflatten(&xp), &mesh, &cfg, &h)?;
            let (cm, vm) = pipeline(&d.unflatten(&xm), &mesh, &cfg, &h)?;
            // entries far below the gradient's scale are compared on that
            // scale: the oracle's own rounding noise dominates them
            let rel = |a: f64, fd: f64, s: f64| (a - fd).abs() / a.abs().max(fd.abs()).max(1e-5 * s);
            let ec = rel(sens.compliance[k], (cp - cm) / (2.0 * step), sc);
            let ev = rel(sens.volume[k], (vp - vm) / (2.0 * step), sv);
            check(ec < 1e-3 && ev < 1e-3, || {
                format!("design {trial} variable {k}: relative errors C {ec:.2e}, V {ev:.2e}")
            })?;
            worst = worst.max(ec).max(ev);
            checked += 1;
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!(
        "{checked} variables, {excluded} near ties skipped, worst rel err {worst:.1e}, {t:.1?}"
    ))
}

fn c4_mma() -> Outcome {
    let params = |f: &dyn Fn(&mut MmaParams)| {
        let mut p = MmaParams::default();
        f(&mut p);
        p
    };
    let with_history = |x1: f64, x2: f64, low: f64| {
        let mut s = MmaState::new(&[x1], vec![0.0], vec![1.0]).expect("state");
        s.iteration = 2;
        s.xold1 = vec![x1];
        s.xold2 = vec![x2];
        s.low = vec![low];
        s.upp = vec![1.0];
        s
    };
    let exact = |got: f64, formula: f64, hand: f64, what: &str| {
        check(got == formula && (got - hand).abs() < 1e-15, || {
            format!("{what}: got {got}, hand value {hand}")
        })
    };
    let s = MmaState::new(&[0.5], vec![0.0], vec![1.0]).expect("state");
    let (low, upp) = mma::update_asymptotes(&s, &[0.5], &params(&|p| p.asyinit = 0.5));
    let (x, span) = (0.5, 1.0);
    exact(low[0], x - 0.5 * span, 0.0, "initial low")?;
    exact(upp[0], x + 0.5 * span, 1.0, "initial upp")?;
    let (low, _) = mma::update_asymptotes(&with_history(0.5, 0.4, 0.3), &[0.6], &params(&|p| p.asyincr = 1.5));
    exact(low[0], 0.6 - 1.5 * (0.5 - 0.3), 0.3, "monotone low")?;
    let (low, _) = mma::update_asymptotes(&with_history(0.5, 0.7, 0.3), &[0.6], &params(&|p| p.asydecr = 0.5));
    exact(low[0], 0.6 - 0.5 * (0.5 - 0.3), 0.5, "oscillating low")?;
    let (a, b) = mma::move_limits(&[0.5], &[0.0], &[1.0], &[0.0], &[1.0], 0.5);
    exact(a[0], 0.0 + 0.5 * 0.5, 0.25, "alfa")?;
    exact(b[0], 1.0 - 0.5 * 0.5, 0.75, "beta")?;
    let (a, b) = mma::move_limits(&[0.8], &[0.2], &[1.4], &[0.0], &[1.0], 0.25);
    exact(a[0], 0.2 + 0.25 * (0.8 - 0.2), 0.35, "alfa")?;
    exact(b[0], 1.0, 1.0, "beta")?;

    let start = Instant::now();
    let mut x = vec![0.9, 0.1, 0.5, 0.3, 0.7];
    let mut state = MmaState::new(&x, vec![0.0; 5], vec![1.0; 5]).map_err(|e| e.to_string())?;
    for _ in 0..50 {
        let df0: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let g = 1.0 - x.iter().sum::<f64>();
        x = mma::mma_step(&x, &df0, g, &[-1.0; 5], &mut state, &MmaParams::default()).x;
    }
    let err = x.iter().map(|v| (v - 0.2).powi(2)).sum::<f64>().sqrt();
    check(err < 1e-3, || format!("after 50 steps |x - 0.2| = {err:e}"))?;
    let t = start.elapsed();
    check(t < Duration::from_secs(1), || format!("took {t:?}"))?;
    Ok(format!("hand values exact, |x - x*| = {err:.1e} after 50 steps"))
}

fn xor_blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (a, b) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
            let c = |v: bool| if v { 1.0 } else { -1.0 };
            let x = vec![
                c(a) + 0.6 * rng.gen_range(-1.0..1.0),
                c(b) + 0.6 * rng.gen_range(-1.0..1.0),
            ];
            (x, a != b)
        })
        .unzip()
}

fn c5_extra_trees() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let n = rng.gen_range(20..=500);
        let d = rng.gen_range(1..=8);
        // distinct rows, so any labelling is consistent
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..d).map(|j| if j == 0 { i as f64 } else { rng.gen() }).collect())
            .collect();
        let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let cfg = EtConfig {
            trees: 25,
            seed: trial,
            ..EtConfig::default()
        };
        let f = forest::fit(&x, &y, &cfg).map_err(|e| e.to_string())?;
        let acc = x.iter().zip(&y).filter(|(r, &l)| f.predict(r) == l).count() as f64 / n as f64;
        check(acc == 1.0, || format!("trial {trial}: training accuracy {acc}"))?;
    }

    let (x, y) = xor_blobs(300, 50);
    let cfg = EtConfig {
        trees: 100,
        seed: 77,
        ..EtConfig::default()
    };
    let a = forest::fit(&x, &y, &cfg).map_err(|e| e.to_string())?.to_text();
    let b = forest::fit(&x, &y, &cfg).map_err(|e| e.to_string())?.to_text();
    check(a == b, || "same seed gave different forests".into())?;

    let (tx, _) = xor_blobs(200, 51);
    let sizes = [10, 25, 50, 100, 200, 400];
    let mut variances = Vec::new();
    for &m in &sizes {
        let scores: Vec<Vec<f64>> = (0..10)
            .map(|s| {
                let f = forest::fit(
                    &x,
                    &y,
                    &EtConfig {
                        trees: m,
                        seed: 1000 + s,
                        ..EtConfig::default()
                    },
                )
                .expect("fit");
                tx.iter().map(|r| f.score(r)).collect()
            })
            .collect();
        let mean_var = (0..tx.len())
            .map(|i| {
                let mu = scores.iter().map(|s| s[i]).sum::<f64>() / 10.0;
                scores.iter().map(|s| (s[i] - mu).powi(2)).sum::<f64>() / 10.0
            })
            .sum::<f64>()
            / tx.len() as f64;
        variances.push(mean_var);
    }
    check(variances.windows(2).all(|w| w[1] < w[0]), || {
        format!("score variances {variances:?}")
    })?;
    let t = start.elapsed();
    check(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!(
        "train acc 1.0 on 10 sets, seeded forests identical, variance {:.1e} (m=10) to {:.1e} (m=400)",
        variances[0],
        variances[variances.len() - 1]
    ))
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; DESCRIPTOR_LEN] {
    let mut d = [0.0; DESCRIPTOR_LEN];
    d.iter_mut().for_each(|v| *v = rng.gen::<f64>());
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.iter_mut().for_each(|v| *v /= n);
    d
}

fn c6_vision() -> Outcome {
    let start = Instant::now();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(60 + seed);
        let data: Vec<_> = (0..600).map(|_| random_unit(&mut rng)).collect();
        let v = train_vocabulary(
            &data,
            &KMeansConfig {
                k: 16,
                seed,
                ..KMeansConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let h = &v.inertia_history;
        check(h.windows(2).all(|w| w[1] <= w[0]), || {
            format!("seed {seed}: inertia rose in {h:?}")
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let centers: Vec<_> = (0..64).map(|_| random_unit(&mut rng)).collect();
    let vocab = train_vocabulary(
        &centers,
        &KMeansConfig {
            k: 64,
            max_iterations: 1,
            ..KMeansConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    for trial in 0..20 {
        let ds: Vec<_> = (0..10).map(|_| random_unit(&mut rng)).collect();
        let bovw = encode(&ds, &vocab);
        let sum: f64 = bovw.histogram.iter().sum();
        check(
            bovw.histogram.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() < 1e-12,
            || format!("trial {trial}: histogram sums to {sum}"),
        )?;
        let mut counts = vec![0usize; 64];
        for d in &ds {
            let (mut best, mut bd) = (0, f64::INFINITY);
            for (i, c) in vocab.centers.iter().enumerate() {
                let dist: f64 = c.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < bd {
                    best = i;
                    bd = dist;
                }
            }
            counts[best] += 1;
        }
        let expect: Vec<f64> = counts.iter().map(|&c| c as f64 / ds.len() as f64).collect();
        check(bovw.histogram == expect, || {
            format!("trial {trial}: encode differs from exhaustive counts")
        })?;
    }

    let mut described = 0;
    for (w, h) in [(160, 96), (200, 120)] {
        let img = GrayImage::from_fn(w, h, |x, y| {
            let on = ((x / 23) + (y / 17)) % 2 == 0 || (x as i64 - 80).pow(2) + (y as i64 - 48).pow(2) < 400;
            if on {
                255
            } else {
                0
            }
        });
        for f in vision::extract(&img, &VisionConfig::default()).map_err(|e| e.to_string())? {
            let n = f.descriptor.iter().map(|v| v * v).sum::<f64>().sqrt();
            check(
                f.descriptor.len() == 128 && (n == 0.0 || (n - 1.0).abs() < 1e-12),
                || format!("descriptor norm {n}"),
            )?;
            described += 1;
        }
    }
    check(described > 0, || "no descriptors extracted".into())?;
    let t = start.elapsed();
    check(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!(
        "5 Lloyd runs monotone, 20 encodings match, {described} descriptors of length 128 with unit norm, {t:.1?}"
    ))
}

struct Quadratic {
    c: Vec<f64>,
}

impl Runner for Quadratic {
    type Artifact = ();
    fn run(&self, x: &[f64]) -> mmctune::Result<RunOutcome<()>> {
        Ok(RunOutcome {
            objective: x.iter().zip(&self.c).map(|(a, b)| (a - b).powi(2)).sum(),
            solvable: true,
            converged: true,
            artifact: (),
        })
    }
}

fn c7_pso() -> Outcome {
    let start = Instant::now();
    let bounds = SearchBox::new(MmaParams::TUNING_LOWER.to_vec(), MmaParams::TUNING_UPPER.to_vec())
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let c: Vec<f64> = (0..4)
            .map(|d| rng.gen_range(bounds.lower[d]..bounds.upper[d]))
            .collect();
        let cfg = PsoConfig {
            particles: 10,
            max_iterations: 200,
            stagnation_window: 200,
            seed,
            ..PsoConfig::default()
        };
        let always = |_: &()| true;
        let r = pso::tune(&cfg, &bounds, &Quadratic { c: c.clone() }, &always).map_err(|e| e.to_string())?;
        let dist = r
            .best_position
            .iter()
            .zip(&c)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        check(dist < 1e-2, || format!("seed {seed}: |gbest - c|_inf = {dist:e}"))?;
        check(r.trace.windows(2).all(|w| w[1] <= w[0]), || {
            format!("seed {seed}: trace increased")
        })?;
        worst = worst.max(dist);
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(1), || format!("took {t:?}"))?;
    Ok(format!(
        "5 seeds, worst |gbest - c|_inf = {worst:.1e}, traces non-increasing, {t:.1?}"
    ))
}

fn c8_closed_loop() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::for_case(CaseKind::Cantilever, CaseConfig::cantilever(40, 20));
    cfg.seed = 8;
    cfg.train = 40;
    cfg.test = 20;
    cfg.pso.particles = 6;
    cfg.pso.max_iterations = 20;
    let m = generate_dataset(&cfg, 60, cfg.seed, dir.path()).map_err(|e| e.to_string())?;
    let m = label_dataset(&m, dir.path(), &cfg.case, &LabelOverrides::default()).map_err(|e| e.to_string())?;
    let report = train_and_evaluate(&m, dir.path(), &cfg, None).map_err(|e| e.to_string())?;
    let bundle = tune_case(&cfg, &report.model).map_err(|e| e.to_string())?;
    let rec = bundle.result.best_artifact.as_ref().ok_or("no best structure")?;
    let label = oracle_label(rec, &cfg.case);
    check(label == Label::Feasible, || {
        format!("final structure labeled {}", label.as_str())
    })?;
    check(rec.volume_fraction <= 0.4 * 1.05, || {
        format!("final volume {}", rec.volume_fraction)
    })?;
    let trace = &bundle.result.trace;
    check(trace.windows(2).all(|w| w[1] <= w[0]), || {
        "gbest trace increased".into()
    })?;
    let t = start.elapsed();
    check(t < Duration::from_secs(20 * 60), || format!("took {t:?}"))?;
    Ok(format!(
        "test acc {}, C = {:.2}, V = {:.3}, {} swarm iterations, {t:.0?}",
        mmctune::metrics::fmt_metric(report.outcome.metrics.acc),
        rec.compliance,
        rec.volume_fraction,
        bundle.result.iterations
    ))
}

fn c9_reference_runs() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let cases = [
        (
            "Case I",
            CaseConfig::cantilever_default(),
            MmaParams::CANTILEVER_REFERENCE,
            74.02,
            67,
        ),
        (
            "Case II",
            CaseConfig::lshape_default(),
            MmaParams::LSHAPE_REFERENCE,
            183.76,
            62,
        ),
    ];
    for (name, cfg, params, ref_c, ref_it) in cases {
        let rec = run_mmc(&cfg, &params).map_err(|e| e.to_string())?;
        check(rec.converged, || {
            format!("{name} did not converge in {} iterations", rec.iterations)
        })?;
        let label = oracle_label(&rec, &cfg);
        check(label == Label::Feasible, || {
            format!("{name} structure labeled {}", label.as_str())
        })?;
        let c: Vec<f64> = rec.trace.iter().map(|t| t.compliance).collect();
        let early = c[..c.len().min(20)].iter().copied().fold(f64::INFINITY, f64::min);
        check(early < c[0], || format!("{name}: no early descent"))?;
        let tail = &c[c.len().saturating_sub(10)..];
        let spread = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            / tail.iter().copied().fold(f64::INFINITY, f64::min)
            - 1.0;
        check(spread < 0.01, || format!("{name}: last iterations vary by {spread:.3}"))?;
        notes.push(format!(
            "{name} C = {:.2} after {} iterations (reference {ref_c}, {ref_it})",
            rec.compliance, rec.iterations
        ));
    }
    notes.push("reference ACC 0.88 / 0.92, AUC 0.96, P/R/F1/ACC 0.87/0.90/0.88/0.88 and 0.90/0.94/0.92/0.92 recorded, not asserted".into());
    Ok(format!("{}; {:.0?}", notes.join("; "), start.elapsed()))
}

fn main() -> ExitCode {
    use std::io::Write;
    let criteria: [Criterion; 9] = [
        ("metric fidelity", c1_metric_fidelity),
        ("AUC oracle equivalence", c2_auc_oracle),
        ("FEM gradient check", c3_gradient_check),
        ("MMA correctness", c4_mma),
        ("Extra-Trees properties", c5_extra_trees),
        ("vision pipeline", c6_vision),
        ("PSO analytic convergence", c7_pso),
        ("closed loop at desk scale", c8_closed_loop),
        ("reference runs", c9_reference_runs),
    ];
    // `cargo test --test acceptance -- 3 8` runs only the listed criteria
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected: Vec<usize> = (1..=criteria.len())
        .filter(|i| only.is_empty() || only.contains(i))
        .collect();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for &n in &selected {
        let (i, (name, f)) = (n - 1, &criteria[n - 1]);
        let line = match f() {
            Ok(detail) => format!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                format!("criterion {} {name}: FAIL ({why})", i + 1)
            }
        };
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
    let _ = writeln!(
        out,
        "acceptance: {} of {} criteria pass",
        selected.len() - failed,
        selected.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
