//! Scratch probe: one full-scale cell per method/lambda to check desk-scale
//! reproduction numbers and runtime.

use std::time::Instant;

use mvcca::experiment::{evaluate_cell, ExperimentConfig, Method, ResolvedCell};
use mvcca::objectives::DeepMethod;
use mvcca::synthgen::{generate, SynthConfig};
use mvcca::trainer::TrainConfig;

fn main() {
    let synth = SynthConfig::default();
    let train = TrainConfig::new(DeepMethod::Proposed, 0.1, 0);
    let config = ExperimentConfig::new(synth.clone(), train);

    let t0 = Instant::now();
    let mut splits = generate(&synth).unwrap();
    println!("generate: {:.2}s", t0.elapsed().as_secs_f64());

    // scratch: z-score each view by train statistics
    if std::env::var("STANDARDIZE").is_ok() {
        for k in 0..2 {
            let (_, means) = splits.train.views[k].center_cols();
            let m = splits.train.views[k].rows();
            let mut stds = vec![0.0; splits.train.views[k].cols()];
            for i in 0..m {
                for (j, s) in stds.iter_mut().enumerate() {
                    let d = splits.train.views[k][(i, j)] - means[j];
                    *s += d * d;
                }
            }
            for s in stds.iter_mut() {
                *s = (*s / m as f64).sqrt().max(1e-12);
            }
            for split in [&mut splits.train, &mut splits.val, &mut splits.test] {
                let view = &mut split.views[k];
                for i in 0..view.rows() {
                    for j in 0..view.cols() {
                        view[(i, j)] = (view[(i, j)] - means[j]) / stds[j];
                    }
                }
            }
        }
        println!("standardized");
    }

    let mut config = config;
    if let Ok(e) = std::env::var("EPOCHS") {
        config.train.outer_iterations = e.parse().unwrap();
    }
    if std::env::var("LINEAR_LAST").is_ok() {
        config.train.activate_last_hidden = false;
        println!("linear last hidden layer");
    }

    let args: Vec<String> = std::env::args().collect();
    let cases: Vec<(Method, f64)> = if args.len() > 1 && args[1] == "full" {
        let mut v = vec![(Method::Maxvar, 0.5), (Method::Dgcca, 0.5)];
        for l in [0.1, 0.3, 0.5, 0.7, 0.9] {
            v.push((Method::Dccae, l));
            v.push((Method::Proposed, l));
        }
        v
    } else {
        vec![
            (Method::Maxvar, 0.5),
            (Method::Proposed, 0.1),
            (Method::Dccae, 0.9),
            (Method::Proposed, 0.9),
        ]
    };

    if std::env::var("CURVES").is_ok() {
        let train_ds = splits.train.to_dataset().unwrap();
        let val_ds = splits.val.to_dataset().unwrap();
        let mut tc = config.train.clone();
        tc.method = DeepMethod::Proposed;
        tc.lambda = 0.9;
        tc.seed = 12345;
        let model = mvcca::trainer::train(&train_ds, &val_ds, &tc).unwrap();
        for rec in &model.history {
            println!(
                "iter {:2}: train {:.4} (r {:.4} q {:.4})  val {:.4} (r {:.4} q {:.4})",
                rec.iteration,
                rec.train_objective,
                rec.train_r,
                rec.train_aux,
                rec.val_objective,
                rec.val_r,
                rec.val_aux
            );
        }
        println!("best iteration {}", model.best_iteration);
        return;
    }

    for (method, lambda) in cases {
        let cell = ResolvedCell {
            method,
            lambda,
            rep: 0,
            train_seed: 12345,
            eval_seed: 999,
        };
        let t = Instant::now();
        match evaluate_cell(&splits, &cell, &config) {
            Ok(r) => println!(
                "{:10} lambda={:.1}: acc={:.3} nmi={:.3} ari={:.3} cla={:.3} corr={:.3}  ({:.1}s)",
                method.name(),
                lambda,
                r.acc,
                r.nmi,
                r.ari,
                r.cla_acc,
                r.corr_coef,
                t.elapsed().as_secs_f64()
            ),
            Err(e) => println!("{:10} lambda={:.1}: ERROR {e}", method.name(), lambda),
        }
    }
}
