//! Runs the four ablation arms on the synthetic benchmark and prints target
//! metrics, plus source-domain HR for the same model as a sanity check.
//!
//! `cargo run --release --example ablation -- seeds=0,1 lambda_a=100`

use std::time::Instant;

use cfaa::config::{Arm, RunConfig};
use cfaa::pipeline::{evaluate, prepare_synthetic, train, Prepared};

fn main() -> cfaa::Result<()> {
    let mut cfg = RunConfig::from_text(include_str!("../../../configs/benchmark.cfg"))?;
    let mut seeds = vec![0u64];
    let mut arms = Arm::ALL.to_vec();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        match k {
            "seeds" => seeds = v.split(',').map(|s| s.parse().unwrap()).collect(),
            "arms" => arms = v.split(',').map(|s| s.parse().unwrap()).collect(),
            _ => cfg.set(k, v)?,
        }
    }
    let mut totals = vec![[0.0; 4]; arms.len()];
    for &seed in &seeds {
        cfg.seed = seed;
        let (_, data) = prepare_synthetic(&cfg)?;
        for (a, &arm) in arms.iter().enumerate() {
            cfg.arm = arm;
            let t = Instant::now();
            let out = train(&cfg, &data)?;
            let r = evaluate(&out.params, &data, &cfg)?;
            let row = [
                r.metrics.hr,
                r.metrics.ndcg,
                r.user_discrepancy.d_a,
                r.item_discrepancy.d_a,
            ];
            for (t, v) in totals[a].iter_mut().zip(row) {
                *t += v;
            }
            let last = out.reports.last().unwrap();
            let mut swapped = out.params.clone();
            std::mem::swap(&mut swapped.source_user, &mut swapped.target_user);
            std::mem::swap(&mut swapped.source_item, &mut swapped.target_item);
            let flipped = Prepared {
                source: data.target.clone(),
                target: data.source.clone(),
            };
            let src_hr = evaluate(&swapped, &flipped, &cfg)?.metrics.hr;
            println!(
                "seed {seed} {:>4}  hr {:.4} ndcg {:.4} dA_u {:.3} dA_i {:.3}  L_C {:.3} L_O {:.2e} L_A {:.2e}  src_hr {:.3}  {:.1}s",
                arm.name(),
                row[0],
                row[1],
                row[2],
                row[3],
                last.l_c,
                last.l_o,
                last.l_a,
                src_hr,
                t.elapsed().as_secs_f64()
            );
        }
    }
    let n = seeds.len() as f64;
    for (a, arm) in arms.iter().enumerate() {
        let m = totals[a].map(|v| v / n);
        println!(
            "mean {:>4}  hr {:.4} ndcg {:.4} dA_u {:.3} dA_i {:.3}",
            arm.name(),
            m[0],
            m[1],
            m[2],
            m[3]
        );
    }
    Ok(())
}
