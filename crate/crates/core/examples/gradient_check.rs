//! Exact policy gradient against finite differences and against sampled
//! REINFORCE batches on LineSearch-2.

use asym_distill::cmdp::{rollout, sample_context};
use asym_distill::rl::{exact_gradient, exact_return, pg_update, Baseline, PgConfig};
use asym_distill::store::TabularPolicy;
use asym_distill::{make_env, EnvConfig, RngStream};

fn main() -> asym_distill::Result<()> {
    let env = make_env(&EnvConfig::line_search(2))?;
    let policy = TabularPolicy::uniform(3);
    let grad = exact_gradient(&env, &policy)?;

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (obs, g) in &grad {
        for j in 0..3 {
            let mut row = vec![0.0; 3];
            row[j] = h;
            let mut plus = policy.clone();
            plus.set_logits(*obs, row.clone());
            row[j] = -h;
            let mut minus = policy.clone();
            minus.set_logits(*obs, row);
            let fd = (exact_return(&env, &plus)? - exact_return(&env, &minus)?) / (2.0 * h);
            if g[j] != 0.0 || fd != 0.0 {
                worst = worst.max((g[j] - fd).abs() / g[j].abs().max(fd.abs()));
            }
        }
    }
    println!("J(uniform) = {:.6}", exact_return(&env, &policy)?);
    println!("worst relative finite-difference error over {} rows: {worst:.2e}", grad.len());

    let cfg = PgConfig {
        learning_rate: 1.0,
        gamma: env.gamma(),
        baseline: Baseline::MeanReturn,
    };
    let mut rng = RngStream::from_id(11);
    let norm: f64 = grad.values().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for batch_size in [16, 64, 256, 1024] {
        let batch: Vec<_> = (0..batch_size)
            .map(|_| {
                let c = sample_context(&env, &mut rng);
                rollout(&env, &policy, env.initial(c), &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let step = pg_update(&env, &policy, &batch, &cfg)?;
        let (mut dot, mut sq) = (0.0, 0.0);
        for (obs, g) in &grad {
            let s = step.logits(obs).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; 3]);
            dot += g.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>();
            sq += s.iter().map(|x| x * x).sum::<f64>();
        }
        println!("batch {batch_size:>5}: cosine with exact gradient {:.3}", dot / (norm * sq.sqrt()));
    }
    Ok(())
}
