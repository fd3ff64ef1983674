use coexsim::agent::nn::Mlp;
use coexsim::agent::sac::{actor_batch_grads, actor_batch_loss, ActorSample};
use coexsim::scenario::derive_stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let mut init = derive_stream(77, "dbg");
    let state_dim = 5usize;
    let action_dim = 3usize;
    let mut actor = Mlp::new(&[state_dim, 6, 5, 2 * action_dim], &mut init);
    let critic1 = Mlp::new(&[state_dim + action_dim, 6, 5, 1], &mut init);
    let critic2 = Mlp::new(&[state_dim + action_dim, 6, 5, 1], &mut init);
    let samples: Vec<ActorSample> = (0..3).map(|_| ActorSample {
        state: (0..state_dim).map(|_| init.gen::<f64>() * 2.0 - 1.0).collect(),
        noise: (0..action_dim).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut init)).collect(),
        weight: 1.0,
    }).collect();
    for psi in [0.0, 0.7] {
        let (_, grads) = actor_batch_grads(&actor, (&critic1, &critic2), psi, action_dim, &samples);
        let h = 1e-6;
        let mut worst = (0usize, 0.0f64, 0.0, 0.0);
        for p in 0..actor.param_count() {
            let orig = actor.params()[p];
            actor.params_mut()[p] = orig + h;
            let up = actor_batch_loss(&actor, (&critic1, &critic2), psi, action_dim, &samples);
            actor.params_mut()[p] = orig - h;
            let down = actor_batch_loss(&actor, (&critic1, &critic2), psi, action_dim, &samples);
            actor.params_mut()[p] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = ((grads[p] - fd) / grads[p].abs().max(fd.abs()).max(1e-8)).abs();
            if rel > worst.1 { worst = (p, rel, grads[p], fd); }
        }
        println!("psi={psi}: worst param {} rel {:.2e} analytic {:.6} fd {:.6}", worst.0, worst.1, worst.2, worst.3);
    }
}
