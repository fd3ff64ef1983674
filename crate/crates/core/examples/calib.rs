use coexsim::harness::{median, run_agent_eval, run_plan, train_agent, ExperimentMode, ExperimentPlan};
use coexsim::scenario::desk_scenario;

fn main() {
    let mut cfg = desk_scenario(7);
    cfg.ai_device_count = 14;
    cfg.agent.min_buffer = 400;
    cfg.agent.minibatch = 16;
    let seeds: Vec<u64> = (100..120).collect();

    let episodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let t0 = std::time::Instant::now();
    let (learner, curve) = train_agent(&cfg, 7, episodes);
    println!("trained {} episodes in {:?}", episodes, t0.elapsed());
    for w in curve.chunks(episodes/8.max(1)) {
        let mr = w.iter().map(|r| r.mean_reward).sum::<f64>() / w.len() as f64;
        println!("  ep {:>4}..{:>4}: mean reward {:.4} entropy {:.2} psi {:.3}",
            w[0].episode, w.last().unwrap().episode, mr,
            w.last().unwrap().entropy, w.last().unwrap().psi);
    }
    let ckpt = learner.checkpoint();
    let t1 = std::time::Instant::now();
    let agent_results = run_agent_eval(&cfg, &ckpt, &seeds);
    println!("eval in {:?}", t1.elapsed());
    let agent_median = median(&agent_results.delay_values()).unwrap();
    let mut mhist: Vec<_> = agent_results.m_histogram.iter().collect();
    mhist.sort();
    println!("agent median d_ai {:.3}; m histogram {:?}", agent_median, mhist);

    for m in [4usize, 9, 14] {
        let plan = ExperimentPlan { mode: ExperimentMode::MixedServ { m }, seeds: seeds.clone(), out_dir: None };
        let r = run_plan(&plan, &cfg).unwrap();
        println!("mixedServ[{m}] median d_ai {:.3}", median(&r.delay_values()).unwrap());
    }
}
