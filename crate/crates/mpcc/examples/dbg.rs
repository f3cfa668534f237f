use mpcc::*;

fn probe(p: usize, rho: f64, sigma: f64, eps: f64, horizon: u64) {
    let n = 500.0;
    let config = NetworkConfig::new(500, p, 1e12);
    let params = ProtocolParams { rho, sigma, gamma: 0.5, alpha: AlphaFunction::Reno };
    let share = n / p as f64;
    // Stagger loads downward with path index; keep totals exact.
    let mut loads: Vec<f64> = (0..p).map(|i| share * (1.0 + eps * (p - 1 - i) as f64)).collect();
    let scale: f64 = n / loads.iter().sum::<f64>();
    for l in &mut loads { *l *= scale; }
    let init = MeanFieldInit::Custom { agents: vec![share; p], loads };
    let run = mean_field::run_expected(&config, &params, horizon, &init).unwrap();
    let fe = flow_equilibrium(&config, &params).unwrap();
    let last = run.trajectory.records.len() - 1;
    // rotation check over last 10P steps
    let mut rot = true;
    for t in last - 10 * p..last {
        let now = &run.trajectory.records[t];
        let next = &run.trajectory.records[t + 1];
        for path in 0..p {
            if next.paths[path].rank != (now.paths[path].rank + 1) % p { rot = false; }
        }
    }
    let tail: Vec<f64> = run.trajectory.loads_by_rank(last).iter().map(|x| (x*100.0).round()/100.0).collect();
    let hypo: Vec<f64> = fe.per_rank.iter().map(|x| (x*100.0).round()/100.0).collect();
    println!("P={p} rho={rho} sigma={sigma} eps={eps:>7}: rot={rot} tail={tail:?} hypo={hypo:?}");
}

fn main() {
    for eps in [0.0, 1e-6, 1e-3, 1e-2] {
        probe(3, 0.2, 0.0, eps, 500);
    }
    for eps in [1e-6, 1e-3] {
        probe(2, 0.5, 0.0, eps, 400);
        probe(2, 0.1, 0.0, eps, 600);
        probe(3, 0.3, 0.0, eps, 500);
        probe(3, 0.45, 0.0, eps, 500);
        probe(4, 0.15, 0.0, eps, 800);
        probe(4, 0.3, 0.0, eps, 800);
    }
}
