//! How the concentration margin shrinks with the number of held-out samples,
//! and what that means for a pass/fail verdict.
//!
//! ```text
//! cargo run --release --example certification_bound -- [out.svg]
//! ```

use spdpc::certify::{certify, hoeffding_alpha, required_samples, CertificationConfig, CertificationReport};
use spdpc::plot::Figure;

fn main() -> spdpc::Result<()> {
    let delta = 0.01;
    println!("{:>8}  {:>10}", "r", "alpha");
    let mut curve = Vec::new();
    for r in [100, 300, 1_000, 3_000, 10_000, 33_330, 100_000] {
        let a = hoeffding_alpha(r, delta)?;
        curve.push(((r as f64).log10(), a));
        println!("{r:>8}  {a:>10.6}");
    }

    for target in [0.05, 0.02, 0.01] {
        println!("alpha <= {target}: needs r >= {}", required_samples(target, delta)?);
    }

    // 9600 successes out of 10000 held-out scenarios.
    let indicators: Vec<bool> = (0..10_000).map(|i| i % 25 != 0).collect();
    for beta in [0.9, 0.95, 0.96] {
        let cfg = CertificationConfig { beta, delta };
        let report = CertificationReport::from_indicators(indicators.clone(), 1000, 10, &cfg, 0)?;
        println!("{}", report.statement());
        assert_eq!(report.verdict, certify(report.mu_tilde, report.alpha, beta));
    }

    if let Some(path) = std::env::args().nth(1) {
        let mut fig = Figure::new("Hoeffding margin (delta = 0.01)", "log10 r", "alpha");
        fig.line(curve);
        std::fs::write(&path, fig.to_svg())?;
        println!("wrote {path}");
    }
    Ok(())
}
