//! Small replication run: `cargo run --release --example replicate -- dense 400 5`.

use bsqr::{run_replications, ErrorKind, Kernel, Method, Scenario, SimSettings};

fn main() -> bsqr::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("dense");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let m: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let sc = match which {
        "sparse" => Scenario::sparse(8, n, 1000, ErrorKind::StudentT3, 0.25),
        _ => Scenario::dense(n, 1000, ErrorKind::Normal, 0.5),
    };
    let methods = [Method::Bsqr(Kernel::Uniform), Method::Ald, Method::StdQr];
    let t = std::time::Instant::now();
    let s = run_replications(&sc, &methods, m, 2024, &SimSettings::desk())?;
    for r in &s.methods {
        println!(
            "{:14} mse={:.4} wmse={:.4} loss={:.5} cov={:?} rhat={:?} ess={:?} div={:?} t={:.2}s",
            r.method, r.mse, r.wmse, r.check_loss, r.coverage, r.rhat_max, r.ess_min, r.divergences_per_chain, r.wall_time
        );
    }
    let ald = s.records_for("BQR-ALD");
    let pm: f64 = ald.iter().filter_map(|r| r.predictive_mean_check_loss).sum::<f64>() / ald.len() as f64;
    println!("ALD predictive-mean loss {pm:.5}; total {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
