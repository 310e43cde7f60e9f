//! Desk-scale routing comparison: fitted router vs. BM25 on a seeded
//! 20-database synthetic catalog with template questions.
//!
//! cargo run --release -p dbroute --example desk_benchmark [synonym_rate]

use dbroute::desk::{run_desk, DeskConfig};
use dbroute::eval::render_reports;

fn main() {
    let mut cfg = DeskConfig::default();
    if let Some(rate) = std::env::args().nth(1) {
        cfg.synonym_rate = rate.parse().expect("synonym rate must be a number");
    }
    let out = run_desk(&cfg).expect("desk experiment");
    println!("{}", render_reports(&[out.router.clone(), out.bm25.clone()]));
    println!(
        "synonym rate {:.2}: db R@1 gap {:+.2}, table R@5 gap {:+.2}, mAP degradation ratio {:.3}, elapsed {:.1}s",
        cfg.synonym_rate,
        out.database_r1_gap(),
        out.table_r5_gap(),
        out.degradation_ratio(),
        out.elapsed.as_secs_f64()
    );
}
