//! Grid search for the TV weight: mean reconstruction PSNR over a handful of
//! blood-smear scenes, per sampling ratio.
//!
//! `cargo run --release --example tv_lambda_grid -- [scenes] [wbc_root]`
//! (stand-in smears are written to a temporary directory when no root is given).

use spiseg::baselines::{tv_reconstruct, TvConfig};
use spiseg::datasets::{prepare_wbc, synthetic, WbcOptions};
use spiseg::sensing::{make_hadamard_patterns, sampling_count, simulate_measurements, HadamardOrdering, NoiseModel};

fn main() -> spiseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = tempfile::tempdir()?;
    let root = match args.get(1) {
        Some(p) => std::path::PathBuf::from(p),
        None => {
            let root = tmp.path().join("wbc");
            synthetic::write_synthetic_wbc(&root, 8, 0)?;
            root
        }
    };
    let scenes: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(6);
    let data = prepare_wbc(&root, &WbcOptions { quarter: false, seed: 0 })?;
    let test: Vec<_> = data.test.iter().take(scenes).collect();
    let dims = test[0].scene.dims();
    let lambdas = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

    print!("{:>8}", "ratio");
    for l in lambdas {
        print!("{l:>9.0e}");
    }
    println!();
    for ratio in [1.0, 0.1, 0.05, 0.01] {
        let bank = make_hadamard_patterns(sampling_count(ratio, dims.0 * dims.1)?, dims, HadamardOrdering::Sequency)?;
        print!("{ratio:>8}");
        for lambda in lambdas {
            let cfg = TvConfig { lambda, ..TvConfig::default() };
            let mut total = 0.0;
            for s in &test {
                let m = simulate_measurements(&s.scene, &bank, &NoiseModel::None)?;
                let rec = tv_reconstruct(&m, &bank, &cfg)?;
                let mse = (&rec.pixels - &s.scene.pixels()).mapv(|v| v * v).mean().unwrap_or(0.0);
                total += 10.0 * (1.0 / mse).log10();
            }
            print!("{:>9.2}", total / test.len() as f64);
        }
        println!();
    }
    Ok(())
}
