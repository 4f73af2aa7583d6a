//! Scores increasingly noisy copies of a phantom with every metric.

use ssdeconv::degradation::add_gaussian;
use ssdeconv::metrics::evaluate_pair;
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::tensor::SeededRng;

fn main() -> ssdeconv::error::Result<()> {
    let clean = PhantomSpec::Texture { shape: vec![128, 128] }.generate(0)?;
    let mut rng = SeededRng::new(1);
    for sigma in [0.0, 0.02, 0.05, 0.1, 0.2] {
        let noisy = add_gaussian(&clean, sigma, &mut rng)?.clip(0.0, 1.0);
        let row = evaluate_pair(&noisy, &clean)?;
        let cells: Vec<String> = row.values.iter().map(|(m, v)| format!("{m} {v:7.4}")).collect();
        println!("sigma {sigma:<5} {}", cells.join("  "));
    }
    Ok(())
}
