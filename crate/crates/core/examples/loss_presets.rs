//! Evaluates every loss preset on the same toy tensors.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use ssdeconv::fftconv::{ConvBackend, Convolver, Padding};
use ssdeconv::losses::{composite_loss, LossInputs, LossPreset};
use ssdeconv::masking::sample_mask;
use ssdeconv::psf::gaussian_psf;
use ssdeconv::tensor::{NormStats, SeededRng};

fn main() -> ssdeconv::error::Result<()> {
    let mut rng = SeededRng::new(0);
    let shape = [32, 32];
    let field = |rng: &mut SeededRng| ArrayD::from_shape_fn(IxDyn(&shape), |_| rng.gen::<f32>() - 0.5);
    let x = field(&mut rng);
    let f_unmasked = field(&mut rng);
    let f_masked = &f_unmasked + &(field(&mut rng) * 0.1f32);
    let g = Convolver::new(gaussian_psf(2, 5, 1.0)?, ConvBackend::Direct, Padding::Reflect);
    let g_unmasked = g.apply(&f_unmasked)?;
    let g_masked = g.apply(&f_masked)?;
    let mask = sample_mask(&shape, 0.05, &mut rng)?;

    let inputs = LossInputs {
        x: x.as_slice().unwrap(),
        f_unmasked: f_unmasked.as_slice(),
        f_masked: f_masked.as_slice(),
        g_unmasked: g_unmasked.as_slice(),
        g_masked: g_masked.as_slice(),
        mask: Some(mask.indices()),
        stats: NormStats::new(0.5, 0.2)?,
    };
    for preset in LossPreset::ALL {
        println!("{:<14} {}", preset.name(), composite_loss(&inputs, &preset.config())?);
    }
    Ok(())
}
