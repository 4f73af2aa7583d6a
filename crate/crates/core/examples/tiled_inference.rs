//! Runs an untrained 3D network on a volume with and without tiling and
//! reports how closely the stitched result matches.

use ssdeconv::fftconv::convolve_call_count;
use ssdeconv::inference::{predict, TileConfig};
use ssdeconv::model::{UNet, UNetConfig};
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::tensor::NormStats;

fn main() -> ssdeconv::error::Result<()> {
    let vol = PhantomSpec::Microtubules { shape: vec![32, 96, 96], n_fibers: 12 }.generate(0)?;
    let net = UNet::new(UNetConfig::default_for(3).with_base_features(4))?;
    let stats = NormStats::of(&vol)?;
    let calls = convolve_call_count();

    let whole = predict(&net, &vol, &stats, &TileConfig::disabled())?;
    let tiles = TileConfig { tile_size: 48, overlap: 16, enabled: true };
    let tiled = predict(&net, &vol, &stats, &tiles)?;

    let diff = whole
        .raw
        .as_slice()
        .iter()
        .zip(tiled.raw.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0f32, f32::max);
    println!("untiled {:.0} ms, tiled {:.0} ms over {} tiles", whole.elapsed_ms, tiled.elapsed_ms, tiled.tiles);
    println!("max |untiled - tiled| = {diff:.2e}");
    println!("PSF convolutions during prediction: {}", convolve_call_count() - calls);
    Ok(())
}
