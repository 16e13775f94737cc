//! Saves model parameters to a tensor archive, reads them back and recovers
//! the encoder configuration from tensor names and shapes.

use tkg_oneshot::model::{EncoderConfig, EncoderMode, ModelParams};
use tkg_oneshot::tensor::{read_archive, write_archive};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for mode in [EncoderMode::Attention, EncoderMode::Flat] {
        let cfg = EncoderConfig { d: 12, ell: 6, n_max: 8, n_heads: 3, d_inner: 24, mode, ..Default::default() };
        let model = ModelParams::<f32>::init(cfg, 40, 9, 1)?;
        let mut bytes = Vec::new();
        write_archive(&model.store, &mut bytes)?;

        let store = read_archive::<f32, _>(&bytes[..])?;
        let recovered = ModelParams::infer_config(&store, cfg.ell, cfg.n_max)?;
        let reloaded = ModelParams::from_store(store, recovered, 40, 9)?;
        println!(
            "{mode:?}: {} tensors, {} scalars, {} bytes; recovered d={} ell={} dOut={} heads={}",
            reloaded.store.len(),
            reloaded.store.num_scalars(),
            bytes.len(),
            recovered.d,
            recovered.ell,
            recovered.d_out(),
            recovered.n_heads
        );
        if mode == EncoderMode::Attention {
            assert_eq!(recovered, cfg);
        }
    }
    Ok(())
}
