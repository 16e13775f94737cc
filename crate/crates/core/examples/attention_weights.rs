//! Encodes one entity's temporal neighborhood and prints the per-head
//! attention matrices over its history snapshots.

use tkg_oneshot::kg::{EntityId, Quadruple, TemporalKG, Timestamp};
use tkg_oneshot::model::{encode_with_attention, EncoderConfig, ModelParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // entity 0 interacts with 1..4 at ticks 0..3 over two relations
    let quads: Vec<Quadruple> = (0..4).map(|t| Quadruple::new(0, t % 2, 1 + t, t)).collect();
    let graph = TemporalKG::new(quads, 5, 2);
    let cfg = EncoderConfig { d: 8, ell: 4, n_max: 4, n_heads: 2, d_inner: 16, ..Default::default() };
    let model = ModelParams::<f64>::init(cfg, 5, 2, 7)?;

    let history = graph.temporal_neighborhood(EntityId(0), Timestamp(4), cfg.ell, cfg.n_max);
    for (i, snap) in history.snapshots.iter().enumerate() {
        println!("snapshot {i}: {} neighbor pair(s)", snap.len());
    }
    let (h, weights) = encode_with_attention(&model, &history, EntityId(0))?;
    println!("h_e = {:.4?}", h.data());
    for (head, w) in weights.iter().enumerate() {
        println!("head {head}:");
        for i in 0..cfg.ell {
            println!("  {:.3?}", w.row(i));
        }
    }
    Ok(())
}
