use rand::Rng;

use super::adjacency::AdjacencyPack;
use super::layers::{gcn_layer, ra_layer, va_layer, Activation, GcnParams, RaParams, VaParams};
use super::scales::ScaleMaps;
use crate::autodiff::{Bindings, ParamStore, Tape, Tensor, Var};
use crate::data::SkeletonSpec;
use crate::error::{HvisError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    /// Alternating static-dynamic and multi-scale layers, RA first.
    Hierarchical,
    /// Static-graph convolutions only.
    PlainGcn,
}

#[derive(Clone, Debug)]
pub enum EncoderLayer {
    Ra(RaParams),
    Va(VaParams),
    Gcn(GcnParams),
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub pack: AdjacencyPack,
    pub maps: ScaleMaps,
    pub kind: EncoderKind,
    pub joints: usize,
    pub frames: usize,
    pub out_channels: usize,
}

impl Encoder {
    /// `widths` lists channel counts from the input (3) to the output, one
    /// layer per consecutive pair.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        skeleton: &SkeletonSpec,
        frames: usize,
        widths: &[usize],
        kind: EncoderKind,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(HvisError::Parameter(format!("encoder widths {widths:?} need at least two positive entries")));
        }
        let pack = AdjacencyPack::new(skeleton, frames)?;
        let maps = ScaleMaps::new(skeleton, frames)?;
        let nodes = pack.nodes();
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let name = format!("encoder.{i}");
                match (kind, i % 2) {
                    (EncoderKind::PlainGcn, _) => EncoderLayer::Gcn(GcnParams::new(store, &name, w[0], w[1], rng)),
                    (EncoderKind::Hierarchical, 0) => EncoderLayer::Ra(RaParams::new(store, &name, nodes, w[0], w[1], rng)),
                    (EncoderKind::Hierarchical, _) => EncoderLayer::Va(VaParams::new(store, &name, w[0], w[1], rng)),
                }
            })
            .collect();
        Ok(Encoder {
            layers,
            pack,
            maps,
            kind,
            joints: skeleton.joint_count(),
            frames,
            out_channels: *widths.last().unwrap(),
        })
    }

    pub fn in_channels(&self) -> usize {
        match &self.layers[0] {
            EncoderLayer::Ra(p) => p.in_channels,
            EncoderLayer::Va(p) => p.in_channels,
            EncoderLayer::Gcn(p) => p.in_channels,
        }
    }

    /// `[O, N, B, C_in]` observations to `[O, N, B, C_out]` features.
    pub fn forward(&self, tape: &mut Tape, p: &mut Bindings, observed: Var) -> Result<Var> {
        let cin = self.in_channels();
        let batch = match *tape.shape(observed) {
            [o, n, b, c] if o == self.frames && n == self.joints && c == cin => b,
            ref s => {
                return Err(HvisError::dim(
                    "encode",
                    format!("expected [{}, {}, batch, {cin}], got {s:?}", self.frames, self.joints),
                ))
            }
        };
        let mut x = tape.reshape(observed, &[self.pack.nodes(), batch * cin])?;
        for layer in &self.layers {
            x = match layer {
                EncoderLayer::Ra(l) => ra_layer(tape, p, x, &self.pack, l, Activation::Tanh)?,
                EncoderLayer::Va(l) => va_layer(tape, p, x, &self.pack, &self.maps, l, Activation::Tanh)?,
                EncoderLayer::Gcn(l) => gcn_layer(tape, p, x, &self.pack, l, Activation::Tanh)?,
            };
        }
        tape.reshape(x, &[self.frames, self.joints, batch, self.out_channels])
    }

    /// Per-joint feature sequences `[C_out, O]` of one `[O, N, 3]` window.
    pub fn encode(&self, store: &ParamStore, observed: &Tensor) -> Result<Vec<Tensor>> {
        let (o, n) = match *observed.shape() {
            [o, n, _] => (o, n),
            ref s => return Err(HvisError::dim("encode", format!("window must be [frames, joints, 3], got {s:?}"))),
        };
        let mut tape = Tape::new();
        let mut p = Bindings::frozen(store);
        let x = tape.constant(observed.reshaped(&[o, n, 1, observed.shape()[2]])?);
        let y = self.forward(&mut tape, &mut p, x)?;
        let v = tape.values(y);
        let c = self.out_channels;
        Ok((0..n).map(|j| Tensor::from_fn(&[c, o], |i| v[((i % o) * n + j) * c + i / o])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::nn::SeedRng;
    use rand::SeedableRng;

    #[test]
    fn encode_shapes_and_bounds() {
        let skel = SkeletonSpec::default_body();
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &skel, 4, &[3, 8, 8, 5], EncoderKind::Hierarchical, &mut SeedRng::seed_from_u64(4)).unwrap();
        assert!(matches!(enc.layers[1], EncoderLayer::Va(_)));
        let x = Tensor::from_fn(&[4, 12, 3], |i| (i as f64 * 0.13).sin());
        let seqs = enc.encode(&store, &x).unwrap();
        assert_eq!(seqs.len(), 12);
        assert_eq!(seqs[0].shape(), &[5, 4]);
        assert!(seqs.iter().all(|s| s.values().iter().all(|v| v.abs() < 1.0)));
        assert!(enc.encode(&store, &Tensor::zeros(&[3, 12, 3])).is_err());
    }
}
