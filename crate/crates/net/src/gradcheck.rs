//! Central finite-difference verification of the analytic gradients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svbr_core::metrics::{ssim_loss, ssim_loss_with_grad, SsimConfig};
use svbr_core::scenes::textured_scene;
use svbr_core::synthesis::{sv_convolve, NoiseConfig};
use svbr_core::{BlurField, ImageGrid};

use crate::blocks::{BlockII, BlockIII, BlockIV, BlockKind, BlockSpec, BlockV, ConvBn, Mode, Pass};
use crate::error::{NetError, Result};
use crate::network::{images_to_tensor, maps_to_tensor, tensor_to_images, Network, NetworkConfig};
use crate::params::{Grads, ParamBuilder, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MIN_PARAMS: usize = 200;

/// Spatial size of the tiny gradient-check profile.
pub const TINY_SIZE: usize = 16;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    pub min_params: usize,
    pub seed: u64,
    /// Negative control: perturbs the analytic gradient of every parameter
    /// belonging to this block type.
    pub corrupt: Option<BlockKind>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            tolerance: DEFAULT_TOLERANCE,
            min_params: DEFAULT_MIN_PARAMS,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub kind: BlockKind,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub probes: Vec<Probe>,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |p| p.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    /// Worst probe for every block type that was sampled.
    pub fn per_kind(&self) -> BTreeMap<BlockKind, &Probe> {
        let mut out: BTreeMap<BlockKind, &Probe> = BTreeMap::new();
        for p in &self.probes {
            let e = out.entry(p.kind).or_insert(p);
            if p.rel_error > e.rel_error {
                *e = p;
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut s = String::from("block  probes  worst_rel_error  worst_param\n");
        for (kind, worst) in self.per_kind() {
            let n = self.probes.iter().filter(|p| p.kind == kind).count();
            s.push_str(&format!(
                "{:<5}  {:>6}  {:>15.3e}  {}[{}]\n",
                kind.as_str(),
                n,
                worst.rel_error,
                worst.param,
                worst.index
            ));
        }
        s
    }
}

/// One training batch for the checker.
#[derive(Clone, Debug)]
pub struct CheckBatch {
    pub blurry: Vec<ImageGrid>,
    pub maps: Vec<BlurField>,
    pub sharp: Vec<ImageGrid>,
}

impl CheckBatch {
    /// Two synthetic `size`x`size` samples derived from `seed`: a diagonal
    /// blur ramp and a radial one. The pattern bank needs larger fields, so
    /// the radii are written out directly.
    pub fn synthetic(size: usize, seed: u64) -> Result<Self> {
        let span = (2 * size.max(2) - 2) as f64;
        let c = (size as f64 - 1.0) / 2.0;
        let ramp: Vec<f64> = (0..size * size)
            .map(|p| 0.5 + 4.5 * ((p / size + p % size) as f64 / span))
            .collect();
        let radial: Vec<f64> = (0..size * size)
            .map(|p| {
                let (dy, dx) = ((p / size) as f64 - c, (p % size) as f64 - c);
                1.0 + 4.0 * ((dy * dy + dx * dx).sqrt() / (c * std::f64::consts::SQRT_2)).min(1.0)
            })
            .collect();
        let mut batch = Self {
            blurry: Vec::new(),
            maps: Vec::new(),
            sharp: Vec::new(),
        };
        for (i, radii) in [ramp, radial].iter().enumerate() {
            let sharp = textured_scene(size, size, seed.wrapping_mul(2).wrapping_add(i as u64));
            let field = BlurField::from_f64_clamped(size, size, radii)?;
            batch
                .blurry
                .push(sv_convolve(&sharp, &field, &NoiseConfig::none())?);
            batch.maps.push(field);
            batch.sharp.push(sharp);
        }
        Ok(batch)
    }

    pub fn zeros(size: usize) -> Result<Self> {
        let img = ImageGrid::new(size, size, 3)?;
        let map = BlurField::uniform(size, size, 0.0)?;
        Ok(Self {
            blurry: vec![img.clone(), img.clone()],
            maps: vec![map.clone(), map],
            sharp: vec![img.clone(), img],
        })
    }

    fn tensors(&self) -> Result<(Tensor, Tensor)> {
        let imgs: Vec<&ImageGrid> = self.blurry.iter().collect();
        let maps: Vec<&BlurField> = self.maps.iter().collect();
        Ok((images_to_tensor(&imgs)?, maps_to_tensor(&maps)?))
    }
}

/// SSIM loss of a train-mode pass.
pub fn batch_loss(net: &Network, batch: &CheckBatch) -> Result<f64> {
    let (x, m) = batch.tensors()?;
    let (y, _, _) = net.forward_batch(&x, &m, Mode::Train)?;
    let preds = tensor_to_images(&y)?;
    let pairs: Vec<_> = preds.iter().zip(&batch.sharp).collect();
    Ok(ssim_loss(&pairs, &SsimConfig::default())?)
}

/// Train-mode SSIM loss and its parameter gradients.
pub fn loss_and_grads(net: &Network, batch: &CheckBatch) -> Result<(f64, Grads)> {
    let (x, m) = batch.tensors()?;
    let (y, cache, _) = net.forward_batch(&x, &m, Mode::Train)?;
    let preds = tensor_to_images(&y)?;
    let pairs: Vec<_> = preds.iter().zip(&batch.sharp).collect();
    let (loss, dpred) = ssim_loss_with_grad(&pairs, &SsimConfig::default())?;
    let refs: Vec<&ImageGrid> = dpred.iter().collect();
    let dy = images_to_tensor(&refs)?;
    Ok((loss, net.backward(&cache, &dy)))
}

/// Every trainable tensor is probed at least once; the remainder of the
/// budget is drawn uniformly without replacement.
fn choose_probes(
    ps: &ParamStore,
    min_params: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(ParamId, usize)> {
    let trainable: Vec<(ParamId, usize)> = ps
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| (id, p.data.len()))
        .collect();
    let mut chosen: Vec<(ParamId, usize)> = trainable
        .iter()
        .map(|&(id, n)| (id, rng.random_range(0..n)))
        .collect();
    let mut rest: Vec<(ParamId, usize)> = trainable
        .iter()
        .flat_map(|&(id, n)| (0..n).map(move |i| (id, i)))
        .filter(|c| !chosen.contains(c))
        .collect();
    rest.shuffle(rng);
    let extra = min_params.saturating_sub(chosen.len()).min(rest.len());
    chosen.extend_from_slice(&rest[..extra]);
    chosen
}

/// Compares analytic and central-difference gradients of the SSIM loss on a
/// sampled subset of parameters.
pub fn gradient_check(
    net: &Network,
    batch: &CheckBatch,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    if !(cfg.epsilon > 0.0 && cfg.tolerance > 0.0) {
        return Err(NetError::Config(
            "epsilon and tolerance must be positive".into(),
        ));
    }
    let (loss, grads) = loss_and_grads(net, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen = choose_probes(net.params(), cfg.min_params, &mut rng);
    let mut probe_net = net.clone();
    let mut probes = Vec::with_capacity(chosen.len());
    for (id, index) in chosen {
        let original = probe_net.params().data(id)[index];
        probe_net.params_mut().data_mut(id)[index] = original + cfg.epsilon;
        let plus = batch_loss(&probe_net, batch)?;
        probe_net.params_mut().data_mut(id)[index] = original - cfg.epsilon;
        let minus = batch_loss(&probe_net, batch)?;
        probe_net.params_mut().data_mut(id)[index] = original;
        let numeric = (plus - minus) / (2.0 * cfg.epsilon);
        let param = net.params().get(id);
        let mut analytic = grads.get(id)[index];
        if cfg.corrupt == Some(param.kind) {
            analytic = 1.5 * analytic + 1e-3;
        }
        probes.push(Probe {
            param: param.name.clone(),
            index,
            kind: param.kind,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(GradcheckReport {
        loss,
        tolerance: cfg.tolerance,
        probes,
    })
}

/// Gradient check of a tiny network (depth 2, base width 4) on a 16x16
/// synthetic batch. The zero-initialized output head would leave every
/// upstream gradient at exactly zero, so its weights are randomized first.
pub fn tiny_gradient_check(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut net = Network::new(NetworkConfig::tiny(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let ids: Vec<_> = net
        .params()
        .iter()
        .filter(|(_, p)| p.kind == BlockKind::V)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for v in net.params_mut().data_mut(id) {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let batch = CheckBatch::synthetic(TINY_SIZE, cfg.seed)?;
    gradient_check(&net, &batch, cfg)
}

/// A single block under test with its inputs.
#[allow(clippy::upper_case_acronyms)]
enum Isolated {
    I(ConvBn),
    II(BlockII),
    III(BlockIII),
    IV(BlockIV),
    V(BlockV),
}

impl Isolated {
    fn build(kind: BlockKind, b: &mut ParamBuilder<'_>) -> Result<(Self, Vec<[usize; 4]>)> {
        Ok(match kind {
            BlockKind::I => (
                Isolated::I(ConvBn::block_i(b, "blk", kind, 3, 4)),
                vec![[2, 3, 6, 6]],
            ),
            BlockKind::II => (
                Isolated::II(BlockII::build(b, "blk", BlockSpec::new(kind, 3, 3)?)),
                vec![[2, 3, 6, 6]],
            ),
            BlockKind::III => (
                Isolated::III(BlockIII::build(b, "blk", BlockSpec::new(kind, 2, 4)?)),
                vec![[2, 2, 8, 8]],
            ),
            BlockKind::IV => (
                Isolated::IV(BlockIV::build(b, "blk", BlockSpec::new(kind, 4, 2)?)),
                vec![[2, 4, 3, 3], [2, 2, 6, 6]],
            ),
            BlockKind::V => (
                Isolated::V(BlockV::build(b, "blk", BlockSpec::new(kind, 4, 3)?)),
                vec![[2, 2, 6, 6], [2, 2, 6, 6]],
            ),
        })
    }

    /// Projection loss `sum(r * y)` and, when `grads` is given, its
    /// gradients with respect to the inputs.
    fn run(
        &self,
        ps: &ParamStore,
        xs: &[Tensor],
        r: &Tensor,
        grads: Option<&mut Grads>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut pass = Pass::new(Mode::Train);
        let dot = |y: &Tensor| -> Result<f64> {
            if y.shape() != r.shape() {
                return Err(NetError::Shape(format!(
                    "projection {:?} vs output {:?}",
                    r.shape(),
                    y.shape()
                )));
            }
            Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
        };
        Ok(match self {
            Isolated::I(b) => {
                let (y, c) = b.forward(ps, &xs[0], &mut pass)?;
                (
                    dot(&y)?,
                    grads
                        .map(|g| vec![b.backward(ps, &c, r, g)])
                        .unwrap_or_default(),
                )
            }
            Isolated::II(b) => {
                let (y, c) = b.forward(ps, &xs[0], &mut pass)?;
                (
                    dot(&y)?,
                    grads
                        .map(|g| vec![b.backward(ps, &c, r, g)])
                        .unwrap_or_default(),
                )
            }
            Isolated::III(b) => {
                let (y, c) = b.forward(ps, &xs[0], &mut pass)?;
                (
                    dot(&y)?,
                    grads
                        .map(|g| vec![b.backward(ps, &c, r, g)])
                        .unwrap_or_default(),
                )
            }
            Isolated::IV(b) => {
                let (y, c) = b.forward(ps, &xs[0], &xs[1], &mut pass)?;
                let d = grads.map(|g| {
                    let (dx, ds) = b.backward(ps, &c, r, g);
                    vec![dx, ds]
                });
                (dot(&y)?, d.unwrap_or_default())
            }
            Isolated::V(b) => {
                let (y, c) = b.forward(ps, &xs[0], &xs[1])?;
                let d = grads.map(|g| {
                    let (da, db) = b.backward(ps, &c, r, g);
                    vec![da, db]
                });
                (dot(&y)?, d.unwrap_or_default())
            }
        })
    }

    fn output_shape(&self, inputs: &[[usize; 4]]) -> [usize; 4] {
        let [n, c, h, w] = inputs[0];
        match self {
            Isolated::I(b) => [n, b.out_channels, h, w],
            Isolated::II(_) => [n, c, h, w],
            Isolated::III(_) => [n, 2 * c, h / 2, w / 2],
            Isolated::IV(_) => [n, c / 2, 2 * h, 2 * w],
            Isolated::V(_) => [n, 3, h, w],
        }
    }
}

/// Worst relative error over every parameter and input scalar of one block
/// of the given type, tested alone under a random linear loss in train mode.
pub fn isolated_block_check(kind: BlockKind, seed: u64, epsilon: f64) -> Result<f64> {
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (block, shapes) = Isolated::build(
        kind,
        &mut ParamBuilder {
            store: &mut ps,
            rng: &mut rng,
        },
    )?;
    // Non-trivial scales and shifts.
    let ids: Vec<ParamId> = ps
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    for &id in &ids {
        if ps.get(id).shape.len() == 1 {
            for v in ps.data_mut(id) {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    let mut xs: Vec<Tensor> = shapes
        .iter()
        .map(|&s| Tensor::from_fn(s, |_, _, _, _| rng.random_range(-1.0..1.0)))
        .collect();
    let r = Tensor::from_fn(block.output_shape(&shapes), |_, _, _, _| {
        rng.random_range(-1.0..1.0)
    });

    let mut grads = Grads::zeros_like(&ps);
    let (_, dxs) = block.run(&ps, &xs, &r, Some(&mut grads))?;
    let mut worst: f64 = 0.0;
    for &id in &ids {
        for i in 0..ps.data(id).len() {
            let orig = ps.data(id)[i];
            ps.data_mut(id)[i] = orig + epsilon;
            let plus = block.run(&ps, &xs, &r, None)?.0;
            ps.data_mut(id)[i] = orig - epsilon;
            let minus = block.run(&ps, &xs, &r, None)?.0;
            ps.data_mut(id)[i] = orig;
            worst = worst.max(relative_error(
                grads.get(id)[i],
                (plus - minus) / (2.0 * epsilon),
            ));
        }
    }
    for (k, dx) in dxs.iter().enumerate() {
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + epsilon;
            let plus = block.run(&ps, &xs, &r, None)?.0;
            xs[k].data_mut()[i] = orig - epsilon;
            let minus = block.run(&ps, &xs, &r, None)?.0;
            xs[k].data_mut()[i] = orig;
            worst = worst.max(relative_error(
                dx.data()[i],
                (plus - minus) / (2.0 * epsilon),
            ));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_type_passes_in_isolation() {
        for kind in BlockKind::ALL {
            let worst = isolated_block_check(kind, 11, DEFAULT_EPSILON).unwrap();
            assert!(worst < DEFAULT_TOLERANCE, "block {kind}: {worst:e}");
        }
    }

    #[test]
    fn tiny_network_passes() {
        let report = tiny_gradient_check(&GradcheckConfig::default()).unwrap();
        assert!(report.probes.len() >= DEFAULT_MIN_PARAMS);
        assert!(report.passed(), "{}", report.table());
        assert_eq!(report.per_kind().len(), 5);
    }

    #[test]
    fn corrupted_gradient_is_caught_and_named() {
        let cfg = GradcheckConfig {
            corrupt: Some(BlockKind::III),
            min_params: 40,
            ..GradcheckConfig::default()
        };
        let report = tiny_gradient_check(&cfg).unwrap();
        assert!(!report.passed());
        assert_eq!(report.worst().unwrap().kind, BlockKind::III);
        assert!(report.worst().unwrap().param.contains(".down."));
    }

    #[test]
    fn loss_is_reproducible() {
        let batch = CheckBatch::synthetic(TINY_SIZE, 3).unwrap();
        let a = batch_loss(&Network::new(NetworkConfig::tiny(), 3).unwrap(), &batch).unwrap();
        let b = batch_loss(&Network::new(NetworkConfig::tiny(), 3).unwrap(), &batch).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((0.0..=2.0).contains(&a));
    }

    #[test]
    fn zero_batch_has_finite_gradient() {
        let net = Network::new(NetworkConfig::tiny(), 4).unwrap();
        let (loss, grads) = loss_and_grads(&net, &CheckBatch::zeros(TINY_SIZE).unwrap()).unwrap();
        assert!(loss.is_finite());
        assert!(grads.is_finite());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
