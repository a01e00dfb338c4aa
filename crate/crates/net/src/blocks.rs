//! The five block types the network is assembled from, each with a forward
//! pass that records what its backward pass needs.

use std::fmt;

use crate::error::{NetError, Result};
use crate::ops::{self, BnCache, ConvGeom};
use crate::params::{Grads, ParamBuilder, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    /// 3x3 convolution, batch norm, ReLU.
    I,
    /// Two type I blocks around an identity shortcut.
    II,
    /// Downsampling: pooled double type I plus a strided 2x2 convolution.
    III,
    /// Upsampling by transposed convolution, then skip fusion.
    IV,
    /// Output head: 3x3 convolution to RGB and a logistic.
    V,
}

impl BlockKind {
    pub const ALL: [BlockKind; 5] = [
        BlockKind::I,
        BlockKind::II,
        BlockKind::III,
        BlockKind::IV,
        BlockKind::V,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::I => "I",
            BlockKind::II => "II",
            BlockKind::III => "III",
            BlockKind::IV => "IV",
            BlockKind::V => "V",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize) -> Result<Self> {
        let bad = |why: &str| {
            Err(NetError::Config(format!(
                "block {kind} {in_channels}->{out_channels}: {why}"
            )))
        };
        if in_channels == 0 || out_channels == 0 {
            return bad("channel counts must be positive");
        }
        match kind {
            BlockKind::II if out_channels != in_channels => bad("a residual block keeps its width"),
            BlockKind::III if out_channels != 2 * in_channels => {
                bad("downsampling doubles the width")
            }
            BlockKind::IV if !in_channels.is_multiple_of(2) || out_channels != in_channels / 2 => {
                bad("upsampling halves an even width")
            }
            BlockKind::V if out_channels != 3 => bad("the output block emits RGB"),
            _ => Ok(Self {
                kind,
                in_channels,
                out_channels,
            }),
        }
    }

    /// Optimized scalars in a block of this shape. Batch-norm running
    /// statistics are excluded.
    pub fn trainable_params(&self) -> usize {
        let conv_bn = |cin: usize, cout: usize, taps: usize| taps * cin * cout + 2 * cout;
        let (c, o) = (self.in_channels, self.out_channels);
        match self.kind {
            BlockKind::I => conv_bn(c, o, 9),
            BlockKind::II => 2 * conv_bn(c, c, 9),
            BlockKind::III => conv_bn(c, o, 9) + conv_bn(o, o, 9) + conv_bn(c, o, 4),
            BlockKind::IV => conv_bn(c, o, 4) + conv_bn(c, o, 9) + 2 * conv_bn(o, o, 9),
            BlockKind::V => 9 * c * o + o,
        }
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}->{})",
            self.kind, self.in_channels, self.out_channels
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running estimates are reported for update.
    Train,
    /// Running statistics.
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStat {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

pub const BN_MOMENTUM: f64 = 0.1;

/// Moves running estimates toward the observed batch statistics.
pub fn apply_bn_stats(store: &mut ParamStore, stats: &[BnStat]) {
    for s in stats {
        for (r, &b) in store.data_mut(s.running_mean).iter_mut().zip(&s.batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, &b) in store.data_mut(s.running_var).iter_mut().zip(&s.batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// State threaded through one forward pass.
#[derive(Debug)]
pub struct Pass {
    pub mode: Mode,
    pub stats: Vec<BnStat>,
}

impl Pass {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            stats: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearOp {
    Conv(ConvGeom),
    /// 2x2 transposed convolution, stride 2.
    Up2,
}

/// Convolution without bias, batch norm, optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub weight: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub op: LinearOp,
    pub relu: bool,
}

/// A type I block.
pub type BlockI = ConvBn;

#[derive(Clone, Debug)]
pub struct ConvBnCache {
    x: Tensor,
    z: Tensor,
    bn: Option<BnCache>,
    y: Tensor,
}

impl ConvBnCache {
    pub fn output_shape(&self) -> [usize; 4] {
        self.y.shape()
    }
}

impl ConvBn {
    pub(crate) fn build(
        b: &mut ParamBuilder<'_>,
        prefix: &str,
        kind: BlockKind,
        cin: usize,
        cout: usize,
        op: LinearOp,
        relu: bool,
    ) -> Self {
        let (shape, fan_in) = match op {
            LinearOp::Conv(g) => (
                vec![cout, cin, g.kernel, g.kernel],
                cin * g.kernel * g.kernel,
            ),
            LinearOp::Up2 => (vec![cin, cout, 2, 2], cin),
        };
        Self {
            weight: b.he_normal(format!("{prefix}.conv.w"), shape, fan_in, kind),
            gamma: b.constant(format!("{prefix}.bn.gamma"), cout, 1.0, kind, true),
            beta: b.constant(format!("{prefix}.bn.beta"), cout, 0.0, kind, true),
            running_mean: b.constant(format!("{prefix}.bn.running_mean"), cout, 0.0, kind, false),
            running_var: b.constant(format!("{prefix}.bn.running_var"), cout, 1.0, kind, false),
            in_channels: cin,
            out_channels: cout,
            op,
            relu,
        }
    }

    pub(crate) fn block_i(
        b: &mut ParamBuilder<'_>,
        prefix: &str,
        kind: BlockKind,
        cin: usize,
        cout: usize,
    ) -> Self {
        Self::build(
            b,
            prefix,
            kind,
            cin,
            cout,
            LinearOp::Conv(ConvGeom::SAME3),
            true,
        )
    }

    pub fn param_ids(&self) -> [ParamId; 5] {
        [
            self.weight,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
        ]
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Tensor,
        pass: &mut Pass,
    ) -> Result<(Tensor, ConvBnCache)> {
        if x.channels() != self.in_channels {
            return Err(NetError::Shape(format!(
                "expected {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let w = ps.data(self.weight);
        let z = match self.op {
            LinearOp::Conv(g) => {
                if g.output_size(x.height(), x.width()).is_none() {
                    return Err(NetError::Shape(format!(
                        "{}x{} input is smaller than a {}x{} kernel",
                        x.height(),
                        x.width(),
                        g.kernel,
                        g.kernel
                    )));
                }
                ops::conv2d(x, w, self.out_channels, None, g)
            }
            LinearOp::Up2 => ops::conv_transpose2(x, w, self.out_channels),
        };
        let (gamma, beta) = (ps.data(self.gamma), ps.data(self.beta));
        let (n, bn) = match pass.mode {
            Mode::Train => {
                let (n, cache) = ops::batch_norm_train(&z, gamma, beta);
                pass.stats.push(BnStat {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    batch_mean: cache.mean.clone(),
                    batch_var: cache.var_unbiased.clone(),
                });
                (n, Some(cache))
            }
            Mode::Eval => (
                ops::batch_norm_eval(
                    &z,
                    gamma,
                    beta,
                    ps.data(self.running_mean),
                    ps.data(self.running_var),
                ),
                None,
            ),
        };
        let y = if self.relu { ops::relu(&n) } else { n };
        Ok((
            y.clone(),
            ConvBnCache {
                x: x.clone(),
                z,
                bn,
                y,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &ConvBnCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> Tensor {
        let dn = if self.relu {
            ops::relu_backward(&cache.y, dy)
        } else {
            dy.clone()
        };
        let gamma = ps.data(self.gamma);
        let (dz, dgamma, dbeta) = match &cache.bn {
            Some(bn) => ops::batch_norm_train_backward(&dn, gamma, bn),
            None => ops::batch_norm_eval_backward(
                &cache.z,
                &dn,
                gamma,
                ps.data(self.running_mean),
                ps.data(self.running_var),
            ),
        };
        grads.accumulate(self.gamma, &dgamma);
        grads.accumulate(self.beta, &dbeta);
        let w = ps.data(self.weight);
        let (dx, dw) = match self.op {
            LinearOp::Conv(g) => {
                let (dx, dw, _) = ops::conv2d_backward(&cache.x, w, &dz, g);
                (dx, dw)
            }
            LinearOp::Up2 => ops::conv_transpose2_backward(&cache.x, w, &dz),
        };
        grads.accumulate(self.weight, &dw);
        dx
    }
}

/// `x + I(I(x))`.
#[derive(Clone, Debug)]
pub struct BlockII {
    pub first: BlockI,
    pub second: BlockI,
}

#[derive(Clone, Debug)]
pub struct BlockIICache {
    first: ConvBnCache,
    second: ConvBnCache,
}

impl BlockII {
    pub(crate) fn build(b: &mut ParamBuilder<'_>, prefix: &str, spec: BlockSpec) -> Self {
        debug_assert_eq!(spec.kind, BlockKind::II);
        let c = spec.in_channels;
        Self {
            first: ConvBn::block_i(b, &format!("{prefix}.a"), BlockKind::II, c, c),
            second: ConvBn::block_i(b, &format!("{prefix}.b"), BlockKind::II, c, c),
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Tensor,
        pass: &mut Pass,
    ) -> Result<(Tensor, BlockIICache)> {
        let (t, first) = self.first.forward(ps, x, pass)?;
        let (mut y, second) = self.second.forward(ps, &t, pass)?;
        y.add_assign(x);
        Ok((y, BlockIICache { first, second }))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &BlockIICache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> Tensor {
        let dt = self.second.backward(ps, &cache.second, dy, grads);
        let mut dx = self.first.backward(ps, &cache.first, &dt, grads);
        dx.add_assign(dy);
        dx
    }
}

/// Halves the resolution and doubles the width:
/// `avgpool(I(I(x))) + BN(conv2x2_stride2(x))`.
#[derive(Clone, Debug)]
pub struct BlockIII {
    pub pool_a: BlockI,
    pub pool_b: BlockI,
    pub stride: ConvBn,
}

#[derive(Clone, Debug)]
pub struct BlockIIICache {
    pool_a: ConvBnCache,
    pool_b: ConvBnCache,
    pooled_shape: [usize; 4],
    stride: ConvBnCache,
}

impl BlockIII {
    pub(crate) fn build(b: &mut ParamBuilder<'_>, prefix: &str, spec: BlockSpec) -> Self {
        debug_assert_eq!(spec.kind, BlockKind::III);
        let (c, o) = (spec.in_channels, spec.out_channels);
        Self {
            pool_a: ConvBn::block_i(b, &format!("{prefix}.pool_a"), BlockKind::III, c, o),
            pool_b: ConvBn::block_i(b, &format!("{prefix}.pool_b"), BlockKind::III, o, o),
            stride: ConvBn::build(
                b,
                &format!("{prefix}.stride"),
                BlockKind::III,
                c,
                o,
                LinearOp::Conv(ConvGeom::DOWN2),
                false,
            ),
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Tensor,
        pass: &mut Pass,
    ) -> Result<(Tensor, BlockIIICache)> {
        if !x.height().is_multiple_of(2) || !x.width().is_multiple_of(2) {
            return Err(NetError::Shape(format!(
                "downsampling needs even spatial dims, got {}x{}",
                x.height(),
                x.width()
            )));
        }
        let (a, pool_a) = self.pool_a.forward(ps, x, pass)?;
        let (b, pool_b) = self.pool_b.forward(ps, &a, pass)?;
        let mut y = ops::avg_pool2(&b);
        let (s, stride) = self.stride.forward(ps, x, pass)?;
        y.add_assign(&s);
        Ok((
            y,
            BlockIIICache {
                pool_a,
                pool_b,
                pooled_shape: b.shape(),
                stride,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &BlockIIICache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> Tensor {
        let db = ops::avg_pool2_backward(cache.pooled_shape, dy);
        let da = self.pool_b.backward(ps, &cache.pool_b, &db, grads);
        let mut dx = self.pool_a.backward(ps, &cache.pool_a, &da, grads);
        dx.add_assign(&self.stride.backward(ps, &cache.stride, dy, grads));
        dx
    }
}

/// Doubles the resolution and halves the width. The upsampled features are
/// concatenated with the skip tensor, fused back to half width by a type I
/// convolution and refined by a residual block.
#[derive(Clone, Debug)]
pub struct BlockIV {
    pub up: ConvBn,
    pub fuse: BlockI,
    pub refine: BlockII,
}

#[derive(Clone, Debug)]
pub struct BlockIVCache {
    up: ConvBnCache,
    fuse: ConvBnCache,
    refine: BlockIICache,
}

impl BlockIV {
    pub(crate) fn build(b: &mut ParamBuilder<'_>, prefix: &str, spec: BlockSpec) -> Self {
        debug_assert_eq!(spec.kind, BlockKind::IV);
        let (c, o) = (spec.in_channels, spec.out_channels);
        let up = ConvBn::build(
            b,
            &format!("{prefix}.up"),
            BlockKind::IV,
            c,
            o,
            LinearOp::Up2,
            true,
        );
        let fuse = ConvBn::block_i(b, &format!("{prefix}.fuse"), BlockKind::IV, c, o);
        let p = format!("{prefix}.refine");
        let refine = BlockII {
            first: ConvBn::block_i(b, &format!("{p}.a"), BlockKind::IV, o, o),
            second: ConvBn::block_i(b, &format!("{p}.b"), BlockKind::IV, o, o),
        };
        Self { up, fuse, refine }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Tensor,
        skip: &Tensor,
        pass: &mut Pass,
    ) -> Result<(Tensor, BlockIVCache)> {
        let (u, up) = self.up.forward(ps, x, pass)?;
        if skip.shape() != u.shape() {
            return Err(NetError::Shape(format!(
                "skip tensor {:?} does not match upsampled {:?}",
                skip.shape(),
                u.shape()
            )));
        }
        let (f, fuse) = self.fuse.forward(ps, &ops::concat(&u, skip), pass)?;
        let (y, refine) = self.refine.forward(ps, &f, pass)?;
        Ok((y, BlockIVCache { up, fuse, refine }))
    }

    /// Returns the gradients with respect to `x` and `skip`.
    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &BlockIVCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> (Tensor, Tensor) {
        let df = self.refine.backward(ps, &cache.refine, dy, grads);
        let dc = self.fuse.backward(ps, &cache.fuse, &df, grads);
        let (du, dskip) = ops::split_channels(&dc, self.up.out_channels);
        (self.up.backward(ps, &cache.up, &du, grads), dskip)
    }
}

/// Joins both branches into an RGB image in [0, 1].
#[derive(Clone, Debug)]
pub struct BlockV {
    pub weight: ParamId,
    pub bias: ParamId,
    pub branch_channels: usize,
}

#[derive(Clone, Debug)]
pub struct BlockVCache {
    x: Tensor,
    y: Tensor,
}

impl BlockV {
    pub(crate) fn build(b: &mut ParamBuilder<'_>, prefix: &str, spec: BlockSpec) -> Self {
        debug_assert_eq!(spec.kind, BlockKind::V);
        let c = spec.in_channels;
        Self {
            weight: b.filled(
                format!("{prefix}.conv.w"),
                vec![3, c, 3, 3],
                0.0,
                BlockKind::V,
                true,
            ),
            bias: b.constant(format!("{prefix}.conv.b"), 3, 0.0, BlockKind::V, true),
            branch_channels: c / 2,
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        img: &Tensor,
        map: &Tensor,
    ) -> Result<(Tensor, BlockVCache)> {
        if img.shape() != map.shape() || img.channels() != self.branch_channels {
            return Err(NetError::Shape(format!(
                "output block expects two {}-channel inputs of equal shape, got {:?} and {:?}",
                self.branch_channels,
                img.shape(),
                map.shape()
            )));
        }
        let x = ops::concat(img, map);
        let z = ops::conv2d(
            &x,
            ps.data(self.weight),
            3,
            Some(ps.data(self.bias)),
            ConvGeom::SAME3,
        );
        let y = ops::sigmoid(&z);
        Ok((y.clone(), BlockVCache { x, y }))
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &BlockVCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> (Tensor, Tensor) {
        let dz = ops::sigmoid_backward(&cache.y, dy);
        let (dx, dw, db) =
            ops::conv2d_backward(&cache.x, ps.data(self.weight), &dz, ConvGeom::SAME3);
        grads.accumulate(self.weight, &dw);
        grads.accumulate(self.bias, &db);
        ops::split_channels(&dx, self.branch_channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store_and_rng(seed: u64) -> (ParamStore, ChaCha8Rng) {
        (ParamStore::new(), ChaCha8Rng::seed_from_u64(seed))
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn randomize(ps: &mut ParamStore, ids: &[ParamId], rng: &mut ChaCha8Rng, lo: f64, hi: f64) {
        for &id in ids {
            for v in ps.data_mut(id) {
                *v = rng.random_range(lo..hi);
            }
        }
    }

    fn zero(ps: &mut ParamStore, id: ParamId) {
        ps.data_mut(id).fill(0.0);
    }

    #[test]
    fn spec_invariants() {
        assert!(BlockSpec::new(BlockKind::III, 8, 16).is_ok());
        assert!(BlockSpec::new(BlockKind::III, 8, 12).is_err());
        assert!(BlockSpec::new(BlockKind::IV, 32, 16).is_ok());
        assert!(BlockSpec::new(BlockKind::IV, 7, 3).is_err());
        assert!(BlockSpec::new(BlockKind::V, 16, 3).is_ok());
        assert!(BlockSpec::new(BlockKind::V, 16, 4).is_err());
        assert!(BlockSpec::new(BlockKind::II, 4, 8).is_err());
        assert!(BlockSpec::new(BlockKind::I, 0, 8).is_err());
    }

    #[test]
    fn spec_counts_match_built_blocks() {
        let specs = [
            BlockSpec::new(BlockKind::I, 3, 5).unwrap(),
            BlockSpec::new(BlockKind::II, 4, 4).unwrap(),
            BlockSpec::new(BlockKind::III, 4, 8).unwrap(),
            BlockSpec::new(BlockKind::IV, 8, 4).unwrap(),
            BlockSpec::new(BlockKind::V, 6, 3).unwrap(),
        ];
        for spec in specs {
            let (mut ps, mut rng) = store_and_rng(0);
            let mut b = ParamBuilder {
                store: &mut ps,
                rng: &mut rng,
            };
            match spec.kind {
                BlockKind::I => {
                    ConvBn::block_i(
                        &mut b,
                        "x",
                        BlockKind::I,
                        spec.in_channels,
                        spec.out_channels,
                    );
                }
                BlockKind::II => {
                    BlockII::build(&mut b, "x", spec);
                }
                BlockKind::III => {
                    BlockIII::build(&mut b, "x", spec);
                }
                BlockKind::IV => {
                    BlockIV::build(&mut b, "x", spec);
                }
                BlockKind::V => {
                    BlockV::build(&mut b, "x", spec);
                }
            }
            assert_eq!(ps.trainable_scalars(), spec.trainable_params(), "{spec}");
        }
        // 3x3x3x5 weights plus scale and shift.
        assert_eq!(
            BlockSpec::new(BlockKind::I, 3, 5)
                .unwrap()
                .trainable_params(),
            145
        );
    }

    fn block_i(seed: u64, cin: usize, cout: usize) -> (ParamStore, ChaCha8Rng, BlockI) {
        let (mut ps, mut rng) = store_and_rng(seed);
        let blk = ConvBn::block_i(
            &mut ParamBuilder {
                store: &mut ps,
                rng: &mut rng,
            },
            "t",
            BlockKind::I,
            cin,
            cout,
        );
        (ps, rng, blk)
    }

    #[test]
    fn block_i_shape_and_channel_check() {
        let (ps, mut rng, blk) = block_i(1, 4, 16);
        let x = random_tensor(&mut rng, [1, 4, 8, 8]);
        let (y, _) = blk.forward(&ps, &x, &mut Pass::new(Mode::Train)).unwrap();
        assert_eq!(y.shape(), [1, 16, 8, 8]);
        let bad = random_tensor(&mut rng, [1, 3, 8, 8]);
        assert!(blk.forward(&ps, &bad, &mut Pass::new(Mode::Eval)).is_err());
    }

    #[test]
    fn block_i_zero_weights_give_zero() {
        let (mut ps, mut rng, blk) = block_i(2, 4, 16);
        zero(&mut ps, blk.weight);
        let x = random_tensor(&mut rng, [2, 4, 8, 8]);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _) = blk.forward(&ps, &x, &mut Pass::new(mode)).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn block_i_matches_loop_oracle() {
        let (mut ps, mut rng, blk) = block_i(3, 3, 5);
        let ids = blk.param_ids();
        randomize(&mut ps, &ids[..4], &mut rng, -1.0, 1.0);
        randomize(&mut ps, &ids[4..], &mut rng, 0.2, 2.0);
        let x = random_tensor(&mut rng, [2, 3, 7, 6]);
        let (y, _) = blk.forward(&ps, &x, &mut Pass::new(Mode::Eval)).unwrap();
        let (w, g, b, m, v) = (
            ps.data(blk.weight),
            ps.data(blk.gamma),
            ps.data(blk.beta),
            ps.data(blk.running_mean),
            ps.data(blk.running_var),
        );
        for n in 0..2 {
            for co in 0..5 {
                for oy in 0..7 {
                    for ox in 0..6 {
                        let mut acc = 0.0;
                        for ci in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (iy, ix) = (
                                        oy as isize + ky as isize - 1,
                                        ox as isize + kx as isize - 1,
                                    );
                                    if (0..7).contains(&iy) && (0..6).contains(&ix) {
                                        acc += w[((co * 3 + ci) * 3 + ky) * 3 + kx]
                                            * x.get(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let bn = g[co] * (acc - m[co]) / (v[co] + ops::BN_EPS).sqrt() + b[co];
                        assert!((y.get(n, co, oy, ox) - bn.max(0.0)).abs() < 1e-5);
                    }
                }
            }
        }
    }

    fn block_ii(seed: u64, c: usize) -> (ParamStore, ChaCha8Rng, BlockII) {
        let (mut ps, mut rng) = store_and_rng(seed);
        let blk = BlockII::build(
            &mut ParamBuilder {
                store: &mut ps,
                rng: &mut rng,
            },
            "r",
            BlockSpec::new(BlockKind::II, c, c).unwrap(),
        );
        (ps, rng, blk)
    }

    #[test]
    fn block_ii_zero_inner_weights_is_identity() {
        let (mut ps, mut rng, blk) = block_ii(4, 16);
        zero(&mut ps, blk.first.weight);
        zero(&mut ps, blk.second.weight);
        let x = random_tensor(&mut rng, [1, 16, 8, 8]);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _) = blk.forward(&ps, &x, &mut Pass::new(mode)).unwrap();
            assert_eq!(y.shape(), [1, 16, 8, 8]);
            assert_eq!(y, x);
        }
    }

    #[test]
    fn block_ii_is_input_plus_branch() {
        let (ps, mut rng, blk) = block_ii(5, 6);
        let x = random_tensor(&mut rng, [2, 6, 8, 8]);
        let mut pass = Pass::new(Mode::Train);
        let (y, _) = blk.forward(&ps, &x, &mut pass).unwrap();
        let (t, _) = blk.first.forward(&ps, &x, &mut pass).unwrap();
        let (u, _) = blk.second.forward(&ps, &t, &mut pass).unwrap();
        for ((yv, xv), uv) in y.data().iter().zip(x.data()).zip(u.data()) {
            assert_eq!(*yv, xv + uv);
        }
    }

    fn block_iii(seed: u64, c: usize) -> (ParamStore, ChaCha8Rng, BlockIII) {
        let (mut ps, mut rng) = store_and_rng(seed);
        let blk = BlockIII::build(
            &mut ParamBuilder {
                store: &mut ps,
                rng: &mut rng,
            },
            "d",
            BlockSpec::new(BlockKind::III, c, 2 * c).unwrap(),
        );
        (ps, rng, blk)
    }

    #[test]
    fn block_iii_halves_and_doubles() {
        let (ps, mut rng, blk) = block_iii(6, 8);
        let x = random_tensor(&mut rng, [1, 8, 16, 16]);
        let (y, _) = blk.forward(&ps, &x, &mut Pass::new(Mode::Train)).unwrap();
        assert_eq!(y.shape(), [1, 16, 8, 8]);
        let odd = random_tensor(&mut rng, [1, 8, 15, 16]);
        assert!(blk.forward(&ps, &odd, &mut Pass::new(Mode::Eval)).is_err());
    }

    #[test]
    fn block_iii_stride_branch_matches_oracle() {
        let (mut ps, mut rng, blk) = block_iii(7, 3);
        // A zero scale and shift silence the pooled branch.
        zero(&mut ps, blk.pool_b.gamma);
        zero(&mut ps, blk.pool_b.beta);
        let s = &blk.stride;
        randomize(
            &mut ps,
            &[s.gamma, s.beta, s.running_mean],
            &mut rng,
            -1.0,
            1.0,
        );
        randomize(&mut ps, &[s.running_var], &mut rng, 0.5, 1.5);
        let x = random_tensor(&mut rng, [1, 3, 6, 8]);
        let (y, _) = blk.forward(&ps, &x, &mut Pass::new(Mode::Eval)).unwrap();
        let (w, g, b, m, v) = (
            ps.data(s.weight),
            ps.data(s.gamma),
            ps.data(s.beta),
            ps.data(s.running_mean),
            ps.data(s.running_var),
        );
        for co in 0..6 {
            for oy in 0..3 {
                for ox in 0..4 {
                    let mut acc = 0.0;
                    for ci in 0..3 {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                acc += w[((co * 3 + ci) * 2 + ky) * 2 + kx]
                                    * x.get(0, ci, 2 * oy + ky, 2 * ox + kx);
                            }
                        }
                    }
                    let expected = g[co] * (acc - m[co]) / (v[co] + ops::BN_EPS).sqrt() + b[co];
                    assert!((y.get(0, co, oy, ox) - expected).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn block_iii_constant_input_gives_constant_interior() {
        let (ps, _, blk) = block_iii(8, 2);
        let x = Tensor::from_fn([1, 2, 16, 16], |_, c, _, _| 0.3 + 0.2 * c as f64);
        let (y, _) = blk.forward(&ps, &x, &mut Pass::new(Mode::Eval)).unwrap();
        // Two stacked 3x3 convolutions see the border up to two pixels in,
        // i.e. one pooled pixel.
        for c in 0..4 {
            let v0 = y.get(0, c, 2, 2);
            for yy in 2..6 {
                for xx in 2..6 {
                    assert!((y.get(0, c, yy, xx) - v0).abs() < 1e-12);
                }
            }
        }
    }

    fn block_iv(seed: u64, c: usize) -> (ParamStore, ChaCha8Rng, BlockIV) {
        let (mut ps, mut rng) = store_and_rng(seed);
        let blk = BlockIV::build(
            &mut ParamBuilder {
                store: &mut ps,
                rng: &mut rng,
            },
            "u",
            BlockSpec::new(BlockKind::IV, c, c / 2).unwrap(),
        );
        (ps, rng, blk)
    }

    #[test]
    fn block_iv_shape_and_skip_check() {
        let (ps, mut rng, blk) = block_iv(9, 32);
        let x = random_tensor(&mut rng, [1, 32, 4, 4]);
        let skip = random_tensor(&mut rng, [1, 16, 8, 8]);
        let (y, _) = blk
            .forward(&ps, &x, &skip, &mut Pass::new(Mode::Train))
            .unwrap();
        assert_eq!(y.shape(), [1, 16, 8, 8]);
        let bad = random_tensor(&mut rng, [1, 16, 8, 6]);
        assert!(blk
            .forward(&ps, &x, &bad, &mut Pass::new(Mode::Eval))
            .is_err());
    }

    #[test]
    fn block_iv_zero_skip_equals_sliced_fuse() {
        let (mut ps, mut rng, blk) = block_iv(10, 4);
        let f = &blk.fuse;
        randomize(
            &mut ps,
            &[f.gamma, f.beta, f.running_mean],
            &mut rng,
            -1.0,
            1.0,
        );
        randomize(&mut ps, &[f.running_var], &mut rng, 0.5, 1.5);
        let x = random_tensor(&mut rng, [1, 4, 3, 3]);
        let skip = Tensor::zeros([1, 2, 6, 6]);
        let mut pass = Pass::new(Mode::Eval);
        let (y, _) = blk.forward(&ps, &x, &skip, &mut pass).unwrap();

        // Same computation with the skip half of the fuse weights removed.
        let (u, _) = blk.up.forward(&ps, &x, &mut pass).unwrap();
        let w = ps.data(f.weight);
        let sliced: Vec<f64> = (0..2)
            .flat_map(|co| w[co * 36..co * 36 + 18].to_vec())
            .collect();
        let z = ops::conv2d(&u, &sliced, 2, None, ConvGeom::SAME3);
        let n = ops::batch_norm_eval(
            &z,
            ps.data(f.gamma),
            ps.data(f.beta),
            ps.data(f.running_mean),
            ps.data(f.running_var),
        );
        let (expected, _) = blk.refine.forward(&ps, &ops::relu(&n), &mut pass).unwrap();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn block_v(seed: u64, c: usize) -> (ParamStore, ChaCha8Rng, BlockV) {
        let (mut ps, mut rng) = store_and_rng(seed);
        let blk = BlockV::build(
            &mut ParamBuilder {
                store: &mut ps,
                rng: &mut rng,
            },
            "out",
            BlockSpec::new(BlockKind::V, 2 * c, 3).unwrap(),
        );
        // The head starts at zero; tests need a generic weight.
        for w in ps.data_mut(blk.weight) {
            *w = rng.random_range(-0.5..0.5);
        }
        (ps, rng, blk)
    }

    #[test]
    fn block_v_range_shape_and_midpoint() {
        let (mut ps, mut rng, blk) = block_v(11, 4);
        let a = Tensor::from_fn([1, 4, 64, 64], |_, _, _, _| rng.random_range(-20.0..20.0));
        let b = Tensor::from_fn([1, 4, 64, 64], |_, _, _, _| rng.random_range(-20.0..20.0));
        let (y, _) = blk.forward(&ps, &a, &b).unwrap();
        assert_eq!(y.shape(), [1, 3, 64, 64]);
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        zero(&mut ps, blk.weight);
        let (y, _) = blk.forward(&ps, &a, &b).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        let c = Tensor::zeros([1, 4, 64, 32]);
        assert!(blk.forward(&ps, &a, &c).is_err());
    }

    #[test]
    fn running_stats_move_by_momentum() {
        let (mut ps, mut rng, blk) = block_i(12, 2, 3);
        let x = random_tensor(&mut rng, [2, 2, 4, 4]);
        let mut pass = Pass::new(Mode::Train);
        blk.forward(&ps, &x, &mut pass).unwrap();
        let stat = pass.stats[0].clone();
        apply_bn_stats(&mut ps, &pass.stats);
        for c in 0..3 {
            assert!((ps.data(blk.running_mean)[c] - 0.1 * stat.batch_mean[c]).abs() < 1e-15);
            assert!((ps.data(blk.running_var)[c] - (0.9 + 0.1 * stat.batch_var[c])).abs() < 1e-15);
        }
    }
}
