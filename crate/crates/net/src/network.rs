//! Two U-Net branches, one for the blurry image and one for the blur map,
//! exchanging features at every resolution level.
//!
//! Per branch, with `w_l = base_width * 2^l`:
//! a stem I(c_in -> w_0); for each encoder level a cross fuse
//! I(2 w_l -> w_l) over `[own, sibling]` followed by III(w_l -> w_{l+1});
//! at the bottom a cross fuse and II; for each decoder level
//! IV(w_{l+1} -> w_l) with the level's fused encoder features as skip, then
//! a cross fuse. V joins the two top-level outputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svbr_core::kernels::MAX_RADIUS;
use svbr_core::{BlurField, ImageGrid};

use crate::blocks::{
    apply_bn_stats, BlockI, BlockII, BlockIICache, BlockIII, BlockIIICache, BlockIV, BlockIVCache,
    BlockKind, BlockSpec, BlockV, BlockVCache, BnStat, ConvBn, ConvBnCache, Mode, Pass,
};
use crate::error::{NetError, Result};
use crate::ops;
use crate::params::{Grads, ParamBuilder, ParamStore};
use crate::tensor::Tensor;

pub const IMAGE_CHANNELS: usize = 3;
pub const MAP_CHANNELS: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of downsampling blocks per branch.
    pub depth: usize,
    pub base_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_width: 32,
        }
    }
}

impl NetworkConfig {
    pub fn toy() -> Self {
        Self {
            depth: 2,
            base_width: 8,
        }
    }

    pub fn tiny() -> Self {
        Self {
            depth: 2,
            base_width: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 {
            return Err(NetError::Config(
                "depth and base width must be positive".into(),
            ));
        }
        if self.depth > 16 || self.base_width.checked_shl(self.depth as u32 + 1).is_none() {
            return Err(NetError::Config(format!(
                "depth {} is too large",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial dims must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input_size(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if height == 0 || width == 0 || !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(NetError::Input(format!(
                "{height}x{width} input is not divisible by {d} (depth {})",
                self.depth
            )));
        }
        Ok(())
    }

    /// Every block of both branches and the head, with its path prefix.
    pub fn block_specs(&self) -> Result<Vec<(String, BlockSpec)>> {
        self.validate()?;
        let mut out = Vec::new();
        for (branch, cin) in [("img", IMAGE_CHANNELS), ("map", MAP_CHANNELS)] {
            out.push((
                format!("{branch}.stem"),
                BlockSpec::new(BlockKind::I, cin, self.width(0))?,
            ));
            for l in 0..self.depth {
                let w = self.width(l);
                out.push((
                    format!("{branch}.enc{l}.fuse"),
                    BlockSpec::new(BlockKind::I, 2 * w, w)?,
                ));
                out.push((
                    format!("{branch}.enc{l}.down"),
                    BlockSpec::new(BlockKind::III, w, 2 * w)?,
                ));
            }
            let wd = self.width(self.depth);
            out.push((
                format!("{branch}.bottom.fuse"),
                BlockSpec::new(BlockKind::I, 2 * wd, wd)?,
            ));
            out.push((
                format!("{branch}.bottom.res"),
                BlockSpec::new(BlockKind::II, wd, wd)?,
            ));
            for l in (0..self.depth).rev() {
                let w = self.width(l);
                out.push((
                    format!("{branch}.dec{l}.up"),
                    BlockSpec::new(BlockKind::IV, 2 * w, w)?,
                ));
                out.push((
                    format!("{branch}.dec{l}.fuse"),
                    BlockSpec::new(BlockKind::I, 2 * w, w)?,
                ));
            }
        }
        out.push((
            "out".into(),
            BlockSpec::new(BlockKind::V, 2 * self.width(0), 3)?,
        ));
        Ok(out)
    }

    /// Closed-form count of optimized scalars.
    pub fn analytic_param_count(&self) -> Result<usize> {
        Ok(self
            .block_specs()?
            .iter()
            .map(|(_, s)| s.trainable_params())
            .sum())
    }

    /// `(channels, height, width)` of the encoder features entering each
    /// downsampling block, then of the bottom level.
    pub fn encoder_shapes(&self, height: usize, width: usize) -> Result<Vec<[usize; 3]>> {
        self.validate()?;
        self.check_input_size(height, width)?;
        Ok((0..=self.depth)
            .map(|l| [self.width(l), height >> l, width >> l])
            .collect())
    }
}

#[derive(Clone, Debug)]
struct Branch {
    stem: BlockI,
    enc_fuse: Vec<BlockI>,
    down: Vec<BlockIII>,
    bottom_fuse: BlockI,
    bottom: BlockII,
    /// Indexed by level, not by execution order.
    up: Vec<BlockIV>,
    dec_fuse: Vec<BlockI>,
}

#[derive(Clone, Debug)]
struct BranchCache {
    stem: Option<ConvBnCache>,
    enc_fuse: Vec<ConvBnCache>,
    down: Vec<BlockIIICache>,
    bottom_fuse: Option<ConvBnCache>,
    bottom: Option<BlockIICache>,
    up: Vec<Option<BlockIVCache>>,
    dec_fuse: Vec<Option<ConvBnCache>>,
}

impl BranchCache {
    fn new(depth: usize) -> Self {
        Self {
            stem: None,
            enc_fuse: Vec::with_capacity(depth),
            down: Vec::with_capacity(depth),
            bottom_fuse: None,
            bottom: None,
            up: vec![None; depth],
            dec_fuse: vec![None; depth],
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    img: BranchCache,
    map: BranchCache,
    out: BlockVCache,
    mode: Mode,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    params: ParamStore,
    img: Branch,
    map: Branch,
    out: BlockV,
}

fn build_branch(
    b: &mut ParamBuilder<'_>,
    name: &str,
    cin: usize,
    cfg: &NetworkConfig,
) -> Result<Branch> {
    let w0 = cfg.width(0);
    let stem = ConvBn::block_i(b, &format!("{name}.stem"), BlockKind::I, cin, w0);
    let mut enc_fuse = Vec::new();
    let mut down = Vec::new();
    for l in 0..cfg.depth {
        let w = cfg.width(l);
        enc_fuse.push(ConvBn::block_i(
            b,
            &format!("{name}.enc{l}.fuse"),
            BlockKind::I,
            2 * w,
            w,
        ));
        down.push(BlockIII::build(
            b,
            &format!("{name}.enc{l}.down"),
            BlockSpec::new(BlockKind::III, w, 2 * w)?,
        ));
    }
    let wd = cfg.width(cfg.depth);
    let bottom_fuse = ConvBn::block_i(b, &format!("{name}.bottom.fuse"), BlockKind::I, 2 * wd, wd);
    let bottom = BlockII::build(
        b,
        &format!("{name}.bottom.res"),
        BlockSpec::new(BlockKind::II, wd, wd)?,
    );
    let mut up = Vec::new();
    let mut dec_fuse = Vec::new();
    for l in 0..cfg.depth {
        let w = cfg.width(l);
        up.push(BlockIV::build(
            b,
            &format!("{name}.dec{l}.up"),
            BlockSpec::new(BlockKind::IV, 2 * w, w)?,
        ));
        dec_fuse.push(ConvBn::block_i(
            b,
            &format!("{name}.dec{l}.fuse"),
            BlockKind::I,
            2 * w,
            w,
        ));
    }
    Ok(Branch {
        stem,
        enc_fuse,
        down,
        bottom_fuse,
        bottom,
        up,
        dec_fuse,
    })
}

/// Runs both branches' cross-fuse blocks on `[own, sibling]`.
fn cross_fuse(
    ps: &ParamStore,
    img_block: &BlockI,
    map_block: &BlockI,
    img: &Tensor,
    map: &Tensor,
    pass: &mut Pass,
) -> Result<((Tensor, ConvBnCache), (Tensor, ConvBnCache))> {
    let a = img_block.forward(ps, &ops::concat(img, map), pass)?;
    let b = map_block.forward(ps, &ops::concat(map, img), pass)?;
    Ok((a, b))
}

/// Adjoint of [`cross_fuse`]: gradients with respect to the image-branch and
/// map-branch inputs.
#[allow(clippy::too_many_arguments)]
fn cross_fuse_backward(
    ps: &ParamStore,
    img_block: &BlockI,
    map_block: &BlockI,
    img_cache: &ConvBnCache,
    map_cache: &ConvBnCache,
    d_img: &Tensor,
    d_map: &Tensor,
    grads: &mut Grads,
) -> (Tensor, Tensor) {
    let w = img_block.out_channels;
    let (mut gi, gm_from_img) =
        ops::split_channels(&img_block.backward(ps, img_cache, d_img, grads), w);
    let (mut gm, gi_from_map) =
        ops::split_channels(&map_block.backward(ps, map_cache, d_map, grads), w);
    gi.add_assign(&gi_from_map);
    gm.add_assign(&gm_from_img);
    (gi, gm)
}

impl Network {
    /// Fresh network with He-normal weights drawn from `seed`, rounded to
    /// single precision.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder {
            store: &mut params,
            rng: &mut rng,
        };
        let img = build_branch(&mut b, "img", IMAGE_CHANNELS, &config)?;
        let map = build_branch(&mut b, "map", MAP_CHANNELS, &config)?;
        let out = BlockV::build(
            &mut b,
            "out",
            BlockSpec::new(BlockKind::V, 2 * config.width(0), 3)?,
        );
        params.round_to_f32();
        Ok(Self {
            config,
            params,
            img,
            map,
            out,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn apply_bn_stats(&mut self, stats: &[BnStat]) {
        apply_bn_stats(&mut self.params, stats);
    }

    fn check_inputs(&self, image: &Tensor, map: &Tensor) -> Result<()> {
        let [n, c, h, w] = image.shape();
        if c != IMAGE_CHANNELS {
            return Err(NetError::Input(format!(
                "expected an RGB image batch, got {c} channels"
            )));
        }
        if map.shape() != [n, MAP_CHANNELS, h, w] {
            return Err(NetError::Input(format!(
                "blur map batch {:?} does not match image batch {:?}",
                map.shape(),
                image.shape()
            )));
        }
        if n == 0 {
            return Err(NetError::Input("empty batch".into()));
        }
        self.config.check_input_size(h, w)?;
        if image
            .data()
            .iter()
            .chain(map.data())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(NetError::Input("inputs must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Batched forward pass. `image` is `[n, 3, h, w]` and `map` is
    /// `[n, 1, h, w]`, both in [0, 1]. In train mode the returned statistics
    /// should be folded into the running estimates with
    /// [`Network::apply_bn_stats`].
    pub fn forward_batch(
        &self,
        image: &Tensor,
        map: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, ForwardCache, Vec<BnStat>)> {
        self.check_inputs(image, map)?;
        let ps = &self.params;
        let depth = self.config.depth;
        let mut pass = Pass::new(mode);
        let mut ci_cache = BranchCache::new(depth);
        let mut cm_cache = BranchCache::new(depth);

        let (mut ci, c) = self.img.stem.forward(ps, image, &mut pass)?;
        ci_cache.stem = Some(c);
        let (mut cm, c) = self.map.stem.forward(ps, map, &mut pass)?;
        cm_cache.stem = Some(c);

        let mut skips = Vec::with_capacity(depth);
        for l in 0..depth {
            let ((a, ca), (b, cb)) = cross_fuse(
                ps,
                &self.img.enc_fuse[l],
                &self.map.enc_fuse[l],
                &ci,
                &cm,
                &mut pass,
            )?;
            ci_cache.enc_fuse.push(ca);
            cm_cache.enc_fuse.push(cb);
            let (di, c) = self.img.down[l].forward(ps, &a, &mut pass)?;
            ci_cache.down.push(c);
            let (dm, c) = self.map.down[l].forward(ps, &b, &mut pass)?;
            cm_cache.down.push(c);
            skips.push((a, b));
            ci = di;
            cm = dm;
        }

        let ((a, ca), (b, cb)) = cross_fuse(
            ps,
            &self.img.bottom_fuse,
            &self.map.bottom_fuse,
            &ci,
            &cm,
            &mut pass,
        )?;
        ci_cache.bottom_fuse = Some(ca);
        cm_cache.bottom_fuse = Some(cb);
        let (ri, c) = self.img.bottom.forward(ps, &a, &mut pass)?;
        ci_cache.bottom = Some(c);
        let (rm, c) = self.map.bottom.forward(ps, &b, &mut pass)?;
        cm_cache.bottom = Some(c);
        ci = ri;
        cm = rm;

        for l in (0..depth).rev() {
            let (skip_i, skip_m) = &skips[l];
            let (ui, c) = self.img.up[l].forward(ps, &ci, skip_i, &mut pass)?;
            ci_cache.up[l] = Some(c);
            let (um, c) = self.map.up[l].forward(ps, &cm, skip_m, &mut pass)?;
            cm_cache.up[l] = Some(c);
            let ((a, ca), (b, cb)) = cross_fuse(
                ps,
                &self.img.dec_fuse[l],
                &self.map.dec_fuse[l],
                &ui,
                &um,
                &mut pass,
            )?;
            ci_cache.dec_fuse[l] = Some(ca);
            cm_cache.dec_fuse[l] = Some(cb);
            ci = a;
            cm = b;
        }

        let (y, out) = self.out.forward(ps, &ci, &cm)?;
        Ok((
            y,
            ForwardCache {
                img: ci_cache,
                map: cm_cache,
                out,
                mode,
            },
            pass.stats,
        ))
    }

    /// Parameter gradients of `sum(grad_out * y)` for the `y` of the forward
    /// pass that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Grads {
        let ps = &self.params;
        let mut grads = Grads::zeros_like(ps);
        let g = &mut grads;
        let (ic, mc) = (&cache.img, &cache.map);
        let (mut di, mut dm) = self.out.backward(ps, &cache.out, grad_out, g);

        let depth = self.config.depth;
        let mut dskips = vec![None; depth];
        for l in 0..depth {
            let (dui, dum) = cross_fuse_backward(
                ps,
                &self.img.dec_fuse[l],
                &self.map.dec_fuse[l],
                ic.dec_fuse[l].as_ref().expect("decoder cache"),
                mc.dec_fuse[l].as_ref().expect("decoder cache"),
                &di,
                &dm,
                g,
            );
            let (dxi, dsi) =
                self.img.up[l].backward(ps, ic.up[l].as_ref().expect("decoder cache"), &dui, g);
            let (dxm, dsm) =
                self.map.up[l].backward(ps, mc.up[l].as_ref().expect("decoder cache"), &dum, g);
            dskips[l] = Some((dsi, dsm));
            di = dxi;
            dm = dxm;
        }

        let da = self
            .img
            .bottom
            .backward(ps, ic.bottom.as_ref().expect("bottom cache"), &di, g);
        let db = self
            .map
            .bottom
            .backward(ps, mc.bottom.as_ref().expect("bottom cache"), &dm, g);
        (di, dm) = cross_fuse_backward(
            ps,
            &self.img.bottom_fuse,
            &self.map.bottom_fuse,
            ic.bottom_fuse.as_ref().expect("bottom cache"),
            mc.bottom_fuse.as_ref().expect("bottom cache"),
            &da,
            &db,
            g,
        );

        for l in (0..depth).rev() {
            let (dsi, dsm) = dskips[l].take().expect("skip gradient");
            let mut da = self.img.down[l].backward(ps, &ic.down[l], &di, g);
            da.add_assign(&dsi);
            let mut db = self.map.down[l].backward(ps, &mc.down[l], &dm, g);
            db.add_assign(&dsm);
            (di, dm) = cross_fuse_backward(
                ps,
                &self.img.enc_fuse[l],
                &self.map.enc_fuse[l],
                &ic.enc_fuse[l],
                &mc.enc_fuse[l],
                &da,
                &db,
                g,
            );
        }

        self.img
            .stem
            .backward(ps, ic.stem.as_ref().expect("stem cache"), &di, g);
        self.map
            .stem
            .backward(ps, mc.stem.as_ref().expect("stem cache"), &dm, g);
        grads
    }

    /// Deblurs one image given its blur map (radii in pixels).
    pub fn forward(
        &self,
        image: &ImageGrid,
        blur_map: &BlurField,
        mode: Mode,
    ) -> Result<ImageGrid> {
        let (x, m) = (images_to_tensor(&[image])?, maps_to_tensor(&[blur_map])?);
        let (y, _, _) = self.forward_batch(&x, &m, mode)?;
        Ok(tensor_to_images(&y)?.remove(0))
    }
}

/// Stacks RGB images into an `[n, 3, h, w]` batch.
pub fn images_to_tensor(images: &[&ImageGrid]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| NetError::Input("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.shape() != (h, w, IMAGE_CHANNELS) {
            return Err(NetError::Input(format!(
                "expected {h}x{w} RGB images, got {:?}",
                img.shape()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec([images.len(), IMAGE_CHANNELS, h, w], data)
}

/// Stacks blur fields into an `[n, 1, h, w]` batch, scaled by the maximum
/// radius into [0, 1].
pub fn maps_to_tensor(maps: &[&BlurField]) -> Result<Tensor> {
    let first = maps
        .first()
        .ok_or_else(|| NetError::Input("empty batch".into()))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        if m.shape() != (h, w) {
            return Err(NetError::Input(format!(
                "expected {h}x{w} blur maps, got {:?}",
                m.shape()
            )));
        }
        data.extend(m.radii().iter().map(|&r| r as f64 / MAX_RADIUS));
    }
    Tensor::from_vec([maps.len(), MAP_CHANNELS, h, w], data)
}

pub fn tensor_to_images(t: &Tensor) -> Result<Vec<ImageGrid>> {
    let [n, c, h, w] = t.shape();
    (0..n)
        .map(|i| ImageGrid::from_planar(h, w, c, t.sample(i).to_vec()).map_err(NetError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_inputs(seed: u64, n: usize, h: usize, w: usize) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn([n, 3, h, w], |_, _, _, _| rng.random::<f64>());
        let m = Tensor::from_fn([n, 1, h, w], |_, _, _, _| rng.random::<f64>());
        (x, m)
    }

    #[test]
    fn shape_algebra_for_depths_one_to_four() {
        for depth in 1..=4 {
            let cfg = NetworkConfig {
                depth,
                base_width: 2,
            };
            let shapes = cfg.encoder_shapes(32, 48).unwrap();
            assert_eq!(shapes.len(), depth + 1);
            for (l, s) in shapes.iter().enumerate() {
                assert_eq!(*s, [2 << l, 32 >> l, 48 >> l]);
            }
            let net = Network::new(cfg, depth as u64).unwrap();
            let (x, m) = random_inputs(1, 1, 32, 48);
            let (y, cache, _) = net.forward_batch(&x, &m, Mode::Train).unwrap();
            assert_eq!(y.shape(), [1, 3, 32, 48]);
            for branch in [&cache.img, &cache.map] {
                assert_eq!(branch.down.len(), depth);
                for l in 0..depth {
                    let fused = &branch.enc_fuse[l];
                    assert_eq!(fused.output_shape(), [1, 2 << l, 32 >> l, 48 >> l]);
                }
            }
            assert!(cfg.check_input_size(32 + (1 << depth), 48).is_ok());
            assert!(cfg.check_input_size(32 + (1 << (depth - 1)), 48).is_err());
        }
    }

    #[test]
    fn default_toy_forward_is_valid() {
        let cfg = NetworkConfig {
            depth: 4,
            base_width: 8,
        };
        let net = Network::new(cfg, 0).unwrap();
        let (x, m) = random_inputs(2, 1, 64, 64);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _, _) = net.forward_batch(&x, &m, mode).unwrap();
            assert_eq!(y.shape(), [1, 3, 64, 64]);
            assert!(y
                .data()
                .iter()
                .all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn parameter_count_matches_enumeration() {
        for cfg in [
            NetworkConfig {
                depth: 4,
                base_width: 8,
            },
            NetworkConfig::tiny(),
            NetworkConfig {
                depth: 1,
                base_width: 1,
            },
        ] {
            let net = Network::new(cfg, 0).unwrap();
            assert_eq!(
                net.params().trainable_scalars(),
                cfg.analytic_param_count().unwrap()
            );
        }
        // Depth 1, width 1, counted by hand: stems 29 + 11, encoder fuse
        // 2x20, downsampling 2x(22 + 40 + 12), bottom fuse 2x76, bottom
        // residual 2x80, upsampling 2x(10 + 20 + 22), decoder fuse 2x20,
        // head 57.
        let by_hand = 29 + 11 + 40 + 2 * 74 + 2 * 76 + 2 * 80 + 2 * 52 + 40 + 57;
        assert_eq!(
            NetworkConfig {
                depth: 1,
                base_width: 1
            }
            .analytic_param_count()
            .unwrap(),
            by_hand
        );
    }

    #[test]
    fn eval_is_bit_deterministic() {
        let net = Network::new(NetworkConfig::tiny(), 3).unwrap();
        let (x, m) = random_inputs(4, 2, 16, 16);
        let (a, _, _) = net.forward_batch(&x, &m, Mode::Eval).unwrap();
        let (b, _, _) = net.forward_batch(&x, &m, Mode::Eval).unwrap();
        assert_eq!(a, b);
        let again = Network::new(NetworkConfig::tiny(), 3).unwrap();
        assert_eq!(again.params(), net.params());
    }

    fn constant_response(net: &Network) -> Tensor {
        let x = Tensor::from_fn([1, 3, 128, 128], |_, c, _, _| 0.2 + 0.3 * c as f64);
        let m = Tensor::from_fn([1, 1, 128, 128], |_, _, _, _| 0.4);
        net.forward_batch(&x, &m, Mode::Eval).unwrap().0
    }

    fn trained_stats_net(seed: u64) -> Network {
        let mut net = Network::new(NetworkConfig::tiny(), seed).unwrap();
        let (x, m) = random_inputs(6, 2, 32, 32);
        let (_, _, stats) = net.forward_batch(&x, &m, Mode::Train).unwrap();
        net.apply_bn_stats(&stats);
        net
    }

    // Border effects grow by one pixel per 3x3 convolution, scaled by the
    // level's stride; summed over the tiny network they stay under 40, so
    // rows and columns 48..80 of a 128x128 output are interior.
    const INTERIOR: std::ops::Range<usize> = 48..80;

    #[test]
    fn constant_inputs_give_lattice_periodic_interior() {
        // A 2x2 stride-2 transposed convolution maps a constant to a 2x2
        // tiling of its taps, so constant inputs only yield an output that
        // repeats with the coarsest stride.
        let net = trained_stats_net(5);
        let y = constant_response(&net);
        let p = net.config().divisor();
        for c in 0..3 {
            for yy in INTERIOR {
                for xx in INTERIOR {
                    let v = y.get(0, c, yy, xx);
                    assert!((y.get(0, c, yy + p, xx) - v).abs() < 1e-4);
                    assert!((y.get(0, c, yy, xx + p) - v).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn constant_inputs_give_constant_interior_with_tap_uniform_upsampling() {
        let mut net = trained_stats_net(5);
        let ids: Vec<_> = net
            .params()
            .iter()
            .filter(|(_, p)| p.name.contains(".up.up.conv.w"))
            .map(|(id, _)| id)
            .collect();
        assert_eq!(ids.len(), 2 * net.config().depth);
        for id in ids {
            for taps in net.params_mut().data_mut(id).chunks_exact_mut(4) {
                let mean = taps.iter().sum::<f64>() / 4.0;
                taps.fill(mean);
            }
        }
        let y = constant_response(&net);
        for c in 0..3 {
            let v0 = y.get(0, c, 64, 64);
            for yy in INTERIOR {
                for xx in INTERIOR {
                    assert!((y.get(0, c, yy, xx) - v0).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn running_stats_converge_to_batch_stats() {
        let mut net = Network::new(
            NetworkConfig {
                depth: 1,
                base_width: 2,
            },
            7,
        )
        .unwrap();
        let (x, m) = random_inputs(8, 2, 8, 8);
        let mut last = Vec::new();
        for _ in 0..100 {
            let (_, _, stats) = net.forward_batch(&x, &m, Mode::Train).unwrap();
            net.apply_bn_stats(&stats);
            last = stats;
        }
        // Parameters are fixed, so every pass sees identical batch statistics.
        for s in &last {
            for (r, b) in net.params().data(s.running_mean).iter().zip(&s.batch_mean) {
                assert!((r - b).abs() < 1e-3, "{r} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = Network::new(NetworkConfig::tiny(), 0).unwrap();
        let (x, m) = random_inputs(9, 1, 16, 16);
        let (x_odd, m_odd) = random_inputs(9, 1, 18, 16);
        assert!(net.forward_batch(&x_odd, &m_odd, Mode::Eval).is_err());
        let mut hot = x.clone();
        hot.data_mut()[0] = 1.5;
        assert!(net.forward_batch(&hot, &m, Mode::Eval).is_err());
        assert!(net
            .forward_batch(&x, &Tensor::zeros([1, 1, 16, 8]), Mode::Eval)
            .is_err());
        assert!(Network::new(
            NetworkConfig {
                depth: 0,
                base_width: 4
            },
            0
        )
        .is_err());
    }

    #[test]
    fn image_level_forward_round_trips_layout() {
        let net = Network::new(NetworkConfig::tiny(), 1).unwrap();
        let img = ImageGrid::from_fn(16, 16, 3, |c, y, x| ((c + y + x) % 5) as f64 / 4.0).unwrap();
        let field = BlurField::uniform(16, 16, 3.0).unwrap();
        let m = maps_to_tensor(&[&field]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.5));
        let out = net.forward(&img, &field, Mode::Eval).unwrap();
        let (y, _, _) = net
            .forward_batch(&images_to_tensor(&[&img]).unwrap(), &m, Mode::Eval)
            .unwrap();
        assert_eq!(out.data(), y.data());
    }
}
