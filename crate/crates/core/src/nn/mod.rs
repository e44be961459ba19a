//! The deep regression network: stacked Dense -> BatchNorm -> ReLU -> Dropout
//! blocks followed by a single-unit linear head, with hand-written reverse
//! mode gradients and MSE loss. All arithmetic is `f64`.

mod layers;

pub use layers::{BatchNormCache, BatchNormLayer, DenseLayer, DropoutLayer};

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const DEFAULT_INPUT_WIDTH: usize = 1536;
pub const DEFAULT_HIDDEN_WIDTHS: [usize; 4] = [512, 256, 128, 64];
pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.1;
pub const INIT_SCHEME: &str = "uniform_sqrt6_over_fan_in";

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    pub dropout_p: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_width: DEFAULT_INPUT_WIDTH,
            hidden_widths: DEFAULT_HIDDEN_WIDTHS.to_vec(),
            dropout_p: DEFAULT_DROPOUT,
            bn_epsilon: DEFAULT_BN_EPSILON,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }
}

impl NetConfig {
    pub fn with_widths(input_width: usize, hidden_widths: &[usize]) -> Self {
        Self {
            input_width,
            hidden_widths: hidden_widths.to_vec(),
            ..Self::default()
        }
    }

    /// Full layer-width chain including the scalar output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_widths.len() + 2);
        w.push(self.input_width);
        w.extend_from_slice(&self.hidden_widths);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.bn_epsilon.is_nan() || self.bn_epsilon <= 0.0 {
            return Err(Error::Config("bn_epsilon must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config("bn_momentum must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of trainable parameters (weights, biases, gamma, beta).
    pub fn parameter_count(&self) -> usize {
        let w = self.widths();
        let dense: usize = w.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        let norm: usize = self.hidden_widths.iter().map(|h| 2 * h).sum();
        dense + norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a parameter tensor is; decides whether weight decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dense: DenseLayer,
    pub norm: BatchNormLayer,
    pub dropout: DropoutLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionNet {
    config: NetConfig,
    pub blocks: Vec<Block>,
    pub head: DenseLayer,
    mode: Mode,
    forward_id: u64,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    norm: BatchNormCache,
    normalized: Array2<f64>,
    mask: Array2<f64>,
}

/// Intermediates of one train-mode forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    id: u64,
    mode: Mode,
    blocks: Vec<BlockCache>,
    head_input: Array2<f64>,
}

impl ForwardCache {
    /// Dropout masks used by each block (scaled, 0 or 1/(1-p)).
    pub fn masks(&self) -> Vec<Array2<f64>> {
        self.blocks.iter().map(|b| b.mask.clone()).collect()
    }
}

/// Parameter gradients in [`RegressionNet::parameters`] order, plus the
/// gradient with respect to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Vec<f64>>,
    pub input: Array2<f64>,
}

enum MaskSource<'a> {
    Sample(&'a mut SplitMix64),
    Fixed(&'a [Array2<f64>]),
}

impl RegressionNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut blocks = Vec::with_capacity(config.hidden_widths.len());
        let mut in_dim = config.input_width;
        for &width in &config.hidden_widths {
            blocks.push(Block {
                dense: DenseLayer::init(in_dim, width, &mut rng),
                norm: BatchNormLayer::new(width, config.bn_momentum, config.bn_epsilon),
                dropout: DropoutLayer { p: config.dropout_p },
            });
            in_dim = width;
        }
        let head = DenseLayer::init(in_dim, 1, &mut rng);
        Ok(Self {
            config,
            blocks,
            head,
            mode: Mode::Train,
            forward_id: 0,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, p)| p.len()).sum()
    }

    /// Trainable tensors in canonical order: per block weights, bias, gamma,
    /// beta; then head weights and bias.
    pub fn parameters(&self) -> Vec<(ParamKind, &[f64])> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push((ParamKind::Weight, b.dense.weights.as_slice().expect("standard layout")));
            out.push((ParamKind::Bias, b.dense.bias.as_slice().unwrap()));
            out.push((ParamKind::Gamma, b.norm.gamma.as_slice().unwrap()));
            out.push((ParamKind::Beta, b.norm.beta.as_slice().unwrap()));
        }
        out.push((
            ParamKind::Weight,
            self.head.weights.as_slice().expect("standard layout"),
        ));
        out.push((ParamKind::Bias, self.head.bias.as_slice().unwrap()));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &mut self.blocks {
            out.push((
                ParamKind::Weight,
                b.dense.weights.as_slice_mut().expect("standard layout"),
            ));
            out.push((ParamKind::Bias, b.dense.bias.as_slice_mut().unwrap()));
            out.push((ParamKind::Gamma, b.norm.gamma.as_slice_mut().unwrap()));
            out.push((ParamKind::Beta, b.norm.beta.as_slice_mut().unwrap()));
        }
        out.push((
            ParamKind::Weight,
            self.head.weights.as_slice_mut().expect("standard layout"),
        ));
        out.push((ParamKind::Bias, self.head.bias.as_slice_mut().unwrap()));
        out
    }

    fn check_batch(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.config.input_width {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_width,
                found: batch.ncols(),
            });
        }
        if let Some(pos) = batch.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "input row {} column {}",
                pos / batch.ncols(),
                pos % batch.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass in the current mode. In train mode dropout masks are drawn
    /// from `rng` and BatchNorm running statistics are updated.
    pub fn forward(&mut self, batch: &Array2<f64>, rng: &mut SplitMix64) -> Result<(Array1<f64>, ForwardCache)> {
        self.forward_impl(batch, MaskSource::Sample(rng))
    }

    /// Train-mode forward with caller-supplied dropout masks (one per block).
    pub fn forward_with_masks(
        &mut self,
        batch: &Array2<f64>,
        masks: &[Array2<f64>],
    ) -> Result<(Array1<f64>, ForwardCache)> {
        if masks.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "expected {} dropout masks, got {}",
                self.blocks.len(),
                masks.len()
            )));
        }
        for (m, b) in masks.iter().zip(&self.blocks) {
            if m.dim() != (batch.nrows(), b.norm.width()) {
                return Err(Error::Shape(format!(
                    "dropout mask {:?} does not match ({}, {})",
                    m.dim(),
                    batch.nrows(),
                    b.norm.width()
                )));
            }
        }
        self.forward_impl(batch, MaskSource::Fixed(masks))
    }

    fn forward_impl(&mut self, batch: &Array2<f64>, mut masks: MaskSource<'_>) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_batch(batch)?;
        self.forward_id += 1;
        let id = self.forward_id;
        if self.mode == Mode::Eval {
            let out = self.predict_unchecked(batch);
            return Ok((
                out,
                ForwardCache {
                    id,
                    mode: Mode::Eval,
                    blocks: Vec::new(),
                    head_input: Array2::zeros((0, 0)),
                },
            ));
        }
        if batch.nrows() < 2 {
            return Err(Error::Shape(format!(
                "train-mode batch needs at least 2 rows for BatchNorm, got {}",
                batch.nrows()
            )));
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = batch.clone();
        for (k, block) in self.blocks.iter_mut().enumerate() {
            let z = block.dense.forward(&h);
            let (normalized, norm) = block.norm.forward_train(&z);
            let activated = normalized.mapv(|v| v.max(0.0));
            let mask = match &mut masks {
                MaskSource::Sample(rng) => block.dropout.sample_mask(h.nrows(), block.norm.width(), rng),
                MaskSource::Fixed(m) => m[k].clone(),
            };
            let out = DropoutLayer::apply(&activated, &mask);
            caches.push(BlockCache {
                input: std::mem::replace(&mut h, out),
                norm,
                normalized,
                mask,
            });
        }
        let pred = self.head.forward(&h).column(0).to_owned();
        Ok((
            pred,
            ForwardCache {
                id,
                mode: Mode::Train,
                blocks: caches,
                head_input: h,
            },
        ))
    }

    /// Eval-mode forward regardless of the current mode. Pure.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_batch(batch)?;
        Ok(self.predict_unchecked(batch))
    }

    fn predict_unchecked(&self, batch: &Array2<f64>) -> Array1<f64> {
        let mut h = batch.clone();
        for block in &self.blocks {
            let z = block.dense.forward(&h);
            h = block.norm.forward_eval(&z).mapv(|v| v.max(0.0));
        }
        self.head.forward(&h).column(0).to_owned()
    }

    /// Reverse-mode gradients for the forward call that produced `cache`.
    /// `loss_grad` is dLoss/dPrediction, one entry per batch row.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Array1<f64>) -> Result<Gradients> {
        if cache.mode != Mode::Train || cache.id != self.forward_id {
            return Err(Error::StaleCache);
        }
        if loss_grad.len() != cache.head_input.nrows() {
            return Err(Error::Shape(format!(
                "loss gradient has {} entries for a batch of {}",
                loss_grad.len(),
                cache.head_input.nrows()
            )));
        }
        let dy = loss_grad.clone().insert_axis(Axis(1));
        let (head_dw, head_db, mut dh) = self.head.backward(&cache.head_input, &dy);

        let mut per_block = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let d_act = dh * &bc.mask;
            let d_norm = ndarray::Zip::from(&d_act)
                .and(&bc.normalized)
                .map_collect(|&g, &z| if z > 0.0 { g } else { 0.0 });
            let (dz, dgamma, dbeta) = block.norm.backward(&bc.norm, &d_norm);
            let (dw, db, dx) = block.dense.backward(&bc.input, &dz);
            per_block.push([flatten(&dw), db.to_vec(), dgamma.to_vec(), dbeta.to_vec()]);
            dh = dx;
        }
        per_block.reverse();

        let mut params: Vec<Vec<f64>> = per_block.into_iter().flatten().collect();
        params.push(flatten(&head_dw));
        params.push(head_db.to_vec());
        Ok(Gradients { params, input: dh })
    }
}

fn flatten(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

pub fn init_net(config: NetConfig, seed: u64) -> Result<RegressionNet> {
    RegressionNet::new(config, seed)
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / n)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Array1<f64>> {
    check_lengths(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction length {} != target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("MSE of an empty batch".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_net(seed: u64, dropout: f64) -> RegressionNet {
        let mut cfg = NetConfig::with_widths(8, &[4, 3, 2]);
        cfg.dropout_p = dropout;
        RegressionNet::new(cfg, seed).unwrap()
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = SplitMix64::new(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.normal())
    }

    /// Loss as a function of the flat parameter vector, masks frozen.
    fn loss_at(net: &RegressionNet, batch: &Array2<f64>, target: &[f64], masks: &[Array2<f64>]) -> f64 {
        let mut probe = net.clone();
        let (pred, _) = probe.forward_with_masks(batch, masks).unwrap();
        mse_loss(pred.as_slice().unwrap(), target).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = RegressionNet::new(NetConfig::default(), 11).unwrap();
        let b = RegressionNet::new(NetConfig::default(), 11).unwrap();
        let c = RegressionNet::new(NetConfig::default(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.blocks[0].norm.gamma.iter().all(|&g| g == 1.0));
        assert!(a.blocks[0].norm.beta.iter().all(|&g| g == 0.0));
        assert!(a.blocks[0].norm.running_var.iter().all(|&g| g == 1.0));
        let bound = (6.0f64 / 1536.0).sqrt();
        let w = &a.blocks[0].dense.weights;
        assert_eq!(w.dim(), (512, 1536));
        assert!(w.iter().all(|v| v.abs() <= bound));
        // the draw should actually use the range
        assert!(w.iter().any(|v| v.abs() > 0.99 * bound));
        assert!(a.blocks.iter().all(|b| b.dense.bias.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn default_architecture_shape() {
        let net = RegressionNet::new(NetConfig::default(), 0).unwrap();
        assert_eq!(net.config().widths(), vec![1536, 512, 256, 128, 64, 1]);
        let widths: Vec<_> = net.blocks.iter().map(|b| b.dense.out_dim()).collect();
        assert_eq!(widths, DEFAULT_HIDDEN_WIDTHS);
        assert_eq!(net.head.out_dim(), 1);
        let closed_form =
            1536 * 512 + 512 + 512 * 256 + 256 + 256 * 128 + 128 + 128 * 64 + 64 + 64 + 1 + 2 * (512 + 256 + 128 + 64);
        assert_eq!(net.parameter_count(), closed_form);
        assert_eq!(net.config().parameter_count(), closed_form);
    }

    #[test]
    fn eval_zero_input_gives_zero() {
        let mut net = RegressionNet::new(NetConfig::default(), 3).unwrap();
        net.set_mode(Mode::Eval);
        let x = Array2::zeros((2, 1536));
        let (pred, _) = net.forward(&x, &mut SplitMix64::new(0)).unwrap();
        assert_eq!(pred.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn eval_is_pure_and_deterministic() {
        let mut net = small_net(5, 0.3);
        // move running stats away from their initial values
        let mut rng = SplitMix64::new(1);
        net.forward(&random_batch(6, 8, 2), &mut rng).unwrap();
        net.set_mode(Mode::Eval);
        let before = net.clone();
        let x = random_batch(5, 8, 3);
        let (a, _) = net.forward(&x, &mut rng).unwrap();
        let (b, _) = net.forward(&x, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.predict(&x).unwrap(), a);
        assert_eq!(net.blocks, before.blocks);
    }

    #[test]
    fn eval_rows_are_independent_of_batch() {
        let net = small_net(8, 0.3);
        let x = random_batch(7, 8, 4);
        let full = net.predict(&x).unwrap();
        for i in 0..7 {
            let row = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
            assert_eq!(net.predict(&row).unwrap()[0], full[i]);
        }
    }

    #[test]
    fn train_mode_rejects_single_row_and_bad_input() {
        let mut net = small_net(1, 0.3);
        let mut rng = SplitMix64::new(0);
        assert!(matches!(
            net.forward(&random_batch(1, 8, 0), &mut rng),
            Err(Error::Shape(_))
        ));
        let mut x = random_batch(3, 8, 0);
        x[[1, 2]] = f64::NAN;
        assert!(matches!(net.forward(&x, &mut rng), Err(Error::NonFinite(_))));
        assert!(matches!(
            net.forward(&random_batch(3, 7, 0), &mut rng),
            Err(Error::DimensionMismatch { expected: 8, found: 7 })
        ));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = small_net(2, 0.3);
        let mut rng = SplitMix64::new(0);
        let x = random_batch(4, 8, 1);
        let (_, first) = net.forward(&x, &mut rng).unwrap();
        let (_, second) = net.forward(&x, &mut rng).unwrap();
        let g = Array1::ones(4);
        assert!(matches!(net.backward(&first, &g), Err(Error::StaleCache)));
        assert!(net.backward(&second, &g).is_ok());

        net.set_mode(Mode::Eval);
        let (_, eval_cache) = net.forward(&x, &mut rng).unwrap();
        assert!(matches!(net.backward(&eval_cache, &g), Err(Error::StaleCache)));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut net = small_net(4, 0.3);
        let (_, cache) = net.forward(&random_batch(5, 8, 9), &mut SplitMix64::new(1)).unwrap();
        let grads = net.backward(&cache, &Array1::zeros(5)).unwrap();
        assert!(grads.params.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.input.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_rows_get_equal_input_gradients() {
        let mut net = small_net(6, 0.0);
        let base = random_batch(3, 8, 21);
        let mut x = Array2::zeros((5, 8));
        for (i, src) in [0, 1, 0, 2, 0].into_iter().enumerate() {
            x.row_mut(i).assign(&base.row(src));
        }
        let (pred, cache) = net.forward(&x, &mut SplitMix64::new(0)).unwrap();
        assert_eq!(pred[0], pred[2]);
        let target = [1.0, 0.0, 1.0, 2.0, 1.0];
        let g = mse_grad(pred.as_slice().unwrap(), &target).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        assert_eq!(grads.input.row(0), grads.input.row(2));
        assert_eq!(grads.input.row(0), grads.input.row(4));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut net = small_net(17, 0.3);
        let x = random_batch(6, 8, 23);
        let target: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let (_, cache) = net.forward(&x, &mut SplitMix64::new(5)).unwrap();
        let masks = cache.masks();
        let (pred, cache) = net.forward_with_masks(&x, &masks).unwrap();
        let grads = net
            .backward(&cache, &mse_grad(pred.as_slice().unwrap(), &target).unwrap())
            .unwrap();

        let h = 1e-5;
        let n_tensors = net.parameters().len();
        for t in 0..n_tensors {
            let len = net.parameters()[t].1.len();
            for i in 0..len {
                let mut plus = net.clone();
                plus.parameters_mut()[t].1[i] += h;
                let mut minus = net.clone();
                minus.parameters_mut()[t].1[i] -= h;
                let numeric = (loss_at(&plus, &x, &target, &masks) - loss_at(&minus, &x, &target, &masks)) / (2.0 * h);
                let analytic = grads.params[t][i];
                let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
                assert!(
                    err < 1e-6,
                    "tensor {t} index {i}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mse_loss(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mse_loss(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn mse_nonnegative_and_symmetric(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..20)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let l = mse_loss(&a, &b).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l, mse_loss(&b, &a).unwrap());
        }
    }
}
