//! Three-level U-Net regressing one residual channel from three input channels.

use hifreq_core::{Rng, Tensor};

use crate::gemm::Real;
use crate::layers::{
    concat, maxpool2, maxpool2_backward, relu, relu_backward, split, ConvLayer, LayerGrads,
    UpLayer,
};
use crate::UnetError;

pub const IN_CHANNELS: usize = 3;
pub const LEVELS: usize = 3;
/// Input height and width must be multiples of this.
pub const SIZE_MULTIPLE: usize = 1 << LEVELS;
pub const DEFAULT_WIDTH: usize = 32;
/// Trainable scalars of the width-32 model.
pub const DEFAULT_PARAM_COUNT: usize = 2_140_641;

/// Two 3x3 convolutions, each followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T: Real> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpBlock<T: Real> {
    pub up: UpLayer<T>,
    pub block: Block<T>,
}

/// Encoder widths `w, 2w, 4w`, bottleneck `8w`, mirrored decoder with skip
/// concatenation, 1x1 head without activation.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T: Real> {
    pub width: usize,
    pub encoders: Vec<Block<T>>,
    pub bottleneck: Block<T>,
    /// Deepest first.
    pub decoders: Vec<UpBlock<T>>,
    pub head: ConvLayer<T>,
}

struct BlockTrace<T: Real> {
    x: Tensor<T>,
    a1: Tensor<T>,
    a2: Tensor<T>,
}

struct DecoderTrace<T: Real> {
    up_in: Tensor<T>,
    block: BlockTrace<T>,
}

/// Activations kept by [`UNet::forward_train`] for the backward pass.
pub struct Trace<T: Real> {
    encoders: Vec<(BlockTrace<T>, Vec<u32>)>,
    bottleneck: BlockTrace<T>,
    decoders: Vec<DecoderTrace<T>>,
    head_in: Tensor<T>,
}

impl<T: Real> Block<T> {
    fn new(cin: usize, cout: usize, rng: Option<&mut Rng>) -> Self {
        match rng {
            Some(rng) => Self {
                conv1: ConvLayer::he(cin, cout, 3, rng),
                conv2: ConvLayer::he(cout, cout, 3, rng),
            },
            None => Self {
                conv1: ConvLayer::zeros(cin, cout, 3),
                conv2: ConvLayer::zeros(cout, cout, 3),
            },
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, UnetError> {
        let a1 = relu(&self.conv1.forward(x)?);
        Ok(relu(&self.conv2.forward(&a1)?))
    }

    fn forward_train(&self, x: Tensor<T>) -> Result<BlockTrace<T>, UnetError> {
        let a1 = relu(&self.conv1.forward(&x)?);
        let a2 = relu(&self.conv2.forward(&a1)?);
        Ok(BlockTrace { x, a1, a2 })
    }

    fn backward(
        &self,
        t: &BlockTrace<T>,
        da2: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, Block<T>), UnetError> {
        let d = relu_backward(&t.a2, da2);
        let (da1, g2) = self.conv2.backward(&t.a1, &d, true)?;
        let d = relu_backward(&t.a1, &da1.expect("requested"));
        let (dx, g1) = self.conv1.backward(&t.x, &d, need_dx)?;
        Ok((
            dx,
            Block {
                conv1: from_grads(g1),
                conv2: from_grads(g2),
            },
        ))
    }
}

fn from_grads<T: Real>(g: LayerGrads<T>) -> ConvLayer<T> {
    ConvLayer {
        weight: g.weight,
        bias: g.bias,
    }
}

impl<T: Real> UNet<T> {
    fn build(width: usize, mut rng: Option<&mut Rng>) -> Self {
        let w = width;
        let mut encoders = Vec::with_capacity(LEVELS);
        let mut cin = IN_CHANNELS;
        for level in 0..LEVELS {
            let cout = w << level;
            encoders.push(Block::new(cin, cout, rng.as_deref_mut()));
            cin = cout;
        }
        let bottleneck = Block::new(cin, w << LEVELS, rng.as_deref_mut());
        let mut decoders = Vec::with_capacity(LEVELS);
        for level in (0..LEVELS).rev() {
            let (deep, c) = (w << (level + 1), w << level);
            let up = match rng.as_deref_mut() {
                Some(r) => UpLayer::he(deep, c, r),
                None => UpLayer::zeros(deep, c),
            };
            decoders.push(UpBlock {
                up,
                block: Block::new(2 * c, c, rng.as_deref_mut()),
            });
        }
        let head = match rng {
            Some(r) => ConvLayer::he(w, 1, 1, r),
            None => ConvLayer::zeros(w, 1, 1),
        };
        Self {
            width,
            encoders,
            bottleneck,
            decoders,
            head,
        }
    }

    /// He-uniform weights, zero biases.
    pub fn new(width: usize, rng: &mut Rng) -> Self {
        assert!(width > 0, "width must be positive");
        Self::build(width, Some(rng))
    }

    /// All parameters zero; the output is identically zero.
    pub fn zeros(width: usize) -> Self {
        assert!(width > 0, "width must be positive");
        Self::build(width, None)
    }

    /// Zero tensors shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.width)
    }

    /// Parameter names in checkpoint order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut conv = |prefix: String| {
            names.push(format!("{prefix}.weight"));
            names.push(format!("{prefix}.bias"));
        };
        for i in 0..self.encoders.len() {
            conv(format!("enc{i}.conv1"));
            conv(format!("enc{i}.conv2"));
        }
        conv("bottleneck.conv1".into());
        conv("bottleneck.conv2".into());
        for i in 0..self.decoders.len() {
            conv(format!("dec{i}.up"));
            conv(format!("dec{i}.conv1"));
            conv(format!("dec{i}.conv2"));
        }
        conv("head".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in self.encoders.iter().chain([&self.bottleneck]) {
            out.extend([&b.conv1.weight, &b.conv1.bias, &b.conv2.weight, &b.conv2.bias]);
        }
        for d in &self.decoders {
            out.extend([
                &d.up.weight,
                &d.up.bias,
                &d.block.conv1.weight,
                &d.block.conv1.bias,
                &d.block.conv2.weight,
                &d.block.conv2.bias,
            ]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in self.encoders.iter_mut().chain([&mut self.bottleneck]) {
            out.extend([
                &mut b.conv1.weight,
                &mut b.conv1.bias,
                &mut b.conv2.weight,
                &mut b.conv2.bias,
            ]);
        }
        for d in &mut self.decoders {
            out.extend([
                &mut d.up.weight,
                &mut d.up.bias,
                &mut d.block.conv1.weight,
                &mut d.block.conv1.bias,
                &mut d.block.conv2.weight,
                &mut d.block.conv2.bias,
            ]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Same architecture with every parameter converted to `U`.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        let mut out = UNet::<U>::zeros(self.width);
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), UnetError> {
        match *x.shape() {
            [_, c, h, w] => {
                if c != IN_CHANNELS {
                    return Err(UnetError::ShapeMismatch {
                        expected: vec![x.shape()[0], IN_CHANNELS, h, w],
                        got: x.shape().to_vec(),
                    });
                }
                if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 || h == 0 || w == 0 {
                    return Err(UnetError::BadSize { height: h, width: w });
                }
                Ok(())
            }
            _ => Err(UnetError::ShapeMismatch {
                expected: vec![1, IN_CHANNELS, 0, 0],
                got: x.shape().to_vec(),
            }),
        }
    }

    /// `B x 3 x H x W` to `B x 1 x H x W`, keeping only the skip activations.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, UnetError> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(LEVELS);
        let mut y = x.clone();
        for enc in &self.encoders {
            let a = enc.forward(&y)?;
            y = maxpool2(&a)?.0;
            skips.push(a);
        }
        y = self.bottleneck.forward(&y)?;
        for dec in &self.decoders {
            let u = dec.up.forward(&y)?;
            let skip = skips.pop().expect("one skip per level");
            y = dec.block.forward(&concat(&skip, &u)?)?;
        }
        self.head.forward(&y)
    }

    /// Forward pass that records what [`UNet::backward`] needs.
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>), UnetError> {
        self.check_input(x)?;
        let mut encoders = Vec::with_capacity(LEVELS);
        let mut y = x.clone();
        for enc in &self.encoders {
            let t = enc.forward_train(y)?;
            let (pooled, arg) = maxpool2(&t.a2)?;
            y = pooled;
            encoders.push((t, arg));
        }
        let bottleneck = self.bottleneck.forward_train(y)?;
        let mut y = bottleneck.a2.clone();
        let mut decoders = Vec::with_capacity(LEVELS);
        for (dec, (skip, _)) in self.decoders.iter().zip(encoders.iter().rev()) {
            let u = dec.up.forward(&y)?;
            let t = dec.block.forward_train(concat(&skip.a2, &u)?)?;
            let up_in = std::mem::replace(&mut y, t.a2.clone());
            decoders.push(DecoderTrace { up_in, block: t });
        }
        let out = self.head.forward(&y)?;
        Ok((
            out,
            Trace {
                encoders,
                bottleneck,
                decoders,
                head_in: y,
            },
        ))
    }

    /// Parameter gradients for the upstream gradient `dout` of the output.
    pub fn backward(&self, trace: &Trace<T>, dout: &Tensor<T>) -> Result<UNet<T>, UnetError> {
        let (dy, gh) = self.head.backward(&trace.head_in, dout, true)?;
        let mut dy = dy.expect("requested");
        let mut dec_grads = Vec::with_capacity(LEVELS);
        let mut dskips = Vec::with_capacity(LEVELS);
        for (dec, t) in self.decoders.iter().zip(&trace.decoders).rev() {
            let (dc, gb) = dec.block.backward(&t.block, &dy, true)?;
            let (dskip, du) = split(&dc.expect("requested"), dec.up.cout())?;
            let (dprev, gu) = dec.up.backward(&t.up_in, &du)?;
            dec_grads.push(UpBlock {
                up: UpLayer {
                    weight: gu.weight,
                    bias: gu.bias,
                },
                block: gb,
            });
            dskips.push(dskip);
            dy = dprev;
        }
        dec_grads.reverse();
        // dskips now runs shallowest first, matching the encoders
        let (dpool, gbott) = self.bottleneck.backward(&trace.bottleneck, &dy, true)?;
        let mut dpool = dpool.expect("requested");
        let mut enc_grads = Vec::with_capacity(LEVELS);
        for (i, (enc, (t, arg))) in self.encoders.iter().zip(&trace.encoders).enumerate().rev() {
            let mut da = maxpool2_backward(t.a2.shape(), arg, &dpool)?;
            da.add_assign(&dskips[i])?;
            let (dx, g) = enc.backward(t, &da, i > 0)?;
            enc_grads.push(g);
            if let Some(dx) = dx {
                dpool = dx;
            }
        }
        enc_grads.reverse();
        Ok(UNet {
            width: self.width,
            encoders: enc_grads,
            bottleneck: gbott,
            decoders: dec_grads,
            head: from_grads(gh),
        })
    }
}

/// Closed-form parameter count for base width `w`.
pub fn param_count_formula(w: usize) -> usize {
    2088 * w * w + 79 * w + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_matches_formula() {
        for w in [1, 4, 8] {
            assert_eq!(UNet::<f32>::zeros(w).param_count(), param_count_formula(w));
        }
        assert_eq!(param_count_formula(DEFAULT_WIDTH), DEFAULT_PARAM_COUNT);
        assert_eq!(UNet::<f32>::zeros(DEFAULT_WIDTH).param_count(), DEFAULT_PARAM_COUNT);
        let m = UNet::<f32>::zeros(4);
        assert_eq!(m.param_names().len(), m.params().len());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = UNet::<f64>::zeros(2);
        let x = Tensor::from_fn(&[2, 3, 16, 24], |i| (i as f64).sin()).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 16, 24]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_sizes() {
        let m = UNet::<f32>::zeros(2);
        let x = Tensor::<f32>::zeros(&[1, 3, 12, 16]).unwrap();
        assert!(matches!(m.forward(&x), Err(UnetError::BadSize { .. })));
        let x = Tensor::<f32>::zeros(&[1, 2, 16, 16]).unwrap();
        assert!(matches!(m.forward(&x), Err(UnetError::ShapeMismatch { .. })));
    }

    #[test]
    fn train_and_inference_paths_agree() {
        let m = UNet::<f64>::new(2, &mut Rng::new(4));
        let x = Tensor::from_fn(&[2, 3, 16, 16], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).unwrap();
        let a = m.forward(&x).unwrap();
        let (b, _) = m.forward_train(&x).unwrap();
        assert_eq!(a, b);
    }
}
