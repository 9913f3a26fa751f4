use super::matrix::DenseMatrix;
use super::Scalar;
use crate::error::{EgaError, Result};
use crate::rng::Stream;
use rand::Rng;

/// One dense layer: `y = act(x·W + bias)`. Weights are stored (in × out).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F> {
    pub weight: DenseMatrix<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn in_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Identity skip: the post-activation output of layer `src` is added to the
/// pre-activation of layer `dst`. Both layer outputs must have equal width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Skip {
    pub src: usize,
    pub dst: usize,
}

/// Feed-forward network with ReLU on hidden layers, identity on the output
/// layer, and optional identity skip connections.
///
/// Immutable during inference; training mutates parameters single-writer.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMlp<F> {
    layers: Vec<Layer<F>>,
    skips: Vec<Skip>,
}

/// Per-layer parameter gradients, same shapes as the layers.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub layers: Vec<(DenseMatrix<F>, Vec<F>)>,
}

/// Cached activations from a batched forward pass. `outputs[0]` is the input
/// batch, `outputs[i + 1]` the post-activation output of layer `i`.
pub struct ForwardCache<F> {
    pub outputs: Vec<DenseMatrix<F>>,
}

impl<F: Scalar> ResidualMlp<F> {
    pub fn new(layers: Vec<Layer<F>>, skips: Vec<Skip>) -> Result<Self> {
        if layers.is_empty() {
            return Err(EgaError::config("network needs at least one layer"));
        }
        for i in 1..layers.len() {
            if layers[i].in_width() != layers[i - 1].out_width() {
                return Err(EgaError::config(format!(
                    "layer {} input width {} does not match previous output width {}",
                    i,
                    layers[i].in_width(),
                    layers[i - 1].out_width()
                )));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.out_width() {
                return Err(EgaError::config("bias length does not match layer width"));
            }
        }
        for skip in &skips {
            if skip.src >= skip.dst || skip.dst >= layers.len() {
                return Err(EgaError::config("skip must connect an earlier layer forward"));
            }
            if layers[skip.src].out_width() != layers[skip.dst].out_width() {
                return Err(EgaError::config("skip connects layers of unequal width"));
            }
        }
        Ok(ResidualMlp { layers, skips })
    }

    /// Standard codec topology: in → hidden (ReLU) → hidden (ReLU, residual)
    /// → out (identity). He-uniform weights, zero biases.
    pub fn codec_net(in_width: usize, hidden: usize, out_width: usize, rng: &mut Stream) -> Self {
        let layers = vec![
            he_uniform_layer(in_width, hidden, rng),
            he_uniform_layer(hidden, hidden, rng),
            he_uniform_layer(hidden, out_width, rng),
        ];
        ResidualMlp::new(layers, vec![Skip { src: 0, dst: 1 }]).expect("codec topology is valid")
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn skips(&self) -> &[Skip] {
        &self.skips
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().unwrap().out_width()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn flatten_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[F]) {
        assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        for layer in &mut self.layers {
            let w = layer.weight.data_mut();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + b]);
            offset += b;
        }
    }

    /// Batched forward pass; each row of `input` is one sample.
    pub fn forward_batch(&self, input: &DenseMatrix<F>) -> Result<ForwardCache<F>> {
        if input.cols() != self.in_width() {
            return Err(EgaError::config(format!(
                "input width {} does not match network input {}",
                input.cols(),
                self.in_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = outputs[i].matmul(&layer.weight);
            pre.add_bias_row(&layer.bias);
            for skip in self.skips.iter().filter(|s| s.dst == i) {
                pre.add_assign(&outputs[skip.src + 1]);
            }
            if i < last {
                for v in pre.data_mut() {
                    if *v < F::zero() {
                        *v = F::zero();
                    }
                }
            }
            outputs.push(pre);
        }
        Ok(ForwardCache { outputs })
    }

    /// Backpropagate `d_output` (dL/d network output, batch shaped) through a
    /// cached forward pass. Returns parameter gradients in layer order plus
    /// the gradient with respect to the network input.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache<F>,
        d_output: DenseMatrix<F>,
    ) -> (Gradients<F>, DenseMatrix<F>) {
        let last = self.layers.len() - 1;
        // dL/d(post-activation output of layer i), accumulated lazily.
        let mut d_out: Vec<Option<DenseMatrix<F>>> = vec![None; self.layers.len()];
        d_out[last] = Some(d_output);
        let mut grads: Vec<Option<(DenseMatrix<F>, Vec<F>)>> = vec![None; self.layers.len()];
        let mut d_input: Option<DenseMatrix<F>> = None;

        for i in (0..self.layers.len()).rev() {
            let mut d_pre = d_out[i].take().expect("gradient reaches every layer");
            if i < last {
                // ReLU mask from the post-activation output.
                let post = &cache.outputs[i + 1];
                for (g, &o) in d_pre.data_mut().iter_mut().zip(post.data().iter()) {
                    if o <= F::zero() {
                        *g = F::zero();
                    }
                }
            }
            let d_weight = cache.outputs[i].transpose_matmul(&d_pre);
            let d_bias = d_pre.column_sums();
            for skip in self.skips.iter().filter(|s| s.dst == i) {
                match &mut d_out[skip.src] {
                    Some(acc) => acc.add_assign(&d_pre),
                    slot => *slot = Some(d_pre.clone()),
                }
            }
            let d_in = d_pre.matmul_transpose(&self.layers[i].weight);
            if i > 0 {
                match &mut d_out[i - 1] {
                    Some(acc) => acc.add_assign(&d_in),
                    slot => *slot = Some(d_in),
                }
            } else {
                d_input = Some(d_in);
            }
            grads[i] = Some((d_weight, d_bias));
        }

        (
            Gradients {
                layers: grads.into_iter().map(|g| g.unwrap()).collect(),
            },
            d_input.unwrap(),
        )
    }
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &ResidualMlp<F>) -> Self {
        Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| {
                    (
                        DenseMatrix::zeros(l.in_width(), l.out_width()),
                        vec![F::zero(); l.out_width()],
                    )
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(other.layers.iter()) {
            w.add_assign(ow);
            for (x, &y) in b.iter_mut().zip(ob.iter()) {
                *x += y;
            }
        }
    }

    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

fn he_uniform_layer<F: Scalar>(in_width: usize, out_width: usize, rng: &mut Stream) -> Layer<F> {
    let limit = (6.0 / in_width as f64).sqrt();
    let data = (0..in_width * out_width)
        .map(|_| F::from(rng.gen_range(-limit..limit)).unwrap())
        .collect();
    Layer {
        weight: DenseMatrix::from_vec(in_width, out_width, data).unwrap(),
        bias: vec![F::zero(); out_width],
    }
}

/// Single-sample inference.
pub fn forward<F: Scalar>(net: &ResidualMlp<F>, input: &[F]) -> Result<Vec<F>> {
    let cache = net.forward_batch(&DenseMatrix::from_row(input))?;
    Ok(cache.outputs.last().unwrap().data().to_vec())
}

/// Single-sample MSE loss (mean over output coordinates) and its parameter
/// gradients, flattened in layer order.
pub fn backward_mse<F: Scalar>(
    net: &ResidualMlp<F>,
    input: &[F],
    target: &[F],
) -> Result<(F, Vec<F>)> {
    if target.len() != net.out_width() {
        return Err(EgaError::config(format!(
            "target length {} does not match output width {}",
            target.len(),
            net.out_width()
        )));
    }
    let cache = net.forward_batch(&DenseMatrix::from_row(input))?;
    let output = cache.outputs.last().unwrap();
    let dim = F::from(target.len()).unwrap();
    let mut loss = F::zero();
    let mut d_out = DenseMatrix::zeros(1, target.len());
    let two = F::from(2.0).unwrap();
    for (k, (&y, &t)) in output.data().iter().zip(target.iter()).enumerate() {
        let diff = y - t;
        loss += diff * diff / dim;
        d_out.set(0, k, two * diff / dim);
    }
    let (grads, _) = net.backward_batch(&cache, d_out);
    Ok((loss, grads.flatten()))
}
