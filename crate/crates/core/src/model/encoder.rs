use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::layers::{
    conv_relu_backward, conv_relu_forward, linear_backward, linear_forward, mean_pool, ConvShape,
};
use super::{EncoderConfig, ModelError, Param, Params};
use crate::real::Real;
use crate::volume::{Shape3, Volume};

/// Output of the conv backbone for one input, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub shape: Shape3,
    pub data: Vec<T>,
}

/// Pooled backbone features `z` and projected embeddings `q` of the base crops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisSet<T> {
    pub z: Vec<Vec<T>>,
    pub q: Vec<Vec<T>>,
}

impl<T> BasisSet<T> {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Both representations of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub z: Vec<T>,
    pub p: Vec<T>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    cols: Vec<Vec<T>>,
    stage_out: Vec<Vec<T>>,
    proj_in: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
struct Slots {
    conv: Vec<(usize, usize)>,
    proj: Vec<(usize, Option<usize>)>,
}

/// Backbone + projector sharing one parameter set across every input path.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    config: EncoderConfig,
    convs: Vec<ConvShape>,
    slots: Slots,
    params: Params<T>,
}

/// Name, shape and init standard deviation of one tensor.
type TensorSpec = (String, Vec<usize>, f64);

fn layout(config: &EncoderConfig) -> (Vec<ConvShape>, Vec<TensorSpec>, Slots) {
    let mut convs = Vec::new();
    let mut specs = Vec::new();
    let mut slots = Slots {
        conv: Vec::new(),
        proj: Vec::new(),
    };
    let mut shape = config.input_shape;
    let mut cin = 1;
    for (i, &cout) in config.channels_per_stage.iter().enumerate() {
        let conv = ConvShape::new(shape, cin, cout);
        let fan_in = conv.patch_len();
        slots.conv.push((specs.len(), specs.len() + 1));
        specs.push((format!("stage{i}.weight"), vec![cout, fan_in], (2.0 / fan_in as f64).sqrt()));
        specs.push((format!("stage{i}.bias"), vec![cout], 0.0));
        convs.push(conv);
        shape = conv.out_shape;
        cin = cout;
    }
    let mut width = cin;
    let last = config.projector_dims.len() - 1;
    for (j, &out) in config.projector_dims.iter().enumerate() {
        let gain = if j == last { 1.0 } else { 2.0 };
        let w = specs.len();
        specs.push((format!("proj{j}.weight"), vec![out, width], (gain / width as f64).sqrt()));
        let b = config.projector_bias.then(|| {
            specs.push((format!("proj{j}.bias"), vec![out], 0.0));
            specs.len() - 1
        });
        slots.proj.push((w, b));
        width = out;
    }
    (convs, specs, slots)
}

fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

impl<T: Real> Encoder<T> {
    /// He-normal weights and zero biases drawn from `config.seed`.
    pub fn new(config: EncoderConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (convs, specs, slots) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tensors = specs
            .into_iter()
            .map(|(name, shape, std)| {
                let len = shape.iter().product();
                let data = if std > 0.0 {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    (0..len).map(|_| T::of(normal.sample(&mut rng))).collect()
                } else {
                    vec![T::zero(); len]
                };
                Param { name, shape, data }
            })
            .collect();
        Ok(Self {
            config,
            convs,
            slots,
            params: Params { tensors },
        })
    }

    /// Rebuilds an encoder around existing parameters (e.g. from a checkpoint).
    pub fn from_params(config: EncoderConfig, params: Params<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let (convs, specs, slots) = layout(&config);
        let matches = specs.len() == params.tensors.len()
            && specs
                .iter()
                .zip(&params.tensors)
                .all(|((n, s, _), p)| *n == p.name && *s == p.shape && p.data.len() == s.iter().product::<usize>());
        if !matches {
            return Err(ModelError::ParamLayout(
                "parameter names/shapes do not match the encoder config".into(),
            ));
        }
        Ok(Self {
            config,
            convs,
            slots,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn into_params(self) -> Params<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> Encoder<U> {
        Encoder {
            config: self.config.clone(),
            convs: self.convs.clone(),
            slots: self.slots.clone(),
            params: self.params.cast(),
        }
    }

    /// Shape of the last stage's feature map.
    pub fn feature_map_shape(&self) -> (usize, Shape3) {
        let last = self.convs.last().expect("at least one stage");
        (last.cout, last.out_shape)
    }

    fn input(&self, v: &Volume) -> Result<Vec<T>, ModelError> {
        if v.shape() != self.config.input_shape {
            return Err(ModelError::ShapeMismatch {
                expected: self.config.input_shape,
                found: v.shape(),
            });
        }
        Ok(v.data().iter().map(|&x| T::of(f64::from(x))).collect())
    }

    fn conv_weights(&self, stage: usize) -> (&[T], &[T]) {
        let (w, b) = self.slots.conv[stage];
        (&self.params.tensors[w].data, &self.params.tensors[b].data)
    }

    fn backbone(&self, mut act: Vec<T>, cache: Option<&mut ForwardCache<T>>) -> Vec<T> {
        let mut cache = cache;
        for (i, conv) in self.convs.iter().enumerate() {
            let (w, b) = self.conv_weights(i);
            let cols = conv.im2col(&act);
            act = conv_relu_forward(conv, &cols, w, b);
            if let Some(c) = cache.as_deref_mut() {
                c.cols.push(cols);
                c.stage_out.push(act.clone());
            }
        }
        act
    }

    /// Backbone forward pass for one input volume.
    pub fn encode(&self, v: &Volume) -> Result<FeatureMap<T>, ModelError> {
        let data = self.backbone(self.input(v)?, None);
        let (channels, shape) = self.feature_map_shape();
        Ok(FeatureMap {
            channels,
            shape,
            data,
        })
    }

    pub fn encode_batch(&self, batch: &[Volume]) -> Result<Vec<FeatureMap<T>>, ModelError> {
        batch.iter().map(|v| self.encode(v)).collect()
    }

    /// Global average pooling to a `channels`-long vector.
    pub fn pool(map: &FeatureMap<T>) -> Vec<T> {
        mean_pool(&map.data, map.channels)
    }

    fn projector(&self, z: &[T], mut cache: Option<&mut ForwardCache<T>>) -> Vec<T> {
        let last = self.slots.proj.len() - 1;
        let mut x = z.to_vec();
        for (j, &(w, b)) in self.slots.proj.iter().enumerate() {
            let out_dim = self.config.projector_dims[j];
            let bias = b.map(|b| self.params.tensors[b].data.as_slice());
            let y = linear_forward(&x, &self.params.tensors[w].data, bias, out_dim);
            if let Some(c) = cache.as_deref_mut() {
                c.proj_in.push(x);
            }
            x = if j == last {
                y
            } else {
                y.into_iter().map(|v| v.max(T::zero())).collect()
            };
        }
        x
    }

    pub fn project(&self, z: &[T]) -> Result<Vec<T>, ModelError> {
        let width = self.config.backbone_dim();
        if z.len() != width {
            return Err(ModelError::LengthMismatch {
                expected: width,
                found: z.len(),
            });
        }
        Ok(self.projector(z, None))
    }

    /// Pooled backbone feature `z` only.
    pub fn features(&self, v: &Volume) -> Result<Vec<T>, ModelError> {
        Ok(Self::pool(&self.encode(v)?))
    }

    pub fn embed(&self, v: &Volume) -> Result<Embedding<T>, ModelError> {
        let z = self.features(v)?;
        let p = self.projector(&z, None);
        Ok(Embedding { z, p })
    }

    /// Projected embedding `p` of a random crop.
    pub fn embed_crop(&self, v: &Volume) -> Result<Vec<T>, ModelError> {
        Ok(self.embed(v)?.p)
    }

    /// Embeds base crops in the order given (grid order).
    pub fn embed_bases(&self, bases: &[Volume]) -> Result<BasisSet<T>, ModelError> {
        let mut set = BasisSet {
            z: Vec::with_capacity(bases.len()),
            q: Vec::with_capacity(bases.len()),
        };
        for b in bases {
            let e = self.embed(b)?;
            set.z.push(e.z);
            set.q.push(e.p);
        }
        Ok(set)
    }

    /// Forward pass retaining what [`Encoder::backward`] needs.
    pub fn forward(&self, v: &Volume) -> Result<(Embedding<T>, ForwardCache<T>), ModelError> {
        let mut cache = ForwardCache {
            cols: Vec::with_capacity(self.convs.len()),
            stage_out: Vec::with_capacity(self.convs.len()),
            proj_in: Vec::with_capacity(self.slots.proj.len()),
        };
        let map = self.backbone(self.input(v)?, Some(&mut cache));
        let z = mean_pool(&map, self.feature_map_shape().0);
        let p = self.projector(&z, Some(&mut cache));
        Ok((Embedding { z, p }, cache))
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/dp` (and optionally `dL/dz`).
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dp: &[T],
        dz: Option<&[T]>,
        grads: &mut Params<T>,
    ) {
        let last = self.slots.proj.len() - 1;
        let mut g = dp.to_vec();
        for j in (0..=last).rev() {
            if j != last {
                // hidden activations are the next layer's inputs
                for (gi, &a) in g.iter_mut().zip(&cache.proj_in[j + 1]) {
                    if a <= T::zero() {
                        *gi = T::zero();
                    }
                }
            }
            let (w, b) = self.slots.proj[j];
            let x = &cache.proj_in[j];
            g = match b {
                Some(b) => {
                    let (gw, gb) = pair_mut(&mut grads.tensors, w, b);
                    linear_backward(x, &self.params.tensors[w].data, &g, &mut gw.data, Some(&mut gb.data))
                }
                None => linear_backward(x, &self.params.tensors[w].data, &g, &mut grads.tensors[w].data, None),
            };
        }
        if let Some(dz) = dz {
            for (a, &b) in g.iter_mut().zip(dz) {
                *a += b;
            }
        }

        let last_conv = self.convs.last().expect("at least one stage");
        let inv = T::one() / T::of(last_conv.out_sites() as f64);
        let mut grad_map: Vec<T> = (0..last_conv.out_sites())
            .flat_map(|_| g.iter().map(move |&v| v * inv))
            .collect();
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let (w, b) = self.slots.conv[i];
            let (gw, gb) = pair_mut(&mut grads.tensors, w, b);
            let dcols = conv_relu_backward(
                conv,
                &cache.cols[i],
                &self.params.tensors[w].data,
                &cache.stage_out[i],
                &grad_map,
                &mut gw.data,
                &mut gb.data,
                i > 0,
            );
            if let Some(dcols) = dcols {
                let mut prev = vec![T::zero(); conv.in_sites() * conv.cin];
                conv.col2im(&dcols, &mut prev);
                grad_map = prev;
            }
        }
    }
}
