use super::config::{variant_schedule, DiscSchedule, DiscStage, DownstreamModelConfig};
use super::pretext::{branch_chain, chain_rows};
use super::summary::{LayerSummary, ModelSummary};
use crate::error::{Error, Result};
use crate::imaging::Gray;
use crate::nn::{self, Chain, Grads, Op, ParamStore, Scalar, Tensor, Trace};
use crate::seed;

/// Branch feature extractor plus per-frame discriminator and sigmoid head.
#[derive(Debug, Clone)]
pub struct DownstreamModel<T> {
    pub config: DownstreamModelConfig,
    pub schedule: DiscSchedule,
    pub store: ParamStore<T>,
    pub branches: Vec<Chain>,
    /// Per-frame discriminator, ending in global average pooling.
    pub disc: Chain,
    pub head: Chain,
}

#[derive(Debug, Clone)]
pub struct DownstreamTrace<T> {
    pub branches: Vec<Trace<T>>,
    pub disc: Trace<T>,
    pub frame_argmax: Vec<usize>,
    pub head: Trace<T>,
    pub group_sizes: Vec<usize>,
}

impl<T: Scalar> DownstreamTrace<T> {
    pub fn logit(&self) -> f64 {
        self.head.output().data[0].f64()
    }

    pub fn probability(&self) -> f64 {
        nn::sigmoid(self.logit())
    }

    /// Frame-wise feature extractor output, `F x C x H x W`.
    pub fn features(&self) -> &Tensor<T> {
        &self.disc.acts[0]
    }
}

/// How far [`DownstreamModel::backward`] propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// Stop at discriminator activation point `acts[i]`.
    Disc(usize),
    /// Stop at the branch outputs (frame features).
    Features,
    /// Full pass; `need_input` controls the input gradient.
    Input { need_input: bool },
}

#[derive(Debug, Clone)]
pub struct DownstreamBackward<T> {
    /// Gradient at the requested stop point (disc point or features).
    pub at_stop: Option<Tensor<T>>,
    pub inputs: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> DownstreamModel<T> {
    pub fn build(config: &DownstreamModelConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let schedule = variant_schedule(cfg.variant, &cfg);
        let mut store = ParamStore::new();
        let branches: Vec<Chain> = (0..cfg.n_branches)
            .map(|k| branch_chain(&mut store, k, cfg.in_channels, cfg.branch_filters))
            .collect();
        let mut disc = Chain::new();
        let mut ci = cfg.branch_filters[1];
        let mut block = 0;
        for stage in &schedule.stages {
            match *stage {
                DiscStage::MaxPool => {
                    disc.pool();
                }
                DiscStage::Block { filters } => {
                    block += 1;
                    disc.conv(&mut store, &format!("disc.block{block}.conv1"), ci, filters, 1)
                        .relu()
                        .conv(&mut store, &format!("disc.block{block}.conv2"), filters, filters, 2)
                        .relu();
                    ci = filters;
                }
            }
        }
        disc.gap();
        let mut head = Chain::new();
        let mut width = ci;
        for (i, &d) in schedule.fc.iter().enumerate() {
            head.linear(&mut store, &format!("fc{}", i + 1), width, d).relu();
            width = d;
        }
        head.linear(&mut store, "classifier", width, 1);
        let model = Self {
            config: cfg,
            schedule,
            store,
            branches,
            disc,
            head,
        };
        model.summary()?;
        Ok(model)
    }

    pub fn build_init(config: &DownstreamModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::build(config)?;
        m.store.init_he(&mut seed::rng_for(seed, "models.downstream.init"));
        Ok(m)
    }

    pub fn summary(&self) -> Result<ModelSummary> {
        let cfg = &self.config;
        let input = (cfg.in_channels, cfg.frame_size, cfg.frame_size);
        let mut rows = Vec::new();
        let mut feat = input;
        for (k, b) in self.branches.iter().enumerate() {
            let (r, out) = chain_rows(&format!("branch{k}"), b, input, "")?;
            rows.extend(r);
            feat = out;
        }
        rows.push(LayerSummary {
            name: "frame_concat".into(),
            kind: "concat".into(),
            output_shape: format!("Fx{}x{}x{}", feat.1, feat.2, feat.0),
            params: 0,
        });
        let (mut r, pooled) = chain_rows("disc", &self.disc, feat, "Fx")?;
        // The last conv must leave a spatial map for Grad-CAM and pooling.
        let before_gap = self
            .disc
            .shapes(feat)
            .map_err(|reason| Error::Build {
                stage: "disc".into(),
                reason,
            })?;
        let last_map = before_gap[before_gap.len() - 2];
        if last_map.1 == 0 || last_map.2 == 0 {
            return Err(Error::Build {
                stage: "disc".into(),
                reason: "discriminator output has no spatial extent".into(),
            });
        }
        rows.append(&mut r);
        rows.push(LayerSummary {
            name: "frame_max".into(),
            kind: "max".into(),
            output_shape: format!("{}", pooled.0),
            params: 0,
        });
        let (r, _) = chain_rows("head", &self.head, pooled, "")?;
        rows.extend(r);
        Ok(ModelSummary::new(
            format!("downstream ({:?})", cfg.variant).to_lowercase(),
            rows,
        ))
    }

    /// Per-frame shape `(c, h, w)` at the end of the discriminator, before pooling.
    pub fn disc_map_shape(&self) -> (usize, usize, usize) {
        let cfg = &self.config;
        let feat = (
            cfg.branch_filters[1],
            cfg.frame_size / 4,
            cfg.frame_size / 4,
        );
        let shapes = self.disc.shapes(feat).expect("validated at build");
        shapes[shapes.len() - 2]
    }

    /// Index of the discriminator activation point after the ReLU that
    /// follows convolution `name`.
    pub fn disc_point(&self, name: &str) -> Option<usize> {
        self.disc
            .ops
            .iter()
            .position(|op| matches!(op, Op::Conv { name: n, .. } if n == name))
            .map(|i| i + 2)
    }

    /// Activation point of the last convolution of the final block.
    pub fn default_cam_point(&self) -> usize {
        let i = self
            .disc
            .ops
            .iter()
            .rposition(|op| matches!(op, Op::Conv { .. }))
            .expect("discriminator has a convolution");
        i + 2
    }

    /// Converts grouped frames into per-branch tensors.
    pub fn group_tensors(&self, groups: &[Vec<&Gray>]) -> Result<Vec<Tensor<T>>> {
        let l = self.config.frame_size;
        if groups.len() != self.config.n_branches {
            return Err(Error::invalid(format!(
                "expected {} frame groups, got {}",
                self.config.n_branches,
                groups.len()
            )));
        }
        groups
            .iter()
            .map(|g| {
                if g.is_empty() {
                    return Err(Error::invalid("every branch needs at least one frame"));
                }
                let mut t = Tensor::zeros([g.len(), 1, l, l]);
                for (i, f) in g.iter().enumerate() {
                    if f.height != l || f.width != l {
                        return Err(Error::invalid(format!(
                            "frame {}x{} does not match model frame size {l}",
                            f.height, f.width
                        )));
                    }
                    for (d, &v) in t.item_mut(i).iter_mut().zip(&f.data) {
                        *d = T::of(v as f64);
                    }
                }
                Ok(t)
            })
            .collect()
    }

    pub fn forward(&self, groups: &[Tensor<T>]) -> DownstreamTrace<T> {
        let branches: Vec<Trace<T>> = self
            .branches
            .iter()
            .zip(groups)
            .map(|(chain, x)| chain.forward(&self.store, x.clone()))
            .collect();
        let outs: Vec<Tensor<T>> = branches.iter().map(|t| t.output().clone()).collect();
        let disc = self.disc.forward(&self.store, nn::concat_batch(&outs));
        let (pooled, frame_argmax) = nn::max_over_batch_forward(disc.output());
        let head = self.head.forward(&self.store, pooled);
        DownstreamTrace {
            branches,
            disc,
            frame_argmax,
            head,
            group_sizes: groups.iter().map(|g| g.n()).collect(),
        }
    }

    /// Back-propagates `dlogit` (gradient of the objective w.r.t. the output
    /// logit).
    pub fn backward(
        &self,
        trace: &DownstreamTrace<T>,
        dlogit: f64,
        mut grads: Option<&mut Grads<T>>,
        stop: Stop,
    ) -> DownstreamBackward<T> {
        let noop = &mut |_: usize, _: &Tensor<T>| {};
        let dy = Tensor::from_vec([1, 1, 1, 1], vec![T::of(dlogit)]);
        let d_pooled =
            self.head
                .backward(&self.store, &trace.head, dy, grads.as_deref_mut(), 0, true, noop);
        let d_frames =
            nn::max_over_batch_backward(trace.disc.output().shape, &trace.frame_argmax, &d_pooled);
        let disc_stop = match stop {
            Stop::Disc(i) => i,
            _ => 0,
        };
        let d_disc = self.disc.backward(
            &self.store,
            &trace.disc,
            d_frames,
            grads.as_deref_mut(),
            disc_stop,
            true,
            noop,
        );
        match stop {
            Stop::Disc(_) | Stop::Features => {
                return DownstreamBackward {
                    at_stop: Some(d_disc),
                    inputs: None,
                }
            }
            Stop::Input { .. } => {}
        }
        let need_input = matches!(stop, Stop::Input { need_input: true });
        let per_branch = nn::split_batch(&d_disc, &trace.group_sizes);
        let mut inputs = Vec::new();
        for ((chain, tr), g) in self.branches.iter().zip(&trace.branches).zip(per_branch) {
            inputs.push(chain.backward(
                &self.store,
                tr,
                g,
                grads.as_deref_mut(),
                0,
                need_input,
                noop,
            ));
        }
        DownstreamBackward {
            at_stop: None,
            inputs: need_input.then_some(inputs),
        }
    }

    /// Binary cross-entropy and gradients for one clip.
    pub fn loss_and_grads(&self, groups: &[Tensor<T>], label: f64) -> (f64, f64, Grads<T>) {
        let trace = self.forward(groups);
        let (loss, dz) = nn::bce_with_logits(trace.logit(), label);
        let mut grads = Grads::zeros_like(&self.store);
        self.backward(&trace, dz, Some(&mut grads), Stop::Input { need_input: false });
        (loss, trace.probability(), grads)
    }
}
