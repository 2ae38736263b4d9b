use super::config::PretextModelConfig;
use super::summary::{LayerSummary, ModelSummary};
use crate::error::{Error, Result};
use crate::nn::{self, Chain, Grads, Op, ParamStore, Scalar, Tensor, Trace};
use crate::patchgen::JumbledSample;
use crate::seed;

type Shape = (usize, usize, usize);

/// The nine-branch jigsaw network.
#[derive(Debug, Clone)]
pub struct PretextModel<T> {
    pub config: PretextModelConfig,
    pub store: ParamStore<T>,
    pub branches: Vec<Chain>,
    pub fusion: Chain,
    pub path_a: Chain,
    pub path_b: Chain,
    pub head: Chain,
}

#[derive(Debug, Clone)]
pub struct PretextTrace<T> {
    pub branches: Vec<Trace<T>>,
    pub fusion: Trace<T>,
    pub path_a: Trace<T>,
    pub path_b: Trace<T>,
    pub head: Trace<T>,
}

impl<T: Scalar> PretextTrace<T> {
    /// Logits, `batch x classes`.
    pub fn logits(&self) -> &Tensor<T> {
        self.head.output()
    }

    pub fn branch_concat(&self) -> &Tensor<T> {
        &self.fusion.acts[0]
    }

    pub fn fusion_output(&self) -> &Tensor<T> {
        self.fusion.output()
    }
}

/// Gradients at the named activation points, produced by
/// [`PretextModel::backward`].
#[derive(Debug, Clone)]
pub struct PretextBackward<T> {
    pub fusion_output: Tensor<T>,
    pub branch_outputs: Vec<Tensor<T>>,
    pub input: Option<Tensor<T>>,
}

fn hwc((c, h, w): Shape) -> String {
    if h == 1 && w == 1 {
        format!("{c}")
    } else {
        format!("{h}x{w}x{c}")
    }
}

fn build_err(stage: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Build {
        stage: stage.into(),
        reason: reason.into(),
    }
}

/// Summary rows for one chain; ReLUs are folded into their convolution.
pub(crate) fn chain_rows(
    prefix: &str,
    chain: &Chain,
    input: Shape,
    shape_prefix: &str,
) -> Result<(Vec<LayerSummary>, Shape)> {
    let shapes = chain
        .shapes(input)
        .map_err(|reason| build_err(prefix, reason))?;
    let mut rows = Vec::new();
    let mut pools = 0;
    for (op, &s) in chain.ops.iter().zip(&shapes) {
        let (name, kind) = match op {
            Op::Conv { name, stride, .. } => (
                name.clone(),
                if *stride == 1 { "conv3x3" } else { "conv3x3/2" }.to_string(),
            ),
            Op::Linear { name, .. } => (name.clone(), "dense".to_string()),
            Op::MaxPool2 => {
                pools += 1;
                (format!("{prefix}.pool{pools}"), "maxpool2".to_string())
            }
            Op::Gap => (format!("{prefix}.gap"), "gap".to_string()),
            Op::Relu => continue,
        };
        rows.push(LayerSummary {
            name,
            kind,
            output_shape: format!("{shape_prefix}{}", hwc(s)),
            params: op.param_count(),
        });
    }
    Ok((rows, *shapes.last().unwrap_or(&input)))
}

/// Two 3x3 convolutions with ReLU and a 2x2 max pool.
pub(crate) fn branch_chain<T: Scalar>(
    store: &mut ParamStore<T>,
    k: usize,
    in_channels: usize,
    filters: [usize; 2],
) -> Chain {
    let mut c = Chain::new();
    let mut ci = in_channels;
    for (b, &f) in filters.iter().enumerate() {
        c.conv(store, &format!("branch{k}.block{}.conv1", b + 1), ci, f, 1)
            .relu()
            .conv(store, &format!("branch{k}.block{}.conv2", b + 1), f, f, 1)
            .relu()
            .pool();
        ci = f;
    }
    c
}

impl<T: Scalar> PretextModel<T> {
    /// Builds the graph with zero weights and checks every stage's shape.
    pub fn build(config: &PretextModelConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut store = ParamStore::new();
        let branches: Vec<Chain> = (0..cfg.n_branches)
            .map(|k| branch_chain(&mut store, k, cfg.in_channels, cfg.branch_filters))
            .collect();
        let concat_c = cfg.n_branches * cfg.branch_filters[1];
        let mut fusion = Chain::new();
        fusion
            .conv(&mut store, "fusion.conv", concat_c, cfg.fusion_filters, 1)
            .relu();
        let mut path_a = Chain::new();
        path_a
            .conv(&mut store, "path_a.conv1", cfg.fusion_filters, cfg.head_filters, 1)
            .relu()
            .conv(&mut store, "path_a.conv2", cfg.head_filters, cfg.head_filters, 2)
            .relu();
        let mut path_b = Chain::new();
        path_b
            .conv(&mut store, "path_b.conv1", cfg.fusion_filters, cfg.head_filters, 1)
            .relu()
            .pool();
        let mut head = Chain::new();
        head.gap();
        let mut width = 2 * cfg.head_filters;
        for (i, &d) in cfg.fc_dims.iter().enumerate() {
            head.linear(&mut store, &format!("fc{}", i + 1), width, d).relu();
            width = d;
        }
        head.linear(&mut store, "classifier", width, cfg.class_count);

        let model = Self {
            config: cfg,
            store,
            branches,
            fusion,
            path_a,
            path_b,
            head,
        };
        model.summary()?;
        Ok(model)
    }

    /// Builds and initialises with He-normal weights from `seed`.
    pub fn build_init(config: &PretextModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::build(config)?;
        m.store.init_he(&mut seed::rng_for(seed, "models.pretext.init"));
        Ok(m)
    }

    /// Layer table with output shapes and exact parameter counts.
    pub fn summary(&self) -> Result<ModelSummary> {
        let cfg = &self.config;
        let input = (cfg.in_channels, cfg.patch_size, cfg.patch_size);
        let mut rows = Vec::new();
        let mut branch_out = None;
        for (k, b) in self.branches.iter().enumerate() {
            let (r, out) = chain_rows(&format!("branch{k}"), b, input, "")?;
            rows.extend(r);
            branch_out = Some(out);
        }
        let (bc, bh, bw) = branch_out.expect("at least one branch");
        let concat = (bc * cfg.n_branches, bh, bw);
        rows.push(LayerSummary {
            name: "branch_concat".into(),
            kind: "concat".into(),
            output_shape: hwc(concat),
            params: 0,
        });
        let (r, fused) = chain_rows("fusion", &self.fusion, concat, "")?;
        rows.extend(r);
        let (r, a) = chain_rows("path_a", &self.path_a, fused, "")?;
        rows.extend(r);
        let (r, b) = chain_rows("path_b", &self.path_b, fused, "")?;
        rows.extend(r);
        if (a.1, a.2) != (b.1, b.2) {
            return Err(build_err(
                "path_concat",
                format!("strided path gives {}, pooled path gives {}", hwc(a), hwc(b)),
            ));
        }
        let joined = (a.0 + b.0, a.1, a.2);
        rows.push(LayerSummary {
            name: "path_concat".into(),
            kind: "concat".into(),
            output_shape: hwc(joined),
            params: 0,
        });
        let (r, _) = chain_rows("head", &self.head, joined, "")?;
        rows.extend(r);
        Ok(ModelSummary::new(
            format!("pretext (classes = {})", cfg.class_count),
            rows,
        ))
    }

    /// Stacks samples into a `batch x 9 x P x P` tensor in slot order.
    pub fn input_tensor(&self, samples: &[&JumbledSample]) -> Tensor<T> {
        let p = self.config.patch_size;
        let n = self.config.n_branches;
        let mut x = Tensor::zeros([samples.len(), n, p, p]);
        for (i, s) in samples.iter().enumerate() {
            let item = x.item_mut(i);
            for (k, patch) in s.patches.iter().enumerate() {
                for (d, &v) in item[k * p * p..(k + 1) * p * p].iter_mut().zip(&patch.data) {
                    *d = T::of(v as f64);
                }
            }
        }
        x
    }

    /// `x` is `batch x (branches * in_channels) x P x P`.
    pub fn forward(&self, x: &Tensor<T>) -> PretextTrace<T> {
        let sizes = vec![self.config.in_channels; self.config.n_branches];
        let inputs = nn::split_channels(x, &sizes);
        let branches: Vec<Trace<T>> = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(chain, xi)| chain.forward(&self.store, xi))
            .collect();
        let outs: Vec<Tensor<T>> = branches.iter().map(|t| t.output().clone()).collect();
        let fusion = self.fusion.forward(&self.store, nn::concat_channels(&outs));
        let path_a = self.path_a.forward(&self.store, fusion.output().clone());
        let path_b = self.path_b.forward(&self.store, fusion.output().clone());
        let joined = nn::concat_channels(&[path_a.output().clone(), path_b.output().clone()]);
        let head = self.head.forward(&self.store, joined);
        PretextTrace {
            branches,
            fusion,
            path_a,
            path_b,
            head,
        }
    }

    /// Back-propagates `dlogits`. Parameter gradients are accumulated into
    /// `grads` when given; `need_input` also returns the input gradient.
    pub fn backward(
        &self,
        trace: &PretextTrace<T>,
        dlogits: Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        need_input: bool,
    ) -> PretextBackward<T> {
        let noop = &mut |_: usize, _: &Tensor<T>| {};
        let d_joined = self
            .head
            .backward(&self.store, &trace.head, dlogits, grads.as_deref_mut(), 0, true, noop);
        let ca = trace.path_a.output().c();
        let cb = trace.path_b.output().c();
        let mut parts = nn::split_channels(&d_joined, &[ca, cb]).into_iter();
        let (ga, gb) = (parts.next().expect("a"), parts.next().expect("b"));
        let mut d_fused = self
            .path_a
            .backward(&self.store, &trace.path_a, ga, grads.as_deref_mut(), 0, true, noop);
        let d_fused_b = self
            .path_b
            .backward(&self.store, &trace.path_b, gb, grads.as_deref_mut(), 0, true, noop);
        d_fused.add_assign(&d_fused_b);
        let d_concat = self.fusion.backward(
            &self.store,
            &trace.fusion,
            d_fused.clone(),
            grads.as_deref_mut(),
            0,
            true,
            noop,
        );
        let widths: Vec<usize> = trace.branches.iter().map(|t| t.output().c()).collect();
        let branch_outputs = nn::split_channels(&d_concat, &widths);
        let mut inputs = Vec::new();
        for ((chain, tr), g) in self.branches.iter().zip(&trace.branches).zip(&branch_outputs) {
            let dx = chain.backward(
                &self.store,
                tr,
                g.clone(),
                grads.as_deref_mut(),
                0,
                need_input,
                noop,
            );
            inputs.push(dx);
        }
        PretextBackward {
            fusion_output: d_fused,
            branch_outputs,
            input: need_input.then(|| nn::concat_channels(&inputs)),
        }
    }

    /// Mean cross-entropy and parameter gradients for one batch.
    pub fn loss_and_grads(&self, x: &Tensor<T>, labels: &[usize]) -> (f64, Grads<T>, Tensor<T>) {
        let trace = self.forward(x);
        let (loss, dlogits, probs) = nn::softmax_cross_entropy(trace.logits(), labels);
        let mut grads = Grads::zeros_like(&self.store);
        self.backward(&trace, dlogits, Some(&mut grads), false);
        (loss, grads, probs)
    }
}
