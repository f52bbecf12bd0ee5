//! Domain separation network assembly and baseline variants.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::data::{DomainBatch, Scenario};
use crate::error::{Error, Result};
use crate::layers::{
    apply_stack, init_stack, stack_output_shape, stack_parameter_count, BoundParams, Group,
    LayerSpec, ParameterSet,
};
use crate::gradcheck::{finite_difference_check, relative_error, GradCheckReport, Probe};
use crate::losses::{self, CodeNorm, KernelSpec, LossParts, LossWeights, Quaternion, ReconKind};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Which similarity loss ties the shared codes of the two domains together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Similarity {
    Dann,
    Mmd,
    Correg,
    None,
}

impl Similarity {
    pub const ALL: [Similarity; 4] = [
        Similarity::Dann,
        Similarity::Mmd,
        Similarity::Correg,
        Similarity::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Similarity::Dann => "dann",
            Similarity::Mmd => "mmd",
            Similarity::Correg => "correg",
            Similarity::None => "none",
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Similarity::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown similarity `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelVariant {
    Dsn,
    SourceOnly,
    TargetOnly,
    DannOnly,
    MmdOnly,
    CorregOnly,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::Dsn,
        ModelVariant::SourceOnly,
        ModelVariant::TargetOnly,
        ModelVariant::DannOnly,
        ModelVariant::MmdOnly,
        ModelVariant::CorregOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Dsn => "dsn",
            ModelVariant::SourceOnly => "source_only",
            ModelVariant::TargetOnly => "target_only",
            ModelVariant::DannOnly => "dann_only",
            ModelVariant::MmdOnly => "mmd_only",
            ModelVariant::CorregOnly => "correg_only",
        }
    }

    /// Private encoders and the shared decoder exist only in the full model.
    pub fn has_private(self) -> bool {
        self == ModelVariant::Dsn
    }

    /// The similarity loss actually used; `selected` applies to `dsn` only.
    pub fn effective_similarity(self, selected: Similarity) -> Similarity {
        match self {
            ModelVariant::Dsn => selected,
            ModelVariant::SourceOnly | ModelVariant::TargetOnly => Similarity::None,
            ModelVariant::DannOnly => Similarity::Dann,
            ModelVariant::MmdOnly => Similarity::Mmd,
            ModelVariant::CorregOnly => Similarity::Correg,
        }
    }

    /// Whether a training step needs the unlabeled target batch.
    pub fn uses_target(self, similarity: Similarity) -> bool {
        self.has_private() || self.effective_similarity(similarity) != Similarity::None
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

/// Layer stacks of every component. The task head is a trunk followed by a
/// class head and, for pose scenarios, a 4-unit quaternion head.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub input_shape: Vec<usize>,
    pub code_width: usize,
    pub classes: usize,
    pub shared: Vec<LayerSpec>,
    pub private: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub task_trunk: Vec<LayerSpec>,
    pub class_head: Vec<LayerSpec>,
    pub pose_head: Option<Vec<LayerSpec>>,
    pub domain: Vec<LayerSpec>,
}

fn glyph_encoders(code: usize) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    use LayerSpec::*;
    let shared = vec![
        LayerSpec::conv3x3(3, 8),
        Relu,
        MaxPool,
        LayerSpec::conv3x3(8, 16),
        Relu,
        MaxPool,
        Flatten,
        LayerSpec::dense(4 * 4 * 16, code),
    ];

    let private = vec![
        LayerSpec::conv3x3(3, 8),
        Relu,
        MaxPool,
        Flatten,
        LayerSpec::dense(8 * 8 * 8, code),
    ];
    (shared, private)
}

fn glyph_decoder(code: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        LayerSpec::dense(code, 4 * 4 * 16),
        Relu,
        Reshape(vec![4, 4, 16]),
        LayerSpec::conv3x3(16, 16),
        Relu,
        Upsample,
        LayerSpec::conv3x3(16, 16),
        Relu,
        Upsample,
        LayerSpec::conv3x3(16, 3),
    ]
}

fn domain_head(code: usize, hidden: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Grl,
        LayerSpec::dense(code, hidden),
        Relu,
        LayerSpec::dense(hidden, 1),
        Sigmoid,
    ]
}

/// The small per-scenario architectures used throughout the repository.
pub fn build_desk_topology(scenario: Scenario) -> Topology {
    use LayerSpec::*;
    match scenario {
        Scenario::Glyph16 => {
            let code = 64;
            let (shared, private) = glyph_encoders(code);
            Topology {
                input_shape: scenario.sample_shape(),
                code_width: code,
                classes: 10,
                shared,
                private,
                decoder: glyph_decoder(code),
                task_trunk: Vec::new(),
                class_head: vec![LayerSpec::dense(code, 10), Softmax],
                pose_head: None,
                domain: domain_head(code, 32),
            }
        }
        Scenario::PoseGlyph => {
            let code = 64;
            let (shared, private) = glyph_encoders(code);
            let classes = scenario.classes();
            Topology {
                input_shape: scenario.sample_shape(),
                code_width: code,
                classes,
                shared,
                private,
                decoder: glyph_decoder(code),
                task_trunk: vec![LayerSpec::dense(code, 64), Relu],
                class_head: vec![LayerSpec::dense(64, classes), Softmax],
                pose_head: Some(vec![LayerSpec::dense(64, 4)]),
                domain: domain_head(code, 32),
            }
        }
        Scenario::Blobs2d => {
            let code = 8;
            let encoder = vec![
                LayerSpec::dense(2, 16),
                Relu,
                LayerSpec::dense(16, code),
            ];
            Topology {
                input_shape: scenario.sample_shape(),
                code_width: code,
                classes: 3,
                shared: encoder.clone(),
                private: encoder,
                decoder: vec![LayerSpec::dense(code, 16), Relu, LayerSpec::dense(16, 2)],
                task_trunk: Vec::new(),
                class_head: vec![LayerSpec::dense(code, 3), Softmax],
                pose_head: None,
                domain: domain_head(code, 8),
            }
        }
    }
}

impl Topology {
    fn task_stacks(&self) -> Vec<&[LayerSpec]> {
        let mut out: Vec<&[LayerSpec]> = vec![&self.task_trunk, &self.class_head];
        if let Some(p) = &self.pose_head {
            out.push(p);
        }
        out
    }

    /// Checks code widths and the decoder's output shape.
    pub fn validate(&self) -> Result<()> {
        let code = vec![self.code_width];
        let check = |name: &str, got: Vec<usize>, want: &[usize]| -> Result<()> {
            if got != want {
                return Err(Error::invalid(format!(
                    "topology: {name} produces {got:?}, expected {want:?}"
                )));
            }
            Ok(())
        };
        check("shared encoder", stack_output_shape(&self.shared, &self.input_shape)?, &code)?;
        check("private encoder", stack_output_shape(&self.private, &self.input_shape)?, &code)?;
        check("decoder", stack_output_shape(&self.decoder, &code)?, &self.input_shape)?;
        let trunk = stack_output_shape(&self.task_trunk, &code)?;
        check("class head", stack_output_shape(&self.class_head, &trunk)?, &[self.classes])?;
        if let Some(p) = &self.pose_head {
            check("pose head", stack_output_shape(p, &trunk)?, &[4])?;
        }
        check("domain classifier", stack_output_shape(&self.domain, &code)?, &[1])?;
        Ok(())
    }

    /// Parameter count of each group a variant instantiates.
    pub fn group_parameter_count(&self, group: Group) -> usize {
        match group {
            Group::Shared => stack_parameter_count(&self.shared),
            Group::PrivateSource | Group::PrivateTarget => stack_parameter_count(&self.private),
            Group::Decoder => stack_parameter_count(&self.decoder),
            Group::Task => self.task_stacks().iter().map(|s| stack_parameter_count(s)).sum(),
            Group::Domain => stack_parameter_count(&self.domain),
        }
    }
}

/// Codes and reconstruction for one domain.
#[derive(Clone, Copy, Debug)]
pub struct DomainCodes {
    pub input: Var,
    pub shared: Var,
    pub private: Option<Var>,
    pub reconstruction: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub source: DomainCodes,
    pub target: Option<DomainCodes>,
    /// Class probabilities for the source batch.
    pub class_probs: Var,
    /// Raw (unnormalized) source quaternion predictions.
    pub pose: Option<Var>,
    /// Domain predictions, source rows first, then target rows.
    pub domain: Option<Var>,
}

/// Decoder input selection for [`DsnModel::decode_partial`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    SharedOnly,
    PrivateOnly,
    Combined,
}

/// Model predictions on a set of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub class_probs: Tensor<f64>,
    pub poses: Option<Vec<Quaternion>>,
}

impl Predictions {
    pub fn classes(&self) -> Vec<usize> {
        self.class_probs.argmax_rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsnModel<T: Real> {
    pub scenario: Scenario,
    pub topology: Topology,
    pub variant: ModelVariant,
    /// Effective similarity loss for this variant.
    pub similarity: Similarity,
    pub recon: ReconKind,
    pub code_norm: CodeNorm,
    pub kernel: KernelSpec,
    pub params: ParameterSet<T>,
}

impl<T: Real> DsnModel<T> {
    /// Builds the desk topology for `scenario` with freshly initialized
    /// parameters for the groups `variant` uses.
    pub fn new<R: Rng>(
        scenario: Scenario,
        variant: ModelVariant,
        similarity: Similarity,
        rng: &mut R,
    ) -> Result<Self> {
        let topology = build_desk_topology(scenario);
        topology.validate()?;
        let similarity = variant.effective_similarity(similarity);
        let mut params = ParameterSet::new();
        params.set_group(Group::Shared, init_stack(&topology.shared, rng));
        if variant.has_private() {
            params.set_group(Group::PrivateSource, init_stack(&topology.private, rng));
            params.set_group(Group::PrivateTarget, init_stack(&topology.private, rng));
            params.set_group(Group::Decoder, init_stack(&topology.decoder, rng));
        }
        let mut task = Vec::new();
        for stack in topology.task_stacks() {
            task.extend(init_stack(stack, rng));
        }
        params.set_group(Group::Task, task);
        if similarity == Similarity::Dann {
            params.set_group(Group::Domain, init_stack(&topology.domain, rng));
        }
        Ok(DsnModel {
            scenario,
            topology,
            variant,
            similarity,
            recon: ReconKind::ScaleInvariant,
            code_norm: CodeNorm::Normalized,
            kernel: KernelSpec::default(),
            params,
        })
    }

    /// Groups this model instantiates.
    pub fn groups(&self) -> Vec<Group> {
        Group::ALL
            .into_iter()
            .filter(|&g| !self.params.group(g).is_empty())
            .collect()
    }

    /// Closed-form parameter count from the layer specs.
    pub fn expected_parameter_count(&self) -> usize {
        self.groups()
            .into_iter()
            .map(|g| self.topology.group_parameter_count(g))
            .sum()
    }

    /// Replaces the parameters, checking they have this model's layout.
    pub fn set_params(&mut self, params: ParameterSet<T>) -> Result<()> {
        if !self.params.same_layout(&params) {
            return Err(Error::Checkpoint(format!(
                "parameter layout does not match {} / {} model",
                self.scenario, self.variant
            )));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, g: &Graph<T>, x: Var) -> Result<()> {
        if g.shape(x).len() != self.topology.input_shape.len() + 1
            || g.shape(x)[1..] != self.topology.input_shape[..]
        {
            let mut want = vec![0];
            want.extend_from_slice(&self.topology.input_shape);
            return Err(Error::shape("forward", g.shape(x), &want));
        }
        Ok(())
    }

    fn task_heads(&self, g: &mut Graph<T>, p: &BoundParams, code: Var) -> Result<(Var, Option<Var>)> {
        let vars = p.group(Group::Task);
        let t = &self.topology;
        let n_trunk = t.task_trunk.iter().map(|l| l.param_shapes().len()).sum::<usize>();
        let n_class = t.class_head.iter().map(|l| l.param_shapes().len()).sum::<usize>();
        let trunk = apply_stack(g, &t.task_trunk, &vars[..n_trunk], code)?;
        let probs = apply_stack(g, &t.class_head, &vars[n_trunk..n_trunk + n_class], trunk)?;
        let pose = match &t.pose_head {
            Some(head) => Some(apply_stack(g, head, &vars[n_trunk + n_class..], trunk)?),
            None => None,
        };
        Ok((probs, pose))
    }

    fn private_group(domain_is_target: bool) -> Group {
        if domain_is_target {
            Group::PrivateTarget
        } else {
            Group::PrivateSource
        }
    }

    /// Builds the forward computation on `g`. With `with_target = false` only
    /// the source classification path is computed, which is all a step needs
    /// when the adaptation terms are gated off or absent.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        source: Var,
        target: Option<Var>,
    ) -> Result<ForwardOutputs> {
        self.check_input(g, source)?;
        if let Some(t) = target {
            self.check_input(g, t)?;
        }
        let t = &self.topology;
        let ns = g.shape(source)[0];
        let (hc_s, hc_t) = match target {
            Some(xt) => {
                let both = g.concat(&[source, xt], 0)?;
                let h = apply_stack(g, &t.shared, p.group(Group::Shared), both)?;
                let total = g.shape(h)[0];
                (g.slice_rows(h, 0, ns)?, Some(g.slice_rows(h, ns, total)?))
            }
            None => (apply_stack(g, &t.shared, p.group(Group::Shared), source)?, None),
        };
        let (class_probs, pose) = self.task_heads(g, p, hc_s)?;
        let mut src = DomainCodes {
            input: source,
            shared: hc_s,
            private: None,
            reconstruction: None,
        };
        let mut tgt = target.zip(hc_t).map(|(x, h)| DomainCodes {
            input: x,
            shared: h,
            private: None,
            reconstruction: None,
        });
        if let Some(tc) = tgt.as_mut().filter(|_| self.variant.has_private()) {
            let hp_s = apply_stack(g, &t.private, p.group(Group::PrivateSource), source)?;
            let hp_t = apply_stack(g, &t.private, p.group(Group::PrivateTarget), tc.input)?;
            let zs = g.add(hc_s, hp_s)?;
            let zt = g.add(tc.shared, hp_t)?;
            let z = g.concat(&[zs, zt], 0)?;
            let xh = apply_stack(g, &t.decoder, p.group(Group::Decoder), z)?;
            let total = g.shape(xh)[0];
            src.private = Some(hp_s);
            src.reconstruction = Some(g.slice_rows(xh, 0, ns)?);
            tc.private = Some(hp_t);
            tc.reconstruction = Some(g.slice_rows(xh, ns, total)?);
        }
        let domain = match (&tgt, self.similarity) {
            (Some(tc), Similarity::Dann) => {
                let h = g.concat(&[hc_s, tc.shared], 0)?;
                Some(apply_stack(g, &t.domain, p.group(Group::Domain), h)?)
            }
            _ => None,
        };
        Ok(ForwardOutputs {
            source: src,
            target: tgt,
            class_probs,
            pose,
            domain,
        })
    }

    /// Loss terms for a forward pass. `labels` is the one-hot source label
    /// matrix, `poses` the `[B, 4]` source pose matrix for pose scenarios.
    pub fn loss_parts(
        &self,
        g: &mut Graph<T>,
        out: &ForwardOutputs,
        labels: Var,
        poses: Option<Var>,
        xi: f64,
    ) -> Result<LossParts> {
        let task = match (out.pose, poses) {
            (Some(pred), Some(truth)) => {
                losses::pose_task_loss(g, out.class_probs, labels, truth, pred, xi)?
            }
            (None, None) => losses::task_nll(g, out.class_probs, labels)?,
            _ => return Err(Error::invalid("pose labels and pose head must come together")),
        };
        let mut parts = LossParts {
            task,
            recon: None,
            difference: None,
            similarity: None,
        };
        let Some(tgt) = out.target else {
            return Ok(parts);
        };
        let src = out.source;
        if let (Some(xs), Some(xt)) = (src.reconstruction, tgt.reconstruction) {
            parts.recon = Some(losses::reconstruction_loss(
                g,
                (src.input, xs),
                (tgt.input, xt),
                self.recon,
            )?);
        }
        if let (Some(ps), Some(pt)) = (src.private, tgt.private) {
            parts.difference = Some(losses::difference_loss(
                g,
                (src.shared, ps),
                (tgt.shared, pt),
                self.code_norm,
            )?);
        }
        parts.similarity = match self.similarity {
            Similarity::Dann => {
                let d = out.domain.expect("dann forward emits domain predictions");
                let (ns, nt) = (g.shape(src.shared)[0], g.shape(tgt.shared)[0]);
                let mut lab = vec![T::zero(); ns];
                lab.extend(std::iter::repeat_n(T::one(), nt));
                let lab = g.constant(Tensor::new(&[ns + nt, 1], lab)?);
                Some(losses::dann_domain_loss(g, d, lab)?)
            }
            Similarity::Mmd => Some(losses::mmd_loss(g, src.shared, tgt.shared, &self.kernel)?),
            Similarity::Correg => Some(losses::correg_loss(
                g,
                src.shared,
                tgt.shared,
                self.code_norm,
            )?),
            Similarity::None => None,
        };
        Ok(parts)
    }

    /// Convenience: forward plus loss terms for a [`DomainBatch`].
    pub fn batch_losses(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        batch: &DomainBatch,
        with_target: bool,
        xi: f64,
    ) -> Result<(ForwardOutputs, LossParts)> {
        let xs = g.constant(batch.source_images.cast());
        let xt = (with_target && self.variant.uses_target(self.similarity))
            .then(|| g.constant(batch.target_images.cast()));
        let out = self.forward(g, p, xs, xt)?;
        let labels = g.constant(batch.source_one_hot(self.topology.classes).cast());
        let poses = match &batch.source_poses {
            Some(q) if out.pose.is_some() => {
                let flat: Vec<f64> = q.iter().flat_map(|q| q.to_array()).collect();
                Some(g.constant(Tensor::from_f64(&[q.len(), 4], &flat)?))
            }
            _ => None,
        };
        let parts = self.loss_parts(g, &out, labels, poses, xi)?;
        Ok((out, parts))
    }

    /// Class probabilities and poses, evaluated in chunks of `chunk` rows.
    pub fn predict(&self, images: &Tensor<f64>, chunk: usize) -> Result<Predictions> {
        let n = images.shape()[0];
        let chunk = chunk.max(1);
        let mut probs = Vec::with_capacity(n * self.topology.classes);
        let mut poses = self.topology.pose_head.as_ref().map(|_| Vec::with_capacity(n));
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let mut g = Graph::new();
            let p = self.params.bind(&mut g);
            let x = g.constant(images.slice_rows(start, end)?.cast());
            let out = self.forward(&mut g, &p, x, None)?;
            probs.extend(g.value(out.class_probs).to_f64_vec());
            if let (Some(v), Some(list)) = (out.pose, poses.as_mut()) {
                let raw = g.value(v).to_f64_vec();
                for (i, row) in raw.chunks_exact(4).enumerate() {
                    let q = Quaternion::from_slice(row).normalized().ok_or_else(|| {
                        Error::invalid(format!("predicted quaternion {} has zero norm", start + i))
                    })?;
                    list.push(q.positive());
                }
            }
            start = end;
        }
        Ok(Predictions {
            class_probs: Tensor::from_f64(&[n, self.topology.classes], &probs)?,
            poses,
        })
    }

    /// Decodes shared, private, or combined codes of `images` using the
    /// private encoder of the given domain.
    pub fn decode_partial(
        &self,
        images: &Tensor<f64>,
        target_domain: bool,
        mode: DecodeMode,
    ) -> Result<Tensor<f64>> {
        if !self.variant.has_private() {
            return Err(Error::invalid(format!(
                "variant {} has no decoder",
                self.variant
            )));
        }
        let t = &self.topology;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let x = g.constant(images.cast());
        self.check_input(&g, x)?;
        let code = match mode {
            DecodeMode::SharedOnly => apply_stack(&mut g, &t.shared, p.group(Group::Shared), x)?,
            DecodeMode::PrivateOnly => {
                let grp = Self::private_group(target_domain);
                apply_stack(&mut g, &t.private, p.group(grp), x)?
            }
            DecodeMode::Combined => {
                let hc = apply_stack(&mut g, &t.shared, p.group(Group::Shared), x)?;
                let grp = Self::private_group(target_domain);
                let hp = apply_stack(&mut g, &t.private, p.group(grp), x)?;
                g.add(hc, hp)?
            }
        };
        let out = apply_stack(&mut g, &t.decoder, p.group(Group::Decoder), code)?;
        Ok(g.value(out).cast())
    }
}

/// Result of [`DsnModel::gradient_probe`] for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupProbe {
    pub group: Group,
    pub report: GradCheckReport,
    /// Largest relative gap between the applied gradient and the gradient of
    /// the reference objective (0 when they are the same objective).
    pub applied_gap: f64,
}

impl<T: Real> DsnModel<T> {
    /// The objective whose plain gradient equals the update the trainer
    /// applies to groups upstream of the gradient reversal: the reversal is
    /// dropped and the similarity weight negated.
    fn reference(&self, weights: &LossWeights) -> (Self, LossWeights) {
        let mut m = self.clone();
        if self.similarity != Similarity::Dann {
            return (m, weights.clone());
        }
        m.topology.domain.retain(|l| *l != LayerSpec::Grl);
        let w = LossWeights {
            gamma: -weights.gamma,
            ..weights.clone()
        };
        (m, w)
    }

    fn objective(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        batch: &DomainBatch,
        weights: &LossWeights,
        step: u64,
    ) -> Result<Var> {
        let (_, parts) = self.batch_losses(g, p, batch, true, weights.xi)?;
        losses::total_loss(g, &parts, weights, step)
    }

    fn applied_gradients(
        &self,
        batch: &DomainBatch,
        weights: &LossWeights,
        step: u64,
    ) -> Result<ParameterSet<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let loss = self.objective(&mut g, &p, batch, weights, step)?;
        let mut grads = g.backward(loss)?;
        Ok(ParameterSet::gradients(&p, &mut grads))
    }

    /// Finite-difference check of the training gradient on `batch`, probing
    /// `per_leaf` random elements of every tensor, one group at a time.
    ///
    /// Groups feeding the domain classifier through the gradient reversal
    /// are checked against the reference objective, and the gradient the
    /// trainer applies is compared with that reference's gradient.
    pub fn gradient_probe(
        &self,
        batch: &DomainBatch,
        weights: &LossWeights,
        step: u64,
        epsilon: f64,
        per_leaf: usize,
        seed: u64,
    ) -> Result<Vec<GroupProbe>> {
        let applied = self.applied_gradients(batch, weights, step)?;
        let (reference, ref_weights) = self.reference(weights);
        let ref_grads = reference.applied_gradients(batch, &ref_weights, step)?;
        let mut out = Vec::new();
        for group in self.groups() {
            let (model, w) = if group == Group::Domain {
                (self, weights)
            } else {
                (&reference, &ref_weights)
            };
            let loss_fn = |g: &mut Graph<T>, vars: &[Var]| -> Result<Var> {
                let mut bound = BoundParams::default();
                for other in Group::ALL {
                    let vs = if other == group {
                        vars.to_vec()
                    } else {
                        model.params.group(other).iter().map(|t| g.constant(t.clone())).collect()
                    };
                    bound.set_group(other, vs);
                }
                model.objective(g, &bound, batch, w, step)
            };
            let report = finite_difference_check(
                loss_fn,
                self.params.group(group),
                epsilon,
                Probe::Random {
                    per_leaf,
                    seed: seed ^ group.slot() as u64,
                },
            )?;
            let applied_gap = if group == Group::Domain {
                0.0
            } else {
                let mut gap = 0.0f64;
                for (a, r) in applied.group(group).iter().zip(ref_grads.group(group)) {
                    for (&x, &y) in a.data().iter().zip(r.data()) {
                        gap = gap.max(relative_error(x.to_f64_lossy(), y.to_f64_lossy()));
                    }
                }
                gap
            };
            out.push(GroupProbe {
                group,
                report,
                applied_gap,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(scenario: Scenario, variant: ModelVariant, sim: Similarity) -> DsnModel<f64> {
        DsnModel::new(scenario, variant, sim, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn topologies_validate() {
        for sc in Scenario::ALL {
            let t = build_desk_topology(sc);
            t.validate().unwrap();
            assert_eq!(
                stack_output_shape(&t.shared, &t.input_shape).unwrap(),
                stack_output_shape(&t.private, &t.input_shape).unwrap()
            );
        }
        assert_eq!(build_desk_topology(Scenario::Glyph16).code_width, 64);
    }

    #[test]
    fn variant_groups() {
        let m = model(Scenario::Glyph16, ModelVariant::SourceOnly, Similarity::Dann);
        assert_eq!(m.groups(), vec![Group::Shared, Group::Task]);
        assert_eq!(m.similarity, Similarity::None);
        let m = model(Scenario::Glyph16, ModelVariant::Dsn, Similarity::Mmd);
        assert!(!m.groups().contains(&Group::Domain));
        let m = model(Scenario::Glyph16, ModelVariant::Dsn, Similarity::Dann);
        assert_eq!(m.groups().len(), 6);
        let m = model(Scenario::Blobs2d, ModelVariant::DannOnly, Similarity::None);
        assert_eq!(m.groups(), vec![Group::Shared, Group::Task, Group::Domain]);
    }

    #[test]
    fn names_roundtrip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        for s in Similarity::ALL {
            assert_eq!(s.name().parse::<Similarity>().unwrap(), s);
        }
        assert!("dsn2".parse::<ModelVariant>().is_err());
    }
}
