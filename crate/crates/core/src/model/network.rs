//! Masking network forward and backward passes.
//!
//! The mixture goes through a learned filterbank, a bottleneck, and a stack of
//! dilated depthwise-separable residual blocks. At the fusion block the
//! normalized hidden activations are multiplied channel-wise by a projection
//! of the enrollment embedding. A sigmoid mask head then gates the filterbank
//! frames, which a transposed filterbank turns back into a waveform.
//!
//! The part of the trunk before the fusion point does not depend on the
//! enrollment, so one forward pass of it is shared by every enrollment that
//! queries the same mixture, and its gradient is accumulated once.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::layers::{self, Framing, GlnCache};
use super::params::{ModelParams, Tensor};
use super::{ExtractorConfig, ModelError};
use crate::signal::Waveform;

fn acc_mat(grads: &mut ModelParams, name: &str, d: ArrayView2<f64>) {
    let mut g = grads.get_mut(name).mat_mut();
    g += &d;
}

fn acc_vec(grads: &mut ModelParams, name: &str, d: ArrayView1<f64>) {
    let mut g = grads.get_mut(name).vec_mut();
    g += &d;
}

fn acc_scalar(grads: &mut ModelParams, name: &str, d: f64) {
    grads.get_mut(name).data_mut()[0] += d;
}

fn mat<'a>(p: &'a ModelParams, name: &str) -> ArrayView2<'a, f64> {
    p.get(name).mat()
}

fn vec<'a>(p: &'a ModelParams, name: &str) -> ArrayView1<'a, f64> {
    p.get(name).vec()
}

struct Encoded {
    framing: Framing,
    frames: Array2<f64>,
    /// Non-negative filterbank activations `[n_filters, frames]`.
    act: Array2<f64>,
}

fn encode(weight: &Tensor, x: &[f64], kernel: usize) -> Encoded {
    let framing = Framing::new(x.len(), kernel);
    let frames = layers::frames(&framing.pad(x), kernel, framing.hop);
    let act = layers::relu(weight.mat().dot(&frames));
    Encoded { framing, frames, act }
}

fn encode_backward(enc: &Encoded, mut d_act: Array2<f64>, grads: &mut ModelParams, name: &str) {
    layers::relu_backward(enc.act.view(), &mut d_act);
    acc_mat(grads, name, d_act.dot(&enc.frames.t()).view());
}

fn decode(weight: &Tensor, y: ArrayView2<f64>, framing: &Framing) -> Vec<f64> {
    let cols = weight.mat().t().dot(&y);
    framing.trim(&layers::overlap_add(cols.view(), framing.hop, framing.padded_len))
}

fn decode_backward(
    weight: &Tensor,
    y: ArrayView2<f64>,
    framing: &Framing,
    d_out: &[f64],
    grads: &mut ModelParams,
) -> Array2<f64> {
    let d_cols = layers::frames(&framing.pad(d_out), framing.kernel, framing.hop);
    acc_mat(grads, "decoder.weight", y.dot(&d_cols.t()).view());
    weight.mat().dot(&d_cols)
}

/// First half of a residual block: 1x1 conv, PReLU, norm.
struct BlockPre {
    input: Array2<f64>,
    u: Array2<f64>,
    norm1: GlnCache,
    n1: Array2<f64>,
}

/// Second half: optional channel gate, depthwise conv, PReLU, norm, 1x1 conv.
struct BlockPost {
    gate: Option<Array1<f64>>,
    g: Array2<f64>,
    v: Array2<f64>,
    norm2: GlnCache,
    n2: Array2<f64>,
}

fn block_pre(p: &ModelParams, name: &str, input: Array2<f64>) -> BlockPre {
    let u = layers::conv1x1(
        mat(p, &format!("{name}.conv_in.weight")),
        Some(vec(p, &format!("{name}.conv_in.bias"))),
        input.view(),
    );
    let p1 = layers::prelu(u.view(), p.get(&format!("{name}.prelu1.alpha")).scalar());
    let (n1, norm1) = layers::gln(
        p1.view(),
        vec(p, &format!("{name}.norm1.gamma")),
        vec(p, &format!("{name}.norm1.beta")),
    );
    BlockPre { input, u, norm1, n1 }
}

fn block_post(
    p: &ModelParams,
    name: &str,
    dilation: usize,
    pre: &BlockPre,
    gate: Option<Array1<f64>>,
) -> (BlockPost, Array2<f64>) {
    let g = match &gate {
        Some(a) => &pre.n1 * &a.view().insert_axis(Axis(1)),
        None => pre.n1.clone(),
    };
    let v = layers::dconv(
        g.view(),
        mat(p, &format!("{name}.dconv.weight")),
        vec(p, &format!("{name}.dconv.bias")),
        dilation,
    );
    let p2 = layers::prelu(v.view(), p.get(&format!("{name}.prelu2.alpha")).scalar());
    let (n2, norm2) = layers::gln(
        p2.view(),
        vec(p, &format!("{name}.norm2.gamma")),
        vec(p, &format!("{name}.norm2.beta")),
    );
    let r = layers::conv1x1(
        mat(p, &format!("{name}.conv_out.weight")),
        Some(vec(p, &format!("{name}.conv_out.bias"))),
        n2.view(),
    );
    let out = &pre.input + &r;
    (
        BlockPost {
            gate,
            g,
            v,
            norm2,
            n2,
        },
        out,
    )
}

/// Returns `(d_n1, d_gate)`. The residual gradient is `d_out` itself.
fn block_post_backward(
    p: &ModelParams,
    name: &str,
    dilation: usize,
    pre: &BlockPre,
    post: &BlockPost,
    d_out: ArrayView2<f64>,
    grads: &mut ModelParams,
) -> (Array2<f64>, Option<Array1<f64>>) {
    let w_out = format!("{name}.conv_out.weight");
    let (dw, d_n2) = layers::conv1x1_backward(mat(p, &w_out), post.n2.view(), d_out);
    acc_mat(grads, &w_out, dw.view());
    acc_vec(grads, &format!("{name}.conv_out.bias"), layers::row_sums(d_out).view());

    let gamma2 = format!("{name}.norm2.gamma");
    let (d_p2, dg2, db2) = layers::gln_backward(&post.norm2, vec(p, &gamma2), d_n2.view());
    acc_vec(grads, &gamma2, dg2.view());
    acc_vec(grads, &format!("{name}.norm2.beta"), db2.view());

    let a2 = format!("{name}.prelu2.alpha");
    let (d_v, da2) = layers::prelu_backward(post.v.view(), p.get(&a2).scalar(), d_p2.view());
    acc_scalar(grads, &a2, da2);

    let wd = format!("{name}.dconv.weight");
    let (d_g, dwd, dbd) = layers::dconv_backward(post.g.view(), mat(p, &wd), dilation, d_v.view());
    acc_mat(grads, &wd, dwd.view());
    acc_vec(grads, &format!("{name}.dconv.bias"), dbd.view());

    match &post.gate {
        Some(a) => {
            let d_gate = (&d_g * &pre.n1).sum_axis(Axis(1));
            let d_n1 = &d_g * &a.view().insert_axis(Axis(1));
            (d_n1, Some(d_gate))
        }
        None => (d_g, None),
    }
}

/// Gradient reaching the block input through the conv_in branch.
fn block_pre_backward(p: &ModelParams, name: &str, pre: &BlockPre, d_n1: ArrayView2<f64>, grads: &mut ModelParams) -> Array2<f64> {
    let gamma1 = format!("{name}.norm1.gamma");
    let (d_p1, dg1, db1) = layers::gln_backward(&pre.norm1, vec(p, &gamma1), d_n1);
    acc_vec(grads, &gamma1, dg1.view());
    acc_vec(grads, &format!("{name}.norm1.beta"), db1.view());

    let a1 = format!("{name}.prelu1.alpha");
    let (d_u, da1) = layers::prelu_backward(pre.u.view(), p.get(&a1).scalar(), d_p1.view());
    acc_scalar(grads, &a1, da1);

    let w_in = format!("{name}.conv_in.weight");
    let (dw, dx) = layers::conv1x1_backward(mat(p, &w_in), pre.input.view(), d_u.view());
    acc_mat(grads, &w_in, dw.view());
    acc_vec(grads, &format!("{name}.conv_in.bias"), layers::row_sums(d_u.view()).view());
    dx
}

struct FullBlock {
    pre: BlockPre,
    post: BlockPost,
}

fn block_name(i: usize) -> String {
    format!("sep.blocks.{i}")
}

/// Encoder, bottleneck, the blocks before the fusion block, and the first
/// half of the fusion block.
struct TrunkPrefix {
    enc: Encoded,
    norm0: GlnCache,
    en: Array2<f64>,
    blocks: Vec<FullBlock>,
    fusion_pre: BlockPre,
}

fn prefix_forward(p: &ModelParams, cfg: &ExtractorConfig, x: &[f64]) -> TrunkPrefix {
    let enc = encode(p.get("encoder.weight"), x, cfg.kernel_len);
    let (en, norm0) = layers::gln(enc.act.view(), vec(p, "sep.norm.gamma"), vec(p, "sep.norm.beta"));
    let mut h = layers::conv1x1(
        mat(p, "sep.bottleneck.weight"),
        Some(vec(p, "sep.bottleneck.bias")),
        en.view(),
    );
    let mut blocks = Vec::with_capacity(cfg.fusion_block_index);
    for i in 0..cfg.fusion_block_index {
        let name = block_name(i);
        let pre = block_pre(p, &name, h);
        let (post, out) = block_post(p, &name, cfg.dilation(i), &pre, None);
        blocks.push(FullBlock { pre, post });
        h = out;
    }
    let fusion_pre = block_pre(p, &block_name(cfg.fusion_block_index), h);
    TrunkPrefix {
        enc,
        norm0,
        en,
        blocks,
        fusion_pre,
    }
}

/// Gradients flowing back into the prefix from one suffix.
struct PrefixGrad {
    d_act: Array2<f64>,
    d_fusion_input: Array2<f64>,
    d_fusion_n1: Array2<f64>,
}

impl PrefixGrad {
    fn add(&mut self, other: &PrefixGrad) {
        self.d_act += &other.d_act;
        self.d_fusion_input += &other.d_fusion_input;
        self.d_fusion_n1 += &other.d_fusion_n1;
    }
}

fn prefix_backward(p: &ModelParams, cfg: &ExtractorConfig, pf: &TrunkPrefix, dg: PrefixGrad, grads: &mut ModelParams) {
    let f = cfg.fusion_block_index;
    let mut dh = dg.d_fusion_input + block_pre_backward(p, &block_name(f), &pf.fusion_pre, dg.d_fusion_n1.view(), grads);
    for i in (0..f).rev() {
        let name = block_name(i);
        let b = &pf.blocks[i];
        let (d_n1, _) = block_post_backward(p, &name, cfg.dilation(i), &b.pre, &b.post, dh.view(), grads);
        dh += &block_pre_backward(p, &name, &b.pre, d_n1.view(), grads);
    }
    let (dw, d_en) = layers::conv1x1_backward(mat(p, "sep.bottleneck.weight"), pf.en.view(), dh.view());
    acc_mat(grads, "sep.bottleneck.weight", dw.view());
    acc_vec(grads, "sep.bottleneck.bias", layers::row_sums(dh.view()).view());
    let (d_act_norm, dgam, dbet) = layers::gln_backward(&pf.norm0, vec(p, "sep.norm.gamma"), d_en.view());
    acc_vec(grads, "sep.norm.gamma", dgam.view());
    acc_vec(grads, "sep.norm.beta", dbet.view());
    encode_backward(&pf.enc, dg.d_act + d_act_norm, grads, "encoder.weight");
}

/// Second half of the fusion block onward: remaining blocks, mask head, decoder.
struct TrunkSuffix {
    fusion_post: BlockPost,
    blocks: Vec<FullBlock>,
    last: Array2<f64>,
    pm: Array2<f64>,
    masks: Array2<f64>,
    masked: Vec<Array2<f64>>,
    outputs: Vec<Vec<f64>>,
}

fn suffix_forward(p: &ModelParams, cfg: &ExtractorConfig, pf: &TrunkPrefix, gate: Option<Array1<f64>>) -> TrunkSuffix {
    let f = cfg.fusion_block_index;
    let (fusion_post, mut h) = block_post(p, &block_name(f), cfg.dilation(f), &pf.fusion_pre, gate);
    let mut blocks = Vec::with_capacity(cfg.n_blocks() - f - 1);
    for i in f + 1..cfg.n_blocks() {
        let name = block_name(i);
        let pre = block_pre(p, &name, h);
        let (post, out) = block_post(p, &name, cfg.dilation(i), &pre, None);
        blocks.push(FullBlock { pre, post });
        h = out;
    }
    let pm = layers::prelu(h.view(), p.get("sep.mask.prelu.alpha").scalar());
    let masks = layers::sigmoid(layers::conv1x1(
        mat(p, "sep.mask.weight"),
        Some(vec(p, "sep.mask.bias")),
        pm.view(),
    ));
    let n = cfg.n_filters;
    let dec = p.get("decoder.weight");
    let mut masked = Vec::with_capacity(cfg.n_outputs);
    let mut outputs = Vec::with_capacity(cfg.n_outputs);
    for o in 0..cfg.n_outputs {
        let m = masks.slice(ndarray::s![o * n..(o + 1) * n, ..]);
        let y = &m * &pf.enc.act;
        outputs.push(decode(dec, y.view(), &pf.enc.framing));
        masked.push(y);
    }
    TrunkSuffix {
        fusion_post,
        blocks,
        last: h,
        pm,
        masks,
        masked,
        outputs,
    }
}

fn suffix_backward(
    p: &ModelParams,
    cfg: &ExtractorConfig,
    pf: &TrunkPrefix,
    sf: &TrunkSuffix,
    d_outputs: &[Vec<f64>],
    grads: &mut ModelParams,
) -> (PrefixGrad, Option<Array1<f64>>) {
    let n = cfg.n_filters;
    let dec = p.get("decoder.weight");
    let mut d_act = Array2::<f64>::zeros(pf.enc.act.dim());
    let mut d_z = Array2::<f64>::zeros(sf.masks.dim());
    for (o, d_out) in d_outputs.iter().enumerate() {
        let d_y = decode_backward(dec, sf.masked[o].view(), &pf.enc.framing, d_out, grads);
        let m = sf.masks.slice(ndarray::s![o * n..(o + 1) * n, ..]);
        Zip::from(&mut d_act).and(&d_y).and(m).for_each(|da, &dy, &m| *da += dy * m);
        let mut dz = d_z.slice_mut(ndarray::s![o * n..(o + 1) * n, ..]);
        Zip::from(&mut dz)
            .and(&d_y)
            .and(&pf.enc.act)
            .and(m)
            .for_each(|dz, &dy, &e, &m| *dz = dy * e * m * (1.0 - m));
    }
    let (dw, d_pm) = layers::conv1x1_backward(mat(p, "sep.mask.weight"), sf.pm.view(), d_z.view());
    acc_mat(grads, "sep.mask.weight", dw.view());
    acc_vec(grads, "sep.mask.bias", layers::row_sums(d_z.view()).view());
    let (mut dh, da) = layers::prelu_backward(sf.last.view(), p.get("sep.mask.prelu.alpha").scalar(), d_pm.view());
    acc_scalar(grads, "sep.mask.prelu.alpha", da);

    let f = cfg.fusion_block_index;
    for (k, b) in sf.blocks.iter().enumerate().rev() {
        let i = f + 1 + k;
        let name = block_name(i);
        let (d_n1, _) = block_post_backward(p, &name, cfg.dilation(i), &b.pre, &b.post, dh.view(), grads);
        dh += &block_pre_backward(p, &name, &b.pre, d_n1.view(), grads);
    }
    let (d_fusion_n1, d_gate) =
        block_post_backward(p, &block_name(f), cfg.dilation(f), &pf.fusion_pre, &sf.fusion_post, dh.view(), grads);
    (
        PrefixGrad {
            d_act,
            d_fusion_input: dh,
            d_fusion_n1,
        },
        d_gate,
    )
}

/// Enrollment branch: its own filterbank, bottleneck, one residual block,
/// projection to the embedding size, and mean pooling over frames.
struct AuxCache {
    enc: Encoded,
    norm: GlnCache,
    an: Array2<f64>,
    pre: BlockPre,
    post: BlockPost,
    hidden: Array2<f64>,
    embedding: Array1<f64>,
}

const AUX_BLOCK: &str = "aux.block";

fn aux_forward(p: &ModelParams, cfg: &ExtractorConfig, e: &[f64]) -> AuxCache {
    let enc = encode(p.get("aux.encoder.weight"), e, cfg.kernel_len);
    let (an, norm) = layers::gln(enc.act.view(), vec(p, "aux.norm.gamma"), vec(p, "aux.norm.beta"));
    let a0 = layers::conv1x1(
        mat(p, "aux.bottleneck.weight"),
        Some(vec(p, "aux.bottleneck.bias")),
        an.view(),
    );
    let pre = block_pre(p, AUX_BLOCK, a0);
    let (post, hidden) = block_post(p, AUX_BLOCK, 1, &pre, None);
    let z = layers::conv1x1(mat(p, "aux.embed.weight"), Some(vec(p, "aux.embed.bias")), hidden.view());
    let embedding = z.mean_axis(Axis(1)).expect("at least one frame");
    AuxCache {
        enc,
        norm,
        an,
        pre,
        post,
        hidden,
        embedding,
    }
}

fn aux_backward(p: &ModelParams, c: &AuxCache, d_emb: ArrayView1<f64>, grads: &mut ModelParams) {
    let frames = c.hidden.ncols();
    let d_z = Array2::from_shape_fn((d_emb.len(), frames), |(i, _)| d_emb[i] / frames as f64);
    let (dw, mut dh) = layers::conv1x1_backward(mat(p, "aux.embed.weight"), c.hidden.view(), d_z.view());
    acc_mat(grads, "aux.embed.weight", dw.view());
    acc_vec(grads, "aux.embed.bias", d_emb);
    let (d_n1, _) = block_post_backward(p, AUX_BLOCK, 1, &c.pre, &c.post, dh.view(), grads);
    dh += &block_pre_backward(p, AUX_BLOCK, &c.pre, d_n1.view(), grads);
    let (dw, d_an) = layers::conv1x1_backward(mat(p, "aux.bottleneck.weight"), c.an.view(), dh.view());
    acc_mat(grads, "aux.bottleneck.weight", dw.view());
    acc_vec(grads, "aux.bottleneck.bias", layers::row_sums(dh.view()).view());
    let (d_act, dgam, dbet) = layers::gln_backward(&c.norm, vec(p, "aux.norm.gamma"), d_an.view());
    acc_vec(grads, "aux.norm.gamma", dgam.view());
    acc_vec(grads, "aux.norm.beta", dbet.view());
    encode_backward(&c.enc, d_act, grads, "aux.encoder.weight");
}

fn fusion_gate(p: &ModelParams, embedding: &Array1<f64>) -> Array1<f64> {
    mat(p, "fusion.weight").dot(embedding) + vec(p, "fusion.bias")
}

fn check_len(what: &'static str, len: usize, cfg: &ExtractorConfig) -> Result<(), ModelError> {
    if len < cfg.kernel_len {
        return Err(ModelError::TooShort {
            what,
            len,
            min: cfg.kernel_len,
        });
    }
    Ok(())
}

fn check_ready(p: &ModelParams, cfg: &ExtractorConfig, want_extractor: bool) -> Result<(), ModelError> {
    cfg.validate()?;
    if cfg.is_extractor() != want_extractor {
        return Err(ModelError::Config(if want_extractor {
            "extraction needs n_outputs = 1".into()
        } else {
            "blind separation needs n_outputs >= 2".into()
        }));
    }
    if p.is_empty() {
        return Err(ModelError::Shape("empty parameter set".into()));
    }
    Ok(())
}

/// Fixed-size speaker embedding of an enrollment utterance.
pub fn speaker_embed(p: &ModelParams, cfg: &ExtractorConfig, enrollment: &Waveform) -> Result<Vec<f64>, ModelError> {
    check_ready(p, cfg, true)?;
    check_len("enrollment", enrollment.len(), cfg)?;
    Ok(aux_forward(p, cfg, enrollment.samples()).embedding.to_vec())
}

/// Target-speaker estimate for `mixture` conditioned on `enrollment`.
pub fn extract(
    p: &ModelParams,
    cfg: &ExtractorConfig,
    mixture: &Waveform,
    enrollment: &Waveform,
) -> Result<Waveform, ModelError> {
    let g = ExtractionGraph::forward(p, cfg, mixture.samples(), &[enrollment.samples()])?;
    Ok(Waveform::new(g.outputs()[0].to_vec(), mixture.sample_rate_hz())?)
}

/// Extraction with an explicit fusion gate in place of the enrollment branch.
pub fn extract_with_gate(
    p: &ModelParams,
    cfg: &ExtractorConfig,
    mixture: &Waveform,
    gate: &[f64],
) -> Result<Waveform, ModelError> {
    check_ready(p, cfg, true)?;
    check_len("mixture", mixture.len(), cfg)?;
    if gate.len() != cfg.conv_ch {
        return Err(ModelError::Shape(format!(
            "gate has {} channels, expected {}",
            gate.len(),
            cfg.conv_ch
        )));
    }
    let pf = prefix_forward(p, cfg, mixture.samples());
    let sf = suffix_forward(p, cfg, &pf, Some(Array1::from(gate.to_vec())));
    Ok(Waveform::new(sf.outputs[0].clone(), mixture.sample_rate_hz())?)
}

/// Unconditioned separation into `n_outputs` estimates.
pub fn separate_bss(p: &ModelParams, cfg: &ExtractorConfig, mixture: &Waveform) -> Result<Vec<Waveform>, ModelError> {
    let g = SeparationGraph::forward(p, cfg, mixture.samples())?;
    g.outputs()
        .iter()
        .map(|o| Waveform::new(o.to_vec(), mixture.sample_rate_hz()).map_err(ModelError::from))
        .collect()
}

/// Appends `x > 0` for every entry: the side of each rectifier's kink.
fn push_signs(out: &mut Vec<bool>, x: &Array2<f64>) {
    out.extend(x.iter().map(|&v| v > 0.0));
}

fn prefix_signs(pf: &TrunkPrefix, out: &mut Vec<bool>) {
    push_signs(out, &pf.enc.act);
    for b in &pf.blocks {
        push_signs(out, &b.pre.u);
        push_signs(out, &b.post.v);
    }
    push_signs(out, &pf.fusion_pre.u);
}

fn suffix_signs(sf: &TrunkSuffix, out: &mut Vec<bool>) {
    push_signs(out, &sf.fusion_post.v);
    for b in &sf.blocks {
        push_signs(out, &b.pre.u);
        push_signs(out, &b.post.v);
    }
    push_signs(out, &sf.last);
}

struct Branch {
    aux: AuxCache,
    suffix: TrunkSuffix,
}

/// Cached forward pass of one mixture against several enrollments, ready
/// for backpropagation.
pub struct ExtractionGraph {
    prefix: TrunkPrefix,
    branches: Vec<Branch>,
}

impl ExtractionGraph {
    pub fn forward(
        p: &ModelParams,
        cfg: &ExtractorConfig,
        mixture: &[f64],
        enrollments: &[&[f64]],
    ) -> Result<Self, ModelError> {
        check_ready(p, cfg, true)?;
        check_len("mixture", mixture.len(), cfg)?;
        for e in enrollments {
            check_len("enrollment", e.len(), cfg)?;
        }
        let prefix = prefix_forward(p, cfg, mixture);
        let branches = enrollments
            .iter()
            .map(|e| {
                let aux = aux_forward(p, cfg, e);
                let gate = fusion_gate(p, &aux.embedding);
                let suffix = suffix_forward(p, cfg, &prefix, Some(gate));
                Branch { aux, suffix }
            })
            .collect();
        Ok(Self { prefix, branches })
    }

    /// One estimate per enrollment, each as long as the mixture.
    pub fn outputs(&self) -> Vec<&[f64]> {
        self.branches.iter().map(|b| b.suffix.outputs[0].as_slice()).collect()
    }

    /// Which side of zero every rectifier input fell on. Two parameter
    /// settings with different patterns straddle a point where the network
    /// is not differentiable.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        prefix_signs(&self.prefix, &mut out);
        for b in &self.branches {
            push_signs(&mut out, &b.aux.enc.act);
            push_signs(&mut out, &b.aux.pre.u);
            push_signs(&mut out, &b.aux.post.v);
            suffix_signs(&b.suffix, &mut out);
        }
        out
    }

    /// Accumulates parameter gradients for upstream gradients on every output.
    pub fn backward(&self, p: &ModelParams, cfg: &ExtractorConfig, d_outputs: &[Vec<f64>], grads: &mut ModelParams) {
        assert_eq!(d_outputs.len(), self.branches.len(), "one gradient per enrollment");
        let mut total: Option<PrefixGrad> = None;
        for (b, d) in self.branches.iter().zip(d_outputs) {
            let (pg, d_gate) = suffix_backward(p, cfg, &self.prefix, &b.suffix, std::slice::from_ref(d), grads);
            let d_gate = d_gate.expect("fusion block carries a gate");
            acc_mat(
                grads,
                "fusion.weight",
                d_gate
                    .view()
                    .insert_axis(Axis(1))
                    .dot(&b.aux.embedding.view().insert_axis(Axis(0)))
                    .view(),
            );
            acc_vec(grads, "fusion.bias", d_gate.view());
            let d_emb = mat(p, "fusion.weight").t().dot(&d_gate);
            aux_backward(p, &b.aux, d_emb.view(), grads);
            match total.as_mut() {
                Some(t) => t.add(&pg),
                None => total = Some(pg),
            }
        }
        if let Some(t) = total {
            prefix_backward(p, cfg, &self.prefix, t, grads);
        }
    }
}

/// Cached forward pass of the blind multi-output separator.
pub struct SeparationGraph {
    prefix: TrunkPrefix,
    suffix: TrunkSuffix,
}

impl SeparationGraph {
    pub fn forward(p: &ModelParams, cfg: &ExtractorConfig, mixture: &[f64]) -> Result<Self, ModelError> {
        check_ready(p, cfg, false)?;
        check_len("mixture", mixture.len(), cfg)?;
        let prefix = prefix_forward(p, cfg, mixture);
        let suffix = suffix_forward(p, cfg, &prefix, None);
        Ok(Self { prefix, suffix })
    }

    pub fn outputs(&self) -> Vec<&[f64]> {
        self.suffix.outputs.iter().map(Vec::as_slice).collect()
    }

    /// See [`ExtractionGraph::activation_pattern`].
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        prefix_signs(&self.prefix, &mut out);
        suffix_signs(&self.suffix, &mut out);
        out
    }

    pub fn backward(&self, p: &ModelParams, cfg: &ExtractorConfig, d_outputs: &[Vec<f64>], grads: &mut ModelParams) {
        let (pg, _) = suffix_backward(p, cfg, &self.prefix, &self.suffix, d_outputs, grads);
        prefix_backward(p, cfg, &self.prefix, pg, grads);
    }
}
