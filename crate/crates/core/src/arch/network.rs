//! Networks decoded from a search space, and weight-sharing supernets.

use picnn_tensor::{
    avgpool2d, concat, conv2d, depthwise_separable_conv2d, group_norm, maxpool2d, no_grad, resize, PaddingSpec,
    Tensor, UpsampleMode,
};
use rand::Rng;

use super::space::{norm_groups, ArchGenome, OpKind, Position, Role, SearchSpace, SpaceKind};
use crate::error::{Error, Result};
use crate::rng::stream;

const GN_EPS: f64 = 1e-5;

/// How each slot picks its operation during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    /// Softmax-weighted sum of every candidate; one `[K]` probability
    /// tensor per slot.
    Mixed(&'a [Tensor]),
    /// One candidate per slot.
    Path(&'a [usize]),
}

/// Anything with searchable slots that can run under a [`Selection`].
pub trait Supernet {
    fn slot_sizes(&self) -> Vec<usize>;
    /// Shared network weights.
    fn weights(&self) -> Vec<Tensor>;
    fn forward_with(&self, x: &Tensor, sel: Selection<'_>) -> Result<Tensor>;
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

#[derive(Debug, Clone)]
enum OpModule {
    Conv { w: Tensor, b: Tensor },
    SepConv { dw: Tensor, pw: Tensor, b: Tensor },
    MaxPool { size: usize, stride: usize },
    AvgPool { size: usize, stride: usize },
    Resample(UpsampleMode),
}

impl OpModule {
    fn new(kind: OpKind, role: Role, rng: &mut impl Rng) -> Result<Self> {
        let chans = match role {
            Role::Conv { cin, cout } => Some((cin, cout)),
            _ => None,
        };
        let need = |kind: OpKind| {
            chans.ok_or_else(|| Error::invalid("build_network", format!("{kind} needs a conv position")))
        };
        // uniform(±1/sqrt(fan_in)) for weights and biases
        Ok(match kind {
            OpKind::Conv { k } => {
                let (cin, cout) = need(kind)?;
                let bound = 1.0 / ((cin * k * k) as f64).sqrt();
                OpModule::Conv {
                    w: Tensor::parameter(uniform(rng, cout * cin * k * k, bound), &[cout, cin, k, k])?,
                    b: Tensor::parameter(uniform(rng, cout, bound), &[cout])?,
                }
            }
            OpKind::SepConv { k } => {
                let (cin, cout) = need(kind)?;
                let bd = 1.0 / ((k * k) as f64).sqrt();
                let bp = 1.0 / (cin as f64).sqrt();
                OpModule::SepConv {
                    dw: Tensor::parameter(uniform(rng, cin * k * k, bd), &[cin, 1, k, k])?,
                    pw: Tensor::parameter(uniform(rng, cout * cin, bp), &[cout, cin, 1, 1])?,
                    b: Tensor::parameter(uniform(rng, cout, bp), &[cout])?,
                }
            }
            OpKind::MaxPool { size, stride } => {
                if let Some((cin, cout)) = chans {
                    if cin != cout {
                        return Err(Error::invalid("build_network", "pooling cannot change the width"));
                    }
                }
                OpModule::MaxPool { size, stride }
            }
            OpKind::AvgPool { size, stride } => {
                if let Some((cin, cout)) = chans {
                    if cin != cout {
                        return Err(Error::invalid("build_network", "pooling cannot change the width"));
                    }
                }
                OpModule::AvgPool { size, stride }
            }
            OpKind::Bilinear => OpModule::Resample(UpsampleMode::Bilinear),
            OpKind::Nearest => OpModule::Resample(UpsampleMode::Nearest),
        })
    }

    fn params(&self) -> Vec<Tensor> {
        match self {
            OpModule::Conv { w, b } => vec![w.clone(), b.clone()],
            OpModule::SepConv { dw, pw, b } => vec![dw.clone(), pw.clone(), b.clone()],
            _ => Vec::new(),
        }
    }

    fn bias(&self) -> Option<&Tensor> {
        match self {
            OpModule::Conv { b, .. } | OpModule::SepConv { b, .. } => Some(b),
            _ => None,
        }
    }

    fn apply(&self, x: &Tensor, target: Option<(usize, usize)>) -> Result<Tensor> {
        let same = |s: usize| if s == 1 { PaddingSpec::Same } else { PaddingSpec::Valid };
        Ok(match self {
            OpModule::Conv { w, b } => conv2d(x, w, Some(b), 1, PaddingSpec::Same)?,
            OpModule::SepConv { dw, pw, b } => depthwise_separable_conv2d(x, dw, pw, Some(b), 1, PaddingSpec::Same)?,
            OpModule::MaxPool { size, stride } => maxpool2d(x, *size, *stride, same(*stride))?,
            OpModule::AvgPool { size, stride } => avgpool2d(x, *size, *stride, same(*stride))?,
            OpModule::Resample(mode) => {
                let (h, w) = target.ok_or_else(|| Error::invalid("forward", "upsampling without a target size"))?;
                resize(x, *mode, h, w)?
            }
        })
    }
}

#[derive(Debug, Clone)]
struct Layer {
    pos: Position,
    /// `(candidate index, module)`; every candidate in a supernet, the
    /// chosen one otherwise.
    ops: Vec<(usize, OpModule)>,
    norm: Option<(Tensor, Tensor, usize)>,
    gelu: bool,
    relu: bool,
}

/// A network over a [`SearchSpace`]. Built either for one genome or as a
/// supernet holding every candidate.
#[derive(Debug, Clone)]
pub struct ArchNet {
    space: SearchSpace,
    layers: Vec<Layer>,
    head: Option<(Tensor, Tensor)>,
    genome: Option<ArchGenome>,
}

impl ArchNet {
    fn assemble(space: &SearchSpace, genome: Option<&ArchGenome>, seed: u64) -> Result<Self> {
        if let Some(g) = genome {
            space.check_genome(g)?;
        }
        let unet = space.kind != SpaceKind::CnnStack;
        let n = space.layout.len();
        let mut layers = Vec::with_capacity(n);
        for (li, &pos) in space.layout.iter().enumerate() {
            let cands = &space.slots[pos.slot].candidates;
            let picks: Vec<usize> = match genome {
                Some(g) => vec![g.choices[pos.slot]],
                None => (0..cands.len()).collect(),
            };
            let mut ops = Vec::with_capacity(picks.len());
            for c in picks {
                // seeded by position and candidate so supernets and single
                // networks start from the same weights
                let mut rng = stream(seed, &format!("arch/layer{li}/op{c}"), 0);
                ops.push((c, OpModule::new(cands[c], pos.role, &mut rng)?));
            }
            let conv = matches!(pos.role, Role::Conv { .. });
            let norm = match (unet && space.group_norm, pos.role) {
                (true, Role::Conv { cout, .. }) => Some((
                    Tensor::parameter(vec![1.0; cout], &[cout])?,
                    Tensor::parameter(vec![0.0; cout], &[cout])?,
                    norm_groups(cout),
                )),
                _ => None,
            };
            layers.push(Layer {
                pos,
                ops,
                norm,
                gelu: unet && conv,
                relu: !unet && li + 1 < n,
            });
        }
        let head = if unet {
            let c0 = space.widths[0];
            let mut rng = stream(seed, "arch/head", 0);
            let bound = 1.0 / (c0 as f64).sqrt();
            Some((
                Tensor::parameter(uniform(&mut rng, c0, bound), &[1, c0, 1, 1])?,
                Tensor::parameter(vec![0.0], &[1])?,
            ))
        } else {
            None
        };
        Ok(Self {
            space: space.clone(),
            layers,
            head,
            genome: genome.cloned(),
        })
    }

    /// The network for one genome, initialized from `seed`.
    pub fn build(space: &SearchSpace, genome: &ArchGenome, seed: u64) -> Result<Self> {
        Self::assemble(space, Some(genome), seed)
    }

    /// A supernet holding every candidate of every slot.
    pub fn supernet(space: &SearchSpace, seed: u64) -> Result<Self> {
        Self::assemble(space, None, seed)
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn genome(&self) -> Option<&ArchGenome> {
        self.genome.as_ref()
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        for l in &self.layers {
            for (_, op) in &l.ops {
                p.extend(op.params());
            }
            if let Some((g, b, _)) = &l.norm {
                p.push(g.clone());
                p.push(b.clone());
            }
        }
        if let Some((w, b)) = &self.head {
            p.push(w.clone());
            p.push(b.clone());
        }
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    /// Parameters owned by candidate `cand` at layer position `layer`.
    pub fn candidate_parameters(&self, layer: usize, cand: usize) -> Vec<Tensor> {
        self.layers
            .get(layer)
            .and_then(|l| l.ops.iter().find(|(c, _)| *c == cand))
            .map_or_else(Vec::new, |(_, op)| op.params())
    }

    /// Sets the bias of the output layer, in every candidate.
    pub fn set_output_bias(&self, v: f64) -> Result<()> {
        if let Some((_, b)) = &self.head {
            b.set_data(&[v])?;
        } else if let Some(last) = self.layers.last() {
            for (_, op) in &last.ops {
                if let Some(b) = op.bias() {
                    b.set_data(&vec![v; b.numel()])?;
                }
            }
        }
        Ok(())
    }

    /// Forward pass of a single-genome network.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self
            .genome
            .as_ref()
            .ok_or_else(|| Error::invalid("forward", "supernets need an explicit selection"))?;
        self.forward_with(x, Selection::Path(&g.choices))
    }

    /// Runs a probe of `rows × cols` and checks the output keeps its size.
    pub fn dry_run(&self, rows: usize, cols: usize) -> Result<()> {
        let probe = Tensor::zeros(&[1, self.space.in_channels, rows, cols]);
        let out = no_grad(|| match &self.genome {
            Some(_) => self.forward(&probe),
            None => self.forward_with(&probe, Selection::Path(&vec![0; self.space.slots.len()])),
        })?;
        if out.shape() != [1, 1, rows, cols] {
            return Err(Error::invalid("dry_run", format!("probe {rows}x{cols} produced {:?}", out.shape())));
        }
        Ok(())
    }

    fn layer(&self, li: usize, x: &Tensor, target: Option<(usize, usize)>, sel: Selection<'_>) -> Result<Tensor> {
        let l = &self.layers[li];
        let y = match sel {
            Selection::Path(choices) => {
                let c = *choices
                    .get(l.pos.slot)
                    .ok_or_else(|| Error::invalid("forward", "selection shorter than the slot list"))?;
                let (_, op) = l
                    .ops
                    .iter()
                    .find(|(k, _)| *k == c)
                    .ok_or_else(|| Error::invalid("forward", format!("candidate {c} not built at layer {li}")))?;
                op.apply(x, target)?
            }
            Selection::Mixed(probs) => {
                let p = probs
                    .get(l.pos.slot)
                    .ok_or_else(|| Error::invalid("forward", "selection shorter than the slot list"))?;
                if p.numel() != l.ops.len() {
                    return Err(Error::invalid("forward", format!("mixed forward at layer {li} needs every candidate")));
                }
                let mut acc: Option<Tensor> = None;
                for (k, op) in &l.ops {
                    let term = p.select(*k)?.mul(&op.apply(x, target)?)?;
                    acc = Some(match acc {
                        Some(a) => a.add(&term)?,
                        None => term,
                    });
                }
                acc.expect("slots are nonempty")
            }
        };
        let y = match &l.norm {
            Some((g, b, groups)) => group_norm(&y, *groups, g, b, GN_EPS)?,
            None => y,
        };
        let y = if l.gelu { y.gelu() } else { y };
        Ok(if l.relu { y.relu() } else { y })
    }

    fn conv_pair(&self, li: usize, x: &Tensor, sel: Selection<'_>) -> Result<Tensor> {
        let a = self.layer(li, x, None, sel)?;
        let b = self.layer(li + 1, &a, None, sel)?;
        // the cell wires a skip around its second conv
        Ok(if self.space.kind == SpaceKind::UnetCell { b.add(&a)? } else { b })
    }

    fn unet_forward(&self, x: &Tensor, sel: Selection<'_>) -> Result<Tensor> {
        let depth = self.space.unet_depth();
        let mut skips = Vec::with_capacity(depth);
        let mut h = x.clone();
        let mut li = 0;
        for l in 0..=depth {
            if l > 0 {
                h = self.layer(li, &h, None, sel)?;
                li += 1;
            }
            h = self.conv_pair(li, &h, sel)?;
            li += 2;
            if l < depth {
                skips.push(h.clone());
            }
        }
        while let Some(skip) = skips.pop() {
            let hw = (skip.shape()[2], skip.shape()[3]);
            h = self.layer(li, &h, Some(hw), sel)?;
            h = concat(&[h, skip], 1)?;
            h = self.conv_pair(li + 1, &h, sel)?;
            li += 3;
        }
        let (w, b) = self.head.as_ref().expect("unet has a head");
        Ok(conv2d(&h, w, Some(b), 1, PaddingSpec::Valid)?)
    }
}

impl Supernet for ArchNet {
    fn slot_sizes(&self) -> Vec<usize> {
        self.space.slot_sizes()
    }

    fn weights(&self) -> Vec<Tensor> {
        self.parameters()
    }

    fn forward_with(&self, x: &Tensor, sel: Selection<'_>) -> Result<Tensor> {
        match x.shape() {
            [_, c, _, _] if *c == self.space.in_channels => {}
            s => {
                return Err(Error::invalid(
                    "forward",
                    format!("input {s:?}, expected [N, {}, H, W]", self.space.in_channels),
                ))
            }
        }
        match self.space.kind {
            SpaceKind::CnnStack => {
                let mut h = x.clone();
                for li in 0..self.layers.len() {
                    h = self.layer(li, &h, None, sel)?;
                }
                Ok(h)
            }
            SpaceKind::UnetEntire | SpaceKind::UnetCell => self.unet_forward(x, sel),
        }
    }
}
